use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AdamState, EpochRecord, Model, StepCounters, TrainConfig};
use crate::error::{Error, Result};
use crate::masknet::MaskNetParams;
use crate::tasknet::TaskNetParams;

pub const FORMAT: &str = "edgemask-checkpoint/1";

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: TrainConfig,
    pub model: Model,
    pub adam_task: AdamState<TaskNetParams>,
    pub adam_mask: Option<AdamState<MaskNetParams>>,
    pub lambda: f64,
    pub rng_sample: ChaCha8Rng,
    pub rng_dropout: ChaCha8Rng,
    pub counters: StepCounters,
    pub history: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format != FORMAT {
            return Err(Error::Config(format!(
                "unsupported checkpoint format `{}`",
                c.format
            )));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::tests::{tiny_config, toy_graph};
    use crate::train::train;

    #[test]
    fn json_round_trip_is_exact() {
        let out = train(
            &[toy_graph(10, 1, "a")],
            &TrainConfig {
                epochs: 1,
                ..tiny_config()
            },
        )
        .unwrap();
        let text = out.checkpoint.to_json().unwrap();
        let back = Checkpoint::from_json(&text).unwrap();
        assert_eq!(back, out.checkpoint);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn foreign_format_rejected() {
        let out = train(
            &[toy_graph(10, 1, "a")],
            &TrainConfig {
                epochs: 1,
                ..tiny_config()
            },
        )
        .unwrap();
        let mut c = out.checkpoint;
        c.format = "other/9".into();
        assert!(Checkpoint::from_json(&c.to_json().unwrap()).is_err());
    }
}
