//! Data, training and evaluation subcommands.

use std::time::Instant;

use clap::ArgMatches;
use edgemask_core::enrich::{enrich, EnrichConfig};
use edgemask_core::graph::{edge_stats, Graph};
use edgemask_core::synth::{generate, verify_shift, SynthConfig};
use edgemask_core::train::ablate::{format_2x2, format_lambda};
use edgemask_core::train::checkpoint::Checkpoint;
use edgemask_core::train::{
    ablate_2x2, ablate_lambda, evaluate, evaluation_graph, history_csv, InferenceMask, Metrics,
    Model, Split, TrainConfig, Trainer,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use toml::Table;

use crate::artifacts::{load_graph, load_graphs, Run, RunManifest, METRICS_SCHEMA};
use crate::config::{
    finish, layered, leaf_keys, out_dir, take_string, take_strings, take_value, Key,
};
use crate::error::CliError;

pub const LAMBDA_GRID: [f64; 6] = [0.0, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1];
pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn out_key() -> Key {
    Key::scalar("out_dir", "output directory (also EDGEMASK_OUT_DIR)")
}

fn data_keys() -> Vec<Key> {
    vec![
        Key::list(
            "sources",
            "source domains: graph JSON files or text-file directories",
        ),
        Key::scalar("target", "held-out domain, read only after training"),
    ]
}

pub fn synth_keys() -> Vec<Key> {
    let mut k = leaf_keys(&SynthConfig::default(), &[]);
    k.push(out_key());
    k
}

pub fn enrich_keys() -> Vec<Key> {
    let mut k = leaf_keys(&EnrichConfig::default(), &[]);
    k.push(Key::scalar("seed", "RNG seed for clustering and sampling"));
    k.push(Key::scalar(
        "graph",
        "input graph: JSON file or text-file directory",
    ));
    k.push(out_key());
    k
}

pub fn train_keys() -> Vec<Key> {
    let mut k = leaf_keys(&TrainConfig::default(), &["dual.rho", "dual.step"]);
    k.extend(data_keys());
    k.push(out_key());
    k
}

pub fn eval_keys() -> Vec<Key> {
    vec![
        Key::scalar("checkpoint", "checkpoint written by `train`"),
        Key::list("graphs", "held-out domains to score"),
        Key::scalar(
            "inference_mask",
            "all-ones or masknet (default: the checkpoint's setting)",
        ),
        out_key(),
    ]
}

pub fn ablate_lambda_keys() -> Vec<Key> {
    let mut k = train_keys();
    k.push(Key::list(
        "grid",
        "sparsity coefficients (default 0,1e-5,1e-4,1e-3,1e-2,1e-1)",
    ));
    k
}

pub fn ablate_2x2_keys() -> Vec<Key> {
    let mut k = train_keys();
    k.push(Key::list(
        "seeds",
        "seeds shared by all four cells (default 0,1,2,3,4)",
    ));
    k
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    schema: &'static str,
    manifest_sha256: &'a str,
    /// `held-out` or `source`.
    split: &'static str,
    inference_mask: InferenceMask,
    metrics: &'a Metrics,
    /// Same graphs scored under the learned mask.
    masknet: Option<&'a Metrics>,
}

fn score(
    model: &Model,
    graphs: &[Graph],
    cfg: &TrainConfig,
) -> Result<(Metrics, Option<Metrics>), CliError> {
    let primary = graphs
        .iter()
        .map(|g| evaluate(model, g, cfg, cfg.inference_mask))
        .collect::<Result<Vec<_>, _>>()?;
    let masknet = match model.mask {
        Some(_) => Some(Metrics::from_domains(
            graphs
                .iter()
                .map(|g| evaluate(model, g, cfg, InferenceMask::Masknet))
                .collect::<Result<Vec<_>, _>>()?,
        )),
        None => None,
    };
    Ok((Metrics::from_domains(primary), masknet))
}

fn print_metrics(label: &str, m: &Metrics) {
    for d in &m.domains {
        println!(
            "{label:<10} {:<16} micro-F1 {:.4}  macro-F1 {:.4}  ({} nodes)",
            d.domain, d.micro_f1, d.macro_f1, d.evaluated
        );
    }
    println!(
        "{label:<10} {:<16} micro-F1 {:.4}  macro-F1 {:.4}",
        "average", m.average.micro_f1, m.average.macro_f1
    );
}

pub fn synth(m: &ArgMatches) -> Result<(), CliError> {
    let mut table = layered(m, &synth_keys())?;
    let dir = out_dir(m, &mut table)?;
    let cfg: SynthConfig = finish(table)?;
    let (ds, recipes) = generate(&cfg)?;
    let mut artifacts = vec!["recipes.json".to_string(), "shift.json".to_string()];
    for g in &ds.sources {
        artifacts.push(format!("{}.json", g.domain_id()));
        artifacts.push(format!("{}/", g.domain_id()));
    }
    let names: Vec<&str> = artifacts.iter().map(String::as_str).collect();
    let manifest = RunManifest::new("synth", Some(cfg.seed), &cfg)?.artifacts(&names);
    let mut run = Run::start(dir, &manifest)?;
    let t = Instant::now();
    for g in &ds.sources {
        let id = g.domain_id();
        g.save(&run.path(&format!("{id}.json")))?;
        let sub = run.path(id);
        std::fs::create_dir_all(&sub)?;
        g.write_text_files(
            &sub.join("features.csv"),
            &sub.join("edges.txt"),
            &sub.join("labels.txt"),
        )?;
        println!(
            "{id}: {} nodes, {} edges, edge homophily {:.3}",
            g.num_nodes(),
            g.edges().len(),
            g.edge_homophily()
        );
    }
    run.write_json("recipes.json", &recipes)?;
    if ds.sources.len() >= 2 {
        let shift = verify_shift(&ds.sources)?;
        println!(
            "structural distance {:.3}, degree distance {:.3}, feature distance {:.3}",
            shift.structural_distance, shift.degree_distance, shift.feature_distance
        );
        run.write_json("shift.json", &shift)?;
    } else {
        run.write_json("shift.json", &serde_json::Value::Null)?;
    }
    run.phase("generate", t);
    run.finish()
}

pub fn enrich_cmd(m: &ArgMatches) -> Result<(), CliError> {
    let mut table = layered(m, &enrich_keys())?;
    let dir = out_dir(m, &mut table)?;
    let input = take_string(&mut table, "graph")?
        .ok_or_else(|| CliError::config("no input graph (--graph)"))?;
    let seed: u64 = take_value(&mut table, "seed")?.unwrap_or(0);
    let cfg: EnrichConfig = finish(table)?;
    cfg.validate()?;
    let g = load_graph(&input)?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        seed: u64,
        enrich: &'a EnrichConfig,
    }
    let manifest = RunManifest::new("enrich", Some(seed), &Resolved { seed, enrich: &cfg })?
        .inputs(std::slice::from_ref(&input))
        .artifacts(&["enriched.json", "edge_stats.json"]);
    let mut run = Run::start(dir, &manifest)?;
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eg = enrich(g.clone(), &cfg, &mut rng)?;
    run.phase("enrich", t);
    let body = &eg.edges()[..eg.scored_len()];
    g.with_edges(body.iter().copied())?
        .save(&run.path("enriched.json"))?;
    let stats = edge_stats(&g, &eg);
    for (origin, n) in &stats.counts {
        println!("{origin:<10} {n}");
    }
    println!(
        "{} -> {} edges (+{}), average degree +{:.2}",
        stats.base_edges,
        stats.enriched_edges,
        stats.increase_display(),
        stats.avg_degree_delta
    );
    run.write_json("edge_stats.json", &stats)?;
    run.finish()
}

struct TrainInputs {
    dir: std::path::PathBuf,
    sources: Vec<String>,
    target: Option<String>,
    cfg: TrainConfig,
    rest: Table,
}

fn train_inputs(m: &ArgMatches, keys: &[Key], extra: &[&str]) -> Result<TrainInputs, CliError> {
    let mut table = layered(m, keys)?;
    let dir = out_dir(m, &mut table)?;
    let sources = take_strings(&mut table, "sources")?;
    if sources.is_empty() {
        return Err(CliError::config("no source domains (--sources)"));
    }
    let target = take_string(&mut table, "target")?;
    let mut rest = Table::new();
    for k in extra {
        if let Some(v) = table.remove(*k) {
            rest.insert(k.to_string(), v);
        }
    }
    let cfg: TrainConfig = finish(table)?;
    cfg.validate()?;
    Ok(TrainInputs {
        dir,
        sources,
        target,
        cfg,
        rest,
    })
}

fn mask_dump(model: &Model, graphs: &[Graph], cfg: &TrainConfig) -> Result<String, CliError> {
    let mode = if model.mask.is_some() {
        InferenceMask::Masknet
    } else {
        InferenceMask::AllOnes
    };
    let mut out = String::from("domain,src,dst,origin,s\n");
    for g in graphs {
        let eg = evaluation_graph(g, cfg)?;
        let csv = model.inference_mask(&eg, mode)?.to_csv(&eg);
        for line in csv.lines().skip(1) {
            out.push_str(g.domain_id());
            out.push(',');
            out.push_str(line);
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn train_cmd(m: &ArgMatches) -> Result<(), CliError> {
    let inp = train_inputs(m, &train_keys(), &[])?;
    let sources = load_graphs(&inp.sources)?;
    let mut inputs = inp.sources.clone();
    inputs.extend(inp.target.iter().cloned());
    let manifest = RunManifest::new("train", Some(inp.cfg.seed), &inp.cfg)?
        .inputs(&inputs)
        .artifacts(&["checkpoint.json", "history.csv", "mask.csv", "metrics.json"]);
    let mut run = Run::start(inp.dir, &manifest)?;

    let t = Instant::now();
    let mut trainer = Trainer::new(&sources, inp.cfg.clone())?;
    let every = (inp.cfg.epochs / 10).max(1);
    for _ in 0..inp.cfg.epochs {
        let r = trainer.epoch()?;
        if r.epoch % every == 0 || r.epoch == inp.cfg.epochs {
            eprintln!(
                "epoch {:>4}  task loss {:.4}  train acc {:.3}  mean(s) {:.3}",
                r.epoch, r.task_loss, r.train_accuracy, r.mean_s
            );
        }
    }
    run.phase("train", t);
    let out = trainer.into_outcome();
    out.checkpoint.save(&run.path("checkpoint.json"))?;
    run.write("history.csv", &history_csv(&out.history))?;
    run.write("mask.csv", &mask_dump(&out.model, &sources, &inp.cfg)?)?;

    // the target is read only once training has finished
    let t = Instant::now();
    let (split, graphs) = match &inp.target {
        Some(path) => ("held-out", vec![load_graph(path)?]),
        None => ("source", sources),
    };
    let (metrics, masknet) = score(&out.model, &graphs, &inp.cfg)?;
    run.phase("evaluate", t);
    print_metrics(inp.cfg.inference_mask.as_str(), &metrics);
    if let (Some(mm), InferenceMask::AllOnes) = (&masknet, inp.cfg.inference_mask) {
        print_metrics("masknet", mm);
    }
    run.write_json(
        "metrics.json",
        &MetricsFile {
            schema: METRICS_SCHEMA,
            manifest_sha256: run.hash(),
            split,
            inference_mask: inp.cfg.inference_mask,
            metrics: &metrics,
            masknet: masknet.as_ref(),
        },
    )?;
    run.finish()
}

pub fn eval_cmd(m: &ArgMatches) -> Result<(), CliError> {
    let mut table = layered(m, &eval_keys())?;
    let dir = out_dir(m, &mut table)?;
    let ckpt_path = take_string(&mut table, "checkpoint")?
        .ok_or_else(|| CliError::config("no checkpoint (--checkpoint)"))?;
    let graphs = take_strings(&mut table, "graphs")?;
    if graphs.is_empty() {
        return Err(CliError::config("no graphs to evaluate (--graphs)"));
    }
    let mode: Option<InferenceMask> = take_value(&mut table, "inference_mask")?;
    if let Some(k) = table.keys().next() {
        return Err(CliError::config(format!("unknown key `{k}`")));
    }
    if !std::path::Path::new(&ckpt_path).exists() {
        return Err(CliError::config(format!(
            "{ckpt_path}: no such file or directory"
        )));
    }
    let ckpt = Checkpoint::load(std::path::Path::new(&ckpt_path))?;
    let mut cfg = ckpt.config.clone();
    if let Some(mode) = mode {
        cfg.inference_mask = mode;
    }
    let mut inputs = vec![ckpt_path];
    inputs.extend(graphs.iter().cloned());
    let manifest = RunManifest::new("eval", Some(cfg.seed), &cfg)?
        .inputs(&inputs)
        .artifacts(&["metrics.json"]);
    let mut run = Run::start(dir, &manifest)?;
    let t = Instant::now();
    let graphs = load_graphs(&graphs)?;
    let (metrics, masknet) = score(&ckpt.model, &graphs, &cfg)?;
    run.phase("evaluate", t);
    print_metrics(cfg.inference_mask.as_str(), &metrics);
    if let (Some(mm), InferenceMask::AllOnes) = (&masknet, cfg.inference_mask) {
        print_metrics("masknet", mm);
    }
    run.write_json(
        "metrics.json",
        &MetricsFile {
            schema: METRICS_SCHEMA,
            manifest_sha256: run.hash(),
            split: "held-out",
            inference_mask: cfg.inference_mask,
            metrics: &metrics,
            masknet: masknet.as_ref(),
        },
    )?;
    run.finish()
}

fn split<'a>(sources: &'a [Graph], target: Option<&'a Graph>) -> Split<'a> {
    match target {
        Some(target) => Split::Fixed { sources, target },
        None => Split::LeaveOneOut(sources),
    }
}

#[derive(Serialize)]
struct TableFile<'a, R> {
    schema: &'static str,
    manifest_sha256: &'a str,
    /// `fixed` (sources -> target) or `leave-one-out`.
    protocol: &'static str,
    rows: &'a [R],
}

pub fn ablate_lambda_cmd(m: &ArgMatches) -> Result<(), CliError> {
    let mut inp = train_inputs(m, &ablate_lambda_keys(), &["grid"])?;
    let grid: Vec<f64> = take_value(&mut inp.rest, "grid")?.unwrap_or_else(|| LAMBDA_GRID.to_vec());
    let sources = load_graphs(&inp.sources)?;
    let target = inp.target.as_deref().map(load_graph).transpose()?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        grid: &'a [f64],
        train: &'a TrainConfig,
    }
    let mut inputs = inp.sources.clone();
    inputs.extend(inp.target.iter().cloned());
    let manifest = RunManifest::new(
        "ablate-lambda",
        Some(inp.cfg.seed),
        &Resolved {
            grid: &grid,
            train: &inp.cfg,
        },
    )?
    .inputs(&inputs)
    .artifacts(&["lambda.json", "lambda.csv"]);
    let mut run = Run::start(inp.dir, &manifest)?;
    let t = Instant::now();
    let rows = ablate_lambda(split(&sources, target.as_ref()), &inp.cfg, &grid)?;
    run.phase("ablate", t);
    print!("{}", format_lambda(&rows));
    let mut csv = String::from("lambda,micro_f1,macro_f1,worst_micro_f1,final_mean_s\n");
    for r in &rows {
        csv.push_str(&format!(
            "{:?},{:?},{:?},{:?},{:?}\n",
            r.lambda, r.micro_f1, r.macro_f1, r.worst_micro_f1, r.final_mean_s
        ));
    }
    run.write("lambda.csv", &csv)?;
    run.write_json(
        "lambda.json",
        &TableFile {
            schema: METRICS_SCHEMA,
            manifest_sha256: run.hash(),
            protocol: if target.is_some() {
                "fixed"
            } else {
                "leave-one-out"
            },
            rows: &rows,
        },
    )?;
    run.finish()
}

pub fn ablate_2x2_cmd(m: &ArgMatches) -> Result<(), CliError> {
    let mut inp = train_inputs(m, &ablate_2x2_keys(), &["seeds"])?;
    let seeds: Vec<u64> =
        take_value(&mut inp.rest, "seeds")?.unwrap_or_else(|| DEFAULT_SEEDS.to_vec());
    let sources = load_graphs(&inp.sources)?;
    let target = inp.target.as_deref().map(load_graph).transpose()?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        seeds: &'a [u64],
        train: &'a TrainConfig,
    }
    let mut inputs = inp.sources.clone();
    inputs.extend(inp.target.iter().cloned());
    let manifest = RunManifest::new(
        "ablate-2x2",
        None,
        &Resolved {
            seeds: &seeds,
            train: &inp.cfg,
        },
    )?
    .inputs(&inputs)
    .artifacts(&["ablation.json"]);
    let mut run = Run::start(inp.dir, &manifest)?;
    let t = Instant::now();
    let rows = ablate_2x2(split(&sources, target.as_ref()), &inp.cfg, &seeds)?;
    run.phase("ablate", t);
    print!("{}", format_2x2(&rows));
    run.write_json(
        "ablation.json",
        &TableFile {
            schema: METRICS_SCHEMA,
            manifest_sha256: run.hash(),
            protocol: if target.is_some() {
                "fixed"
            } else {
                "leave-one-out"
            },
            rows: &rows,
        },
    )?;
    run.finish()
}
