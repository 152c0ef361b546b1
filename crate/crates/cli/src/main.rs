//! `edgemask`: synthetic data, enrichment, adversarial training, evaluation,
//! ablations and numerical self-checks.
//!
//! Exit codes: 0 success, 1 config or I/O error, 2 numerical failure,
//! 3 failed check (`gradcheck`, `oracle`).

mod artifacts;
mod checks;
mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};

use config::{config_arg, key_args, Key};
use error::CliError;

fn sub(name: &'static str, about: &'static str, keys: &[Key]) -> Command {
    Command::new(name)
        .about(about)
        .arg(config_arg())
        .args(key_args(keys))
}

fn cli() -> Command {
    let mut oracle = sub(
        "oracle",
        "check the duality, KKT and gradient-identity oracles on built-in fixtures",
        &checks::oracle_keys(),
    );
    for (flag, help) in [
        (
            "surrogate",
            "indicator mask versus grid maximum on affine surrogates",
        ),
        ("dual-bound", "weak duality on tiny classifier losses"),
        ("kkt", "analytic certificates and a corrupted control"),
        ("grad-identity", "two-path mask-network gradient"),
    ] {
        oracle = oracle.arg(
            Arg::new(flag)
                .long(flag)
                .action(ArgAction::SetTrue)
                .help(help),
        );
    }
    Command::new("edgemask")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Adversarial edge masking over feature-enriched graphs")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .after_help(
            "Every subcommand takes --config FILE (TOML). Each key `a.b_c` of the file can be \
             overridden by the flag --a.b-c. EDGEMASK_OUT_DIR sets the output directory unless \
             --out-dir is given.",
        )
        .subcommand(sub(
            "synth",
            "generate domains with shifted spurious structure",
            &commands::synth_keys(),
        ))
        .subcommand(sub(
            "enrich",
            "add kNN and spectral-cluster edges to a graph",
            &commands::enrich_keys(),
        ))
        .subcommand(sub(
            "train",
            "train on source domains",
            &commands::train_keys(),
        ))
        .subcommand(sub(
            "eval",
            "score a checkpoint on held-out graphs",
            &commands::eval_keys(),
        ))
        .subcommand(sub(
            "ablate-lambda",
            "sweep the sparsity coefficient",
            &commands::ablate_lambda_keys(),
        ))
        .subcommand(sub(
            "ablate-2x2",
            "{original, union} edges x {no mask, mask}",
            &commands::ablate_2x2_keys(),
        ))
        .subcommand(sub(
            "gradcheck",
            "finite-difference check of both networks",
            &checks::gradcheck_keys(),
        ))
        .subcommand(oracle)
}

fn dispatch(m: &ArgMatches) -> Result<(), CliError> {
    match m.subcommand() {
        Some(("synth", s)) => commands::synth(s),
        Some(("enrich", s)) => commands::enrich_cmd(s),
        Some(("train", s)) => commands::train_cmd(s),
        Some(("eval", s)) => commands::eval_cmd(s),
        Some(("ablate-lambda", s)) => commands::ablate_lambda_cmd(s),
        Some(("ablate-2x2", s)) => commands::ablate_2x2_cmd(s),
        Some(("gradcheck", s)) => checks::gradcheck(s),
        Some(("oracle", s)) => checks::oracle(s),
        _ => unreachable!("subcommand required"),
    }
}

fn main() -> ExitCode {
    let m = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                error::EXIT_CONFIG
            } else {
                0
            });
        }
    };
    match dispatch(&m) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_tree_is_consistent() {
        cli().debug_assert();
    }

    #[test]
    fn flags_follow_config_keys() {
        let m = cli()
            .try_get_matches_from([
                "edgemask",
                "train",
                "--enrich.gamma-knn",
                "0.2",
                "--sources",
                "a.json,b.json",
            ])
            .unwrap();
        let (_, s) = m.subcommand().unwrap();
        assert_eq!(s.get_one::<String>("enrich.gamma_knn").unwrap(), "0.2");
        assert_eq!(s.get_many::<String>("sources").unwrap().count(), 2);
    }
}
