//! `gradcheck` and `oracle`: numerical self-checks on seeded fixtures.

use std::time::Instant;

use clap::ArgMatches;
use edgemask_core::fixtures::check_fixture;
use edgemask_core::grad::{
    finite_diff_check, grad_masknet, grad_tasknet, loss_at_mask, FdReport, FD_REL_TOL, FD_STEP,
};
use edgemask_core::masknet::{mask_forward, MaskNetParams};
use edgemask_core::tasknet::{cross_entropy, tasknet_forward, TaskNetParams};
use edgemask_core::theory::{
    default_grid_step, dual_upper_bound, kkt_check, masknet_gradient_identity,
    surrogate_certificate, surrogate_constrained, surrogate_grid_max, surrogate_optimal_mask,
    SurrogateProblem, TaskNetLoss, DEFAULT_GRID_CAP,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifacts::{Run, RunManifest};
use crate::config::{finish, layered, leaf_keys, out_dir, Key};
use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub nodes: usize,
    pub edges: usize,
    pub dim: usize,
    pub classes: usize,
    pub seed: u64,
    pub lambda: f64,
    pub step: f64,
    pub tol: f64,
    /// Entries checked per tensor; 0 checks all of them.
    pub sample: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            nodes: 8,
            edges: 16,
            dim: 3,
            classes: 3,
            seed: 0,
            lambda: 0.3,
            step: FD_STEP,
            tol: FD_REL_TOL,
            sample: 0,
        }
    }
}

pub fn gradcheck_keys() -> Vec<Key> {
    let mut k = leaf_keys(&GradcheckConfig::default(), &[]);
    k.push(Key::scalar(
        "out_dir",
        "output directory (also EDGEMASK_OUT_DIR)",
    ));
    k
}

fn print_report(network: &str, r: &FdReport) {
    for t in &r.tensors {
        println!(
            "{network:<8} {:<28} {:>7} {:>12.3e} {:>12.3e}",
            t.name, t.checked, t.max_rel_err, t.max_abs_err
        );
    }
}

pub fn gradcheck(m: &ArgMatches) -> Result<(), CliError> {
    let mut table = layered(m, &gradcheck_keys())?;
    let dir = out_dir(m, &mut table)?;
    let cfg: GradcheckConfig = finish(table)?;
    let f = check_fixture(cfg.nodes, cfg.edges, cfg.dim, cfg.classes, cfg.seed)?;
    let manifest =
        RunManifest::new("gradcheck", Some(cfg.seed), &cfg)?.artifacts(&["gradcheck.json"]);
    let mut run = Run::start(dir, &manifest)?;
    let t = Instant::now();
    let sample = (cfg.sample > 0).then_some(cfg.sample);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eg = &f.graph;
    let mask = mask_forward(&f.mask, eg)?;
    let gt = grad_tasknet(&f.task, &f.cfg, eg, &mask, None)?
        .task
        .expect("classifier gradients");
    let task = finite_diff_check(
        |p: &TaskNetParams| match tasknet_forward(p, &f.cfg, eg, &mask) {
            Ok(z) => cross_entropy(&z, eg.base().labels()).unwrap_or(f64::NAN),
            Err(_) => f64::NAN,
        },
        &f.task,
        &gt,
        cfg.step,
        cfg.tol,
        sample,
        &mut rng,
    );
    let gm = grad_masknet(&f.task, &f.mask, &f.cfg, eg, cfg.lambda, None)?
        .mask
        .expect("mask gradients");
    let masknet = finite_diff_check(
        |p: &MaskNetParams| match mask_forward(p, eg) {
            Ok(s) => match loss_at_mask(&f.task, &f.cfg, eg, s.scored()) {
                Ok(l) => -l + cfg.lambda * s.mean_scored(),
                Err(_) => f64::NAN,
            },
            Err(_) => f64::NAN,
        },
        &f.mask,
        &gm,
        cfg.step,
        cfg.tol,
        sample,
        &mut rng,
    );
    run.phase("check", t);
    println!(
        "{:<8} {:<28} {:>7} {:>12} {:>12}",
        "network", "tensor", "checked", "max-rel", "max-abs"
    );
    print_report("tasknet", &task);
    print_report("masknet", &masknet);
    let pass = task.pass && masknet.pass;
    #[derive(Serialize)]
    struct Report<'a> {
        manifest_sha256: &'a str,
        tasknet: &'a FdReport,
        masknet: &'a FdReport,
        pass: bool,
    }
    run.write_json(
        "gradcheck.json",
        &Report {
            manifest_sha256: run.hash(),
            tasknet: &task,
            masknet: &masknet,
            pass,
        },
    )?;
    run.finish()?;
    let worst = task.max_rel_err.max(masknet.max_rel_err);
    if pass {
        println!("PASS max relative error {worst:.3e} <= {:.1e}", cfg.tol);
        Ok(())
    } else {
        Err(CliError::check(format!(
            "FAIL max relative error {worst:.3e} > {:.1e}",
            cfg.tol
        )))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub seed: u64,
    pub surrogate_instances: usize,
    pub surrogate_max_edges: usize,
    pub surrogate_step: f64,
    pub dual_instances: usize,
    pub dual_max_edges: usize,
    pub dual_lambdas: Vec<f64>,
    pub kkt_instances: usize,
    pub identity_seeds: usize,
    /// Tolerance of the duality and KKT checks.
    pub tol: f64,
    pub identity_tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            seed: 0,
            surrogate_instances: 100,
            surrogate_max_edges: 5,
            surrogate_step: 0.05,
            dual_instances: 20,
            dual_max_edges: 6,
            dual_lambdas: vec![0.0, 0.5, 1.0, 5.0],
            kkt_instances: 50,
            identity_seeds: 10,
            tol: 1e-9,
            identity_tol: 1e-10,
        }
    }
}

pub fn oracle_keys() -> Vec<Key> {
    let mut k = leaf_keys(&OracleConfig::default(), &[]);
    k.push(Key::scalar(
        "out_dir",
        "output directory (also EDGEMASK_OUT_DIR)",
    ));
    k
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleRow {
    pub check: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Largest violation seen (0 when every case holds exactly).
    pub worst: f64,
    pub pass: bool,
}

fn row(check: &'static str, cases: usize, failures: usize, worst: f64) -> OracleRow {
    OracleRow {
        check,
        cases,
        failures,
        worst,
        pass: failures == 0,
    }
}

fn surrogate(cfg: &OracleConfig) -> Result<OracleRow, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut failures, mut worst) = (0, 0.0_f64);
    let max = cfg.surrogate_max_edges.max(1);
    for i in 0..cfg.surrogate_instances {
        let m = 1 + i % max;
        let tau = rng.random_range(0.0..0.5);
        let c = (0..m)
            .map(|_| {
                if rng.random_bool(0.1) {
                    tau
                } else {
                    rng.random_range(-1.0..1.0)
                }
            })
            .collect();
        let p = SurrogateProblem::new(c, rng.random_range(-1.0..1.0), tau, 1.0)?;
        let (best, _) = surrogate_grid_max(&p, cfg.surrogate_step)?;
        let gap = best - p.penalized(&surrogate_optimal_mask(&p).mask);
        if gap > 0.0 {
            failures += 1;
        }
        worst = worst.max(gap);
    }
    Ok(row("surrogate", cfg.surrogate_instances, failures, worst))
}

fn dual_bound(cfg: &OracleConfig) -> Result<OracleRow, CliError> {
    let (mut failures, mut worst, mut cases) = (0, 0.0_f64, 0);
    let span = cfg.dual_max_edges.max(2) - 1;
    for i in 0..cfg.dual_instances {
        let m = 2 + i % span;
        let f = check_fixture(4, m, 3, 3, cfg.seed.wrapping_add(i as u64))?;
        let loss = TaskNetLoss {
            task: &f.task,
            cfg: &f.cfg,
            graph: &f.graph,
        };
        let rho = [0.25, 0.5, 0.75][i % 3];
        let r = dual_upper_bound(
            &loss,
            &cfg.dual_lambdas,
            rho,
            default_grid_step(m),
            cfg.tol,
            DEFAULT_GRID_CAP,
        )?;
        for d in &r.rows {
            cases += 1;
            worst = worst.max(r.primal - d.dual);
            if !d.holds {
                failures += 1;
            }
        }
    }
    Ok(row("dual-bound", cases, failures, worst.max(0.0)))
}

fn kkt(cfg: &OracleConfig) -> Result<OracleRow, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut failures, mut worst) = (0, 0.0_f64);
    for i in 0..cfg.kkt_instances {
        let m = 2 + i % 6;
        let tau = rng.random_range(0.0..0.3);
        let mut c: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        c[0] = tau + rng.random_range(0.2..1.0);
        let p = SurrogateProblem::new(c, 0.0, tau, rng.random_range(0.1..0.9))?;
        let pen = surrogate_certificate(&p, cfg.tol)?;
        let con = surrogate_constrained(&p);
        let cert = kkt_check(&p.loss(), &con.mask, con.lambda, p.rho, cfg.tol)?;
        for c in [&pen, &cert] {
            let r = c
                .edges
                .iter()
                .map(|e| e.residual)
                .fold(c.slackness_residual.abs(), f64::max);
            worst = worst.max(r);
        }
        // negative control: switching off the strongest edge must be caught
        let mut bad = surrogate_optimal_mask(&p).mask;
        bad[0] = 0.0;
        let rho_bad = (bad.iter().sum::<f64>() / m as f64).max(1e-3);
        let corrupted = kkt_check(&p.loss(), &bad, m as f64 * tau, rho_bad, cfg.tol)?;
        if !pen.pass || !cert.pass || corrupted.pass {
            failures += 1;
        }
    }
    Ok(row("kkt", cfg.kkt_instances, failures, worst))
}

fn grad_identity(cfg: &OracleConfig) -> Result<OracleRow, CliError> {
    let (mut failures, mut worst) = (0, 0.0_f64);
    for s in 0..cfg.identity_seeds {
        let f = check_fixture(8, 16, 3, 3, cfg.seed.wrapping_add(s as u64))?;
        let lambda = [0.0, 0.1, 1.0, 10.0][s % 4];
        let r = masknet_gradient_identity(&f.task, &f.mask, &f.cfg, &f.graph, lambda)?;
        worst = worst.max(r.max_abs_deviation);
        if r.max_abs_deviation > cfg.identity_tol {
            failures += 1;
        }
    }
    Ok(row("grad-identity", cfg.identity_seeds, failures, worst))
}

pub fn oracle(m: &ArgMatches) -> Result<(), CliError> {
    let mut table = layered(m, &oracle_keys())?;
    let dir = out_dir(m, &mut table)?;
    let cfg: OracleConfig = finish(table)?;
    let flags = ["surrogate", "dual-bound", "kkt", "grad-identity"];
    let chosen: Vec<&str> = flags.iter().copied().filter(|f| m.get_flag(f)).collect();
    let chosen = if chosen.is_empty() {
        flags.to_vec()
    } else {
        chosen
    };
    let manifest = RunManifest::new(
        &format!("oracle {}", chosen.join(" ")),
        Some(cfg.seed),
        &cfg,
    )?
    .artifacts(&["oracle.json"]);
    let mut run = Run::start(dir, &manifest)?;
    let mut rows = Vec::new();
    for check in &chosen {
        let t = Instant::now();
        rows.push(match *check {
            "surrogate" => surrogate(&cfg)?,
            "dual-bound" => dual_bound(&cfg)?,
            "kkt" => kkt(&cfg)?,
            _ => grad_identity(&cfg)?,
        });
        run.phase(check, t);
    }
    println!(
        "{:<14} {:>6} {:>9} {:>12}  result",
        "check", "cases", "failures", "worst"
    );
    for r in &rows {
        println!(
            "{:<14} {:>6} {:>9} {:>12.3e}  {}",
            r.check,
            r.cases,
            r.failures,
            r.worst,
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    #[derive(Serialize)]
    struct Report<'a> {
        manifest_sha256: &'a str,
        rows: &'a [OracleRow],
    }
    run.write_json(
        "oracle.json",
        &Report {
            manifest_sha256: run.hash(),
            rows: &rows,
        },
    )?;
    run.finish()?;
    let failed: Vec<&str> = rows.iter().filter(|r| !r.pass).map(|r| r.check).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::check(format!(
            "failed checks: {}",
            failed.join(", ")
        )))
    }
}
