//! Dispatch a validated config to its experiment driver inside a fixed-size
//! worker pool and persist the resulting records.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use gfflab::experiments as ex;

use crate::config::{Config, ConfigError};
use crate::records::{append, ResultRecord};

/// Workers resolved from config, CLI and environment, in that order of
/// increasing precedence. The environment override is honored but only
/// logged, never persisted, because records must not depend on it.
pub fn resolve_workers(cfg_workers: usize, cli_workers: Option<usize>) -> usize {
    let mut workers = cli_workers.unwrap_or(cfg_workers).max(1);
    if let Ok(env) = std::env::var("EXPCLI_WORKERS") {
        if let Ok(w) = env.parse::<usize>() {
            eprintln!("workers overridden to {w} by EXPCLI_WORKERS");
            workers = w.max(1);
        }
    }
    workers
}

fn zip_sizes(sizes: &[i32], replicas: &[i32], what: &str) -> Result<Vec<(i32, u64)>, ConfigError> {
    if sizes.len() != replicas.len() {
        return Err(ConfigError(format!(
            "{what}: sizes and replica lists must have equal length"
        )));
    }
    Ok(sizes
        .iter()
        .zip(replicas)
        .map(|(&n, &r)| (n, r.max(0) as u64))
        .collect())
}

/// Run the configured experiment and return its rows. Deterministic for a
/// fixed (config, seed) at any worker count.
pub fn run_rows(cfg: &Config) -> Result<Vec<ex::Row>> {
    let rows = match cfg.experiment.as_str() {
        "exit-set-scan" => {
            let d = ex::ExitSetScanCfg::default();
            let sizes = cfg.get_i32_list(
                "reach_sizes",
                &d.reach_sizes.iter().map(|&(n, _)| n).collect::<Vec<_>>(),
            )?;
            let reps = cfg.get_i32_list(
                "reach_replicas",
                &d.reach_sizes
                    .iter()
                    .map(|&(_, r)| r as i32)
                    .collect::<Vec<_>>(),
            )?;
            let phi_sizes = cfg.get_i32_list(
                "phi_sizes",
                &d.phi_sizes.iter().map(|&(n, _)| n).collect::<Vec<_>>(),
            )?;
            let phi_reps = cfg.get_i32_list(
                "phi_replicas",
                &d.phi_sizes
                    .iter()
                    .map(|&(_, r)| r as i32)
                    .collect::<Vec<_>>(),
            )?;
            let c = ex::ExitSetScanCfg {
                ncomp: cfg.get_usize("ncomp", d.ncomp)?,
                radius: cfg.get_f64("radius", d.radius)?,
                jump: cfg.get_usize("jump", d.jump as usize)? as i32,
                eps: cfg.get_f64("eps", d.eps)?,
                reach_sizes: zip_sizes(&sizes, &reps, "reach")?,
                phi_sizes: zip_sizes(&phi_sizes, &phi_reps, "phi")?,
                walk_pairs: cfg.get_usize("walk_pairs", d.walk_pairs)?,
                control_ncomp: d.control_ncomp,
                control_replicas: cfg.get_usize("control_replicas", d.control_replicas as usize)?
                    as u64,
                seed: cfg.seed,
            };
            ex::exit_set_scan(&c)?.rows()
        }
        "connectivity-decay" => {
            let d = ex::ConnectivityDecayCfg::default();
            let c = ex::ConnectivityDecayCfg {
                window: cfg.get_usize("window", d.window as usize)? as i32,
                ncomp: cfg.get_usize("ncomp", d.ncomp)?,
                radius: cfg.get_f64("radius", d.radius)?,
                jump: cfg.get_usize("jump", d.jump as usize)? as i32,
                distances: cfg.get_i32_list("distances", &d.distances)?,
                replicas: cfg.get_usize("replicas", d.replicas as usize)? as u64,
                seed: cfg.seed,
            };
            ex::connectivity_decay(&c)?.rows_out()
        }
        "isomorphism-suite" => {
            let d = ex::IsomorphismCfg::default();
            let c = ex::IsomorphismCfg {
                n: cfg.get_usize("n", d.n as usize)? as i32,
                nlabels: cfg.get_usize("nlabels", d.nlabels)?,
                replicas: cfg.get_usize("replicas", d.replicas as usize)? as u64,
                seed: cfg.seed,
            };
            let res = ex::isomorphism_suite(&c)?;
            vec![
                ex::Row {
                    experiment: "isomorphism-suite".into(),
                    params: vec![("stat".into(), 0.0)],
                    estimate: res.max_ks,
                    stderr: 0.0,
                    replicas: c.replicas,
                },
                ex::Row {
                    experiment: "isomorphism-suite".into(),
                    params: vec![("stat".into(), 1.0)],
                    estimate: res.max_diag_z,
                    stderr: 0.0,
                    replicas: c.replicas,
                },
                ex::Row {
                    experiment: "isomorphism-suite".into(),
                    params: vec![("stat".into(), 2.0)],
                    estimate: res.max_same_label_z,
                    stderr: 0.0,
                    replicas: c.replicas,
                },
                ex::Row {
                    experiment: "isomorphism-suite".into(),
                    params: vec![("stat".into(), 3.0)],
                    estimate: res.max_cross_label_z,
                    stderr: 0.0,
                    replicas: c.replicas,
                },
            ]
        }
        "corr-sandwich" => {
            let d = ex::CorrSandwichCfg::default();
            let c = ex::CorrSandwichCfg {
                window: cfg.get_usize("window", d.window as usize)? as i32,
                ncomp: cfg.get_usize("ncomp", d.ncomp)?,
                beta: cfg.get_f64("beta", d.beta)?,
                distances: cfg.get_i32_list("distances", &d.distances)?,
                burnin: cfg.get_usize("burnin", d.burnin)?,
                measurements: cfg.get_usize("measurements", d.measurements)?,
                thin: cfg.get_usize("thin", d.thin)?,
                seed: cfg.seed,
            };
            ex::sandwich_rows(&ex::corr_sandwich(&c)?, c.measurements as u64)
        }
        "polyakov-limit" => {
            let d = ex::PolyakovCfg::default();
            let c = ex::PolyakovCfg {
                side: cfg.get_usize("side", d.side as usize)? as i32,
                ncomp: cfg.get_usize("ncomp", d.ncomp)?,
                betas: cfg.get_f64_list("betas", &d.betas)?,
                probes: d.probes.clone(),
                burnin: cfg.get_usize("burnin", d.burnin)?,
                measurements: cfg.get_usize("measurements", d.measurements)?,
                seed: cfg.seed,
            };
            ex::polyakov_rows(&ex::polyakov_limit(&c)?, c.measurements as u64)
        }
        "chessboard-tail" => {
            let d = ex::ChessboardCfg::default();
            let c = ex::ChessboardCfg {
                side: cfg.get_usize("side", d.side as usize)? as i32,
                ncomp: cfg.get_usize("ncomp", d.ncomp)?,
                beta: cfg.get_f64("beta", d.beta)?,
                ks: cfg.get_f64_list("ks", &d.ks)?,
                separations: cfg.get_i32_list("separations", &d.separations)?,
                burnin: cfg.get_usize("burnin", d.burnin)?,
                measurements: cfg.get_usize("measurements", d.measurements)?,
                seed: cfg.seed,
            };
            ex::chessboard_rows(&ex::chessboard_tail(&c)?, c.measurements as u64)
        }
        "gm-suite" => {
            let d = ex::GmSuiteCfg::default();
            let c = ex::GmSuiteCfg {
                side: cfg.get_usize("side", d.side as usize)? as i32,
                beta: cfg.get_f64("beta", d.beta)?,
                mass: cfg.get_f64("mass", d.mass)?,
                ncomp: d.ncomp,
                mask_replicas: cfg.get_usize("mask_replicas", d.mask_replicas as usize)? as u64,
                bernoulli_p: cfg.get_f64("bernoulli_p", d.bernoulli_p)?,
                beta_ising: cfg.get_f64("beta_ising", d.beta_ising)?,
                fk_sides: cfg.get_i32_list("fk_sides", &d.fk_sides)?,
                xy_distances: cfg.get_i32_list("xy_distances", &d.xy_distances)?,
                xy_mask_replicas: cfg.get_usize("xy_mask_replicas", d.xy_mask_replicas as usize)?
                    as u64,
                xy_measurements: cfg.get_usize("xy_measurements", d.xy_measurements)?,
                xy_burnin: cfg.get_usize("xy_burnin", d.xy_burnin)?,
                survival_levels: d.survival_levels.clone(),
                seed: cfg.seed,
            };
            ex::gm_rows(&ex::gm_suite(&c)?, c.mask_replicas)
        }
        "equator-diagnostic" => {
            let d = ex::EquatorCfg::default();
            let c = ex::EquatorCfg {
                windows: cfg.get_i32_list("windows", &d.windows)?,
                ncomp: cfg.get_usize("ncomp", d.ncomp)?,
                beta: cfg.get_f64("beta", d.beta)?,
                reach: cfg.get_usize("reach", d.reach as usize)? as i32,
                replicas: cfg.get_usize("replicas", d.replicas as usize)? as u64,
                burnin: cfg.get_usize("burnin", d.burnin)?,
                seed: cfg.seed,
            };
            ex::equator_diagnostic(&c)?
        }
        other => {
            return Err(ConfigError(format!("unknown experiment {other:?}")).into());
        }
    };
    Ok(rows)
}

/// Execute the run inside a pool of the requested size and append records.
pub fn run(cfg: &Config, workers: usize) -> Result<(Vec<ResultRecord>, PathBuf)> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("building the worker pool")?;
    let start = Instant::now();
    let rows = pool.install(|| run_rows(cfg))?;
    let wall_ms = start.elapsed().as_millis() as u64;
    let records: Vec<ResultRecord> = rows
        .iter()
        .map(|r| ResultRecord::from_row(r, cfg.seed, wall_ms))
        .collect();
    let path = Path::new(&cfg.out).join("records.jsonl");
    append(&path, &records).with_context(|| format!("appending to {}", path.display()))?;
    Ok((records, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse;

    fn tiny_config(out: &str) -> Config {
        parse(&format!(
            "experiment = corr-sandwich\nseed = 5\nwindow = 3\ndistances = 1,2\n\
             burnin = 50\nmeasurements = 400\nthin = 1\nout = {out}\n"
        ))
        .unwrap()
    }

    #[test]
    fn records_are_worker_count_independent() {
        let dir = std::env::temp_dir().join("expcli_runner_test");
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        let cfg = tiny_config(dir.to_str().unwrap());
        let (r1, _) = run(&cfg, 1).unwrap();
        let (r2, _) = run(&cfg, 4).unwrap();
        let a: Vec<String> = r1.iter().map(|r| r.canonical_line()).collect();
        let b: Vec<String> = r2.iter().map(|r| r.canonical_line()).collect();
        assert_eq!(a, b);
        // the file accumulated both runs: append-only persistence
        let loaded = crate::records::load(&dir.join("records.jsonl")).unwrap();
        assert_eq!(loaded.len(), r1.len() + r2.len());
    }

    #[test]
    fn same_config_same_estimates() {
        let dir = std::env::temp_dir().join("expcli_runner_test2");
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        let cfg = tiny_config(dir.to_str().unwrap());
        let (r1, _) = run(&cfg, 2).unwrap();
        let (r2, _) = run(&cfg, 2).unwrap();
        for (a, b) in r1.iter().zip(&r2) {
            assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
            assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
        }
    }
}
