//! Reproducible experiment drivers shared by the command-line runner and
//! the acceptance suite. Every driver is a deterministic function of its
//! configuration and seed: replica RNG streams derive from (seed, replica
//! index) alone and aggregation is replica-ordered, so results do not
//! depend on how many workers execute them.

use std::sync::Arc;

use rayon::prelude::*;

use crate::cable::cable_on_extension;
use crate::error::{Error, Result};
use crate::exploration::{phi_a_variance, reach_probability};
use crate::gff::FieldSampler;
use crate::harmonic::green;
use crate::lattice::{build_box, build_torus, build_window, JumpMetric};
use crate::loopsoup::SoupSampler;
use crate::percolation::{
    bernoulli_edges, complement_cluster_sizes, decay_scan, gm_mask_from_field, size_survival_rows,
    spans_horizontally, DecayFit, DecayRow,
};
use crate::rngutil::stream_rng;
use crate::spectral::{BasisKind, SpectralGrid};
use crate::spin::{fk_domination_p, north_root, FkIsing, SpinChain, SpinConfig, SpinModel};
use crate::stats::{binomial_estimate, gamma_half_cdf, ks_distance, mean_se};

/// One persisted observation: parameter tuple, estimate and its error.
#[derive(Debug, Clone)]
pub struct Row {
    pub experiment: String,
    pub params: Vec<(String, f64)>,
    pub estimate: f64,
    pub stderr: f64,
    pub replicas: u64,
}

impl Row {
    fn new(
        experiment: &str,
        params: &[(&str, f64)],
        estimate: f64,
        stderr: f64,
        replicas: u64,
    ) -> Row {
        Row {
            experiment: experiment.to_string(),
            params: params.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
            estimate,
            stderr,
            replicas,
        }
    }
}

fn batch_mean_se(xs: &[f64], batches: usize) -> (f64, f64) {
    let nb = batches.min(xs.len()).max(1);
    let bs = xs.len() / nb;
    if bs == 0 {
        return mean_se(xs);
    }
    let means: Vec<f64> = (0..nb)
        .map(|b| xs[b * bs..(b + 1) * bs].iter().sum::<f64>() / bs as f64)
        .collect();
    mean_se(&means)
}

// ---------------------------------------------------------------- exit sets

#[derive(Debug, Clone)]
pub struct ExitSetScanCfg {
    pub ncomp: usize,
    pub radius: f64,
    pub jump: i32,
    pub eps: f64,
    /// (box radius, replicas) pairs for the reach probability scan.
    pub reach_sizes: Vec<(i32, u64)>,
    /// (box radius, replicas) pairs for the harmonic-variance scan.
    pub phi_sizes: Vec<(i32, u64)>,
    pub walk_pairs: usize,
    pub control_ncomp: usize,
    /// replicas for the control run at the first and last reach size
    pub control_replicas: u64,
    pub seed: u64,
}

impl Default for ExitSetScanCfg {
    fn default() -> Self {
        ExitSetScanCfg {
            ncomp: 2,
            radius: 1.0,
            jump: 1,
            eps: 0.5,
            reach_sizes: vec![(16, 400_000), (32, 150_000), (64, 20_000), (128, 5_000)],
            phi_sizes: vec![(32, 8_000), (64, 6_000), (128, 3_000), (256, 1_200)],
            walk_pairs: 48,
            control_ncomp: 1,
            control_replicas: 20_000,
            seed: 0x5ca1ab1e,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExitSetScan {
    /// (n, estimate, stderr) of the reach probability, main component count.
    pub reach: Vec<(i32, f64, f64)>,
    /// control run at a different component count, first and last size only
    pub control: Vec<(i32, f64, f64)>,
    pub phi: Vec<(i32, f64, f64)>,
    pub reach_replicas: Vec<u64>,
    pub phi_replicas: Vec<u64>,
    pub control_replicas: u64,
}

pub fn exit_set_scan(cfg: &ExitSetScanCfg) -> Result<ExitSetScan> {
    let mut reach = Vec::new();
    for (i, &(n, reps)) in cfg.reach_sizes.iter().enumerate() {
        let (p, se) = reach_probability(
            n,
            cfg.ncomp,
            cfg.radius,
            cfg.jump,
            cfg.eps,
            reps,
            crate::rngutil::derive_seed(cfg.seed, 100 + i as u64),
        )?;
        reach.push((n, p, se));
    }
    let mut control = Vec::new();
    if let (Some(&(n0, _)), Some(&(n1, _))) = (cfg.reach_sizes.first(), cfg.reach_sizes.last()) {
        for (i, n) in [n0, n1].into_iter().enumerate() {
            let (p, se) = reach_probability(
                n,
                cfg.control_ncomp,
                cfg.radius,
                cfg.jump,
                cfg.eps,
                cfg.control_replicas,
                crate::rngutil::derive_seed(cfg.seed, 200 + i as u64),
            )?;
            control.push((n, p, se));
        }
    }
    let mut phi = Vec::new();
    for (i, &(n, reps)) in cfg.phi_sizes.iter().enumerate() {
        let (v, se) = phi_a_variance(
            n,
            cfg.ncomp,
            cfg.radius,
            cfg.jump,
            reps,
            cfg.walk_pairs,
            crate::rngutil::derive_seed(cfg.seed, 300 + i as u64),
        )?;
        phi.push((n, v, se));
    }
    Ok(ExitSetScan {
        reach,
        control,
        phi,
        reach_replicas: cfg.reach_sizes.iter().map(|&(_, r)| r).collect(),
        phi_replicas: cfg.phi_sizes.iter().map(|&(_, r)| r).collect(),
        control_replicas: cfg.control_replicas,
    })
}

impl ExitSetScan {
    pub fn rows(&self) -> Vec<Row> {
        let mut rows = Vec::new();
        for (&(n, p, se), &reps) in self.reach.iter().zip(&self.reach_replicas) {
            rows.push(Row::new(
                "exit-set-scan",
                &[("n", n as f64), ("kind", 0.0)],
                p,
                se,
                reps,
            ));
        }
        for &(n, p, se) in &self.control {
            rows.push(Row::new(
                "exit-set-scan",
                &[("n", n as f64), ("kind", 1.0)],
                p,
                se,
                self.control_replicas,
            ));
        }
        for (&(n, v, se), &reps) in self.phi.iter().zip(&self.phi_replicas) {
            rows.push(Row::new(
                "exit-set-scan",
                &[("n", n as f64), ("kind", 2.0)],
                v,
                se,
                reps,
            ));
        }
        rows
    }
}

// ------------------------------------------------------- connectivity decay

#[derive(Debug, Clone)]
pub struct ConnectivityDecayCfg {
    pub window: i32,
    pub ncomp: usize,
    pub radius: f64,
    pub jump: i32,
    pub distances: Vec<i32>,
    pub replicas: u64,
    pub seed: u64,
}

impl Default for ConnectivityDecayCfg {
    fn default() -> Self {
        ConnectivityDecayCfg {
            window: 64,
            ncomp: 2,
            radius: 1.0,
            jump: 1,
            distances: vec![4, 6, 8, 12, 16, 24, 32],
            replicas: 30_000,
            seed: 0xdecac,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConnectivityDecay {
    pub rows: Vec<DecayRow>,
    pub fit: DecayFit,
    pub replicas: u64,
}

/// Connectivity of the level set {‖φ‖ ≤ R} of the origin-rooted field,
/// from the origin to (r, 0) over a distance grid, with an exponential fit.
pub fn connectivity_decay(cfg: &ConnectivityDecayCfg) -> Result<ConnectivityDecay> {
    let sampler = FieldSampler::rooted_window(cfg.window)?;
    let g = Arc::clone(sampler.graph());
    let origin = g.site((0, 0)).unwrap();
    let targets: Vec<usize> = cfg
        .distances
        .iter()
        .map(|&r| {
            g.site((r, 0))
                .ok_or_else(|| Error::InvalidGeometry(format!("distance {r} outside the window")))
        })
        .collect::<Result<_>>()?;
    let offsets = JumpMetric::L1.ball_offsets(cfg.jump);
    let radius2 = cfg.radius * cfg.radius;
    let hit_vecs: Vec<Vec<bool>> = (0..cfg.replicas)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream_rng(cfg.seed, rep);
            let f = sampler.sample(cfg.ncomp, &mut rng);
            let mut seen = vec![false; g.nsites()];
            let mut queue = std::collections::VecDeque::new();
            seen[origin] = true;
            queue.push_back(origin);
            while let Some(x) = queue.pop_front() {
                let c = g.coord(x);
                for &(dx, dy) in &offsets {
                    if let Some(y) = g.site((c.0 + dx, c.1 + dy)) {
                        if !seen[y] && f.norm2(y) <= radius2 {
                            seen[y] = true;
                            queue.push_back(y);
                        }
                    }
                }
            }
            targets.iter().map(|&t| seen[t]).collect()
        })
        .collect();
    let mut rows = Vec::new();
    for (i, &r) in cfg.distances.iter().enumerate() {
        let hits = hit_vecs.iter().filter(|h| h[i]).count() as u64;
        let (p, se) = binomial_estimate(hits, cfg.replicas);
        rows.push(DecayRow {
            distance: r as f64,
            probability: p,
            stderr: se,
        });
    }
    let fit = decay_scan(&rows)?;
    Ok(ConnectivityDecay {
        rows,
        fit,
        replicas: cfg.replicas,
    })
}

impl ConnectivityDecay {
    pub fn rows_out(&self) -> Vec<Row> {
        self.rows
            .iter()
            .map(|r| {
                Row::new(
                    "connectivity-decay",
                    &[("r", r.distance)],
                    r.probability,
                    r.stderr,
                    self.replicas,
                )
            })
            .collect()
    }
}

// ------------------------------------------------------- isomorphism suite

#[derive(Debug, Clone)]
pub struct IsomorphismCfg {
    pub n: i32,
    pub nlabels: usize,
    pub replicas: u64,
    pub seed: u64,
}

impl Default for IsomorphismCfg {
    fn default() -> Self {
        IsomorphismCfg {
            n: 4,
            nlabels: 2,
            replicas: 100_000,
            seed: 0x150,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IsomorphismSuite {
    /// worst per-site KS distance of the total occupation against the exact
    /// squared-field law
    pub max_ks: f64,
    /// worst |z| of E L^label(x) against G(x,x)
    pub max_diag_z: f64,
    /// worst |z| of Cov(L¹(x), L¹(y)) against 2G(x,y)²
    pub max_same_label_z: f64,
    /// worst |z| of Cov(L¹(x), L²(y)) against 0
    pub max_cross_label_z: f64,
}

pub fn isomorphism_suite(cfg: &IsomorphismCfg) -> Result<IsomorphismSuite> {
    let g = build_box(cfg.n)?;
    let zs: Vec<usize> = g.boundary().iter().map(|&b| b as usize).collect();
    let kernel = green(&g, &zs, 0.0)?;
    let sampler = SoupSampler::new(&g, &zs, cfg.nlabels, 0.0)?;
    let interior: Vec<usize> = (0..g.nsites()).filter(|&s| !g.is_boundary(s)).collect();
    // moment probes: a few representative site pairs
    let pairs: Vec<(usize, usize)> = vec![
        (g.site((0, 0)).unwrap(), g.site((1, 0)).unwrap()),
        (g.site((0, 0)).unwrap(), g.site((2, 2)).unwrap()),
        (g.site((-2, 1)).unwrap(), g.site((1, -2)).unwrap()),
    ];
    let per_rep: Vec<(Vec<f64>, Vec<[f64; 4]>)> = (0..cfg.replicas)
        .into_par_iter()
        .map(|rep| {
            let soup = sampler.sample(crate::rngutil::derive_seed(cfg.seed, rep));
            let lt = soup.local_time(0.0).expect("zero-mass occupation");
            let totals: Vec<f64> = interior.iter().map(|&s| lt.total(s)).collect();
            let pairvals: Vec<[f64; 4]> = pairs
                .iter()
                .map(|&(x, y)| {
                    [
                        lt.label(x, 0),
                        lt.label(y, 0),
                        lt.label(x, 1),
                        lt.label(y, 1),
                    ]
                })
                .collect();
            (totals, pairvals)
        })
        .collect();
    // per-site KS against Exp(scale N·... ): total occupation of an
    // N-label ensemble at a site is Gamma(N/2, 2G); for two labels that is
    // Exp(2G)
    let mut max_ks: f64 = 0.0;
    for (i, &s) in interior.iter().enumerate() {
        let gxx = kernel.value(s, s)?;
        let mut vals: Vec<f64> = per_rep.iter().map(|r| r.0[i]).collect();
        let ks = if cfg.nlabels == 2 {
            ks_distance(&mut vals, |x| crate::stats::exp_cdf(x, 2.0 * gxx))
        } else if cfg.nlabels == 1 {
            ks_distance(&mut vals, |x| gamma_half_cdf(x, 2.0 * gxx))
        } else {
            0.0
        };
        max_ks = max_ks.max(ks);
    }
    // diagonal means per label
    let mut max_diag_z: f64 = 0.0;
    for (i, &s) in interior.iter().enumerate() {
        let want = kernel.value(s, s)? * cfg.nlabels as f64;
        let vals: Vec<f64> = per_rep.iter().map(|r| r.0[i]).collect();
        let (m, se) = mean_se(&vals);
        max_diag_z = max_diag_z.max(((m - want) / se).abs() / cfg.nlabels as f64);
    }
    // joint second moments at the probe pairs
    let mut max_same: f64 = 0.0;
    let mut max_cross: f64 = 0.0;
    for (pi, &(x, y)) in pairs.iter().enumerate() {
        let gxy = kernel.value(x, y)?;
        let l1x: Vec<f64> = per_rep.iter().map(|r| r.1[pi][0]).collect();
        let l1y: Vec<f64> = per_rep.iter().map(|r| r.1[pi][1]).collect();
        let l2y: Vec<f64> = per_rep.iter().map(|r| r.1[pi][3]).collect();
        let same = crate::stats::covariance(&l1x, &l1y);
        let same_se = crate::stats::covariance_se(&l1x, &l1y);
        max_same = max_same.max(((same - 2.0 * gxy * gxy) / same_se).abs());
        let cross = crate::stats::covariance(&l1x, &l2y);
        let cross_se = crate::stats::covariance_se(&l1x, &l2y);
        max_cross = max_cross.max((cross / cross_se).abs());
    }
    Ok(IsomorphismSuite {
        max_ks,
        max_diag_z,
        max_same_label_z: max_same,
        max_cross_label_z: max_cross,
    })
}

// ----------------------------------------------------- correlation sandwich

#[derive(Debug, Clone)]
pub struct CorrSandwichCfg {
    pub window: i32,
    pub ncomp: usize,
    pub beta: f64,
    pub distances: Vec<i32>,
    pub burnin: usize,
    pub measurements: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for CorrSandwichCfg {
    fn default() -> Self {
        CorrSandwichCfg {
            window: 8,
            ncomp: 2,
            beta: 1.0,
            distances: vec![1, 2, 4],
            burnin: 2_000,
            measurements: 40_000,
            thin: 2,
            seed: 0x5a4d,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SandwichPair {
    pub distance: i32,
    pub axis: usize,
    pub dot: f64,
    pub dot_se: f64,
    pub connect: f64,
    pub connect_se: f64,
}

/// Two-point function against the cable connectivity through the first
/// component, pair by pair.
pub fn corr_sandwich(cfg: &CorrSandwichCfg) -> Result<Vec<SandwichPair>> {
    let g = build_window(cfg.window)?;
    let model = Arc::new(SpinModel::uniform(&g, cfg.ncomp, cfg.beta)?);
    let mut pairs = Vec::new();
    for &d in &cfg.distances {
        for (axis, coord) in [(0usize, (d, 0)), (1, (0, d))] {
            let x = g.site((0, 0)).unwrap();
            let y = g
                .site(coord)
                .ok_or_else(|| Error::InvalidGeometry(format!("distance {d} too large")))?;
            pairs.push((d, axis, x, y));
        }
    }
    let mut chain = SpinChain::new(Arc::clone(&model), cfg.seed);
    for _ in 0..cfg.burnin {
        chain.mixed_step();
    }
    let mut dots: Vec<Vec<f64>> = vec![Vec::new(); pairs.len()];
    let mut conns: Vec<Vec<f64>> = vec![Vec::new(); pairs.len()];
    for m in 0..cfg.measurements {
        for _ in 0..cfg.thin {
            chain.mixed_step();
        }
        let refn = cable_on_extension(
            &model,
            &chain.config,
            cfg.beta,
            0,
            crate::rngutil::derive_seed(cfg.seed, 500_000 + m as u64),
        )?;
        for (pi, &(_, _, x, y)) in pairs.iter().enumerate() {
            let (ix, iy) = (model.site_index[x] as usize, model.site_index[y] as usize);
            dots[pi].push(chain.config.dot(ix, iy));
            conns[pi].push(refn.same_sign_connected(x, y) as u8 as f64);
        }
    }
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(pi, &(d, axis, _, _))| {
            let (dot, dot_se) = batch_mean_se(&dots[pi], 40);
            let (connect, connect_se) = batch_mean_se(&conns[pi], 40);
            SandwichPair {
                distance: d,
                axis,
                dot,
                dot_se,
                connect,
                connect_se,
            }
        })
        .collect())
}

pub fn sandwich_rows(pairs: &[SandwichPair], measurements: u64) -> Vec<Row> {
    let mut rows = Vec::new();
    for p in pairs {
        rows.push(Row::new(
            "corr-sandwich",
            &[
                ("d", p.distance as f64),
                ("axis", p.axis as f64),
                ("kind", 0.0),
            ],
            p.dot,
            p.dot_se,
            measurements,
        ));
        rows.push(Row::new(
            "corr-sandwich",
            &[
                ("d", p.distance as f64),
                ("axis", p.axis as f64),
                ("kind", 1.0),
            ],
            p.connect,
            p.connect_se,
            measurements,
        ));
    }
    rows
}

// --------------------------------------------------------- local flattening

#[derive(Debug, Clone)]
pub struct PolyakovCfg {
    pub side: i32,
    pub ncomp: usize,
    pub betas: Vec<f64>,
    pub probes: Vec<(i32, i32)>,
    pub burnin: usize,
    pub measurements: usize,
    pub seed: u64,
}

impl Default for PolyakovCfg {
    fn default() -> Self {
        PolyakovCfg {
            side: 64,
            ncomp: 3,
            betas: vec![16.0, 64.0, 256.0],
            probes: vec![(1, 0), (1, 1), (2, 0), (2, 2), (3, 0), (4, 0), (0, 4)],
            burnin: 1_500,
            measurements: 8_000,
            seed: 0x905a,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PolyakovPoint {
    pub beta: f64,
    pub probe: (i32, i32),
    pub variance: f64,
    pub variance_se: f64,
    /// pinned Green diagonal of the torus at the probe
    pub target: f64,
}

/// Variance of the rescaled transverse components around a north-rooted
/// site, against the pinned Green function.
pub fn polyakov_limit(cfg: &PolyakovCfg) -> Result<Vec<PolyakovPoint>> {
    let g = build_torus(cfg.side)?;
    let grid = SpectralGrid::new(BasisKind::Torus, cfg.side as usize, 0.0)?;
    let targets: Vec<f64> = cfg
        .probes
        .iter()
        .map(|&(x, y)| {
            let px = x.rem_euclid(cfg.side) as usize;
            let py = y.rem_euclid(cfg.side) as usize;
            grid.pinned_green((0, 0), (px, py), (px, py))
        })
        .collect();
    let mut out = Vec::new();
    for (bi, &beta) in cfg.betas.iter().enumerate() {
        let model = Arc::new(SpinModel::uniform(&g, cfg.ncomp, beta)?);
        let mut chain = SpinChain::new(
            Arc::clone(&model),
            crate::rngutil::derive_seed(cfg.seed, bi as u64),
        );
        for _ in 0..cfg.burnin {
            chain.mixed_step();
        }
        let probe_sites: Vec<usize> = cfg
            .probes
            .iter()
            .map(|&(x, y)| g.site((x, y)).unwrap())
            .collect();
        let mut sq: Vec<Vec<f64>> = vec![Vec::new(); cfg.probes.len()];
        let root = g.site((0, 0)).unwrap();
        for _ in 0..cfg.measurements {
            chain.mixed_step();
            let mut rooted = SpinConfig {
                ncomp: cfg.ncomp,
                data: chain.config.data.clone(),
            };
            north_root(&mut rooted, root)?;
            for (pi, &s) in probe_sites.iter().enumerate() {
                // both transverse components are exchangeable samples
                let mut acc = 0.0;
                for c in 0..cfg.ncomp - 1 {
                    let v = rooted.spin(s)[c];
                    acc += beta * v * v;
                }
                sq[pi].push(acc / (cfg.ncomp - 1) as f64);
            }
        }
        for (pi, &probe) in cfg.probes.iter().enumerate() {
            let (variance, variance_se) = batch_mean_se(&sq[pi], 40);
            out.push(PolyakovPoint {
                beta,
                probe,
                variance,
                variance_se,
                target: targets[pi],
            });
        }
    }
    Ok(out)
}

pub fn polyakov_rows(points: &[PolyakovPoint], measurements: u64) -> Vec<Row> {
    points
        .iter()
        .map(|p| {
            Row::new(
                "polyakov-limit",
                &[
                    ("beta", p.beta),
                    ("x", p.probe.0 as f64),
                    ("y", p.probe.1 as f64),
                    ("target", p.target),
                ],
                p.variance,
                p.variance_se,
                measurements,
            )
        })
        .collect()
}

// ---------------------------------------------------------- gradient tails

#[derive(Debug, Clone)]
pub struct ChessboardCfg {
    pub side: i32,
    pub ncomp: usize,
    pub beta: f64,
    pub ks: Vec<f64>,
    pub separations: Vec<i32>,
    pub burnin: usize,
    pub measurements: usize,
    pub seed: u64,
}

impl Default for ChessboardCfg {
    fn default() -> Self {
        ChessboardCfg {
            side: 32,
            ncomp: 3,
            beta: 64.0,
            ks: vec![3.0, 4.0, 5.0],
            separations: vec![2, 4, 8],
            burnin: 1_500,
            measurements: 30_000,
            seed: 0xc8e5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChessboardTail {
    /// per K: empirical tail, binomial stderr, bound e^{−K²/2}
    pub tails: Vec<(f64, f64, f64, f64)>,
    /// per (separation, component): estimate and stderr of the aligned
    /// gradient two-point function
    pub two_point: Vec<(i32, usize, f64, f64)>,
}

/// Validate that two edges lie on one lattice line at even separation.
pub fn check_aligned_even(
    e1: ((i32, i32), (i32, i32)),
    e2: ((i32, i32), (i32, i32)),
) -> Result<()> {
    let horiz1 = e1.0 .1 == e1.1 .1;
    let horiz2 = e2.0 .1 == e2.1 .1;
    if horiz1 != horiz2 {
        return Err(Error::MisalignedEdges);
    }
    if horiz1 {
        if e1.0 .1 != e2.0 .1 || (e1.0 .0 - e2.0 .0) % 2 != 0 {
            return Err(Error::MisalignedEdges);
        }
    } else if e1.0 .0 != e2.0 .0 || (e1.0 .1 - e2.0 .1) % 2 != 0 {
        return Err(Error::MisalignedEdges);
    }
    Ok(())
}

pub fn chessboard_tail(cfg: &ChessboardCfg) -> Result<ChessboardTail> {
    let g = build_torus(cfg.side)?;
    let model = Arc::new(SpinModel::uniform(&g, cfg.ncomp, cfg.beta)?);
    let mut chain = SpinChain::new(Arc::clone(&model), cfg.seed);
    for _ in 0..cfg.burnin {
        chain.mixed_step();
    }
    let e0 = (g.site((0, 0)).unwrap(), g.site((1, 0)).unwrap());
    let far: Vec<(usize, usize)> = cfg
        .separations
        .iter()
        .map(|&d| {
            check_aligned_even(((0, 0), (1, 0)), ((d, 0), (d + 1, 0)))?;
            Ok((g.site((d, 0)).unwrap(), g.site((d + 1, 0)).unwrap()))
        })
        .collect::<Result<_>>()?;
    let mut norms = Vec::with_capacity(cfg.measurements);
    let mut prods: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); cfg.ncomp]; cfg.separations.len()];
    for _ in 0..cfg.measurements {
        chain.mixed_step();
        norms.push(chain.config.gradient_norm(e0.0, e0.1));
        for (si, &(u2, v2)) in far.iter().enumerate() {
            for c in 0..cfg.ncomp {
                let g1 = chain.config.spin(e0.0)[c] - chain.config.spin(e0.1)[c];
                let g2 = chain.config.spin(u2)[c] - chain.config.spin(v2)[c];
                prods[si][c].push(g1 * g2);
            }
        }
    }
    let mut tails = Vec::new();
    for &k in &cfg.ks {
        let cut = k / cfg.beta.sqrt();
        let hits = norms.iter().filter(|&&x| x >= cut).count() as u64;
        let (p, se) = binomial_estimate(hits, cfg.measurements as u64);
        tails.push((k, p, se, (-k * k / 2.0).exp()));
    }
    let mut two_point = Vec::new();
    for (si, &d) in cfg.separations.iter().enumerate() {
        for c in 0..cfg.ncomp {
            let (m, se) = batch_mean_se(&prods[si][c], 40);
            two_point.push((d, c, m, se));
        }
    }
    Ok(ChessboardTail { tails, two_point })
}

pub fn chessboard_rows(res: &ChessboardTail, measurements: u64) -> Vec<Row> {
    let mut rows = Vec::new();
    for &(k, p, se, bound) in &res.tails {
        rows.push(Row::new(
            "chessboard-tail",
            &[("k", k), ("bound", bound), ("kind", 0.0)],
            p,
            se,
            measurements,
        ));
    }
    for &(d, c, m, se) in &res.two_point {
        rows.push(Row::new(
            "chessboard-tail",
            &[("sep", d as f64), ("comp", c as f64), ("kind", 1.0)],
            m,
            se,
            measurements,
        ));
    }
    rows
}

// ------------------------------------------------------------ masked graphs

#[derive(Debug, Clone)]
pub struct GmSuiteCfg {
    pub side: i32,
    pub beta: f64,
    pub mass: f64,
    pub ncomp: usize,
    pub mask_replicas: u64,
    pub bernoulli_p: f64,
    pub beta_ising: f64,
    pub fk_sides: Vec<i32>,
    pub xy_distances: Vec<i32>,
    pub xy_mask_replicas: u64,
    pub xy_measurements: usize,
    pub xy_burnin: usize,
    pub survival_levels: Vec<u32>,
    pub seed: u64,
}

impl Default for GmSuiteCfg {
    fn default() -> Self {
        GmSuiteCfg {
            side: 512,
            beta: 4.0,
            mass: 0.05,
            ncomp: 2,
            mask_replicas: 40,
            bernoulli_p: 0.6,
            beta_ising: 1.0,
            fk_sides: vec![128, 256, 512],
            xy_distances: vec![2, 3, 4, 6, 8],
            xy_mask_replicas: 4,
            xy_measurements: 400,
            xy_burnin: 150,
            survival_levels: vec![1, 2, 4, 8, 16, 32, 64],
            seed: 0x96a5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmSuite {
    pub mask_density: f64,
    pub xy_rows: Vec<DecayRow>,
    pub xy_fit: Option<DecayFit>,
    pub complement_rows: Vec<DecayRow>,
    pub complement_fit: Option<DecayFit>,
    pub spanning: (f64, f64),
    /// per FK side: mean largest-cluster density relative to the mask size
    pub fk_density: Vec<(i32, f64, f64)>,
    pub domination_p: f64,
}

pub fn gm_suite(cfg: &GmSuiteCfg) -> Result<GmSuite> {
    let sampler = FieldSampler::massive_torus(cfg.side, cfg.mass)?;
    let g = Arc::clone(sampler.graph());
    // masks for density, complement statistics and spanning
    let mask_results: Vec<(usize, Vec<u32>, bool)> = (0..cfg.mask_replicas)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream_rng(cfg.seed, rep);
            let field = sampler.sample(cfg.ncomp, &mut rng);
            let mask = gm_mask_from_field(&field, cfg.beta);
            let kept = mask.iter().filter(|&&b| b).count();
            let sizes = complement_cluster_sizes(&g, &mask, 1).expect("complement clusters");
            let open = bernoulli_edges(
                &g,
                cfg.bernoulli_p,
                crate::rngutil::derive_seed(cfg.seed, 700 + rep),
            );
            let spans = spans_horizontally(&g, &mask, &open);
            (kept, sizes, spans)
        })
        .collect();
    let mask_density = mask_results.iter().map(|r| r.0).sum::<usize>() as f64
        / (cfg.mask_replicas as f64 * g.nsites() as f64);
    let mut all_sizes = Vec::new();
    for r in &mask_results {
        all_sizes.extend_from_slice(&r.1);
    }
    let complement_rows = size_survival_rows(&all_sizes, &cfg.survival_levels);
    let complement_fit = decay_scan(&complement_rows).ok();
    let spans = mask_results.iter().filter(|r| r.2).count() as u64;
    let spanning = binomial_estimate(spans, cfg.mask_replicas);

    // XY chains on a few masks, correlations pooled per distance
    let mut per_distance: Vec<Vec<f64>> = vec![Vec::new(); cfg.xy_distances.len()];
    for rep in 0..cfg.xy_mask_replicas {
        let mut rng = stream_rng(cfg.seed, 10_000 + rep);
        let field = sampler.sample(cfg.ncomp, &mut rng);
        let mask = gm_mask_from_field(&field, cfg.beta);
        let model = Arc::new(SpinModel::masked(&g, &mask, 2, cfg.beta)?);
        if model.nsites() == 0 {
            continue;
        }
        // sample pairs inside the mask at each distance
        let mut pair_sites: Vec<Vec<(usize, usize)>> = vec![Vec::new(); cfg.xy_distances.len()];
        for (di, &d) in cfg.xy_distances.iter().enumerate() {
            for s in (0..g.nsites()).step_by(3) {
                if !mask[s] {
                    continue;
                }
                let c = g.coord(s);
                if let Some(t) = g.site((c.0 + d, c.1)) {
                    if mask[t] {
                        pair_sites[di]
                            .push((model.site_index[s] as usize, model.site_index[t] as usize));
                    }
                }
                if pair_sites[di].len() >= 300 {
                    break;
                }
            }
        }
        let mut chain = SpinChain::new(
            Arc::clone(&model),
            crate::rngutil::derive_seed(cfg.seed, 20_000 + rep),
        );
        for _ in 0..cfg.xy_burnin {
            chain.mixed_step();
        }
        for _ in 0..cfg.xy_measurements {
            chain.mixed_step();
            for (di, ps) in pair_sites.iter().enumerate() {
                if ps.is_empty() {
                    continue;
                }
                let mut acc = 0.0;
                for &(a, b) in ps {
                    acc += chain.config.dot(a, b);
                }
                per_distance[di].push(acc / ps.len() as f64);
            }
        }
    }
    let mut xy_rows = Vec::new();
    for (di, &d) in cfg.xy_distances.iter().enumerate() {
        if per_distance[di].is_empty() {
            continue;
        }
        let (m, se) = batch_mean_se(&per_distance[di], 20);
        xy_rows.push(DecayRow {
            distance: d as f64,
            probability: m.max(0.0),
            stderr: se,
        });
    }
    let xy_fit = decay_scan(&xy_rows).ok();

    // FK layer across window sizes
    let mut fk_density = Vec::new();
    for (i, &side) in cfg.fk_sides.iter().enumerate() {
        let ssampler = FieldSampler::massive_torus(side, cfg.mass)?;
        let sg = Arc::clone(ssampler.graph());
        let mut rng = stream_rng(cfg.seed, 30_000 + i as u64);
        let field = ssampler.sample(cfg.ncomp, &mut rng);
        let mask = gm_mask_from_field(&field, cfg.beta);
        let kept = mask.iter().filter(|&&b| b).count().max(1);
        let model = Arc::new(SpinModel::masked(&sg, &mask, 1, cfg.beta_ising)?);
        let mut fk = FkIsing::new(
            Arc::clone(&model),
            crate::rngutil::derive_seed(cfg.seed, 40_000 + i as u64),
        );
        for _ in 0..40 {
            fk.sweep();
        }
        let mut densities = Vec::new();
        for _ in 0..40 {
            let st = fk.sweep();
            densities.push(st.largest_cluster as f64 / kept as f64);
        }
        let (m, se) = batch_mean_se(&densities, 10);
        fk_density.push((side, m, se));
    }
    Ok(GmSuite {
        mask_density,
        xy_rows,
        xy_fit,
        complement_rows,
        complement_fit,
        spanning,
        fk_density,
        domination_p: fk_domination_p(cfg.beta_ising),
    })
}

pub fn gm_rows(res: &GmSuite, mask_replicas: u64) -> Vec<Row> {
    let mut rows = Vec::new();
    rows.push(Row::new(
        "gm-suite",
        &[("kind", 0.0)],
        res.mask_density,
        0.0,
        mask_replicas,
    ));
    for r in &res.xy_rows {
        rows.push(Row::new(
            "gm-suite",
            &[("kind", 1.0), ("d", r.distance)],
            r.probability,
            r.stderr,
            0,
        ));
    }
    for r in &res.complement_rows {
        rows.push(Row::new(
            "gm-suite",
            &[("kind", 2.0), ("s", r.distance)],
            r.probability,
            r.stderr,
            0,
        ));
    }
    rows.push(Row::new(
        "gm-suite",
        &[("kind", 3.0)],
        res.spanning.0,
        res.spanning.1,
        mask_replicas,
    ));
    for &(side, m, se) in &res.fk_density {
        rows.push(Row::new(
            "gm-suite",
            &[("kind", 4.0), ("side", side as f64)],
            m,
            se,
            0,
        ));
    }
    rows.push(Row::new(
        "gm-suite",
        &[("kind", 5.0)],
        res.domination_p,
        0.0,
        0,
    ));
    rows
}

// -------------------------------------------------------- equator crossings

#[derive(Debug, Clone)]
pub struct EquatorCfg {
    pub windows: Vec<i32>,
    pub ncomp: usize,
    pub beta: f64,
    pub reach: i32,
    pub replicas: u64,
    pub burnin: usize,
    pub seed: u64,
}

impl Default for EquatorCfg {
    fn default() -> Self {
        EquatorCfg {
            windows: vec![6, 9, 12],
            ncomp: 3,
            beta: 1.0,
            reach: 4,
            replicas: 400,
            burnin: 120,
            seed: 0xe9a,
        }
    }
}

/// Divergence diagnostic of the polar-component open set: the connectivity
/// sum Σ_{1≤n,m≤K} P((n,0) ↔ (0,m) in ω) per window size.
pub fn equator_diagnostic(cfg: &EquatorCfg) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    for (wi, &w) in cfg.windows.iter().enumerate() {
        let g = build_window(w)?;
        let model = Arc::new(SpinModel::uniform(&g, cfg.ncomp, cfg.beta)?);
        let sums: Vec<f64> = (0..cfg.replicas)
            .into_par_iter()
            .map(|rep| {
                let mut chain = SpinChain::new(
                    Arc::clone(&model),
                    crate::rngutil::derive_seed(cfg.seed, (wi as u64) << 32 | rep),
                );
                for _ in 0..cfg.burnin {
                    chain.mixed_step();
                }
                let refn = cable_on_extension(
                    &model,
                    &chain.config,
                    cfg.beta,
                    cfg.ncomp - 1,
                    crate::rngutil::derive_seed(cfg.seed, 0xAA00 + ((wi as u64) << 32 | rep)),
                )
                .expect("refinement");
                let mut sum = 0.0;
                for n in 1..=cfg.reach {
                    for m in 1..=cfg.reach {
                        let a = g.site((n, 0)).unwrap();
                        let b = g.site((0, m)).unwrap();
                        if refn.same_sign_connected(a, b) {
                            sum += 1.0;
                        }
                    }
                }
                sum
            })
            .collect();
        let (mean, se) = mean_se(&sums);
        rows.push(Row::new(
            "equator-diagnostic",
            &[("window", w as f64), ("reach", cfg.reach as f64)],
            mean,
            se,
            cfg.replicas,
        ));
    }
    Ok(rows)
}
