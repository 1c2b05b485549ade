//! Exit-set explorations of a vector field from the boundary inward, with
//! k-jump adjacency, the stopped variant confined to the outer half-annulus,
//! and the harmonic-variance observable at the origin.
//!
//! A site joins the exploration when some admissible site within jump
//! distance k reaches it; sites whose field norm exceeds the threshold are
//! recorded but do not propagate. The harmonic value at the origin is
//! evaluated either by an exact Dirichlet solve or by an unbiased two-walk
//! estimator whose walks take exact big jumps through obstacle-free boxes.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gff::{FieldSampler, VectorField};
use crate::harmonic::DirichletSystem;
use crate::lattice::{JumpMetric, SiteGraph, Topology};
use crate::rngutil::stream_rng;
use crate::spectral::{BasisKind, SpectralGrid};
use crate::stats::{binomial_estimate, mean_se};

/// Result of one exploration: the explored sites with their field values.
pub struct ExitSet {
    pub graph: Arc<SiteGraph>,
    pub ncomp: usize,
    /// Explored sites in discovery order (boundary first).
    pub members: Vec<u32>,
    pub in_set: Vec<bool>,
    /// Field values on members, member-major.
    pub values: Vec<f64>,
    pub radius: f64,
    pub jump: i32,
    pub stopped: bool,
}

impl ExitSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, site: usize) -> bool {
        self.in_set[site]
    }

    /// Smallest box radius met by the exploration.
    pub fn min_linf_radius(&self) -> i32 {
        self.members
            .iter()
            .map(|&s| {
                let c = self.graph.coord(s as usize);
                c.0.abs().max(c.1.abs())
            })
            .min()
            .unwrap_or(i32::MAX)
    }

    /// Run-length-encoded mask plus the value list.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        let n = match self.graph.topology {
            Topology::Box { n } => n,
            _ => return Err(Error::InvalidGeometry("exit sets live on boxes".into())),
        };
        writeln!(w, "exitset 1")?;
        writeln!(
            w,
            "n={} ncomp={} radius={} jump={} stopped={}",
            n, self.ncomp, self.radius, self.jump, self.stopped
        )?;
        let mut runs: Vec<(u32, u32)> = Vec::new();
        let mut s = 0usize;
        while s < self.graph.nsites() {
            if self.in_set[s] {
                let start = s;
                while s < self.graph.nsites() && self.in_set[s] {
                    s += 1;
                }
                runs.push((start as u32, (s - start) as u32));
            } else {
                s += 1;
            }
        }
        writeln!(w, "runs={}", runs.len())?;
        for (start, len) in runs {
            writeln!(w, "{start} {len}")?;
        }
        // values follow site order of the mask
        for s in 0..self.graph.nsites() {
            if !self.in_set[s] {
                continue;
            }
            let i = self.members.iter().position(|&m| m as usize == s).unwrap();
            for c in 0..self.ncomp {
                w.write_all(&self.values[i * self.ncomp + c].to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ExitSet> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim() != "exitset 1" {
            return Err(Error::Malformed("bad exit-set magic".into()));
        }
        line.clear();
        r.read_line(&mut line)?;
        let mut n = 0i32;
        let mut ncomp = 0usize;
        let mut radius = 0.0f64;
        let mut jump = 0i32;
        let mut stopped = false;
        for kv in line.trim().split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Malformed(format!("bad field {kv:?}")))?;
            match k {
                "n" => n = v.parse().map_err(|_| Error::Malformed("bad n".into()))?,
                "ncomp" => {
                    ncomp = v
                        .parse()
                        .map_err(|_| Error::Malformed("bad ncomp".into()))?
                }
                "radius" => {
                    radius = v
                        .parse()
                        .map_err(|_| Error::Malformed("bad radius".into()))?
                }
                "jump" => jump = v.parse().map_err(|_| Error::Malformed("bad jump".into()))?,
                "stopped" => {
                    stopped = v
                        .parse()
                        .map_err(|_| Error::Malformed("bad stopped".into()))?
                }
                _ => return Err(Error::Malformed(format!("unknown key {k:?}"))),
            }
        }
        let graph = crate::lattice::build_box(n)?;
        line.clear();
        r.read_line(&mut line)?;
        let runs: usize = line
            .trim()
            .strip_prefix("runs=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Malformed("bad runs header".into()))?;
        let mut in_set = vec![false; graph.nsites()];
        for _ in 0..runs {
            line.clear();
            r.read_line(&mut line)?;
            let mut it = line.split_whitespace();
            let start: usize = it
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Malformed("bad run".into()))?;
            let len: usize = it
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Malformed("bad run".into()))?;
            for s in start..start + len {
                in_set[s] = true;
            }
        }
        let members: Vec<u32> = (0..graph.nsites() as u32)
            .filter(|&s| in_set[s as usize])
            .collect();
        let mut values = vec![0.0; members.len() * ncomp];
        let mut buf = [0u8; 8];
        for v in values.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        Ok(ExitSet {
            graph,
            ncomp,
            members,
            in_set,
            values,
            radius,
            jump,
            stopped,
        })
    }
}

/// Breadth-first k-jump exploration from the zero boundary of a box.
/// Admissible sites (norm ≤ radius) propagate; sites over the threshold are
/// absorbed into the set without propagating. The stopped variant confines
/// every path site to the outer region Λ_n \ Λ_{⌊n/2⌋}.
pub fn explore(
    field: &VectorField,
    radius: f64,
    jump: i32,
    metric: JumpMetric,
    stopped: bool,
) -> Result<ExitSet> {
    if jump < 1 {
        return Err(Error::InvalidArgument(format!("jump {jump} < 1")));
    }
    let graph = &field.graph;
    let n = match graph.topology {
        Topology::Box { n } => n,
        _ => {
            return Err(Error::InvalidGeometry(
                "exploration needs a box with designated boundary".into(),
            ))
        }
    };
    let inner_half = n / 2;
    let offsets = metric.ball_offsets(jump);
    let mut in_set = vec![false; graph.nsites()];
    let mut members = Vec::new();
    let mut values = Vec::new();
    let mut queue = VecDeque::new();
    for &b in graph.boundary() {
        let b = b as usize;
        in_set[b] = true;
        members.push(b as u32);
        values.extend_from_slice(field.value(b));
        queue.push_back(b);
    }
    while let Some(x) = queue.pop_front() {
        let (cx, cy) = graph.coord(x);
        for &(dx, dy) in &offsets {
            let Some(y) = graph.site((cx + dx, cy + dy)) else {
                continue;
            };
            if in_set[y] {
                continue;
            }
            if stopped {
                let c = graph.coord(y);
                if c.0.abs().max(c.1.abs()) <= inner_half {
                    continue;
                }
            }
            in_set[y] = true;
            members.push(y as u32);
            values.extend_from_slice(field.value(y));
            if field.norm(y) <= radius {
                queue.push_back(y);
            }
        }
    }
    Ok(ExitSet {
        graph: Arc::clone(graph),
        ncomp: field.ncomp,
        members,
        in_set,
        values,
        radius,
        jump,
        stopped,
    })
}

/// Monte Carlo estimate of P(A_{R,k} ∩ Λ_{(1-ε)n} ≠ ∅).
pub fn reach_probability(
    n: i32,
    ncomp: usize,
    radius: f64,
    jump: i32,
    eps: f64,
    replicas: u64,
    seed: u64,
) -> Result<(f64, f64)> {
    let sampler = FieldSampler::box_zero_boundary(n, 0.0)?;
    let target = ((1.0 - eps) * n as f64).floor() as i32;
    let hits: Vec<bool> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r);
            let field = sampler.sample(ncomp, &mut rng);
            let a = explore(&field, radius, jump, JumpMetric::L1, false).expect("explore");
            a.min_linf_radius() <= target
        })
        .collect();
    let k = hits.iter().filter(|&&h| h).count() as u64;
    Ok(binomial_estimate(k, replicas))
}

/// Exact harmonic value of the explored data at the origin, by a Dirichlet
/// solve on the unexplored region.
pub fn phi_a_at_origin_exact(set: &ExitSet) -> Result<Vec<f64>> {
    let graph = &set.graph;
    let origin = graph
        .site((0, 0))
        .ok_or_else(|| Error::InvalidGeometry("no origin".into()))?;
    let mut member_of = vec![u32::MAX; graph.nsites()];
    for (i, &m) in set.members.iter().enumerate() {
        member_of[m as usize] = i as u32;
    }
    if set.contains(origin) {
        let idx = member_of[origin] as usize;
        return Ok(set.values[idx * set.ncomp..(idx + 1) * set.ncomp].to_vec());
    }
    let sys = DirichletSystem::new(Arc::clone(graph), &set.in_set, 0.0)?;
    let mut out = Vec::with_capacity(set.ncomp);
    for c in 0..set.ncomp {
        let mut rhs = vec![0.0; graph.nsites()];
        for i in 0..graph.nsites() {
            if set.in_set[i] {
                continue;
            }
            let mut acc = 0.0;
            graph.for_neighbors(i, |nb| {
                if set.in_set[nb] {
                    acc += set.values[member_of[nb] as usize * set.ncomp + c];
                }
            });
            rhs[i] = acc;
        }
        let h = sys.solve(&rhs)?;
        out.push(h[origin]);
    }
    Ok(out)
}

/// Exit-position kernels for boxes of dyadic radii, used by the accelerated
/// walk. Exact simple-random-walk exit laws from the center.
pub struct JumpKernels {
    radii: Vec<i32>,
    ring_offsets: Vec<Vec<(i32, i32)>>,
    cdfs: Vec<Vec<f64>>,
}

impl JumpKernels {
    pub fn new(max_radius: i32) -> Result<JumpKernels> {
        let mut radii = Vec::new();
        let mut r = 2;
        while r <= max_radius {
            radii.push(r);
            r *= 2;
        }
        let mut ring_offsets = Vec::new();
        let mut cdfs = Vec::new();
        for &r in &radii {
            let m = (2 * r - 1) as usize;
            let grid = SpectralGrid::new(BasisKind::Dirichlet, m, 0.0)?;
            let mut rhs = ndarray::Array2::zeros((m, m));
            rhs[[(r - 1) as usize, (r - 1) as usize]] = 1.0;
            let gcol = grid.apply_inverse(&rhs);
            // exit mass at ring site s is Σ_{x∼s, x inside} G(center, x)
            let mut offs = Vec::new();
            let mut mass = Vec::new();
            for dx in -r..=r {
                for dy in -r..=r {
                    if dx.abs().max(dy.abs()) != r {
                        continue;
                    }
                    let mut p = 0.0;
                    for (nx, ny) in [(dx + 1, dy), (dx - 1, dy), (dx, dy + 1), (dx, dy - 1)] {
                        if nx.abs() < r && ny.abs() < r {
                            p += gcol[[(nx + r - 1) as usize, (ny + r - 1) as usize]];
                        }
                    }
                    if p > 0.0 {
                        offs.push((dx, dy));
                        mass.push(p);
                    }
                }
            }
            let total: f64 = mass.iter().sum();
            let mut cdf = Vec::with_capacity(mass.len());
            let mut acc = 0.0;
            for m in &mass {
                acc += m / total;
                cdf.push(acc);
            }
            ring_offsets.push(offs);
            cdfs.push(cdf);
        }
        Ok(JumpKernels {
            radii,
            ring_offsets,
            cdfs,
        })
    }

    /// Largest available radius not exceeding `d`.
    fn pick(&self, d: i32) -> Option<usize> {
        let mut best = None;
        for (i, &r) in self.radii.iter().enumerate() {
            if r <= d {
                best = Some(i);
            }
        }
        best
    }

    fn sample(&self, idx: usize, rng: &mut impl Rng) -> (i32, i32) {
        let u = rng.random::<f64>();
        let cdf = &self.cdfs[idx];
        let pos = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
        self.ring_offsets[idx][pos]
    }
}

/// L∞ distance to the nearest obstacle, by multi-source BFS with diagonal
/// steps.
fn chebyshev_distance_map(graph: &SiteGraph, obstacle: &[bool]) -> Vec<u32> {
    let mut dist = vec![u32::MAX; graph.nsites()];
    let mut queue = VecDeque::new();
    for s in 0..graph.nsites() {
        if obstacle[s] {
            dist[s] = 0;
            queue.push_back(s);
        }
    }
    while let Some(x) = queue.pop_front() {
        let (cx, cy) = graph.coord(x);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                if let Some(y) = graph.site((cx + dx, cy + dy)) {
                    if dist[y] == u32::MAX {
                        dist[y] = dist[x] + 1;
                        queue.push_back(y);
                    }
                }
            }
        }
    }
    dist
}

/// Walk from `start` until absorbed on the explored set, taking exact
/// box-exit jumps while far from every obstacle.
fn accelerated_walk(
    graph: &SiteGraph,
    start: usize,
    obstacle: &[bool],
    dist: &[u32],
    kernels: &JumpKernels,
    rng: &mut impl Rng,
) -> usize {
    let mut x = start;
    let mut nbuf = Vec::with_capacity(4);
    loop {
        if obstacle[x] {
            return x;
        }
        let d = dist[x] as i32;
        if d >= 2 {
            if let Some(idx) = kernels.pick(d) {
                let (dx, dy) = kernels.sample(idx, rng);
                let c = graph.coord(x);
                x = graph.site((c.0 + dx, c.1 + dy)).expect("jump stays inside");
                continue;
            }
        }
        nbuf.clear();
        graph.for_neighbors(x, |nb| nbuf.push(nb));
        x = nbuf[rng.random_range(0..nbuf.len())];
    }
}

/// Unbiased estimate of ‖φ_Â(0)‖² for one stopped exploration from `pairs`
/// independent walk pairs: E[Σ_c φ^c(X_τ)·φ^c(X'_τ')] is the squared
/// harmonic value at the origin.
pub fn phi_a_norm2_walk_estimate(
    set: &ExitSet,
    kernels: &JumpKernels,
    pairs: usize,
    rng: &mut impl Rng,
) -> f64 {
    let graph = &set.graph;
    let origin = graph.site((0, 0)).expect("origin");
    let dist = chebyshev_distance_map(graph, &set.in_set);
    let mut member_of = vec![u32::MAX; graph.nsites()];
    for (i, &m) in set.members.iter().enumerate() {
        member_of[m as usize] = i as u32;
    }
    let mut acc = 0.0;
    for _ in 0..pairs {
        let s1 = accelerated_walk(graph, origin, &set.in_set, &dist, kernels, rng);
        let s2 = accelerated_walk(graph, origin, &set.in_set, &dist, kernels, rng);
        let (i1, i2) = (member_of[s1] as usize, member_of[s2] as usize);
        for c in 0..set.ncomp {
            acc += set.values[i1 * set.ncomp + c] * set.values[i2 * set.ncomp + c];
        }
    }
    acc / pairs as f64
}

/// Monte Carlo estimate of E[‖φ_Â(0)‖²] over stopped explorations.
#[allow(clippy::too_many_arguments)]
pub fn phi_a_variance(
    n: i32,
    ncomp: usize,
    radius: f64,
    jump: i32,
    replicas: u64,
    walk_pairs: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let sampler = FieldSampler::box_zero_boundary(n, 0.0)?;
    let kernels = JumpKernels::new((n / 2).max(2))?;
    let vals: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r);
            let field = sampler.sample(ncomp, &mut rng);
            let set = explore(&field, radius, jump, JumpMetric::L1, true).expect("explore");
            phi_a_norm2_walk_estimate(&set, &kernels, walk_pairs, &mut rng)
        })
        .collect();
    Ok(mean_se(&vals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gff::sample_gff;
    use crate::lattice::build_box;
    use crate::stats::two_proportion_pvalue;

    fn constant_field(graph: &Arc<SiteGraph>, ncomp: usize, v: f64) -> VectorField {
        let mut f = VectorField::zeros(graph, ncomp);
        for s in 0..graph.nsites() {
            if !graph.is_boundary(s) {
                f.value_mut(s).fill(v);
            }
        }
        f
    }

    /// Field agreeing with the explored values and freshly resampled off the
    /// set (the conditional law given the exploration data).
    fn resample_off_set(g: &Arc<SiteGraph>, a: &ExitSet, seed: u64) -> VectorField {
        let mut zero2: Vec<usize> = a.members.iter().map(|&m| m as usize).collect();
        zero2.sort_unstable();
        let fresh = sample_gff(g, a.ncomp, 0.0, &zero2, seed).unwrap();
        let mut f2 = VectorField::zeros(g, a.ncomp);
        for s in 0..g.nsites() {
            for c in 0..a.ncomp {
                f2.value_mut(s)[c] = fresh.comp(s, c);
            }
        }
        for (i, &m) in a.members.iter().enumerate() {
            for c in 0..a.ncomp {
                f2.value_mut(m as usize)[c] = a.values[i * a.ncomp + c];
            }
        }
        for c in 0..a.ncomp {
            let data: Vec<(usize, f64)> = a
                .members
                .iter()
                .enumerate()
                .map(|(i, &m)| (m as usize, a.values[i * a.ncomp + c]))
                .collect();
            let ext = crate::harmonic::harmonic_extension(g, &data)
                .unwrap()
                .extension;
            for s in 0..g.nsites() {
                if !a.contains(s) {
                    f2.value_mut(s)[c] += ext[s];
                }
            }
        }
        f2
    }

    #[test]
    fn high_field_limits_exploration_to_k_shell() {
        let g = build_box(5).unwrap();
        let f = constant_field(&g, 2, 10.0);
        for k in [1, 2] {
            let a = explore(&f, 1.0, k, JumpMetric::L1, false).unwrap();
            for s in 0..g.nsites() {
                let c = g.coord(s);
                let depth = 5 - c.0.abs().max(c.1.abs());
                assert_eq!(a.contains(s), depth <= k, "site {c:?} k={k}");
            }
        }
    }

    #[test]
    fn low_field_explores_everything() {
        let g = build_box(4).unwrap();
        let f = constant_field(&g, 2, 0.1);
        let a = explore(&f, 1.0, 1, JumpMetric::L1, false).unwrap();
        assert_eq!(a.len(), g.nsites());
    }

    #[test]
    fn exploration_monotone_in_radius_and_jump() {
        let g = build_box(6).unwrap();
        let zs: Vec<usize> = g.boundary().iter().map(|&b| b as usize).collect();
        for seed in 0..5 {
            let f = sample_gff(&g, 2, 0.0, &zs, seed).unwrap();
            let base = explore(&f, 1.0, 1, JumpMetric::L1, false).unwrap();
            for (r2, k2) in [(1.5, 1), (1.0, 2), (2.0, 3)] {
                let bigger = explore(&f, r2, k2, JumpMetric::L1, false).unwrap();
                for &m in &base.members {
                    assert!(bigger.contains(m as usize), "seed {seed} ({r2},{k2})");
                }
            }
        }
    }

    #[test]
    fn stopped_exploration_stays_in_outer_region() {
        let g = build_box(8).unwrap();
        let f = constant_field(&g, 2, 0.0);
        let a = explore(&f, 1.0, 1, JumpMetric::L1, true).unwrap();
        for &m in &a.members {
            let c = g.coord(m as usize);
            assert!(c.0.abs().max(c.1.abs()) > 4);
        }
        let outer = (0..g.nsites())
            .filter(|&s| {
                let c = g.coord(s);
                c.0.abs().max(c.1.abs()) > 4
            })
            .count();
        assert_eq!(a.len(), outer);
    }

    #[test]
    fn exploration_is_optional() {
        // a field agreeing on the queried set reproduces the set exactly
        let g = build_box(6).unwrap();
        let zs: Vec<usize> = g.boundary().iter().map(|&b| b as usize).collect();
        for seed in 0..10 {
            let f = sample_gff(&g, 2, 0.0, &zs, 100 + seed).unwrap();
            let a = explore(&f, 1.0, 1, JumpMetric::L1, false).unwrap();
            let f2 = resample_off_set(&g, &a, 999 + seed);
            let a2 = explore(&f2, 1.0, 1, JumpMetric::L1, false).unwrap();
            assert_eq!(a.members, a2.members, "seed {seed}");
        }
    }

    #[test]
    fn markov_resampling_preserves_reach_statistics() {
        // reach indicator from resampled continuations vs fresh fields
        let n = 8;
        let g = build_box(n).unwrap();
        let zs: Vec<usize> = g.boundary().iter().map(|&b| b as usize).collect();
        let reps = 500u64;
        let target = n / 2;
        let mut fresh_hits = 0u64;
        let mut resampled_hits = 0u64;
        for r in 0..reps {
            let f = sample_gff(&g, 2, 0.0, &zs, 10_000 + r).unwrap();
            let a = explore(&f, 1.0, 1, JumpMetric::L1, true).unwrap();
            let f1 = sample_gff(&g, 2, 0.0, &zs, 30_000 + r).unwrap();
            if explore(&f1, 1.0, 1, JumpMetric::L1, false)
                .unwrap()
                .min_linf_radius()
                <= target
            {
                fresh_hits += 1;
            }
            // continuation of the stopped exploration re-explored in full
            let f2 = resample_off_set(&g, &a, 20_000 + r);
            if explore(&f2, 1.0, 1, JumpMetric::L1, false)
                .unwrap()
                .min_linf_radius()
                <= target
            {
                resampled_hits += 1;
            }
        }
        let p = two_proportion_pvalue(fresh_hits, reps, resampled_hits, reps);
        assert!(p > 0.01, "two-sample p {p}");
    }

    #[test]
    fn walk_estimator_matches_exact_solve() {
        let n = 16;
        let sampler = FieldSampler::box_zero_boundary(n, 0.0).unwrap();
        let kernels = JumpKernels::new(8).unwrap();
        let reps = 400;
        let mut diffs = Vec::new();
        let mut rng = stream_rng(31, 0);
        for _ in 0..reps {
            let f = sampler.sample(2, &mut rng);
            let set = explore(&f, 1.0, 1, JumpMetric::L1, true).unwrap();
            let exact = phi_a_at_origin_exact(&set).unwrap();
            let exact_norm2: f64 = exact.iter().map(|v| v * v).sum();
            let est = phi_a_norm2_walk_estimate(&set, &kernels, 24, &mut rng);
            diffs.push(est - exact_norm2);
        }
        let (mean, se) = mean_se(&diffs);
        assert!(mean.abs() < 4.0 * se, "bias {mean} vs se {se}");
    }

    #[test]
    fn zero_outer_field_gives_zero_harmonic_value() {
        let g = build_box(8).unwrap();
        let f = constant_field(&g, 2, 0.0);
        let set = explore(&f, 1.0, 1, JumpMetric::L1, true).unwrap();
        let v = phi_a_at_origin_exact(&set).unwrap();
        assert!(v.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn harmonic_value_bounded_by_max_explored_norm() {
        let n = 12;
        let sampler = FieldSampler::box_zero_boundary(n, 0.0).unwrap();
        let mut rng = stream_rng(77, 0);
        let f = sampler.sample(2, &mut rng);
        let set = explore(&f, 1.0, 1, JumpMetric::L1, true).unwrap();
        let exact = phi_a_at_origin_exact(&set).unwrap();
        let exact_norm2: f64 = exact.iter().map(|v| v * v).sum();
        let max_norm2 = (0..set.members.len())
            .map(|i| {
                set.values[i * 2..i * 2 + 2]
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
            })
            .fold(0.0f64, f64::max);
        assert!(exact_norm2 <= 2.0 * max_norm2 + 1e-12);
    }

    #[test]
    fn conditional_expectation_bound_chain() {
        // the stopped exploration's reach probability obeys
        // p ≤ δ / C(ε) with δ the per-component harmonic variance at the
        // origin and C(ε) = G(0,0) − E[G_{Λ\Â}(0,0) | reach]
        let n = 16;
        let sampler = FieldSampler::box_zero_boundary(n, 0.0).unwrap();
        let g = sampler.graph().clone();
        let zs: Vec<usize> = g.boundary().iter().map(|&b| b as usize).collect();
        let kernel = crate::harmonic::green(&g, &zs, 0.0).unwrap();
        let origin = g.site((0, 0)).unwrap();
        let g00 = kernel.value(origin, origin).unwrap();
        let eps = 0.4;
        let target = ((1.0 - eps) * n as f64).floor() as i32;
        let reps = 500u64;
        let mut rng = stream_rng(1234, 0);
        let mut hits = 0u64;
        let mut deltas = Vec::new();
        let mut greens_given_reach = Vec::new();
        for _ in 0..reps {
            let f = sampler.sample(2, &mut rng);
            let set = explore(&f, 1.0, 1, JumpMetric::L1, true).unwrap();
            let v = phi_a_at_origin_exact(&set).unwrap();
            deltas.push(v.iter().map(|x| x * x).sum::<f64>() / 2.0);
            if set.min_linf_radius() <= target {
                hits += 1;
                let extra: Vec<usize> = (0..g.nsites())
                    .filter(|&s| set.contains(s) || g.is_boundary(s))
                    .collect();
                let cond = crate::harmonic::green(&g, &extra, 0.0).unwrap();
                greens_given_reach.push(cond.value(origin, origin).unwrap());
            }
        }
        let (p, p_se) = crate::stats::binomial_estimate(hits, reps);
        let (delta, delta_se) = mean_se(&deltas);
        let (gr, gr_se) = mean_se(&greens_given_reach);
        let c_eps = g00 - gr;
        assert!(c_eps > 0.0, "calibrated C(ε) = {c_eps}");
        let bound = delta / c_eps;
        let slack = 3.0 * (p_se + delta_se / c_eps + bound * gr_se / c_eps);
        assert!(
            p <= bound + slack,
            "reach {p} exceeds the conditional-expectation bound {bound} (C = {c_eps})"
        );
    }

    #[test]
    fn reach_probability_near_one_for_generous_radius() {
        let (p, _) = reach_probability(8, 2, 25.0, 1, 0.5, 60, 5).unwrap();
        assert!(p > 0.99, "p {p}");
    }

    #[test]
    fn exit_set_roundtrip() {
        let sampler = FieldSampler::box_zero_boundary(6, 0.0).unwrap();
        let mut rng = stream_rng(13, 0);
        let f = sampler.sample(2, &mut rng);
        let set = explore(&f, 1.0, 2, JumpMetric::L1, false).unwrap();
        let dir = std::env::temp_dir().join("gfflab_exitset_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("set.rle");
        set.save(&path).unwrap();
        let set2 = ExitSet::load(&path).unwrap();
        assert_eq!(set.in_set, set2.in_set);
        assert_eq!(set.radius, set2.radius);
        // values agree site by site
        for (i2, &m2) in set2.members.iter().enumerate() {
            let i1 = set.members.iter().position(|&m| m == m2).unwrap();
            for c in 0..2 {
                assert_eq!(
                    set.values[i1 * 2 + c].to_bits(),
                    set2.values[i2 * 2 + c].to_bits()
                );
            }
        }
    }

    #[test]
    fn rejects_bad_jump() {
        let g = build_box(3).unwrap();
        let f = constant_field(&g, 1, 0.0);
        assert!(explore(&f, 1.0, 0, JumpMetric::L1, false).is_err());
    }
}
