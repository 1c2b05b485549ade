//! Spin O(N) Monte Carlo in arbitrary nonnegative conductances: heat-bath
//! and reflection-cluster updates, projections between O(N) levels, global
//! rooting rotations, gradient observables and FK representation of the
//! Ising layer.
//!
//! Chains run on a [`SpinModel`], an induced subgraph with per-edge
//! couplings, so the same machinery drives full boxes, tori and the sparse
//! masked graphs. Heat-bath draws the exact von Mises-Fisher full
//! conditional (N ≤ 3); the reflection update is valid for every N and both
//! are mixed for low-temperature runs.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gff::VectorField;
use crate::lattice::SiteGraph;
use crate::percolation::UnionFind;
use crate::rngutil::stream_rng;

/// Induced subgraph with per-edge conductances, the arena for spin chains.
pub struct SpinModel {
    pub graph: Arc<SiteGraph>,
    pub ncomp: usize,
    /// model site -> graph site
    pub sites: Vec<u32>,
    /// graph site -> model site or -1
    pub site_index: Vec<i32>,
    pub edges: Vec<(u32, u32)>,
    pub conductance: Vec<f64>,
    adj_start: Vec<u32>,
    adj_site: Vec<u32>,
    adj_c: Vec<f64>,
}

impl SpinModel {
    /// All sites of the graph, every edge at coupling β.
    pub fn uniform(graph: &Arc<SiteGraph>, ncomp: usize, beta: f64) -> Result<SpinModel> {
        let mask = vec![true; graph.nsites()];
        SpinModel::masked(graph, &mask, ncomp, beta)
    }

    /// Induced subgraph on a site mask, every surviving edge at coupling β.
    pub fn masked(
        graph: &Arc<SiteGraph>,
        mask: &[bool],
        ncomp: usize,
        beta: f64,
    ) -> Result<SpinModel> {
        let c: Vec<f64> = graph.edges().iter().map(|_| beta).collect();
        SpinModel::with_conductances(graph, mask, ncomp, &c)
    }

    /// Per-graph-edge conductances restricted to a site mask. Zero edges
    /// are dropped.
    pub fn with_conductances(
        graph: &Arc<SiteGraph>,
        mask: &[bool],
        ncomp: usize,
        per_edge: &[f64],
    ) -> Result<SpinModel> {
        if per_edge.len() != graph.edges().len() {
            return Err(Error::InvalidArgument(
                "conductance list does not match the edge list".into(),
            ));
        }
        if per_edge.iter().any(|&c| c < 0.0 || !c.is_finite()) {
            return Err(Error::InvalidArgument(
                "conductances must be finite and nonnegative".into(),
            ));
        }
        if ncomp == 0 {
            return Err(Error::InvalidArgument("need at least one component".into()));
        }
        let mut site_index = vec![-1i32; graph.nsites()];
        let mut sites = Vec::new();
        for s in 0..graph.nsites() {
            if mask[s] {
                site_index[s] = sites.len() as i32;
                sites.push(s as u32);
            }
        }
        let mut edges = Vec::new();
        let mut conductance = Vec::new();
        let mut deg = vec![0u32; sites.len()];
        for (e, &(u, v)) in graph.edges().iter().enumerate() {
            let (iu, iv) = (site_index[u as usize], site_index[v as usize]);
            if iu < 0 || iv < 0 || per_edge[e] == 0.0 {
                continue;
            }
            edges.push((iu as u32, iv as u32));
            conductance.push(per_edge[e]);
            deg[iu as usize] += 1;
            deg[iv as usize] += 1;
        }
        let mut adj_start = vec![0u32; sites.len() + 1];
        for i in 0..sites.len() {
            adj_start[i + 1] = adj_start[i] + deg[i];
        }
        let mut cursor = adj_start.clone();
        let mut adj_site = vec![0u32; adj_start[sites.len()] as usize];
        let mut adj_c = vec![0.0f64; adj_site.len()];
        for (e, &(u, v)) in edges.iter().enumerate() {
            adj_site[cursor[u as usize] as usize] = v;
            adj_c[cursor[u as usize] as usize] = conductance[e];
            cursor[u as usize] += 1;
            adj_site[cursor[v as usize] as usize] = u;
            adj_c[cursor[v as usize] as usize] = conductance[e];
            cursor[v as usize] += 1;
        }
        Ok(SpinModel {
            graph: Arc::clone(graph),
            ncomp,
            sites,
            site_index,
            edges,
            conductance,
            adj_start,
            adj_site,
            adj_c,
        })
    }

    pub fn nsites(&self) -> usize {
        self.sites.len()
    }

    fn neighbors(&self, i: usize) -> impl Iterator<Item = (u32, f64)> + '_ {
        let (a, b) = (self.adj_start[i] as usize, self.adj_start[i + 1] as usize);
        self.adj_site[a..b]
            .iter()
            .copied()
            .zip(self.adj_c[a..b].iter().copied())
    }
}

/// Unit-vector configuration on a model, stored site-major.
pub struct SpinConfig {
    pub ncomp: usize,
    pub data: Vec<f64>,
}

impl SpinConfig {
    pub fn random(model: &SpinModel, rng: &mut impl Rng) -> SpinConfig {
        let mut data = vec![0.0; model.nsites() * model.ncomp];
        for i in 0..model.nsites() {
            sample_unit_sphere(&mut data[i * model.ncomp..(i + 1) * model.ncomp], rng);
        }
        SpinConfig {
            ncomp: model.ncomp,
            data,
        }
    }

    #[inline]
    pub fn spin(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncomp..(i + 1) * self.ncomp]
    }

    #[inline]
    pub fn spin_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.ncomp..(i + 1) * self.ncomp]
    }

    pub fn dot(&self, a: usize, b: usize) -> f64 {
        self.spin(a)
            .iter()
            .zip(self.spin(b))
            .map(|(x, y)| x * y)
            .sum()
    }

    /// Gradient vector norm across an edge.
    pub fn gradient_norm(&self, a: usize, b: usize) -> f64 {
        self.spin(a)
            .iter()
            .zip(self.spin(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    /// Apply an orthogonal matrix (row-major ncomp×ncomp) to every spin.
    pub fn rotate(&mut self, r: &[f64]) {
        let n = self.ncomp;
        let mut tmp = vec![0.0; n];
        for i in 0..self.data.len() / n {
            let s = &self.data[i * n..(i + 1) * n];
            for (a, t) in tmp.iter_mut().enumerate() {
                *t = (0..n).map(|b| r[a * n + b] * s[b]).sum();
            }
            self.data[i * n..(i + 1) * n].copy_from_slice(&tmp);
        }
    }

    /// Snapshot view on the model's graph; off-model sites stay zero.
    /// Rides the field serializer, so spin states round-trip bit-exactly.
    pub fn to_field(&self, model: &SpinModel) -> VectorField {
        let mut field = VectorField::zeros(&model.graph, self.ncomp);
        for (i, &gs) in model.sites.iter().enumerate() {
            field.value_mut(gs as usize).copy_from_slice(self.spin(i));
        }
        field
    }

    /// Rebuild a configuration from a snapshot restricted to the model.
    pub fn from_field(model: &SpinModel, field: &VectorField) -> Result<SpinConfig> {
        if field.ncomp != model.ncomp {
            return Err(Error::InvalidArgument(format!(
                "snapshot has {} components, model wants {}",
                field.ncomp, model.ncomp
            )));
        }
        let mut data = vec![0.0; model.nsites() * model.ncomp];
        for (i, &gs) in model.sites.iter().enumerate() {
            data[i * model.ncomp..(i + 1) * model.ncomp]
                .copy_from_slice(field.value(gs as usize));
        }
        Ok(SpinConfig {
            ncomp: model.ncomp,
            data,
        })
    }
}

fn sample_unit_sphere(out: &mut [f64], rng: &mut impl Rng) {
    loop {
        let mut norm2 = 0.0;
        for v in out.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v = z;
            norm2 += z * z;
        }
        if norm2 > 1e-12 {
            let inv = 1.0 / norm2.sqrt();
            for v in out.iter_mut() {
                *v *= inv;
            }
            return;
        }
    }
}

/// Angle from the mean direction for a von Mises density ∝ exp(κ·cos θ).
fn sample_von_mises(kappa: f64, rng: &mut impl Rng) -> f64 {
    if kappa < 1e-10 {
        return std::f64::consts::PI * (2.0 * rng.random::<f64>() - 1.0);
    }
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1 = rng.random::<f64>();
        let z = (std::f64::consts::PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        let u2 = rng.random::<f64>();
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let angle = f.clamp(-1.0, 1.0).acos();
            return if rng.random::<f64>() < 0.5 {
                -angle
            } else {
                angle
            };
        }
    }
}

/// Cosine of the polar angle for a 3D von Mises-Fisher density.
fn sample_vmf3_cos(kappa: f64, rng: &mut impl Rng) -> f64 {
    if kappa < 1e-10 {
        return 2.0 * rng.random::<f64>() - 1.0;
    }
    let u: f64 = rng.random::<f64>();
    // inverse CDF of w ∝ exp(κ w) on [-1, 1], stable for large κ
    let w = 1.0 + (u + (1.0 - u) * (-2.0 * kappa).exp()).ln() / kappa;
    w.clamp(-1.0, 1.0)
}

/// Markov chain over spin configurations with the Boltzmann stationary law
/// exp(Σ_e C_e θ(u)·θ(v)).
pub struct SpinChain {
    pub model: Arc<SpinModel>,
    pub config: SpinConfig,
    rng: ChaCha8Rng,
}

impl SpinChain {
    pub fn new(model: Arc<SpinModel>, seed: u64) -> SpinChain {
        let mut rng = stream_rng(seed, 0x5917);
        let config = SpinConfig::random(&model, &mut rng);
        SpinChain { model, config, rng }
    }

    /// Full sweep of exact von Mises-Fisher single-site updates (N ≤ 3).
    pub fn heatbath_sweep(&mut self) -> Result<()> {
        let n = self.model.ncomp;
        if n > 3 {
            return Err(Error::InvalidArgument(
                "heat bath implemented for N ≤ 3; the reflection update covers larger N".into(),
            ));
        }
        let mut h = vec![0.0; n];
        for i in 0..self.model.nsites() {
            h.fill(0.0);
            for (nb, c) in self.model.neighbors(i) {
                let s = self.config.spin(nb as usize);
                for (a, hv) in h.iter_mut().enumerate() {
                    *hv += c * s[a];
                }
            }
            let kappa = h.iter().map(|v| v * v).sum::<f64>().sqrt();
            match n {
                1 => {
                    let p_plus = 1.0 / (1.0 + (-2.0 * h[0]).exp());
                    self.config.spin_mut(i)[0] = if self.rng.random::<f64>() < p_plus {
                        1.0
                    } else {
                        -1.0
                    };
                }
                2 => {
                    let mean = h[1].atan2(h[0]);
                    let angle = mean + sample_von_mises(kappa, &mut self.rng);
                    let s = self.config.spin_mut(i);
                    s[0] = angle.cos();
                    s[1] = angle.sin();
                }
                _ => {
                    let w = sample_vmf3_cos(kappa, &mut self.rng);
                    let s_perp = (1.0 - w * w).max(0.0).sqrt();
                    let phi = 2.0 * std::f64::consts::PI * self.rng.random::<f64>();
                    // orthonormal frame around the mean direction
                    let mean = if kappa > 0.0 {
                        [h[0] / kappa, h[1] / kappa, h[2] / kappa]
                    } else {
                        [0.0, 0.0, 1.0]
                    };
                    let pick = if mean[0].abs() < 0.9 {
                        [1.0, 0.0, 0.0]
                    } else {
                        [0.0, 1.0, 0.0]
                    };
                    let mut e1 = cross(&pick, &mean);
                    let inv = 1.0 / e1.iter().map(|v| v * v).sum::<f64>().sqrt();
                    e1.iter_mut().for_each(|v| *v *= inv);
                    let e2 = cross(&mean, &e1);
                    let s = self.config.spin_mut(i);
                    for a in 0..3 {
                        s[a] = w * mean[a] + s_perp * (phi.cos() * e1[a] + phi.sin() * e2[a]);
                    }
                }
            }
        }
        Ok(())
    }

    /// One reflection-cluster update: activation probability across an edge
    /// is 1 − exp(−2 C (r·θ_u)(r·θ_v)) when the projections share a sign.
    pub fn wolff_step(&mut self) -> usize {
        let n = self.model.ncomp;
        let mut axis = vec![0.0; n];
        sample_unit_sphere(&mut axis, &mut self.rng);
        let proj: Vec<f64> = (0..self.model.nsites())
            .map(|i| {
                self.config
                    .spin(i)
                    .iter()
                    .zip(&axis)
                    .map(|(s, r)| s * r)
                    .sum()
            })
            .collect();
        let seed_site = self.rng.random_range(0..self.model.nsites());
        let mut in_cluster = vec![false; self.model.nsites()];
        let mut stack = vec![seed_site];
        in_cluster[seed_site] = true;
        let mut size = 0;
        while let Some(x) = stack.pop() {
            size += 1;
            for (nb, c) in self.model.neighbors(x) {
                let nb = nb as usize;
                if in_cluster[nb] {
                    continue;
                }
                let w = proj[x] * proj[nb];
                if w <= 0.0 {
                    continue;
                }
                if self.rng.random::<f64>() < -(-2.0 * c * w).exp_m1() {
                    in_cluster[nb] = true;
                    stack.push(nb);
                }
            }
        }
        for (i, &inside) in in_cluster.iter().enumerate() {
            if inside {
                let p = proj[i];
                let s = self.config.spin_mut(i);
                for (a, r) in axis.iter().enumerate() {
                    s[a] -= 2.0 * p * r;
                }
            }
        }
        size
    }

    /// Reflection step plus a heat-bath sweep when available.
    pub fn mixed_step(&mut self) {
        self.wolff_step();
        if self.model.ncomp <= 3 {
            self.heatbath_sweep().expect("ncomp checked");
        }
    }
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Angles and conductances of a nonvanishing vector field: θ = φ/‖φ‖ on the
/// non-boundary sites, C_e = ‖φ(u)‖·‖φ(v)‖ per surviving edge.
pub fn angles_of_field(field: &VectorField) -> Result<(SpinModel, SpinConfig)> {
    let graph = &field.graph;
    let mask: Vec<bool> = (0..graph.nsites()).map(|s| !graph.is_boundary(s)).collect();
    for s in 0..graph.nsites() {
        if mask[s] && field.norm2(s) == 0.0 {
            let c = graph.coord(s);
            return Err(Error::DegenerateSpin(c.0, c.1));
        }
    }
    let per_edge: Vec<f64> = graph
        .edges()
        .iter()
        .map(|&(u, v)| field.norm(u as usize) * field.norm(v as usize))
        .collect();
    let model = SpinModel::with_conductances(graph, &mask, field.ncomp, &per_edge)?;
    let mut data = vec![0.0; model.nsites() * field.ncomp];
    for (i, &gs) in model.sites.iter().enumerate() {
        let gs = gs as usize;
        let inv = 1.0 / field.norm(gs);
        for c in 0..field.ncomp {
            data[i * field.ncomp + c] = field.comp(gs, c) * inv;
        }
    }
    Ok((
        model,
        SpinConfig {
            ncomp: field.ncomp,
            data,
        },
    ))
}

/// Project an O(N) configuration at inverse temperature β down one level:
/// spins renormalized in the first N−1 components, conductances
/// β·√(1−θ^N(u)²)·√(1−θ^N(v)²).
pub fn project_down(
    model: &SpinModel,
    config: &SpinConfig,
    beta: f64,
) -> Result<(SpinModel, SpinConfig)> {
    let n = model.ncomp;
    if n < 2 {
        return Err(Error::InvalidArgument("projection needs N ≥ 2".into()));
    }
    let transverse: Vec<f64> = (0..model.nsites())
        .map(|i| {
            let last = config.spin(i)[n - 1];
            (1.0 - last * last).max(0.0).sqrt()
        })
        .collect();
    for (i, &t) in transverse.iter().enumerate() {
        if t == 0.0 {
            let c = model.graph.coord(model.sites[i] as usize);
            return Err(Error::DegenerateSpin(c.0, c.1));
        }
    }
    // conductances live on the model's surviving edges, mapped back to the
    // full graph edge list for reconstruction
    let mut per_edge = vec![0.0; model.graph.edges().len()];
    for (e, &(u, v)) in model.graph.edges().iter().enumerate() {
        let (iu, iv) = (model.site_index[u as usize], model.site_index[v as usize]);
        if iu < 0 || iv < 0 {
            continue;
        }
        per_edge[e] = beta * transverse[iu as usize] * transverse[iv as usize];
    }
    let mask: Vec<bool> = (0..model.graph.nsites())
        .map(|s| model.site_index[s] >= 0)
        .collect();
    let lower = SpinModel::with_conductances(&model.graph, &mask, n - 1, &per_edge)?;
    let mut data = vec![0.0; lower.nsites() * (n - 1)];
    for (i, &gs) in lower.sites.iter().enumerate() {
        let orig = model.site_index[gs as usize] as usize;
        let inv = 1.0 / transverse[orig];
        for c in 0..n - 1 {
            data[i * (n - 1) + c] = config.spin(orig)[c] * inv;
        }
    }
    Ok((lower, SpinConfig { ncomp: n - 1, data }))
}

/// Orthogonal matrix rooting the spin at `site` to the north pole, by a 2D
/// rotation for N = 2 and the axis-angle rotation for N = 3.
pub fn north_rooting_matrix(config: &SpinConfig, site: usize) -> Result<Vec<f64>> {
    let n = config.ncomp;
    let s = config.spin(site);
    match n {
        2 => {
            // rotate so the spin lands on (0, 1)
            let (c, d) = (s[1], s[0]);
            if c <= -1.0 + 1e-14 {
                return Err(Error::DegenerateSpin(0, 0));
            }
            Ok(vec![c, -d, d, c])
        }
        3 => {
            let (u1, u2, u3) = (s[0], s[1], s[2]);
            if u3 <= -1.0 + 1e-14 {
                return Err(Error::DegenerateSpin(0, 0));
            }
            let q = [0.0, 0.0, -u1, 0.0, 0.0, -u2, u1, u2, 0.0];
            let mut q2 = [0.0; 9];
            for a in 0..3 {
                for b in 0..3 {
                    q2[a * 3 + b] = (0..3).map(|k| q[a * 3 + k] * q[k * 3 + b]).sum();
                }
            }
            let denom = 1.0 + u3;
            let mut r = vec![0.0; 9];
            for a in 0..3 {
                for b in 0..3 {
                    r[a * 3 + b] =
                        if a == b { 1.0 } else { 0.0 } + q[a * 3 + b] + q2[a * 3 + b] / denom;
                }
            }
            Ok(r)
        }
        _ => Err(Error::InvalidArgument(
            "north rooting implemented for N ∈ {2, 3}".into(),
        )),
    }
}

/// Rotate the whole configuration so the spin at `site` points north.
pub fn north_root(config: &mut SpinConfig, site: usize) -> Result<()> {
    let r = north_rooting_matrix(config, site)?;
    config.rotate(&r);
    Ok(())
}

/// Exact two-spin correlation E[θ(x)·θ(y)] for a single edge of conductance
/// c, by adaptive-resolution quadrature of the polar-angle integral.
pub fn two_spin_correlation_quadrature(c: f64, ncomp: usize) -> f64 {
    assert!(ncomp >= 2);
    // E = ∫₀^π cosθ e^{c cosθ} sin^{N−2}θ dθ / ∫₀^π e^{c cosθ} sin^{N−2}θ dθ
    let f = |theta: f64| {
        let s = theta.sin();
        (c * theta.cos()).exp() * s.powi(ncomp as i32 - 2)
    };
    let g = |theta: f64| theta.cos() * f(theta);
    let mut prev = f64::NAN;
    let mut steps = 1 << 10;
    loop {
        let (mut num, mut den) = (0.0, 0.0);
        let h = std::f64::consts::PI / steps as f64;
        for i in 0..steps {
            // Simpson on each panel
            let a = i as f64 * h;
            let m = a + h / 2.0;
            let b = a + h;
            num += h / 6.0 * (g(a) + 4.0 * g(m) + g(b));
            den += h / 6.0 * (f(a) + 4.0 * f(m) + f(b));
        }
        let val = num / den;
        if (val - prev).abs() < 1e-12 || steps >= (1 << 16) {
            return val;
        }
        prev = val;
        steps *= 2;
    }
}

/// Edge percolation intensity dominated by the FK layer at q = 2:
/// (1 − e^{−2β}) / (1 + e^{−2β}).
pub fn fk_domination_p(beta_ising: f64) -> f64 {
    let e = (-2.0 * beta_ising).exp();
    (1.0 - e) / (1.0 + e)
}

/// Swendsen-Wang chain for the Ising model on an induced subgraph with
/// per-edge couplings; the bond layer is the FK configuration.
pub struct FkIsing {
    pub model: Arc<SpinModel>,
    pub spins: Vec<i8>,
    rng: ChaCha8Rng,
}

/// Statistics of one FK bond layer.
pub struct FkStats {
    pub largest_cluster: u32,
    pub cluster_count: usize,
    pub open_bonds: usize,
}

impl FkIsing {
    /// `model.ncomp` is ignored; couplings come from the model edges.
    pub fn new(model: Arc<SpinModel>, seed: u64) -> FkIsing {
        let mut rng = stream_rng(seed, 0xf15e);
        let spins = (0..model.nsites())
            .map(|_| if rng.random::<f64>() < 0.5 { 1 } else { -1 })
            .collect();
        FkIsing { model, spins, rng }
    }

    /// One Swendsen-Wang sweep; returns the FK statistics of the bond layer
    /// that drove the flip.
    pub fn sweep(&mut self) -> FkStats {
        let n = self.model.nsites();
        let mut uf = UnionFind::new(n);
        let mut open_bonds = 0usize;
        for (e, &(u, v)) in self.model.edges.iter().enumerate() {
            if self.spins[u as usize] != self.spins[v as usize] {
                continue;
            }
            let p = -(-2.0 * self.model.conductance[e]).exp_m1();
            if self.rng.random::<f64>() < p {
                uf.union(u, v);
                open_bonds += 1;
            }
        }
        // flip each cluster with probability 1/2
        let mut flip = vec![0u8; n]; // 0 unknown, 1 keep, 2 flip
        let mut sizes = std::collections::HashMap::new();
        for i in 0..n {
            let root = uf.find(i as u32);
            *sizes.entry(root).or_insert(0u32) += 1;
            let f = &mut flip[root as usize];
            if *f == 0 {
                *f = if self.rng.random::<f64>() < 0.5 { 1 } else { 2 };
            }
            if flip[root as usize] == 2 {
                self.spins[i] = -self.spins[i];
            }
        }
        FkStats {
            largest_cluster: sizes.values().copied().max().unwrap_or(0),
            cluster_count: sizes.len(),
            open_bonds,
        }
    }
}
