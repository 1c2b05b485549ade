//! Per-edge positivity refinement of one field component on the metric
//! graph: an edge opens when the component keeps a strict sign along the
//! whole cable, which happens with probability 1 − exp(−2ab) for same-sign
//! endpoint values a, b (unit conductances). Sign clusters, the equator
//! dual-edge set and the discretized-bridge oracle validating the per-edge
//! rule all live here.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::lattice::SiteGraph;
use crate::percolation::UnionFind;
use crate::rngutil::stream_rng;
use crate::spin::{SpinConfig, SpinModel};

/// Open/closed bits for one component's positivity across every edge.
pub struct EdgeRefinement {
    pub graph: Arc<SiteGraph>,
    /// Which component of the originating configuration was refined.
    pub component: usize,
    /// Endpoint values used for the refinement, per site.
    pub values: Vec<f64>,
    /// Open bit per graph edge.
    pub open: Vec<bool>,
    /// Root of the same-sign cluster per site.
    roots: Vec<u32>,
}

/// Refine a scalar per-site component: an edge with endpoint values a, b is
/// closed when ab ≤ 0 and opens with probability 1 − exp(−2ab) otherwise,
/// independently across edges.
pub fn refine_signs(
    graph: &Arc<SiteGraph>,
    values: &[f64],
    component: usize,
    seed: u64,
) -> EdgeRefinement {
    let mut rng = stream_rng(seed, 0xcab1e);
    let edges = graph.edges();
    let mut open = vec![false; edges.len()];
    for (e, &(u, v)) in edges.iter().enumerate() {
        let prod = values[u as usize] * values[v as usize];
        if prod > 0.0 {
            open[e] = rng.random::<f64>() < -(-2.0 * prod).exp_m1();
        }
    }
    let mut uf = UnionFind::new(graph.nsites());
    for (e, &(u, v)) in edges.iter().enumerate() {
        if open[e] {
            uf.union(u, v);
        }
    }
    let roots = (0..graph.nsites() as u32).map(|s| uf.find(s)).collect();
    EdgeRefinement {
        graph: Arc::clone(graph),
        component,
        values: values.to_vec(),
        open,
        roots,
    }
}

/// Cable extension of a spin configuration at inverse temperature β: vertex
/// moduli are √β, so the refined component carries values √β·θ^c. Sites
/// outside the model keep value zero and their edges stay closed.
pub fn cable_on_extension(
    model: &SpinModel,
    config: &SpinConfig,
    beta: f64,
    component: usize,
    seed: u64,
) -> Result<EdgeRefinement> {
    if beta <= 0.0 {
        return Err(Error::InvalidArgument("beta must be positive".into()));
    }
    if component >= config.ncomp {
        return Err(Error::InvalidArgument(format!(
            "component {component} out of range for N={}",
            config.ncomp
        )));
    }
    let mut values = vec![0.0; model.graph.nsites()];
    let sb = beta.sqrt();
    for (i, &gs) in model.sites.iter().enumerate() {
        values[gs as usize] = sb * config.spin(i)[component];
    }
    Ok(refine_signs(&model.graph, &values, component, seed))
}

impl EdgeRefinement {
    /// True when the two sites lie in one strict-sign open cluster. A site
    /// alone is connected to itself when its value is nonzero.
    pub fn same_sign_connected(&self, x: usize, y: usize) -> bool {
        if x == y {
            return self.values[x] != 0.0;
        }
        self.roots[x] == self.roots[y]
    }

    /// Number of open edges.
    pub fn open_count(&self) -> usize {
        self.open.iter().filter(|&&b| b).count()
    }

    /// Sizes of the open clusters (isolated nonzero sites count as size 1).
    pub fn cluster_sizes(&self) -> Vec<u32> {
        let mut sizes = std::collections::HashMap::new();
        for s in 0..self.graph.nsites() {
            if self.values[s] != 0.0 {
                *sizes.entry(self.roots[s]).or_insert(0u32) += 1;
            }
        }
        sizes.into_values().collect()
    }

    /// Bitmap serialization with a small header.
    pub fn save(&self, out: &mut impl Write, seed: u64) -> Result<()> {
        writeln!(
            out,
            "edgemask 1\nedges={} component={} seed={}",
            self.open.len(),
            self.component,
            seed
        )?;
        let mut byte = 0u8;
        let mut used = 0;
        for &b in &self.open {
            byte = (byte << 1) | b as u8;
            used += 1;
            if used == 8 {
                out.write_all(&[byte])?;
                byte = 0;
                used = 0;
            }
        }
        if used > 0 {
            out.write_all(&[byte << (8 - used)])?;
        }
        Ok(())
    }
}

/// Dual-lattice edges crossing the closed primal edges: the equator set of
/// the refined component.
pub struct EquatorDual {
    pub graph: Arc<SiteGraph>,
    /// Per primal edge: true when its dual edge belongs to the set.
    pub dual_edges: Vec<bool>,
}

/// The dual complement of the open set, for a refinement of a third or
/// higher component (the polar projection of an O(N ≥ 3) extension).
pub fn equator_dual(refinement: &EdgeRefinement) -> Result<EquatorDual> {
    if refinement.component < 2 {
        return Err(Error::InvalidArgument(
            "equator set needs the refinement of component N of an O(N ≥ 3) extension".into(),
        ));
    }
    Ok(EquatorDual {
        graph: Arc::clone(&refinement.graph),
        dual_edges: refinement.open.iter().map(|&b| !b).collect(),
    })
}

impl EquatorDual {
    pub fn len(&self) -> usize {
        self.dual_edges.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cluster sizes of the dual subgraph: plaquettes joined by dual edges.
    pub fn cluster_sizes(&self) -> Vec<u32> {
        // plaquette (x, y) is the unit square with lower-left corner (x, y);
        // index plaquettes through the primal site grid where possible
        let g = &self.graph;
        let mut plaq_ids = std::collections::HashMap::new();
        let mut uf = UnionFind::new(2 * g.edges().len());
        let mut next = 0u32;
        let mut id_of =
            |key: (i32, i32), ids: &mut std::collections::HashMap<(i32, i32), u32>| -> u32 {
                *ids.entry(key).or_insert_with(|| {
                    let v = next;
                    next += 1;
                    v
                })
            };
        let mut seen: Vec<(u32, u32)> = Vec::new();
        for (e, &(u, v)) in g.edges().iter().enumerate() {
            if !self.dual_edges[e] {
                continue;
            }
            let (a, b) = (g.coord(u as usize), g.coord(v as usize));
            let (p, q) = if a.1 == b.1 {
                // horizontal primal edge: plaquettes above and below
                let x = a.0.min(b.0);
                ((x, a.1), (x, a.1 - 1))
            } else {
                // vertical primal edge: plaquettes right and left
                let y = a.1.min(b.1);
                ((a.0, y), (a.0 - 1, y))
            };
            let (ip, iq) = (id_of(p, &mut plaq_ids), id_of(q, &mut plaq_ids));
            uf.union(ip, iq);
            seen.push((ip, iq));
        }
        let mut sizes = std::collections::HashMap::new();
        let mut counted = std::collections::HashSet::new();
        for &(ip, iq) in &seen {
            for id in [ip, iq] {
                if counted.insert(id) {
                    *sizes.entry(uf.find(id)).or_insert(0u32) += 1;
                }
            }
        }
        sizes.into_values().collect()
    }
}

/// No-zero probability of the Gaussian bridge over one unit-conductance
/// cable edge, computed independently of the per-edge rule: the edge is cut
/// into `steps` Brownian increments and the surviving density is pushed
/// through the exactly absorbed Gaussian propagator (method of images)
/// on a spatial grid. Checking positivity only at the division points
/// would miss sub-step crossings at rate O(1/√steps), so the absorbed
/// propagator is the right discretization of the hitting computation.
pub fn bridge_hit_probability_discretized(a: f64, b: f64, steps: usize) -> f64 {
    assert!(a > 0.0 && b > 0.0);
    let sigma = 1.0 / (steps as f64).sqrt();
    let hi = a.max(b) + 5.0;
    let h = sigma / 4.0;
    let cells = (hi / h).ceil() as usize;
    let reach = (8.0 * sigma / h).ceil() as usize;
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    // kernel tables on the regular grid: direct part by index offset,
    // image part by index sum
    let km: Vec<f64> = (0..=reach)
        .map(|d| {
            let z = d as f64 * h / sigma;
            norm * (-0.5 * z * z).exp() * h
        })
        .collect();
    let kp: Vec<f64> = (0..=2 * reach)
        .map(|s| {
            let z = (s as f64 + 1.0) * h / sigma;
            norm * (-0.5 * z * z).exp() * h
        })
        .collect();
    let mut f = vec![0.0f64; cells];
    for (i, fi) in f.iter_mut().enumerate() {
        let x = (i as f64 + 0.5) * h;
        let zm = (x - a) / sigma;
        let zp = (x + a) / sigma;
        *fi = norm * ((-0.5 * zm * zm).exp() - (-0.5 * zp * zp).exp());
    }
    let mut next = vec![0.0f64; cells];
    for _ in 1..steps {
        next.iter_mut().for_each(|v| *v = 0.0);
        for (i, &fi) in f.iter().enumerate() {
            if fi < 1e-300 {
                continue;
            }
            let lo = i.saturating_sub(reach);
            let hi_j = (i + reach).min(cells - 1);
            for (j, nj) in next[lo..=hi_j].iter_mut().enumerate() {
                let j = j + lo;
                let mut k = km[i.abs_diff(j)];
                if i + j < kp.len() {
                    k -= kp[i + j];
                }
                *nj += fi * k;
            }
        }
        std::mem::swap(&mut f, &mut next);
    }
    // interpolate the constrained density at b
    let pos = (b / h - 0.5).max(0.0);
    let i0 = (pos.floor() as usize).min(cells - 2);
    let t = pos - i0 as f64;
    let f_at_b = f[i0] * (1.0 - t) + f[i0 + 1] * t;
    // against the free density at the endpoint (total variance one)
    let zfree = b - a;
    let free = (-(0.5) * zfree * zfree).exp() / (2.0 * std::f64::consts::PI).sqrt();
    f_at_b / free
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gff::sample_gff;
    use crate::lattice::build_box;
    use crate::loopsoup::sample_soup;
    use crate::spin::{FkIsing, SpinChain};
    use crate::stats::{binomial_estimate, covariance, covariance_se, mean_se};

    fn ring(g: &Arc<SiteGraph>) -> Vec<usize> {
        g.boundary().iter().map(|&b| b as usize).collect()
    }

    #[test]
    fn trivial_refinement_cases() {
        let g = build_box(2).unwrap();
        let mut values = vec![1.0; g.nsites()];
        values[0] = 0.0;
        values[1] = -1.0;
        let r = refine_signs(&g, &values, 0, 1);
        for (e, &(u, v)) in g.edges().iter().enumerate() {
            if u as usize == 0 || v as usize == 0 || u as usize == 1 || v as usize == 1 {
                assert!(
                    !r.open[e],
                    "edges at a zero or sign-change endpoint stay closed"
                );
            }
        }
        // singleton connectivity follows the sign
        assert!(r.same_sign_connected(2, 2));
        assert!(!r.same_sign_connected(0, 0));
        // all edges closed leaves only singletons
        let neg = refine_signs(&g, &vec![0.0; g.nsites()], 0, 2);
        assert_eq!(neg.open_count(), 0);
        assert!(!neg.same_sign_connected(2, 3));
    }

    #[test]
    fn open_probability_matches_formula() {
        let g = build_box(3).unwrap();
        let values = vec![1.0; g.nsites()];
        let mut open = 0u64;
        let mut total = 0u64;
        for seed in 0..400 {
            let r = refine_signs(&g, &values, 0, seed);
            open += r.open_count() as u64;
            total += r.open.len() as u64;
        }
        let (p, se) = binomial_estimate(open, total);
        let want = 1.0 - (-2.0f64).exp();
        assert!((p - want).abs() < 4.0 * se, "open rate {p} want {want}");
    }

    #[test]
    fn oracle_validates_bridge_rule() {
        let exact = 1.0 - (-2.0f64).exp();
        let disc = bridge_hit_probability_discretized(1.0, 1.0, 1 << 12);
        assert!(
            (disc - exact).abs() < 1e-3,
            "discretized {disc} vs closed form {exact}"
        );
        // asymmetric endpoints
        let exact2 = 1.0 - (-2.0 * 0.7 * 1.8f64).exp();
        let disc2 = bridge_hit_probability_discretized(0.7, 1.8, 1 << 12);
        assert!((disc2 - exact2).abs() < 1e-3, "{disc2} vs {exact2}");
    }

    #[test]
    fn sign_flip_symmetry() {
        let g = build_box(4).unwrap();
        let zs = ring(&g);
        let mut plus = Vec::new();
        let mut minus = Vec::new();
        for seed in 0..600 {
            let f = sample_gff(&g, 1, 0.0, &zs, seed).unwrap();
            let vals = f.plane(0);
            let neg: Vec<f64> = vals.iter().map(|v| -v).collect();
            let rp = refine_signs(&g, &vals, 0, 10_000 + seed);
            let rm = refine_signs(&g, &neg, 0, 20_000 + seed);
            plus.push(rp.cluster_sizes().iter().copied().max().unwrap_or(0) as f64);
            minus.push(rm.cluster_sizes().iter().copied().max().unwrap_or(0) as f64);
        }
        let d = crate::stats::ks_two_sample(&mut plus, &mut minus);
        assert!(d < 0.08, "largest-cluster KS {d}");
    }

    #[test]
    fn rademacher_reconstruction_matches_sign_correlations() {
        // P(x ↔ y through the refinement) equals E[sgn φ(x)·sgn φ(y)]
        let g = build_box(4).unwrap();
        let zs = ring(&g);
        let x = g.site((-1, 0)).unwrap();
        let y = g.site((2, 1)).unwrap();
        let reps = 4000u64;
        let mut connected = 0u64;
        let mut sgn_sum = 0.0;
        for r in 0..reps {
            let f = sample_gff(&g, 1, 0.0, &zs, 3_000 + r).unwrap();
            let vals = f.plane(0);
            let refn = refine_signs(&g, &vals, 0, 50_000 + r);
            if refn.same_sign_connected(x, y) {
                connected += 1;
            }
            sgn_sum += vals[x].signum() * vals[y].signum();
        }
        let (pc, se_c) = binomial_estimate(connected, reps);
        let ms = sgn_sum / reps as f64;
        let se_s = (1.0f64 / reps as f64).sqrt();
        let se = (se_c * se_c + se_s * se_s).sqrt();
        assert!((pc - ms).abs() < 3.0 * se, "cluster {pc} vs sign corr {ms}");
    }

    #[test]
    fn soup_route_agrees_with_field_route() {
        // cable connectivity of {label-1 occupation > 0} computed from the
        // soup (via FK layers on the moduli) against the field refinement
        let g = build_box(3).unwrap();
        let zs = ring(&g);
        let x = g.site((0, 0)).unwrap();
        let y = g.site((1, 1)).unwrap();
        let reps = 2500u64;
        let mut field_conn = 0u64;
        let mut soup_conn = 0u64;
        for r in 0..reps {
            let f = sample_gff(&g, 1, 0.0, &zs, 7_000 + r).unwrap();
            let refn = refine_signs(&g, &f.plane(0), 0, 60_000 + r);
            if refn.same_sign_connected(x, y) {
                field_conn += 1;
            }
            // soup side: moduli are √L¹, clusters are FK(q=2) at couplings
            // r_u·r_v; equilibrate a small Swendsen-Wang chain
            let soup = sample_soup(&g, &zs, 2, 0.0, 80_000 + r).unwrap();
            let lt = soup.local_time(0.0).unwrap();
            let moduli: Vec<f64> = (0..g.nsites()).map(|s| lt.label(s, 0).sqrt()).collect();
            let mask: Vec<bool> = (0..g.nsites()).map(|s| !g.is_boundary(s)).collect();
            let per_edge: Vec<f64> = g
                .edges()
                .iter()
                .map(|&(u, v)| moduli[u as usize] * moduli[v as usize])
                .collect();
            let model = Arc::new(SpinModel::with_conductances(&g, &mask, 1, &per_edge).unwrap());
            let mut fk = FkIsing::new(Arc::clone(&model), 90_000 + r);
            for _ in 0..30 {
                fk.sweep();
            }
            // one more bond layer read out through a union-find
            let mut uf = UnionFind::new(model.nsites());
            let mut rng = stream_rng(95_000 + r, 0);
            for (e, &(u, v)) in model.edges.iter().enumerate() {
                if fk.spins[u as usize] == fk.spins[v as usize] {
                    let p = -(-2.0 * model.conductance[e]).exp_m1();
                    if rng.random::<f64>() < p {
                        uf.union(u, v);
                    }
                }
            }
            let (ix, iy) = (model.site_index[x] as u32, model.site_index[y] as u32);
            if uf.find(ix) == uf.find(iy) {
                soup_conn += 1;
            }
        }
        let (pa, sa) = binomial_estimate(field_conn, reps);
        let (pb, sb) = binomial_estimate(soup_conn, reps);
        let se = (sa * sa + sb * sb).sqrt();
        assert!((pa - pb).abs() < 3.0 * se, "field {pa} vs soup {pb}");
    }

    #[test]
    fn label_resampling_is_positively_associated() {
        // fixed soup, labels resampled: increasing functions of the label-1
        // occupation are non-negatively correlated
        let g = build_box(3).unwrap();
        let zs = ring(&g);
        let soup = sample_soup(&g, &zs, 2, 0.0, 4242).unwrap();
        let x = g.site((0, 0)).unwrap();
        let y = g.site((1, 0)).unwrap();
        let mut rng = stream_rng(777, 0);
        let mut fx = Vec::new();
        let mut fy = Vec::new();
        // label resampling: each loop flips its label uniformly; the
        // occupation of label 1 is an increasing function of the marks
        let lt_full = soup.local_time(0.0).unwrap();
        let per_loop: Vec<(f64, f64)> = soup
            .loops
            .iter()
            .map(|lp| {
                let mut ax = 0.0;
                let mut ay = 0.0;
                for (&v, &e) in lp.visits.iter().zip(lp.holdings()) {
                    let v = v as usize;
                    let scale = 2.0 / g.degree(v) as f64;
                    if v == x {
                        ax += e * scale;
                    }
                    if v == y {
                        ay += e * scale;
                    }
                }
                (ax, ay)
            })
            .collect();
        let base_x = lt_full.label(x, 0) + lt_full.label(x, 1);
        let base_y = lt_full.label(y, 0) + lt_full.label(y, 1);
        let trivial_x = base_x - per_loop.iter().map(|p| p.0).sum::<f64>();
        let trivial_y = base_y - per_loop.iter().map(|p| p.1).sum::<f64>();
        for _ in 0..4000 {
            let mut lx = trivial_x / 2.0;
            let mut ly = trivial_y / 2.0;
            for &(ax, ay) in &per_loop {
                if rng.random::<f64>() < 0.5 {
                    lx += ax;
                    ly += ay;
                }
            }
            fx.push(lx);
            fy.push(ly);
        }
        let cov = covariance(&fx, &fy);
        let se = covariance_se(&fx, &fy);
        assert!(cov >= -3.0 * se, "cov {cov} se {se}");
    }

    #[test]
    fn extension_refinement_and_beta_monotonicity() {
        let g = build_box(3).unwrap();
        let model = Arc::new(SpinModel::uniform(&g, 2, 1.0).unwrap());
        let mut chain = SpinChain::new(Arc::clone(&model), 5);
        for _ in 0..40 {
            chain.mixed_step();
        }
        // any edge with opposite first-component signs is closed
        let r = cable_on_extension(&model, &chain.config, 1.0, 0, 9).unwrap();
        for (e, &(u, v)) in g.edges().iter().enumerate() {
            if r.values[u as usize] * r.values[v as usize] <= 0.0 {
                assert!(!r.open[e]);
            }
        }
        // aligned spins: open fraction grows with β toward one
        let aligned = SpinConfig {
            ncomp: 2,
            data: model.sites.iter().flat_map(|_| [1.0, 0.0]).collect(),
        };
        let mut fractions = Vec::new();
        for beta in [0.25, 1.0, 4.0] {
            let mut open = 0u64;
            let mut total = 0u64;
            for seed in 0..200 {
                let r = cable_on_extension(&model, &aligned, beta, 0, 100 + seed).unwrap();
                // count only edges between model sites
                for (e, &(u, v)) in g.edges().iter().enumerate() {
                    if r.values[u as usize] != 0.0 && r.values[v as usize] != 0.0 {
                        total += 1;
                        open += r.open[e] as u64;
                    }
                }
            }
            fractions.push(open as f64 / total as f64);
        }
        assert!(fractions[0] < fractions[1] && fractions[1] < fractions[2]);
        let want = 1.0 - (-2.0f64 * 4.0).exp();
        assert!((fractions[2] - want).abs() < 0.01);
    }

    #[test]
    fn equator_trivia() {
        let g = build_box(2).unwrap();
        let n = g.nsites();
        let r_open = EdgeRefinement {
            graph: Arc::clone(&g),
            component: 2,
            values: vec![1.0; n],
            open: vec![true; g.edges().len()],
            roots: (0..n as u32).collect(),
        };
        let e = equator_dual(&r_open).unwrap();
        assert!(e.is_empty());
        let r_closed = EdgeRefinement {
            graph: Arc::clone(&g),
            component: 2,
            values: vec![1.0; n],
            open: vec![false; g.edges().len()],
            roots: (0..n as u32).collect(),
        };
        let e2 = equator_dual(&r_closed).unwrap();
        assert_eq!(e2.len(), g.edges().len());
        // open edges and dual edges partition the crossings exactly
        for (o, d) in r_closed.open.iter().zip(&e2.dual_edges) {
            assert!(o ^ d);
        }
        // a first-component refinement has no equator
        let r_bad = EdgeRefinement {
            graph: Arc::clone(&g),
            component: 0,
            values: vec![1.0; n],
            open: vec![true; g.edges().len()],
            roots: (0..n as u32).collect(),
        };
        assert!(equator_dual(&r_bad).is_err());
    }

    #[test]
    fn sandwich_holds_on_a_small_box() {
        // E[θ(x)·θ(y)] between P/N and N·P with statistical slack
        let g = build_box(3).unwrap();
        let model = Arc::new(SpinModel::uniform(&g, 2, 1.0).unwrap());
        let x = g.site((0, 0)).unwrap();
        let y = g.site((1, 0)).unwrap();
        let (ix, iy) = (model.site_index[x] as usize, model.site_index[y] as usize);
        let reps = 2000u64;
        let mut dots = Vec::new();
        let mut conn = 0u64;
        for r in 0..reps {
            let mut chain = SpinChain::new(Arc::clone(&model), 1_000 + r);
            for _ in 0..50 {
                chain.mixed_step();
            }
            dots.push(chain.config.dot(ix, iy));
            let refn = cable_on_extension(&model, &chain.config, 1.0, 0, 2_000 + r).unwrap();
            if refn.same_sign_connected(x, y) {
                conn += 1;
            }
        }
        let (m, se_m) = mean_se(&dots);
        let (p, se_p) = binomial_estimate(conn, reps);
        let n = 2.0;
        assert!(
            m >= p / n - 3.0 * (se_m + se_p / n),
            "lower bound fails: E {m} P {p}"
        );
        assert!(
            m <= n * p + 3.0 * (se_m + n * se_p),
            "upper bound fails: E {m} P {p}"
        );
    }
}
