//! Labeled random-walk loop soups at intensity 1/2 per label, their local
//! times, and the monotone coupling across masses by per-loop thinning.
//!
//! The sampler implements the vertex-ordering decomposition: for each
//! vertex in a fixed order it draws a Poisson number of loops whose minimal
//! vertex is that one, each loop built from a logarithmic-series number of
//! return excursions of the walk killed on the zero set, the mass and the
//! earlier vertices. Return probabilities are solved exactly up front, one
//! small linear system per vertex, which bounds the sampler to modest
//! graphs; large-window mask constructions use direct field sampling
//! through the squared-field identity instead.
//!
//! Continuous-time holding is normalized so that the occupation field of
//! the full ensemble matches the squared field componentwise: each visit to
//! a site holds Exp(1)·2/(deg + m²), and every (site, label) additionally
//! carries a Gamma(1/2, 2/(deg + m²)) point-loop mass.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, Poisson};

use crate::error::{Error, Result};
use crate::harmonic::DirichletSystem;
use crate::lattice::SiteGraph;
use crate::rngutil::stream_rng;

const ORDERED_SAMPLER_LIMIT: usize = 4000;

/// One rooted lattice loop: the cyclic visit sequence of its jump chain.
pub struct SoupLoop {
    pub label: u16,
    /// Sites in visit order; consecutive sites (cyclically) are adjacent.
    pub visits: Vec<u32>,
    /// Normalized Exp(1) holding variables, one per visit.
    holdings: Vec<f64>,
    /// Shared uniform mark driving the coupled thinning across masses.
    retain_u: f64,
}

impl SoupLoop {
    pub fn len(&self) -> usize {
        self.visits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visits.is_empty()
    }

    /// Normalized holding variables, one per visit.
    pub fn holdings(&self) -> &[f64] {
        &self.holdings
    }
}

/// Poissonian collection of labeled loops plus the point-loop field.
pub struct LoopSoup {
    pub graph: Arc<SiteGraph>,
    pub nlabels: usize,
    /// Mass at which the ensemble is exact; thinning targets must be >= this.
    pub base_mass: f64,
    pub loops: Vec<SoupLoop>,
    /// Gamma(1/2, 1) variables per (site, label), scaled on evaluation.
    trivial: Vec<f64>,
}

/// Per-site per-label occupation field.
pub struct LocalTimeField {
    pub graph: Arc<SiteGraph>,
    pub nlabels: usize,
    data: Vec<f64>,
}

impl LocalTimeField {
    fn zeros(graph: &Arc<SiteGraph>, nlabels: usize) -> LocalTimeField {
        LocalTimeField {
            graph: Arc::clone(graph),
            nlabels,
            data: vec![0.0; graph.nsites() * nlabels],
        }
    }

    #[inline]
    pub fn label(&self, site: usize, l: usize) -> f64 {
        self.data[site * self.nlabels + l]
    }

    /// Total occupation over labels.
    #[inline]
    pub fn total(&self, site: usize) -> f64 {
        let s = site * self.nlabels;
        self.data[s..s + self.nlabels].iter().sum()
    }

    /// Additivity under superposition of independent ensembles.
    pub fn add(&mut self, other: &LocalTimeField) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// CSV rows `x,y,label,local_time`.
    pub fn dump_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "x,y,label,local_time")?;
        for s in 0..self.graph.nsites() {
            let c = self.graph.coord(s);
            for l in 0..self.nlabels {
                writeln!(out, "{},{},{},{:.17e}", c.0, c.1, l, self.label(s, l))?;
            }
        }
        Ok(())
    }
}

/// Reusable vertex-ordering sampler: return probabilities are solved
/// exactly once per (graph, zero set, mass).
pub struct SoupSampler {
    graph: Arc<SiteGraph>,
    nlabels: usize,
    mass: f64,
    mass2: f64,
    /// rank in the vertex order, u32::MAX for zero-set sites
    rank: Vec<u32>,
    order: Vec<u32>,
    /// per ordered vertex: return probability and ln 1/(1-r)
    ret_prob: Vec<f64>,
    log_terms: Vec<f64>,
}

impl SoupSampler {
    pub fn new(
        graph: &Arc<SiteGraph>,
        zeroset: &[usize],
        nlabels: usize,
        mass: f64,
    ) -> Result<SoupSampler> {
        if nlabels == 0 {
            return Err(Error::InvalidArgument("need at least one label".into()));
        }
        if zeroset.is_empty() && mass == 0.0 {
            return Err(Error::SingularSystem(
                "loop soup needs a nonempty zero set or positive mass".into(),
            ));
        }
        let mut zero = vec![false; graph.nsites()];
        for &z in zeroset {
            zero[z] = true;
        }
        let order: Vec<u32> = (0..graph.nsites() as u32)
            .filter(|&i| !zero[i as usize])
            .collect();
        if order.len() > ORDERED_SAMPLER_LIMIT {
            return Err(Error::InvalidArgument(format!(
                "vertex-ordering sampler limited to {ORDERED_SAMPLER_LIMIT} sites, got {}; \
                 use the loop-erasure route",
                order.len()
            )));
        }
        let mut rank = vec![u32::MAX; graph.nsites()];
        for (j, &v) in order.iter().enumerate() {
            rank[v as usize] = j as u32;
        }
        let mass2 = mass * mass;
        let mut ret_prob = Vec::with_capacity(order.len());
        let mut log_terms = Vec::with_capacity(order.len());
        let mut fixed = zero.clone();
        for &vj in &order {
            let vj = vj as usize;
            fixed[vj] = true;
            // h(y) = P_y(walk hits vj before dying), solving the killed
            // Dirichlet problem with the earlier vertices removed
            let sys = DirichletSystem::new(Arc::clone(graph), &fixed, mass)?;
            let mut rhs = vec![0.0; graph.nsites()];
            let mut any = false;
            graph.for_neighbors(vj, |nb| {
                if !fixed[nb] {
                    any = true;
                }
            });
            if any {
                for i in 0..graph.nsites() {
                    if fixed[i] {
                        continue;
                    }
                    let mut c = 0.0;
                    graph.for_neighbors(i, |nb| {
                        if nb == vj {
                            c += 1.0;
                        }
                    });
                    rhs[i] = c;
                }
            }
            let h = if any {
                sys.solve(&rhs)?
            } else {
                vec![0.0; graph.nsites()]
            };
            let lambda = graph.degree(vj) as f64 + mass2;
            let mut r = 0.0;
            graph.for_neighbors(vj, |nb| {
                if !fixed[nb] {
                    r += h[nb] / lambda;
                }
            });
            let r = r.clamp(0.0, 1.0 - 1e-15);
            ret_prob.push(r);
            log_terms.push(-(-r).ln_1p());
        }
        Ok(SoupSampler {
            graph: Arc::clone(graph),
            nlabels,
            mass,
            mass2,
            rank,
            order,
            ret_prob,
            log_terms,
        })
    }

    /// Expected number of nontrivial loops in the ensemble.
    pub fn mean_loop_count(&self) -> f64 {
        let alpha = self.nlabels as f64 / 2.0;
        alpha * self.log_terms.iter().sum::<f64>()
    }

    pub fn sample(&self, seed: u64) -> LoopSoup {
        let mut rng = stream_rng(seed, 0x100f);
        let alpha = self.nlabels as f64 / 2.0;
        let mut loops = Vec::new();
        let mut nbuf = Vec::with_capacity(4);
        for (j, &vj) in self.order.iter().enumerate() {
            let term = self.log_terms[j];
            if term <= 0.0 {
                continue;
            }
            let count = Poisson::new(alpha * term).unwrap().sample(&mut rng) as u64;
            for _ in 0..count {
                let k = sample_log_series(self.ret_prob[j], term, &mut rng);
                let mut visits = Vec::new();
                for _ in 0..k {
                    visits.push(vj);
                    self.conditioned_excursion(
                        vj as usize,
                        j as u32,
                        &mut visits,
                        &mut nbuf,
                        &mut rng,
                    );
                }
                loops.push(decorate_loop(visits, self.nlabels, &mut rng));
            }
        }
        LoopSoup {
            graph: Arc::clone(&self.graph),
            nlabels: self.nlabels,
            base_mass: self.mass,
            loops,
            trivial: sample_trivial(&self.graph, &self.rank, self.nlabels, &mut rng),
        }
    }

    /// Walk from `vj` until first return, conditioned on returning before it
    /// dies or meets an earlier vertex; intermediate sites are appended.
    fn conditioned_excursion(
        &self,
        vj: usize,
        j: u32,
        visits: &mut Vec<u32>,
        nbuf: &mut Vec<usize>,
        rng: &mut ChaCha8Rng,
    ) {
        let start_len = visits.len();
        'attempt: loop {
            visits.truncate(start_len);
            let mut x = vj;
            loop {
                let lambda = self.graph.degree(x) as f64 + self.mass2;
                if self.mass2 > 0.0 && rng.random::<f64>() * lambda >= self.graph.degree(x) as f64 {
                    continue 'attempt; // killed by the mass
                }
                nbuf.clear();
                self.graph.for_neighbors(x, |nb| nbuf.push(nb));
                let y = nbuf[rng.random_range(0..nbuf.len())];
                if y == vj {
                    return; // excursion closed
                }
                let ry = self.rank[y];
                if ry == u32::MAX || ry < j {
                    continue 'attempt; // died on zero set or earlier vertex
                }
                visits.push(y as u32);
                x = y;
            }
        }
    }
}

/// Number of visits to the base vertex of one loop: P(k) ∝ r^k / k.
fn sample_log_series(r: f64, log_term: f64, rng: &mut impl Rng) -> u64 {
    let mut u = rng.random::<f64>() * log_term;
    let mut k = 1u64;
    let mut term = r;
    loop {
        let p = term / k as f64;
        if u <= p || k > 100_000 {
            return k;
        }
        u -= p;
        term *= r;
        k += 1;
    }
}

fn decorate_loop(visits: Vec<u32>, nlabels: usize, rng: &mut impl Rng) -> SoupLoop {
    let label = rng.random_range(0..nlabels) as u16;
    let holdings: Vec<f64> = (0..visits.len()).map(|_| Exp1.sample(rng)).collect();
    let retain_u = rng.random::<f64>();
    SoupLoop {
        label,
        visits,
        holdings,
        retain_u,
    }
}

fn sample_trivial(
    graph: &Arc<SiteGraph>,
    rank: &[u32],
    nlabels: usize,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let gamma_half = Gamma::new(0.5, 1.0).unwrap();
    let mut trivial = vec![0.0; graph.nsites() * nlabels];
    for s in 0..graph.nsites() {
        if rank[s] == u32::MAX {
            continue; // zero set carries no occupation
        }
        for l in 0..nlabels {
            trivial[s * nlabels + l] = gamma_half.sample(rng);
        }
    }
    trivial
}

/// Vertex-ordering ensemble at intensity nlabels/2 with uniform labels.
pub fn sample_soup(
    graph: &Arc<SiteGraph>,
    zeroset: &[usize],
    nlabels: usize,
    mass: f64,
    seed: u64,
) -> Result<LoopSoup> {
    Ok(SoupSampler::new(graph, zeroset, nlabels, mass)?.sample(seed))
}

impl LoopSoup {
    /// Survival probability of one loop when thinning from the base mass.
    fn survival(&self, lp: &SoupLoop, mass: f64) -> f64 {
        let b2 = self.base_mass * self.base_mass;
        let m2 = mass * mass;
        if m2 == b2 {
            return 1.0;
        }
        let mut logp = 0.0;
        for &v in &lp.visits {
            let d = self.graph.degree(v as usize) as f64;
            logp += ((d + b2) / (d + m2)).ln();
        }
        logp.exp()
    }

    fn retained(&self, lp: &SoupLoop, mass: f64) -> bool {
        lp.retain_u <= self.survival(lp, mass)
    }

    /// Occupation field at a target mass >= the base mass. Loops are kept or
    /// dropped by their shared marks (monotone in the mass) and holding
    /// scales switch to 2/(deg + mass²).
    pub fn local_time(&self, mass: f64) -> Result<LocalTimeField> {
        if mass < self.base_mass {
            return Err(Error::InvalidArgument(format!(
                "cannot thin downward: base mass {} target {mass}",
                self.base_mass
            )));
        }
        let m2 = mass * mass;
        let mut field = LocalTimeField::zeros(&self.graph, self.nlabels);
        for lp in &self.loops {
            if !self.retained(lp, mass) {
                continue;
            }
            for (&v, &e) in lp.visits.iter().zip(&lp.holdings) {
                let v = v as usize;
                let scale = 2.0 / (self.graph.degree(v) as f64 + m2);
                field.data[v * self.nlabels + lp.label as usize] += e * scale;
            }
        }
        for s in 0..self.graph.nsites() {
            let scale = 2.0 / (self.graph.degree(s) as f64 + m2);
            for l in 0..self.nlabels {
                field.data[s * self.nlabels + l] += self.trivial[s * self.nlabels + l] * scale;
            }
        }
        Ok(field)
    }

    /// Occupation of loops confined to `region` (point loops always are).
    pub fn local_time_restricted(&self, mass: f64, region: &[bool]) -> Result<LocalTimeField> {
        if mass < self.base_mass {
            return Err(Error::InvalidArgument("cannot thin downward".into()));
        }
        let m2 = mass * mass;
        let mut field = LocalTimeField::zeros(&self.graph, self.nlabels);
        for lp in &self.loops {
            if !lp.visits.iter().all(|&v| region[v as usize]) {
                continue;
            }
            if !self.retained(lp, mass) {
                continue;
            }
            for (&v, &e) in lp.visits.iter().zip(&lp.holdings) {
                let v = v as usize;
                let scale = 2.0 / (self.graph.degree(v) as f64 + m2);
                field.data[v * self.nlabels + lp.label as usize] += e * scale;
            }
        }
        for s in 0..self.graph.nsites() {
            if !region[s] {
                continue;
            }
            let scale = 2.0 / (self.graph.degree(s) as f64 + m2);
            for l in 0..self.nlabels {
                field.data[s * self.nlabels + l] += self.trivial[s * self.nlabels + l] * scale;
            }
        }
        Ok(field)
    }

    /// The coupled soup at a larger mass: dropped loops removed, marks
    /// renormalized so that further thinning composes exactly.
    pub fn thin(&self, mass: f64) -> Result<LoopSoup> {
        if mass < self.base_mass {
            return Err(Error::InvalidArgument("cannot thin downward".into()));
        }
        let mut loops = Vec::new();
        for lp in &self.loops {
            let s = self.survival(lp, mass);
            if lp.retain_u <= s {
                loops.push(SoupLoop {
                    label: lp.label,
                    visits: lp.visits.clone(),
                    holdings: lp.holdings.clone(),
                    retain_u: lp.retain_u / s,
                });
            }
        }
        Ok(LoopSoup {
            graph: Arc::clone(&self.graph),
            nlabels: self.nlabels,
            base_mass: mass,
            loops,
            trivial: self.trivial.clone(),
        })
    }

    /// True when thinning to `mass` keeps every loop, i.e. the discrete
    /// ensembles at the two masses coincide.
    pub fn coupling_intact(&self, mass: f64) -> bool {
        self.loops.iter().all(|lp| self.retained(lp, mass))
    }

    /// Superpose independent single-label ensembles into one labeled soup.
    pub fn merge_labels(parts: Vec<LoopSoup>) -> Result<LoopSoup> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("no parts".into()))?;
        let graph = Arc::clone(&first.graph);
        let base_mass = first.base_mass;
        let nlabels = parts.len();
        let nsites = graph.nsites();
        let mut trivial = vec![0.0; nsites * nlabels];
        let mut loops = Vec::new();
        for (l, part) in parts.into_iter().enumerate() {
            if part.nlabels != 1 || part.base_mass != base_mass {
                return Err(Error::InvalidArgument(
                    "merge expects single-label parts at one mass".into(),
                ));
            }
            for mut lp in part.loops {
                lp.label = l as u16;
                loops.push(lp);
            }
            for s in 0..nsites {
                trivial[s * nlabels + l] = part.trivial[s];
            }
        }
        Ok(LoopSoup {
            graph,
            nlabels,
            base_mass,
            loops,
            trivial,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonic::green;
    use crate::lattice::{build_box, build_torus};
    use crate::stats::{gamma_half_cdf, ks_distance, mean_se};

    fn ring(g: &Arc<SiteGraph>) -> Vec<usize> {
        g.boundary().iter().map(|&b| b as usize).collect()
    }

    #[test]
    fn single_site_occupation_is_gamma_half() {
        let g = build_box(1).unwrap();
        let zs = ring(&g);
        let sampler = SoupSampler::new(&g, &zs, 1, 0.0).unwrap();
        let center = g.site((0, 0)).unwrap();
        // the only interior site has no return excursions
        assert_eq!(sampler.mean_loop_count(), 0.0);
        let mut vals = Vec::with_capacity(100_000);
        for r in 0..100_000u64 {
            let soup = sampler.sample(r);
            vals.push(soup.local_time(0.0).unwrap().total(center));
        }
        // L(0) ~ Gamma(1/2, scale 2·G(0,0)) with G(0,0) = 1/4
        let d = ks_distance(&mut vals, |x| gamma_half_cdf(x, 0.5));
        assert!(d < 0.02, "KS {d}");
    }

    #[test]
    fn occupation_mean_matches_green_diagonal() {
        let g = build_box(4).unwrap();
        let zs = ring(&g);
        let kernel = green(&g, &zs, 0.0).unwrap();
        let sampler = SoupSampler::new(&g, &zs, 2, 0.0).unwrap();
        let probes: Vec<usize> = vec![
            g.site((0, 0)).unwrap(),
            g.site((2, 1)).unwrap(),
            g.site((-3, 3)).unwrap(),
        ];
        let reps = 20_000u64;
        let mut per_label: Vec<Vec<f64>> = vec![Vec::new(); probes.len()];
        let mut totals: Vec<Vec<f64>> = vec![Vec::new(); probes.len()];
        for r in 0..reps {
            let lt = sampler.sample(r).local_time(0.0).unwrap();
            for (i, &s) in probes.iter().enumerate() {
                per_label[i].push(lt.label(s, 0));
                totals[i].push(lt.total(s));
            }
        }
        for (i, &s) in probes.iter().enumerate() {
            let want = kernel.value(s, s).unwrap();
            let (m1, se1) = mean_se(&per_label[i]);
            assert!((m1 - want).abs() < 5.0 * se1, "label mean {m1} want {want}");
            let (mt, set) = mean_se(&totals[i]);
            assert!(
                (mt - 2.0 * want).abs() < 5.0 * set,
                "total mean {mt} want {}",
                2.0 * want
            );
        }
    }

    #[test]
    fn zero_set_carries_no_occupation() {
        let g = build_box(3).unwrap();
        let zs = ring(&g);
        let soup = sample_soup(&g, &zs, 2, 0.0, 99).unwrap();
        let lt = soup.local_time(0.0).unwrap();
        for &b in g.boundary() {
            assert_eq!(lt.total(b as usize), 0.0);
        }
        for lp in &soup.loops {
            assert!(lp.visits.iter().all(|&v| !g.is_boundary(v as usize)));
            // consecutive visits adjacent, cyclically
            let k = lp.len();
            for i in 0..k {
                let a = lp.visits[i] as usize;
                let b = lp.visits[(i + 1) % k] as usize;
                assert_eq!(g.distance(crate::lattice::JumpMetric::L1, a, b), 1.0);
            }
            assert!(lp.len() >= 2);
        }
    }

    #[test]
    fn loop_count_is_poisson_with_determinant_mean() {
        let g = build_box(4).unwrap();
        let zs = ring(&g);
        let ordered = SoupSampler::new(&g, &zs, 2, 0.0).unwrap();
        let reps = 8000u64;
        let mut counts = Vec::new();
        for r in 0..reps {
            counts.push(ordered.sample(r).loops.len() as f64);
        }
        let want = ordered.mean_loop_count();
        let (m, se) = mean_se(&counts);
        assert!((m - want).abs() < 5.0 * se, "count {m} want {want}");
        // Poisson: variance equals the mean
        let var = crate::stats::variance(&counts);
        let var_se = want * (2.0 / reps as f64).sqrt() * 2.0;
        assert!((var - want).abs() < 5.0 * var_se, "var {var} want {want}");
    }

    #[test]
    fn per_label_occupation_is_gamma_half() {
        // label-resolved marginal: L¹(x) has the law of one squared
        // component, Gamma(1/2, 2G(x,x)); this is sensitive to how the
        // ensemble is partitioned into loops
        let g = build_box(4).unwrap();
        let zs = ring(&g);
        let kernel = green(&g, &zs, 0.0).unwrap();
        let sampler = SoupSampler::new(&g, &zs, 2, 0.0).unwrap();
        let probe = g.site((1, -2)).unwrap();
        let scale = 2.0 * kernel.value(probe, probe).unwrap();
        let mut vals = Vec::with_capacity(20_000);
        for r in 0..20_000u64 {
            vals.push(sampler.sample(r).local_time(0.0).unwrap().label(probe, 0));
        }
        let d = ks_distance(&mut vals, |x| gamma_half_cdf(x, scale));
        assert!(d < 0.02, "KS {d}");
    }

    #[test]
    fn massive_occupation_matches_massive_green() {
        let g = build_box(4).unwrap();
        let zs = ring(&g);
        let mass = 0.6;
        let kernel = green(&g, &zs, mass).unwrap();
        let base = SoupSampler::new(&g, &zs, 2, 0.0).unwrap();
        let probe = g.site((0, 0)).unwrap();
        let reps = 20_000u64;
        let mut vals = Vec::new();
        for r in 0..reps {
            // thin the massless ensemble up to the target mass
            let lt = base.sample(r).local_time(mass).unwrap();
            vals.push(lt.label(probe, 0));
        }
        let want = kernel.value(probe, probe).unwrap();
        let (m, se) = mean_se(&vals);
        assert!((m - want).abs() < 5.0 * se, "mean {m} want {want}");
        // direct massive sampling agrees too
        let massive = SoupSampler::new(&g, &zs, 2, mass).unwrap();
        let mut vals2 = Vec::new();
        for r in 0..reps {
            vals2.push(massive.sample(r).local_time(mass).unwrap().label(probe, 0));
        }
        let (m2, se2) = mean_se(&vals2);
        assert!(
            (m2 - want).abs() < 5.0 * se2,
            "direct mean {m2} want {want}"
        );
    }

    #[test]
    fn thinning_is_monotone_and_composes() {
        let g = build_box(3).unwrap();
        let zs = ring(&g);
        let soup = sample_soup(&g, &zs, 2, 0.0, 5).unwrap();
        let masses = [0.0, 0.2, 0.5, 1.0];
        for w in masses.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let flo = soup.local_time(lo).unwrap();
            let fhi = soup.local_time(hi).unwrap();
            for s in 0..g.nsites() {
                assert!(fhi.total(s) <= flo.total(s) + 1e-15);
            }
        }
        // thinning in two stages equals thinning in one
        let one = soup.local_time(1.0).unwrap();
        let two = soup.thin(0.5).unwrap().local_time(1.0).unwrap();
        for s in 0..g.nsites() {
            assert!((one.total(s) - two.total(s)).abs() < 1e-12);
        }
        // zero-mass thinning is the identity
        assert!(soup.coupling_intact(0.0));
    }

    #[test]
    fn label_superposition_matches_two_label_ensemble() {
        let g = build_box(3).unwrap();
        let zs = ring(&g);
        let probe = g.site((1, 1)).unwrap();
        let reps = 6000u64;
        let mut merged_occ = Vec::new();
        let mut direct_occ = Vec::new();
        let mut merged_counts = Vec::new();
        let mut direct_counts = Vec::new();
        for r in 0..reps {
            let a = sample_soup(&g, &zs, 1, 0.0, 2 * r).unwrap();
            let b = sample_soup(&g, &zs, 1, 0.0, 2 * r + 1).unwrap();
            let m = LoopSoup::merge_labels(vec![a, b]).unwrap();
            merged_counts.push(m.loops.len() as f64);
            merged_occ.push(m.local_time(0.0).unwrap().total(probe));
            let d = sample_soup(&g, &zs, 2, 0.0, 555_000 + r).unwrap();
            direct_counts.push(d.loops.len() as f64);
            direct_occ.push(d.local_time(0.0).unwrap().total(probe));
        }
        let dc = crate::stats::ks_two_sample(&mut merged_counts, &mut direct_counts);
        let docc = crate::stats::ks_two_sample(&mut merged_occ, &mut direct_occ);
        assert!(dc < 0.035, "count KS {dc}");
        assert!(docc < 0.035, "occupation KS {docc}");
    }

    #[test]
    fn coupling_failure_scales_with_epsilon() {
        // at mass √ε/n the probability that any loop is dropped tracks ε
        let n = 8;
        let g = build_box(n).unwrap();
        let zs = ring(&g);
        let sampler = SoupSampler::new(&g, &zs, 2, 0.0).unwrap();
        let reps = 2000u64;
        let eps: [f64; 2] = [0.08, 0.32];
        let mut fail = [0u64; 2];
        for r in 0..reps {
            let soup = sampler.sample(r);
            for (i, &e) in eps.iter().enumerate() {
                let m = e.sqrt() / n as f64;
                if !soup.coupling_intact(m) {
                    fail[i] += 1;
                }
            }
        }
        let p0 = fail[0] as f64 / reps as f64;
        let p1 = fail[1] as f64 / reps as f64;
        assert!(p0 < p1, "failure must grow with ε: {p0} vs {p1}");
        // linear trend within a factor of 3
        let ratio = p1 / p0.max(1e-9);
        let want = eps[1] / eps[0];
        assert!(
            ratio < want * 3.0 && ratio > want / 3.0,
            "ratio {ratio} want ~{want}"
        );
    }

    #[test]
    fn torus_soup_with_mass_has_green_mean() {
        let side = 16;
        let g = build_torus(side).unwrap();
        let mass = 0.4;
        let grid = crate::spectral::SpectralGrid::new(
            crate::spectral::BasisKind::Torus,
            side as usize,
            mass,
        )
        .unwrap();
        let want = grid.inverse_entry((0, 0), (0, 0));
        let sampler = SoupSampler::new(&g, &[], 2, mass).unwrap();
        let probe = g.site((0, 0)).unwrap();
        let reps = 8000u64;
        let mut vals = Vec::new();
        for r in 0..reps {
            vals.push(sampler.sample(r).local_time(mass).unwrap().label(probe, 1));
        }
        let (m, se) = mean_se(&vals);
        assert!((m - want).abs() < 5.0 * se, "mean {m} want {want}");
    }
}
