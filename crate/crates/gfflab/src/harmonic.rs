//! Exact linear algebra on site graphs: massive Dirichlet solves, Green
//! functions, harmonic extensions, hitting probabilities and the slow
//! rotation test function used by the angle-mixing experiments.
//!
//! Graphs up to a dense limit are solved by a cached Cholesky factorization;
//! larger systems fall back to Jacobi-preconditioned conjugate gradients.
//! Boxes and tori additionally route through the spectral bases of
//! [`crate::spectral`], which the samplers share.

use std::io::Write;
use std::sync::Mutex;

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::lattice::{SiteGraph, Topology};
use crate::spectral::{BasisKind, SpectralGrid};

const DENSE_LIMIT: usize = 1600;
const CG_TOL: f64 = 1e-12;
const CG_MAX_ITER: usize = 200_000;

/// The operator (−Δ + m²) restricted to the non-fixed sites of a graph,
/// with zero data on the fixed set.
pub struct DirichletSystem {
    graph: Arc<SiteGraph>,
    /// site index -> unknown index, or -1 when fixed
    pos: Vec<i32>,
    free: Vec<u32>,
    mass2: f64,
    dense: Mutex<Option<Arc<DenseCholesky>>>,
}

impl DirichletSystem {
    /// `fixed` marks the sites carrying (zero) Dirichlet data.
    pub fn new(graph: Arc<SiteGraph>, fixed: &[bool], mass: f64) -> Result<DirichletSystem> {
        assert_eq!(fixed.len(), graph.nsites());
        let any_fixed = fixed.iter().any(|&b| b);
        if !any_fixed && mass == 0.0 {
            return Err(Error::SingularSystem("empty zero set and zero mass".into()));
        }
        let mut pos = vec![-1i32; graph.nsites()];
        let mut free = Vec::new();
        for i in 0..graph.nsites() {
            if !fixed[i] {
                pos[i] = free.len() as i32;
                free.push(i as u32);
            }
        }
        Ok(DirichletSystem {
            graph,
            pos,
            free,
            mass2: mass * mass,
            dense: Mutex::new(None),
        })
    }

    /// Convenience constructor fixing the designated boundary of the graph.
    pub fn with_boundary(graph: &Arc<SiteGraph>, mass: f64) -> Result<DirichletSystem> {
        let mut fixed = vec![false; graph.nsites()];
        for &b in graph.boundary() {
            fixed[b as usize] = true;
        }
        DirichletSystem::new(Arc::clone(graph), &fixed, mass)
    }

    pub fn graph(&self) -> &Arc<SiteGraph> {
        &self.graph
    }

    pub fn unknowns(&self) -> usize {
        self.free.len()
    }

    pub fn is_fixed(&self, site: usize) -> bool {
        self.pos[site] < 0
    }

    /// Apply (−Δ + m²) to a vector indexed by unknowns.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (u, &site) in self.free.iter().enumerate() {
            let site = site as usize;
            let mut acc = (self.graph.degree(site) as f64 + self.mass2) * x[u];
            self.graph.for_neighbors(site, |nb| {
                let p = self.pos[nb];
                if p >= 0 {
                    acc -= x[p as usize];
                }
            });
            out[u] = acc;
        }
    }

    fn dense_factor(&self) -> Result<Arc<DenseCholesky>> {
        let mut guard = self.dense.lock().unwrap();
        if let Some(f) = guard.as_ref() {
            return Ok(Arc::clone(f));
        }
        let n = self.free.len();
        let mut a = vec![0.0f64; n * n];
        for (u, &site) in self.free.iter().enumerate() {
            let site = site as usize;
            a[u * n + u] = self.graph.degree(site) as f64 + self.mass2;
            self.graph.for_neighbors(site, |nb| {
                let p = self.pos[nb];
                if p >= 0 {
                    a[u * n + p as usize] = -1.0;
                }
            });
        }
        let f = Arc::new(DenseCholesky::factor(a, n)?);
        *guard = Some(Arc::clone(&f));
        Ok(f)
    }

    /// Solve (−Δ + m²) x = rhs where rhs is indexed by site; fixed sites are
    /// ignored on input and zero on output. The result is indexed by site.
    pub fn solve(&self, rhs_by_site: &[f64]) -> Result<Vec<f64>> {
        let n = self.free.len();
        let rhs: Vec<f64> = self.free.iter().map(|&s| rhs_by_site[s as usize]).collect();
        let x = if n <= DENSE_LIMIT {
            self.dense_factor()?.solve(&rhs)
        } else {
            self.solve_cg(&rhs)?
        };
        let mut out = vec![0.0; self.graph.nsites()];
        for (u, &site) in self.free.iter().enumerate() {
            out[site as usize] = x[u];
        }
        Ok(out)
    }

    fn solve_cg(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = rhs.len();
        let mut x = vec![0.0; n];
        let mut r = rhs.to_vec();
        let precond: Vec<f64> = self
            .free
            .iter()
            .map(|&s| 1.0 / (self.graph.degree(s as usize) as f64 + self.mass2))
            .collect();
        let mut z: Vec<f64> = r.iter().zip(&precond).map(|(a, m)| a * m).collect();
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rhs_norm == 0.0 {
            return Ok(x);
        }
        let mut ap = vec![0.0; n];
        for _it in 0..CG_MAX_ITER {
            self.apply(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rnorm <= CG_TOL * rhs_norm {
                return Ok(x);
            }
            for i in 0..n {
                z[i] = r[i] * precond[i];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        Err(Error::NoConvergence {
            residual: rnorm / rhs_norm,
            iterations: CG_MAX_ITER,
        })
    }

    /// Max-norm residual of (−Δ + m²) x − rhs over unknowns; diagnostic.
    pub fn residual_inf(&self, x_by_site: &[f64], rhs_by_site: &[f64]) -> f64 {
        let x: Vec<f64> = self.free.iter().map(|&s| x_by_site[s as usize]).collect();
        let mut ax = vec![0.0; x.len()];
        self.apply(&x, &mut ax);
        self.free
            .iter()
            .enumerate()
            .map(|(u, &s)| (ax[u] - rhs_by_site[s as usize]).abs())
            .fold(0.0, f64::max)
    }
}

struct DenseCholesky {
    l: Vec<f64>,
    n: usize,
}

impl DenseCholesky {
    fn factor(mut a: Vec<f64>, n: usize) -> Result<DenseCholesky> {
        for j in 0..n {
            for k in 0..j {
                let ljk = a[j * n + k];
                if ljk != 0.0 {
                    for i in j..n {
                        a[i * n + j] -= a[i * n + k] * ljk;
                    }
                }
            }
            let d = a[j * n + j];
            if d <= 0.0 {
                return Err(Error::SingularSystem(format!(
                    "non positive pivot {d:e} at column {j}"
                )));
            }
            let inv = 1.0 / d.sqrt();
            for i in j..n {
                a[i * n + j] *= inv;
            }
        }
        // zero strict upper triangle
        for i in 0..n {
            for j in i + 1..n {
                a[i * n + j] = 0.0;
            }
        }
        Ok(DenseCholesky { l: a, n })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = rhs.to_vec();
        for i in 0..n {
            let mut acc = y[i];
            for k in 0..i {
                acc -= self.l[i * n + k] * y[k];
            }
            y[i] = acc / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut acc = y[i];
            for k in i + 1..n {
                acc -= self.l[k * n + i] * y[k];
            }
            y[i] = acc / self.l[i * n + i];
        }
        y
    }

    /// x = L^{-T} z, which has covariance A^{-1} for standard normal z.
    fn sample_transform(&self, z: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = z.to_vec();
        for i in (0..n).rev() {
            let mut acc = y[i];
            for k in i + 1..n {
                acc -= self.l[k * n + i] * y[k];
            }
            y[i] = acc / self.l[i * n + i];
        }
        y
    }
}

/// Draw an exact zero-boundary Gaussian sample for a dense-factorable system.
pub(crate) fn dense_gaussian_sample(sys: &DirichletSystem, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if sys.unknowns() > DENSE_LIMIT {
        return Err(Error::InvalidArgument(format!(
            "dense sampler limited to {DENSE_LIMIT} unknowns, got {}",
            sys.unknowns()
        )));
    }
    let f = sys.dense_factor()?;
    let z: Vec<f64> = (0..sys.unknowns())
        .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng))
        .collect();
    let x = f.sample_transform(&z);
    let mut out = vec![0.0; sys.graph.nsites()];
    for (u, &site) in sys.free.iter().enumerate() {
        out[site as usize] = x[u];
    }
    Ok(out)
}

/// Symmetric Green kernel of (−Δ + m²) with a zero set.
pub struct GreenFn {
    pub system: DirichletSystem,
    columns: Mutex<HashMap<usize, Arc<Vec<f64>>>>,
}

/// Green function of the massive Dirichlet Laplacian with the given fixed
/// (zero) sites.
pub fn green(graph: &Arc<SiteGraph>, zeroset: &[usize], mass: f64) -> Result<GreenFn> {
    let mut fixed = vec![false; graph.nsites()];
    for &z in zeroset {
        fixed[z] = true;
    }
    Ok(GreenFn {
        system: DirichletSystem::new(Arc::clone(graph), &fixed, mass)?,
        columns: Mutex::new(HashMap::new()),
    })
}

impl GreenFn {
    pub fn column(&self, y: usize) -> Result<Arc<Vec<f64>>> {
        if let Some(c) = self.columns.lock().unwrap().get(&y) {
            return Ok(Arc::clone(c));
        }
        let n = self.system.graph.nsites();
        let mut rhs = vec![0.0; n];
        if !self.system.is_fixed(y) {
            rhs[y] = 1.0;
        }
        let col = Arc::new(self.system.solve(&rhs)?);
        self.columns.lock().unwrap().insert(y, Arc::clone(&col));
        Ok(col)
    }

    pub fn value(&self, x: usize, y: usize) -> Result<f64> {
        if self.system.is_fixed(x) || self.system.is_fixed(y) {
            return Ok(0.0);
        }
        Ok(self.column(y)?[x])
    }

    /// Dump kernel values for the given sites as CSV rows `x,y,G`.
    pub fn dump_csv(&self, out: &mut impl Write, sites: &[usize]) -> Result<()> {
        writeln!(out, "x0,x1,y0,y1,green")?;
        for &y in sites {
            let col = self.column(y)?;
            let cy = self.system.graph.coord(y);
            for &x in sites {
                let cx = self.system.graph.coord(x);
                writeln!(out, "{},{},{},{},{:.17e}", cx.0, cx.1, cy.0, cy.1, col[x])?;
            }
        }
        Ok(())
    }
}

/// Harmonic extension of prescribed values, harmonic off the fixed set.
pub struct HarmonicData {
    /// (site, value) pairs that were prescribed.
    pub fixed: Vec<(usize, f64)>,
    /// The extension on every site (equal to the data on fixed sites).
    pub extension: Vec<f64>,
}

/// Extend `data` harmonically to the whole graph. The fixed set is the set
/// of sites appearing in `data`; everything else satisfies the discrete
/// mean-value property.
pub fn harmonic_extension(graph: &Arc<SiteGraph>, data: &[(usize, f64)]) -> Result<HarmonicData> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty prescribed set".into()));
    }
    let mut fixed = vec![false; graph.nsites()];
    let mut value = vec![0.0; graph.nsites()];
    for &(s, v) in data {
        fixed[s] = true;
        value[s] = v;
    }
    let sys = DirichletSystem::new(Arc::clone(graph), &fixed, 0.0)?;
    // move the data to the right-hand side
    let mut rhs = vec![0.0; graph.nsites()];
    for i in 0..graph.nsites() {
        if fixed[i] {
            continue;
        }
        let mut acc = 0.0;
        graph.for_neighbors(i, |nb| {
            if fixed[nb] {
                acc += value[nb];
            }
        });
        rhs[i] = acc;
    }
    let mut ext = sys.solve(&rhs)?;
    for &(s, v) in data {
        ext[s] = v;
    }
    Ok(HarmonicData {
        fixed: data.to_vec(),
        extension: ext,
    })
}

/// First-hitting distribution of simple random walk from `v` on `target`.
pub fn hitting_probs(
    graph: &Arc<SiteGraph>,
    target: &[usize],
    v: usize,
) -> Result<Vec<(usize, f64)>> {
    if target.is_empty() {
        return Err(Error::InvalidArgument("empty target set".into()));
    }
    if target.contains(&v) {
        return Ok(vec![(v, 1.0)]);
    }
    let mut fixed = vec![false; graph.nsites()];
    for &t in target {
        fixed[t] = true;
    }
    let sys = DirichletSystem::new(Arc::clone(graph), &fixed, 0.0)?;
    let mut rhs = vec![0.0; graph.nsites()];
    rhs[v] = 1.0;
    let gcol = sys.solve(&rhs)?;
    // expected visits to x are degree(x)·G(v,x); each visit exits uniformly
    let mut out = Vec::with_capacity(target.len());
    for &s in target {
        let mut p = 0.0;
        graph.for_neighbors(s, |nb| {
            if !fixed[nb] {
                p += gcol[nb];
            }
        });
        out.push((s, p));
    }
    Ok(out)
}

/// Step a simple random walk from `start` until it hits a site where
/// `target` is true; returns that site.
pub fn walk_until(
    graph: &SiteGraph,
    start: usize,
    target: impl Fn(usize) -> bool,
    rng: &mut impl Rng,
) -> usize {
    let mut x = start;
    let mut nbuf = Vec::with_capacity(4);
    while !target(x) {
        nbuf.clear();
        graph.for_neighbors(x, |nb| nbuf.push(nb));
        x = nbuf[rng.random_range(0..nbuf.len())];
    }
    x
}

/// The slow-rotation test function between two pinned sites, together with
/// its Dirichlet energy. `s` is zero at `x` and π at `y`.
pub struct RotationProfile {
    pub s: Vec<f64>,
    pub dirichlet_energy: f64,
    pub green_yy: f64,
}

/// Build S(v) = π·G_x(y,v)/G_x(y,y) where G_x is the Green function of the
/// graph pinned to zero at `x` alone, and return its Dirichlet energy
/// Σ_{v∼v'} (S(v)−S(v'))².
pub fn mw_test_function(graph: &Arc<SiteGraph>, x: usize, y: usize) -> Result<RotationProfile> {
    if x == y {
        return Err(Error::InvalidArgument(
            "rotation profile needs two distinct pins".into(),
        ));
    }
    let col = match graph.topology {
        Topology::Box { .. } | Topology::Window { .. } | Topology::Torus { .. } => {
            pinned_green_column_spectral(graph, x, y)
        }
        _ => {
            let g = green(graph, &[x], 0.0)?;
            g.column(y).map(|c| c.as_ref().clone())
        }
    }?;
    let gyy = col[y];
    if gyy <= 0.0 {
        return Err(Error::SingularSystem(
            "pinned Green diagonal not positive".into(),
        ));
    }
    let s: Vec<f64> = col
        .iter()
        .map(|&v| std::f64::consts::PI * v / gyy)
        .collect();
    let mut energy = 0.0;
    for &(u, v) in graph.edges() {
        let d = s[u as usize] - s[v as usize];
        energy += d * d;
    }
    Ok(RotationProfile {
        s,
        dirichlet_energy: energy,
        green_yy: gyy,
    })
}

/// Column G_x(·, y) of the Green function pinned at a single site, via the
/// spectral pseudo-inverse of the free (or periodic) Laplacian.
fn pinned_green_column_spectral(graph: &Arc<SiteGraph>, x: usize, y: usize) -> Result<Vec<f64>> {
    let kind = match graph.topology {
        Topology::Torus { .. } => BasisKind::Torus,
        _ => BasisKind::Free,
    };
    let m = graph.side();
    let sg = SpectralGrid::new(kind, m, 0.0)?;
    let h_col = |site: usize| -> ndarray::Array2<f64> {
        let (cx, cy) = grid_index(graph, site);
        let mut rhs = ndarray::Array2::zeros((m, m));
        rhs[[cx, cy]] = 1.0;
        sg.apply_inverse(&rhs)
    };
    let hy = h_col(y);
    let hx = h_col(x);
    let (xi, xj) = grid_index(graph, x);
    let hxy = hy[[xi, xj]];
    let hxx = hx[[xi, xj]];
    let mut out = vec![0.0; graph.nsites()];
    for v in 0..graph.nsites() {
        let (vi, vj) = grid_index(graph, v);
        out[v] = hy[[vi, vj]] - hxy - hx[[vi, vj]] + hxx;
    }
    Ok(out)
}

/// Grid coordinates of a site inside its bounding rectangle.
pub(crate) fn grid_index(graph: &SiteGraph, site: usize) -> (usize, usize) {
    let c = graph.coord(site);
    let half = (graph.side() as i32 - 1) / 2;
    match graph.topology {
        Topology::Torus { .. } => (c.0 as usize, c.1 as usize),
        _ => ((c.0 + half) as usize, (c.1 + half) as usize),
    }
}
