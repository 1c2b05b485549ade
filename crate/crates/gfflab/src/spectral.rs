//! Separable eigenbases of the graph Laplacian on boxes and tori.
//!
//! The Dirichlet box diagonalizes in a sine basis, the free box in a cosine
//! basis and the torus in a real Fourier basis, so exact Gaussian sampling
//! and pseudo-inverse evaluation reduce to two dense matrix products per
//! field. This is the large-window path; small or irregular graphs go
//! through the direct solvers in [`crate::harmonic`].

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    /// Zero boundary just outside the grid (interior of a box).
    Dirichlet,
    /// Free boundary; mode 0 is the constant vector with eigenvalue 0.
    Free,
    /// Periodic; mode 0 is the constant vector with eigenvalue 0.
    Torus,
}

/// Orthonormal eigenbasis of the 1D path/cycle Laplacian on `m` points.
pub struct Basis1d {
    pub kind: BasisKind,
    /// Row j holds eigenvector j evaluated at the grid points.
    pub vectors: Array2<f64>,
    pub eigenvalues: Vec<f64>,
}

impl Basis1d {
    pub fn new(kind: BasisKind, m: usize) -> Basis1d {
        assert!(m >= 1);
        let mut u = Array2::zeros((m, m));
        let mut lam = vec![0.0; m];
        match kind {
            BasisKind::Dirichlet => {
                let denom = (m + 1) as f64;
                let norm = (2.0 / denom).sqrt();
                for j in 0..m {
                    lam[j] = 2.0 - 2.0 * (std::f64::consts::PI * (j + 1) as f64 / denom).cos();
                    for i in 0..m {
                        u[[j, i]] = norm
                            * (std::f64::consts::PI * (j + 1) as f64 * (i + 1) as f64 / denom)
                                .sin();
                    }
                }
            }
            BasisKind::Free => {
                let mf = m as f64;
                for j in 0..m {
                    lam[j] = 2.0 - 2.0 * (std::f64::consts::PI * j as f64 / mf).cos();
                    let norm = if j == 0 {
                        (1.0 / mf).sqrt()
                    } else {
                        (2.0 / mf).sqrt()
                    };
                    for i in 0..m {
                        u[[j, i]] =
                            norm * (std::f64::consts::PI * j as f64 * (i as f64 + 0.5) / mf).cos();
                    }
                }
            }
            BasisKind::Torus => {
                let mf = m as f64;
                let two_pi = 2.0 * std::f64::consts::PI;
                let mut row = 0;
                for i in 0..m {
                    u[[row, i]] = (1.0 / mf).sqrt();
                }
                lam[row] = 0.0;
                row += 1;
                let half = (m - 1) / 2;
                for j in 1..=half {
                    let l = 2.0 - 2.0 * (two_pi * j as f64 / mf).cos();
                    for i in 0..m {
                        u[[row, i]] = (2.0 / mf).sqrt() * (two_pi * j as f64 * i as f64 / mf).cos();
                        u[[row + 1, i]] =
                            (2.0 / mf).sqrt() * (two_pi * j as f64 * i as f64 / mf).sin();
                    }
                    lam[row] = l;
                    lam[row + 1] = l;
                    row += 2;
                }
                if m % 2 == 0 {
                    for i in 0..m {
                        u[[row, i]] = if i % 2 == 0 { 1.0 } else { -1.0 } / mf.sqrt();
                    }
                    lam[row] = 4.0;
                }
            }
        }
        Basis1d {
            kind,
            vectors: u,
            eigenvalues: lam,
        }
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }
}

/// 2D spectral grid built from one shared 1D basis per axis.
pub struct SpectralGrid {
    pub basis: Basis1d,
    pub mass2: f64,
}

impl SpectralGrid {
    pub fn new(kind: BasisKind, m: usize, mass: f64) -> Result<SpectralGrid> {
        if mass < 0.0 {
            return Err(Error::InvalidArgument(format!("negative mass {mass}")));
        }
        Ok(SpectralGrid {
            basis: Basis1d::new(kind, m),
            mass2: mass * mass,
        })
    }

    fn has_zero_mode(&self) -> bool {
        self.mass2 == 0.0 && self.basis.kind != BasisKind::Dirichlet
    }

    /// Exact Gaussian sample with precision (−Δ + m²). When the operator has
    /// a zero mode (free/torus at zero mass) the constant mode is dropped,
    /// which is the pseudo-inverse covariance; callers pin such fields at a
    /// root site afterwards.
    pub fn sample(&self, rng: &mut impl Rng) -> Array2<f64> {
        let m = self.basis.len();
        let mut coeff = Array2::zeros((m, m));
        for j in 0..m {
            for k in 0..m {
                let lam = self.basis.eigenvalues[j] + self.basis.eigenvalues[k] + self.mass2;
                let z: f64 = StandardNormal.sample(rng);
                coeff[[j, k]] = if lam <= 0.0 {
                    debug_assert!(self.has_zero_mode());
                    0.0
                } else {
                    z / lam.sqrt()
                };
            }
        }
        // field(x, y) = Σ_{j,k} u_j(x) coeff_{jk} u_k(y)
        self.basis.vectors.t().dot(&coeff).dot(&self.basis.vectors)
    }

    /// Apply (−Δ + m²)^{-1}; the zero mode (if any) is projected out.
    pub fn apply_inverse(&self, rhs: &Array2<f64>) -> Array2<f64> {
        let mut coeff = self.basis.vectors.dot(rhs).dot(&self.basis.vectors.t());
        let m = self.basis.len();
        for j in 0..m {
            for k in 0..m {
                let lam = self.basis.eigenvalues[j] + self.basis.eigenvalues[k] + self.mass2;
                if lam <= 0.0 {
                    coeff[[j, k]] = 0.0;
                } else {
                    coeff[[j, k]] /= lam;
                }
            }
        }
        self.basis.vectors.t().dot(&coeff).dot(&self.basis.vectors)
    }

    /// Entry (a, b) of the (pseudo-)inverse of (−Δ + m²), a direct mode sum.
    pub fn inverse_entry(&self, a: (usize, usize), b: (usize, usize)) -> f64 {
        let m = self.basis.len();
        let u = &self.basis.vectors;
        let mut acc = 0.0;
        for j in 0..m {
            let fx = u[[j, a.0]] * u[[j, b.0]];
            let lj = self.basis.eigenvalues[j];
            let mut inner = 0.0;
            for k in 0..m {
                let lam = lj + self.basis.eigenvalues[k] + self.mass2;
                if lam > 0.0 {
                    inner += u[[k, a.1]] * u[[k, b.1]] / lam;
                }
            }
            acc += fx * inner;
        }
        acc
    }

    /// Green value G_o(a, b) of the operator pinned to zero at the root `o`,
    /// valid for the zero-mass free box and torus.
    pub fn pinned_green(&self, o: (usize, usize), a: (usize, usize), b: (usize, usize)) -> f64 {
        debug_assert!(self.has_zero_mode());
        self.inverse_entry(a, b) - self.inverse_entry(a, o) - self.inverse_entry(o, b)
            + self.inverse_entry(o, o)
    }
}
