//! Synthetic spatial functional data: a deterministic mean curve plus a
//! spatially correlated Gaussian field expanded on cubic B-splines.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSystem;
use crate::error::{Error, Result};
use crate::fdata::{spatial_dist, Curve, Site, SpatialFunctionalDataset, TimeGrid};
use crate::rng::{stream, StreamId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// 1: `μ(t) + ε`; 2: `μ(t)³ + ε`.
    pub scenario: u8,
    pub eta: f64,
    pub c: f64,
    pub n_sites: usize,
    pub n_grid: usize,
    pub n_basis: usize,
    /// Scale applied to the noise field; 0 gives the bare mean.
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario: 1,
            eta: 0.1,
            c: 0.1,
            n_sites: 100,
            n_grid: 101,
            n_basis: 30,
            noise_sd: 1.0,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn new(scenario: u8, eta: f64, c: f64, seed: u64) -> Self {
        Self {
            scenario,
            eta,
            c,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.scenario != 1 && self.scenario != 2 {
            return bad(format!("scenario must be 1 or 2, got {}", self.scenario));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad(format!("eta must lie in [0, 1], got {}", self.eta));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad(format!("c must be positive, got {}", self.c));
        }
        if self.n_sites == 0 {
            return bad("n_sites must be positive".into());
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise_sd must be non-negative, got {}", self.noise_sd));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(0.0, 1.0, self.n_grid)
    }
}

/// `μ(t) = t/2 + sin(2πt) − 2 sin(2πt − 1) log(2πt + 1/2)`.
pub fn mean_function(t: f64) -> f64 {
    let w = 2.0 * PI * t;
    0.5 * t + w.sin() - 2.0 * (w - 1.0).sin() * (w + 0.5).ln()
}

/// `C(h) = (1 − η) e^{−c h} + η`.
pub fn gp_covariance(h: f64, eta: f64, c: f64) -> f64 {
    (1.0 - eta) * (-c * h).exp() + eta
}

/// Regular grid of `n` sites in `[−1, 1] × [0, 1]`, both axes including
/// their end points. `n` need not be a square: the smallest square lattice
/// holding `n` sites is filled row by row.
pub fn site_layout(n: usize) -> Vec<Site> {
    let side = (n as f64).sqrt().ceil() as usize;
    let lin = |lo: f64, hi: f64, i: usize| {
        if side == 1 {
            (lo + hi) / 2.0
        } else {
            lo + (hi - lo) * i as f64 / (side - 1) as f64
        }
    };
    (0..n)
        .map(|idx| {
            let (row, col) = (idx / side, idx % side);
            Site::new(format!("s{idx:03}"), lin(-1.0, 1.0, col), lin(0.0, 1.0, row))
        })
        .collect()
}

/// Symmetric square root of the site covariance matrix. Eigenvalues below
/// `1e-12 × λ_max`, including negative ones from rounding, are set to zero
/// so that a rank-deficient `Σ` yields an exactly rank-deficient root.
pub fn covariance_sqrt(sites: &[Site], eta: f64, c: f64) -> Result<DMatrix<f64>> {
    let n = sites.len();
    let sigma = DMatrix::from_fn(n, n, |i, j| gp_covariance(spatial_dist(&sites[i], &sites[j]), eta, c));
    let eig = SymmetricEigen::new(sigma);
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Generation("covariance eigendecomposition failed".into()));
    }
    let cutoff = 1e-12 * eig.eigenvalues.max();
    let root = DVector::from_iterator(
        n,
        eig.eigenvalues
            .iter()
            .map(|&v| if v > cutoff { v.sqrt() } else { 0.0 }),
    );
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&root) * v.transpose())
}

/// One realisation of the noise field at `sites` on `grid`.
///
/// For each basis function, i.i.d. standard normals are correlated across
/// sites by `sqrt(Σ)`. The expansion is divided pointwise by
/// `sqrt(Σ_k B_k(t)²)` so that `Cov(ε_s(t), ε_s'(t)) = C(h_ss')` at every `t`.
pub fn sample_noise<R: Rng>(
    sites: &[Site],
    grid: &Arc<TimeGrid>,
    eta: f64,
    c: f64,
    n_basis: usize,
    rng: &mut R,
) -> Result<Vec<Curve>> {
    let root = covariance_sqrt(sites, eta, c)?;
    let basis = BasisSystem::bspline(n_basis, (grid.start(), grid.end()))?;
    sample_noise_with(&root, &basis, grid, rng)
}

/// [`sample_noise`] with a precomputed `sqrt(Σ)` and basis, for repeated draws.
pub fn sample_noise_with<R: Rng>(
    root: &DMatrix<f64>,
    basis: &BasisSystem,
    grid: &Arc<TimeGrid>,
    rng: &mut R,
) -> Result<Vec<Curve>> {
    let n = root.nrows();
    let k = basis.n_basis();
    // draw order: basis index outer, site inner
    let mut z = DMatrix::zeros(n, k);
    for kk in 0..k {
        for i in 0..n {
            z[(i, kk)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let coef = root * z;
    let design = basis.design_matrix(grid);
    let norms: Vec<f64> = design
        .row_iter()
        .map(|r| r.iter().map(|b| b * b).sum::<f64>().sqrt())
        .collect();
    let values = &design * coef.transpose();
    (0..n)
        .map(|i| {
            Curve::new(
                grid.clone(),
                (0..grid.len()).map(|p| values[(p, i)] / norms[p]).collect(),
            )
        })
        .collect()
}

/// Generate a scenario dataset. The noise draw depends only on the seed,
/// sites, `η`, `c` and basis size, so both scenarios share it.
pub fn sample_dataset(cfg: &ScenarioConfig) -> Result<SpatialFunctionalDataset> {
    cfg.validate()?;
    let grid = Arc::new(cfg.grid()?);
    let sites = site_layout(cfg.n_sites);
    let mut rng = stream(cfg.seed, StreamId::SimulationNoise, 0);
    let noise = sample_noise(&sites, &grid, cfg.eta, cfg.c, cfg.n_basis, &mut rng)?;
    let mean: Vec<f64> = grid
        .points()
        .iter()
        .map(|&t| {
            let m = mean_function(t);
            if cfg.scenario == 2 {
                m * m * m
            } else {
                m
            }
        })
        .collect();
    let curves = noise
        .iter()
        .map(|e| {
            Curve::new(
                grid.clone(),
                e.values()
                    .iter()
                    .zip(&mean)
                    .map(|(x, m)| m + cfg.noise_sd * x)
                    .collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    SpatialFunctionalDataset::new(grid, sites, curves)
}
