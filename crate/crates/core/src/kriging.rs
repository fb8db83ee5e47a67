//! Functional ordinary kriging.
//!
//! For training sites `s_1..s_n` and target `s_0` the weights solve
//!
//! ```text
//! [ γ(h_11) … γ(h_1n) 1 ] [ λ_1 ]   [ γ(h_01) ]
//! [   ⋮         ⋮     ⋮ ] [  ⋮  ] = [    ⋮    ]
//! [ γ(h_n1) … γ(h_nn) 1 ] [ λ_n ]   [ γ(h_0n) ]
//! [   1     …   1     0 ] [  m  ]   [    1    ]
//! ```
//!
//! with `γ(h_ii) = 0` on the diagonal, and the prediction is the pointwise
//! combination `X*(t) = Σ λ_i X_{s_i}(t)`.
//!
//! The system is a symmetric saddle point. It is solved by conjugate
//! gradients on the constraint null space `{Σλ = 0}`, where the negated γ
//! block of a valid variogram is positive definite. Breakdowns are retried
//! with a small diagonal shift, and dense LU is the last resort.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdata::{spatial_dist, Curve, Site, SpatialFunctionalDataset};
use crate::variogram::VariogramModel;

/// Distance under which a target is treated as sitting on a training site.
pub const COINCIDENCE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Relative residual target `‖Ax − b‖ ≤ tol·‖b‖`.
    pub tol: f64,
    /// Iteration cap; `None` means `10·(n+1)`.
    pub max_iter: Option<usize>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: None,
        }
    }
}

/// The bordered `(n+1)×(n+1)` system, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrigingSystem {
    pub n: usize,
    pub matrix: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl KrigingSystem {
    pub fn dim(&self) -> usize {
        self.n + 1
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.dim() + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.matrix.chunks(self.dim()).map(|r| r.to_vec()).collect()
    }

    /// `‖A x − b‖ / ‖b‖` for `x = (λ, m)`.
    pub fn relative_residual(&self, lambda: &[f64], multiplier: f64) -> f64 {
        let dim = self.dim();
        let mut x = lambda.to_vec();
        x.push(multiplier);
        let mut sq = 0.0;
        for i in 0..dim {
            let row = &self.matrix[i * dim..(i + 1) * dim];
            let ax: f64 = row.iter().zip(&x).map(|(a, b)| a * b).sum();
            sq += (ax - self.rhs[i]).powi(2);
        }
        sq.sqrt() / norm(&self.rhs)
    }

    fn max_abs(&self) -> f64 {
        self.matrix.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    /// Conjugate gradients on the constraint null space.
    ProjectedCg,
    /// Projected CG after shifting the γ diagonal.
    JitteredCg,
    /// Dense LU with one refinement step.
    Direct,
    /// Target coincides with a training site; no system solved.
    Coincident,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrigingSolution {
    pub lambda: Vec<f64>,
    pub multiplier: f64,
    /// Relative residual of the unshifted system.
    pub residual_norm: f64,
    pub iterations: usize,
    pub method: SolveMethod,
}

/// Build the ordinary-kriging system for `target`.
pub fn assemble_system(
    train: &SpatialFunctionalDataset,
    model: &VariogramModel,
    target: &Site,
) -> Result<KrigingSystem> {
    let n = train.len();
    let dim = n + 1;
    let sites = train.sites();
    let mut matrix = vec![0.0; dim * dim];
    for i in 0..n {
        for j in i + 1..n {
            let h = spatial_dist(&sites[i], &sites[j]);
            if h <= 0.0 {
                return Err(Error::SingularSystem(format!(
                    "training sites {} and {} coincide",
                    sites[i].id, sites[j].id
                )));
            }
            let g = model.semivariance(h);
            matrix[i * dim + j] = g;
            matrix[j * dim + i] = g;
        }
        matrix[i * dim + n] = 1.0;
        matrix[n * dim + i] = 1.0;
    }
    let mut rhs: Vec<f64> = sites
        .iter()
        .map(|s| model.semivariance(spatial_dist(s, target)))
        .collect();
    rhs.push(1.0);
    Ok(KrigingSystem { n, matrix, rhs })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project_out_mean(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    for x in v.iter_mut() {
        *x -= mean;
    }
}

enum CgOutcome {
    Converged {
        lambda: Vec<f64>,
        multiplier: f64,
        iterations: usize,
    },
    Breakdown,
    Stalled,
}

/// CG for `−PΓP z = P(Γλ₀ − g)`, `λ = λ₀ + z`, `λ₀ = 1/n`, where `P`
/// removes the mean. `shift` is subtracted from the γ diagonal.
fn projected_cg(sys: &KrigingSystem, shift: f64, tol: f64, max_iter: usize) -> CgOutcome {
    let n = sys.n;
    let g = &sys.rhs[..n];
    let gamma_mul = |x: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let row = &sys.matrix[i * (n + 1)..i * (n + 1) + n];
                dot(row, x) - shift * x[i]
            })
            .collect()
    };
    let finish = |lambda: &[f64]| -> (f64, f64) {
        let gl = gamma_mul(lambda);
        let multiplier = g.iter().zip(&gl).map(|(a, b)| a - b).sum::<f64>() / n as f64;
        (multiplier, sys.relative_residual(lambda, multiplier))
    };
    let block_residual = |lambda: &[f64]| -> Vec<f64> {
        // r = −P(g − Γλ)
        let gl = gamma_mul(lambda);
        let mut r: Vec<f64> = gl.iter().zip(g).map(|(a, b)| a - b).collect();
        project_out_mean(&mut r);
        r
    };

    let mut lambda = vec![1.0 / n as f64; n];
    if n == 1 {
        let (multiplier, _) = finish(&lambda);
        return CgOutcome::Converged {
            lambda,
            multiplier,
            iterations: 0,
        };
    }
    let target = tol * norm(&sys.rhs);
    let mut r = block_residual(&lambda);
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let mut it = 0;
    loop {
        if rs.sqrt() <= target {
            let (multiplier, res) = finish(&lambda);
            // Residual of the shifted system; the caller checks the original.
            let shifted_ok = if shift == 0.0 { res <= tol } else { true };
            if shifted_ok {
                return CgOutcome::Converged {
                    lambda,
                    multiplier,
                    iterations: it,
                };
            }
            // Recursive residual drifted: restart from the true one.
            r = block_residual(&lambda);
            rs = dot(&r, &r);
            if rs.sqrt() <= target {
                return CgOutcome::Stalled;
            }
            p = r.clone();
        }
        if it >= max_iter {
            return CgOutcome::Stalled;
        }
        let mut q: Vec<f64> = gamma_mul(&p).into_iter().map(|x| -x).collect();
        project_out_mean(&mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) || !pq.is_finite() {
            return CgOutcome::Breakdown;
        }
        let alpha = rs / pq;
        for i in 0..n {
            lambda[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        project_out_mean(&mut r);
        let rs_new = dot(&r, &r);
        let beta = rs_new / rs;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        project_out_mean(&mut p);
        rs = rs_new;
        it += 1;
    }
}

/// Dense LU solve of the full bordered system with one refinement step.
pub fn solve_direct(sys: &KrigingSystem) -> Result<(Vec<f64>, f64)> {
    let dim = sys.dim();
    let a = DMatrix::from_row_slice(dim, dim, &sys.matrix);
    let b = DVector::from_column_slice(&sys.rhs);
    let lu = a.clone().lu();
    let mut x = lu
        .solve(&b)
        .ok_or_else(|| Error::SingularSystem("LU factorisation is singular".into()))?;
    let r = &b - &a * &x;
    if let Some(dx) = lu.solve(&r) {
        let refined = &x + dx;
        let r2 = &b - &a * &refined;
        if r2.norm() < r.norm() {
            x = refined;
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem("non-finite LU solution".into()));
    }
    let lambda = x.as_slice()[..sys.n].to_vec();
    Ok((lambda, x[sys.n]))
}

/// Solve for the kriging weights and Lagrange multiplier.
///
/// Projected CG first; on breakdown or stagnation the γ diagonal is shifted
/// by `1e-10·max|A|`, growing ×10 up to three times; dense LU last.
pub fn solve_weights(sys: &KrigingSystem, settings: &SolverSettings) -> Result<KrigingSolution> {
    if sys.n == 0 || sys.matrix.len() != sys.dim() * sys.dim() || sys.rhs.len() != sys.dim() {
        return Err(Error::InvalidInput("malformed kriging system".into()));
    }
    let tol = settings.tol;
    let max_iter = settings.max_iter.unwrap_or(10 * (sys.n + 1));
    let base_jitter = 1e-10 * sys.max_abs();
    let shifts = [
        0.0,
        base_jitter,
        base_jitter * 10.0,
        base_jitter * 100.0,
    ];
    for (attempt, &shift) in shifts.iter().enumerate() {
        if let CgOutcome::Converged {
            lambda,
            multiplier,
            iterations,
        } = projected_cg(sys, shift, tol, max_iter)
        {
            let residual_norm = sys.relative_residual(&lambda, multiplier);
            if residual_norm <= tol {
                return Ok(KrigingSolution {
                    lambda,
                    multiplier,
                    residual_norm,
                    iterations,
                    method: if attempt == 0 {
                        SolveMethod::ProjectedCg
                    } else {
                        SolveMethod::JitteredCg
                    },
                });
            }
        }
    }
    let (lambda, multiplier) = solve_direct(sys)?;
    let residual_norm = sys.relative_residual(&lambda, multiplier);
    if residual_norm <= tol {
        Ok(KrigingSolution {
            lambda,
            multiplier,
            residual_norm,
            iterations: 0,
            method: SolveMethod::Direct,
        })
    } else {
        Err(Error::SolverFailure {
            residual: residual_norm,
        })
    }
}

/// `X*(t) = Σ λ_i X_i(t)`.
pub fn predict_curve(train: &SpatialFunctionalDataset, lambda: &[f64]) -> Result<Curve> {
    if lambda.len() != train.len() {
        return Err(Error::InvalidInput(format!(
            "{} weights for {} training curves",
            lambda.len(),
            train.len()
        )));
    }
    let mut out = vec![0.0; train.grid().len()];
    for (w, c) in lambda.iter().zip(train.curves()) {
        for (o, x) in out.iter_mut().zip(c.values()) {
            *o += w * x;
        }
    }
    Curve::new(train.grid().clone(), out)
}

/// Prediction together with the system and weights that produced it.
#[derive(Debug, Clone)]
pub struct KrigingPrediction {
    pub curve: Curve,
    /// `None` when the target coincides with a training site.
    pub system: Option<KrigingSystem>,
    pub solution: KrigingSolution,
}

pub fn krige_detailed(
    train: &SpatialFunctionalDataset,
    model: &VariogramModel,
    target: &Site,
    settings: &SolverSettings,
) -> Result<KrigingPrediction> {
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    if let Some(i) = train
        .sites()
        .iter()
        .position(|s| spatial_dist(s, target) <= COINCIDENCE_EPS)
    {
        let mut lambda = vec![0.0; train.len()];
        lambda[i] = 1.0;
        return Ok(KrigingPrediction {
            curve: train.curves()[i].clone(),
            system: None,
            solution: KrigingSolution {
                lambda,
                multiplier: 0.0,
                residual_norm: 0.0,
                iterations: 0,
                method: SolveMethod::Coincident,
            },
        });
    }
    let system = assemble_system(train, model, target)?;
    let solution = solve_weights(&system, settings)?;
    let curve = predict_curve(train, &solution.lambda)?;
    Ok(KrigingPrediction {
        curve,
        system: Some(system),
        solution,
    })
}

/// Kriging prediction of the curve at `target`.
pub fn krige(
    train: &SpatialFunctionalDataset,
    model: &VariogramModel,
    target: &Site,
    settings: &SolverSettings,
) -> Result<Curve> {
    krige_detailed(train, model, target, settings).map(|p| p.curve)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fdata::TimeGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(sites: &[(f64, f64)], curves: Vec<Vec<f64>>) -> SpatialFunctionalDataset {
        let g = Arc::new(TimeGrid::uniform(0.0, 1.0, curves[0].len()).unwrap());
        SpatialFunctionalDataset::new(
            g.clone(),
            sites
                .iter()
                .enumerate()
                .map(|(i, &(u, v))| Site::new(format!("s{i}"), u, v))
                .collect(),
            curves
                .into_iter()
                .map(|c| Curve::new(g.clone(), c).unwrap())
                .collect(),
        )
        .unwrap()
    }

    /// Gauss–Jordan elimination with partial pivoting on the dense system.
    fn gauss_solve(rows: Vec<Vec<f64>>, rhs: Vec<f64>) -> Vec<f64> {
        let n = rhs.len();
        let mut a: Vec<Vec<f64>> = rows
            .into_iter()
            .zip(rhs)
            .map(|(mut r, b)| {
                r.push(b);
                r
            })
            .collect();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, p);
            for r in 0..n {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..=n {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        (0..n).map(|i| a[i][n] / a[i][i]).collect()
    }

    #[test]
    fn single_site_system() {
        let d = dataset(&[(0.0, 0.0)], vec![vec![1.0, 2.0]]);
        let m = VariogramModel::exponential(0.0, 1.0, 1.0).unwrap();
        let target = Site::at(3.0, 4.0);
        let sys = assemble_system(&d, &m, &target).unwrap();
        assert_eq!(sys.rows(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let g = m.eval(5.0).unwrap();
        assert_eq!(sys.rhs, vec![g, 1.0]);
        let sol = solve_weights(&sys, &SolverSettings::default()).unwrap();
        assert_eq!(sol.lambda, vec![1.0]);
        assert!((sol.multiplier - g).abs() < 1e-15);
        let c = krige(&d, &m, &target, &SolverSettings::default()).unwrap();
        assert_eq!(c.values(), &[1.0, 2.0]);
    }

    #[test]
    fn symmetric_pair_gets_equal_weights() {
        let d = dataset(&[(-1.0, 0.0), (1.0, 0.0)], vec![vec![1.0; 3], vec![3.0; 3]]);
        let m = VariogramModel::exponential(0.1, 1.0, 2.0).unwrap();
        let sys = assemble_system(&d, &m, &Site::at(0.0, 0.7)).unwrap();
        assert_eq!(sys.get(0, 1), sys.get(1, 0));
        let sol = solve_weights(&sys, &SolverSettings::default()).unwrap();
        assert!((sol.lambda[0] - 0.5).abs() < 1e-12 && (sol.lambda[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn assembly_matches_entrywise_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<(f64, f64)> = (0..5).map(|_| (rng.random(), rng.random())).collect();
        let d = dataset(&pts, vec![vec![0.0; 2]; 5]);
        let m = VariogramModel::spherical(0.2, 0.8, 0.9).unwrap();
        let t = Site::at(0.3, 0.4);
        let sys = assemble_system(&d, &m, &t).unwrap();
        let gam = |h: f64| {
            if h >= 0.9 { 1.0 } else { 0.2 + 0.8 * (1.5 * h / 0.9 - 0.5 * (h / 0.9).powi(3)) }
        };
        for i in 0..6 {
            for j in 0..6 {
                let expected = match (i < 5, j < 5) {
                    (true, true) if i == j => 0.0,
                    (true, true) => gam(((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt()),
                    (false, false) => 0.0,
                    _ => 1.0,
                };
                assert!((sys.get(i, j) - expected).abs() < 1e-14, "({i},{j})");
            }
            let b = if i < 5 { gam(((pts[i].0 - 0.3f64).powi(2) + (pts[i].1 - 0.4f64).powi(2)).sqrt()) } else { 1.0 };
            assert!((sys.rhs[i] - b).abs() < 1e-14);
        }
    }

    #[test]
    fn iterative_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..30 {
            let pts: Vec<(f64, f64)> = (0..8).map(|_| (rng.random(), rng.random())).collect();
            let d = dataset(&pts, vec![vec![0.0; 2]; 8]);
            let m = VariogramModel::exponential(rng.random::<f64>() * 0.2, 1.0, 0.2 + rng.random::<f64>()).unwrap();
            let sys = assemble_system(&d, &m, &Site::at(rng.random(), rng.random())).unwrap();
            let sol = solve_weights(&sys, &SolverSettings::default()).unwrap();
            let oracle = gauss_solve(sys.rows(), sys.rhs.clone());
            for i in 0..8 {
                assert!((sol.lambda[i] - oracle[i]).abs() < 1e-8);
            }
            assert!((sol.multiplier - oracle[8]).abs() < 1e-8);
            assert!((sol.lambda.iter().sum::<f64>() - 1.0).abs() < 1e-8);
            assert!(sol.residual_norm <= 1e-10);
        }
    }

    #[test]
    fn prediction_is_weighted_sum() {
        let d = dataset(&[(0.0, 0.0), (1.0, 0.0)], vec![vec![0.0, 0.5, 1.0], vec![0.0, -0.5, -1.0]]);
        let c = predict_curve(&d, &[0.5, 0.5]).unwrap();
        assert_eq!(c.values(), &[0.0, 0.0, 0.0]);
        assert!(predict_curve(&d, &[1.0]).is_err());
    }

    #[test]
    fn identical_curves_are_reproduced() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<(f64, f64)> = (0..7).map(|_| (rng.random(), rng.random())).collect();
        let curve = vec![1.5, -2.0, 0.25, 4.0];
        let d = dataset(&pts, vec![curve.clone(); 7]);
        let m = VariogramModel::exponential(0.0, 1.0, 0.5).unwrap();
        let c = krige(&d, &m, &Site::at(0.5, 0.5), &SolverSettings::default()).unwrap();
        for (a, b) in c.values().iter().zip(&curve) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn coincident_target_returns_observation() {
        let d = dataset(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let m = VariogramModel::exponential(0.0, 1.0, 1.0).unwrap();
        let c = krige(&d, &m, &Site::at(1.0, 0.0), &SolverSettings::default()).unwrap();
        assert_eq!(c.values(), &[3.0, 4.0]);
        // without the shortcut, the solved system interpolates as well
        let sys = assemble_system(&d, &m, &Site::at(1.0, 0.0)).unwrap();
        let sol = solve_weights(&sys, &SolverSettings::default()).unwrap();
        assert!((sol.lambda[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn grid_prediction_matches_composed_oracle() {
        let mut pts = Vec::new();
        let mut curves = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                pts.push((i as f64, j as f64));
                curves.push((0..5).map(|k| (i * 3 + j) as f64 + 0.1 * k as f64 * (j as f64 - 1.0)).collect());
            }
        }
        let d = dataset(&pts, curves);
        let m = VariogramModel::exponential(0.05, 2.0, 1.5).unwrap();
        let t = Site::at(0.6, 1.3);
        let c = krige(&d, &m, &t, &SolverSettings::default()).unwrap();
        let sys = assemble_system(&d, &m, &t).unwrap();
        let w = gauss_solve(sys.rows(), sys.rhs.clone());
        for k in 0..5 {
            let oracle: f64 = (0..9).map(|i| w[i] * d.curves()[i].values()[k]).sum();
            assert!((c.values()[k] - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn ill_conditioned_system_still_solves() {
        // tightly clustered sites with a long range and no nugget
        let pts: Vec<(f64, f64)> = (0..20).map(|i| (1e-3 * (i % 5) as f64, 1e-3 * (i / 5) as f64)).collect();
        let d = dataset(&pts, vec![vec![0.0; 2]; 20]);
        let m = VariogramModel::exponential(0.0, 1.0, 100.0).unwrap();
        let sys = assemble_system(&d, &m, &Site::at(0.5, 0.5)).unwrap();
        let sol = solve_weights(&sys, &SolverSettings::default()).unwrap();
        assert!(sol.residual_norm <= 1e-10);
        assert!((sol.lambda.iter().sum::<f64>() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn malformed_system_rejected() {
        let sys = KrigingSystem { n: 2, matrix: vec![0.0; 4], rhs: vec![1.0; 3] };
        assert!(solve_weights(&sys, &SolverSettings::default()).is_err());
    }
}
