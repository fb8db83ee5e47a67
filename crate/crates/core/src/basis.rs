//! Basis systems and least-squares smoothing of sampled curves.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdata::{Curve, SpatialFunctionalDataset, TimeGrid};

/// B-spline order used throughout (cubic).
pub const CUBIC: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum BasisSystem {
    /// Clamped B-splines with equally spaced interior knots on `domain`.
    Bspline {
        order: usize,
        n_basis: usize,
        domain: (f64, f64),
    },
    /// Constant plus sine/cosine pairs of the given period.
    Fourier {
        n_basis: usize,
        domain: (f64, f64),
        period: f64,
    },
}

impl BasisSystem {
    pub fn bspline(n_basis: usize, domain: (f64, f64)) -> Result<Self> {
        Self::bspline_with_order(CUBIC, n_basis, domain)
    }

    pub fn bspline_with_order(order: usize, n_basis: usize, domain: (f64, f64)) -> Result<Self> {
        check_domain(domain)?;
        if order < 1 || n_basis < order {
            return Err(Error::InvalidInput(format!(
                "bspline basis needs n_basis >= order >= 1 (order {order}, n_basis {n_basis})"
            )));
        }
        Ok(Self::Bspline {
            order,
            n_basis,
            domain,
        })
    }

    /// Fourier basis with period `b - a`.
    pub fn fourier(n_basis: usize, domain: (f64, f64)) -> Result<Self> {
        Self::fourier_with_period(n_basis, domain, domain.1 - domain.0)
    }

    pub fn fourier_with_period(n_basis: usize, domain: (f64, f64), period: f64) -> Result<Self> {
        check_domain(domain)?;
        if n_basis == 0 || n_basis % 2 == 0 {
            return Err(Error::InvalidInput(format!(
                "fourier basis needs an odd number of functions, got {n_basis}"
            )));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::InvalidInput(format!("invalid fourier period {period}")));
        }
        Ok(Self::Fourier {
            n_basis,
            domain,
            period,
        })
    }

    pub fn n_basis(&self) -> usize {
        match *self {
            Self::Bspline { n_basis, .. } | Self::Fourier { n_basis, .. } => n_basis,
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        match *self {
            Self::Bspline { domain, .. } | Self::Fourier { domain, .. } => domain,
        }
    }

    /// Same family and size, re-targeted to another domain.
    pub fn on_domain(&self, domain: (f64, f64)) -> Result<Self> {
        match *self {
            Self::Bspline { order, n_basis, .. } => Self::bspline_with_order(order, n_basis, domain),
            Self::Fourier { n_basis, .. } => Self::fourier(n_basis, domain),
        }
    }

    /// Values of every basis function at `t`.
    pub fn evaluate(&self, t: f64) -> Vec<f64> {
        match *self {
            Self::Bspline {
                order,
                n_basis,
                domain,
            } => {
                let knots = clamped_knots(order, n_basis, domain);
                let mut out = vec![0.0; n_basis];
                let (span, vals) = bspline_nonzero(&knots, order, n_basis, t);
                for (r, v) in vals.into_iter().enumerate() {
                    out[span + 1 - order + r] = v;
                }
                out
            }
            Self::Fourier {
                n_basis,
                domain,
                period,
            } => {
                let omega = 2.0 * PI / period;
                let x = t - domain.0;
                let mut out = Vec::with_capacity(n_basis);
                out.push(1.0);
                for m in 1..=(n_basis - 1) / 2 {
                    let arg = m as f64 * omega * x;
                    out.push(arg.sin());
                    out.push(arg.cos());
                }
                out
            }
        }
    }

    /// Design matrix with one row per grid point.
    pub fn design_matrix(&self, grid: &TimeGrid) -> DMatrix<f64> {
        let k = self.n_basis();
        let mut m = DMatrix::zeros(grid.len(), k);
        for (i, &t) in grid.points().iter().enumerate() {
            for (j, v) in self.evaluate(t).into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }
}

fn check_domain(domain: (f64, f64)) -> Result<()> {
    if domain.0.is_finite() && domain.1.is_finite() && domain.1 > domain.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "invalid basis domain [{}, {}]",
            domain.0, domain.1
        )))
    }
}

fn clamped_knots(order: usize, n_basis: usize, (a, b): (f64, f64)) -> Vec<f64> {
    let n_interior = n_basis - order;
    let mut knots = Vec::with_capacity(n_basis + order);
    knots.extend(std::iter::repeat_n(a, order));
    for i in 1..=n_interior {
        knots.push(a + (b - a) * i as f64 / (n_interior + 1) as f64);
    }
    knots.extend(std::iter::repeat_n(b, order));
    knots
}

/// Span index and the `order` non-zero B-spline values at `t` (de Boor's
/// triangular recurrence). Points outside the domain are clamped to it.
fn bspline_nonzero(knots: &[f64], order: usize, n_basis: usize, t: f64) -> (usize, Vec<f64>) {
    let p = order - 1;
    let lo = knots[p];
    let hi = knots[n_basis];
    let t = t.clamp(lo, hi);
    let span = if t >= hi {
        n_basis - 1
    } else {
        // last index with knots[i] <= t, within [p, n_basis - 1]
        let mut s = p;
        while s + 1 < n_basis && knots[s + 1] <= t {
            s += 1;
        }
        s
    };
    let mut vals = vec![0.0; order];
    let mut left = vec![0.0; order];
    let mut right = vec![0.0; order];
    vals[0] = 1.0;
    for j in 1..=p {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = vals[r] / (right[r + 1] + left[j - r]);
            vals[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        vals[j] = saved;
    }
    (span, vals)
}

impl fmt::Display for BasisSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Bspline { n_basis, .. } => write!(f, "bspline:{n_basis}"),
            Self::Fourier { n_basis, .. } => write!(f, "fourier:{n_basis}"),
        }
    }
}

/// Basis request before it is attached to a data domain: `bspline:K`,
/// `fourier:K` or `fourier:K:PERIOD`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BasisSpec {
    Bspline { n_basis: usize },
    Fourier { n_basis: usize, period: Option<f64> },
}

impl BasisSpec {
    /// Attach to the domain spanned by `grid`.
    pub fn for_grid(&self, grid: &TimeGrid) -> Result<BasisSystem> {
        let domain = (grid.start(), grid.end());
        match *self {
            BasisSpec::Bspline { n_basis } => BasisSystem::bspline(n_basis, domain),
            BasisSpec::Fourier { n_basis, period } => match period {
                Some(p) => BasisSystem::fourier_with_period(n_basis, domain, p),
                None => BasisSystem::fourier(n_basis, domain),
            },
        }
    }
}

impl FromStr for BasisSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("unrecognised basis `{s}`"));
        let mut parts = s.split(':');
        let family = parts.next().ok_or_else(bad)?;
        let n_basis: usize = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let extra = parts.next();
        if parts.next().is_some() {
            return Err(bad());
        }
        match (family, extra) {
            ("bspline", None) => Ok(BasisSpec::Bspline { n_basis }),
            ("fourier", None) => Ok(BasisSpec::Fourier {
                n_basis,
                period: None,
            }),
            ("fourier", Some(p)) => Ok(BasisSpec::Fourier {
                n_basis,
                period: Some(p.parse().map_err(|_| bad())?),
            }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for BasisSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisSpec::Bspline { n_basis } => write!(f, "bspline:{n_basis}"),
            BasisSpec::Fourier {
                n_basis,
                period: None,
            } => write!(f, "fourier:{n_basis}"),
            BasisSpec::Fourier {
                n_basis,
                period: Some(p),
            } => write!(f, "fourier:{n_basis}:{p}"),
        }
    }
}

/// Least-squares projector onto a basis for one fixed grid; reuse it to
/// smooth many curves.
#[derive(Debug, Clone)]
pub struct BasisProjector {
    grid: Arc<TimeGrid>,
    design: DMatrix<f64>,
    pinv: DMatrix<f64>,
}

impl BasisProjector {
    pub fn new(basis: &BasisSystem, grid: Arc<TimeGrid>) -> Result<Self> {
        if grid.len() < basis.n_basis() {
            return Err(Error::Underdetermined {
                samples: grid.len(),
                n_basis: basis.n_basis(),
            });
        }
        let design = basis.design_matrix(&grid);
        let svd = design.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > 1e-12 * smax) {
            return Err(Error::Underdetermined {
                samples: grid.len(),
                n_basis: basis.n_basis(),
            });
        }
        let pinv = svd
            .pseudo_inverse(0.0)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(Self { grid, design, pinv })
    }

    pub fn coefficients(&self, raw: &Curve) -> Result<DVector<f64>> {
        if !(Arc::ptr_eq(raw.grid(), &self.grid) || **raw.grid() == *self.grid) {
            return Err(Error::GridMismatch);
        }
        Ok(&self.pinv * DVector::from_column_slice(raw.values()))
    }

    pub fn project(&self, raw: &Curve) -> Result<Curve> {
        let coef = self.coefficients(raw)?;
        let fitted = &self.design * coef;
        Curve::new(raw.grid().clone(), fitted.as_slice().to_vec())
    }
}

/// Least-squares projection of `raw` onto `basis`, re-evaluated on the
/// original grid.
pub fn smooth_to_basis(raw: &Curve, basis: &BasisSystem) -> Result<Curve> {
    BasisProjector::new(basis, raw.grid().clone())?.project(raw)
}

/// Smooth every curve of a dataset with one basis.
pub fn smooth_dataset(
    data: &SpatialFunctionalDataset,
    basis: &BasisSystem,
) -> Result<SpatialFunctionalDataset> {
    let projector = BasisProjector::new(basis, data.grid().clone())?;
    data.map_curves(|c| projector.project(c))
}
