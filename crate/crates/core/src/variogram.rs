//! Empirical trace-variogram estimation and parametric model fitting.
//!
//! The trace-variogram summarises spatial dependence of whole curves:
//! `γ(h) = ½ E‖X_{s_i} − X_{s_j}‖²` for sites `h` apart. It is estimated by
//! binning site pairs on distance and averaging their squared L² distances,
//! then a parametric model is fitted by weighted least squares with Cressie
//! weights `N(h) / γ(h; θ)²`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdata::{l2_dist_sq, spatial_dist, SpatialFunctionalDataset};
use crate::optim::NelderMead;

pub const DEFAULT_N_BINS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramBin {
    /// Mean pair distance within the bin.
    pub lag: f64,
    pub gamma: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalVariogram {
    pub bins: Vec<VariogramBin>,
    pub max_lag: f64,
}

impl EmpiricalVariogram {
    pub fn n_pairs(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "lag,gamma,count")?;
        for b in &self.bins {
            writeln!(w, "{},{},{}", b.lag, b.gamma, b.count)?;
        }
        Ok(())
    }
}

/// Bin site pairs on distance and average half their squared L² distance.
///
/// Bins are equal-width on `[0, max_lag]`; pairs farther apart than
/// `max_lag` are dropped and empty bins omitted.
pub fn empirical_trace_variogram(
    data: &SpatialFunctionalDataset,
    n_bins: usize,
    max_lag: f64,
) -> Result<EmpiricalVariogram> {
    if data.len() < 2 {
        return Err(Error::InvalidInput(
            "variogram estimation needs at least 2 sites".into(),
        ));
    }
    if n_bins == 0 || !(max_lag > 0.0) || !max_lag.is_finite() {
        return Err(Error::InvalidInput(format!(
            "invalid binning (n_bins {n_bins}, max_lag {max_lag})"
        )));
    }
    let width = max_lag / n_bins as f64;
    let mut sum_sq = vec![0.0; n_bins];
    let mut sum_lag = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    let (sites, curves) = (data.sites(), data.curves());
    for i in 0..sites.len() {
        for j in i + 1..sites.len() {
            let h = spatial_dist(&sites[i], &sites[j]);
            if h > max_lag {
                continue;
            }
            let k = ((h / width) as usize).min(n_bins - 1);
            sum_sq[k] += l2_dist_sq(&curves[i], &curves[j])?;
            sum_lag[k] += h;
            count[k] += 1;
        }
    }
    let bins: Vec<VariogramBin> = (0..n_bins)
        .filter(|&k| count[k] > 0)
        .map(|k| VariogramBin {
            lag: sum_lag[k] / count[k] as f64,
            gamma: sum_sq[k] / (2.0 * count[k] as f64),
            count: count[k],
        })
        .collect();
    if bins.is_empty() {
        return Err(Error::EmptyVariogram { max_lag });
    }
    Ok(EmpiricalVariogram { bins, max_lag })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariogramFamily {
    Exponential,
    Spherical,
}

impl fmt::Display for VariogramFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VariogramFamily::Exponential => "exponential",
            VariogramFamily::Spherical => "spherical",
        })
    }
}

impl FromStr for VariogramFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exponential" | "exp" => Ok(Self::Exponential),
            "spherical" | "sph" => Ok(Self::Spherical),
            _ => Err(Error::InvalidInput(format!("unknown variogram family `{s}`"))),
        }
    }
}

/// `γ(h) = τ + σp·g(h/r)` for `h > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramModel {
    pub family: VariogramFamily,
    pub nugget: f64,
    pub partial_sill: f64,
    pub range: f64,
}

impl VariogramModel {
    pub fn new(family: VariogramFamily, nugget: f64, partial_sill: f64, range: f64) -> Result<Self> {
        let ok = nugget.is_finite()
            && nugget >= 0.0
            && partial_sill.is_finite()
            && partial_sill > 0.0
            && range.is_finite()
            && range > 0.0;
        if !ok {
            return Err(Error::InvalidInput(format!(
                "invalid variogram parameters (nugget {nugget}, partial sill {partial_sill}, range {range})"
            )));
        }
        Ok(Self {
            family,
            nugget,
            partial_sill,
            range,
        })
    }

    pub fn exponential(nugget: f64, partial_sill: f64, range: f64) -> Result<Self> {
        Self::new(VariogramFamily::Exponential, nugget, partial_sill, range)
    }

    pub fn spherical(nugget: f64, partial_sill: f64, range: f64) -> Result<Self> {
        Self::new(VariogramFamily::Spherical, nugget, partial_sill, range)
    }

    pub fn sill(&self) -> f64 {
        self.nugget + self.partial_sill
    }

    /// Semivariance at lag `h`; `γ(0) = τ`.
    pub fn eval(&self, h: f64) -> Result<f64> {
        if !(h >= 0.0) {
            return Err(Error::InvalidInput(format!("negative or NaN lag {h}")));
        }
        Ok(self.semivariance(h))
    }

    pub(crate) fn semivariance(&self, h: f64) -> f64 {
        let x = h / self.range;
        let g = match self.family {
            VariogramFamily::Exponential => -(-x).exp_m1(),
            VariogramFamily::Spherical => {
                if x >= 1.0 {
                    1.0
                } else {
                    1.5 * x - 0.5 * x * x * x
                }
            }
        };
        self.nugget + self.partial_sill * g
    }
}

/// Weighted least-squares criterion `Σ N(h) (γ̂(h) − γ(h;θ))² / γ(h;θ)²`.
pub fn wls_objective(emp: &EmpiricalVariogram, model: &VariogramModel) -> f64 {
    emp.bins
        .iter()
        .map(|b| {
            let g = model.semivariance(b.lag);
            let r = b.gamma - g;
            b.count as f64 * r * r / (g * g)
        })
        .sum()
}

/// Parameter box used by [`fit_model`], in natural units:
/// `(lower, upper)` for nugget, partial sill and range.
pub fn parameter_bounds(emp: &EmpiricalVariogram) -> [(f64, f64); 3] {
    let gmax = emp.bins.iter().map(|b| b.gamma).fold(0.0, f64::max);
    [
        (1e-10 * gmax, 100.0 * gmax),
        (1e-10 * gmax, 100.0 * gmax),
        (1e-2 * emp.max_lag, 1e2 * emp.max_lag),
    ]
}

/// Fit `family` to the binned estimate by multi-start Nelder–Mead on the
/// log-parameters.
///
/// Twelve deterministic starts cover nugget ∈ {floor, mean/2}, partial sill ∈
/// {mean, max} and range ∈ {max_lag/4, max_lag/2, max_lag}, where mean and
/// max refer to the binned γ̂. Ties are broken by the lexicographically
/// smallest parameter vector.
pub fn fit_model(emp: &EmpiricalVariogram, family: VariogramFamily) -> Result<VariogramModel> {
    if emp.bins.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "need at least 3 non-empty bins, got {}",
            emp.bins.len()
        )));
    }
    let gmax = emp.bins.iter().map(|b| b.gamma).fold(0.0, f64::max);
    if !(gmax > 0.0) || !gmax.is_finite() {
        return Err(Error::DegenerateFit(
            "all binned semivariances are zero; the curves appear identical".into(),
        ));
    }
    let gmean = emp.bins.iter().map(|b| b.gamma).sum::<f64>() / emp.bins.len() as f64;
    let bounds = parameter_bounds(emp);
    let lower: Vec<f64> = bounds.iter().map(|b| b.0.ln()).collect();
    let upper: Vec<f64> = bounds.iter().map(|b| b.1.ln()).collect();

    let objective = |x: &[f64]| {
        let m = VariogramModel {
            family,
            nugget: x[0].exp(),
            partial_sill: x[1].exp(),
            range: x[2].exp(),
        };
        wls_objective(emp, &m)
    };

    let nuggets = [bounds[0].0, 0.5 * gmean];
    let sills = [gmean, gmax];
    let ranges = [emp.max_lag / 4.0, emp.max_lag / 2.0, emp.max_lag];
    let nm = NelderMead::default();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for &tau in &nuggets {
        for &sp in &sills {
            for &r in &ranges {
                let x0 = [tau.ln(), sp.ln(), r.ln()];
                let m = nm.minimize(objective, &x0, &lower, &upper);
                let better = match &best {
                    None => true,
                    Some((f, x)) => {
                        m.f < *f
                            || (m.f == *f
                                && m.x.iter().zip(x).find(|(a, b)| a != b).is_some_and(|(a, b)| a < b))
                    }
                };
                if better {
                    best = Some((m.f, m.x));
                }
            }
        }
    }
    let (f, x) = best.expect("at least one start");
    if !f.is_finite() {
        return Err(Error::DegenerateFit("objective is not finite at any start".into()));
    }
    VariogramModel::new(family, x[0].exp(), x[1].exp(), x[2].exp())
}

/// Produces a variogram model for a training set.
pub trait ModelFitter: Sync {
    fn fit(&self, data: &SpatialFunctionalDataset) -> Result<VariogramModel>;
}

/// A fixed model, used as-is for every training set.
impl ModelFitter for VariogramModel {
    fn fit(&self, _data: &SpatialFunctionalDataset) -> Result<VariogramModel> {
        Ok(*self)
    }
}

/// Empirical estimation followed by a WLS fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramSettings {
    pub family: VariogramFamily,
    pub n_bins: usize,
    /// Defaults to half the largest pairwise distance of the training set.
    pub max_lag: Option<f64>,
}

impl Default for VariogramSettings {
    fn default() -> Self {
        Self {
            family: VariogramFamily::Exponential,
            n_bins: DEFAULT_N_BINS,
            max_lag: None,
        }
    }
}

impl VariogramSettings {
    pub fn empirical(&self, data: &SpatialFunctionalDataset) -> Result<EmpiricalVariogram> {
        let max_lag = match self.max_lag {
            Some(m) => m,
            None => 0.5 * data.max_pairwise_distance(),
        };
        empirical_trace_variogram(data, self.n_bins, max_lag)
    }
}

impl ModelFitter for VariogramSettings {
    fn fit(&self, data: &SpatialFunctionalDataset) -> Result<VariogramModel> {
        fit_model(&self.empirical(data)?, self.family)
    }
}
