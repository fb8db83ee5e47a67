//! Pointwise bootstrap band: resample sites with replacement, re-fit and
//! re-krige each resample, and take pointwise quantiles of the predictions.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::percentile_sorted;
use crate::error::{Error, Result};
use crate::fdata::{Curve, Site, SpatialFunctionalDataset};
use crate::kriging::{krige, SolverSettings};
use crate::metrics::Envelope;
use crate::rng::{stream, StreamId};
use crate::variogram::ModelFitter;

/// Coordinate offset per repeat of a resampled site.
pub const DUPLICATE_JITTER: f64 = 1e-9;

/// Share of failed resamples tolerated.
pub const MAX_RESAMPLE_FAILURE_RATE: f64 = 0.20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub b: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            b: 1000,
            alpha: crate::conformal::DEFAULT_ALPHA,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BootstrapBand {
    pub center: Curve,
    pub lower: Curve,
    pub upper: Curve,
    pub alpha: f64,
    pub n_resamples: usize,
    pub n_failed: usize,
}

impl Envelope for BootstrapBand {
    fn lower(&self) -> &Curve {
        &self.lower
    }
    fn upper(&self) -> &Curve {
        &self.upper
    }
}

impl BootstrapBand {
    /// Band CSV with an empty `S` column and a `method` tag.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,center,lower,upper,S,method")?;
        let g = self.center.grid();
        for k in 0..g.len() {
            writeln!(
                w,
                "{},{},{},{},,bootstrap",
                g.points()[k],
                self.center.values()[k],
                self.lower.values()[k],
                self.upper.values()[k]
            )?;
        }
        Ok(())
    }
}

/// `b` index vectors of length `n`, each from its own derived stream.
pub fn resample_indices(n: usize, b: usize, seed: u64) -> Vec<Vec<usize>> {
    (0..b)
        .map(|r| {
            let mut rng = stream(seed, StreamId::Bootstrap, r as u64);
            (0..n).map(|_| rng.random_range(0..n)).collect()
        })
        .collect()
}

/// Dataset for one resample. The `k`-th repeat of a site is shifted by
/// `k × 1e-9` in both coordinates and its id suffixed with `#k`.
pub fn build_resample(data: &SpatialFunctionalDataset, idx: &[usize]) -> Result<SpatialFunctionalDataset> {
    let mut seen = vec![0usize; data.len()];
    let mut sites = Vec::with_capacity(idx.len());
    let mut curves = Vec::with_capacity(idx.len());
    for &i in idx {
        let s = data
            .sites()
            .get(i)
            .ok_or_else(|| Error::InvalidInput(format!("resample index {i} out of range")))?;
        let k = seen[i];
        seen[i] += 1;
        sites.push(if k == 0 {
            s.clone()
        } else {
            let d = DUPLICATE_JITTER * k as f64;
            Site::new(format!("{}#{k}", s.id), s.u + d, s.v + d)
        });
        curves.push(data.curves()[i].clone());
    }
    SpatialFunctionalDataset::new(data.grid().clone(), sites, curves)
}

/// Band from explicit resamples.
pub fn bootstrap_band_from(
    data: &SpatialFunctionalDataset,
    target: &Site,
    fitter: &dyn ModelFitter,
    resamples: &[Vec<usize>],
    alpha: f64,
    solver: &SolverSettings,
) -> Result<BootstrapBand> {
    if data.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "bootstrap needs at least 3 sites, got {}",
            data.len()
        )));
    }
    if resamples.len() < 2 {
        return Err(Error::InvalidInput("bootstrap needs at least 2 resamples".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let model = fitter.fit(data)?;
    let center = krige(data, &model, target, solver)?;

    let preds: Vec<Option<Curve>> = resamples
        .par_iter()
        .map(|idx| {
            let rs = build_resample(data, idx).ok()?;
            let m = fitter.fit(&rs).ok()?;
            krige(&rs, &m, target, solver).ok()
        })
        .collect();
    let ok: Vec<Curve> = preds.into_iter().flatten().collect();
    let n_failed = resamples.len() - ok.len();
    if ok.len() < 2 || n_failed as f64 > MAX_RESAMPLE_FAILURE_RATE * resamples.len() as f64 {
        return Err(Error::BaselineFailure {
            failed: n_failed,
            total: resamples.len(),
        });
    }

    let m = center.len();
    let mut lower = Vec::with_capacity(m);
    let mut upper = Vec::with_capacity(m);
    let mut column = vec![0.0; ok.len()];
    for k in 0..m {
        for (c, p) in column.iter_mut().zip(&ok) {
            *c = p.values()[k];
        }
        column.sort_by(f64::total_cmp);
        lower.push(percentile_sorted(&column, 100.0 * alpha / 2.0));
        upper.push(percentile_sorted(&column, 100.0 * (1.0 - alpha / 2.0)));
    }
    let grid = center.grid().clone();
    Ok(BootstrapBand {
        center,
        lower: Curve::new(grid.clone(), lower)?,
        upper: Curve::new(grid, upper)?,
        alpha,
        n_resamples: resamples.len(),
        n_failed,
    })
}

/// Seeded pairs bootstrap with `cfg.b` resamples.
pub fn bootstrap_band(
    data: &SpatialFunctionalDataset,
    target: &Site,
    fitter: &dyn ModelFitter,
    cfg: &BootstrapConfig,
) -> Result<BootstrapBand> {
    let resamples = resample_indices(data.len(), cfg.b, cfg.seed);
    bootstrap_band_from(data, target, fitter, &resamples, cfg.alpha, &SolverSettings::default())
}
