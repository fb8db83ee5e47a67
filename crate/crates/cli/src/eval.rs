//! Leave-one-site-out evaluation: every site in turn is the target, the
//! remaining sites are the data, and its own curve is the truth.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use fokcp::bootstrap::{bootstrap_band_from, resample_indices, BootstrapBand};
use fokcp::conformal::{build_band, calibrate, default_epsilon_floor, DeltaPercentile};
use fokcp::kriging::SolverSettings;
use fokcp::metrics::{MetricsReport, Timer};
use fokcp::{Case, ModelFitter, PredictionBand, SpatialFunctionalDataset};
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalOptions {
    pub epsilon_floor: Option<f64>,
    pub squared_denominator: bool,
    pub solver: SolverSettings,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            epsilon_floor: None,
            squared_denominator: false,
            solver: SolverSettings::default(),
        }
    }
}

/// One `(case, α)` cell of a sweep.
#[derive(Debug, Clone)]
pub struct CaseOutcome {
    pub case: Case,
    pub alpha: f64,
    pub report: MetricsReport,
    /// Per-target bands, in site order.
    pub bands: Vec<PredictionBand>,
    /// Per-target seconds: shared calibration plus this band.
    pub times: Vec<f64>,
}

struct TargetRun {
    calibration_secs: f64,
    bands: Vec<(PredictionBand, f64)>,
}

/// Run every `(case, α)` combination over all leave-one-out targets.
///
/// Calibration (split, fit, center and surrogates) depends only on `Δ`, so
/// it is computed once per target and `Δ` and shared by the cases with that
/// `Δ`. Each case is charged the shared time plus its own band time.
pub fn loo_sweep(
    data: &SpatialFunctionalDataset,
    cases: &[Case],
    alphas: &[f64],
    fitter: &dyn ModelFitter,
    opts: &EvalOptions,
) -> fokcp::Result<Vec<CaseOutcome>> {
    let mut by_delta: BTreeMap<u32, Vec<Case>> = BTreeMap::new();
    for c in cases {
        by_delta.entry(c.delta.percent()).or_default().push(*c);
    }
    let mut results: HashMap<(Case, u64), CaseOutcome> = HashMap::new();
    let key = |c: &Case, a: f64| (*c, a.to_bits());

    for (pct, group) in &by_delta {
        let delta = DeltaPercentile::from_percent(*pct)?;
        let runs: Vec<TargetRun> = (0..data.len())
            .into_par_iter()
            .map(|i| -> fokcp::Result<TargetRun> {
                let train = data.without(i)?;
                let target = data.sites()[i].clone();
                let eps = opts.epsilon_floor.unwrap_or_else(|| default_epsilon_floor(&train));
                let start = Instant::now();
                let cal = calibrate(&train, &target, delta, fitter, &opts.solver)?;
                let calibration_secs = start.elapsed().as_secs_f64();
                let mut bands = Vec::with_capacity(group.len() * alphas.len());
                for case in group {
                    for &alpha in alphas {
                        let t = Instant::now();
                        let band = build_band(&cal, case.modulation, case.score, alpha, eps, opts.squared_denominator)?;
                        bands.push((band, t.elapsed().as_secs_f64()));
                    }
                }
                Ok(TargetRun { calibration_secs, bands })
            })
            .collect::<fokcp::Result<Vec<_>>>()?;

        let mut slot = 0;
        for case in group {
            for &alpha in alphas {
                let mut timer = Timer::new();
                let mut bands = Vec::with_capacity(runs.len());
                for run in &runs {
                    let (band, secs) = &run.bands[slot];
                    timer.record_secs(run.calibration_secs + secs);
                    bands.push(band.clone());
                }
                let pairs: Vec<(&PredictionBand, &fokcp::Curve)> =
                    bands.iter().zip(data.curves()).collect();
                let report = MetricsReport::evaluate(&pairs, alpha, &timer)?;
                results.insert(
                    key(case, alpha),
                    CaseOutcome {
                        case: *case,
                        alpha,
                        report,
                        times: timer.runs.clone(),
                        bands,
                    },
                );
                slot += 1;
            }
        }
    }

    // requested order
    let mut out = Vec::with_capacity(cases.len() * alphas.len());
    for c in cases {
        for &a in alphas {
            if let Some(r) = results.remove(&key(c, a)) {
                out.push(r);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct BootstrapOutcome {
    pub alpha: f64,
    pub b: usize,
    pub report: MetricsReport,
    pub bands: Vec<BootstrapBand>,
    pub times: Vec<f64>,
}

/// Leave-one-out bootstrap baseline. Targets run one after another; the
/// resamples within a target run in parallel.
pub fn loo_bootstrap(
    data: &SpatialFunctionalDataset,
    b: usize,
    alpha: f64,
    seed: u64,
    fitter: &dyn ModelFitter,
    solver: &SolverSettings,
) -> fokcp::Result<BootstrapOutcome> {
    let mut timer = Timer::new();
    let mut bands = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let train = data.without(i)?;
        let target = &data.sites()[i];
        let start = Instant::now();
        // distinct resample streams per target
        let resamples = resample_indices(train.len(), b, seed.wrapping_add(i as u64));
        let band = bootstrap_band_from(&train, target, fitter, &resamples, alpha, solver)?;
        timer.record(start.elapsed());
        bands.push(band);
    }
    let pairs: Vec<(&BootstrapBand, &fokcp::Curve)> = bands.iter().zip(data.curves()).collect();
    let report = MetricsReport::evaluate(&pairs, alpha, &timer)?;
    Ok(BootstrapOutcome {
        alpha,
        b,
        report,
        times: timer.runs.clone(),
        bands,
    })
}
