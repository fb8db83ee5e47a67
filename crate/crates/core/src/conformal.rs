//! Split-conformal prediction bands around a functional kriging prediction.
//!
//! Sites closer to the target than a distance percentile `Δ` form the
//! training set; the rest calibrate. The center `X*` is kriged from the
//! training set alone. Each calibration site `j` is then added to the
//! training set in turn and the target re-kriged, giving surrogate curves
//! `X̂_j`. Their spread around `X*` defines the modulation `S(t)`, their
//! nonconformity scores define the radius `ρ`, and the band is
//! `[X* − ρS, X* + ρS]`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage, StageExt};
use crate::fdata::{Curve, Site, SpatialFunctionalDataset};
use crate::kriging::{krige, krige_detailed, KrigingSolution, KrigingSystem, SolverSettings};
use crate::variogram::{ModelFitter, VariogramModel};

/// Default miscoverage level.
pub const DEFAULT_ALPHA: f64 = 0.25;

/// Share of failed surrogate predictions tolerated before a run aborts.
pub const MAX_SURROGATE_FAILURE_RATE: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeltaPercentile {
    P25,
    P50,
    P75,
}

impl DeltaPercentile {
    pub const ALL: [DeltaPercentile; 3] = [Self::P25, Self::P50, Self::P75];

    pub fn percent(self) -> u32 {
        match self {
            Self::P25 => 25,
            Self::P50 => 50,
            Self::P75 => 75,
        }
    }

    pub fn from_percent(p: u32) -> Result<Self> {
        match p {
            25 => Ok(Self::P25),
            50 => Ok(Self::P50),
            75 => Ok(Self::P75),
            _ => Err(Error::InvalidInput(format!(
                "proximity percentile must be 25, 50 or 75, got {p}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    /// Pointwise largest absolute deviation.
    Sup,
    /// Pointwise root-mean-square deviation.
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Score {
    /// `sup_t |X*(t) − X̂(t)| / S(t)`.
    Sup,
    /// `sqrt(∫ (X*(t) − X̂(t))² / S(t) dt)`.
    Sqrt,
}

/// One of the twelve `(Δ, S, D)` combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Case {
    pub delta: DeltaPercentile,
    pub modulation: Modulation,
    pub score: Score,
}

impl Case {
    pub fn new(delta: DeltaPercentile, modulation: Modulation, score: Score) -> Self {
        Self {
            delta,
            modulation,
            score,
        }
    }

    /// All twelve cases, ordered by Δ, then S (sup, sqrt), then D (sup, sqrt).
    pub fn all() -> Vec<Case> {
        let mut out = Vec::with_capacity(12);
        for delta in DeltaPercentile::ALL {
            for modulation in [Modulation::Sup, Modulation::Sqrt] {
                for score in [Score::Sup, Score::Sqrt] {
                    out.push(Case::new(delta, modulation, score));
                }
            }
        }
        out
    }

    pub fn modulation_label(&self) -> &'static str {
        match self.modulation {
            Modulation::Sup => "Ssup",
            Modulation::Sqrt => "Ssqrt",
        }
    }

    pub fn score_label(&self) -> &'static str {
        match self.score {
            Score::Sup => "Dsup",
            Score::Sqrt => "Dsqrt",
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Δ{},{},{}",
            self.delta.percent(),
            self.modulation_label(),
            self.score_label()
        )
    }
}

impl FromStr for Case {
    type Err = Error;

    /// Accepts `Δ50,Ssqrt,Dsup`; the `Δ` may also be written `D`, `d` or
    /// omitted, and labels are case-insensitive.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::InvalidInput(format!(
                "unrecognised case `{s}`; expected e.g. Δ50,Ssqrt,Dsup"
            ))
        };
        let parts: Vec<String> = s.split(',').map(|p| p.trim().to_lowercase()).collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let delta_txt = parts[0]
            .trim_start_matches('δ')
            .trim_start_matches("delta")
            .trim_start_matches('d');
        let delta = DeltaPercentile::from_percent(delta_txt.parse().map_err(|_| bad())?)
            .map_err(|_| bad())?;
        let modulation = match parts[1].as_str() {
            "ssup" | "sup" => Modulation::Sup,
            "ssqrt" | "sqrt" => Modulation::Sqrt,
            _ => return Err(bad()),
        };
        let score = match parts[2].as_str() {
            "dsup" | "sup" => Score::Sup,
            "dsqrt" | "sqrt" => Score::Sqrt,
            _ => return Err(bad()),
        };
        Ok(Case::new(delta, modulation, score))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseConfig {
    pub case: Case,
    pub alpha: f64,
    /// Lower bound on `S(t)`; `None` means `1e-8 × (dataset value range)`.
    pub epsilon_floor: Option<f64>,
    /// Use `S(t)²` instead of `S(t)` in the integral score.
    pub score_sqrt_squared_denominator: bool,
    pub solver: SolverSettings,
}

impl CaseConfig {
    pub fn new(case: Case, alpha: f64) -> Self {
        Self {
            case,
            alpha,
            epsilon_floor: None,
            score_sqrt_squared_denominator: false,
            solver: SolverSettings::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if let Some(e) = self.epsilon_floor {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "epsilon floor must be positive, got {e}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximitySplit {
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub delta_k: f64,
}

/// `p`-th percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, p)
}

pub(crate) fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Sites strictly closer than the `p`-th distance percentile train; the
/// rest, ties included, calibrate.
pub fn proximity_split(
    data: &SpatialFunctionalDataset,
    target: &Site,
    p: DeltaPercentile,
) -> Result<ProximitySplit> {
    if data.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "proximity split needs at least 3 sites, got {}",
            data.len()
        )));
    }
    let dist = data.distances_to(target);
    let delta_k = percentile(&dist, p.percent() as f64);
    let (train_idx, test_idx): (Vec<usize>, Vec<usize>) =
        (0..data.len()).partition(|&i| dist[i] < delta_k);
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::DegenerateSplit {
            percentile: p.percent(),
            n_train: train_idx.len(),
            n_test: test_idx.len(),
        });
    }
    Ok(ProximitySplit {
        train_idx,
        test_idx,
        delta_k,
    })
}

/// Kriging predictions at the target from each augmented training set.
#[derive(Debug, Clone)]
pub struct SurrogateSet {
    pub predictions: Vec<Curve>,
    /// Calibration site index for each prediction.
    pub test_idx: Vec<usize>,
    /// `(site index, error message)` for surrogates that failed.
    pub failures: Vec<(usize, String)>,
}

impl SurrogateSet {
    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }
}

/// Everything calibration produces before a band is drawn:
/// the split, the fitted model, the center and the surrogate set. Bands for
/// different `(S, D, α)` can be built from one calibration.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub target: Site,
    pub split: ProximitySplit,
    pub model: VariogramModel,
    pub center: Curve,
    pub center_system: Option<KrigingSystem>,
    pub center_solution: KrigingSolution,
    pub surrogates: SurrogateSet,
}

/// Fit the variogram on the training set, krige the center, then krige once
/// per calibration site with that site added. The model fitted on the
/// training set is reused for every augmented set.
pub fn surrogate_predictions(
    data: &SpatialFunctionalDataset,
    split: &ProximitySplit,
    fitter: &dyn ModelFitter,
    target: &Site,
    solver: &SolverSettings,
) -> Result<Calibration> {
    let train = data.subset(&split.train_idx)?;
    let model = fitter.fit(&train).at(Stage::Variogram)?;
    let center = krige_detailed(&train, &model, target, solver).at(Stage::Kriging)?;

    let results: Vec<(usize, Result<Curve>)> = split
        .test_idx
        .par_iter()
        .map(|&j| {
            let mut idx = split.train_idx.clone();
            idx.push(j);
            let res = data
                .subset(&idx)
                .and_then(|aug| krige(&aug, &model, target, solver));
            (j, res)
        })
        .collect();

    let mut predictions = Vec::with_capacity(results.len());
    let mut test_idx = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (j, r) in results {
        match r {
            Ok(c) => {
                predictions.push(c);
                test_idx.push(j);
            }
            Err(e) => failures.push((j, e.to_string())),
        }
    }
    let total = split.test_idx.len();
    if predictions.is_empty() || failures.len() as f64 > MAX_SURROGATE_FAILURE_RATE * total as f64 {
        return Err(Error::SurrogateFailures {
            failed: failures.len(),
            total,
            first: failures.first().map(|f| f.1.clone()).unwrap_or_default(),
        }
        .at(Stage::Kriging));
    }
    Ok(Calibration {
        target: target.clone(),
        split: split.clone(),
        model,
        center: center.curve,
        center_system: center.system,
        center_solution: center.solution,
        surrogates: SurrogateSet {
            predictions,
            test_idx,
            failures,
        },
    })
}

/// Split, fit and krige for one target and percentile.
pub fn calibrate(
    data: &SpatialFunctionalDataset,
    target: &Site,
    delta: DeltaPercentile,
    fitter: &dyn ModelFitter,
    solver: &SolverSettings,
) -> Result<Calibration> {
    let split = proximity_split(data, target, delta).at(Stage::Split)?;
    surrogate_predictions(data, &split, fitter, target, solver)
}

fn check_surrogates(center: &Curve, surr: &[Curve]) -> Result<()> {
    if surr.is_empty() {
        return Err(Error::InvalidInput("empty surrogate set".into()));
    }
    for s in surr {
        center.check_grid(s)?;
    }
    Ok(())
}

/// `S(t) = max(eps, sup_j |X*(t) − X̂_j(t)|)`.
pub fn modulation_sup(center: &Curve, surr: &[Curve], eps: f64) -> Result<Curve> {
    check_surrogates(center, surr)?;
    let values = (0..center.len())
        .map(|k| {
            surr.iter()
                .map(|s| (center.values()[k] - s.values()[k]).abs())
                .fold(eps, f64::max)
        })
        .collect();
    Curve::new(center.grid().clone(), values)
}

/// `S(t) = max(eps, sqrt(mean_j (X*(t) − X̂_j(t))²))`.
pub fn modulation_sqrt(center: &Curve, surr: &[Curve], eps: f64) -> Result<Curve> {
    check_surrogates(center, surr)?;
    let l = surr.len() as f64;
    let values = (0..center.len())
        .map(|k| {
            let ms = surr
                .iter()
                .map(|s| (center.values()[k] - s.values()[k]).powi(2))
                .sum::<f64>()
                / l;
            ms.sqrt().max(eps)
        })
        .collect();
    Curve::new(center.grid().clone(), values)
}

fn check_modulation(s: &Curve) -> Result<()> {
    match s.values().iter().position(|&v| !(v > 0.0)) {
        Some(index) => Err(Error::NonPositiveModulation {
            index,
            value: s.values()[index],
        }),
        None => Ok(()),
    }
}

/// `sup_t |X*(t) − X̂(t)| / S(t)` over the grid.
pub fn score_sup(center: &Curve, surrogate: &Curve, s: &Curve) -> Result<f64> {
    center.check_grid(surrogate)?;
    center.check_grid(s)?;
    check_modulation(s)?;
    Ok(center
        .values()
        .iter()
        .zip(surrogate.values())
        .zip(s.values())
        .map(|((c, x), m)| (c - x).abs() / m)
        .fold(0.0, f64::max))
}

/// `sqrt(∫ (X*(t) − X̂(t))² / S(t) dt)`, or with `S(t)²` in the denominator
/// when `squared_denominator` is set.
pub fn score_sqrt(
    center: &Curve,
    surrogate: &Curve,
    s: &Curve,
    squared_denominator: bool,
) -> Result<f64> {
    center.check_grid(surrogate)?;
    center.check_grid(s)?;
    check_modulation(s)?;
    let integrand: Vec<f64> = center
        .values()
        .iter()
        .zip(surrogate.values())
        .zip(s.values())
        .map(|((c, x), m)| {
            let d = (c - x) * (c - x);
            if squared_denominator {
                d / (m * m)
            } else {
                d / m
            }
        })
        .collect();
    Ok(center.grid().integrate(&integrand).max(0.0).sqrt())
}

/// Rank used for the radius: `⌈(l+1)(1−α)⌉`, clamped to `[1, l]`.
pub fn conformal_rank(l: usize, alpha: f64) -> usize {
    let k = ((l as f64 + 1.0) * (1.0 - alpha)).ceil() as usize;
    k.clamp(1, l)
}

/// `k`-th smallest score with `k = ⌈(l+1)(1−α)⌉` (clamped to `l`).
pub fn conformal_radius(scores: &[f64], alpha: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("no nonconformity scores".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("NaN nonconformity score".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[conformal_rank(scores.len(), alpha) - 1])
}

/// Round a non-negative value up by a few units in the last place.
fn round_up(x: f64) -> f64 {
    if x > 0.0 {
        x.next_up().next_up().next_up().next_up()
    } else {
        x
    }
}

#[derive(Debug, Clone)]
pub struct PredictionBand {
    pub center: Curve,
    pub modulation: Curve,
    pub rho: f64,
    /// Half-width `ρ·S(t)`, rounded outward by a few ulps so that every
    /// calibration curve whose score is at most `ρ` lies inside the stored
    /// envelopes despite rounding.
    pub radius: Curve,
    pub lower: Curve,
    pub upper: Curve,
    pub scores: Vec<f64>,
    pub alpha: f64,
}

impl PredictionBand {
    pub fn new(center: Curve, modulation: Curve, rho: f64, scores: Vec<f64>, alpha: f64) -> Result<Self> {
        center.check_grid(&modulation)?;
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(Error::InvalidInput(format!("invalid band radius {rho}")));
        }
        let radius = modulation.map(|s| round_up(rho * s))?;
        let lower = center.sub(&radius)?;
        let upper = center.add(&radius)?;
        Ok(Self {
            center,
            modulation,
            rho,
            radius,
            lower,
            upper,
            scores,
            alpha,
        })
    }

    /// Whether `curve` lies between the envelopes at every grid point.
    pub fn contains(&self, curve: &Curve) -> Result<bool> {
        self.center.check_grid(curve)?;
        Ok(curve
            .values()
            .iter()
            .zip(self.lower.values().iter().zip(self.upper.values()))
            .all(|(x, (l, u))| l <= x && x <= u))
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,center,lower,upper,S")?;
        let g = self.center.grid();
        for k in 0..g.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                g.points()[k],
                self.center.values()[k],
                self.lower.values()[k],
                self.upper.values()[k],
                self.modulation.values()[k]
            )?;
        }
        Ok(())
    }
}

/// `1e-8 × (value range)`, or `1e-8` for a constant dataset.
pub fn default_epsilon_floor(data: &SpatialFunctionalDataset) -> f64 {
    let range = data.value_range();
    if range > 0.0 {
        1e-8 * range
    } else {
        1e-8
    }
}

/// Modulation, scores, radius and band for one calibration.
pub fn build_band(
    calibration: &Calibration,
    modulation: Modulation,
    score: Score,
    alpha: f64,
    eps: f64,
    squared_denominator: bool,
) -> Result<PredictionBand> {
    let center = &calibration.center;
    let surr = &calibration.surrogates.predictions;
    let s = match modulation {
        Modulation::Sup => modulation_sup(center, surr, eps),
        Modulation::Sqrt => modulation_sqrt(center, surr, eps),
    }
    .at(Stage::Scoring)?;
    let scores = surr
        .iter()
        .map(|x| match score {
            Score::Sup => score_sup(center, x, &s),
            Score::Sqrt => score_sqrt(center, x, &s, squared_denominator),
        })
        .collect::<Result<Vec<f64>>>()
        .at(Stage::Scoring)?;
    let rho = conformal_radius(&scores, alpha).at(Stage::Scoring)?;
    PredictionBand::new(center.clone(), s, rho, scores, alpha).at(Stage::Scoring)
}

/// Result of the full procedure at one target.
#[derive(Debug, Clone)]
pub struct ConformalPrediction {
    pub band: PredictionBand,
    pub calibration: Arc<Calibration>,
    pub epsilon_floor: f64,
}

/// End-to-end band at `target`.
pub fn conformal_predict(
    data: &SpatialFunctionalDataset,
    target: &Site,
    config: &CaseConfig,
    fitter: &dyn ModelFitter,
) -> Result<ConformalPrediction> {
    config.validate()?;
    let eps = config
        .epsilon_floor
        .unwrap_or_else(|| default_epsilon_floor(data));
    let calibration = calibrate(data, target, config.case.delta, fitter, &config.solver)?;
    let band = build_band(
        &calibration,
        config.case.modulation,
        config.case.score,
        config.alpha,
        eps,
        config.score_sqrt_squared_denominator,
    )?;
    Ok(ConformalPrediction {
        band,
        calibration: Arc::new(calibration),
        epsilon_floor: eps,
    })
}
