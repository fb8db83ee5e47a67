//! Band quality metrics: width, interval score, coverage and timing.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::conformal::PredictionBand;
use crate::error::{Error, Result};
use crate::fdata::Curve;

/// Anything with a lower and an upper envelope on a shared grid.
pub trait Envelope {
    fn lower(&self) -> &Curve;
    fn upper(&self) -> &Curve;

    /// Inclusive pointwise containment.
    fn covers_at(&self, truth: &Curve) -> Result<Vec<bool>> {
        self.lower().check_grid(truth)?;
        Ok(truth
            .values()
            .iter()
            .zip(self.lower().values().iter().zip(self.upper().values()))
            .map(|(x, (l, u))| l <= x && x <= u)
            .collect())
    }
}

impl Envelope for PredictionBand {
    fn lower(&self) -> &Curve {
        &self.lower
    }
    fn upper(&self) -> &Curve {
        &self.upper
    }
}

/// `∫ (upper − lower) dt`.
pub fn band_width(band: &impl Envelope) -> f64 {
    let diff: Vec<f64> = band
        .upper()
        .values()
        .iter()
        .zip(band.lower().values())
        .map(|(u, l)| u - l)
        .collect();
    band.lower().grid().integrate(&diff)
}

/// Interval score integrated over `t`:
/// `∫ (u − l) + (2/α)(l − x)₊ + (2/α)(x − u)₊ dt`.
///
/// When `x` is inside the band every penalty term is skipped, so the result
/// is bitwise equal to [`band_width`].
pub fn band_score(band: &impl Envelope, truth: &Curve, alpha: f64) -> Result<f64> {
    band.lower().check_grid(truth)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let k = 2.0 / alpha;
    let integrand: Vec<f64> = truth
        .values()
        .iter()
        .zip(band.lower().values().iter().zip(band.upper().values()))
        .map(|(&x, (&l, &u))| {
            let w = u - l;
            if x < l {
                w + k * (l - x)
            } else if x > u {
                w + k * (x - u)
            } else {
                w
            }
        })
        .collect();
    Ok(truth.grid().integrate(&integrand))
}

/// Percentage of truths lying inside their band at every grid point.
pub fn global_coverage<E: Envelope>(pairs: &[(&E, &Curve)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no bands to evaluate".into()));
    }
    let mut inside = 0usize;
    for (band, truth) in pairs {
        if band.covers_at(truth)?.iter().all(|&c| c) {
            inside += 1;
        }
    }
    Ok(100.0 * inside as f64 / pairs.len() as f64)
}

/// Pointwise fraction of truths inside their band, and its grid mean in %.
pub fn local_coverage<E: Envelope>(pairs: &[(&E, &Curve)]) -> Result<(Curve, f64)> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::InvalidInput("no bands to evaluate".into()))?;
    let grid = first.1.grid().clone();
    let mut counts = vec![0usize; grid.len()];
    for (band, truth) in pairs {
        first.1.check_grid(truth)?;
        for (c, hit) in counts.iter_mut().zip(band.covers_at(truth)?) {
            *c += hit as usize;
        }
    }
    let n = pairs.len() as f64;
    let frac: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let mean = 100.0 * frac.iter().sum::<f64>() / frac.len() as f64;
    Ok((Curve::new(grid, frac)?, mean))
}

/// Accumulates per-target wall-clock times.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timer {
    pub runs: Vec<f64>,
}

impl Timer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, d: Duration) {
        self.runs.push(d.as_secs_f64());
    }

    pub fn record_secs(&mut self, secs: f64) {
        self.runs.push(secs);
    }

    /// Run `f`, recording its wall-clock time.
    pub fn time<T>(&mut self, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.record(start.elapsed());
        out
    }

    /// Total time.
    pub fn total(&self) -> f64 {
        self.runs.iter().sum()
    }

    /// Total time divided by the number of targets.
    pub fn mono(&self) -> f64 {
        if self.runs.is_empty() {
            0.0
        } else {
            self.total() / self.runs.len() as f64
        }
    }
}

/// Averaged metrics over a set of targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub width: f64,
    pub band_score: f64,
    /// Percent of curves fully inside.
    pub cov_global: f64,
    /// Mean of the local coverage curve, in percent.
    pub cov_local: f64,
    pub cov_local_curve: Vec<f64>,
    pub total_time: f64,
    pub mono_time: f64,
    pub n_targets: usize,
}

impl MetricsReport {
    /// Width and score averaged over targets; coverage pooled over targets.
    pub fn evaluate<E: Envelope>(
        pairs: &[(&E, &Curve)],
        alpha: f64,
        timer: &Timer,
    ) -> Result<Self> {
        let (curve, cov_local) = local_coverage(pairs)?;
        let cov_global = global_coverage(pairs)?;
        let n = pairs.len() as f64;
        let mut width = 0.0;
        let mut score = 0.0;
        for (band, truth) in pairs {
            width += band_width(*band);
            score += band_score(*band, truth, alpha)?;
        }
        Ok(Self {
            width: width / n,
            band_score: score / n,
            cov_global,
            cov_local,
            cov_local_curve: curve.into_values(),
            total_time: timer.total(),
            mono_time: timer.mono(),
            n_targets: pairs.len(),
        })
    }
}

/// Two-decimal rendering used in report tables.
pub fn pct(x: f64) -> String {
    format!("{x:.2}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdata::TimeGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    struct Simple {
        lower: Curve,
        upper: Curve,
    }

    impl Envelope for Simple {
        fn lower(&self) -> &Curve {
            &self.lower
        }
        fn upper(&self) -> &Curve {
            &self.upper
        }
    }

    fn grid(n: usize) -> Arc<TimeGrid> {
        Arc::new(TimeGrid::uniform(0.0, 1.0, n).unwrap())
    }

    fn band_from(center: &Curve, s: &Curve, rho: f64) -> PredictionBand {
        PredictionBand::new(center.clone(), s.clone(), rho, vec![], 0.5).unwrap()
    }

    #[test]
    fn width_examples() {
        let g = grid(11);
        let c = Curve::from_fn(g.clone(), |t| t.sin()).unwrap();
        let one = Curve::constant(g.clone(), 1.0).unwrap();
        assert!((band_width(&band_from(&c, &one, 2.0)) - 4.0).abs() < 1e-10);
        assert_eq!(band_width(&band_from(&c, &one, 0.0)), 0.0);
    }

    #[test]
    fn width_is_twice_rho_times_integral_of_s() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Arc::new(TimeGrid::new((0..30).map(|i| i as f64 + rng.random::<f64>() * 0.5).collect()).unwrap());
        let c = Curve::new(g.clone(), (0..30).map(|_| rng.random::<f64>() * 10.0).collect()).unwrap();
        let s = Curve::new(g.clone(), (0..30).map(|_| 0.1 + rng.random::<f64>()).collect()).unwrap();
        let b = band_from(&c, &s, 1.7);
        let oracle: f64 = (0..29)
            .map(|k| {
                let h = g.points()[k + 1] - g.points()[k];
                h * 1.7 * (s.values()[k] + s.values()[k + 1])
            })
            .sum();
        assert!((band_width(&b) - oracle).abs() < 1e-10);
    }

    #[test]
    fn score_examples() {
        let g = grid(21);
        let c = Curve::constant(g.clone(), 0.0).unwrap();
        let one = Curve::constant(g.clone(), 1.0).unwrap();
        let b = band_from(&c, &one, 1.0);
        let inside = Curve::from_fn(g.clone(), |t| t - 0.5).unwrap();
        assert_eq!(band_score(&b, &inside, 0.5).unwrap(), band_width(&b));
        let above = b.upper.map(|v| v + 1.0).unwrap();
        assert!((band_score(&b, &above, 0.5).unwrap() - (band_width(&b) + 4.0)).abs() < 1e-10);
        assert!(band_score(&b, &above, 0.0).is_err());
    }

    #[test]
    fn score_identity_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let g = grid(25);
        for _ in 0..500 {
            let lower: Vec<f64> = (0..25).map(|_| rng.random::<f64>() - 1.0).collect();
            let upper: Vec<f64> = lower.iter().map(|l| l + rng.random::<f64>()).collect();
            let b = Simple {
                lower: Curve::new(g.clone(), lower.clone()).unwrap(),
                upper: Curve::new(g.clone(), upper.clone()).unwrap(),
            };
            let spread = if rng.random::<bool>() { 0.0 } else { 0.3 };
            let x: Vec<f64> = (0..25)
                .map(|k| lower[k] + (upper[k] - lower[k]) * rng.random::<f64>() + spread * (rng.random::<f64>() - 0.5))
                .collect();
            let alpha = 0.05 + 0.9 * rng.random::<f64>();
            let truth = Curve::new(g.clone(), x.clone()).unwrap();
            let all_in = (0..25).all(|k| lower[k] <= x[k] && x[k] <= upper[k]);
            let s = band_score(&b, &truth, alpha).unwrap();
            let w = band_width(&b);
            if all_in {
                assert_eq!(s, w);
            } else {
                assert!(s > w);
            }
            // pointwise formula through an independent trapezoid
            let a: Vec<f64> = (0..25)
                .map(|k| {
                    (upper[k] - lower[k])
                        + 2.0 / alpha * (lower[k] - x[k]).max(0.0)
                        + 2.0 / alpha * (x[k] - upper[k]).max(0.0)
                })
                .collect();
            let oracle: f64 = (0..24).map(|k| (a[k] + a[k + 1]) / 2.0 / 24.0).sum();
            assert!((s - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn coverage_examples_and_counting_oracle() {
        let g = grid(4);
        let zero = Curve::constant(g.clone(), 0.0).unwrap();
        let one = Curve::constant(g.clone(), 1.0).unwrap();
        let b = band_from(&zero, &one, 1.0);
        let inside = Curve::constant(g.clone(), 0.5).unwrap();
        let outside = Curve::constant(g.clone(), 5.0).unwrap();
        let on_edge = b.upper.clone();
        assert_eq!(global_coverage(&[(&b, &inside), (&b, &on_edge)]).unwrap(), 100.0);
        assert_eq!(global_coverage(&[(&b, &outside)]).unwrap(), 0.0);
        let (curve, mean) = local_coverage(&[(&b, &inside), (&b, &outside)]).unwrap();
        assert!(curve.values().iter().all(|&v| v == 0.5));
        assert_eq!(mean, 50.0);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truths: Vec<Curve> = (0..7)
            .map(|_| Curve::new(g.clone(), (0..4).map(|_| rng.random::<f64>() * 2.4 - 1.2).collect()).unwrap())
            .collect();
        let pairs: Vec<(&PredictionBand, &Curve)> = truths.iter().map(|t| (&b, t)).collect();
        let full = truths.iter().filter(|t| t.values().iter().all(|v| v.abs() <= 1.0)).count();
        assert_eq!(global_coverage(&pairs).unwrap(), 100.0 * full as f64 / 7.0);
        let (curve, mean) = local_coverage(&pairs).unwrap();
        for k in 0..4 {
            let hits = truths.iter().filter(|t| t.values()[k].abs() <= 1.0).count();
            assert_eq!(curve.values()[k], hits as f64 / 7.0);
        }
        assert!(global_coverage(&pairs).unwrap() <= mean + 1e-12);
    }

    #[test]
    fn timer_accumulates() {
        let mut t = Timer::new();
        let times = [0.5, 0.25, 1.0, 0.125];
        let mut running = 0.0;
        for x in times {
            t.record_secs(x);
            running += x;
            assert_eq!(t.total(), running);
        }
        assert_eq!(t.mono(), running / 4.0);
        assert!(t.total() >= 1.0);
        let v = t.time(|| 3);
        assert_eq!(v, 3);
        assert_eq!(t.runs.len(), 5);
        assert_eq!(Timer::new().mono(), 0.0);
    }

    #[test]
    fn report_averages() {
        let g = grid(3);
        let zero = Curve::constant(g.clone(), 0.0).unwrap();
        let one = Curve::constant(g.clone(), 1.0).unwrap();
        let narrow = band_from(&zero, &one, 1.0);
        let wide = band_from(&zero, &one, 3.0);
        let truth = Curve::constant(g.clone(), 2.0).unwrap();
        let mut timer = Timer::new();
        timer.record_secs(1.0);
        timer.record_secs(3.0);
        let r = MetricsReport::evaluate(&[(&narrow, &truth), (&wide, &truth)], 0.5, &timer).unwrap();
        assert!((r.width - 4.0).abs() < 1e-12);
        assert_eq!(r.cov_global, 50.0);
        assert_eq!(r.cov_local, 50.0);
        assert!((r.band_score - (2.0 + 4.0 + 6.0) / 2.0).abs() < 1e-12);
        assert_eq!((r.total_time, r.mono_time), (4.0, 2.0));
        assert_eq!(pct(94.8249), "94.82");
    }
}
