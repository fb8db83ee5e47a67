//! Box-constrained Nelder–Mead direct search.

pub(crate) struct NelderMead {
    pub max_evals: usize,
    pub ftol: f64,
    pub xtol: f64,
    pub initial_step: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            max_evals: 6000,
            ftol: 1e-15,
            xtol: 1e-10,
            initial_step: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
}

impl NelderMead {
    /// Minimise `f` over the box `[lower, upper]`, starting from `x0`.
    /// Trial points are clamped into the box. The returned value never
    /// exceeds `f(x0)`.
    pub fn minimize(
        &self,
        f: impl Fn(&[f64]) -> f64,
        x0: &[f64],
        lower: &[f64],
        upper: &[f64],
    ) -> Minimum {
        let n = x0.len();
        let clamp = |x: &mut Vec<f64>| {
            for i in 0..n {
                x[i] = x[i].clamp(lower[i], upper[i]);
            }
        };
        let eval = |x: &[f64]| {
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };

        let mut start = x0.to_vec();
        clamp(&mut start);
        let mut evals = 0usize;
        let mut best = Minimum {
            f: eval(&start),
            x: start.clone(),
        };
        evals += 1;

        // One restart from the converged point guards against premature
        // simplex collapse.
        for _round in 0..2 {
            let mut simplex: Vec<Vec<f64>> = vec![best.x.clone()];
            for i in 0..n {
                let mut v = best.x.clone();
                let step = self.initial_step;
                v[i] = if v[i] + step <= upper[i] {
                    v[i] + step
                } else {
                    v[i] - step
                };
                clamp(&mut v);
                simplex.push(v);
            }
            let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();
            evals += n;

            while evals < self.max_evals {
                let mut order: Vec<usize> = (0..=n).collect();
                order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
                simplex = order.iter().map(|&i| simplex[i].clone()).collect();
                values = order.iter().map(|&i| values[i]).collect();

                let spread = (values[n] - values[0]).abs();
                let size = simplex[1..]
                    .iter()
                    .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
                    .fold(0.0, f64::max);
                if spread <= self.ftol * (1.0 + values[0].abs()) && size <= self.xtol {
                    break;
                }
                if size <= 1e-14 {
                    break;
                }

                let mut centroid = vec![0.0; n];
                for v in &simplex[..n] {
                    for i in 0..n {
                        centroid[i] += v[i] / n as f64;
                    }
                }
                let along = |coef: f64| -> Vec<f64> {
                    let mut p: Vec<f64> = (0..n)
                        .map(|i| centroid[i] + coef * (simplex[n][i] - centroid[i]))
                        .collect();
                    clamp(&mut p);
                    p
                };

                let xr = along(-1.0);
                let fr = eval(&xr);
                evals += 1;
                if fr < values[0] {
                    let xe = along(-2.0);
                    let fe = eval(&xe);
                    evals += 1;
                    if fe < fr {
                        simplex[n] = xe;
                        values[n] = fe;
                    } else {
                        simplex[n] = xr;
                        values[n] = fr;
                    }
                    continue;
                }
                if fr < values[n - 1] {
                    simplex[n] = xr;
                    values[n] = fr;
                    continue;
                }
                let (xc, fc) = if fr < values[n] {
                    let xc = along(-0.5);
                    let fc = eval(&xc);
                    (xc, fc)
                } else {
                    let xc = along(0.5);
                    let fc = eval(&xc);
                    (xc, fc)
                };
                evals += 1;
                if fc < values[n].min(fr) {
                    simplex[n] = xc;
                    values[n] = fc;
                    continue;
                }
                // shrink towards the best vertex
                for k in 1..=n {
                    let mut p: Vec<f64> = (0..n)
                        .map(|i| simplex[0][i] + 0.5 * (simplex[k][i] - simplex[0][i]))
                        .collect();
                    clamp(&mut p);
                    values[k] = eval(&p);
                    simplex[k] = p;
                }
                evals += n;
            }

            let (ib, fb) = values
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, &v)| (i, v))
                .expect("non-empty simplex");
            if fb < best.f {
                best = Minimum {
                    x: simplex[ib].clone(),
                    f: fb,
                };
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_rosenbrock_minimum() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = NelderMead {
            max_evals: 20_000,
            ..Default::default()
        }
        .minimize(rosen, &[-1.2, 1.0], &[-5.0, -5.0], &[5.0, 5.0]);
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{:?}", m);
    }

    #[test]
    fn respects_bounds() {
        let m = NelderMead::default().minimize(|x| (x[0] + 3.0).powi(2), &[1.0], &[0.0], &[2.0]);
        assert_eq!(m.x[0], 0.0);
    }
}
