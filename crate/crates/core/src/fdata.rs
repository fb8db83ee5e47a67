//! Functional-data substrate: time grids, sampled curves, sites and the
//! spatial functional dataset, plus the L²(T) geometry used everywhere else.
//!
//! Curves are stored as samples on a grid shared by the whole dataset.
//! Integrals over `T` use the composite trapezoid rule on that grid, which is
//! exact for the piecewise-linear interpolant of the samples.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing sample points spanning `T = [a, b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 points, got {}",
                points.len()
            )));
        }
        if let Some(i) = points.iter().position(|t| !t.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-finite point at index {i}")));
        }
        if let Some(i) = points.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!(
                "points not strictly increasing at index {}",
                i + 1
            )));
        }
        Ok(Self { points })
    }

    /// `n` equally spaced points on `[a, b]`, endpoints included.
    pub fn uniform(a: f64, b: f64, n: usize) -> Result<Self> {
        if n < 2 || !(b > a) {
            return Err(Error::InvalidGrid(format!(
                "uniform grid needs n >= 2 and b > a (n={n}, a={a}, b={b})"
            )));
        }
        let step = (b - a) / (n - 1) as f64;
        let mut points: Vec<f64> = (0..n).map(|i| a + step * i as f64).collect();
        points[n - 1] = b;
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.points[0]
    }

    pub fn end(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Trapezoid quadrature weights; positive and summing to `b - a`.
    pub fn weights(&self) -> Vec<f64> {
        let p = &self.points;
        let n = p.len();
        let mut w = vec![0.0; n];
        for i in 0..n - 1 {
            let half = 0.5 * (p[i + 1] - p[i]);
            w[i] += half;
            w[i + 1] += half;
        }
        w
    }

    /// Composite trapezoid integral of samples taken on this grid.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.points.len());
        self.points
            .windows(2)
            .zip(values.windows(2))
            .map(|(t, f)| 0.5 * (t[1] - t[0]) * (f[0] + f[1]))
            .sum()
    }
}

/// A function on `T` represented by its samples on a shared grid.
#[derive(Debug, Clone)]
pub struct Curve {
    grid: Arc<TimeGrid>,
    values: Vec<f64>,
}

impl Curve {
    pub fn new(grid: Arc<TimeGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "curve has {} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite curve value at grid index {i}"
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Arc<TimeGrid>, value: f64) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, vec![value; n])
    }

    pub fn from_fn(grid: Arc<TimeGrid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.points().iter().map(|&t| f(t)).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn shares_grid(&self, other: &Curve) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub(crate) fn check_grid(&self, other: &Curve) -> Result<()> {
        if self.shares_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Pointwise combination `f(self[t], other[t])`.
    pub fn zip_with(&self, other: &Curve, f: impl Fn(f64, f64) -> f64) -> Result<Curve> {
        self.check_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Curve::new(self.grid.clone(), values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Curve> {
        Curve::new(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn sub(&self, other: &Curve) -> Result<Curve> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Curve) -> Result<Curve> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, k: f64) -> Result<Curve> {
        self.map(|v| k * v)
    }

    pub fn integral(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

impl PartialEq for Curve {
    fn eq(&self, other: &Self) -> bool {
        self.shares_grid(other) && self.values == other.values
    }
}

/// `∫_T a(t) b(t) dt` by the trapezoid rule on the shared grid.
pub fn l2_inner(a: &Curve, b: &Curve) -> Result<f64> {
    a.check_grid(b)?;
    let products: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x * y).collect();
    Ok(a.grid.integrate(&products))
}

/// `‖a − b‖²` in L²(T).
pub fn l2_dist_sq(a: &Curve, b: &Curve) -> Result<f64> {
    a.check_grid(b)?;
    let sq: Vec<f64> = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .collect();
    Ok(a.grid.integrate(&sq))
}

/// A spatial location `s = (u, v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub id: String,
    pub u: f64,
    pub v: f64,
}

impl Site {
    pub fn new(id: impl Into<String>, u: f64, v: f64) -> Self {
        Self { id: id.into(), u, v }
    }

    /// Unlabelled location, used for prediction targets.
    pub fn at(u: f64, v: f64) -> Self {
        Self::new("target", u, v)
    }
}

/// Euclidean distance in `(u, v)`. Coordinates in degrees are treated as
/// planar; no geodesic correction is applied.
pub fn spatial_dist(p: &Site, q: &Site) -> f64 {
    (p.u - q.u).hypot(p.v - q.v)
}

/// Sites paired with curves on one shared grid.
#[derive(Debug, Clone)]
pub struct SpatialFunctionalDataset {
    grid: Arc<TimeGrid>,
    sites: Vec<Site>,
    curves: Vec<Curve>,
}

impl SpatialFunctionalDataset {
    pub fn new(grid: Arc<TimeGrid>, sites: Vec<Site>, curves: Vec<Curve>) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::InvalidInput("dataset has no sites".into()));
        }
        if sites.len() != curves.len() {
            return Err(Error::InvalidInput(format!(
                "{} sites but {} curves",
                sites.len(),
                curves.len()
            )));
        }
        for c in &curves {
            if !(Arc::ptr_eq(c.grid(), &grid) || **c.grid() == *grid) {
                return Err(Error::GridMismatch);
            }
        }
        for s in &sites {
            if !(s.u.is_finite() && s.v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "site {} has non-finite coordinates",
                    s.id
                )));
            }
        }
        let mut order: Vec<usize> = (0..sites.len()).collect();
        order.sort_by(|&a, &b| {
            (sites[a].u, sites[a].v)
                .partial_cmp(&(sites[b].u, sites[b].v))
                .expect("finite coordinates")
        });
        for w in order.windows(2) {
            let (a, b) = (&sites[w[0]], &sites[w[1]]);
            if a.u == b.u && a.v == b.v {
                return Err(Error::DuplicateSite {
                    first: a.id.clone(),
                    second: b.id.clone(),
                    u: a.u,
                    v: a.v,
                });
            }
        }
        let mut ids: Vec<&str> = sites.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput(format!("duplicate site id {}", w[0])));
        }
        // Rebind every curve to the dataset's grid so pointer equality holds.
        let curves = curves
            .into_iter()
            .map(|c| Curve {
                grid: grid.clone(),
                values: c.values,
            })
            .collect();
        Ok(Self {
            grid,
            sites,
            curves,
        })
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn curves(&self) -> &[Curve] {
        &self.curves
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn site_index(&self, id: &str) -> Option<usize> {
        self.sites.iter().position(|s| s.id == id)
    }

    /// Dataset restricted to `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidInput("empty subset".into()));
        }
        let sites = indices.iter().map(|&i| self.sites[i].clone()).collect();
        let curves = indices.iter().map(|&i| self.curves[i].clone()).collect();
        Self::new(self.grid.clone(), sites, curves)
    }

    /// Everything except site `index`: the leave-one-out training set.
    pub fn without(&self, index: usize) -> Result<Self> {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| i != index).collect();
        self.subset(&keep)
    }

    /// Apply `f` to every curve, keeping sites.
    pub fn map_curves(&self, f: impl Fn(&Curve) -> Result<Curve>) -> Result<Self> {
        let curves = self.curves.iter().map(f).collect::<Result<Vec<_>>>()?;
        Self::new(self.grid.clone(), self.sites.clone(), curves)
    }

    /// `max - min` over every sample in the dataset.
    pub fn value_range(&self) -> f64 {
        let (lo, hi) = self
            .curves
            .iter()
            .flat_map(|c| c.values.iter())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        hi - lo
    }

    pub fn distances_to(&self, target: &Site) -> Vec<f64> {
        self.sites.iter().map(|s| spatial_dist(s, target)).collect()
    }

    pub fn max_pairwise_distance(&self) -> f64 {
        let mut best = 0.0_f64;
        for i in 0..self.sites.len() {
            for j in i + 1..self.sites.len() {
                best = best.max(spatial_dist(&self.sites[i], &self.sites[j]));
            }
        }
        best
    }

    /// Parse the long format `site_id,u,v,t,value`.
    ///
    /// Rows must be grouped by site and every site must list the same sorted
    /// set of `t`. Reported row numbers count the header as row 1.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| Error::Parse {
                row: 1,
                message: e.to_string(),
            })?
            .clone();
        let expected = ["site_id", "u", "v", "t", "value"];
        if header.len() != expected.len() || header.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(Error::Parse {
                row: 1,
                message: format!("expected header `{}`", expected.join(",")),
            });
        }

        struct Block {
            site: Site,
            ts: Vec<f64>,
            values: Vec<f64>,
            first_row: usize,
        }
        let mut blocks: Vec<Block> = Vec::new();
        let mut seen_ids = std::collections::HashSet::new();

        for (k, rec) in rdr.records().enumerate() {
            let row = k + 2;
            let rec = rec.map_err(|e| Error::Parse {
                row,
                message: e.to_string(),
            })?;
            if rec.len() != 5 {
                return Err(Error::Parse {
                    row,
                    message: format!("expected 5 fields, found {}", rec.len()),
                });
            }
            let num = |idx: usize, name: &str| -> Result<f64> {
                let raw = &rec[idx];
                let x: f64 = raw.parse().map_err(|_| Error::Parse {
                    row,
                    message: format!("field `{name}` is not a number: {raw:?}"),
                })?;
                if !x.is_finite() {
                    return Err(Error::Parse {
                        row,
                        message: format!("field `{name}` is not finite"),
                    });
                }
                Ok(x)
            };
            let id = rec[0].to_string();
            if id.is_empty() {
                return Err(Error::Parse {
                    row,
                    message: "empty site_id".into(),
                });
            }
            let (u, v, t, value) = (num(1, "u")?, num(2, "v")?, num(3, "t")?, num(4, "value")?);

            let same_block = blocks.last().is_some_and(|b| b.site.id == id);
            if !same_block {
                if !seen_ids.insert(id.clone()) {
                    return Err(Error::Parse {
                        row,
                        message: format!("rows for site {id} are not contiguous"),
                    });
                }
                blocks.push(Block {
                    site: Site::new(id, u, v),
                    ts: Vec::new(),
                    values: Vec::new(),
                    first_row: row,
                });
            }
            let block = blocks.last_mut().expect("block pushed");
            if block.site.u != u || block.site.v != v {
                return Err(Error::Parse {
                    row,
                    message: format!("site {} changes coordinates", block.site.id),
                });
            }
            if let Some(&prev) = block.ts.last() {
                if t <= prev {
                    return Err(Error::Parse {
                        row,
                        message: format!("t values for site {} are not increasing", block.site.id),
                    });
                }
            }
            block.ts.push(t);
            block.values.push(value);
        }

        let first = blocks.first().ok_or(Error::Parse {
            row: 2,
            message: "no data rows".into(),
        })?;
        let grid = Arc::new(TimeGrid::new(first.ts.clone()).map_err(|e| Error::Parse {
            row: first.first_row,
            message: e.to_string(),
        })?);
        let mut sites = Vec::with_capacity(blocks.len());
        let mut curves = Vec::with_capacity(blocks.len());
        for b in blocks {
            if b.ts != grid.points() {
                return Err(Error::Parse {
                    row: b.first_row,
                    message: format!("site {} does not share the common t grid", b.site.id),
                });
            }
            curves.push(Curve::new(grid.clone(), b.values)?);
            sites.push(b.site);
        }
        Self::new(grid, sites, curves)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(e.into());
        w.write_record(["site_id", "u", "v", "t", "value"]).map_err(io)?;
        for (site, curve) in self.sites.iter().zip(&self.curves) {
            for (t, x) in self.grid.points().iter().zip(curve.values()) {
                w.write_record([
                    site.id.clone(),
                    site.u.to_string(),
                    site.v.to_string(),
                    t.to_string(),
                    x.to_string(),
                ])
                .map_err(io)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_grid(n: usize) -> Arc<TimeGrid> {
        Arc::new(TimeGrid::uniform(0.0, 1.0, n).unwrap())
    }

    #[test]
    fn grid_rejects_bad_points() {
        assert!(TimeGrid::new(vec![0.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, f64::NAN]).is_err());
        assert!(TimeGrid::new(vec![1.0, 0.5]).is_err());
    }

    #[test]
    fn weights_positive_and_sum_to_length() {
        let g = TimeGrid::new(vec![0.0, 0.1, 0.5, 0.55, 2.0]).unwrap();
        let w = g.weights();
        assert!(w.iter().all(|&x| x > 0.0));
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn inner_product_examples() {
        let g = unit_grid(101);
        let one = Curve::constant(g.clone(), 1.0).unwrap();
        let t = Curve::from_fn(g.clone(), |t| t).unwrap();
        assert!((l2_inner(&one, &one).unwrap() - 1.0).abs() < 1e-14);
        assert!((l2_inner(&one, &t).unwrap() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn dist_sq_examples() {
        let g = unit_grid(33);
        let a = Curve::from_fn(g.clone(), |t| t * t).unwrap();
        let b = a.map(|x| x - 2.0).unwrap();
        assert_eq!(l2_dist_sq(&a, &a).unwrap(), 0.0);
        assert!((l2_dist_sq(&a, &b).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let a = Curve::constant(unit_grid(5), 1.0).unwrap();
        let b = Curve::constant(unit_grid(6), 1.0).unwrap();
        assert!(matches!(l2_inner(&a, &b), Err(Error::GridMismatch)));
        assert!(matches!(l2_dist_sq(&a, &b), Err(Error::GridMismatch)));
    }

    #[test]
    fn spatial_dist_examples() {
        let p = Site::new("p", 0.0, 0.0);
        let q = Site::new("q", 3.0, 4.0);
        assert_eq!(spatial_dist(&p, &p), 0.0);
        assert_eq!(spatial_dist(&p, &q), 5.0);
    }

    #[test]
    fn dataset_rejects_duplicate_coordinates() {
        let g = unit_grid(3);
        let c = Curve::constant(g.clone(), 0.0).unwrap();
        let err = SpatialFunctionalDataset::new(
            g,
            vec![Site::new("a", 1.0, 2.0), Site::new("b", 1.0, 2.0)],
            vec![c.clone(), c],
        )
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateSite { .. }));
    }

    #[test]
    fn csv_round_trip_and_row_numbers() {
        let text = "site_id,u,v,t,value\n\
                    a,0,0,0,1\na,0,0,1,2\n\
                    b,1,0,0,3\nb,1,0,1,4\n";
        let ds = SpatialFunctionalDataset::read_csv(text.as_bytes()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.curves()[1].values(), &[3.0, 4.0]);
        let mut out = Vec::new();
        ds.write_csv(&mut out).unwrap();
        let back = SpatialFunctionalDataset::read_csv(out.as_slice()).unwrap();
        assert_eq!(back.curves(), ds.curves());

        let bad = "site_id,u,v,t,value\na,0,0,0,1\na,0,0,1,oops\n";
        match SpatialFunctionalDataset::read_csv(bad.as_bytes()) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
        let ragged = "site_id,u,v,t,value\na,0,0,0,1\na,0,0,1,2\nb,1,0,0,3\nb,1,0,2,4\n";
        match SpatialFunctionalDataset::read_csv(ragged.as_bytes()) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 4),
            other => panic!("unexpected {other:?}"),
        }
        let split = "site_id,u,v,t,value\na,0,0,0,1\nb,1,0,0,3\na,0,0,1,2\n";
        assert!(matches!(
            SpatialFunctionalDataset::read_csv(split.as_bytes()),
            Err(Error::Parse { row: 4, .. })
        ));
    }

    fn naive_trapezoid(t: &[f64], f: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..t.len() - 1 {
            s += (t[i + 1] - t[i]) * (f[i] + f[i + 1]) / 2.0;
        }
        s
    }

    proptest! {
        #[test]
        fn trapezoid_exact_on_linear(
            steps in prop::collection::vec(0.01f64..1.0, 1..40),
            a in -5.0f64..5.0, b in -5.0f64..5.0, t0 in -3.0f64..3.0,
        ) {
            let mut pts = vec![t0];
            for s in &steps { pts.push(pts.last().unwrap() + s); }
            let g = TimeGrid::new(pts.clone()).unwrap();
            let vals: Vec<f64> = pts.iter().map(|t| a * t + b).collect();
            let (lo, hi) = (pts[0], *pts.last().unwrap());
            let exact = 0.5 * a * (hi * hi - lo * lo) + b * (hi - lo);
            prop_assert!((g.integrate(&vals) - exact).abs() < 1e-12 * (1.0 + exact.abs()));
        }

        #[test]
        fn inner_matches_naive_sum(xs in prop::collection::vec(-10.0f64..10.0, 51),
                                   ys in prop::collection::vec(-10.0f64..10.0, 51)) {
            let g = unit_grid(51);
            let a = Curve::new(g.clone(), xs.clone()).unwrap();
            let b = Curve::new(g.clone(), ys.clone()).unwrap();
            let prod: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| x * y).collect();
            let oracle = naive_trapezoid(g.points(), &prod);
            prop_assert!((l2_inner(&a, &b).unwrap() - oracle).abs() <= 1e-12 * (1.0 + oracle.abs()));
            prop_assert!((l2_inner(&a, &b).unwrap() - l2_inner(&b, &a).unwrap()).abs() == 0.0);
        }

        #[test]
        fn dist_sq_polarization(xs in prop::collection::vec(-10.0f64..10.0, 51),
                                ys in prop::collection::vec(-10.0f64..10.0, 51)) {
            let g = unit_grid(51);
            let a = Curve::new(g.clone(), xs).unwrap();
            let b = Curve::new(g.clone(), ys).unwrap();
            let d = l2_dist_sq(&a, &b).unwrap();
            let diff = a.sub(&b).unwrap();
            prop_assert!((d - l2_inner(&diff, &diff).unwrap()).abs() <= 1e-12 * (1.0 + d));
            let expanded = l2_inner(&a, &a).unwrap() - 2.0 * l2_inner(&a, &b).unwrap()
                + l2_inner(&b, &b).unwrap();
            prop_assert!((d - expanded).abs() <= 1e-10 * (1.0 + d));
            prop_assert!(d >= 0.0);
        }

        #[test]
        fn spatial_dist_is_a_metric(p in (-10.0f64..10.0, -10.0f64..10.0),
                                    q in (-10.0f64..10.0, -10.0f64..10.0),
                                    r in (-10.0f64..10.0, -10.0f64..10.0)) {
            let (p, q, r) = (Site::at(p.0, p.1), Site::at(q.0, q.1), Site::at(r.0, r.1));
            prop_assert_eq!(spatial_dist(&p, &q), spatial_dist(&q, &p));
            prop_assert_eq!(spatial_dist(&p, &p), 0.0);
            prop_assert!(spatial_dist(&p, &r) <= spatial_dist(&p, &q) + spatial_dist(&q, &r) + 1e-12);
        }
    }
}
