//! Variable exponents s(t, x): piecewise constant in time across slabs,
//! sampled at cell centers within each slab.

use crate::grid::{distance, Domain, Grid, TimeSlabs};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExponentError {
    #[error("exponent-lower-bound: min s = {value} < (3d+2)/(d+2) = {bound} for d = {d} (slab {slab}, cell {cell})")]
    Bounds {
        value: f64,
        bound: String,
        d: usize,
        slab: usize,
        cell: usize,
    },
    #[error("exponent-upper-bound: max s = {value} exceeds declared s_max = {s_max}")]
    Upper { value: f64, s_max: f64 },
    #[error("data error: {0}")]
    Data(String),
    #[error("dimension error: {0}")]
    Shape(String),
}

/// Smallest admissible exponent, (3d+2)/(d+2).
pub fn s_min_bound(d: usize) -> f64 {
    (3 * d + 2) as f64 / (d + 2) as f64
}

/// Integrability threshold 3 + 2/d.
pub fn s_zero(d: usize) -> f64 {
    3.0 + 2.0 / d as f64
}

pub fn conjugate(s: f64) -> f64 {
    s / (s - 1.0)
}

/// Exponent of the space-time interpolation embedding, q(1 + 2/d).
pub fn interpolation_exponent(q: f64, d: usize) -> f64 {
    q * (1.0 + 2.0 / d as f64)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// The lower bound as a reduced fraction, e.g. "11/5" or "2".
pub fn s_min_bound_label(d: usize) -> String {
    let (n, m) = (3 * d + 2, d + 2);
    let g = gcd(n, m);
    if m / g == 1 {
        format!("{}", n / g)
    } else {
        format!("{}/{}", n / g, m / g)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExponentField {
    pub d: usize,
    pub grid: Grid,
    pub mask: Vec<bool>,
    pub slabs: TimeSlabs,
    /// values[slab][cell]
    pub values: Vec<Vec<f64>>,
    /// Observed minimum over Ω and all slabs.
    pub s_min: f64,
    /// Declared upper bound (defaults to the observed maximum).
    pub s_max: f64,
    pub log_holder_c: f64,
    pub log_holder_per_slab: Vec<f64>,
    /// True for a Hölder-conjugate field, which is exempt from the lower bound.
    pub is_conjugate: bool,
}

pub fn make_exponent_field(
    domain: &Domain,
    slab_values: Vec<Vec<f64>>,
    s_max: Option<f64>,
) -> Result<ExponentField, ExponentError> {
    let d = domain.d;
    let grid = domain.grid;
    if slab_values.len() != domain.slabs.count() {
        return Err(ExponentError::Shape(format!(
            "{} slab grids supplied, domain has {} slabs",
            slab_values.len(),
            domain.slabs.count()
        )));
    }
    let bound = s_min_bound(d);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (k, v) in slab_values.iter().enumerate() {
        if v.len() != grid.len() {
            return Err(ExponentError::Shape(format!(
                "slab {k} has {} values, grid has {} cells",
                v.len(),
                grid.len()
            )));
        }
        for (i, &x) in v.iter().enumerate() {
            if !domain.mask[i] {
                continue;
            }
            if !x.is_finite() {
                return Err(ExponentError::Data(format!(
                    "non-finite exponent at slab {k}, cell {i}"
                )));
            }
            if x < bound - 1e-12 {
                return Err(ExponentError::Bounds {
                    value: x,
                    bound: s_min_bound_label(d),
                    d,
                    slab: k,
                    cell: i,
                });
            }
            lo = lo.min(x);
            hi = hi.max(x);
        }
    }
    let s_max = match s_max {
        Some(m) if m < hi => {
            return Err(ExponentError::Upper {
                value: hi,
                s_max: m,
            })
        }
        Some(m) if !m.is_finite() => {
            return Err(ExponentError::Data("s_max must be finite".into()))
        }
        Some(m) => m,
        None => hi,
    };
    let per_slab: Vec<f64> = slab_values
        .iter()
        .map(|v| log_holder_estimate(&grid, &domain.mask, v))
        .collect();
    let c = per_slab.iter().cloned().fold(0.0, f64::max);
    Ok(ExponentField {
        d,
        grid,
        mask: domain.mask.clone(),
        slabs: domain.slabs.clone(),
        values: slab_values,
        s_min: lo,
        s_max,
        log_holder_c: c,
        log_holder_per_slab: per_slab,
        is_conjugate: false,
    })
}

/// Constant exponent on every slab.
pub fn constant_exponent(domain: &Domain, s: f64) -> Result<ExponentField, ExponentError> {
    let v = vec![vec![s; domain.grid.len()]; domain.slabs.count()];
    make_exponent_field(domain, v, None)
}

/// Pointwise Hölder conjugate. Applying it twice restores the field.
pub fn conjugate_field(s: &ExponentField) -> ExponentField {
    let values: Vec<Vec<f64>> = s
        .values
        .iter()
        .map(|v| v.iter().map(|&x| conjugate(x)).collect())
        .collect();
    let (lo, hi) = masked_range(&values, &s.mask);
    let per_slab: Vec<f64> = values
        .iter()
        .map(|v| log_holder_estimate(&s.grid, &s.mask, v))
        .collect();
    ExponentField {
        d: s.d,
        grid: s.grid,
        mask: s.mask.clone(),
        slabs: s.slabs.clone(),
        s_min: lo,
        s_max: if s.is_conjugate { s.s_max.max(hi) } else { hi },
        log_holder_c: per_slab.iter().cloned().fold(0.0, f64::max),
        log_holder_per_slab: per_slab,
        values,
        is_conjugate: !s.is_conjugate,
    }
}

fn masked_range(values: &[Vec<f64>], mask: &[bool]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        for (i, &x) in v.iter().enumerate() {
            if mask[i] {
                lo = lo.min(x);
                hi = hi.max(x);
            }
        }
    }
    (lo, hi)
}

impl ExponentField {
    pub fn at(&self, slab: usize, cell: usize) -> f64 {
        self.values[slab][cell]
    }

    pub fn at_time(&self, t: f64, cell: usize) -> f64 {
        self.values[self.slabs.slab_of(t)][cell]
    }

    /// Observed range over Ω and all slabs.
    pub fn range(&self) -> (f64, f64) {
        masked_range(&self.values, &self.mask)
    }

    pub fn is_constant(&self) -> bool {
        let (lo, hi) = self.range();
        lo == hi
    }

    /// One CSV document for slab `k`: a header with the slab and its time range,
    /// then the grid values row-major (last axis along a row).
    pub fn slab_to_csv(&self, k: usize) -> String {
        let (t0, t1) = self.slabs.range(k);
        let mut w = csv::WriterBuilder::new()
            .flexible(true)
            .from_writer(Vec::new());
        w.write_record([
            "slab",
            &k.to_string(),
            &format!("{t0:e}"),
            &format!("{t1:e}"),
        ])
        .unwrap();
        let row = self.grid.n[self.d - 1];
        for chunk in self.values[k].chunks(row) {
            w.write_record(chunk.iter().map(|x| format!("{x:e}")))
                .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

/// Parse one slab document written by [`ExponentField::slab_to_csv`] (or by hand).
/// Returns the slab index and row-major values.
pub fn slab_from_csv(text: &str, grid: &Grid) -> Result<(usize, Vec<f64>), ExponentError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = r.records();
    let header = records
        .next()
        .ok_or_else(|| ExponentError::Data("empty exponent CSV".into()))?
        .map_err(|e| ExponentError::Data(e.to_string()))?;
    if header.get(0) != Some("slab") {
        return Err(ExponentError::Data(
            "exponent CSV must start with a 'slab,<k>,<t0>,<t1>' header".into(),
        ));
    }
    let k: usize = header
        .get(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ExponentError::Data("bad slab index in exponent CSV header".into()))?;
    let mut values = Vec::with_capacity(grid.len());
    for (line, rec) in records.enumerate() {
        let rec = rec.map_err(|e| ExponentError::Data(e.to_string()))?;
        for field in rec.iter() {
            let x: f64 = field.parse().map_err(|_| {
                ExponentError::Data(format!("row {}: cannot parse '{field}'", line + 2))
            })?;
            values.push(x);
        }
    }
    if values.len() != grid.len() {
        return Err(ExponentError::Shape(format!(
            "exponent CSV has {} values, grid has {} cells",
            values.len(),
            grid.len()
        )));
    }
    Ok((k, values))
}

/// Largest sample of −|s(x) − s(y)|·log|x − y| over cell pairs with
/// |x − y| in [2h, 1/2]. Grids with more than 4096 cells in Ω are subsampled
/// on a strided sub-lattice.
pub fn log_holder_estimate(grid: &Grid, mask: &[bool], s: &[f64]) -> f64 {
    let count = mask.iter().filter(|&&m| m).count();
    let mut stride = 1usize;
    while count / stride.pow(grid.d as u32) > 4096 {
        stride += 1;
    }
    let pts: Vec<([f64; 3], f64)> = (0..grid.len())
        .filter(|&i| mask[i])
        .filter(|&i| grid.coords(i)[..grid.d].iter().all(|c| c % stride == 0))
        .map(|i| (grid.center_of(i), s[i]))
        .collect();
    let lo = 2.0 * grid.h;
    let mut best = 0.0f64;
    for a in 0..pts.len() {
        for b in a + 1..pts.len() {
            let ds = (pts[a].1 - pts[b].1).abs();
            if ds == 0.0 {
                continue;
            }
            let r = distance(&pts[a].0, &pts[b].0);
            if r >= lo && r <= 0.5 {
                best = best.max(-ds * r.ln());
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, DomainSpec};

    fn square(n: usize, bounds: Vec<f64>) -> Domain {
        let mut spec = DomainSpec::unit_box(2, n, *bounds.last().unwrap());
        spec.slab_bounds = bounds;
        build_domain(&spec).unwrap()
    }

    #[test]
    fn arithmetic_identities() {
        assert_eq!(s_min_bound(2), 2.0);
        assert_eq!(s_min_bound(3), 11.0 / 5.0);
        assert_eq!(s_zero(2), 4.0);
        assert_eq!(s_zero(3), 11.0 / 3.0);
        for d in [2, 3] {
            assert!((conjugate(s_zero(d) / 2.0) - s_min_bound(d)).abs() < 1e-15);
        }
        assert_eq!(interpolation_exponent(2.0, 2), 4.0);
        assert!((interpolation_exponent(2.0, 3) - 10.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn conjugates() {
        assert_eq!(conjugate(2.0), 2.0);
        assert!((conjugate(4.0) - 4.0 / 3.0).abs() < 1e-15);
        assert!((conjugate(11.0 / 5.0) - 11.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn constant_two_accepted_in_2d_with_equality() {
        let dom = square(8, vec![0.0, 1.0]);
        let s = constant_exponent(&dom, 2.0).unwrap();
        assert_eq!(s.s_min, 2.0);
        assert_eq!(s.log_holder_c, 0.0);
    }

    #[test]
    fn constant_two_rejected_in_3d() {
        let dom = build_domain(&DomainSpec::unit_box(3, 4, 1.0)).unwrap();
        let err = constant_exponent(&dom, 2.0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("exponent-lower-bound"), "{msg}");
        assert!(msg.contains("11/5"), "{msg}");
    }

    #[test]
    fn jump_in_time_has_zero_spatial_constant() {
        let dom = square(8, vec![0.0, 0.5, 1.0]);
        let s = make_exponent_field(&dom, vec![vec![2.0; 64], vec![3.0; 64]], None).unwrap();
        assert_eq!(s.log_holder_c, 0.0);
        assert_eq!(s.s_max, 3.0);
        assert_eq!(s.at_time(0.25, 0), 2.0);
        assert_eq!(s.at_time(0.75, 0), 3.0);
    }

    #[test]
    fn non_finite_is_a_data_error() {
        let dom = square(4, vec![0.0, 1.0]);
        let mut v = vec![2.5; 16];
        v[3] = f64::NAN;
        assert!(matches!(
            make_exponent_field(&dom, vec![v], None),
            Err(ExponentError::Data(_))
        ));
    }

    #[test]
    fn conjugate_is_an_involution() {
        let dom = square(8, vec![0.0, 1.0]);
        let v: Vec<f64> = (0..64).map(|i| 2.0 + (i as f64) * 0.03).collect();
        let s = make_exponent_field(&dom, vec![v], None).unwrap();
        let cc = conjugate_field(&conjugate_field(&s));
        for (a, b) in cc.values[0].iter().zip(&s.values[0]) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(!cc.is_conjugate);
    }

    #[test]
    fn log_holder_of_linear_profile_matches_scan() {
        // s = 2 + x: the sampled constant is max over r in [2h, 1/2] of -r log r
        // restricted to lattice distances, bounded by 1/e.
        let dom = square(16, vec![0.0, 1.0]);
        let v: Vec<f64> = (0..256).map(|i| 2.0 + dom.grid.center_of(i)[0]).collect();
        let s = make_exponent_field(&dom, vec![v], None).unwrap();
        assert!(s.log_holder_c > 0.3 && s.log_holder_c <= (-1.0f64).exp() + 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let dom = square(4, vec![0.0, 0.5, 1.0]);
        let v: Vec<f64> = (0..16).map(|i| 2.0 + i as f64 / 7.0).collect();
        let s = make_exponent_field(&dom, vec![v.clone(), vec![3.0; 16]], None).unwrap();
        let text = s.slab_to_csv(0);
        let (k, back) = slab_from_csv(&text, &dom.grid).unwrap();
        assert_eq!(k, 0);
        assert_eq!(back, v);
    }
}
