//! Finite ball covering of Ω with exponent bounds per ball and slab, and
//! the subordinate smooth partition of unity.

use crate::exponent::ExponentField;
use crate::grid::{distance, Domain};
use crate::mollifier::bump;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoveringError {
    #[error("resolution too coarse: no admissible radius at or above 2h = {min_r} (oscillation {osc:.4} > {limit:.4} already at the smallest radius)")]
    TooCoarse { min_r: f64, osc: f64, limit: f64 },
    #[error("coverage error: cell {cell} is not covered by any ball")]
    Uncovered { cell: usize },
    #[error("dimension error: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covering {
    pub d: usize,
    /// Common ball radius.
    pub r: f64,
    pub centers: Vec<[f64; 3]>,
    /// Infimum of s over B_2r ∩ Ω, per ball and slab.
    pub inf_s: Vec<Vec<f64>>,
    /// Supremum of s over B_2r ∩ Ω, per ball and slab.
    pub sup_s: Vec<Vec<f64>>,
    /// inf_s·(1 + 2/d), per ball and slab.
    pub interp_s: Vec<Vec<f64>>,
    /// The lower exponent bound used by the oscillation criterion.
    pub s_min: f64,
    pub zeta: Option<PartitionOfUnity>,
}

/// Smallest oscillation bound over balls of radius `rho` around every cell
/// of Ω, for every slab; returns the worst oscillation found, stopping at
/// the first one above `limit`.
fn worst_oscillation(domain: &Domain, s: &ExponentField, rho: f64, limit: f64) -> f64 {
    let g = &domain.grid;
    let cells: Vec<usize> = (0..g.len()).filter(|&i| domain.mask[i]).collect();
    let m = (rho / g.h).ceil() as isize;
    let zr = if g.d == 3 { m } else { 0 };
    let mut offsets = Vec::new();
    for i in -m..=m {
        for j in -m..=m {
            for k in -zr..=zr {
                if (((i * i + j * j + k * k) as f64).sqrt() * g.h) <= rho * (1.0 + 1e-12) {
                    offsets.push([i, j, k]);
                }
            }
        }
    }
    let mut worst = 0.0f64;
    for slab in 0..s.slabs.count() {
        let v = &s.values[slab];
        for &i in &cells {
            let c = g.coords(i);
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for o in &offsets {
                let q = [
                    c[0] as isize + o[0],
                    c[1] as isize + o[1],
                    c[2] as isize + o[2],
                ];
                if (0..3).any(|a| q[a] < 0 || q[a] >= g.n[a] as isize) {
                    continue;
                }
                let j = g.index([q[0] as usize, q[1] as usize, q[2] as usize]);
                if domain.mask[j] {
                    lo = lo.min(v[j]);
                    hi = hi.max(v[j]);
                }
            }
            worst = worst.max(hi - lo);
            if worst > limit {
                return worst;
            }
        }
    }
    worst
}

/// Whether radius r passes the oscillation criterion. Actual ball centers
/// sit within h√d/2 of a cell center, so the doubled ball is widened by that.
pub fn radius_admissible(domain: &Domain, s: &ExponentField, r: f64) -> bool {
    let limit = s.s_min / domain.d as f64;
    let rho = 2.0 * r + domain.h() * (domain.d as f64).sqrt() / 2.0;
    worst_oscillation(domain, s, rho, limit) <= limit + 1e-12
}

/// Ball centers for radius r: a lattice of spacing r through the box center,
/// keeping lattice boxes that contain a cell of Ω, projected onto the hull of
/// cell centers. Every cell center is then within r√d/2 < r of a center.
pub fn lattice_centers(domain: &Domain, r: f64) -> Vec<[f64; 3]> {
    let g = &domain.grid;
    let d = domain.d;
    let mut per_axis: Vec<Vec<f64>> = Vec::new();
    for a in 0..d {
        let mid = g.origin[a] + 0.5 * g.extent(a);
        let lo_x = g.origin[a] + 0.5 * g.h;
        let hi_x = g.origin[a] + g.extent(a) - 0.5 * g.h;
        let kmax = ((g.extent(a) / r).ceil() as isize) + 1;
        let mut centers = Vec::new();
        for k in -kmax..=kmax {
            let c = mid + k as f64 * r;
            // Half-open box [c − r/2, c + r/2) must contain a cell center.
            let first = ((c - 0.5 * r - lo_x) / g.h).ceil().max(0.0);
            let x = lo_x + first * g.h;
            if x < c + 0.5 * r && x <= hi_x + 1e-12 {
                centers.push(c);
            }
        }
        per_axis.push(centers);
    }
    let mut out = Vec::new();
    let zs = if d == 3 {
        per_axis[2].clone()
    } else {
        vec![0.0]
    };
    for &cx in &per_axis[0] {
        for &cy in &per_axis[1] {
            for &cz in &zs {
                let c = [cx, cy, cz];
                let has_cell = (0..g.len()).any(|i| {
                    domain.mask[i] && {
                        let x = g.center_of(i);
                        (0..d).all(|a| x[a] >= c[a] - 0.5 * r && x[a] < c[a] + 0.5 * r)
                    }
                });
                if !has_cell {
                    continue;
                }
                let mut p = [0.0; 3];
                for a in 0..d {
                    let lo_x = g.origin[a] + 0.5 * g.h;
                    let hi_x = g.origin[a] + g.extent(a) - 0.5 * g.h;
                    p[a] = c[a].clamp(lo_x, hi_x);
                }
                out.push(p);
            }
        }
    }
    out
}

/// Largest admissible radius by bisection over [2h, diam Ω], resolved to h/2.
pub fn select_radius(domain: &Domain, s: &ExponentField) -> Result<f64, CoveringError> {
    let h = domain.h();
    let diam = domain.grid.diameter();
    if radius_admissible(domain, s, diam) {
        return Ok(diam);
    }
    let lo0 = 2.0 * h;
    if !radius_admissible(domain, s, lo0) {
        let limit = s.s_min / domain.d as f64;
        let rho = 2.0 * lo0 + h * (domain.d as f64).sqrt() / 2.0;
        return Err(CoveringError::TooCoarse {
            min_r: lo0,
            osc: worst_oscillation(domain, s, rho, f64::INFINITY),
            limit,
        });
    }
    let (mut lo, mut hi) = (lo0, diam);
    while hi - lo > 0.5 * h {
        let mid = 0.5 * (lo + hi);
        if radius_admissible(domain, s, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Exhaustive scan of radii 2h, 2h + h/4, ... returning the largest admissible one.
pub fn scan_radius(domain: &Domain, s: &ExponentField) -> Option<f64> {
    let h = domain.h();
    let diam = domain.grid.diameter();
    let mut r = 2.0 * h;
    let mut best = None;
    while r <= diam {
        if radius_admissible(domain, s, r) {
            best = Some(r);
        }
        r += 0.25 * h;
    }
    best
}

pub fn build_covering(domain: &Domain, s: &ExponentField) -> Result<Covering, CoveringError> {
    if s.grid.n != domain.grid.n || s.slabs.count() != domain.slabs.count() {
        return Err(CoveringError::Shape(
            "exponent field does not match the domain".into(),
        ));
    }
    let r = select_radius(domain, s)?;
    Ok(covering_with_radius(domain, s, r))
}

/// Covering for a given radius, with exponent bounds filled in.
pub fn covering_with_radius(domain: &Domain, s: &ExponentField, r: f64) -> Covering {
    let g = &domain.grid;
    let d = domain.d;
    let centers = lattice_centers(domain, r);
    let nslab = s.slabs.count();
    let mut inf_s = Vec::new();
    let mut sup_s = Vec::new();
    let mut interp_s = Vec::new();
    for c in &centers {
        let cells: Vec<usize> = (0..g.len())
            .filter(|&i| domain.mask[i] && distance(&g.center_of(i), c) <= 2.0 * r)
            .collect();
        let mut qs = Vec::new();
        let mut rs = Vec::new();
        let mut bigs = Vec::new();
        for k in 0..nslab {
            let lo = cells
                .iter()
                .map(|&i| s.at(k, i))
                .fold(f64::INFINITY, f64::min);
            let hi = cells
                .iter()
                .map(|&i| s.at(k, i))
                .fold(f64::NEG_INFINITY, f64::max);
            qs.push(lo);
            rs.push(hi);
            bigs.push(lo * (1.0 + 2.0 / d as f64));
        }
        inf_s.push(qs);
        sup_s.push(rs);
        interp_s.push(bigs);
    }
    Covering {
        d,
        r,
        centers,
        inf_s,
        sup_s,
        interp_s,
        s_min: s.s_min,
        zeta: None,
    }
}

impl Covering {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Smallest gap R_i − r_i over balls and slabs.
    pub fn min_gap(&self) -> f64 {
        let mut g = f64::INFINITY;
        for (big, sup) in self.interp_s.iter().zip(&self.sup_s) {
            for (a, b) in big.iter().zip(sup) {
                g = g.min(a - b);
            }
        }
        g
    }

    /// Smallest R_i over balls and slabs.
    pub fn min_interp(&self) -> f64 {
        self.interp_s
            .iter()
            .flatten()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    /// CSV: ball, center coordinates, r, then per slab inf, sup, interp.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let axes = ["x", "y", "z"];
        let nslab = self.inf_s.first().map(|v| v.len()).unwrap_or(0);
        let mut header = vec!["ball".to_string()];
        for a in axes.iter().take(self.d) {
            header.push(format!("c{a}"));
        }
        header.push("r".into());
        for k in 0..nslab {
            header.push(format!("inf_s_{k}"));
            header.push(format!("sup_s_{k}"));
            header.push(format!("interp_s_{k}"));
        }
        w.write_record(&header).unwrap();
        for (i, c) in self.centers.iter().enumerate() {
            let mut row = vec![i.to_string()];
            for x in c.iter().take(self.d) {
                row.push(format!("{x:e}"));
            }
            row.push(format!("{:e}", self.r));
            for k in 0..nslab {
                row.push(format!("{:e}", self.inf_s[i][k]));
                row.push(format!("{:e}", self.sup_s[i][k]));
                row.push(format!("{:e}", self.interp_s[i][k]));
            }
            w.write_record(&row).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    /// ζ_i at an arbitrary point (zero where no ball reaches).
    pub fn zeta_at(&self, i: usize, x: [f64; 3]) -> f64 {
        let pu = self.zeta.as_ref().expect("partition of unity not built");
        pu.eval(i, x)
    }
}

/// Normalized bumps: ζ_i = b_i / Σ_j b_j with b_i the indicator of B_{3r/4}
/// mollified at width r/4, tabulated radially.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionOfUnity {
    pub r: f64,
    pub centers: Vec<[f64; 3]>,
    /// Profile at ρ/r = k/(len − 1).
    pub profile: Vec<f64>,
    /// ζ_i at every cell.
    pub values: Vec<Vec<f64>>,
}

/// Radial profile of the indicator of the ball of radius 3/4 convolved
/// with the unit-mass bump of radius 1/4, sampled on [0, 1].
pub fn smoothed_indicator_profile(d: usize, samples: usize) -> Vec<f64> {
    let m: isize = if d == 2 { 160 } else { 48 };
    let zr = if d == 3 { m } else { 0 };
    let step = 1.0 / m as f64;
    let mut pts = Vec::new();
    let mut total = 0.0;
    for i in -m..=m {
        for j in -m..=m {
            for k in -zr..=zr {
                let z = [i as f64 * step, j as f64 * step, k as f64 * step];
                let w = bump((z[0] * z[0] + z[1] * z[1] + z[2] * z[2]).sqrt());
                if w > 0.0 {
                    pts.push((z, w));
                    total += w;
                }
            }
        }
    }
    (0..samples)
        .map(|k| {
            let rho = k as f64 / (samples - 1) as f64;
            if rho >= 1.0 {
                return 0.0;
            }
            let mut s = 0.0;
            for (z, w) in &pts {
                let y = [rho - 0.25 * z[0], -0.25 * z[1], -0.25 * z[2]];
                if (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt() < 0.75 {
                    s += w;
                }
            }
            s / total
        })
        .collect()
}

impl PartitionOfUnity {
    fn raw(&self, i: usize, x: [f64; 3]) -> f64 {
        let rho = distance(&x, &self.centers[i]) / self.r;
        if rho >= 1.0 {
            return 0.0;
        }
        let n = self.profile.len() - 1;
        let f = rho * n as f64;
        let k = (f.floor() as usize).min(n - 1);
        let w = f - k as f64;
        (1.0 - w) * self.profile[k] + w * self.profile[k + 1]
    }

    pub fn eval(&self, i: usize, x: [f64; 3]) -> f64 {
        let total: f64 = (0..self.centers.len()).map(|j| self.raw(j, x)).sum();
        if total <= 0.0 {
            return 0.0;
        }
        self.raw(i, x) / total
    }

    /// Number of balls whose support contains x.
    pub fn multiplicity(&self, x: [f64; 3]) -> usize {
        (0..self.centers.len())
            .filter(|&j| self.raw(j, x) > 0.0)
            .count()
    }
}

pub fn partition_of_unity(cov: &Covering, domain: &Domain) -> Result<Covering, CoveringError> {
    let g = &domain.grid;
    let mut pu = PartitionOfUnity {
        r: cov.r,
        centers: cov.centers.clone(),
        profile: smoothed_indicator_profile(domain.d, 513),
        values: Vec::new(),
    };
    let mut values = vec![vec![0.0; g.len()]; cov.len()];
    for cell in 0..g.len() {
        if !domain.mask[cell] {
            continue;
        }
        let x = g.center_of(cell);
        let raw: Vec<f64> = (0..cov.len()).map(|j| pu.raw(j, x)).collect();
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(CoveringError::Uncovered { cell });
        }
        for (j, v) in raw.iter().enumerate() {
            values[j][cell] = v / total;
        }
    }
    pu.values = values;
    Ok(Covering {
        zeta: Some(pu),
        ..cov.clone()
    })
}
