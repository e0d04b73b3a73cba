//! Modular, Luxemburg norm and Hölder pairing for variable-exponent
//! Lebesgue spaces over the space-time cylinder.
//!
//! Quadrature is the midpoint rule: each time sample carries a weight and
//! belongs to one slab; each cell of Ω carries h^d.

use crate::exponent::ExponentField;
use crate::quad::pairwise_sum;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MusielakError {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error(
        "Luxemburg bisection did not converge in {iterations} iterations; bracket [{lo:e}, {hi:e}]"
    )]
    NoConvergence { iterations: usize, lo: f64, hi: f64 },
    #[error("tolerance must be positive")]
    BadTolerance,
}

/// Time sample of a space-time field: the slab it belongs to and its quadrature weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeSample {
    pub slab: usize,
    pub weight: f64,
}

/// Scalar values over Ω_T: one spatial grid per time sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    pub times: Vec<TimeSample>,
    pub values: Vec<Vec<f64>>,
}

impl SpaceTimeField {
    /// One sample per slab, weighted by the slab length.
    pub fn per_slab(s: &ExponentField, values: Vec<Vec<f64>>) -> Self {
        let times = (0..s.slabs.count())
            .map(|k| TimeSample {
                slab: k,
                weight: s.slabs.length(k),
            })
            .collect();
        SpaceTimeField { times, values }
    }

    pub fn constant(s: &ExponentField, c: f64) -> Self {
        Self::per_slab(s, vec![vec![c; s.grid.len()]; s.slabs.count()])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        SpaceTimeField {
            times: self.times.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.iter().map(|&x| f(x)).collect())
                .collect(),
        }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        SpaceTimeField {
            times: self.times.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
                .collect(),
        }
    }

    pub fn sup(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModularReport {
    pub modular_value: f64,
    pub luxemburg_norm: f64,
    pub lambda_bracket: (f64, f64),
    pub iterations: usize,
    /// Log-Hölder constant of the exponent (maximum over slabs).
    pub log_holder_c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairingReport {
    pub pairing: f64,
    pub norm_phi: f64,
    pub norm_psi: f64,
    /// 2·‖φ‖_s·‖ψ‖_s'
    pub bound: f64,
    pub holds: bool,
}

fn check_shape(g: &SpaceTimeField, s: &ExponentField) -> Result<(), MusielakError> {
    if g.times.len() != g.values.len() {
        return Err(MusielakError::Shape(format!(
            "{} time samples but {} value grids",
            g.times.len(),
            g.values.len()
        )));
    }
    for (k, (ts, v)) in g.times.iter().zip(&g.values).enumerate() {
        if v.len() != s.grid.len() {
            return Err(MusielakError::Shape(format!(
                "time sample {k} has {} values, exponent grid has {} cells",
                v.len(),
                s.grid.len()
            )));
        }
        if ts.slab >= s.slabs.count() {
            return Err(MusielakError::Shape(format!(
                "time sample {k} refers to slab {}, exponent has {}",
                ts.slab,
                s.slabs.count()
            )));
        }
    }
    Ok(())
}

fn modular_scaled(g: &SpaceTimeField, s: &ExponentField, inv_lambda: f64) -> f64 {
    let vol = s.grid.cell_volume();
    let per_time: Vec<f64> = g
        .times
        .iter()
        .zip(&g.values)
        .map(|(ts, v)| {
            let sv = &s.values[ts.slab];
            let terms: Vec<f64> = v
                .iter()
                .zip(sv)
                .zip(&s.mask)
                .map(|((&x, &p), &m)| {
                    if m {
                        (x.abs() * inv_lambda).powf(p)
                    } else {
                        0.0
                    }
                })
                .collect();
            ts.weight * vol * pairwise_sum(&terms)
        })
        .collect();
    pairwise_sum(&per_time)
}

/// ∫∫|g|^{s(t,x)} dx dt by the midpoint rule.
pub fn modular(g: &SpaceTimeField, s: &ExponentField) -> Result<f64, MusielakError> {
    check_shape(g, s)?;
    Ok(modular_scaled(g, s, 1.0))
}

/// inf{λ > 0 : modular(g/λ) ≤ 1} by bracketing and bisection. Stops when
/// |modular(g/λ) − 1| ≤ tol or the bracket collapses to rounding level.
pub fn luxemburg_norm(
    g: &SpaceTimeField,
    s: &ExponentField,
    tol: f64,
) -> Result<ModularReport, MusielakError> {
    check_shape(g, s)?;
    if !(tol > 0.0) {
        return Err(MusielakError::BadTolerance);
    }
    let m = modular_scaled(g, s, 1.0);
    let (p_lo, p_hi) = s.range();
    if m == 0.0 {
        return Ok(ModularReport {
            modular_value: 0.0,
            luxemburg_norm: 0.0,
            lambda_bracket: (0.0, 0.0),
            iterations: 0,
            log_holder_c: s.log_holder_c,
        });
    }
    let rho = |lambda: f64| modular_scaled(g, s, 1.0 / lambda);
    // modular(g/λ) lies between λ^{-p_lo}·m and λ^{-p_hi}·m, so λ* lies between
    // the corresponding roots.
    let r1 = m.powf(1.0 / p_lo);
    let r2 = m.powf(1.0 / p_hi);
    let mut lo = r1.min(r2);
    let mut hi = r1.max(r2);
    // Widen slightly so both ends are strict, guarding against rounding.
    lo *= 1.0 - 1e-12;
    hi *= 1.0 + 1e-12;
    let mut guard = 0;
    while rho(lo) < 1.0 && guard < 64 {
        lo *= 0.5;
        guard += 1;
    }
    while rho(hi) > 1.0 && guard < 128 {
        hi *= 2.0;
        guard += 1;
    }
    const CAP: usize = 200;
    let mut iterations = 0;
    let mut mid = 0.5 * (lo + hi);
    while iterations < CAP {
        iterations += 1;
        mid = 0.5 * (lo + hi);
        let r = rho(mid);
        if (r - 1.0).abs() <= tol {
            break;
        }
        if r > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * hi {
            mid = 0.5 * (lo + hi);
            break;
        }
    }
    if iterations >= CAP && (rho(mid) - 1.0).abs() > tol {
        return Err(MusielakError::NoConvergence { iterations, lo, hi });
    }
    Ok(ModularReport {
        modular_value: m,
        luxemburg_norm: mid,
        lambda_bracket: (lo, hi),
        iterations,
        log_holder_c: s.log_holder_c,
    })
}

/// ∫∫ φψ together with the generalized Hölder bound 2‖φ‖_s‖ψ‖_s'.
pub fn holder_pairing(
    phi: &SpaceTimeField,
    psi: &SpaceTimeField,
    s: &ExponentField,
) -> Result<PairingReport, MusielakError> {
    check_shape(phi, s)?;
    check_shape(psi, s)?;
    if phi.times != psi.times {
        return Err(MusielakError::Shape(
            "φ and ψ use different time samples".into(),
        ));
    }
    let vol = s.grid.cell_volume();
    let per_time: Vec<f64> = phi
        .times
        .iter()
        .enumerate()
        .map(|(k, ts)| {
            let terms: Vec<f64> = (0..s.grid.len())
                .map(|i| {
                    if s.mask[i] {
                        phi.values[k][i] * psi.values[k][i]
                    } else {
                        0.0
                    }
                })
                .collect();
            ts.weight * vol * pairwise_sum(&terms)
        })
        .collect();
    let pairing = pairwise_sum(&per_time);
    let sc = crate::exponent::conjugate_field(s);
    let norm_phi = luxemburg_norm(phi, s, 1e-12)?.luxemburg_norm;
    let norm_psi = luxemburg_norm(psi, &sc, 1e-12)?.luxemburg_norm;
    let bound = 2.0 * norm_phi * norm_psi;
    Ok(PairingReport {
        pairing,
        norm_phi,
        norm_psi,
        bound,
        holds: pairing.abs() <= bound * (1.0 + 1e-12),
    })
}

/// Modular of g/λ, used by the modular/norm equivalence checks.
pub fn modular_of_scaled(
    g: &SpaceTimeField,
    s: &ExponentField,
    lambda: f64,
) -> Result<f64, MusielakError> {
    check_shape(g, s)?;
    Ok(modular_scaled(g, s, 1.0 / lambda))
}
