//! Constitutive stress laws, their θ-regularization and sampled
//! verification of the structural assumptions.

use crate::exponent::{conjugate, ExponentField};
use crate::tensor::{ncomp, AsymmetryError, SymTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StressError {
    #[error("symmetry error: {0}")]
    Symmetry(String),
    #[error("invalid stress model: {0}")]
    Invalid(String),
}

impl From<AsymmetryError> for StressError {
    fn from(e: AsymmetryError) -> Self {
        StressError::Symmetry(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StressKind {
    /// S = (ν₀ + ν₁|ξ|^{s−2}) ξ
    PowerLaw { nu0: f64, nu1: f64 },
    /// S = φ(|ξ|) ξ with φ tabulated per slab at increasing radii and
    /// interpolated linearly (constant beyond the table ends).
    Table { radii: Vec<f64>, phi: Vec<Vec<f64>> },
}

#[derive(Debug, Clone)]
pub struct StressModel {
    pub kind: StressKind,
    pub s: Arc<ExponentField>,
    /// Coercivity offset, constant over Ω_T.
    pub h: f64,
    /// Coercivity constant.
    pub c: f64,
}

impl StressModel {
    pub fn power_law(nu0: f64, nu1: f64, s: Arc<ExponentField>) -> Self {
        StressModel {
            kind: StressKind::PowerLaw { nu0, nu1 },
            s,
            h: 1.0,
            c: 1.0,
        }
    }

    pub fn table(
        radii: Vec<f64>,
        phi: Vec<Vec<f64>>,
        s: Arc<ExponentField>,
    ) -> Result<Self, StressError> {
        if radii.len() < 2 {
            return Err(StressError::Invalid(
                "stress table needs at least two radii".into(),
            ));
        }
        if radii.windows(2).any(|w| w[1] <= w[0]) || radii[0] < 0.0 {
            return Err(StressError::Invalid(
                "stress table radii must be nonnegative and increasing".into(),
            ));
        }
        if phi.len() != s.slabs.count() {
            return Err(StressError::Invalid(format!(
                "stress table has {} slab rows, exponent has {} slabs",
                phi.len(),
                s.slabs.count()
            )));
        }
        if phi
            .iter()
            .any(|row| row.len() != radii.len() || row.iter().any(|v| !v.is_finite()))
        {
            return Err(StressError::Invalid(
                "stress table rows must match the radii and be finite".into(),
            ));
        }
        Ok(StressModel {
            kind: StressKind::Table { radii, phi },
            s,
            h: 1.0,
            c: 1.0,
        })
    }

    /// Scalar multiplier φ with S = φ·ξ, and its derivative in |ξ|.
    fn phi(&self, s_val: f64, slab: usize, r: f64) -> (f64, f64) {
        match &self.kind {
            StressKind::PowerLaw { nu0, nu1 } => {
                if *nu1 == 0.0 || s_val == 2.0 {
                    return (nu0 + nu1, 0.0);
                }
                if r == 0.0 {
                    // Continuous extension of |ξ|^{s−2}ξ.
                    return (*nu0, 0.0);
                }
                let p = r.powf(s_val - 2.0);
                (nu0 + nu1 * p, nu1 * (s_val - 2.0) * p / r)
            }
            StressKind::Table { radii, phi } => {
                let row = &phi[slab];
                let n = radii.len();
                if r <= radii[0] {
                    return (row[0], 0.0);
                }
                if r >= radii[n - 1] {
                    return (row[n - 1], 0.0);
                }
                let j = radii.partition_point(|&x| x <= r) - 1;
                let w = (r - radii[j]) / (radii[j + 1] - radii[j]);
                let slope = (row[j + 1] - row[j]) / (radii[j + 1] - radii[j]);
                (row[j] + w * (row[j + 1] - row[j]), slope)
            }
        }
    }

    /// S at an explicit exponent value and slab.
    #[inline]
    pub fn stress_with(&self, s_val: f64, slab: usize, xi: &SymTensor) -> SymTensor {
        let (phi, _) = self.phi(s_val, slab, xi.norm());
        xi.scale(phi)
    }

    /// Directional derivative dS(ξ)[η].
    pub fn jacobian_with(
        &self,
        s_val: f64,
        slab: usize,
        xi: &SymTensor,
        eta: &SymTensor,
    ) -> SymTensor {
        let r = xi.norm();
        let (phi, dphi) = self.phi(s_val, slab, r);
        let mut out = eta.scale(phi);
        if r > 0.0 && dphi != 0.0 {
            out = out + xi.scale(dphi * xi.dot(eta) / r);
        }
        out
    }

    pub fn stress_at(&self, slab: usize, cell: usize, xi: &SymTensor) -> SymTensor {
        self.stress_with(self.s.at(slab, cell), slab, xi)
    }
}

/// S(t, x, ξ) for a symmetric ξ given as a full matrix.
pub fn evaluate_stress(
    model: &StressModel,
    t: f64,
    cell: usize,
    xi: &[[f64; 3]; 3],
) -> Result<SymTensor, StressError> {
    let d = model.s.d;
    let xi = SymTensor::from_matrix(d, xi)?;
    let slab = model.s.slabs.slab_of(t);
    Ok(model.stress_at(slab, cell, &xi))
}

/// Young constant 1/(s'·s^{s'−1}) of m(|ξ|) = |ξ|^s.
pub fn young_constant(s_max: f64) -> f64 {
    let sp = conjugate(s_max);
    1.0 / (sp * s_max.powf(sp - 1.0))
}

#[derive(Debug, Clone)]
pub struct RegularizedStress {
    pub base: StressModel,
    pub theta: f64,
    pub s_max: f64,
    pub c_star: f64,
}

impl RegularizedStress {
    pub fn new(base: StressModel, theta: f64) -> Result<Self, StressError> {
        if !(theta >= 0.0) || !theta.is_finite() {
            return Err(StressError::Invalid(
                "θ must be a finite nonnegative number".into(),
            ));
        }
        let s_max = base.s.s_max;
        Ok(RegularizedStress {
            base,
            theta,
            s_max,
            c_star: young_constant(s_max),
        })
    }

    pub fn with_theta(&self, theta: f64) -> Self {
        RegularizedStress {
            theta,
            ..self.clone()
        }
    }

    /// ∇_ξ |ξ|^{s_max} = s_max |ξ|^{s_max−2} ξ
    #[inline]
    pub fn grad_m(&self, xi: &SymTensor) -> SymTensor {
        let r = xi.norm();
        if r == 0.0 {
            return SymTensor::zero(xi.d);
        }
        xi.scale(self.s_max * r.powf(self.s_max - 2.0))
    }

    #[inline]
    pub fn stress_with(&self, s_val: f64, slab: usize, xi: &SymTensor) -> SymTensor {
        let base = self.base.stress_with(s_val, slab, xi);
        if self.theta == 0.0 {
            return base;
        }
        base + self.grad_m(xi).scale(self.theta)
    }

    pub fn jacobian_with(
        &self,
        s_val: f64,
        slab: usize,
        xi: &SymTensor,
        eta: &SymTensor,
    ) -> SymTensor {
        let mut out = self.base.jacobian_with(s_val, slab, xi, eta);
        if self.theta > 0.0 {
            let r = xi.norm();
            if self.s_max == 2.0 {
                out = out + eta.scale(2.0 * self.theta);
            } else if r > 0.0 {
                let p = r.powf(self.s_max - 2.0);
                out = out + eta.scale(self.theta * self.s_max * p);
                out = out
                    + xi.scale(
                        self.theta * self.s_max * (self.s_max - 2.0) * p / (r * r) * xi.dot(eta),
                    );
            }
        }
        out
    }

    pub fn stress_at(&self, slab: usize, cell: usize, xi: &SymTensor) -> SymTensor {
        self.stress_with(self.base.s.at(slab, cell), slab, xi)
    }

    /// Denominator shared by c^θ and h^θ; the bound is derived for θ ≤ 1.
    pub fn theta_coercivity_factor(&self) -> f64 {
        let c = self.base.c;
        let sp = conjugate(self.s_max);
        ((1.0f64).min(c * self.c_star) * 2f64.powf(1.0 - sp)).min(c * self.theta)
    }

    pub fn c_theta(&self) -> f64 {
        self.base.c / self.theta_coercivity_factor()
    }

    pub fn h_theta(&self) -> f64 {
        (self.base.h + 1.0) / self.theta_coercivity_factor()
    }
}

pub fn regularized_stress(
    reg: &RegularizedStress,
    t: f64,
    cell: usize,
    xi: &[[f64; 3]; 3],
) -> Result<SymTensor, StressError> {
    let d = reg.base.s.d;
    let xi = SymTensor::from_matrix(d, xi)?;
    let slab = reg.base.s.slabs.slab_of(t);
    Ok(reg.stress_at(slab, cell, &xi))
}

/// |∇m·ξ − |ξ|^{s_max} − C_*|∇m|^{s'_max}|
pub fn young_identity_residual(reg: &RegularizedStress, xi: &SymTensor) -> f64 {
    let g = reg.grad_m(xi);
    let sp = conjugate(reg.s_max);
    (g.dot(xi) - xi.norm().powf(reg.s_max) - reg.c_star * g.norm().powf(sp)).abs()
}

/// Random symmetric tensors with Frobenius norm log-uniform in a range.
#[derive(Debug, Clone, Copy)]
pub struct Sampler {
    pub count: usize,
    pub xi_min: f64,
    pub xi_max: f64,
    pub seed: u64,
}

impl Sampler {
    pub fn new(count: usize, xi_min: f64, xi_max: f64, seed: u64) -> Self {
        Sampler {
            count,
            xi_min,
            xi_max,
            seed,
        }
    }
}

pub fn random_sym(rng: &mut ChaCha8Rng, d: usize, magnitude: f64) -> SymTensor {
    let mut t = SymTensor::zero(d);
    for k in 0..ncomp(d) {
        t.c[k] = rng.sample(StandardNormal);
    }
    let n = t.norm();
    if n == 0.0 {
        return t;
    }
    t.scale(magnitude / n)
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        return lo;
    }
    let a = lo.max(1e-300).ln();
    let b = hi.ln();
    (a + rng.gen::<f64>() * (b - a)).exp()
}

/// A random point of Ω_T: slab and masked cell.
fn random_point(rng: &mut ChaCha8Rng, s: &ExponentField, cells: &[usize]) -> (usize, usize) {
    let slab = rng.gen_range(0..s.slabs.count());
    let cell = cells[rng.gen_range(0..cells.len())];
    (slab, cell)
}

/// Coercivity constant by sampled maximization of
/// (|ξ|^s + |S|^{s'} − h)/(S:ξ), with a 1.5× safety factor and clamped to ≥ 1.
pub fn fit_coercivity(model: &StressModel, sampler: &Sampler) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let s = &model.s;
    let cells: Vec<usize> = (0..s.grid.len()).filter(|&i| s.mask[i]).collect();
    let mut worst = 0.0f64;
    for _ in 0..sampler.count {
        let (slab, cell) = random_point(&mut rng, s, &cells);
        let r = log_uniform(&mut rng, sampler.xi_min, sampler.xi_max);
        let xi = random_sym(&mut rng, s.d, r);
        let sv = s.at(slab, cell);
        let st = model.stress_with(sv, slab, &xi);
        let pairing = st.dot(&xi);
        if pairing <= 0.0 {
            continue;
        }
        let num = r.powf(sv) + st.norm().powf(conjugate(sv)) - model.h;
        worst = worst.max(num / pairing);
    }
    (1.5 * worst).max(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub samples: usize,
    /// Smallest slack observed (negative means violated beyond tolerance when `violations > 0`).
    pub min_residual: f64,
    pub violations: usize,
    pub witness: Option<String>,
}

impl CheckResult {
    fn new(name: &'static str) -> Self {
        CheckResult {
            name,
            samples: 0,
            min_residual: f64::INFINITY,
            violations: 0,
            witness: None,
        }
    }

    fn record(&mut self, slack: f64, tol: f64, witness: impl FnOnce() -> String) {
        self.samples += 1;
        if slack < self.min_residual {
            self.min_residual = slack;
        }
        if slack < -tol {
            self.violations += 1;
            if self.witness.is_none() {
                self.witness = Some(witness());
            }
        }
    }

    pub fn pass(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub checks: Vec<CheckResult>,
    pub c: f64,
    pub h: f64,
    pub c_theta: Option<f64>,
    pub h_theta: Option<f64>,
    pub theta: f64,
    /// Whether h is the default constant 1 rather than user supplied.
    pub h_is_default: bool,
}

impl AssumptionReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass())
    }

    pub fn total_violations(&self) -> usize {
        self.checks.iter().map(|c| c.violations).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["check", "samples", "min_residual", "violations", "witness"])
            .unwrap();
        for c in &self.checks {
            w.write_record([
                c.name.to_string(),
                c.samples.to_string(),
                format!("{:e}", c.min_residual),
                c.violations.to_string(),
                c.witness.clone().unwrap_or_default(),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

fn fmt_tensor(t: &SymTensor) -> String {
    let parts: Vec<String> = t.comps().iter().map(|x| format!("{x:.6e}")).collect();
    format!("[{}]", parts.join(" "))
}

/// Sampled verification of: stress vanishing at zero, coercivity/growth,
/// monotonicity, and for θ > 0 the regularized coercivity bounds and strict
/// monotonicity.
pub fn verify_assumptions(reg: &RegularizedStress, sampler: &Sampler) -> AssumptionReport {
    let model = &reg.base;
    let s = &model.s;
    let d = s.d;
    let theta = reg.theta;
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed ^ 0x5eed_0f_a55e);
    let cells: Vec<usize> = (0..s.grid.len()).filter(|&i| s.mask[i]).collect();
    let s_max = reg.s_max;
    let sp_max = conjugate(s_max);

    let mut zero = CheckResult::new("stress-vanishes-at-zero");
    let mut coerc = CheckResult::new("coercivity-growth");
    let mut mono = CheckResult::new("monotonicity");
    let mut reg_zero = CheckResult::new("regularized-vanishes-at-zero");
    let mut reg_var = CheckResult::new("regularized-coercivity-variable-exponent");
    let mut reg_max = CheckResult::new("regularized-coercivity-s-max");
    let mut strict = CheckResult::new("regularized-strict-monotonicity");
    let c = model.c;
    let h = model.h;
    let (c_th, h_th) = if theta > 0.0 {
        (reg.c_theta(), reg.h_theta())
    } else {
        (0.0, 0.0)
    };

    for _ in 0..sampler.count {
        let (slab, cell) = random_point(&mut rng, s, &cells);
        let sv = s.at(slab, cell);
        let spv = conjugate(sv);
        let r1 = log_uniform(&mut rng, sampler.xi_min, sampler.xi_max);
        let xi1 = random_sym(&mut rng, d, r1);
        // Alternate far pairs with nearby ones so strictness is probed locally too.
        let xi2 = if rng.gen::<bool>() {
            let r2 = log_uniform(&mut rng, sampler.xi_min, sampler.xi_max);
            random_sym(&mut rng, d, r2)
        } else {
            xi1 + random_sym(&mut rng, d, r1 * 1e-3)
        };

        let z = model.stress_with(sv, slab, &SymTensor::zero(d)).norm();
        zero.record(-z, 0.0, || {
            format!("slab {slab} cell {cell}: |S(0)| = {z:e}")
        });

        let s1 = model.stress_with(sv, slab, &xi1);
        let lhs = c * s1.dot(&xi1);
        let rhs = r1.powf(sv) + s1.norm().powf(spv) - h;
        let scale = 1.0 + r1.powf(sv) + s1.norm().powf(spv);
        coerc.record(lhs - rhs, 1e-9 * scale, || {
            format!(
                "slab {slab} cell {cell} xi {}: c S:xi - |xi|^s - |S|^s' + h = {:e}",
                fmt_tensor(&xi1),
                lhs - rhs
            )
        });

        let s2 = model.stress_with(sv, slab, &xi2);
        let dxi = xi1 - xi2;
        let ds = s1 - s2;
        let m = ds.dot(&dxi);
        let mscale = ds.norm() * dxi.norm();
        mono.record(m, 1e-12 * mscale, || {
            format!(
                "slab {slab} cell {cell} xi1 {} xi2 {}: (S1-S2):(xi1-xi2) = {m:e}",
                fmt_tensor(&xi1),
                fmt_tensor(&xi2)
            )
        });

        if theta > 0.0 {
            let z = reg.stress_with(sv, slab, &SymTensor::zero(d)).norm();
            reg_zero.record(-z, 0.0, || {
                format!("slab {slab} cell {cell}: |S_theta(0)| = {z:e}")
            });

            let st1 = reg.stress_with(sv, slab, &xi1);
            let gm = reg.grad_m(&xi1);
            let lhs = c * st1.dot(&xi1);
            let rhs = r1.powf(sv) + s1.norm().powf(spv) + theta * gm.dot(&xi1) - h;
            let scale = 1.0 + r1.powf(sv) + s1.norm().powf(spv) + theta * gm.dot(&xi1);
            reg_var.record(lhs - rhs, 1e-9 * scale, || {
                format!(
                    "slab {slab} cell {cell} xi {}: slack {:e}",
                    fmt_tensor(&xi1),
                    lhs - rhs
                )
            });

            let lhs = c_th * st1.dot(&xi1);
            let rhs = r1.powf(s_max) + st1.norm().powf(sp_max) - h_th;
            let scale = 1.0 + r1.powf(s_max) + st1.norm().powf(sp_max);
            reg_max.record(lhs - rhs, 1e-9 * scale, || {
                format!(
                    "slab {slab} cell {cell} xi {}: slack {:e}",
                    fmt_tensor(&xi1),
                    lhs - rhs
                )
            });

            let st2 = reg.stress_with(sv, slab, &xi2);
            let dst = st1 - st2;
            let m = dst.dot(&dxi);
            // Strictly positive: the regularizer alone contributes at least
            // this much for distinct arguments, so rounding cannot hide it.
            let distinct = dxi.norm() > 0.0;
            let slack = if distinct && m > 0.0 {
                m
            } else if distinct {
                -1.0
            } else {
                0.0
            };
            strict.record(slack, 0.0, || {
                format!(
                    "slab {slab} cell {cell} xi1 {} xi2 {}: value {m:e}",
                    fmt_tensor(&xi1),
                    fmt_tensor(&xi2)
                )
            });
        }
    }
    let mut checks = vec![zero, coerc, mono];
    if theta > 0.0 {
        checks.extend([reg_zero, reg_var, reg_max, strict]);
    }
    AssumptionReport {
        checks,
        c,
        h,
        c_theta: (theta > 0.0).then_some(c_th),
        h_theta: (theta > 0.0).then_some(h_th),
        theta,
        h_is_default: h == 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exponent::{constant_exponent, make_exponent_field};
    use crate::grid::{build_domain, DomainSpec};

    fn exponent(s: f64) -> Arc<ExponentField> {
        let dom = build_domain(&DomainSpec::unit_box(2, 4, 1.0)).unwrap();
        Arc::new(constant_exponent(&dom, s).unwrap())
    }

    fn jump_exponent() -> Arc<ExponentField> {
        let mut spec = DomainSpec::unit_box(2, 4, 1.0);
        spec.slab_bounds = vec![0.0, 0.5, 1.0];
        let dom = build_domain(&spec).unwrap();
        Arc::new(make_exponent_field(&dom, vec![vec![2.0; 16], vec![3.0; 16]], None).unwrap())
    }

    fn diag(d: usize, a: f64) -> SymTensor {
        SymTensor::identity(d).scale(a)
    }

    #[test]
    fn zero_newtonian_and_unit_modulus() {
        let m = StressModel::power_law(0.7, 1.3, exponent(3.0));
        assert_eq!(m.stress_at(0, 0, &SymTensor::zero(2)).norm(), 0.0);
        let newt = StressModel::power_law(0.7, 0.0, exponent(3.0));
        let xi = diag(2, 0.3);
        assert_eq!(newt.stress_at(0, 0, &xi), xi.scale(0.7));
        let unit = SymTensor::from_components(2, &[1.0, 0.0, 0.0]);
        let s = m.stress_at(0, 0, &unit);
        assert!((s.c[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn asymmetric_input_rejected() {
        let m = StressModel::power_law(1.0, 1.0, exponent(2.0));
        let bad = [[1.0, 0.2, 0.0], [0.1, 1.0, 0.0], [0.0; 3]];
        assert!(matches!(
            evaluate_stress(&m, 0.5, 0, &bad),
            Err(StressError::Symmetry(_))
        ));
    }

    #[test]
    fn regularization_reductions() {
        let base = StressModel::power_law(0.5, 1.0, exponent(2.0));
        let xi = SymTensor::from_components(2, &[0.3, -0.1, 0.2]);
        let r0 = RegularizedStress::new(base.clone(), 0.0).unwrap();
        assert_eq!(r0.stress_at(0, 0, &xi), base.stress_at(0, 0, &xi));
        let r = RegularizedStress::new(base.clone(), 0.25).unwrap();
        let expect = base.stress_at(0, 0, &xi) + xi.scale(2.0 * 0.25);
        let got = r.stress_at(0, 0, &xi);
        assert!((got - expect).norm() < 1e-15);
        assert_eq!(r.stress_at(0, 0, &SymTensor::zero(2)).norm(), 0.0);
    }

    #[test]
    fn young_constants() {
        assert!((young_constant(2.0) - 0.25).abs() < 1e-15);
        let expect = 3.0 / (4.0 * 4f64.powf(1.0 / 3.0));
        assert!((young_constant(4.0) - expect).abs() < 1e-15);
    }

    #[test]
    fn young_residual_vanishes_for_s_max_two() {
        let base = StressModel::power_law(1.0, 0.0, exponent(2.0));
        let r = RegularizedStress::new(base, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let xi = {
                let m = 10.0 * rng.gen::<f64>();
                random_sym(&mut rng, 2, m)
            };
            let res = young_identity_residual(&r, &xi);
            assert!(res <= 1e-12 * (1.0 + xi.norm_sq()));
        }
        assert_eq!(young_identity_residual(&r, &SymTensor::zero(2)), 0.0);
    }

    #[test]
    fn jacobian_matches_finite_difference() {
        let base = StressModel::power_law(0.3, 1.1, jump_exponent());
        let r = RegularizedStress::new(base, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for slab in 0..2 {
            for _ in 0..20 {
                let xi = {
                    let m = 0.5 + rng.gen::<f64>();
                    random_sym(&mut rng, 2, m)
                };
                let eta = random_sym(&mut rng, 2, 1.0);
                let e = 1e-6;
                let fd = (r.stress_at(slab, 0, &(xi + eta.scale(e)))
                    - r.stress_at(slab, 0, &(xi - eta.scale(e))))
                .scale(0.5 / e);
                let jac = r.jacobian_with(r.base.s.at(slab, 0), slab, &xi, &eta);
                assert!((fd - jac).norm() < 1e-6 * (1.0 + jac.norm()));
            }
        }
    }

    #[test]
    fn power_law_passes_all_checks() {
        let mut base = StressModel::power_law(1.0, 1.0, jump_exponent());
        let sampler = Sampler::new(2000, 1e-3, 1e2, 11);
        base.c = fit_coercivity(&base, &sampler);
        let r = RegularizedStress::new(base, 0.1).unwrap();
        let rep = verify_assumptions(
            &r,
            &Sampler {
                seed: 12,
                ..sampler
            },
        );
        assert!(rep.pass(), "{:?}", rep.checks);
        assert_eq!(rep.checks.len(), 7);
    }

    #[test]
    fn sign_flipped_model_fails_monotonicity_with_witness() {
        let base = StressModel::power_law(-1.0, 0.0, exponent(2.0));
        let r = RegularizedStress::new(base, 0.0).unwrap();
        let rep = verify_assumptions(&r, &Sampler::new(100, 0.1, 10.0, 1));
        let mono = rep
            .checks
            .iter()
            .find(|c| c.name == "monotonicity")
            .unwrap();
        assert!(mono.violations > 0);
        assert!(mono.witness.is_some());
    }

    #[test]
    fn coercivity_constant_is_stable_under_more_samples() {
        let base = StressModel::power_law(1.0, 1.0, jump_exponent());
        let c1 = fit_coercivity(&base, &Sampler::new(5000, 1e-3, 1e2, 4));
        let c2 = fit_coercivity(&base, &Sampler::new(10000, 1e-3, 1e2, 5));
        assert!(c1.is_finite());
        assert!((c1 - c2).abs() / c1 < 0.1, "{c1} {c2}");
    }

    #[test]
    fn non_monotone_table_fails() {
        let s = exponent(2.0);
        // φ(r)·r decreases between r = 1 and r = 2.
        let m = StressModel::table(vec![0.0, 1.0, 2.0, 4.0], vec![vec![1.0, 1.0, 0.2, 0.2]], s)
            .unwrap();
        let r = RegularizedStress::new(m, 0.0).unwrap();
        let rep = verify_assumptions(&r, &Sampler::new(4000, 0.5, 3.0, 2));
        assert!(rep
            .checks
            .iter()
            .any(|c| c.name == "monotonicity" && c.violations > 0));
    }

    #[test]
    fn theta_consistency_bound() {
        let base = StressModel::power_law(1.0, 1.0, exponent(3.0));
        let r = RegularizedStress::new(base.clone(), 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let xi = {
                let m = 5.0 * rng.gen::<f64>();
                random_sym(&mut rng, 2, m)
            };
            let gap = (r.stress_at(0, 0, &xi) - base.stress_at(0, 0, &xi)).norm();
            let bound = 0.01 * r.s_max * xi.norm().powf(r.s_max - 1.0);
            assert!(gap <= bound * (1.0 + 1e-12));
        }
    }
}
