//! Time stepping for the regularized problem: backward Euler in the stress,
//! lagged convection, and a projection onto discretely divergence-free
//! fields with no-slip walls.

use crate::grid::Domain;
use crate::mac::{Mac, SymTensorField, VelocityField};
use crate::stress::RegularizedStress;
use crate::tensor::SymTensor;
use rayon::prelude::*;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("invalid solver input: {0}")]
    Invalid(String),
    #[error("nonlinear solve did not converge at step {step} (t = {t}): residual history {history:?}; try halving dt")]
    NotConverged {
        step: usize,
        t: f64,
        history: Vec<f64>,
    },
}

/// Body force, constant in time within each slab.
#[derive(Debug, Clone, PartialEq)]
pub enum Forcing {
    None,
    PerSlab(Vec<VelocityField>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub max_cg: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            max_iterations: 500,
            tolerance: 1e-10,
            max_cg: 500,
        }
    }
}

/// Everything the ledgers need from one step k (fields at t_k).
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub slab: usize,
    pub u: VelocityField,
    /// Base stress S(Du^k).
    pub alpha: SymTensorField,
    /// Regularization θ∇m(Du^k).
    pub theta_beta: SymTensorField,
    /// Lagged convection C(u^{k−1}).
    pub convection: VelocityField,
    pub force: VelocityField,
    /// Mean-zero discrete pressure of the step.
    pub pressure: Vec<f64>,
    pub newton_iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitReport {
    /// ‖u0 − P u0‖₂ (zero when u0 was accepted unchanged).
    pub projection_correction: f64,
    pub projected: bool,
}

pub struct SolverState {
    pub mac: Arc<Mac>,
    pub t: f64,
    pub step: usize,
    pub dt: f64,
    pub u: VelocityField,
    pub u0: VelocityField,
    pub model: RegularizedStress,
    pub forcing: Forcing,
    pub newton: NewtonOptions,
    pub history: Vec<StepRecord>,
}

/// Relative divergence tolerance for accepting u0 unchanged.
pub const DIVERGENCE_TOLERANCE: f64 = 1e-10;

/// Largest |div u| relative to the largest velocity gradient entry.
pub fn divergence_defect(mac: &Mac, u: &VelocityField) -> f64 {
    let div = crate::quad::max_abs(&mac.divergence(u));
    let grad = mac
        .velocity_gradient(u)
        .iter()
        .flatten()
        .flatten()
        .fold(0.0f64, |m, x| m.max(x.abs()));
    if grad == 0.0 {
        div
    } else {
        div / grad
    }
}

pub fn init_state(
    domain: &Domain,
    u0: VelocityField,
    model: RegularizedStress,
    forcing: Forcing,
    dt: f64,
) -> Result<(SolverState, InitReport), SolverError> {
    if !domain.is_box() {
        return Err(SolverError::Invalid(
            "the time stepper supports box domains only".into(),
        ));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(SolverError::Invalid(format!(
            "dt must be positive, got {dt}"
        )));
    }
    if !(model.theta > 0.0) {
        return Err(SolverError::Invalid(
            "θ must be positive for time stepping".into(),
        ));
    }
    if model.base.s.grid.n != domain.grid.n {
        return Err(SolverError::Shape(
            "stress model exponent does not match the grid".into(),
        ));
    }
    let mac = Arc::new(Mac::new(domain.grid));
    let check = |u: &VelocityField| {
        u.comps.len() == domain.d && (0..domain.d).all(|a| u.comps[a].len() == mac.faces[a].len())
    };
    if !check(&u0) {
        return Err(SolverError::Shape(
            "initial velocity does not match the face grids".into(),
        ));
    }
    if let Forcing::PerSlab(fs) = &forcing {
        if fs.len() != domain.slabs.count() || !fs.iter().all(check) {
            return Err(SolverError::Shape(
                "forcing must give one face field per slab".into(),
            ));
        }
    }
    let mut u = u0.clone();
    mac.zero_walls(&mut u);
    let mut report = InitReport {
        projection_correction: 0.0,
        projected: false,
    };
    if divergence_defect(&mac, &u) > DIVERGENCE_TOLERANCE {
        let (p, _) = mac.project(&u);
        let diff = u.sub(&p);
        report = InitReport {
            projection_correction: mac.inner(&diff, &diff).sqrt(),
            projected: true,
        };
        u = p;
    }
    let state = SolverState {
        mac,
        t: 0.0,
        step: 0,
        dt,
        u0: u.clone(),
        u,
        model,
        forcing,
        newton: NewtonOptions::default(),
        history: Vec::new(),
    };
    Ok((state, report))
}

impl SolverState {
    fn force(&self, slab: usize) -> VelocityField {
        match &self.forcing {
            Forcing::None => self.mac.zero_velocity(),
            Forcing::PerSlab(fs) => fs[slab].clone(),
        }
    }

    fn project(&self, v: &VelocityField) -> VelocityField {
        self.mac.project(v).0
    }

    /// Base and regularization stress at every cell.
    pub fn stresses(&self, slab: usize, strain: &[SymTensor]) -> (SymTensorField, SymTensorField) {
        let s = &self.model.base.s;
        let pairs: Vec<(SymTensor, SymTensor)> = strain
            .par_iter()
            .enumerate()
            .map(|(i, xi)| {
                let a = self.model.base.stress_with(s.at(slab, i), slab, xi);
                let b = self.model.grad_m(xi).scale(self.model.theta);
                (a, b)
            })
            .collect();
        pairs.into_iter().unzip()
    }

    /// Projected residual u − u^n + dt·P(Dᵀ S^θ(Du) + C^n − f).
    fn residual(&self, u: &VelocityField, rhs: &VelocityField, slab: usize) -> VelocityField {
        let strain = self.mac.strain(u);
        let s = &self.model.base.s;
        let stress: Vec<SymTensor> = strain
            .par_iter()
            .enumerate()
            .map(|(i, xi)| self.model.stress_with(s.at(slab, i), slab, xi))
            .collect();
        let mut r = u.sub(rhs);
        r.axpy(self.dt, &self.mac.strain_adjoint(&stress));
        self.project(&r)
    }

    fn jacobian(&self, strain: &[SymTensor], slab: usize, eta: &VelocityField) -> VelocityField {
        let s = &self.model.base.s;
        let de = self.mac.strain(eta);
        let js: Vec<SymTensor> = strain
            .par_iter()
            .zip(&de)
            .enumerate()
            .map(|(i, (xi, e))| self.model.jacobian_with(s.at(slab, i), slab, xi, e))
            .collect();
        let mut out = eta.clone();
        out.axpy(self.dt, &self.mac.strain_adjoint(&js));
        self.project(&out)
    }

    /// Conjugate gradients for J δ = b on divergence-free fields.
    fn cg(&self, strain: &[SymTensor], slab: usize, b: &VelocityField, rel: f64) -> VelocityField {
        let mac = &self.mac;
        let mut x = mac.zero_velocity();
        let mut r = b.clone();
        let mut p = r.clone();
        let mut rr = mac.inner(&r, &r);
        let stop = rel * rel * rr;
        for _ in 0..self.newton.max_cg {
            if rr <= stop || rr == 0.0 {
                break;
            }
            let ap = self.jacobian(strain, slab, &p);
            let pap = mac.inner(&p, &ap);
            if pap <= 0.0 {
                break;
            }
            let a = rr / pap;
            x.axpy(a, &p);
            r.axpy(-a, &ap);
            let rr_new = mac.inner(&r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            let mut np = r.clone();
            np.axpy(beta, &p);
            p = np;
        }
        x
    }

    /// One backward-Euler step; the returned record is also appended to the history.
    pub fn advance(&mut self) -> Result<StepRecord, SolverError> {
        let mac = Arc::clone(&self.mac);
        let slabs = &self.model.base.s.slabs;
        let t_new = self.t + self.dt;
        let slab = slabs.slab_of(self.t + 0.5 * self.dt);
        let force = self.force(slab);
        let convection = mac.convection(&self.u);
        // rhs = u^n − dt(C^n − f)
        let mut rhs = self.u.clone();
        rhs.axpy(-self.dt, &convection);
        rhs.axpy(self.dt, &force);
        let mut u = self.u.clone();
        let mut r = self.residual(&u, &rhs, slab);
        let norm = |v: &VelocityField| mac.inner(v, v).sqrt();
        let scale = norm(&self.u).max(norm(&r)).max(f64::MIN_POSITIVE);
        let mut rn = norm(&r);
        let mut history = vec![rn];
        let mut iterations = 0;
        while rn > self.newton.tolerance * scale {
            if iterations >= self.newton.max_iterations {
                return Err(SolverError::NotConverged {
                    step: self.step + 1,
                    t: t_new,
                    history,
                });
            }
            iterations += 1;
            let strain = mac.strain(&u);
            let forcing_term = (rn / scale).sqrt().min(0.5);
            let delta = self.cg(&strain, slab, &r.scaled(-1.0), forcing_term);
            let mut omega = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let mut trial = u.clone();
                trial.axpy(omega, &delta);
                let tr = self.residual(&trial, &rhs, slab);
                let tn = norm(&tr);
                if tn < (1.0 - 1e-4 * omega) * rn {
                    u = trial;
                    r = tr;
                    rn = tn;
                    accepted = true;
                    break;
                }
                omega *= 0.5;
            }
            history.push(rn);
            if !accepted {
                return Err(SolverError::NotConverged {
                    step: self.step + 1,
                    t: t_new,
                    history,
                });
            }
        }
        // Remove round-off divergence.
        let mut u = mac.project(&u).0;
        mac.zero_walls(&mut u);
        let strain = mac.strain(&u);
        let (alpha, theta_beta) = self.stresses(slab, &strain);
        let total: Vec<SymTensor> = alpha
            .iter()
            .zip(&theta_beta)
            .map(|(a, b)| *a + *b)
            .collect();
        let mut mom = force.sub(&convection);
        mom = mom.sub(&mac.strain_adjoint(&total));
        let pressure = mac.poisson_solve(&mac.divergence(&mom));
        self.t = t_new;
        self.step += 1;
        self.u = u.clone();
        let rec = StepRecord {
            step: self.step,
            t: t_new,
            slab,
            u,
            alpha,
            theta_beta,
            convection,
            force,
            pressure,
            newton_iterations: iterations,
            residual: rn / scale,
        };
        self.history.push(rec.clone());
        Ok(rec)
    }

    /// Advance until t reaches `t_final` (to within dt/2).
    pub fn run_to(&mut self, t_final: f64) -> Result<(), SolverError> {
        while self.t < t_final - 0.5 * self.dt {
            self.advance()?;
        }
        Ok(())
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.mac.inner(&self.u, &self.u)
    }
}

/// Taylor–Green-type vortex on a box, vanishing on the walls:
/// stream function amplitude·sin²(πx)sin²(πy) in box-relative coordinates.
pub fn wall_vortex(mac: &Mac, amplitude: f64) -> VelocityField {
    let g = mac.grid;
    let (lx, ly) = (g.extent(0), g.extent(1));
    mac.velocity_from_stream(|x| {
        let sx = (x[0] - g.origin[0]) / lx;
        let sy = (x[1] - g.origin[1]) / ly;
        amplitude
            * (std::f64::consts::PI * sx).sin().powi(2)
            * (std::f64::consts::PI * sy).sin().powi(2)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exponent::{constant_exponent, make_exponent_field};
    use crate::grid::{build_domain, DomainSpec};
    use crate::stress::StressModel;

    fn setup(n: usize, s: f64, nu0: f64, nu1: f64, theta: f64) -> (Domain, RegularizedStress) {
        let dom = build_domain(&DomainSpec::unit_box(2, n, 1.0)).unwrap();
        let e = Arc::new(constant_exponent(&dom, s).unwrap());
        let model = RegularizedStress::new(StressModel::power_law(nu0, nu1, e), theta).unwrap();
        (dom, model)
    }

    #[test]
    fn zero_state_stays_zero() {
        let (dom, model) = setup(12, 2.0, 1.0, 0.0, 0.1);
        let mac = Mac::new(dom.grid);
        let (mut st, rep) =
            init_state(&dom, mac.zero_velocity(), model, Forcing::None, 0.01).unwrap();
        assert!(!rep.projected);
        for _ in 0..5 {
            st.advance().unwrap();
        }
        assert_eq!(st.u.max_abs(), 0.0);
    }

    #[test]
    fn newtonian_energy_decreases_and_divergence_stays_zero() {
        let (dom, model) = setup(16, 2.0, 1.0, 0.0, 0.01);
        let mac = Mac::new(dom.grid);
        let u0 = wall_vortex(&mac, 1.0);
        let (mut st, rep) = init_state(&dom, u0, model, Forcing::None, 0.005).unwrap();
        assert!(!rep.projected);
        let mut e = st.kinetic_energy();
        for _ in 0..10 {
            st.advance().unwrap();
            let e2 = st.kinetic_energy();
            assert!(e2 < e);
            e = e2;
            assert!(divergence_defect(&st.mac, &st.u) <= 1e-10);
        }
    }

    #[test]
    fn divergent_initial_data_is_projected() {
        let (dom, model) = setup(12, 2.0, 1.0, 0.0, 0.1);
        let mac = Mac::new(dom.grid);
        let u0 = mac.velocity_from_fn(|a, x| {
            if a == 0 {
                (x[0] * 3.0).sin() * x[1]
            } else {
                0.0
            }
        });
        let (st, rep) = init_state(&dom, u0, model, Forcing::None, 0.01).unwrap();
        assert!(rep.projected && rep.projection_correction > 0.0);
        assert!(
            divergence_defect(&st.mac, &st.u) < 1e-10,
            "{}",
            divergence_defect(&st.mac, &st.u)
        );
    }

    #[test]
    fn power_law_jump_converges_each_step() {
        let dom = build_domain(&DomainSpec {
            slab_bounds: vec![0.0, 0.5, 1.0],
            ..DomainSpec::unit_box(2, 16, 1.0)
        })
        .unwrap();
        let n = dom.grid.len();
        let e =
            Arc::new(make_exponent_field(&dom, vec![vec![2.0; n], vec![3.0; n]], None).unwrap());
        let model = RegularizedStress::new(StressModel::power_law(0.05, 1.0, e), 1e-3).unwrap();
        let mac = Mac::new(dom.grid);
        let (mut st, _) =
            init_state(&dom, wall_vortex(&mac, 2.0), model, Forcing::None, 0.05).unwrap();
        st.run_to(1.0).unwrap();
        assert_eq!(st.history.len(), 20);
        assert_eq!(st.history[9].slab, 0);
        assert_eq!(st.history[10].slab, 1);
        assert!(st.history.iter().all(|r| r.residual <= 1e-10));
    }

    #[test]
    fn first_order_self_convergence_in_dt() {
        let run = |dt: f64| {
            let (dom, model) = setup(16, 2.0, 0.5, 0.0, 0.01);
            let mac = Mac::new(dom.grid);
            let (mut st, _) =
                init_state(&dom, wall_vortex(&mac, 5.0), model, Forcing::None, dt).unwrap();
            st.run_to(0.2).unwrap();
            st.u
        };
        let (a, b, c) = (run(0.02), run(0.01), run(0.005));
        let mac = Mac::new(
            build_domain(&DomainSpec::unit_box(2, 16, 1.0))
                .unwrap()
                .grid,
        );
        let e1 = {
            let d = a.sub(&b);
            mac.inner(&d, &d).sqrt()
        };
        let e2 = {
            let d = b.sub(&c);
            mac.inner(&d, &d).sqrt()
        };
        let ratio = e1 / e2;
        assert!((ratio - 2.0).abs() < 0.4, "{ratio}");
    }

    #[test]
    fn rejects_invalid_input() {
        let (dom, model) = setup(8, 2.0, 1.0, 0.0, 0.1);
        let mac = Mac::new(dom.grid);
        assert!(matches!(
            init_state(
                &dom,
                mac.zero_velocity(),
                model.with_theta(0.0),
                Forcing::None,
                0.1
            ),
            Err(SolverError::Invalid(_))
        ));
        assert!(matches!(
            init_state(&dom, mac.zero_velocity(), model.clone(), Forcing::None, 0.0),
            Err(SolverError::Invalid(_))
        ));
        let bad = VelocityField {
            comps: vec![vec![0.0; 3]; 2],
        };
        assert!(matches!(
            init_state(&dom, bad, model, Forcing::None, 0.1),
            Err(SolverError::Shape(_))
        ));
    }
}
