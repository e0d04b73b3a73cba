//! Global and cutoff-weighted local energy ledgers of a trajectory.

use crate::mac::{Mac, VelocityField};
use crate::pressure::{
    harmonic_pressure, pressure_bundle, BundleContext, BundleNorms, PressureBundle, PressureError,
};
use crate::solver::StepRecord;
use crate::tensor::SymTensor;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("dependency error: {0}")]
    Dependency(String),
    #[error(transparent)]
    Pressure(#[from] PressureError),
}

/// Initial velocity plus the step records of a run.
#[derive(Debug, Clone, Copy)]
pub struct Trajectory<'a> {
    pub u0: &'a VelocityField,
    pub dt: f64,
    pub records: &'a [StepRecord],
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalRow {
    pub step: usize,
    pub t: f64,
    /// ½‖u(t)‖².
    pub kinetic: f64,
    /// Σ dt ∫ S^θ : Du.
    pub dissipation: f64,
    /// Σ dt ∫ f·u.
    pub work: f64,
    /// ½‖u(t)‖² − ½‖u0‖² + dissipation − work.
    pub residual: f64,
    /// ½Σ‖u^k − u^{k−1}‖², the backward-Euler numerical dissipation.
    pub numerical_dissipation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLedger {
    pub initial_kinetic: f64,
    pub rows: Vec<GlobalRow>,
}

impl EnergyLedger {
    pub fn final_residual(&self) -> f64 {
        self.rows.last().map(|r| r.residual).unwrap_or(0.0)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "step",
            "t",
            "kinetic",
            "dissipation",
            "work",
            "residual",
            "numerical_dissipation",
        ])
        .unwrap();
        w.write_record([
            "0",
            "0",
            &format!("{:e}", self.initial_kinetic),
            "0",
            "0",
            "0",
            "0",
        ])
        .unwrap();
        for r in &self.rows {
            w.write_record([
                r.step.to_string(),
                format!("{:e}", r.t),
                format!("{:e}", r.kinetic),
                format!("{:e}", r.dissipation),
                format!("{:e}", r.work),
                format!("{:e}", r.residual),
                format!("{:e}", r.numerical_dissipation),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

fn total_stress(r: &StepRecord) -> Vec<SymTensor> {
    r.alpha
        .iter()
        .zip(&r.theta_beta)
        .map(|(a, b)| *a + *b)
        .collect()
}

pub fn energy_report(mac: &Mac, traj: Trajectory) -> EnergyLedger {
    let e0 = 0.5 * mac.inner(traj.u0, traj.u0);
    let mut rows = Vec::with_capacity(traj.records.len());
    let (mut diss, mut work, mut numd) = (0.0, 0.0, 0.0);
    let mut prev = traj.u0;
    for r in traj.records {
        let strain = mac.strain(&r.u);
        diss += traj.dt * mac.tensor_inner(&total_stress(r), &strain);
        work += traj.dt * mac.inner(&r.force, &r.u);
        let du = r.u.sub(prev);
        numd += 0.5 * mac.inner(&du, &du);
        let kinetic = 0.5 * mac.inner(&r.u, &r.u);
        rows.push(GlobalRow {
            step: r.step,
            t: r.t,
            kinetic,
            dissipation: diss,
            work,
            residual: kinetic - e0 + diss - work,
            numerical_dissipation: numd,
        });
        prev = &r.u;
    }
    EnergyLedger {
        initial_kinetic: e0,
        rows,
    }
}

/// One row of the local ledger with w = u + ∇p_h; every column is cumulative.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalRow {
    pub step: usize,
    pub t: f64,
    /// ½∫ψ|w(t)|².
    pub kinetic: f64,
    /// Σ dt ∫ (α + θβ) : D(ψw).
    pub dissipation: f64,
    /// Σ dt ∫ C(u^{k−1})·ψw.
    pub convection: f64,
    /// Σ dt ∫ f·ψw.
    pub work: f64,
    /// Σ dt ∫ (Σp1ⁱ + Σp2ⁱ + p3 + p4) div(ψw).
    pub pressure_transport: f64,
    /// kinetic − ½∫ψ|u0|² + dissipation + convection − work − pressure_transport.
    pub residual: f64,
    /// Relative least-squares misfit of the harmonic pressure fit.
    pub ph_misfit: f64,
    pub ph_mean_defect: f64,
    pub ph_harmonic_defect: f64,
    pub norms: BundleNorms,
}

impl LocalRow {
    /// Largest absolute ledger column.
    pub fn largest_column(&self) -> f64 {
        [
            self.kinetic,
            self.dissipation,
            self.convection,
            self.work,
            self.pressure_transport,
        ]
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalLedger {
    pub initial_kinetic: f64,
    pub rows: Vec<LocalRow>,
    /// Pressures of the last step, with its harmonic part.
    pub last_bundle: Option<PressureBundle>,
}

impl LocalLedger {
    pub fn final_residual(&self) -> f64 {
        self.rows.last().map(|r| r.residual).unwrap_or(0.0)
    }

    /// Largest |column| over all rows.
    pub fn largest_column(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.largest_column())
            .fold(self.initial_kinetic.abs(), f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "step",
            "t",
            "kinetic",
            "dissipation",
            "convection",
            "work",
            "pressure_transport",
            "residual",
            "ph_misfit",
            "ph_mean_defect",
            "ph_harmonic_defect",
        ])
        .unwrap();
        for r in &self.rows {
            let f = |x: f64| format!("{x:e}");
            w.write_record([
                r.step.to_string(),
                f(r.t),
                f(r.kinetic),
                f(r.dissipation),
                f(r.convection),
                f(r.work),
                f(r.pressure_transport),
                f(r.residual),
                f(r.ph_misfit),
                f(r.ph_mean_defect),
                f(r.ph_harmonic_defect),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    /// Norms ledger: step, ‖p1‖, ‖p2‖, ‖p3‖, ‖p4‖, ‖ph‖ (L² on Ω).
    pub fn norms_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["step", "p1", "p2", "p3", "p4", "ph"])
            .unwrap();
        for r in &self.rows {
            let n = r.norms;
            w.write_record([
                r.step.to_string(),
                format!("{:e}", n.p1),
                format!("{:e}", n.p2),
                format!("{:e}", n.p3),
                format!("{:e}", n.p4),
                format!("{:e}", n.ph),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

/// Tolerance on the gradient-fit misfit of the accumulated residual.
pub const HARMONIC_MISFIT_TOLERANCE: f64 = 1e-6;
/// Cells closer to the wall than this are excluded from the harmonicity check.
pub const HARMONIC_LAYER: usize = 2;

/// Local ledger for a cutoff ψ sampled on the faces. The pressure bundle of
/// every step is computed with α = S(Du^k), β from θ∇m(Du^k), u^{k−1} and f.
pub fn local_energy_report(
    mac: &Mac,
    traj: Trajectory,
    psi: &VelocityField,
    ctx: Option<&BundleContext>,
) -> Result<LocalLedger, EnergyError> {
    let ctx = ctx.ok_or_else(|| {
        EnergyError::Dependency("local energy ledger needs the pressure bundle context".into())
    })?;
    if psi.comps.len() != mac.d {
        return Err(EnergyError::Dependency(
            "cutoff does not match the face grids".into(),
        ));
    }
    let weighted = |v: &VelocityField| VelocityField {
        comps: v
            .comps
            .iter()
            .zip(&psi.comps)
            .map(|(a, p)| a.iter().zip(p).map(|(x, y)| x * y).collect())
            .collect(),
    };
    let initial_kinetic = 0.5 * mac.weighted_inner(psi, traj.u0, traj.u0);
    // R accumulates −(u^k − u^0) − Σ dt (V + C − f) − ∇Σ dt Q.
    let mut acc = mac.zero_velocity();
    let mut prev_u = traj.u0;
    let mut rows = Vec::with_capacity(traj.records.len());
    let (mut diss, mut conv, mut work, mut trans) = (0.0, 0.0, 0.0, 0.0);
    let mut last_bundle = None;
    for r in traj.records {
        let prev_conv_u = prev_u;
        let mut bundle = pressure_bundle(ctx, &r.alpha, &r.theta_beta, prev_conv_u, &r.force)?;
        let q = bundle.sum();
        let total = total_stress(r);
        let mut step = r.u.sub(prev_u);
        step.axpy(traj.dt, &mac.strain_adjoint(&total));
        step.axpy(traj.dt, &r.convection);
        step.axpy(-traj.dt, &r.force);
        step.axpy(traj.dt, &mac.gradient(&q));
        acc.axpy(-1.0, &step);
        let hp = harmonic_pressure(mac, &acc, HARMONIC_MISFIT_TOLERANCE, HARMONIC_LAYER)?;
        let w = r.u.add(&mac.gradient(&hp.ph));
        let pw = weighted(&w);
        diss += traj.dt * mac.tensor_inner(&total, &mac.strain(&pw));
        conv += traj.dt * mac.inner(&r.convection, &pw);
        work += traj.dt * mac.inner(&r.force, &pw);
        trans += traj.dt * mac.cell_inner(&q, &mac.divergence(&pw));
        let kinetic = 0.5 * mac.weighted_inner(psi, &w, &w);
        bundle.ph = Some(hp.ph);
        let norms = bundle.norms(&mac.grid, 2.0);
        rows.push(LocalRow {
            step: r.step,
            t: r.t,
            kinetic,
            dissipation: diss,
            convection: conv,
            work,
            pressure_transport: trans,
            residual: kinetic - initial_kinetic + diss + conv - work - trans,
            ph_misfit: hp.misfit,
            ph_mean_defect: hp.mean_defect,
            ph_harmonic_defect: hp.harmonic_defect,
            norms,
        });
        last_bundle = Some(bundle);
        prev_u = &r.u;
    }
    Ok(LocalLedger {
        initial_kinetic,
        rows,
        last_bundle,
    })
}

/// Smooth interior bump ψ = b(|x − c|/ρ) sampled on the faces.
pub fn bump_cutoff(mac: &Mac, center: [f64; 3], radius: f64) -> VelocityField {
    mac.sample_faces(|_, x| crate::mollifier::bump(crate::grid::distance(&x, &center) / radius))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covering::{covering_with_radius, partition_of_unity};
    use crate::exponent::constant_exponent;
    use crate::grid::{build_domain, Domain, DomainSpec};
    use crate::solver::{init_state, wall_vortex, Forcing, SolverState};
    use crate::stress::{RegularizedStress, StressModel};
    use std::sync::Arc;

    fn newtonian(n: usize, dt: f64, nu: f64, amp: f64) -> (Domain, SolverState) {
        let dom = build_domain(&DomainSpec::unit_box(2, n, 1.0)).unwrap();
        let e = Arc::new(constant_exponent(&dom, 2.0).unwrap());
        let model = RegularizedStress::new(StressModel::power_law(nu, 0.0, e), 1e-3).unwrap();
        let mac = Mac::new(dom.grid);
        let (st, _) = init_state(&dom, wall_vortex(&mac, amp), model, Forcing::None, dt).unwrap();
        (dom, st)
    }

    fn ctx_for(dom: &Domain) -> BundleContext {
        let s = constant_exponent(dom, 2.0).unwrap();
        let cov = partition_of_unity(&covering_with_radius(dom, &s, 0.3), dom).unwrap();
        BundleContext::new(dom.grid, cov.zeta.unwrap())
    }

    #[test]
    fn global_residual_halves_with_dt() {
        let res: Vec<f64> = [0.02, 0.01]
            .iter()
            .map(|&dt| {
                let (_, mut st) = newtonian(16, dt, 0.1, 1.0);
                st.run_to(0.2).unwrap();
                let led = energy_report(
                    &st.mac,
                    Trajectory {
                        u0: &st.u0,
                        dt,
                        records: &st.history,
                    },
                );
                led.final_residual()
            })
            .collect();
        let ratio = res[0] / res[1];
        assert!((ratio - 2.0).abs() < 0.4, "{res:?}");
    }

    #[test]
    fn residual_equals_discrete_defect() {
        let (_, mut st) = newtonian(12, 0.01, 0.2, 2.0);
        st.run_to(0.05).unwrap();
        let led = energy_report(
            &st.mac,
            Trajectory {
                u0: &st.u0,
                dt: 0.01,
                records: &st.history,
            },
        );
        // −½Σ|δu|² − Σdt⟨C(u^{k−1}), δu⟩.
        let mut expect = 0.0;
        let mut prev = st.u0.clone();
        for r in &st.history {
            let du = r.u.sub(&prev);
            expect -= 0.5 * st.mac.inner(&du, &du) + 0.01 * st.mac.inner(&r.convection, &du);
            prev = r.u.clone();
        }
        assert!(
            (led.final_residual() - expect).abs() < 1e-9 * led.initial_kinetic,
            "{} {expect}",
            led.final_residual()
        );
    }

    #[test]
    fn zero_trajectory_has_zero_ledgers() {
        let dom = build_domain(&DomainSpec::unit_box(2, 12, 1.0)).unwrap();
        let e = Arc::new(constant_exponent(&dom, 2.0).unwrap());
        let model = RegularizedStress::new(StressModel::power_law(1.0, 0.0, e), 0.1).unwrap();
        let mac = Mac::new(dom.grid);
        let (mut st, _) = init_state(&dom, mac.zero_velocity(), model, Forcing::None, 0.1).unwrap();
        for _ in 0..3 {
            st.advance().unwrap();
        }
        let traj = Trajectory {
            u0: &st.u0,
            dt: 0.1,
            records: &st.history,
        };
        let g = energy_report(&mac, traj);
        assert!(g.rows.iter().all(|r| r.residual == 0.0 && r.kinetic == 0.0));
        let ctx = ctx_for(&dom);
        let psi = bump_cutoff(&mac, [0.5, 0.5, 0.0], 0.3);
        let l = local_energy_report(&mac, traj, &psi, Some(&ctx)).unwrap();
        assert!(l
            .rows
            .iter()
            .all(|r| r.residual == 0.0 && r.largest_column() == 0.0));
        assert!(matches!(
            local_energy_report(&mac, traj, &psi, None),
            Err(EnergyError::Dependency(_))
        ));
    }

    #[test]
    fn conservative_force_does_no_work() {
        let dom = build_domain(&DomainSpec::unit_box(2, 12, 1.0)).unwrap();
        let e = Arc::new(constant_exponent(&dom, 2.0).unwrap());
        let model = RegularizedStress::new(StressModel::power_law(0.5, 0.0, e), 0.01).unwrap();
        let mac = Mac::new(dom.grid);
        let pot: Vec<f64> = (0..dom.grid.len())
            .map(|i| (dom.grid.center_of(i)[0] * 2.0).sin())
            .collect();
        let f = mac.gradient(&pot);
        let (mut st, _) = init_state(
            &dom,
            wall_vortex(&mac, 1.0),
            model,
            Forcing::PerSlab(vec![f]),
            0.01,
        )
        .unwrap();
        st.run_to(0.05).unwrap();
        let led = energy_report(
            &mac,
            Trajectory {
                u0: &st.u0,
                dt: 0.01,
                records: &st.history,
            },
        );
        assert!(led.rows.iter().all(|r| r.work.abs() < 1e-12));
    }

    #[test]
    fn local_ledger_closes_and_harmonic_pressure_is_harmonic() {
        let (dom, mut st) = newtonian(16, 0.01, 0.05, 0.5);
        st.run_to(0.1).unwrap();
        let ctx = ctx_for(&dom);
        assert!(ctx.balls() > 1);
        let psi = bump_cutoff(&st.mac, [0.5, 0.5, 0.0], 0.3);
        let l = local_energy_report(
            &st.mac,
            Trajectory {
                u0: &st.u0,
                dt: 0.01,
                records: &st.history,
            },
            &psi,
            Some(&ctx),
        )
        .unwrap();
        for r in &l.rows {
            assert!(r.ph_mean_defect <= 1e-10);
            assert!(r.ph_harmonic_defect <= 1e-6, "{}", r.ph_harmonic_defect);
            assert!(r.ph_misfit <= HARMONIC_MISFIT_TOLERANCE, "{}", r.ph_misfit);
        }
        assert!(
            l.final_residual().abs() <= 0.01 * l.largest_column(),
            "{} vs {}",
            l.final_residual(),
            l.largest_column()
        );
    }

    #[test]
    fn local_residual_is_linear_in_the_cutoff() {
        let (dom, mut st) = newtonian(12, 0.02, 0.1, 1.0);
        st.run_to(0.06).unwrap();
        let ctx = ctx_for(&dom);
        let psi = bump_cutoff(&st.mac, [0.5, 0.5, 0.0], 0.3);
        let traj = Trajectory {
            u0: &st.u0,
            dt: 0.02,
            records: &st.history,
        };
        let a = local_energy_report(&st.mac, traj, &psi, Some(&ctx)).unwrap();
        let b = local_energy_report(&st.mac, traj, &psi.scaled(2.0), Some(&ctx)).unwrap();
        let (ra, rb) = (a.final_residual(), b.final_residual());
        assert!(
            (rb - 2.0 * ra).abs() <= 1e-9 * ra.abs().max(1e-300),
            "{ra} {rb}"
        );
    }
}
