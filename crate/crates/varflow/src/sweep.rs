//! θ-continuation: runs the regularized problem for a decreasing list of θ,
//! tabulates the uniform-bound quantities, and checks the monotonicity
//! identification of the stress limit.

use crate::covering::{build_covering, partition_of_unity};
use crate::energy::{local_energy_report, Trajectory};
use crate::exponent::{conjugate, conjugate_field, interpolation_exponent, ExponentField};
use crate::grid::Domain;
use crate::mac::{Mac, VelocityField};
use crate::musielak::{luxemburg_norm, SpaceTimeField, TimeSample};
use crate::pressure::{lp_norm, BundleContext};
use crate::quad::pairwise_sum;
use crate::solver::{init_state, Forcing, SolverError, SolverState, StepRecord};
use crate::stress::{random_sym, RegularizedStress, StressModel};
use crate::tensor::SymTensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Data of one run of the regularized problem, θ aside.
#[derive(Clone)]
pub struct FlowSetup {
    pub domain: Domain,
    pub base: StressModel,
    pub u0: VelocityField,
    pub forcing: Forcing,
    pub dt: f64,
    pub t_final: f64,
}

pub fn run_flow(setup: &FlowSetup, theta: f64) -> Result<SolverState, SolverError> {
    let model = RegularizedStress::new(setup.base.clone(), theta)
        .map_err(|e| SolverError::Invalid(e.to_string()))?;
    let (mut st, _) = init_state(
        &setup.domain,
        setup.u0.clone(),
        model,
        setup.forcing.clone(),
        setup.dt,
    )?;
    st.run_to(setup.t_final)?;
    Ok(st)
}

/// Columns expected to stay bounded as θ → 0, in table order.
pub const BOUNDED_COLUMNS: [&str; 7] = [
    "sup_kinetic",
    "strain_modular",
    "gradient_norm_smin",
    "stress_modular",
    "interpolation_norm",
    "theta_strain_smax",
    "dissipation",
];

/// Remaining monitored columns.
pub const EXTRA_COLUMNS: [&str; 9] = [
    "regularizer_modular",
    "stress_pressure_l2",
    "convective_pressure_l2",
    "force_pressure_l2",
    "p4_norm",
    "p4_scaled",
    "harmonic_pressure_l2",
    "time_derivative_dual_surrogate",
    "identification_error",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub theta: f64,
    /// Values of BOUNDED_COLUMNS followed by EXTRA_COLUMNS.
    pub values: Vec<f64>,
}

impl SweepRow {
    pub fn get(&self, name: &str) -> Option<f64> {
        BOUNDED_COLUMNS
            .iter()
            .chain(EXTRA_COLUMNS.iter())
            .position(|c| *c == name)
            .map(|i| self.values[i])
    }
}

/// A finished run kept for identification checks.
pub struct ThetaRun {
    pub theta: f64,
    pub state: SolverState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendCheck {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

pub struct ThetaSweep {
    pub theta_list: Vec<f64>,
    pub rows: Vec<SweepRow>,
    pub runs: Vec<ThetaRun>,
    pub failures: Vec<(f64, String)>,
    pub growth_factor: f64,
    pub checks: Vec<TrendCheck>,
    /// Set when fewer than two θ completed and trends were not checked.
    pub notice: Option<String>,
}

impl ThetaSweep {
    pub fn pass(&self) -> bool {
        self.failures.is_empty() && self.checks.iter().all(|c| c.pass)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["theta".to_string()];
        header.extend(
            BOUNDED_COLUMNS
                .iter()
                .chain(EXTRA_COLUMNS.iter())
                .map(|s| s.to_string()),
        );
        w.write_record(&header).unwrap();
        for r in &self.rows {
            let mut rec = vec![format!("{:e}", r.theta)];
            rec.extend(r.values.iter().map(|v| format!("{v:e}")));
            w.write_record(&rec).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn checks_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["check", "pass", "detail"]).unwrap();
        for c in &self.checks {
            w.write_record([
                c.name.as_str(),
                if c.pass { "PASS" } else { "FAIL" },
                c.detail.as_str(),
            ])
            .unwrap();
        }
        for (t, e) in &self.failures {
            w.write_record([format!("run theta={t:e}").as_str(), "FAIL", e.as_str()])
                .unwrap();
        }
        if let Some(n) = &self.notice {
            w.write_record(["trend checks", "SKIP", n.as_str()])
                .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

fn time_samples(records: &[StepRecord], dt: f64) -> Vec<TimeSample> {
    records
        .iter()
        .map(|r| TimeSample {
            slab: r.slab,
            weight: dt,
        })
        .collect()
}

/// Σ dt h^d Σ f(slab, cell) over the trajectory.
fn space_time_sum(
    mac: &Mac,
    records: &[StepRecord],
    dt: f64,
    f: impl Fn(&StepRecord, usize) -> f64,
) -> f64 {
    let vol = mac.grid.cell_volume();
    let per: Vec<f64> = records
        .iter()
        .map(|r| dt * vol * pairwise_sum(&(0..mac.grid.len()).map(|i| f(r, i)).collect::<Vec<_>>()))
        .collect();
    pairwise_sum(&per)
}

/// ‖S^θ(Du^θ) − S(Du^θ)‖ in the Luxemburg norm of L^{s'(t,x)} over Ω_T.
pub fn identification_error(s: &ExponentField, records: &[StepRecord], dt: f64) -> f64 {
    let sc = conjugate_field(s);
    let g = SpaceTimeField {
        times: time_samples(records, dt),
        values: records
            .iter()
            .map(|r| r.theta_beta.iter().map(|t| t.norm()).collect())
            .collect(),
    };
    luxemburg_norm(&g, &sc, 1e-12)
        .map(|r| r.luxemburg_norm)
        .unwrap_or(f64::NAN)
}

/// Dual norm of the discrete time derivative against the W^{1,2} unit ball,
/// (⟨v, (1 − Δ_h)^{-1} v⟩)^{1/2} on cell-averaged components, in L²_t.
fn time_derivative_dual(mac: &Mac, u0: &VelocityField, records: &[StepRecord], dt: f64) -> f64 {
    let mut prev = u0;
    let mut acc = Vec::new();
    for r in records {
        let v = r.u.sub(prev).scaled(1.0 / dt);
        let cells = mac.to_cells(&v);
        let mut s = 0.0;
        for a in 0..mac.d {
            let comp: Vec<f64> = cells.iter().map(|c| c[a]).collect();
            let inv = mac.poisson().solve_shifted(&comp, 1.0);
            s -= mac.cell_inner(&comp, &inv);
        }
        acc.push(dt * s);
        prev = &r.u;
    }
    pairwise_sum(&acc).sqrt()
}

fn monitored(setup: &FlowSetup, ctx: &BundleContext, st: &SolverState) -> Vec<f64> {
    let mac = &st.mac;
    let s = &setup.base.s;
    let d = setup.domain.d;
    let dt = setup.dt;
    let recs = &st.history;
    let theta = st.model.theta;
    let s_max = st.model.s_max;
    let s_min = s.s_min;
    let strains: Vec<Vec<SymTensor>> = recs.iter().map(|r| mac.strain(&r.u)).collect();
    let idx = |r: &StepRecord| r.step - recs[0].step;
    let sup_kinetic = recs
        .iter()
        .map(|r| mac.inner(&r.u, &r.u))
        .fold(mac.inner(&st.u0, &st.u0), f64::max);
    let strain_modular = space_time_sum(mac, recs, dt, |r, i| {
        strains[idx(r)][i].norm().powf(s.at(r.slab, i))
    });
    let grads: Vec<Vec<[[f64; 3]; 3]>> = recs.iter().map(|r| mac.velocity_gradient(&r.u)).collect();
    let gradient_norm_smin = space_time_sum(mac, recs, dt, |r, i| {
        grads[idx(r)][i]
            .iter()
            .flatten()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
            .powf(s_min)
    })
    .powf(1.0 / s_min);
    let stress_modular = space_time_sum(mac, recs, dt, |r, i| {
        r.alpha[i].norm().powf(conjugate(s.at(r.slab, i)))
    });
    let r0 = interpolation_exponent(s_min, d);
    let cells: Vec<Vec<[f64; 3]>> = recs.iter().map(|r| mac.to_cells(&r.u)).collect();
    let interpolation_norm = space_time_sum(mac, recs, dt, |r, i| {
        let v = cells[idx(r)][i];
        (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().powf(r0)
    })
    .powf(1.0 / r0);
    let theta_strain_smax =
        theta * space_time_sum(mac, recs, dt, |r, i| strains[idx(r)][i].norm().powf(s_max));
    let dissipation = space_time_sum(mac, recs, dt, |r, i| {
        (r.alpha[i] + r.theta_beta[i]).dot(&strains[idx(r)][i])
    });
    let sp_max = conjugate(s_max);
    let regularizer_modular =
        space_time_sum(mac, recs, dt, |r, i| r.theta_beta[i].norm().powf(sp_max));

    let psi = mac.sample_faces(|_, _| 1.0);
    let ledger = local_energy_report(
        mac,
        Trajectory {
            u0: &st.u0,
            dt,
            records: recs,
        },
        &psi,
        Some(ctx),
    );
    let (mut p1, mut p2, mut p3, mut p4, mut ph) = (0.0, 0.0, 0.0, 0.0, f64::NAN);
    if let Ok(led) = &ledger {
        let g = mac.grid;
        for row in &led.rows {
            p1 += dt * row.norms.p1.powi(2);
            p2 += dt * row.norms.p2.powi(2);
            p3 += dt * row.norms.p3.powi(2);
        }
        ph = led
            .last_bundle
            .as_ref()
            .map(|b| lp_norm(&g, b.ph.as_ref().unwrap(), 2.0))
            .unwrap_or(0.0);
        // ‖p4‖ in L^{s'_max}(Ω_T) needs the per-step field, recomputed here.
        let acc: f64 = recs
            .iter()
            .map(|r| {
                dt * lp_norm(&g, &ctx.unlocalized_stress_pressure(&r.theta_beta), sp_max)
                    .powf(sp_max)
            })
            .sum();
        p4 = acc.powf(1.0 / sp_max);
    }
    vec![
        sup_kinetic,
        strain_modular,
        gradient_norm_smin,
        stress_modular,
        interpolation_norm,
        theta_strain_smax,
        dissipation,
        regularizer_modular,
        p1.sqrt(),
        p2.sqrt(),
        p3.sqrt(),
        p4,
        p4 * theta.powf(-1.0 / s_max),
        ph,
        time_derivative_dual(mac, &st.u0, recs, dt),
        identification_error(s, recs, dt),
    ]
}

/// Partition of unity context for the setup's exponent.
pub fn bundle_context(setup: &FlowSetup) -> Result<BundleContext, String> {
    let cov = build_covering(&setup.domain, &setup.base.s).map_err(|e| e.to_string())?;
    let cov = partition_of_unity(&cov, &setup.domain).map_err(|e| e.to_string())?;
    Ok(BundleContext::new(setup.domain.grid, cov.zeta.unwrap()))
}

pub fn theta_sweep(
    setup: &FlowSetup,
    theta_list: &[f64],
    growth_factor: f64,
) -> Result<ThetaSweep, String> {
    if theta_list.is_empty() {
        return Err("θ list is empty".into());
    }
    if theta_list.iter().any(|&t| !(t > 0.0)) || theta_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err("θ list must be positive and strictly decreasing".into());
    }
    let ctx = bundle_context(setup)?;
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for &theta in theta_list {
        match run_flow(setup, theta) {
            Ok(st) => {
                rows.push(SweepRow {
                    theta,
                    values: monitored(setup, &ctx, &st),
                });
                runs.push(ThetaRun { theta, state: st });
            }
            Err(e) => failures.push((theta, e.to_string())),
        }
    }
    let mut sweep = ThetaSweep {
        theta_list: theta_list.to_vec(),
        rows,
        runs,
        failures,
        growth_factor,
        checks: Vec::new(),
        notice: None,
    };
    sweep.checks = trend_checks(&sweep.rows, growth_factor);
    if sweep.rows.len() < 2 {
        sweep.notice = Some("fewer than two θ values completed; trend checks skipped".into());
    }
    Ok(sweep)
}

fn trend_checks(rows: &[SweepRow], factor: f64) -> Vec<TrendCheck> {
    let mut out = Vec::new();
    if rows.len() < 2 {
        return out;
    }
    let first = &rows[0];
    let finite = rows.iter().all(|r| r.values.iter().all(|v| v.is_finite()));
    out.push(TrendCheck {
        name: "all-columns-finite".into(),
        pass: finite,
        detail: String::new(),
    });
    for (k, name) in BOUNDED_COLUMNS.iter().enumerate() {
        let base = first.values[k].abs();
        let worst = rows.iter().map(|r| r.values[k].abs()).fold(0.0, f64::max);
        let pass = worst <= factor * base || worst == 0.0;
        out.push(TrendCheck {
            name: format!("bounded:{name}"),
            pass,
            detail: format!(
                "θ_max value {base:.6e}, largest {worst:.6e}, growth {:.4}",
                if base > 0.0 { worst / base } else { 0.0 }
            ),
        });
    }
    let p4: Vec<f64> = rows.iter().map(|r| r.get("p4_norm").unwrap()).collect();
    out.push(TrendCheck {
        name: "regularization-pressure-decreasing".into(),
        pass: p4.windows(2).all(|w| w[1] < w[0]),
        detail: format!("{p4:?}"),
    });
    let scaled: Vec<f64> = rows.iter().map(|r| r.get("p4_scaled").unwrap()).collect();
    out.push(TrendCheck {
        name: "regularization-pressure-scaled-bounded".into(),
        pass: scaled.iter().all(|&v| v <= factor * scaled[0]),
        detail: format!("{scaled:?}"),
    });
    out
}

/// Outcome of the monotonicity identification checks.
#[derive(Debug, Clone, PartialEq)]
pub struct MintyReport {
    pub samples: usize,
    /// Smallest ∫∫(S(Du) − S(η)):(Du − η)ψ over the η samples.
    pub min_integral: f64,
    /// Scale ∫∫(|S(Du)| + |S(η)|)(|Du| + |η|)ψ for the same sample.
    pub scale: f64,
    pub monotone: bool,
    /// Per-θ identification error, in sweep order.
    pub errors: Vec<(f64, f64)>,
    /// Per-θ 2θ‖Du^θ‖₂ (the Newtonian closed form).
    pub newtonian_closed_form: Vec<(f64, f64)>,
    pub decreasing: bool,
}

impl MintyReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["theta", "identification_error", "two_theta_strain_l2"])
            .unwrap();
        for ((t, e), (_, c)) in self.errors.iter().zip(&self.newtonian_closed_form) {
            w.write_record([format!("{t:e}"), format!("{e:e}"), format!("{c:e}")])
                .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

/// Random constant symmetric η, magnitudes spread over the range of |Du|.
pub fn eta_samples(d: usize, count: usize, magnitude: f64, seed: u64) -> Vec<SymTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| random_sym(&mut rng, d, magnitude * (k + 1) as f64 / count as f64))
        .collect()
}

/// Monotonicity integrals on the finest run and the identification trend.
pub fn minty_identification(
    sweep: &ThetaSweep,
    etas: &[SymTensor],
    psi_cells: &[f64],
) -> Result<MintyReport, String> {
    let fine = sweep.runs.last().ok_or("sweep has no completed runs")?;
    let st = &fine.state;
    let mac = &st.mac;
    let base = &st.model.base;
    let dt = st.dt;
    let mut min_integral = f64::INFINITY;
    let mut scale_at_min = 0.0;
    let mut monotone = true;
    for eta in etas {
        let mut val = 0.0;
        let mut scale = 0.0;
        for r in &st.history {
            let strain = mac.strain(&r.u);
            let mut vt = Vec::with_capacity(strain.len());
            let mut stt = Vec::with_capacity(strain.len());
            for (i, xi) in strain.iter().enumerate() {
                let sv = base.s.at(r.slab, i);
                let se = base.stress_with(sv, r.slab, eta);
                let diff = r.alpha[i] - se;
                let dx = *xi - *eta;
                vt.push(psi_cells[i] * diff.dot(&dx));
                stt.push(psi_cells[i] * (r.alpha[i].norm() + se.norm()) * (xi.norm() + eta.norm()));
            }
            val += dt * mac.grid.cell_volume() * pairwise_sum(&vt);
            scale += dt * mac.grid.cell_volume() * pairwise_sum(&stt);
        }
        if val < -1e-8 * scale {
            monotone = false;
        }
        if val < min_integral {
            min_integral = val;
            scale_at_min = scale;
        }
    }
    let mut errors = Vec::new();
    let mut closed = Vec::new();
    for run in &sweep.runs {
        let st = &run.state;
        errors.push((
            run.theta,
            identification_error(&st.model.base.s, &st.history, st.dt),
        ));
        let mut acc = 0.0;
        for r in &st.history {
            let strain = st.mac.strain(&r.u);
            acc += st.dt * st.mac.tensor_inner(&strain, &strain);
        }
        closed.push((run.theta, 2.0 * run.theta * acc.sqrt()));
    }
    let decreasing = errors.windows(2).all(|w| w[1].1 < w[0].1);
    Ok(MintyReport {
        samples: etas.len(),
        min_integral,
        scale: scale_at_min,
        monotone,
        errors,
        newtonian_closed_form: closed,
        decreasing,
    })
}

/// Parabolic interpolation check on a trajectory with exponent q ≥ 2.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationReport {
    pub q: f64,
    pub d: usize,
    pub r0: f64,
    /// ‖u‖_{L^{r0}(Ω_T)}.
    pub norm_r0: f64,
    /// sup_t ‖u‖₂.
    pub linf_l2: f64,
    /// ‖∇u‖_{L^q(Ω_T)}.
    pub lq_gradient: f64,
    /// ‖u‖_{r0}^{r0} / (sup‖u‖₂^{2q/d} ‖∇u‖_q^q).
    pub constant: f64,
}

pub fn interpolation_check(
    mac: &Mac,
    u0: &VelocityField,
    records: &[StepRecord],
    dt: f64,
    q: f64,
) -> InterpolationReport {
    let d = mac.d;
    let r0 = interpolation_exponent(q, d);
    let mut nr = Vec::new();
    let mut ng = Vec::new();
    let mut sup = mac.inner(u0, u0).sqrt();
    let vol = mac.grid.cell_volume();
    for r in records {
        sup = sup.max(mac.inner(&r.u, &r.u).sqrt());
        let cells = mac.to_cells(&r.u);
        let t: Vec<f64> = cells
            .iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().powf(r0))
            .collect();
        nr.push(dt * vol * pairwise_sum(&t));
        let gr: Vec<f64> = mac
            .velocity_gradient(&r.u)
            .iter()
            .map(|m| {
                m.iter()
                    .flatten()
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt()
                    .powf(q)
            })
            .collect();
        ng.push(dt * vol * pairwise_sum(&gr));
    }
    let nr = pairwise_sum(&nr);
    let ng = pairwise_sum(&ng);
    let denom = sup.powf(2.0 * q / d as f64) * ng;
    InterpolationReport {
        q,
        d,
        r0,
        norm_r0: nr.powf(1.0 / r0),
        linf_l2: sup,
        lq_gradient: ng.powf(1.0 / q),
        constant: if denom > 0.0 { nr / denom } else { 0.0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exponent::{constant_exponent, make_exponent_field};
    use crate::grid::{build_domain, DomainSpec};
    use crate::solver::wall_vortex;
    use std::sync::Arc;

    fn newtonian_setup(n: usize) -> FlowSetup {
        let domain = build_domain(&DomainSpec::unit_box(2, n, 0.2)).unwrap();
        let e = Arc::new(constant_exponent(&domain, 2.0).unwrap());
        let mac = Mac::new(domain.grid);
        FlowSetup {
            u0: wall_vortex(&mac, 1.0),
            base: StressModel::power_law(0.1, 0.0, e),
            domain,
            forcing: Forcing::None,
            dt: 0.02,
            t_final: 0.2,
        }
    }

    #[test]
    fn r0_arithmetic() {
        assert_eq!(interpolation_exponent(2.0, 2), 4.0);
        assert!((interpolation_exponent(2.0, 3) - 10.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn newtonian_sweep_and_closed_form_identification() {
        let setup = newtonian_setup(12);
        let sweep = theta_sweep(&setup, &[1e-1, 1e-2, 1e-3], 3.0).unwrap();
        assert_eq!(sweep.rows.len(), 3);
        assert!(sweep.pass(), "{:?}", sweep.checks);
        let psi: Vec<f64> = vec![1.0; setup.domain.grid.len()];
        let etas = eta_samples(2, 32, 5.0, 11);
        let rep = minty_identification(&sweep, &etas, &psi).unwrap();
        assert!(rep.monotone);
        for ((_, e), (_, c)) in rep.errors.iter().zip(&rep.newtonian_closed_form) {
            assert!((e / c - 1.0).abs() < 0.05, "{e} vs {c}");
        }
        assert!(rep.decreasing);
    }

    #[test]
    fn single_theta_is_degenerate() {
        let setup = newtonian_setup(8);
        let sweep = theta_sweep(&setup, &[1e-2], 3.0).unwrap();
        assert!(sweep.checks.is_empty() && sweep.notice.is_some());
        assert!(theta_sweep(&setup, &[1e-3, 1e-2], 3.0).is_err());
    }

    #[test]
    fn interpolation_constant_is_stable_under_refinement() {
        let c: Vec<f64> = [12usize, 24]
            .iter()
            .map(|&n| {
                let setup = newtonian_setup(n);
                let st = run_flow(&setup, 1e-2).unwrap();
                interpolation_check(&st.mac, &st.u0, &st.history, setup.dt, 2.0).constant
            })
            .collect();
        assert!((c[0] / c[1] - 1.0).abs() < 0.2, "{c:?}");
    }

    #[test]
    fn power_law_jump_identification_decreases() {
        let domain = build_domain(&DomainSpec {
            slab_bounds: vec![0.0, 0.5, 1.0],
            ..DomainSpec::unit_box(2, 12, 1.0)
        })
        .unwrap();
        let n = domain.grid.len();
        let e =
            Arc::new(make_exponent_field(&domain, vec![vec![2.0; n], vec![3.0; n]], None).unwrap());
        let mac = Mac::new(domain.grid);
        let setup = FlowSetup {
            u0: wall_vortex(&mac, 0.5),
            base: StressModel::power_law(0.1, 0.5, e),
            domain,
            forcing: Forcing::None,
            dt: 0.05,
            t_final: 1.0,
        };
        let sweep = theta_sweep(&setup, &[1e-1, 1e-2, 1e-3], 3.0).unwrap();
        assert!(sweep.pass(), "{:?}", sweep.checks);
        let psi = vec![1.0; setup.domain.grid.len()];
        let rep = minty_identification(&sweep, &eta_samples(2, 32, 5.0, 3), &psi).unwrap();
        assert!(rep.monotone && rep.decreasing, "{:?}", rep.errors);
    }
}
