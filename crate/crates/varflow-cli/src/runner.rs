//! Scenario execution: validation, time stepping, diagnostics and artifacts.

use crate::scenario::{build, load, ConfigError, Document, Scenario};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use varflow::checkpoint::{write_checkpoint, Checkpoint};
use varflow::covering::{build_covering, partition_of_unity};
use varflow::energy::{bump_cutoff, energy_report, local_energy_report, Trajectory};
use varflow::exponent::s_min_bound_label;
use varflow::korn::korn_constant_estimate_with;
use varflow::korn::KornSampling;
use varflow::mac::Mac;
use varflow::mollifier::{convergence_ladder, LadderThresholds, VectorSample};
use varflow::pressure::BundleContext;
use varflow::solver::{init_state, SolverState};
use varflow::stress::{verify_assumptions, RegularizedStress, Sampler};
use varflow::sweep::{eta_samples, minty_identification, theta_sweep, FlowSetup};

/// Exit codes of the command line tool.
pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Stage {
        stage: &'static str,
        message: String,
    },
    Checks(Vec<String>),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            _ => EXIT_FAILURE,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "invalid scenario: {e}"),
            RunError::Stage { stage, message } => write!(f, "stage '{stage}' failed: {message}"),
            RunError::Checks(names) => write!(f, "checks failed: {}", names.join(", ")),
        }
    }
}

impl std::error::Error for RunError {}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

fn stage<T, E: fmt::Display>(name: &'static str, r: Result<T, E>) -> Result<T, RunError> {
    r.map_err(|e| RunError::Stage {
        stage: name,
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub stage: &'static str,
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct Options {
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
struct ManifestEntry {
    path: String,
    sha256: String,
    bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
struct Manifest {
    scenario: String,
    config_path: String,
    config_sha256: String,
    seed: u64,
    tool_version: String,
    library_version: String,
    checks_passed: bool,
    files: Vec<ManifestEntry>,
}

/// Files written by one run, keyed by path relative to the output directory.
struct Artifacts {
    dir: PathBuf,
    files: BTreeMap<String, Vec<u8>>,
}

impl Artifacts {
    fn put(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.insert(name.to_string(), bytes.into());
    }

    fn flush(&self) -> std::io::Result<()> {
        for (name, bytes) in &self.files {
            let p = self.dir.join(name);
            if let Some(parent) = p.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(p, bytes)?;
        }
        Ok(())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn checks_csv(checks: &[Check]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["stage", "check", "result", "value", "threshold", "detail"])
        .unwrap();
    for c in checks {
        w.write_record([
            c.stage.to_string(),
            c.name.clone(),
            if c.pass { "PASS" } else { "FAIL" }.to_string(),
            format!("{:e}", c.value),
            format!("{:e}", c.threshold),
            c.detail.clone(),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

fn checkpoint_bytes(
    st: &SolverState,
    step: usize,
    t: f64,
    u: &varflow::mac::VelocityField,
) -> Vec<u8> {
    let g = st.mac.grid;
    let c = Checkpoint {
        step: step as u64,
        t,
        theta: st.model.theta,
        d: g.d,
        cells: g.n,
        u: u.clone(),
    };
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &c).expect("writing to memory");
    buf
}

/// Sampled assumption checks shared by run and verify.
fn assumption_checks(sc: &Scenario, reg: &RegularizedStress, seed: u64) -> (Vec<Check>, String) {
    let (n, lo, hi) = sc.sampling();
    let rep = verify_assumptions(reg, &Sampler::new(n, lo, hi, seed));
    let checks = rep
        .checks
        .iter()
        .map(|c| Check {
            stage: "assumptions",
            name: c.name.to_string(),
            pass: c.pass(),
            value: c.violations as f64,
            threshold: 0.0,
            detail: c.witness.clone().unwrap_or_else(|| {
                format!("min slack {:e} over {} samples", c.min_residual, c.samples)
            }),
        })
        .collect();
    (checks, rep.to_csv())
}

fn regularized(sc: &Scenario, theta: f64) -> Result<RegularizedStress, RunError> {
    stage("stress", RegularizedStress::new(sc.stress.clone(), theta))
}

fn bump_cells(mac: &Mac, center: [f64; 3], radius: f64) -> Vec<f64> {
    let g = mac.grid;
    (0..g.len())
        .map(|i| {
            let r = varflow::grid::distance(&g.center_of(i), &center) / radius;
            varflow::mollifier::bump(r)
        })
        .collect()
}

fn point(v: &[f64]) -> [f64; 3] {
    let mut p = [0.0; 3];
    p[..v.len()].copy_from_slice(v);
    p
}

/// Execute a scenario and write its artifacts. Returns the output directory.
pub fn run(config: &Path, opts: &Options) -> Result<PathBuf, RunError> {
    let doc = load(config)?;
    let mut sc = build(&doc)?;
    let seed = opts.seed.unwrap_or(sc.seed);
    sc.calibrate(seed);
    let dir = opts
        .output
        .clone()
        .or_else(|| {
            sc.output
                .as_ref()
                .map(|o| config.parent().unwrap_or(Path::new(".")).join(o))
        })
        .unwrap_or_else(|| PathBuf::from("varflow-out").join(&sc.name));
    let mut art = Artifacts {
        dir: dir.clone(),
        files: BTreeMap::new(),
    };
    let mut checks = Vec::new();

    // Validation that samples the model happens before any time stepping.
    let reg = regularized(&sc, sc.flow.theta)?;
    let (acheck, acsv) = assumption_checks(&sc, &reg, seed);
    if let Some(bad) = acheck.iter().find(|c| !c.pass) {
        let span = Some(doc.file.stress.span());
        return Err(doc
            .error(
                span,
                format!("stress model fails {}: {}", bad.name, bad.detail),
            )
            .into());
    }
    art.put("assumptions.csv", acsv);
    checks.extend(acheck);

    if sc.diagnostics.covering.unwrap_or(false)
        || sc.diagnostics.local_energy.is_some()
        || sc.diagnostics.sweep.is_some()
    {
        let cov = build_covering(&sc.domain, &sc.exponent)
            .map_err(|e| doc.error(Some(doc.file.exponent.span()), e.to_string()))?;
        art.put("covering.csv", cov.to_csv());
    }

    let (mut st, init) = stage(
        "solve",
        init_state(
            &sc.domain,
            sc.u0.clone(),
            reg.clone(),
            sc.forcing.clone(),
            sc.flow.dt,
        ),
    )?;
    if init.projected {
        checks.push(Check {
            stage: "solve",
            name: "initial-projection".into(),
            pass: true,
            value: init.projection_correction,
            threshold: 0.0,
            detail: "initial velocity was projected onto divergence-free fields".into(),
        });
    }
    stage("solve", st.run_to(sc.domain.final_time()))?;
    let every = sc.flow.checkpoint_every;
    if every > 0 {
        for r in st.history.iter().filter(|r| r.step % every == 0) {
            art.put(
                &format!("checkpoints/step-{:06}.bin", r.step),
                checkpoint_bytes(&st, r.step, r.t, &r.u),
            );
        }
    }
    art.put(
        "checkpoints/final.bin",
        checkpoint_bytes(&st, st.step, st.t, &st.u),
    );
    let traj = || Trajectory {
        u0: &st.u0,
        dt: st.dt,
        records: &st.history,
    };

    if let Some(ecfg) = &sc.diagnostics.energy {
        let led = energy_report(&st.mac, traj());
        let rel = led.final_residual().abs() / led.initial_kinetic.max(f64::MIN_POSITIVE);
        let tol = ecfg.get_ref().residual_tolerance;
        checks.push(Check {
            stage: "energy",
            name: "global-energy-residual".into(),
            pass: rel <= tol,
            value: rel,
            threshold: tol,
            detail: "final |residual| over initial kinetic energy".into(),
        });
        art.put("energy.csv", led.to_csv());
    }

    if let Some(lcfg) = &sc.diagnostics.local_energy {
        let lc = lcfg.get_ref();
        let cov = stage("local-energy", build_covering(&sc.domain, &sc.exponent))?;
        let cov = stage("local-energy", partition_of_unity(&cov, &sc.domain))?;
        let ctx = BundleContext::new(sc.domain.grid, cov.zeta.clone().unwrap());
        let psi = bump_cutoff(&st.mac, point(&lc.center), lc.radius);
        let led = stage(
            "local-energy",
            local_energy_report(&st.mac, traj(), &psi, Some(&ctx)),
        )?;
        let rel = led.final_residual().abs() / led.largest_column().max(f64::MIN_POSITIVE);
        checks.push(Check {
            stage: "local-energy",
            name: "local-energy-residual".into(),
            pass: rel <= lc.tolerance,
            value: rel,
            threshold: lc.tolerance,
            detail: "final |residual| over the largest ledger column".into(),
        });
        let worst = led
            .rows
            .iter()
            .map(|r| r.ph_harmonic_defect)
            .fold(0.0, f64::max);
        let misfit = led.rows.iter().map(|r| r.ph_misfit).fold(0.0, f64::max);
        let tol = varflow::energy::HARMONIC_MISFIT_TOLERANCE;
        checks.push(Check {
            stage: "local-energy",
            name: "harmonic-pressure-fit".into(),
            pass: misfit <= tol,
            value: misfit,
            threshold: tol,
            detail: format!("largest interior Laplacian of the harmonic pressure {worst:e}"),
        });
        art.put("local_energy.csv", led.to_csv());
        art.put("pressure_norms.csv", led.norms_csv());
    }

    if let Some(lcfg) = &sc.diagnostics.ladder {
        let lc = lcfg.get_ref();
        let psi = bump_cells(&st.mac, point(&lc.center), lc.radius);
        let samples: Vec<VectorSample> = st
            .history
            .iter()
            .map(|r| {
                let cells = st.mac.to_cells(&r.u);
                VectorSample {
                    slab: r.slab,
                    weight: st.dt,
                    comps: (0..sc.domain.d)
                        .map(|a| cells.iter().map(|c| c[a]).collect())
                        .collect(),
                }
            })
            .collect();
        let th = LadderThresholds {
            modular: lc.modular_threshold,
            l1: lc.l1_threshold,
        };
        let lad = stage(
            "ladder",
            convergence_ladder(&sc.domain, &sc.exponent, &samples, &psi, &lc.eps, &th),
        )?;
        checks.push(Check {
            stage: "ladder",
            name: "modular-distance-decreasing".into(),
            pass: lad.modular_monotone,
            value: *lad.modular_distances.last().unwrap(),
            threshold: lc.modular_threshold,
            detail: format!("{:?}", lad.modular_distances),
        });
        checks.push(Check {
            stage: "ladder",
            name: "sup-bound".into(),
            pass: lad.bound_holds,
            value: lad.linf_scaled.iter().cloned().fold(0.0, f64::max),
            threshold: lad.e_bound,
            detail: "largest sup|D(u^εψ)^ε|·ε^(d+1)".into(),
        });
        checks.push(Check {
            stage: "ladder",
            name: "ladder-final-distances".into(),
            pass: lad.pass,
            value: *lad.l1_distances.last().unwrap(),
            threshold: lc.l1_threshold,
            detail: "final L1 distance; pass also needs the modular threshold".into(),
        });
        art.put("ladder.csv", lad.to_csv());
    }

    if let Some(kcfg) = &sc.diagnostics.korn {
        let kc = kcfg.get_ref();
        let est =
            korn_constant_estimate_with(&sc.domain, kc.q, kc.samples, seed, KornSampling::General);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["q", "samples", "max_ratio", "mean_ratio"])
            .unwrap();
        w.write_record([
            format!("{:e}", est.q),
            est.samples.to_string(),
            format!("{:e}", est.max_ratio),
            format!("{:e}", est.mean_ratio),
        ])
        .unwrap();
        art.put("korn.csv", w.into_inner().unwrap());
    }

    if let Some(swcfg) = &sc.diagnostics.sweep {
        let sw = swcfg.get_ref();
        let setup = FlowSetup {
            domain: sc.domain.clone(),
            base: sc.stress.clone(),
            u0: sc.u0.clone(),
            forcing: sc.forcing.clone(),
            dt: sc.flow.dt,
            t_final: sc.domain.final_time(),
        };
        let sweep = stage("sweep", theta_sweep(&setup, &sw.theta, sw.growth_factor))?;
        for (t, e) in &sweep.failures {
            checks.push(Check {
                stage: "sweep",
                name: format!("run theta={t:e}"),
                pass: false,
                value: *t,
                threshold: 0.0,
                detail: e.clone(),
            });
        }
        for c in &sweep.checks {
            checks.push(Check {
                stage: "sweep",
                name: c.name.clone(),
                pass: c.pass,
                value: 0.0,
                threshold: sw.growth_factor,
                detail: c.detail.clone(),
            });
        }
        art.put("sweep.csv", sweep.to_csv());
        art.put("sweep_checks.csv", sweep.checks_csv());
        if let Some(mcfg) = &sc.diagnostics.minty {
            let mc = mcfg.get_ref();
            let etas = eta_samples(sc.domain.d, mc.samples, mc.magnitude, seed);
            let psi = vec![1.0; sc.domain.grid.len()];
            let rep = stage("minty", minty_identification(&sweep, &etas, &psi))?;
            checks.push(Check {
                stage: "minty",
                name: "monotonicity-integral".into(),
                pass: rep.monotone,
                value: rep.min_integral,
                threshold: -1e-8 * rep.scale,
                detail: format!("{} samples", rep.samples),
            });
            if mc.require_decrease {
                checks.push(Check {
                    stage: "minty",
                    name: "identification-error-decreasing".into(),
                    pass: rep.decreasing,
                    value: rep.errors.last().map(|e| e.1).unwrap_or(0.0),
                    threshold: rep.errors.first().map(|e| e.1).unwrap_or(0.0),
                    detail: format!("{:?}", rep.errors),
                });
            }
            art.put("minty.csv", rep.to_csv());
        }
    }

    let passed = checks.iter().all(|c| c.pass);
    art.put("checks.csv", checks_csv(&checks));
    write_manifest(&mut art, config, &doc, &sc, seed, passed);
    stage("output", art.flush())?;
    if !passed {
        return Err(RunError::Checks(
            checks
                .iter()
                .filter(|c| !c.pass)
                .map(|c| format!("{}/{}", c.stage, c.name))
                .collect(),
        ));
    }
    Ok(dir)
}

fn write_manifest(
    art: &mut Artifacts,
    config: &Path,
    doc: &Document,
    sc: &Scenario,
    seed: u64,
    passed: bool,
) {
    let files = art
        .files
        .iter()
        .map(|(k, v)| ManifestEntry {
            path: k.clone(),
            sha256: sha256_hex(v),
            bytes: v.len(),
        })
        .collect();
    let m = Manifest {
        scenario: sc.name.clone(),
        config_path: config.display().to_string(),
        config_sha256: sha256_hex(doc.text.as_bytes()),
        seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        library_version: varflow::VERSION.to_string(),
        checks_passed: passed,
        files,
    };
    let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    text.push('\n');
    art.put("manifest.json", text);
}

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyLine {
    pub pass: bool,
    pub name: String,
    pub detail: String,
}

impl fmt::Display for VerifyLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

/// Dry-run validation without time stepping. Syntax errors are returned as
/// configuration errors; failed checks appear as FAIL lines.
pub fn verify(config: &Path, seed: Option<u64>) -> Result<Vec<VerifyLine>, ConfigError> {
    let doc = load(config)?;
    let mut sc = match build(&doc) {
        Ok(sc) => sc,
        Err(e)
            if e.message.starts_with("exponent-lower-bound")
                || e.message.starts_with("exponent-upper-bound") =>
        {
            let name = e
                .message
                .split(':')
                .next()
                .unwrap_or("exponent")
                .to_string();
            let d = doc.file.domain.get_ref().dimension;
            return Ok(vec![VerifyLine {
                pass: false,
                name,
                detail: format!("{e} (computed bound {})", s_min_bound_label(d)),
            }]);
        }
        Err(e) => return Err(e),
    };
    let seed = seed.unwrap_or(sc.seed);
    sc.calibrate(seed);
    let mut out = vec![VerifyLine {
        pass: true,
        name: "domain".into(),
        detail: format!(
            "d = {}, {} cells, h = {:e}, {} time slabs",
            sc.domain.d,
            sc.domain.grid.len(),
            sc.domain.h(),
            sc.domain.slabs.count()
        ),
    }];
    let (lo, hi) = sc.exponent.range();
    out.push(VerifyLine {
        pass: true,
        name: "exponent-lower-bound".into(),
        detail: format!(
            "s in [{lo}, {hi}], lower bound {}, s_max {}",
            s_min_bound_label(sc.domain.d),
            sc.exponent.s_max
        ),
    });
    out.push(VerifyLine {
        pass: true,
        name: "coercivity-constant".into(),
        detail: format!(
            "c = {:e} ({}), h = {:e}",
            sc.stress.c,
            if sc.c_given { "given" } else { "fitted" },
            sc.stress.h
        ),
    });
    match RegularizedStress::new(sc.stress.clone(), sc.flow.theta) {
        Ok(reg) => {
            let (checks, _) = assumption_checks(&sc, &reg, seed);
            for c in checks {
                out.push(VerifyLine {
                    pass: c.pass,
                    name: c.name,
                    detail: c.detail,
                });
            }
        }
        Err(e) => out.push(VerifyLine {
            pass: false,
            name: "stress".into(),
            detail: e.to_string(),
        }),
    }
    match build_covering(&sc.domain, &sc.exponent) {
        Ok(cov) => out.push(VerifyLine {
            pass: true,
            name: "covering".into(),
            detail: format!(
                "{} balls of radius {:e}, smallest gap {:e} (needs ≥ {:e})",
                cov.len(),
                cov.r,
                cov.min_gap(),
                cov.s_min / sc.domain.d as f64
            ),
        }),
        Err(e) => out.push(VerifyLine {
            pass: false,
            name: "covering".into(),
            detail: e.to_string(),
        }),
    }
    if let Some(sw) = &sc.diagnostics.sweep {
        out.push(VerifyLine {
            pass: true,
            name: "sweep".into(),
            detail: format!("theta list {:?}", sw.get_ref().theta),
        });
    }
    Ok(out)
}
