//! Scenario documents: TOML parsing, expression fields and validation into
//! library objects.

use exmex::prelude::*;
use serde::Deserialize;
use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use toml::Spanned;
use varflow::exponent::{make_exponent_field, slab_from_csv, ExponentField};
use varflow::grid::{build_domain, Domain, DomainSpec, MaskRule};
use varflow::mac::{Mac, VelocityField};
use varflow::solver::{wall_vortex, Forcing};
use varflow::stress::{fit_coercivity, Sampler, StressModel};

/// Configuration error anchored to a line of the scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{}: {}", self.path.display(), l, self.message),
            None => write!(f, "{}: {}", self.path.display(), self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub output: Option<String>,
    pub domain: Spanned<DomainCfg>,
    pub exponent: Spanned<ExponentCfg>,
    pub stress: Spanned<StressCfg>,
    pub flow: Spanned<FlowCfg>,
    #[serde(default)]
    pub diagnostics: DiagnosticsCfg,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainCfg {
    pub dimension: usize,
    pub cells: Vec<usize>,
    pub extents: Option<Vec<f64>>,
    pub final_time: f64,
    pub slab_bounds: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentCfg {
    /// One expression in (t, x, y, z) per slab, evaluated at cell centers
    /// and the slab midpoint.
    pub expressions: Option<Vec<String>>,
    /// One CSV grid per slab, relative to the scenario file.
    pub csv: Option<Vec<String>>,
    pub s_max: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StressCfg {
    pub model: String,
    #[serde(default)]
    pub nu0: f64,
    #[serde(default)]
    pub nu1: f64,
    pub h: Option<f64>,
    pub c: Option<f64>,
    pub radii: Option<Vec<f64>>,
    pub phi: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowCfg {
    pub dt: f64,
    pub theta: f64,
    /// "wall-vortex" or "expressions".
    #[serde(default = "default_initial")]
    pub initial: String,
    #[serde(default = "one")]
    pub amplitude: f64,
    pub initial_expressions: Option<Vec<String>>,
    /// Force components in (t, x, y, z), sampled at each slab midpoint.
    pub force: Option<Vec<String>>,
    /// Steps between checkpoints; 0 writes the final state only.
    #[serde(default)]
    pub checkpoint_every: usize,
}

fn default_initial() -> String {
    "wall-vortex".into()
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsCfg {
    pub assumptions: Option<Spanned<AssumptionsCfg>>,
    pub covering: Option<bool>,
    pub energy: Option<Spanned<EnergyCfg>>,
    pub local_energy: Option<Spanned<LocalEnergyCfg>>,
    pub sweep: Option<Spanned<SweepCfg>>,
    pub minty: Option<Spanned<MintyCfg>>,
    pub ladder: Option<Spanned<LadderCfg>>,
    pub korn: Option<Spanned<KornCfg>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssumptionsCfg {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_xi_min")]
    pub xi_min: f64,
    #[serde(default = "default_xi_max")]
    pub xi_max: f64,
}

fn default_samples() -> usize {
    10_000
}
fn default_xi_min() -> f64 {
    1e-3
}
fn default_xi_max() -> f64 {
    1e3
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyCfg {
    /// Bound on |residual(T)| relative to the initial kinetic energy.
    pub residual_tolerance: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalEnergyCfg {
    pub center: Vec<f64>,
    pub radius: f64,
    /// Bound on |residual(T)| relative to the largest ledger column.
    #[serde(default = "default_local_tol")]
    pub tolerance: f64,
}

fn default_local_tol() -> f64 {
    0.01
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCfg {
    pub theta: Vec<f64>,
    #[serde(default = "default_growth")]
    pub growth_factor: f64,
}

fn default_growth() -> f64 {
    3.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MintyCfg {
    #[serde(default = "default_eta")]
    pub samples: usize,
    #[serde(default = "default_eta_mag")]
    pub magnitude: f64,
    /// Require the identification error to decrease across the sweep.
    #[serde(default = "yes")]
    pub require_decrease: bool,
}

fn default_eta() -> usize {
    32
}
fn default_eta_mag() -> f64 {
    5.0
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderCfg {
    pub eps: Vec<f64>,
    pub center: Vec<f64>,
    pub radius: f64,
    #[serde(default = "default_ladder_modular")]
    pub modular_threshold: f64,
    #[serde(default = "default_ladder_l1")]
    pub l1_threshold: f64,
}

fn default_ladder_modular() -> f64 {
    1e-3
}
fn default_ladder_l1() -> f64 {
    1e-2
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KornCfg {
    pub q: f64,
    #[serde(default = "default_korn_samples")]
    pub samples: usize,
}

fn default_korn_samples() -> usize {
    16
}

/// Parsed document with its source text for line lookups.
pub struct Document {
    pub path: PathBuf,
    pub text: String,
    pub file: ScenarioFile,
}

impl Document {
    pub fn error(&self, span: Option<Range<usize>>, message: impl Into<String>) -> ConfigError {
        ConfigError {
            path: self.path.clone(),
            line: span.map(|s| line_of(&self.text, s.start)),
            message: message.into(),
        }
    }
}

pub fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())]
        .bytes()
        .filter(|&b| b == b'\n')
        .count()
        + 1
}

pub fn load(path: &Path) -> Result<Document, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        path: path.to_path_buf(),
        line: None,
        message: format!("cannot read: {e}"),
    })?;
    parse(path, text)
}

pub fn parse(path: &Path, text: String) -> Result<Document, ConfigError> {
    match toml::from_str::<ScenarioFile>(&text) {
        Ok(file) => Ok(Document {
            path: path.to_path_buf(),
            text,
            file,
        }),
        Err(e) => {
            let line = e.span().map(|s| line_of(&text, s.start));
            Err(ConfigError {
                path: path.to_path_buf(),
                line,
                message: e.message().to_string(),
            })
        }
    }
}

/// A compiled closed-form expression in (t, x, y, z).
pub struct Expr {
    ex: FlatEx<f64>,
    slots: Vec<usize>,
}

impl Expr {
    pub fn compile(text: &str) -> Result<Self, String> {
        let ex = exmex::parse::<f64>(text).map_err(|e| format!("expression '{text}': {e}"))?;
        let mut slots = Vec::new();
        for name in ex.var_names() {
            let k = match name.as_str() {
                "t" => 0,
                "x" => 1,
                "y" => 2,
                "z" => 3,
                other => {
                    return Err(format!(
                        "expression '{text}': unknown variable '{other}' (use t, x, y, z)"
                    ))
                }
            };
            slots.push(k);
        }
        Ok(Expr { ex, slots })
    }

    pub fn eval(&self, t: f64, x: [f64; 3]) -> f64 {
        let all = [t, x[0], x[1], x[2]];
        let vals: Vec<f64> = self.slots.iter().map(|&k| all[k]).collect();
        self.ex.eval(&vals).unwrap_or(f64::NAN)
    }
}

/// Library objects built from a validated scenario.
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub output: Option<String>,
    pub domain: Domain,
    pub exponent: Arc<ExponentField>,
    pub stress: StressModel,
    pub u0: VelocityField,
    pub forcing: Forcing,
    pub flow: FlowCfg,
    pub diagnostics: DiagnosticsCfg,
    /// Whether the coercivity constant was given rather than fitted.
    pub c_given: bool,
}

impl Scenario {
    /// Fit the coercivity constant from samples when the scenario leaves it
    /// open. The fit uses a stream separate from the verification samples.
    pub fn calibrate(&mut self, seed: u64) {
        if self.c_given {
            return;
        }
        let (n, lo, hi) = self.sampling();
        self.stress.c = fit_coercivity(&self.stress, &Sampler::new(n, lo, hi, seed ^ 0xc0e7_c1b1));
    }

    /// Sample count and |ξ| range for model checks.
    pub fn sampling(&self) -> (usize, f64, f64) {
        self.diagnostics
            .assumptions
            .as_ref()
            .map(|s| {
                let c = s.get_ref();
                (c.samples, c.xi_min, c.xi_max)
            })
            .unwrap_or((default_samples(), default_xi_min(), default_xi_max()))
    }
}

fn exponent_values(doc: &Document, domain: &Domain) -> Result<Vec<Vec<f64>>, ConfigError> {
    let ex = &doc.file.exponent;
    let span = Some(ex.span());
    let cfg = ex.get_ref();
    let slabs = domain.slabs.count();
    match (&cfg.expressions, &cfg.csv) {
        (Some(exprs), None) => {
            if exprs.len() != slabs {
                return Err(doc.error(
                    span,
                    format!(
                        "{} exponent expressions for {} time slabs",
                        exprs.len(),
                        slabs
                    ),
                ));
            }
            let mut out = Vec::with_capacity(slabs);
            for (k, text) in exprs.iter().enumerate() {
                let e = Expr::compile(text).map_err(|m| doc.error(span.clone(), m))?;
                let (t0, t1) = domain.slabs.range(k);
                let tm = 0.5 * (t0 + t1);
                let v: Vec<f64> = (0..domain.grid.len())
                    .map(|i| e.eval(tm, domain.grid.center_of(i)))
                    .collect();
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(doc.error(
                        span,
                        format!("exponent expression '{text}' is not finite on the grid"),
                    ));
                }
                out.push(v);
            }
            Ok(out)
        }
        (None, Some(files)) => {
            if files.len() != slabs {
                return Err(doc.error(
                    span,
                    format!(
                        "{} exponent CSV files for {} time slabs",
                        files.len(),
                        slabs
                    ),
                ));
            }
            let base = doc.path.parent().unwrap_or(Path::new("."));
            let mut out = vec![Vec::new(); slabs];
            for f in files {
                let text = std::fs::read_to_string(base.join(f)).map_err(|e| {
                    doc.error(span.clone(), format!("cannot read exponent CSV '{f}': {e}"))
                })?;
                let (k, v) = slab_from_csv(&text, &domain.grid)
                    .map_err(|e| doc.error(span.clone(), format!("{f}: {e}")))?;
                if k >= slabs || !out[k].is_empty() {
                    return Err(doc.error(
                        span,
                        format!("{f}: slab index {k} is out of range or repeated"),
                    ));
                }
                out[k] = v;
            }
            Ok(out)
        }
        _ => Err(doc.error(span, "exponent needs exactly one of 'expressions' or 'csv'")),
    }
}

fn vector_exprs(
    doc: &Document,
    span: Range<usize>,
    list: &[String],
    d: usize,
    what: &str,
) -> Result<Vec<Expr>, ConfigError> {
    if list.len() != d {
        return Err(doc.error(
            Some(span),
            format!("{what} needs {d} components, got {}", list.len()),
        ));
    }
    list.iter()
        .map(|t| Expr::compile(t).map_err(|m| doc.error(Some(span.clone()), m)))
        .collect()
}

/// Build every library object and check the referenced specs. Nothing is
/// time stepped here.
pub fn build(doc: &Document) -> Result<Scenario, ConfigError> {
    let f = &doc.file;
    let dspan = Some(f.domain.span());
    let dc = f.domain.get_ref();
    let d = dc.dimension;
    if !(2..=3).contains(&d) {
        return Err(doc.error(dspan, format!("dimension must be 2 or 3, got {d}")));
    }
    if dc.cells.len() != d || dc.cells.iter().any(|&n| n < 4) {
        return Err(doc.error(dspan, format!("cells needs {d} entries, each at least 4")));
    }
    let mut cells = [1usize; 3];
    cells[..d].copy_from_slice(&dc.cells);
    let mut extents = [1.0f64; 3];
    if let Some(e) = &dc.extents {
        if e.len() != d || e.iter().any(|&x| !(x > 0.0)) {
            return Err(doc.error(dspan, format!("extents needs {d} positive entries")));
        }
        extents[..d].copy_from_slice(e);
    }
    let slab_bounds = dc
        .slab_bounds
        .clone()
        .unwrap_or_else(|| vec![0.0, dc.final_time]);
    if slab_bounds.last().copied() != Some(dc.final_time) {
        return Err(doc.error(dspan, "last slab bound must equal final_time"));
    }
    let spec = DomainSpec {
        d,
        extents,
        cells,
        mask: MaskRule::Full,
        slab_bounds,
    };
    let domain = build_domain(&spec).map_err(|e| doc.error(dspan.clone(), e.to_string()))?;
    if (0..d).any(|a| (extents[a] / cells[a] as f64 - domain.grid.h).abs() > 1e-12 * domain.grid.h)
    {
        return Err(doc.error(
            dspan,
            "cells must be square: extents[i]/cells[i] equal on every axis",
        ));
    }

    let values = exponent_values(doc, &domain)?;
    let espan = Some(f.exponent.span());
    let exponent = Arc::new(
        make_exponent_field(&domain, values, f.exponent.get_ref().s_max)
            .map_err(|e| doc.error(espan, e.to_string()))?,
    );

    let sspan = Some(f.stress.span());
    let sc = f.stress.get_ref();
    let mut stress = match sc.model.as_str() {
        "power-law" => {
            if !(sc.nu0 >= 0.0 && sc.nu1 >= 0.0 && sc.nu0 + sc.nu1 > 0.0) {
                return Err(doc.error(sspan, "power-law needs nu0, nu1 ≥ 0 with nu0 + nu1 > 0"));
            }
            StressModel::power_law(sc.nu0, sc.nu1, Arc::clone(&exponent))
        }
        "table" => {
            let (Some(r), Some(p)) = (&sc.radii, &sc.phi) else {
                return Err(doc.error(sspan, "table model needs 'radii' and 'phi'"));
            };
            StressModel::table(r.clone(), p.clone(), Arc::clone(&exponent))
                .map_err(|e| doc.error(sspan.clone(), e.to_string()))?
        }
        other => {
            return Err(doc.error(
                sspan,
                format!("unknown stress model '{other}' (power-law or table)"),
            ))
        }
    };
    if let Some(h) = sc.h {
        stress.h = h;
    }
    if let Some(c) = sc.c {
        stress.c = c;
    }

    let fspan = f.flow.span();
    let fc = f.flow.get_ref();
    if !(fc.dt > 0.0) || !(fc.theta > 0.0) {
        return Err(doc.error(Some(fspan), "flow needs dt > 0 and theta > 0"));
    }
    let steps = dc.final_time / fc.dt;
    if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
        return Err(doc.error(
            Some(fspan),
            "final_time must be a whole number of time steps",
        ));
    }
    let mac = Mac::new(domain.grid);
    let u0 = match fc.initial.as_str() {
        "wall-vortex" => {
            if d != 2 {
                return Err(doc.error(
                    Some(fspan),
                    "wall-vortex initial data is two-dimensional; use initial_expressions",
                ));
            }
            wall_vortex(&mac, fc.amplitude)
        }
        "expressions" => {
            let list = fc.initial_expressions.as_ref().ok_or_else(|| {
                doc.error(
                    Some(fspan.clone()),
                    "initial = \"expressions\" needs initial_expressions",
                )
            })?;
            let ex = vector_exprs(doc, fspan.clone(), list, d, "initial_expressions")?;
            mac.velocity_from_fn(|a, x| ex[a].eval(0.0, x))
        }
        other => {
            return Err(doc.error(
                Some(fspan),
                format!("unknown initial data '{other}' (wall-vortex or expressions)"),
            ))
        }
    };
    if u0.comps.iter().flatten().any(|v| !v.is_finite()) {
        return Err(doc.error(Some(fspan), "initial velocity is not finite on the grid"));
    }
    let forcing = match &fc.force {
        None => Forcing::None,
        Some(list) => {
            let ex = vector_exprs(doc, fspan.clone(), list, d, "force")?;
            let per: Vec<VelocityField> = (0..domain.slabs.count())
                .map(|k| {
                    let (t0, t1) = domain.slabs.range(k);
                    let tm = 0.5 * (t0 + t1);
                    mac.velocity_from_fn(|a, x| ex[a].eval(tm, x))
                })
                .collect();
            Forcing::PerSlab(per)
        }
    };

    let diag = &f.diagnostics;
    if let Some(sw) = &diag.sweep {
        let th = &sw.get_ref().theta;
        if th.is_empty() || th.iter().any(|&t| !(t > 0.0)) || th.windows(2).any(|w| w[1] >= w[0]) {
            return Err(doc.error(
                Some(sw.span()),
                "sweep theta list must be nonempty, positive and strictly decreasing",
            ));
        }
    }
    if let Some(m) = &diag.minty {
        if diag.sweep.is_none() {
            return Err(doc.error(
                Some(m.span()),
                "minty diagnostics need a sweep section with a theta list",
            ));
        }
    }
    let centered = |c: &Vec<f64>, r: f64| c.len() == d && r > 0.0;
    if let Some(le) = &diag.local_energy {
        if !centered(&le.get_ref().center, le.get_ref().radius) {
            return Err(doc.error(
                Some(le.span()),
                format!("local_energy needs a {d}-component center and radius > 0"),
            ));
        }
    }
    if let Some(l) = &diag.ladder {
        let lc = l.get_ref();
        if !centered(&lc.center, lc.radius)
            || lc.eps.len() < 2
            || lc.eps.windows(2).any(|w| w[1] >= w[0])
        {
            return Err(doc.error(
                Some(l.span()),
                "ladder needs a center, radius > 0 and a decreasing eps list",
            ));
        }
    }
    Ok(Scenario {
        name: f.name.clone(),
        seed: f.seed,
        output: f.output.clone(),
        domain,
        exponent,
        stress,
        u0,
        forcing,
        flow: fc.clone(),
        diagnostics: diag.clone(),
        c_given: sc.c.is_some(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
name = "t"
seed = 3

[domain]
dimension = 2
cells = [8, 8]
final_time = 0.1

[exponent]
expressions = ["2 + 0.5*x"]

[stress]
model = "power-law"
nu0 = 0.1
nu1 = 1.0

[flow]
dt = 0.05
theta = 0.01
"#;

    #[test]
    fn base_document_builds() {
        let doc = parse(Path::new("s.toml"), BASE.into()).unwrap();
        let sc = build(&doc).unwrap();
        assert_eq!(sc.domain.grid.len(), 64);
        let (lo, hi) = sc.exponent.range();
        assert!(lo > 2.0 && hi < 2.5);
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let text = BASE.replace("nu1 = 1.0", "nu1 = ");
        let err = parse(Path::new("s.toml"), text).err().unwrap();
        assert_eq!(err.line, Some(16));
    }

    #[test]
    fn sweep_without_theta_is_rejected_at_its_line() {
        let text = format!("{BASE}\n[diagnostics.sweep]\ngrowth_factor = 3.0\n");
        let err = parse(Path::new("s.toml"), text).err().unwrap();
        assert!(err.message.contains("theta"), "{}", err.message);
        assert!(err.line.is_some());
    }

    #[test]
    fn low_exponent_in_three_dimensions_cites_the_bound() {
        let text = BASE
            .replace("dimension = 2", "dimension = 3")
            .replace("cells = [8, 8]", "cells = [4, 4, 4]")
            .replace("2 + 0.5*x", "2");
        let doc = parse(Path::new("s.toml"), text).unwrap();
        let err = build(&doc).err().unwrap();
        assert!(err.message.contains("11/5"), "{}", err.message);
        assert_eq!(err.line, Some(10));
    }

    #[test]
    fn unknown_variables_are_reported() {
        let doc = parse(Path::new("s.toml"), BASE.replace("2 + 0.5*x", "2 + w")).unwrap();
        let err = build(&doc).err().unwrap();
        assert!(
            err.message.contains("unknown variable 'w'"),
            "{}",
            err.message
        );
    }
}
