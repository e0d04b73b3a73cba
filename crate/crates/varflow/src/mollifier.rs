//! Spatial and temporal mollification with the standard bump kernel,
//! localized double smoothing and the convergence ladder.

use crate::exponent::ExponentField;
use crate::grid::{Domain, Grid};
use crate::quad::pairwise_sum;
use crate::tensor::SymTensor;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MollifierError {
    #[error("under-resolved kernel: eps = {eps} < 2 × spacing = {min}")]
    UnderResolved { eps: f64, min: f64 },
    #[error("support leak: eps = {eps} ≥ eps0 = {eps0}")]
    SupportLeak { eps: f64, eps0: f64 },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("dimension error: {0}")]
    Shape(String),
}

/// exp(−1/(1 − r²)) on the unit ball.
pub fn bump(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r * r)).exp()
    }
}

fn bump_derivative(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        let q = 1.0 - r * r;
        -bump(r) * 2.0 * r / (q * q)
    }
}

/// Constants of the continuous unit-mass kernel in dimension d:
/// (normalization ∫bump, sup η, sup |∇η|).
pub fn kernel_constants(d: usize) -> (f64, f64, f64) {
    let n = 200_000;
    let dr = 1.0 / n as f64;
    let omega = if d == 2 {
        std::f64::consts::TAU
    } else {
        4.0 * std::f64::consts::PI
    };
    let radial: Vec<f64> = (0..n)
        .map(|k| {
            let r = (k as f64 + 0.5) * dr;
            bump(r) * r.powi(d as i32 - 1)
        })
        .collect();
    let z = omega * pairwise_sum(&radial) * dr;
    let grad_max = (0..n)
        .map(|k| bump_derivative(k as f64 * dr).abs())
        .fold(0.0, f64::max);
    (z, bump(0.0) / z, grad_max / z)
}

/// Discrete kernel η_ε on a grid: offsets and weights summing to one.
#[derive(Debug, Clone)]
pub struct Kernel {
    pub d: usize,
    pub eps: f64,
    pub h: f64,
    pub taps: Vec<([isize; 3], f64)>,
}

impl Kernel {
    pub fn new(d: usize, eps: f64, h: f64) -> Result<Self, MollifierError> {
        if eps < 2.0 * h * (1.0 - 1e-12) {
            return Err(MollifierError::UnderResolved { eps, min: 2.0 * h });
        }
        let m = (eps / h).ceil() as isize;
        let mut taps = Vec::new();
        let zr = if d == 3 { m } else { 0 };
        for i in -m..=m {
            for j in -m..=m {
                for k in -zr..=zr {
                    let r = ((i * i + j * j + k * k) as f64).sqrt() * h / eps;
                    let w = bump(r);
                    if w > 0.0 {
                        taps.push(([i, j, k], w));
                    }
                }
            }
        }
        let total = pairwise_sum(&taps.iter().map(|t| t.1).collect::<Vec<_>>());
        for t in taps.iter_mut() {
            t.1 /= total;
        }
        Ok(Kernel { d, eps, h, taps })
    }

    pub fn mass(&self) -> f64 {
        pairwise_sum(&self.taps.iter().map(|t| t.1).collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extension {
    /// Zero outside Ω.
    Zero,
    /// Periodic wrap over the box (test mode).
    Periodic,
}

/// Convolve a cell field with the kernel at the cells flagged `active`
/// (all cells when `None`); other cells are returned as zero.
pub fn convolve(
    grid: &Grid,
    mask: &[bool],
    u: &[f64],
    kernel: &Kernel,
    ext: Extension,
    active: Option<&[bool]>,
) -> Vec<f64> {
    let n = grid.n;
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            if let Some(a) = active {
                if !a[i] {
                    return 0.0;
                }
            }
            let c = grid.coords(i);
            let mut s = 0.0;
            for (o, w) in &kernel.taps {
                let mut q = [0usize; 3];
                let mut inside = true;
                for ax in 0..3 {
                    let v = c[ax] as isize - o[ax];
                    let na = n[ax] as isize;
                    if v < 0 || v >= na {
                        match ext {
                            Extension::Zero => {
                                inside = false;
                                break;
                            }
                            Extension::Periodic => q[ax] = v.rem_euclid(na) as usize,
                        }
                    } else {
                        q[ax] = v as usize;
                    }
                }
                if !inside {
                    continue;
                }
                let j = grid.index(q);
                if ext == Extension::Zero && !mask[j] {
                    continue;
                }
                s += w * u[j];
            }
            s
        })
        .collect()
}

/// u^ε on every cell.
pub fn spatial_mollify(
    grid: &Grid,
    mask: &[bool],
    u: &[f64],
    eps: f64,
    ext: Extension,
) -> Result<Vec<f64>, MollifierError> {
    if u.len() != grid.len() {
        return Err(MollifierError::Shape(format!(
            "field has {} values, grid has {}",
            u.len(),
            grid.len()
        )));
    }
    let k = Kernel::new(grid.d, eps, grid.h)?;
    Ok(convolve(grid, mask, u, &k, ext, None))
}

/// Temporal weights centered at `t` for samples at k·dt, normalized over all
/// integer k (samples before 0 and after the last index use the extension).
fn time_weights(dt: f64, eps: f64, t: f64) -> Vec<(isize, f64)> {
    let lo = ((t - eps) / dt).floor() as isize;
    let hi = ((t + eps) / dt).ceil() as isize;
    let mut w: Vec<(isize, f64)> = (lo..=hi)
        .map(|k| (k, bump((t - k as f64 * dt).abs() / eps)))
        .filter(|p| p.1 > 0.0)
        .collect();
    let total: f64 = w.iter().map(|p| p.1).sum();
    for p in w.iter_mut() {
        p.1 /= total;
    }
    w
}

/// R^ε u at time `t` for samples u_k at t_k = k·dt. Before t = 0 the series
/// is continued by `before` (or zero), after the last sample by zero.
pub fn temporal_mollify_at(
    series: &[Vec<f64>],
    dt: f64,
    eps: f64,
    before: Option<&[f64]>,
    t: f64,
) -> Result<Vec<f64>, MollifierError> {
    if eps < 2.0 * dt * (1.0 - 1e-12) {
        return Err(MollifierError::UnderResolved { eps, min: 2.0 * dt });
    }
    let n = series.first().map(|v| v.len()).unwrap_or(0);
    let mut out = vec![0.0; n];
    for (k, w) in time_weights(dt, eps, t) {
        let src: Option<&[f64]> = if k < 0 {
            before
        } else if (k as usize) < series.len() {
            Some(&series[k as usize])
        } else {
            None
        };
        if let Some(v) = src {
            for (o, x) in out.iter_mut().zip(v) {
                *o += w * x;
            }
        }
    }
    Ok(out)
}

/// R^ε u at every sample time.
pub fn temporal_mollify(
    series: &[Vec<f64>],
    dt: f64,
    eps: f64,
    before: Option<&[f64]>,
) -> Result<Vec<Vec<f64>>, MollifierError> {
    (0..series.len())
        .map(|k| temporal_mollify_at(series, dt, eps, before, k as f64 * dt))
        .collect()
}

/// Symmetric gradient of a cell-centered vector field by centered
/// differences, zero outside the grid.
pub fn cell_strain(grid: &Grid, v: &[Vec<f64>]) -> Vec<SymTensor> {
    let d = grid.d;
    let h = grid.h;
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let c = grid.coords(i);
            let mut m = [[0.0; 3]; 3];
            for a in 0..d {
                for b in 0..d {
                    let up = grid
                        .offset(c, b, 1)
                        .map(|q| v[a][grid.index(q)])
                        .unwrap_or(0.0);
                    let dn = grid
                        .offset(c, b, -1)
                        .map(|q| v[a][grid.index(q)])
                        .unwrap_or(0.0);
                    m[a][b] = (up - dn) / (2.0 * h);
                }
            }
            SymTensor::sym_part(d, &m)
        })
        .collect()
}

/// Largest admissible radius: half the distance from supp ψ to the wall,
/// shortened by one cell.
pub fn eps0(domain: &Domain, psi: &[f64]) -> f64 {
    let dist = (0..domain.grid.len())
        .filter(|&i| psi[i] != 0.0)
        .map(|i| domain.wall_distance(i) - 0.5 * domain.h())
        .fold(f64::INFINITY, f64::min);
    (dist - domain.h()) / 2.0
}

/// (u^ε ψ)^ε for a cell-centered vector field.
pub fn localized_double_smooth(
    domain: &Domain,
    u: &[Vec<f64>],
    psi: &[f64],
    eps: f64,
) -> Result<Vec<Vec<f64>>, MollifierError> {
    let e0 = eps0(domain, psi);
    if eps >= e0 {
        return Err(MollifierError::SupportLeak { eps, eps0: e0 });
    }
    let grid = &domain.grid;
    let k = Kernel::new(grid.d, eps, grid.h)?;
    let support: Vec<bool> = psi.iter().map(|&p| p != 0.0).collect();
    let reach = dilate(grid, &support, eps);
    Ok(u.iter()
        .map(|comp| {
            let ue = convolve(
                grid,
                &domain.mask,
                comp,
                &k,
                Extension::Zero,
                Some(&support),
            );
            let prod: Vec<f64> = ue.iter().zip(psi).map(|(a, b)| a * b).collect();
            convolve(grid, &domain.mask, &prod, &k, Extension::Zero, Some(&reach))
        })
        .collect())
}

/// Cells within distance `r` of a flagged cell.
fn dilate(grid: &Grid, flags: &[bool], r: f64) -> Vec<bool> {
    let m = (r / grid.h).ceil() as isize + 1;
    let mut out = flags.to_vec();
    for i in 0..grid.len() {
        if !flags[i] {
            continue;
        }
        let c = grid.coords(i);
        let zr = if grid.d == 3 { m } else { 0 };
        for di in -m..=m {
            for dj in -m..=m {
                for dk in -zr..=zr {
                    let q = [c[0] as isize + di, c[1] as isize + dj, c[2] as isize + dk];
                    if (0..3).all(|a| q[a] >= 0 && q[a] < grid.n[a] as isize) {
                        out[grid.index([q[0] as usize, q[1] as usize, q[2] as usize])] = true;
                    }
                }
            }
        }
    }
    out
}

/// One time sample of a cell-centered vector field.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSample {
    pub slab: usize,
    pub weight: f64,
    pub comps: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceLadder {
    pub eps_list: Vec<f64>,
    pub l1_distances: Vec<f64>,
    pub modular_distances: Vec<f64>,
    pub linf_bounds: Vec<f64>,
    /// sup |D(u^εψ)^ε| · ε^{d+1} per rung.
    pub linf_scaled: Vec<f64>,
    pub e_bound: f64,
    pub eps0: f64,
    pub modular_monotone: bool,
    pub bound_holds: bool,
    pub pass: bool,
}

impl ConvergenceLadder {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "eps",
            "l1_distance",
            "modular_distance",
            "linf_times_eps_pow",
            "e_bound",
        ])
        .unwrap();
        for k in 0..self.eps_list.len() {
            w.write_record([
                format!("{:e}", self.eps_list[k]),
                format!("{:e}", self.l1_distances[k]),
                format!("{:e}", self.modular_distances[k]),
                format!("{:e}", self.linf_scaled[k]),
                format!("{:e}", self.e_bound),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

fn l1_norm_vec(grid: &Grid, comps: &[Vec<f64>]) -> f64 {
    let t: Vec<f64> = (0..grid.len())
        .map(|i| comps.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt())
        .collect();
    grid.cell_volume() * pairwise_sum(&t)
}

/// ‖ψ‖∞‖u‖_{L∞L¹}‖∇η‖∞ + ‖∇ψ‖∞‖u‖_{L∞L¹}‖η‖∞ with the continuous kernel constants.
pub fn sup_bound_constant(grid: &Grid, psi: &[f64], samples: &[VectorSample]) -> f64 {
    let (_, eta_sup, grad_sup) = kernel_constants(grid.d);
    let psi_sup = psi.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut grad_psi = 0.0f64;
    for i in 0..grid.len() {
        let c = grid.coords(i);
        let mut g2 = 0.0;
        for a in 0..grid.d {
            let up = grid
                .offset(c, a, 1)
                .map(|q| psi[grid.index(q)])
                .unwrap_or(0.0);
            let dn = grid
                .offset(c, a, -1)
                .map(|q| psi[grid.index(q)])
                .unwrap_or(0.0);
            g2 += ((up - dn) / (2.0 * grid.h)).powi(2);
        }
        grad_psi = grad_psi.max(g2.sqrt());
    }
    let u_l1 = samples
        .iter()
        .map(|s| l1_norm_vec(grid, &s.comps))
        .fold(0.0, f64::max);
    psi_sup * u_l1 * grad_sup + grad_psi * u_l1 * eta_sup
}

/// Largest extrapolated wall value relative to the sup of the field.
fn trace_defect(grid: &Grid, comps: &[Vec<f64>]) -> f64 {
    let sup = comps.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    if sup == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0f64;
    for i in 0..grid.len() {
        let c = grid.coords(i);
        for a in 0..grid.d {
            for (edge, step) in [(0usize, 1isize), (grid.n[a] - 1, -1)] {
                if c[a] != edge || grid.n[a] < 2 {
                    continue;
                }
                let inner = grid.index(grid.offset(c, a, step).unwrap());
                for comp in comps {
                    worst = worst.max((1.5 * comp[i] - 0.5 * comp[inner]).abs());
                }
            }
        }
    }
    worst / sup
}

pub struct LadderThresholds {
    pub modular: f64,
    pub l1: f64,
}

impl Default for LadderThresholds {
    fn default() -> Self {
        LadderThresholds {
            modular: 1e-3,
            l1: 1e-2,
        }
    }
}

/// Distances of (u^εψ)^ε to uψ in L¹ and of their symmetric gradients in the
/// modular of s, with the sup bound at every rung.
pub fn convergence_ladder(
    domain: &Domain,
    s: &ExponentField,
    samples: &[VectorSample],
    psi: &[f64],
    eps_list: &[f64],
    thresholds: &LadderThresholds,
) -> Result<ConvergenceLadder, MollifierError> {
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(MollifierError::Contract(
            "eps list must be strictly decreasing".into(),
        ));
    }
    let grid = &domain.grid;
    for smp in samples {
        let defect = trace_defect(grid, &smp.comps);
        if defect > 1e-2 {
            return Err(MollifierError::Contract(format!(
                "field does not vanish on the wall (extrapolated trace {defect:.3e} of its sup)"
            )));
        }
    }
    let e0 = eps0(domain, psi);
    let e_bound = sup_bound_constant(grid, psi, samples);
    let d = grid.d;
    let vol = grid.cell_volume();
    let targets: Vec<(Vec<Vec<f64>>, Vec<SymTensor>)> = samples
        .iter()
        .map(|smp| {
            let up: Vec<Vec<f64>> = smp
                .comps
                .iter()
                .map(|c| c.iter().zip(psi).map(|(a, b)| a * b).collect())
                .collect();
            let du = cell_strain(grid, &up);
            (up, du)
        })
        .collect();
    let mut l1s = Vec::new();
    let mut mods = Vec::new();
    let mut sups = Vec::new();
    let mut scaled = Vec::new();
    for &eps in eps_list {
        let mut l1_terms = Vec::new();
        let mut mod_terms = Vec::new();
        let mut sup = 0.0f64;
        for (smp, (up, du)) in samples.iter().zip(&targets) {
            let sm = localized_double_smooth(domain, &smp.comps, psi, eps)?;
            let dsm = cell_strain(grid, &sm);
            let l1: Vec<f64> = (0..grid.len())
                .map(|i| {
                    (0..d)
                        .map(|a| (sm[a][i] - up[a][i]).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            l1_terms.push(smp.weight * vol * pairwise_sum(&l1));
            let m: Vec<f64> = (0..grid.len())
                .map(|i| {
                    if s.mask[i] {
                        (dsm[i] - du[i]).norm().powf(s.at(smp.slab, i))
                    } else {
                        0.0
                    }
                })
                .collect();
            mod_terms.push(smp.weight * vol * pairwise_sum(&m));
            sup = sup.max(dsm.iter().fold(0.0f64, |acc, t| acc.max(t.norm())));
        }
        l1s.push(pairwise_sum(&l1_terms));
        mods.push(pairwise_sum(&mod_terms));
        sups.push(sup);
        scaled.push(sup * eps.powi(d as i32 + 1));
    }
    let modular_monotone = mods.windows(2).all(|w| w[1] < w[0]) || mods.iter().all(|&m| m == 0.0);
    let bound_holds = scaled.iter().all(|&v| v <= e_bound);
    let last_mod = *mods.last().unwrap_or(&0.0);
    let last_l1 = *l1s.last().unwrap_or(&0.0);
    let pass =
        modular_monotone && bound_holds && last_mod < thresholds.modular && last_l1 < thresholds.l1;
    Ok(ConvergenceLadder {
        eps_list: eps_list.to_vec(),
        l1_distances: l1s,
        modular_distances: mods,
        linf_bounds: sups,
        linf_scaled: scaled,
        e_bound,
        eps0: e0,
        modular_monotone,
        bound_holds,
        pass,
    })
}

/// For every sampled ball and slab: the grid minimizer of s also minimizes
/// |ξ|^{s} for each tested |ξ| ≥ 1. Returns the number of failures.
pub fn minimizer_independence(
    s: &ExponentField,
    centers: &[[f64; 3]],
    radius: f64,
    magnitudes: &[f64],
) -> usize {
    let grid = &s.grid;
    let mut failures = 0;
    for slab in 0..s.slabs.count() {
        for x in centers {
            let cells: Vec<usize> = (0..grid.len())
                .filter(|&i| s.mask[i] && crate::grid::distance(&grid.center_of(i), x) <= radius)
                .collect();
            if cells.is_empty() {
                continue;
            }
            let star = *cells
                .iter()
                .min_by(|&&a, &&b| s.at(slab, a).partial_cmp(&s.at(slab, b)).unwrap())
                .unwrap();
            for &m in magnitudes {
                let best = cells
                    .iter()
                    .map(|&i| m.powf(s.at(slab, i)))
                    .fold(f64::INFINITY, f64::min);
                if m.powf(s.at(slab, star)) > best {
                    failures += 1;
                }
            }
        }
    }
    failures
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparabilityReport {
    pub m_constant: f64,
    pub worst_ratio: f64,
    pub samples: usize,
    pub holds: bool,
}

/// Checks |ξ|^{s(y)} ≤ M inf_z |ξ|^{s(z)} over balls B_γ(x) for
/// |ξ| ∈ [1, E γ^{−(d+1)}], with M = E^{C/log 2} e^{C(d+1)} and C the
/// field's log-Hölder constant. The worst case is the top of the range.
pub fn infimum_comparability(
    s: &ExponentField,
    e: f64,
    gammas: &[f64],
    centers: &[[f64; 3]],
) -> ComparabilityReport {
    let d = s.d as f64;
    let c = s.log_holder_c;
    let m_constant = e.powf(c / 2f64.ln()) * (c * (d + 1.0)).exp();
    let grid = &s.grid;
    let mut worst = 1.0f64;
    let mut samples = 0;
    for slab in 0..s.slabs.count() {
        for &gamma in gammas {
            let top = (e * gamma.powf(-(d + 1.0))).max(1.0);
            for x in centers {
                let vals: Vec<f64> = (0..grid.len())
                    .filter(|&i| s.mask[i] && crate::grid::distance(&grid.center_of(i), x) <= gamma)
                    .map(|i| s.at(slab, i))
                    .collect();
                if vals.is_empty() {
                    continue;
                }
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                samples += vals.len();
                worst = worst.max(top.powf(hi - lo));
            }
        }
    }
    ComparabilityReport {
        m_constant,
        worst_ratio: worst,
        samples,
        holds: worst <= m_constant * (1.0 + 1e-12),
    }
}

/// ∫|f^ε|²ψ for a scalar cell field.
pub fn weighted_l2(
    grid: &Grid,
    mask: &[bool],
    f: &[f64],
    psi: &[f64],
    eps: Option<f64>,
) -> Result<f64, MollifierError> {
    let g = match eps {
        Some(e) => spatial_mollify(grid, mask, f, e, Extension::Zero)?,
        None => f.to_vec(),
    };
    let t: Vec<f64> = g.iter().zip(psi).map(|(a, p)| a * a * p).collect();
    Ok(grid.cell_volume() * pairwise_sum(&t))
}

/// ‖(v^ε)^ε − v‖_{L¹} for a scalar cell field.
pub fn double_mollification_l1(
    grid: &Grid,
    mask: &[bool],
    v: &[f64],
    eps: f64,
) -> Result<f64, MollifierError> {
    let once = spatial_mollify(grid, mask, v, eps, Extension::Zero)?;
    let twice = spatial_mollify(grid, mask, &once, eps, Extension::Zero)?;
    let t: Vec<f64> = twice.iter().zip(v).map(|(a, b)| (a - b).abs()).collect();
    Ok(grid.cell_volume() * pairwise_sum(&t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, DomainSpec};

    fn square(n: usize) -> Domain {
        build_domain(&DomainSpec::unit_box(2, n, 1.0)).unwrap()
    }

    #[test]
    fn kernel_has_unit_mass() {
        for &eps in &[0.02, 0.05, 0.13] {
            let k = Kernel::new(2, eps, 0.01).unwrap();
            assert!((k.mass() - 1.0).abs() < 1e-12);
        }
        let k = Kernel::new(3, 0.1, 0.04).unwrap();
        assert!((k.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn under_resolved_kernel_rejected() {
        assert!(matches!(
            Kernel::new(2, 0.015, 0.01),
            Err(MollifierError::UnderResolved { .. })
        ));
    }

    #[test]
    fn continuous_constants_in_2d() {
        // ∫ bump over the unit disk ≈ 0.4665.
        let (z, sup, grad) = kernel_constants(2);
        assert!((z - 0.466_512).abs() < 1e-5, "{z}");
        assert!(sup > 0.0 && grad > sup);
    }

    #[test]
    fn periodic_constant_is_preserved() {
        let dom = square(32);
        let u = vec![3.5; dom.grid.len()];
        let v = spatial_mollify(&dom.grid, &dom.mask, &u, 0.1, Extension::Periodic).unwrap();
        assert!(v.iter().all(|x| (x - 3.5).abs() < 1e-12));
    }

    #[test]
    fn affine_field_is_reproduced_away_from_the_wall() {
        let dom = square(64);
        let g = dom.grid;
        let u: Vec<f64> = (0..g.len())
            .map(|i| 1.0 + 2.0 * g.center_of(i)[0] - 0.5 * g.center_of(i)[1])
            .collect();
        let eps = 0.1;
        let v = spatial_mollify(&g, &dom.mask, &u, eps, Extension::Zero).unwrap();
        for i in 0..g.len() {
            if dom.wall_distance(i) > eps + g.h {
                assert!((u[i] - v[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn half_plane_interface_is_one_half() {
        // Indicator of x < 1/2 sampled at centers; the interface lies between
        // cell columns so the even kernel splits the mass evenly there.
        let dom = square(64);
        let g = dom.grid;
        let u: Vec<f64> = (0..g.len())
            .map(|i| if g.center_of(i)[0] < 0.5 { 1.0 } else { 0.0 })
            .collect();
        let v = spatial_mollify(&g, &dom.mask, &u, 0.1, Extension::Periodic).unwrap();
        let left = g.index([31, 20, 0]);
        let right = g.index([32, 20, 0]);
        assert!((v[left] + v[right] - 1.0).abs() < 1e-12);
        // Monotone transition.
        for i in 20..44 {
            assert!(v[g.index([i, 20, 0])] >= v[g.index([i + 1, 20, 0])] - 1e-15);
        }
    }

    #[test]
    fn temporal_jump_midpoint_and_constant() {
        let series: Vec<Vec<f64>> = (0..40)
            .map(|k| vec![if k < 20 { 1.0 } else { 0.0 }])
            .collect();
        let mid = temporal_mollify_at(&series, 0.1, 0.35, Some(&[1.0]), 1.95).unwrap();
        assert!((mid[0] - 0.5).abs() < 1e-12);
        let flat: Vec<Vec<f64>> = (0..10).map(|_| vec![2.0]).collect();
        let out = temporal_mollify(&flat[..], 0.1, 0.25, Some(&[2.0])).unwrap();
        assert!((out[0][0] - 2.0).abs() < 1e-12);
        assert!(temporal_mollify(&flat, 0.1, 0.15, None).is_err());
    }

    #[test]
    fn space_time_commutation() {
        let dom = square(24);
        let g = dom.grid;
        let series: Vec<Vec<f64>> = (0..12)
            .map(|k| {
                (0..g.len())
                    .map(|i| ((i * 31 + k * 17) % 11) as f64)
                    .collect()
            })
            .collect();
        let (dt, et, ex) = (0.1, 0.25, 0.1);
        let st: Vec<Vec<f64>> = series
            .iter()
            .map(|v| spatial_mollify(&g, &dom.mask, v, ex, Extension::Zero).unwrap())
            .collect();
        let a = temporal_mollify(&st, dt, et, None).unwrap();
        let b: Vec<Vec<f64>> = temporal_mollify(&series, dt, et, None)
            .unwrap()
            .iter()
            .map(|v| spatial_mollify(&g, &dom.mask, v, ex, Extension::Zero).unwrap())
            .collect();
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    fn bump_psi(g: &Grid, radius: f64) -> Vec<f64> {
        (0..g.len())
            .map(|i| {
                let x = g.center_of(i);
                bump(((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)).sqrt() / radius)
            })
            .collect()
    }

    #[test]
    fn support_leak_and_zero_field() {
        let dom = square(64);
        let psi = bump_psi(&dom.grid, 0.2);
        let e0 = eps0(&dom, &psi);
        assert!(e0 > 0.13 && e0 < 0.15, "{e0}");
        let zero = vec![vec![0.0; dom.grid.len()]; 2];
        assert!(matches!(
            localized_double_smooth(&dom, &zero, &psi, e0),
            Err(MollifierError::SupportLeak { .. })
        ));
        let z = localized_double_smooth(&dom, &zero, &psi, 0.05).unwrap();
        assert!(z.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn young_bound_on_l1() {
        let dom = square(48);
        let g = dom.grid;
        let u: Vec<f64> = (0..g.len()).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let v = spatial_mollify(&g, &dom.mask, &u, 0.08, Extension::Zero).unwrap();
        let l1 = |w: &[f64]| w.iter().map(|x| x.abs()).sum::<f64>();
        assert!(l1(&v) <= l1(&u) * (1.0 + 1e-12));
    }

    #[test]
    fn minimizer_independence_holds() {
        let dom = square(32);
        let g = dom.grid;
        let v: Vec<f64> = (0..g.len())
            .map(|i| 2.5 + 0.5 * (std::f64::consts::TAU * g.center_of(i)[0]).sin())
            .collect();
        let s = crate::exponent::make_exponent_field(&dom, vec![v], None).unwrap();
        let centers = [[0.3, 0.3, 0.0], [0.7, 0.5, 0.0], [0.1, 0.9, 0.0]];
        assert_eq!(
            minimizer_independence(&s, &centers, 0.15, &[1.0, 1.5, 10.0, 1e3]),
            0
        );
    }

    #[test]
    fn weighted_l2_and_double_mollification_converge() {
        let dom = square(128);
        let g = dom.grid;
        let f: Vec<f64> = (0..g.len())
            .map(|i| {
                let x = g.center_of(i);
                (3.0 * x[0]).sin() * (2.0 * x[1]).cos()
            })
            .collect();
        let psi = bump_psi(&g, 0.3);
        let exact = weighted_l2(&g, &dom.mask, &f, &psi, None).unwrap();
        let mut last = f64::INFINITY;
        for &eps in &[0.16, 0.08, 0.04] {
            let e = (weighted_l2(&g, &dom.mask, &f, &psi, Some(eps)).unwrap() - exact).abs();
            assert!(e < last);
            last = e;
        }
        let v = bump_psi(&g, 0.35);
        let a = double_mollification_l1(&g, &dom.mask, &v, 0.1).unwrap();
        let b = double_mollification_l1(&g, &dom.mask, &v, 0.05).unwrap();
        assert!(b < a);
    }
}
