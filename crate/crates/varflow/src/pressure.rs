//! Free-space Poisson solves with the Newtonian kernel, the localized
//! pressure bundle and the harmonic pressure.

use crate::covering::PartitionOfUnity;
use crate::grid::Grid;
use crate::mac::{Mac, VelocityField};
use crate::quad::{fit_slope, max_abs, pairwise_sum};
use crate::spectral::{fft_nd, neumann_laplacian};
use crate::tensor::{slot, SymTensor};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PressureError {
    #[error("padding too small: {pad} cells for a source spanning {need} cells")]
    PadTooSmall { pad: usize, need: usize },
    #[error("decomposition error: residual is not gradient-like (relative misfit {misfit:.3e} > {tol:.1e})")]
    Misfit { misfit: f64, tol: f64 },
    #[error("dimension error: {0}")]
    Shape(String),
}

/// Value used for the kernel at the singular origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OriginRule {
    /// Mean of Γ over one cell.
    CellAverage,
    /// Lattice-sum corrected weight for the punctured trapezoid rule.
    Corrected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StencilOrder {
    Second,
    Fourth,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeSpaceOptions {
    pub pad: usize,
    pub origin: OriginRule,
    pub order: StencilOrder,
}

impl FreeSpaceOptions {
    pub fn new(pad: usize) -> Self {
        FreeSpaceOptions {
            pad,
            origin: OriginRule::CellAverage,
            order: StencilOrder::Second,
        }
    }
}

/// Mean of ln|y| over the unit cell centered at the origin.
const MEAN_LOG_UNIT_SQUARE: f64 = -1.0611754268825242;
/// Mean of 1/|y| over the unit cube centered at the origin.
const MEAN_INV_UNIT_CUBE: f64 = 2.380077363979557;
const CORRECTED_LOG_2D: f64 = 1.310532925;
const CORRECTED_INV_3D: f64 = 2.837297479480620;

/// Fundamental solution of −Δ: −ln|x|/(2π) in 2D, 1/(4π|x|) in 3D.
pub fn newtonian_kernel(d: usize, r: f64) -> f64 {
    if d == 2 {
        -r.ln() / (2.0 * PI)
    } else {
        1.0 / (4.0 * PI * r)
    }
}

pub fn kernel_origin_value(d: usize, h: f64, rule: OriginRule) -> f64 {
    match (d, rule) {
        (2, OriginRule::CellAverage) => -(h.ln() + MEAN_LOG_UNIT_SQUARE) / (2.0 * PI),
        (2, OriginRule::Corrected) => -(h.ln() - CORRECTED_LOG_2D) / (2.0 * PI),
        (_, OriginRule::CellAverage) => MEAN_INV_UNIT_CUBE / (4.0 * PI * h),
        (_, OriginRule::Corrected) => CORRECTED_INV_3D / (4.0 * PI * h),
    }
}

/// Solution on the grid extended by `pad` cells on every side.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedField {
    pub grid: Grid,
    pub pad: usize,
    pub values: Vec<f64>,
}

impl PaddedField {
    /// Values on the original (unpadded) cells.
    pub fn interior(&self, inner: &Grid) -> Vec<f64> {
        let p = self.pad;
        let zp = if inner.d == 3 { p } else { 0 };
        (0..inner.len())
            .map(|i| {
                let c = inner.coords(i);
                self.values[self.grid.index([c[0] + p, c[1] + p, c[2] + zp])]
            })
            .collect()
    }

    /// Multilinear interpolation at a physical point (clamped to the grid).
    pub fn sample(&self, x: [f64; 3]) -> f64 {
        sample_cells(&self.grid, &self.values, x)
    }

    /// Euclidean norm of the centered-difference gradient at a point.
    pub fn gradient_norm(&self, x: [f64; 3]) -> f64 {
        let h = self.grid.h;
        let mut s = 0.0;
        for a in 0..self.grid.d {
            let mut xp = x;
            let mut xm = x;
            xp[a] += h;
            xm[a] -= h;
            let g = (self.sample(xp) - self.sample(xm)) / (2.0 * h);
            s += g * g;
        }
        s.sqrt()
    }
}

fn sample_cells(g: &Grid, v: &[f64], x: [f64; 3]) -> f64 {
    let mut base = [0usize; 3];
    let mut w = [0.0; 3];
    for a in 0..g.d {
        let f = ((x[a] - g.origin[a]) / g.h - 0.5).clamp(0.0, (g.n[a] - 1) as f64 - 1e-12);
        base[a] = f.floor() as usize;
        w[a] = f - base[a] as f64;
    }
    let corners = if g.d == 3 { 8 } else { 4 };
    let mut s = 0.0;
    for k in 0..corners {
        let mut c = base;
        let mut wt = 1.0;
        for a in 0..g.d {
            if (k >> a) & 1 == 1 {
                c[a] = (c[a] + 1).min(g.n[a] - 1);
                wt *= w[a];
            } else {
                wt *= 1.0 - w[a];
            }
        }
        s += wt * v[g.index(c)];
    }
    s
}

fn padded_grid(grid: &Grid, pad: usize) -> Grid {
    let mut n = grid.n;
    let mut origin = grid.origin;
    for a in 0..grid.d {
        n[a] += 2 * pad;
        origin[a] -= pad as f64 * grid.h;
    }
    Grid::new(grid.d, n, grid.h, origin)
}

/// Number of cells spanned by the nonzero entries along the widest axis.
fn support_span(grid: &Grid, nonzero: impl Fn(usize) -> bool) -> usize {
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for i in 0..grid.len() {
        if nonzero(i) {
            any = true;
            let c = grid.coords(i);
            for a in 0..grid.d {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
    }
    if !any {
        return 0;
    }
    (0..grid.d).map(|a| hi[a] - lo[a] + 1).max().unwrap()
}

/// First (or second) derivative along `axis` with zero values outside the grid.
fn derivative(g: &Grid, v: &[f64], axis: usize, second: bool, order: StencilOrder) -> Vec<f64> {
    let h = g.h;
    let at = |c: [usize; 3], k: isize| g.offset(c, axis, k).map(|nc| v[g.index(nc)]).unwrap_or(0.0);
    (0..g.len())
        .into_par_iter()
        .map(|i| {
            let c = g.coords(i);
            match (order, second) {
                (StencilOrder::Second, false) => (at(c, 1) - at(c, -1)) / (2.0 * h),
                (StencilOrder::Second, true) => (at(c, 1) - 2.0 * v[i] + at(c, -1)) / (h * h),
                (StencilOrder::Fourth, false) => {
                    (at(c, -2) - 8.0 * at(c, -1) + 8.0 * at(c, 1) - at(c, 2)) / (12.0 * h)
                }
                (StencilOrder::Fourth, true) => {
                    (-at(c, -2) + 16.0 * at(c, -1) - 30.0 * v[i] + 16.0 * at(c, 1) - at(c, 2))
                        / (12.0 * h * h)
                }
            }
        })
        .collect()
}

/// Linear convolution h^d Σ_j Γ(x_i − x_j) s_j on the padded grid.
fn newtonian_convolve(g: &Grid, s: &[f64], origin: OriginRule) -> Vec<f64> {
    let d = g.d;
    let mut dims = [1usize; 3];
    for a in 0..d {
        dims[a] = 2 * g.n[a];
    }
    let total = dims[0] * dims[1] * dims[2];
    let idx = |c: [usize; 3]| (c[0] * dims[1] + c[1]) * dims[2] + c[2];
    let mut kernel = vec![Complex64::default(); total];
    let g0 = kernel_origin_value(d, g.h, origin);
    for (k, v) in kernel.iter_mut().enumerate() {
        let c = [
            k / (dims[1] * dims[2]),
            (k / dims[2]) % dims[1],
            k % dims[2],
        ];
        let mut r2 = 0.0;
        for a in 0..d {
            let off = if c[a] >= g.n[a] {
                c[a] as f64 - dims[a] as f64
            } else {
                c[a] as f64
            };
            r2 += off * off;
        }
        let val = if r2 == 0.0 {
            g0
        } else {
            newtonian_kernel(d, r2.sqrt() * g.h)
        };
        *v = Complex64::new(val, 0.0);
    }
    let mut src = vec![Complex64::default(); total];
    for i in 0..g.len() {
        src[idx(g.coords(i))] = Complex64::new(s[i], 0.0);
    }
    fft_nd(&mut kernel, dims, false);
    fft_nd(&mut src, dims, false);
    for (a, b) in src.iter_mut().zip(&kernel) {
        *a *= *b;
    }
    fft_nd(&mut src, dims, true);
    let scale = g.cell_volume() / total as f64;
    (0..g.len())
        .map(|i| src[idx(g.coords(i))].re * scale)
        .collect()
}

fn check_pad(
    grid: &Grid,
    pad: usize,
    nonzero: impl Fn(usize) -> bool,
) -> Result<(), PressureError> {
    let need = support_span(grid, nonzero).max(2);
    if pad < need {
        return Err(PressureError::PadTooSmall { pad, need });
    }
    Ok(())
}

fn embed<T: Copy>(grid: &Grid, pg: &Grid, pad: usize, v: &[T], zero: T) -> Vec<T> {
    let zp = if grid.d == 3 { pad } else { 0 };
    let mut out = vec![zero; pg.len()];
    for i in 0..grid.len() {
        let c = grid.coords(i);
        out[pg.index([c[0] + pad, c[1] + pad, c[2] + zp])] = v[i];
    }
    out
}

/// Decaying solution of −Δu = div div g for a cell-centered tensor field g
/// (zero outside the grid).
pub fn freespace_poisson_divdiv(
    grid: &Grid,
    g: &[SymTensor],
    opts: FreeSpaceOptions,
) -> Result<PaddedField, PressureError> {
    if g.len() != grid.len() {
        return Err(PressureError::Shape(format!(
            "tensor field has {} cells, grid has {}",
            g.len(),
            grid.len()
        )));
    }
    check_pad(grid, opts.pad, |i| g[i].norm_sq() > 0.0)?;
    let d = grid.d;
    let pg = padded_grid(grid, opts.pad);
    let gp = embed(grid, &pg, opts.pad, g, SymTensor::zero(d));
    let mut src = vec![0.0; pg.len()];
    for a in 0..d {
        for b in a..d {
            let comp: Vec<f64> = gp.iter().map(|t| t.c[slot(d, a, b)]).collect();
            let term = if a == b {
                derivative(&pg, &comp, a, true, opts.order)
            } else {
                let da = derivative(&pg, &comp, a, false, opts.order);
                derivative(&pg, &da, b, false, opts.order)
                    .iter()
                    .map(|x| 2.0 * x)
                    .collect()
            };
            for (s, t) in src.iter_mut().zip(&term) {
                *s += t;
            }
        }
    }
    Ok(PaddedField {
        grid: pg,
        pad: opts.pad,
        values: newtonian_convolve(&pg, &src, opts.origin),
    })
}

/// Decaying solution of −Δu = div f for a cell-centered vector field f.
pub fn freespace_poisson_div(
    grid: &Grid,
    f: &[[f64; 3]],
    opts: FreeSpaceOptions,
) -> Result<PaddedField, PressureError> {
    if f.len() != grid.len() {
        return Err(PressureError::Shape(format!(
            "vector field has {} cells, grid has {}",
            f.len(),
            grid.len()
        )));
    }
    check_pad(grid, opts.pad, |i| f[i].iter().any(|&x| x != 0.0))?;
    let d = grid.d;
    let pg = padded_grid(grid, opts.pad);
    let fp = embed(grid, &pg, opts.pad, f, [0.0; 3]);
    let mut src = vec![0.0; pg.len()];
    for a in 0..d {
        let comp: Vec<f64> = fp.iter().map(|v| v[a]).collect();
        for (s, t) in src
            .iter_mut()
            .zip(&derivative(&pg, &comp, a, false, opts.order))
        {
            *s += t;
        }
    }
    Ok(PaddedField {
        grid: pg,
        pad: opts.pad,
        values: newtonian_convolve(&pg, &src, opts.origin),
    })
}

/// Discrete L^p norm (h^d Σ|v|^p)^{1/p}.
pub fn lp_norm(grid: &Grid, v: &[f64], p: f64) -> f64 {
    let t: Vec<f64> = v.iter().map(|x| x.abs().powf(p)).collect();
    (grid.cell_volume() * pairwise_sum(&t)).powf(1.0 / p)
}

/// Fixed, well-spread unit directions.
pub fn ray_directions(d: usize, count: usize) -> Vec<[f64; 3]> {
    (0..count)
        .map(|k| {
            if d == 2 {
                let a = 0.1 + 2.0 * PI * k as f64 / count as f64;
                [a.cos(), a.sin(), 0.0]
            } else {
                let golden = PI * (3.0 - 5f64.sqrt());
                let z = 1.0 - (2.0 * k as f64 + 1.0) / count as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = golden * k as f64;
                [r * phi.cos(), r * phi.sin(), z]
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    pub radii: Vec<f64>,
    pub mean_magnitude: Vec<f64>,
    pub slope: f64,
}

/// Log-log slope of the ray-averaged |u| (or |∇u|) against distance from `center`.
pub fn decay_slope(
    field: &PaddedField,
    center: [f64; 3],
    radii: &[f64],
    rays: usize,
    gradient: bool,
) -> DecayFit {
    let dirs = ray_directions(field.grid.d, rays);
    let mean_magnitude: Vec<f64> = radii
        .iter()
        .map(|&r| {
            let vals: Vec<f64> = dirs
                .iter()
                .map(|e| {
                    let x = [
                        center[0] + r * e[0],
                        center[1] + r * e[1],
                        center[2] + r * e[2],
                    ];
                    if gradient {
                        field.gradient_norm(x)
                    } else {
                        field.sample(x).abs()
                    }
                })
                .collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        })
        .collect();
    let lx: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let ly: Vec<f64> = mean_magnitude.iter().map(|m| m.ln()).collect();
    DecayFit {
        radii: radii.to_vec(),
        mean_magnitude,
        slope: fit_slope(&lx, &ly),
    }
}

/// Exact inverse of the lattice Laplacian on an extended grid, acting on
/// sources of compact support. The periodic inverse on a box of side
/// M ≥ 2N + 2 plus the quadratic correction |x − y|²/(2dM^d) is a kernel K
/// with L_h K = δ at every offset that occurs.
pub struct LatticeSolver {
    pub grid: Grid,
    dims: [usize; 3],
    eig: Vec<f64>,
}

impl LatticeSolver {
    pub fn new(grid: Grid) -> Self {
        let d = grid.d;
        let mut dims = [1usize; 3];
        for a in 0..d {
            dims[a] = 2 * grid.n[a] + 2;
        }
        let h2 = grid.h * grid.h;
        let total = dims[0] * dims[1] * dims[2];
        let eig = (0..total)
            .map(|k| {
                let c = [
                    k / (dims[1] * dims[2]),
                    (k / dims[2]) % dims[1],
                    k % dims[2],
                ];
                (0..d)
                    .map(|a| {
                        let s = (PI * c[a] as f64 / dims[a] as f64).sin();
                        -4.0 * s * s / h2
                    })
                    .sum()
            })
            .collect();
        LatticeSolver { grid, dims, eig }
    }

    /// p with L_h p = s on the whole grid (L_h the 5- or 7-point Laplacian).
    pub fn solve(&self, s: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let d = g.d;
        let dims = self.dims;
        let idx = |c: [usize; 3]| (c[0] * dims[1] + c[1]) * dims[2] + c[2];
        let mut buf = vec![Complex64::default(); dims[0] * dims[1] * dims[2]];
        let mut m0 = 0.0;
        let mut m1 = [0.0; 3];
        let mut m2 = 0.0;
        for i in 0..g.len() {
            let c = g.coords(i);
            buf[idx(c)] = Complex64::new(s[i], 0.0);
            m0 += s[i];
            let mut r2 = 0.0;
            for a in 0..d {
                let x = c[a] as f64;
                m1[a] += x * s[i];
                r2 += x * x;
            }
            m2 += r2 * s[i];
        }
        fft_nd(&mut buf, dims, false);
        buf[0] = Complex64::default();
        for (v, e) in buf.iter_mut().zip(&self.eig).skip(1) {
            *v /= e;
        }
        fft_nd(&mut buf, dims, true);
        let total = buf.len() as f64;
        let h2 = g.h * g.h;
        let vol = total;
        (0..g.len())
            .map(|i| {
                let c = g.coords(i);
                let mut q = m2;
                for a in 0..d {
                    let x = c[a] as f64;
                    q += x * x * m0 - 2.0 * x * m1[a];
                }
                buf[idx(c)].re / total + h2 * q / (2.0 * d as f64 * vol)
            })
            .collect()
    }
}

/// Lattice Laplacian with zero values outside the grid.
pub fn lattice_laplacian(g: &Grid, p: &[f64]) -> Vec<f64> {
    let h2 = g.h * g.h;
    (0..g.len())
        .map(|i| {
            let c = g.coords(i);
            let mut acc = -2.0 * g.d as f64 * p[i];
            for a in 0..g.d {
                for delta in [-1isize, 1] {
                    if let Some(nc) = g.offset(c, a, delta) {
                        acc += p[g.index(nc)];
                    }
                }
            }
            acc / h2
        })
        .collect()
}

/// Pressures of the localized decomposition on the cells of Ω.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureBundle {
    /// Stress part per covering ball.
    pub p1: Vec<Vec<f64>>,
    /// Convective part per covering ball.
    pub p2: Vec<Vec<f64>>,
    /// Forcing part.
    pub p3: Vec<f64>,
    /// Regularization part.
    pub p4: Vec<f64>,
    /// Harmonic part (zero mean), when recovered.
    pub ph: Option<Vec<f64>>,
}

impl PressureBundle {
    /// Σp1ⁱ + Σp2ⁱ + p3 + p4.
    pub fn sum(&self) -> Vec<f64> {
        let mut s = self.p3.clone();
        for (x, y) in s.iter_mut().zip(&self.p4) {
            *x += y;
        }
        for p in self.p1.iter().chain(&self.p2) {
            for (x, y) in s.iter_mut().zip(p) {
                *x += y;
            }
        }
        s
    }

    pub fn sum_p1(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.p3.len()];
        for p in &self.p1 {
            for (x, y) in s.iter_mut().zip(p) {
                *x += y;
            }
        }
        s
    }

    pub fn norms(&self, grid: &Grid, p: f64) -> BundleNorms {
        let sum_norm = |v: &[Vec<f64>]| v.iter().map(|x| lp_norm(grid, x, p)).sum::<f64>();
        BundleNorms {
            p1: sum_norm(&self.p1),
            p2: sum_norm(&self.p2),
            p3: lp_norm(grid, &self.p3, p),
            p4: lp_norm(grid, &self.p4, p),
            ph: self.ph.as_ref().map(|v| lp_norm(grid, v, p)).unwrap_or(0.0),
        }
    }
}

/// L^p norms of the bundle; per-ball parts are summed over balls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BundleNorms {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
    pub ph: f64,
}

/// Precomputed operators for bundle solves on Ω: MAC operators on Ω
/// extended by a margin, the lattice inverse there, and the partition of
/// unity at extended cell centers.
pub struct BundleContext {
    pub grid: Grid,
    pub margin: usize,
    pub ext: Mac,
    pub lattice: LatticeSolver,
    pub pu: PartitionOfUnity,
    zeta_ext: Vec<Vec<f64>>,
}

impl BundleContext {
    pub const MARGIN: usize = 3;

    pub fn new(grid: Grid, pu: PartitionOfUnity) -> Self {
        let margin = Self::MARGIN;
        let eg = padded_grid(&grid, margin);
        let zeta_ext = (0..pu.centers.len())
            .map(|i| {
                let mut z = vec![0.0; eg.len()];
                for (cell, v) in pu.values[i].iter().enumerate() {
                    z[Self::ext_cell(&grid, margin, cell, &eg)] = *v;
                }
                z
            })
            .collect();
        BundleContext {
            grid,
            margin,
            ext: Mac::new(eg),
            lattice: LatticeSolver::new(eg),
            pu,
            zeta_ext,
        }
    }

    fn ext_cell(grid: &Grid, m: usize, cell: usize, eg: &Grid) -> usize {
        let c = grid.coords(cell);
        let zm = if grid.d == 3 { m } else { 0 };
        eg.index([c[0] + m, c[1] + m, c[2] + zm])
    }

    pub fn balls(&self) -> usize {
        self.pu.centers.len()
    }

    fn embed_cells<T: Copy>(&self, v: &[T], zero: T) -> Vec<T> {
        embed(&self.grid, &self.ext.grid, self.margin, v, zero)
    }

    fn restrict_cells(&self, v: &[f64]) -> Vec<f64> {
        (0..self.grid.len())
            .map(|i| v[Self::ext_cell(&self.grid, self.margin, i, &self.ext.grid)])
            .collect()
    }

    fn embed_faces(&self, u: &VelocityField) -> VelocityField {
        let m = self.margin;
        let zm = if self.grid.d == 3 { m } else { 0 };
        let mut out = self.ext.zero_velocity();
        for a in 0..self.grid.d {
            let mut n = self.grid.n;
            n[a] += 1;
            let fg = Grid::new(self.grid.d, n, self.grid.h, [0.0; 3]);
            for f in 0..fg.len() {
                let c = fg.coords(f);
                out.comps[a][self.ext.face_index(a, [c[0] + m, c[1] + m, c[2] + zm])] =
                    u.comps[a][f];
            }
        }
        out
    }

    /// Solve L_h p = −div Dᵀτ on the extended grid, restricted to Ω.
    fn solve_stress(&self, tau_ext: &[SymTensor]) -> Vec<f64> {
        let src: Vec<f64> = self
            .ext
            .divergence(&self.ext.strain_adjoint(tau_ext))
            .iter()
            .map(|x| -x)
            .collect();
        self.restrict_cells(&self.lattice.solve(&src))
    }

    /// Stress-type pressure of a tensor field without localization.
    pub fn unlocalized_stress_pressure(&self, alpha: &[SymTensor]) -> Vec<f64> {
        self.solve_stress(&self.embed_cells(alpha, SymTensor::zero(self.grid.d)))
    }

    fn localized_stress(&self, alpha: &[SymTensor], i: usize) -> Vec<f64> {
        let mut a = self.embed_cells(alpha, SymTensor::zero(self.grid.d));
        for (t, z) in a.iter_mut().zip(&self.zeta_ext[i]) {
            *t = t.scale(*z);
        }
        self.solve_stress(&a)
    }

    fn localized_convection(&self, u_ext: &VelocityField, i: usize) -> Vec<f64> {
        let pu = &self.pu;
        let c = self.ext.convection_weighted(u_ext, &|x| pu.eval(i, x));
        let src: Vec<f64> = self.ext.divergence(&c).iter().map(|x| -x).collect();
        self.restrict_cells(&self.lattice.solve(&src))
    }

    fn forcing(&self, f: &VelocityField) -> Vec<f64> {
        let src = self.ext.divergence(&self.embed_faces(f));
        self.restrict_cells(&self.lattice.solve(&src))
    }
}

/// Localized pressures for stress α (cells), regularization θβ (cells),
/// velocity u (faces, for the convective part) and force f (faces). Their
/// sum P satisfies L_h P = div(f − C(u) − Dᵀ(α + θβ)) away from the walls.
pub fn pressure_bundle(
    ctx: &BundleContext,
    alpha: &[SymTensor],
    theta_beta: &[SymTensor],
    u: &VelocityField,
    f: &VelocityField,
) -> Result<PressureBundle, PressureError> {
    let n = ctx.grid.len();
    if alpha.len() != n || theta_beta.len() != n {
        return Err(PressureError::Shape(
            "tensor fields do not match the grid".into(),
        ));
    }
    if u.comps.len() != ctx.grid.d || f.comps.len() != ctx.grid.d {
        return Err(PressureError::Shape(
            "vector fields do not match the dimension".into(),
        ));
    }
    let u_ext = ctx.embed_faces(u);
    let p1: Vec<Vec<f64>> = (0..ctx.balls())
        .into_par_iter()
        .map(|i| ctx.localized_stress(alpha, i))
        .collect();
    let p2: Vec<Vec<f64>> = (0..ctx.balls())
        .into_par_iter()
        .map(|i| ctx.localized_convection(&u_ext, i))
        .collect();
    let p3 = ctx.forcing(f);
    let p4 = ctx.unlocalized_stress_pressure(theta_beta);
    Ok(PressureBundle {
        p1,
        p2,
        p3,
        p4,
        ph: None,
    })
}

/// Harmonic pressure recovered from a residual by least-squares gradient fit.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicPressure {
    pub ph: Vec<f64>,
    /// ‖R − ∇p_h‖ / ‖R‖.
    pub misfit: f64,
    /// |∫p_h| / (|Ω|·‖p_h‖_∞).
    pub mean_defect: f64,
    /// max interior |Δ_h p_h| / (‖p_h‖_∞ / h²).
    pub harmonic_defect: f64,
}

/// Largest |Δ_h p| over cells at least `layer` cells away from the boundary.
pub fn interior_laplacian_max(grid: &Grid, p: &[f64], layer: usize) -> f64 {
    let lap = neumann_laplacian(grid, p);
    let mut m = 0.0f64;
    for (i, v) in lap.iter().enumerate() {
        let c = grid.coords(i);
        if (0..grid.d).all(|a| c[a] >= layer && c[a] + layer < grid.n[a]) {
            m = m.max(v.abs());
        }
    }
    m
}

/// p_h with ∇p_h the L²-closest gradient to `residual` (zero mean).
pub fn harmonic_pressure(
    mac: &Mac,
    residual: &VelocityField,
    tol: f64,
    layer: usize,
) -> Result<HarmonicPressure, PressureError> {
    if residual.comps.len() != mac.d {
        return Err(PressureError::Shape(
            "residual does not match the dimension".into(),
        ));
    }
    let g = mac.grid;
    let ph = mac.poisson_solve(&mac.divergence(residual));
    let fit = mac.gradient(&ph);
    let rn = mac.inner(residual, residual).sqrt();
    let diff = residual.sub(&fit);
    let misfit = if rn > 0.0 {
        mac.inner(&diff, &diff).sqrt() / rn
    } else {
        0.0
    };
    if misfit > tol {
        return Err(PressureError::Misfit { misfit, tol });
    }
    let sup = max_abs(&ph);
    let (mean_defect, harmonic_defect) = if sup > 0.0 {
        let mean = g.cell_volume() * pairwise_sum(&ph);
        let vol = g.cell_volume() * g.len() as f64;
        (
            mean.abs() / (vol * sup),
            interior_laplacian_max(&g, &ph, layer) / (sup / (g.h * g.h)),
        )
    } else {
        (0.0, 0.0)
    };
    Ok(HarmonicPressure {
        ph,
        misfit,
        mean_defect,
        harmonic_defect,
    })
}
