//! FFT-based building blocks: n-dimensional complex FFTs, cosine transforms
//! and the Neumann Poisson solver for the cell-centered Laplacian.

use crate::grid::Grid;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Apply a 1-D transform along `axis` of a row-major array with shape `dims`.
fn along_axis<T: Copy + Default>(
    data: &mut [T],
    dims: [usize; 3],
    axis: usize,
    mut f: impl FnMut(&mut [T]),
) {
    let n = dims[axis];
    if n <= 1 {
        return;
    }
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let mut line = vec![T::default(); n];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            for k in 0..n {
                line[k] = data[base + k * inner];
            }
            f(&mut line);
            for k in 0..n {
                data[base + k * inner] = line[k];
            }
        }
    }
}

/// Unnormalized n-dimensional FFT in place.
pub fn fft_nd(data: &mut [Complex64], dims: [usize; 3], inverse: bool) {
    let mut planner = FftPlanner::new();
    for axis in 0..3 {
        if dims[axis] <= 1 {
            continue;
        }
        let plan = if inverse {
            planner.plan_fft_inverse(dims[axis])
        } else {
            planner.plan_fft_forward(dims[axis])
        };
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        along_axis(data, dims, axis, |line| {
            plan.process_with_scratch(line, &mut scratch)
        });
    }
}

/// Circular convolution of two real arrays of shape `dims`.
pub fn circular_convolve(a: &[f64], b: &[f64], dims: [usize; 3]) -> Vec<f64> {
    let to_c = |v: &[f64]| {
        v.iter()
            .map(|&x| Complex64::new(x, 0.0))
            .collect::<Vec<_>>()
    };
    let mut fa = to_c(a);
    let mut fb = to_c(b);
    fft_nd(&mut fa, dims, false);
    fft_nd(&mut fb, dims, false);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= *y;
    }
    fft_nd(&mut fa, dims, true);
    let norm = 1.0 / (dims[0] * dims[1] * dims[2]) as f64;
    fa.iter().map(|z| z.re * norm).collect()
}

/// DCT-II and its inverse on lines of one length, through a complex FFT of twice the length.
struct Cosine {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    twiddle: Vec<Complex64>,
}

impl Cosine {
    fn new(planner: &mut FftPlanner<f64>, n: usize) -> Self {
        let twiddle = (0..n)
            .map(|k| Complex64::from_polar(1.0, -std::f64::consts::PI * k as f64 / (2 * n) as f64))
            .collect();
        Cosine {
            n,
            fwd: planner.plan_fft_forward(2 * n),
            inv: planner.plan_fft_inverse(2 * n),
            twiddle,
        }
    }

    /// X_k = Σ_j x_j cos(πk(j + ½)/n)
    fn forward(&self, x: &mut [f64], buf: &mut [Complex64]) {
        let n = self.n;
        for j in 0..n {
            buf[j] = Complex64::new(x[j], 0.0);
            buf[2 * n - 1 - j] = Complex64::new(x[j], 0.0);
        }
        self.fwd.process(buf);
        for k in 0..n {
            x[k] = 0.5 * (self.twiddle[k] * buf[k]).re;
        }
    }

    /// Inverse of [`Cosine::forward`].
    fn inverse(&self, x: &mut [f64], buf: &mut [Complex64]) {
        let n = self.n;
        for k in 0..n {
            let w = if k == 0 { 1.0 } else { 2.0 };
            buf[k] = self.twiddle[k].conj() * (w * x[k]);
        }
        for v in buf[n..].iter_mut() {
            *v = Complex64::default();
        }
        self.inv.process(buf);
        for j in 0..n {
            x[j] = buf[j].re / n as f64;
        }
    }
}

/// Solver for the cell-centered Laplacian with homogeneous Neumann
/// conditions (the composition of the MAC divergence and gradient).
pub struct NeumannPoisson {
    dims: [usize; 3],
    d: usize,
    lines: Vec<Cosine>,
    eig: Vec<f64>,
}

impl NeumannPoisson {
    pub fn new(grid: &Grid) -> Self {
        let mut planner = FftPlanner::new();
        let dims = grid.n;
        let lines: Vec<Cosine> = (0..3).map(|a| Cosine::new(&mut planner, dims[a])).collect();
        let h2 = grid.h * grid.h;
        let axis_eig: Vec<Vec<f64>> = (0..3)
            .map(|a| {
                (0..dims[a])
                    .map(|k| {
                        let s = (std::f64::consts::PI * k as f64 / (2 * dims[a]) as f64).sin();
                        -4.0 / h2 * s * s
                    })
                    .collect()
            })
            .collect();
        let mut eig = vec![0.0; grid.len()];
        for (i, e) in eig.iter_mut().enumerate() {
            let c = grid.coords(i);
            *e = (0..grid.d).map(|a| axis_eig[a][c[a]]).sum();
        }
        NeumannPoisson {
            dims,
            d: grid.d,
            lines,
            eig,
        }
    }

    fn transform(&self, data: &mut [f64], inverse: bool) {
        for axis in 0..self.d {
            let t = &self.lines[axis];
            let mut buf = vec![Complex64::default(); 2 * t.n];
            along_axis(data, self.dims, axis, |line| {
                if inverse {
                    t.inverse(line, &mut buf)
                } else {
                    t.forward(line, &mut buf)
                }
            });
        }
    }

    /// Mean-zero p with L p = rhs − mean(rhs).
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut v = rhs.to_vec();
        self.transform(&mut v, false);
        v[0] = 0.0;
        for (x, e) in v.iter_mut().zip(&self.eig).skip(1) {
            *x /= e;
        }
        self.transform(&mut v, true);
        v
    }

    /// Apply L^{-1} shifted: (L − σ)^{-1} for σ > 0 (no compatibility condition).
    pub fn solve_shifted(&self, rhs: &[f64], sigma: f64) -> Vec<f64> {
        let mut v = rhs.to_vec();
        self.transform(&mut v, false);
        for (x, e) in v.iter_mut().zip(&self.eig) {
            *x /= e - sigma;
        }
        self.transform(&mut v, true);
        v
    }
}

/// Cell-centered Neumann Laplacian, used to check solver output.
pub fn neumann_laplacian(grid: &Grid, p: &[f64]) -> Vec<f64> {
    let h2 = grid.h * grid.h;
    (0..grid.len())
        .map(|i| {
            let c = grid.coords(i);
            let mut acc = 0.0;
            for a in 0..grid.d {
                for delta in [-1isize, 1] {
                    if let Some(nc) = grid.offset(c, a, delta) {
                        acc += p[grid.index(nc)] - p[i];
                    }
                }
            }
            acc / h2
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_round_trip() {
        let mut planner = FftPlanner::new();
        for n in [1usize, 2, 5, 16] {
            let t = Cosine::new(&mut planner, n);
            let x: Vec<f64> = (0..n).map(|j| (j as f64 * 0.7).sin() + 0.3).collect();
            let mut y = x.clone();
            let mut buf = vec![Complex64::default(); 2 * n];
            t.forward(&mut y, &mut buf);
            for k in 0..n {
                let direct: f64 = (0..n)
                    .map(|j| {
                        x[j] * (std::f64::consts::PI * k as f64 * (j as f64 + 0.5) / n as f64).cos()
                    })
                    .sum();
                assert!((direct - y[k]).abs() < 1e-12);
            }
            t.inverse(&mut y, &mut buf);
            for j in 0..n {
                assert!((x[j] - y[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn neumann_solve_inverts_the_laplacian() {
        for d in [2usize, 3] {
            let n = if d == 2 { [12, 12, 1] } else { [6, 6, 6] };
            let grid = Grid::new(d, n, 0.1, [0.0; 3]);
            let rhs: Vec<f64> = (0..grid.len())
                .map(|i| ((i * 7919) % 13) as f64 - 6.0)
                .collect();
            let mean = rhs.iter().sum::<f64>() / rhs.len() as f64;
            let solver = NeumannPoisson::new(&grid);
            let p = solver.solve(&rhs);
            let lp = neumann_laplacian(&grid, &p);
            for (a, b) in lp.iter().zip(&rhs) {
                assert!((a - (b - mean)).abs() < 1e-9, "{a} vs {}", b - mean);
            }
            assert!(p.iter().sum::<f64>().abs() < 1e-10);
        }
    }

    #[test]
    fn convolution_with_delta_is_identity() {
        let dims = [4, 3, 1];
        let a: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let mut delta = vec![0.0; 12];
        delta[0] = 1.0;
        let c = circular_convolve(&a, &delta, dims);
        for (x, y) in a.iter().zip(&c) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
