//! Symmetric d×d tensors stored by independent components.
//!
//! Order is the diagonal first, then off-diagonals `(0,1)`, `(0,2)`, `(1,2)`.

use std::ops::{Add, Mul, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymTensor {
    pub d: usize,
    pub c: [f64; 6],
}

/// Number of independent components.
pub const fn ncomp(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Component slot of entry `(i, j)`.
pub fn slot(d: usize, i: usize, j: usize) -> usize {
    if i == j {
        return i;
    }
    let (a, b) = if i < j { (i, j) } else { (j, i) };
    match (d, a, b) {
        (2, 0, 1) => 2,
        (3, 0, 1) => 3,
        (3, 0, 2) => 4,
        (3, 1, 2) => 5,
        _ => panic!("invalid tensor entry ({i},{j}) for d={d}"),
    }
}

/// Entry `(i, j)` of component slot `k`.
pub fn entry(d: usize, k: usize) -> (usize, usize) {
    if k < d {
        return (k, k);
    }
    match (d, k) {
        (2, 2) => (0, 1),
        (3, 3) => (0, 1),
        (3, 4) => (0, 2),
        (3, 5) => (1, 2),
        _ => panic!("invalid component slot {k} for d={d}"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymmetryError {
    pub i: usize,
    pub j: usize,
    pub gap: f64,
}

impl std::fmt::Display for AsymmetryError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "tensor not symmetric: entries ({},{}) differ by {:e}",
            self.i, self.j, self.gap
        )
    }
}

impl std::error::Error for AsymmetryError {}

impl SymTensor {
    pub fn zero(d: usize) -> Self {
        SymTensor { d, c: [0.0; 6] }
    }

    pub fn identity(d: usize) -> Self {
        let mut t = Self::zero(d);
        for i in 0..d {
            t.c[i] = 1.0;
        }
        t
    }

    pub fn from_components(d: usize, comps: &[f64]) -> Self {
        let mut t = Self::zero(d);
        t.c[..ncomp(d)].copy_from_slice(&comps[..ncomp(d)]);
        t
    }

    /// Build from a full matrix, rejecting asymmetry beyond 1e-12 relative.
    pub fn from_matrix(d: usize, m: &[[f64; 3]; 3]) -> Result<Self, AsymmetryError> {
        let scale = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j].abs())
            .fold(1.0f64, f64::max);
        let mut t = Self::zero(d);
        for i in 0..d {
            for j in i..d {
                let gap = (m[i][j] - m[j][i]).abs();
                if gap > 1e-12 * scale {
                    return Err(AsymmetryError { i, j, gap });
                }
                t.c[slot(d, i, j)] = 0.5 * (m[i][j] + m[j][i]);
            }
        }
        Ok(t)
    }

    /// Symmetric part of a full matrix.
    pub fn sym_part(d: usize, m: &[[f64; 3]; 3]) -> Self {
        let mut t = Self::zero(d);
        for i in 0..d {
            for j in i..d {
                t.c[slot(d, i, j)] = 0.5 * (m[i][j] + m[j][i]);
            }
        }
        t
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.c[slot(self.d, i, j)]
    }

    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        for i in 0..self.d {
            for j in 0..self.d {
                m[i][j] = self.get(i, j);
            }
        }
        m
    }

    /// Frobenius inner product A:B.
    pub fn dot(&self, other: &SymTensor) -> f64 {
        let d = self.d;
        let mut s = 0.0;
        for k in 0..ncomp(d) {
            let w = if k < d { 1.0 } else { 2.0 };
            s += w * self.c[k] * other.c[k];
        }
        s
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.d).map(|i| self.c[i]).sum()
    }

    pub fn scale(&self, a: f64) -> Self {
        let mut t = *self;
        for v in t.c.iter_mut() {
            *v *= a;
        }
        t
    }

    pub fn comps(&self) -> &[f64] {
        &self.c[..ncomp(self.d)]
    }
}

impl Add for SymTensor {
    type Output = SymTensor;
    fn add(self, o: SymTensor) -> SymTensor {
        let mut t = self;
        for k in 0..6 {
            t.c[k] += o.c[k];
        }
        t
    }
}

impl Sub for SymTensor {
    type Output = SymTensor;
    fn sub(self, o: SymTensor) -> SymTensor {
        let mut t = self;
        for k in 0..6 {
            t.c[k] -= o.c[k];
        }
        t
    }
}

impl Mul<SymTensor> for f64 {
    type Output = SymTensor;
    fn mul(self, t: SymTensor) -> SymTensor {
        t.scale(self)
    }
}
