//! Staggered (MAC) discretization on a box: pressure at cell centers,
//! velocity component a on the faces normal to axis a.
//!
//! Normal velocity on the box walls is fixed at zero. The symmetric
//! gradient lives at cell centers: diagonal entries are compact
//! differences, off-diagonal entries are centered differences of
//! face-to-center averages with an odd reflection across the wall
//! (tangential no-slip).

use crate::grid::Grid;
use crate::spectral::NeumannPoisson;
use crate::tensor::{slot, SymTensor};
use rayon::prelude::*;

/// Face-centered velocity, one array per component.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub comps: Vec<Vec<f64>>,
}

/// Symmetric tensors at cell centers.
pub type SymTensorField = Vec<SymTensor>;

impl VelocityField {
    pub fn axpy(&mut self, a: f64, x: &VelocityField) {
        for (u, v) in self.comps.iter_mut().zip(&x.comps) {
            for (p, q) in u.iter_mut().zip(v) {
                *p += a * q;
            }
        }
    }

    pub fn scaled(&self, a: f64) -> VelocityField {
        VelocityField {
            comps: self
                .comps
                .iter()
                .map(|c| c.iter().map(|x| a * x).collect())
                .collect(),
        }
    }

    pub fn sub(&self, o: &VelocityField) -> VelocityField {
        let mut r = self.clone();
        r.axpy(-1.0, o);
        r
    }

    pub fn add(&self, o: &VelocityField) -> VelocityField {
        let mut r = self.clone();
        r.axpy(1.0, o);
        r
    }

    pub fn max_abs(&self) -> f64 {
        self.comps
            .iter()
            .flatten()
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

#[derive(Debug, Clone, Copy)]
struct Term {
    slot: u8,
    comp: u8,
    face: u32,
    coef: f64,
}

#[derive(Debug, Clone, Copy)]
struct AdjTerm {
    cell: u32,
    slot: u8,
    coef: f64,
}

pub struct Mac {
    pub grid: Grid,
    pub d: usize,
    pub faces: [Grid; 3],
    /// Strain stencil grouped by cell.
    terms: Vec<Term>,
    offsets: Vec<usize>,
    /// Transposed stencil grouped by (comp, face), with Frobenius weights folded in.
    adj: Vec<Vec<AdjTerm>>,
    adj_offsets: Vec<Vec<usize>>,
    poisson: NeumannPoisson,
}

impl Mac {
    pub fn new(grid: Grid) -> Self {
        let d = grid.d;
        let mut faces = [grid; 3];
        for (a, f) in faces.iter_mut().enumerate().take(d) {
            let mut n = grid.n;
            n[a] += 1;
            let mut origin = grid.origin;
            origin[a] -= 0.5 * grid.h;
            *f = Grid::new(d, n, grid.h, origin);
        }
        let mut mac = Mac {
            grid,
            d,
            faces,
            terms: Vec::new(),
            offsets: Vec::new(),
            adj: Vec::new(),
            adj_offsets: Vec::new(),
            poisson: NeumannPoisson::new(&grid),
        };
        mac.build_stencil();
        mac
    }

    /// Whether face `c` of component `a` is a wall face (value pinned to zero).
    #[inline]
    pub fn is_wall_face(&self, a: usize, c: [usize; 3]) -> bool {
        c[a] == 0 || c[a] == self.grid.n[a]
    }

    pub fn face_index(&self, a: usize, c: [usize; 3]) -> usize {
        self.faces[a].index(c)
    }

    /// Location of face `c` of component `a`.
    pub fn face_point(&self, a: usize, c: [usize; 3]) -> [f64; 3] {
        self.faces[a].center(c)
    }

    pub fn zero_velocity(&self) -> VelocityField {
        VelocityField {
            comps: (0..self.d)
                .map(|a| vec![0.0; self.faces[a].len()])
                .collect(),
        }
    }

    fn build_stencil(&mut self) {
        let g = self.grid;
        let d = self.d;
        let h = g.h;
        let mut terms = Vec::new();
        let mut offsets = vec![0];
        for i in 0..g.len() {
            let c = g.coords(i);
            let push =
                |slot: usize, comp: usize, fc: [usize; 3], coef: f64, terms: &mut Vec<Term>| {
                    if fc[comp] == 0 || fc[comp] == g.n[comp] {
                        return;
                    }
                    terms.push(Term {
                        slot: slot as u8,
                        comp: comp as u8,
                        face: self.faces[comp].index(fc) as u32,
                        coef,
                    });
                };
            for a in 0..d {
                let mut up = c;
                up[a] += 1;
                push(a, a, up, 1.0 / h, &mut terms);
                push(a, a, c, -1.0 / h, &mut terms);
            }
            for a in 0..d {
                for b in 0..d {
                    if a == b {
                        continue;
                    }
                    // ½ ∂_b ū_a with ∂_b a centered 2h difference.
                    let k = slot(d, a, b);
                    let w = 1.0 / (4.0 * h);
                    let avg = |cell: [usize; 3], coef: f64, terms: &mut Vec<Term>| {
                        let mut up = cell;
                        up[a] += 1;
                        push(k, a, cell, 0.5 * coef, terms);
                        push(k, a, up, 0.5 * coef, terms);
                    };
                    match g.offset(c, b, 1) {
                        Some(nc) => avg(nc, w, &mut terms),
                        None => avg(c, -w, &mut terms),
                    }
                    match g.offset(c, b, -1) {
                        Some(nc) => avg(nc, -w, &mut terms),
                        None => avg(c, w, &mut terms),
                    }
                }
            }
            offsets.push(terms.len());
        }
        // Transpose.
        let mut adj: Vec<Vec<Vec<AdjTerm>>> = (0..d)
            .map(|a| vec![Vec::new(); self.faces[a].len()])
            .collect();
        for i in 0..g.len() {
            for t in &terms[offsets[i]..offsets[i + 1]] {
                let wt = if (t.slot as usize) < d { 1.0 } else { 2.0 };
                adj[t.comp as usize][t.face as usize].push(AdjTerm {
                    cell: i as u32,
                    slot: t.slot,
                    coef: wt * t.coef,
                });
            }
        }
        let mut flat = Vec::new();
        let mut flat_off = Vec::new();
        for per_face in adj {
            let mut v = Vec::new();
            let mut off = vec![0];
            for list in per_face {
                v.extend(list);
                off.push(v.len());
            }
            flat.push(v);
            flat_off.push(off);
        }
        self.terms = terms;
        self.offsets = offsets;
        self.adj = flat;
        self.adj_offsets = flat_off;
    }

    /// Discrete symmetric gradient at cell centers.
    pub fn strain(&self, u: &VelocityField) -> SymTensorField {
        let d = self.d;
        (0..self.grid.len())
            .into_par_iter()
            .map(|i| {
                let mut t = SymTensor::zero(d);
                for term in &self.terms[self.offsets[i]..self.offsets[i + 1]] {
                    t.c[term.slot as usize] +=
                        term.coef * u.comps[term.comp as usize][term.face as usize];
                }
                t
            })
            .collect()
    }

    /// Exact adjoint of [`Mac::strain`] for the cell Frobenius and face inner products.
    pub fn strain_adjoint(&self, tau: &[SymTensor]) -> VelocityField {
        let comps = (0..self.d)
            .map(|a| {
                let off = &self.adj_offsets[a];
                let list = &self.adj[a];
                (0..self.faces[a].len())
                    .into_par_iter()
                    .map(|f| {
                        let mut s = 0.0;
                        for t in &list[off[f]..off[f + 1]] {
                            s += t.coef * tau[t.cell as usize].c[t.slot as usize];
                        }
                        s
                    })
                    .collect()
            })
            .collect();
        VelocityField { comps }
    }

    pub fn divergence(&self, u: &VelocityField) -> Vec<f64> {
        let g = self.grid;
        let h = g.h;
        (0..g.len())
            .into_par_iter()
            .map(|i| {
                let c = g.coords(i);
                let mut s = 0.0;
                for a in 0..self.d {
                    let mut up = c;
                    up[a] += 1;
                    s += u.comps[a][self.faces[a].index(up)] - u.comps[a][self.faces[a].index(c)];
                }
                s / h
            })
            .collect()
    }

    /// Gradient of a cell field on interior faces; wall faces are zero.
    pub fn gradient(&self, p: &[f64]) -> VelocityField {
        let g = self.grid;
        let h = g.h;
        let comps = (0..self.d)
            .map(|a| {
                let fg = self.faces[a];
                (0..fg.len())
                    .into_par_iter()
                    .map(|f| {
                        let c = fg.coords(f);
                        if self.is_wall_face(a, c) {
                            return 0.0;
                        }
                        let mut lo = c;
                        lo[a] -= 1;
                        (p[g.index(c)] - p[g.index(lo)]) / h
                    })
                    .collect()
            })
            .collect();
        VelocityField { comps }
    }

    /// Mean-zero φ with div grad φ = rhs − mean(rhs).
    pub fn poisson_solve(&self, rhs: &[f64]) -> Vec<f64> {
        self.poisson.solve(rhs)
    }

    pub fn poisson(&self) -> &NeumannPoisson {
        &self.poisson
    }

    /// Orthogonal projection onto discretely divergence-free fields.
    /// Returns the projected field and the potential that was removed.
    pub fn project(&self, v: &VelocityField) -> (VelocityField, Vec<f64>) {
        let phi = self.poisson.solve(&self.divergence(v));
        let mut out = v.sub(&self.gradient(&phi));
        self.zero_walls(&mut out);
        (out, phi)
    }

    pub fn zero_walls(&self, u: &mut VelocityField) {
        for a in 0..self.d {
            let fg = self.faces[a];
            for (f, v) in u.comps[a].iter_mut().enumerate() {
                if self.is_wall_face(a, fg.coords(f)) {
                    *v = 0.0;
                }
            }
        }
    }

    /// h^d Σ u·v over faces.
    pub fn inner(&self, u: &VelocityField, v: &VelocityField) -> f64 {
        let terms: Vec<f64> = u
            .comps
            .iter()
            .zip(&v.comps)
            .map(|(a, b)| {
                crate::quad::pairwise_sum(&a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>())
            })
            .collect();
        self.grid.cell_volume() * crate::quad::pairwise_sum(&terms)
    }

    /// h^d Σ ψ u·v over faces with a face weight per component.
    pub fn weighted_inner(&self, w: &VelocityField, u: &VelocityField, v: &VelocityField) -> f64 {
        let terms: Vec<f64> = (0..self.d)
            .map(|a| {
                let t: Vec<f64> = (0..u.comps[a].len())
                    .map(|f| w.comps[a][f] * u.comps[a][f] * v.comps[a][f])
                    .collect();
                crate::quad::pairwise_sum(&t)
            })
            .collect();
        self.grid.cell_volume() * crate::quad::pairwise_sum(&terms)
    }

    /// h^d Σ τ:σ over cells.
    pub fn tensor_inner(&self, tau: &[SymTensor], sigma: &[SymTensor]) -> f64 {
        let t: Vec<f64> = tau.iter().zip(sigma).map(|(a, b)| a.dot(b)).collect();
        self.grid.cell_volume() * crate::quad::pairwise_sum(&t)
    }

    pub fn cell_inner(&self, p: &[f64], q: &[f64]) -> f64 {
        let t: Vec<f64> = p.iter().zip(q).map(|(a, b)| a * b).collect();
        self.grid.cell_volume() * crate::quad::pairwise_sum(&t)
    }

    /// Sample a scalar function at every face of every component.
    pub fn sample_faces(&self, f: impl Fn(usize, [f64; 3]) -> f64 + Sync) -> VelocityField {
        let comps = (0..self.d)
            .map(|a| {
                let fg = self.faces[a];
                (0..fg.len())
                    .into_par_iter()
                    .map(|i| f(a, fg.center_of(i)))
                    .collect()
            })
            .collect();
        VelocityField { comps }
    }

    /// Velocity with prescribed components at faces; wall faces are zeroed.
    pub fn velocity_from_fn(&self, f: impl Fn(usize, [f64; 3]) -> f64 + Sync) -> VelocityField {
        let mut u = self.sample_faces(f);
        self.zero_walls(&mut u);
        u
    }

    /// Exactly divergence-free 2-D velocity from a stream function sampled at
    /// cell corners: u_x = ∂ψ/∂y, u_y = −∂ψ/∂x. ψ should vanish on the walls.
    pub fn velocity_from_stream(&self, psi: impl Fn([f64; 3]) -> f64 + Sync) -> VelocityField {
        assert_eq!(self.d, 2, "stream functions are two-dimensional");
        let g = self.grid;
        let h = g.h;
        let node =
            |i: usize, j: usize| psi([g.origin[0] + i as f64 * h, g.origin[1] + j as f64 * h, 0.0]);
        let mut u = self.zero_velocity();
        for f in 0..self.faces[0].len() {
            let c = self.faces[0].coords(f);
            u.comps[0][f] = (node(c[0], c[1] + 1) - node(c[0], c[1])) / h;
        }
        for f in 0..self.faces[1].len() {
            let c = self.faces[1].coords(f);
            u.comps[1][f] = -(node(c[0] + 1, c[1]) - node(c[0], c[1])) / h;
        }
        self.zero_walls(&mut u);
        u
    }

    /// Interpolate face velocity to cell centers.
    pub fn to_cells(&self, u: &VelocityField) -> Vec<[f64; 3]> {
        let g = self.grid;
        (0..g.len())
            .map(|i| {
                let c = g.coords(i);
                let mut v = [0.0; 3];
                for a in 0..self.d {
                    let mut up = c;
                    up[a] += 1;
                    v[a] = 0.5
                        * (u.comps[a][self.faces[a].index(c)]
                            + u.comps[a][self.faces[a].index(up)]);
                }
                v
            })
            .collect()
    }

    /// Cell-centered gradient matrix of the velocity (compact diagonal,
    /// centered off-diagonal, same wall rule as the strain).
    pub fn velocity_gradient(&self, u: &VelocityField) -> Vec<[[f64; 3]; 3]> {
        let g = self.grid;
        let h = g.h;
        let ubar = self.to_cells(u);
        (0..g.len())
            .map(|i| {
                let c = g.coords(i);
                let mut m = [[0.0; 3]; 3];
                for a in 0..self.d {
                    let mut up = c;
                    up[a] += 1;
                    m[a][a] = (u.comps[a][self.faces[a].index(up)]
                        - u.comps[a][self.faces[a].index(c)])
                        / h;
                    for b in 0..self.d {
                        if a == b {
                            continue;
                        }
                        let top = g
                            .offset(c, b, 1)
                            .map(|nc| ubar[g.index(nc)][a])
                            .unwrap_or(-ubar[i][a]);
                        let bot = g
                            .offset(c, b, -1)
                            .map(|nc| ubar[g.index(nc)][a])
                            .unwrap_or(-ubar[i][a]);
                        m[a][b] = (top - bot) / (2.0 * h);
                    }
                }
                m
            })
            .collect()
    }

    /// Location of the edge between face `c` and face `c + e_b` of component `a`.
    fn edge_point(&self, a: usize, b: usize, c: [usize; 3]) -> [f64; 3] {
        let g = self.grid;
        let mut x = [0.0; 3];
        for k in 0..self.d {
            x[k] = g.origin[k] + (c[k] as f64 + 0.5) * g.h;
        }
        x[a] = g.origin[a] + c[a] as f64 * g.h;
        x[b] = g.origin[b] + (c[b] as f64 + 1.0) * g.h;
        x
    }

    /// Convective flux F_ab on the edge above face `c` of component `a` along `b`
    /// (index `cb` may be −1 for the lower wall).
    fn edge_flux(&self, u: &VelocityField, a: usize, b: usize, c: [usize; 3], cb: isize) -> f64 {
        if cb < 0 || cb as usize + 1 >= self.grid.n[b] {
            return 0.0;
        }
        let mut lo = c;
        lo[b] = cb as usize;
        let mut hi = lo;
        hi[b] += 1;
        let mut ub1 = hi;
        ub1[a] -= 1;
        let ub = 0.5 * (u.comps[b][self.faces[b].index(hi)] + u.comps[b][self.faces[b].index(ub1)]);
        let ua = 0.5 * (u.comps[a][self.faces[a].index(lo)] + u.comps[a][self.faces[a].index(hi)]);
        ub * ua
    }

    /// Energy-conserving divergence-form convection div(u ⊗ u) on faces,
    /// with the flux tensor weighted by `zeta` at its sample points
    /// (cell centers and edges). `zeta ≡ 1` gives the plain operator.
    pub fn convection_weighted(
        &self,
        u: &VelocityField,
        zeta: &(dyn Fn([f64; 3]) -> f64 + Sync),
    ) -> VelocityField {
        let g = self.grid;
        let h = g.h;
        let d = self.d;
        let cell_flux = |a: usize, c: [usize; 3]| {
            let mut up = c;
            up[a] += 1;
            let v =
                0.5 * (u.comps[a][self.faces[a].index(c)] + u.comps[a][self.faces[a].index(up)]);
            v * v * zeta(g.center(c))
        };
        let comps = (0..d)
            .map(|a| {
                let fg = self.faces[a];
                (0..fg.len())
                    .into_par_iter()
                    .map(|f| {
                        let c = fg.coords(f);
                        if self.is_wall_face(a, c) {
                            return 0.0;
                        }
                        let mut lo = c;
                        lo[a] -= 1;
                        let mut s = cell_flux(a, c) - cell_flux(a, lo);
                        for b in 0..d {
                            if b == a {
                                continue;
                            }
                            let cb = c[b] as isize;
                            let mut top = self.edge_flux(u, a, b, c, cb);
                            let mut bot = self.edge_flux(u, a, b, c, cb - 1);
                            if top != 0.0 {
                                let mut e = c;
                                e[b] = cb as usize;
                                top *= zeta(self.edge_point(a, b, e));
                            }
                            if bot != 0.0 {
                                let mut e = c;
                                e[b] = (cb - 1) as usize;
                                bot *= zeta(self.edge_point(a, b, e));
                            }
                            s += top - bot;
                        }
                        s / h
                    })
                    .collect()
            })
            .collect();
        VelocityField { comps }
    }

    pub fn convection(&self, u: &VelocityField) -> VelocityField {
        self.convection_weighted(u, &|_| 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ncomp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_velocity(mac: &Mac, seed: u64) -> VelocityField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = mac.zero_velocity();
        for c in u.comps.iter_mut() {
            for v in c.iter_mut() {
                *v = rng.gen::<f64>() - 0.5;
            }
        }
        mac.zero_walls(&mut u);
        u
    }

    #[test]
    fn strain_adjoint_is_exact() {
        for (d, n) in [(2usize, [7, 5, 1]), (3, [4, 3, 5])] {
            let mac = Mac::new(Grid::new(d, n, 0.25, [0.0; 3]));
            let u = random_velocity(&mac, 1);
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let tau: Vec<SymTensor> = (0..mac.grid.len())
                .map(|_| {
                    let mut t = SymTensor::zero(d);
                    for k in 0..ncomp(d) {
                        t.c[k] = rng.gen::<f64>() - 0.5;
                    }
                    t
                })
                .collect();
            let lhs = mac.tensor_inner(&mac.strain(&u), &tau);
            let rhs = mac.inner(&u, &mac.strain_adjoint(&tau));
            assert!(
                (lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0),
                "{lhs} {rhs}"
            );
        }
    }

    #[test]
    fn gradient_is_minus_divergence_adjoint() {
        let mac = Mac::new(Grid::new(2, [6, 9, 1], 0.1, [0.0; 3]));
        let u = random_velocity(&mac, 3);
        let p: Vec<f64> = (0..mac.grid.len())
            .map(|i| (i as f64 * 0.37).sin())
            .collect();
        let lhs = mac.inner(&u, &mac.gradient(&p));
        let rhs = -mac.cell_inner(&p, &mac.divergence(&u));
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn projection_removes_divergence_and_is_idempotent() {
        for (d, n) in [(2usize, [16, 12, 1]), (3, [6, 5, 4])] {
            let mac = Mac::new(Grid::new(d, n, 1.0 / 16.0, [0.0; 3]));
            let u = random_velocity(&mac, 5);
            let (p, _) = mac.project(&u);
            let div = mac.divergence(&p);
            assert!(
                div.iter().all(|x| x.abs() < 1e-10),
                "{}",
                div.iter().fold(0.0f64, |m, x| m.max(x.abs()))
            );
            let (pp, _) = mac.project(&p);
            assert!(pp.sub(&p).max_abs() < 1e-12);
        }
    }

    #[test]
    fn stream_velocity_is_divergence_free() {
        let mac = Mac::new(Grid::new(2, [16, 16, 1], 1.0 / 16.0, [0.0; 3]));
        let u = mac.velocity_from_stream(|x| (PI * x[0]).sin().powi(2) * (PI * x[1]).sin().powi(2));
        assert!(mac.divergence(&u).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn convection_conserves_energy_on_solenoidal_fields() {
        let mac = Mac::new(Grid::new(2, [16, 16, 1], 1.0 / 16.0, [0.0; 3]));
        let u = mac.project(&random_velocity(&mac, 7)).0;
        let c = mac.convection(&u);
        let e = mac.inner(&u, &u);
        assert!(
            mac.inner(&c, &u).abs() < 1e-12 * e.max(1.0),
            "{}",
            mac.inner(&c, &u)
        );
        let mac3 = Mac::new(Grid::new(3, [6, 6, 6], 1.0 / 6.0, [0.0; 3]));
        let u = mac3.project(&random_velocity(&mac3, 8)).0;
        assert!(mac3.inner(&mac3.convection(&u), &u).abs() < 1e-12);
    }

    #[test]
    fn strain_of_linear_shear() {
        // u_x = y has D_xy = 1/2 in the interior.
        let mac = Mac::new(Grid::new(2, [8, 8, 1], 0.125, [0.0; 3]));
        let u = mac.velocity_from_fn(|a, x| if a == 0 { x[1] } else { 0.0 });
        let du = mac.strain(&u);
        let i = mac.grid.index([4, 4, 0]);
        assert!((du[i].get(0, 1) - 0.5).abs() < 1e-12);
        assert_eq!(du[i].get(0, 0), 0.0);
    }

    #[test]
    fn localized_convection_sums_to_the_whole() {
        let mac = Mac::new(Grid::new(2, [12, 12, 1], 1.0 / 12.0, [0.0; 3]));
        let u = mac.project(&random_velocity(&mac, 9)).0;
        let w1 = |x: [f64; 3]| 0.5 + 0.5 * (3.0 * x[0]).sin() * x[1];
        let w2 = |x: [f64; 3]| 1.0 - w1(x);
        let c = mac.convection(&u);
        let s = mac
            .convection_weighted(&u, &w1)
            .add(&mac.convection_weighted(&u, &w2));
        assert!(c.sub(&s).max_abs() < 1e-12);
    }
}
