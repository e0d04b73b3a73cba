//! Uniform box grids, the discretized domain and its time slabs.
//!
//! Cells are stored row-major with axis 0 slowest. Two-dimensional grids
//! carry a unit third axis so that index arithmetic is shared.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate domain: {0}")]
    Degenerate(String),
}

/// Cell-centered uniform grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub d: usize,
    pub n: [usize; 3],
    pub h: f64,
    pub origin: [f64; 3],
}

impl Grid {
    pub fn new(d: usize, n: [usize; 3], h: f64, origin: [f64; 3]) -> Self {
        let mut n = n;
        for a in d..3 {
            n[a] = 1;
        }
        Grid { d, n, h, origin }
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, c: [usize; 3]) -> usize {
        (c[0] * self.n[1] + c[1]) * self.n[2] + c[2]
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.n[2];
        let rest = idx / self.n[2];
        [rest / self.n[1], rest % self.n[1], k]
    }

    /// Neighbor index along `axis`, or `None` past the grid edge.
    #[inline]
    pub fn offset(&self, c: [usize; 3], axis: usize, delta: isize) -> Option<[usize; 3]> {
        let v = c[axis] as isize + delta;
        if v < 0 || v >= self.n[axis] as isize {
            return None;
        }
        let mut out = c;
        out[axis] = v as usize;
        Some(out)
    }

    pub fn center(&self, c: [usize; 3]) -> [f64; 3] {
        let mut x = [0.0; 3];
        for a in 0..self.d {
            x[a] = self.origin[a] + (c[a] as f64 + 0.5) * self.h;
        }
        x
    }

    pub fn center_of(&self, idx: usize) -> [f64; 3] {
        self.center(self.coords(idx))
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.d as i32)
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.n[axis] as f64 * self.h
    }

    pub fn diameter(&self) -> f64 {
        (0..self.d)
            .map(|a| self.extent(a).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Grid enlarged by `margin` cells on every side, same spacing.
    pub fn padded(&self, margin: usize) -> Grid {
        let mut n = self.n;
        let mut origin = self.origin;
        for a in 0..self.d {
            n[a] += 2 * margin;
            origin[a] -= margin as f64 * self.h;
        }
        Grid::new(self.d, n, self.h, origin)
    }

    pub fn cells(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        (0..self.len()).map(move |i| self.coords(i))
    }
}

pub fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Partition of [0, T] into consecutive slabs.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSlabs {
    bounds: Vec<f64>,
}

impl TimeSlabs {
    pub fn new(bounds: Vec<f64>) -> Result<Self, DomainError> {
        if bounds.len() < 2 {
            return Err(DomainError::Config(
                "at least one time slab is required".into(),
            ));
        }
        if bounds[0] != 0.0 {
            return Err(DomainError::Config("time slabs must start at t = 0".into()));
        }
        if bounds.iter().any(|b| !b.is_finite()) {
            return Err(DomainError::Config("non-finite slab boundary".into()));
        }
        if bounds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DomainError::Config(
                "slab boundaries must be strictly increasing".into(),
            ));
        }
        Ok(TimeSlabs { bounds })
    }

    pub fn uniform(t_final: f64, count: usize) -> Result<Self, DomainError> {
        if count == 0 {
            return Err(DomainError::Config(
                "at least one time slab is required".into(),
            ));
        }
        Self::new(
            (0..=count)
                .map(|k| t_final * k as f64 / count as f64)
                .collect(),
        )
    }

    pub fn count(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn bounds(&self) -> &[f64] {
        &self.bounds
    }

    pub fn final_time(&self) -> f64 {
        *self.bounds.last().unwrap()
    }

    pub fn range(&self, k: usize) -> (f64, f64) {
        (self.bounds[k], self.bounds[k + 1])
    }

    pub fn length(&self, k: usize) -> f64 {
        self.bounds[k + 1] - self.bounds[k]
    }

    /// Slab containing `t`; half-open on the left except for the first slab.
    pub fn slab_of(&self, t: f64) -> usize {
        let n = self.count();
        for k in 0..n {
            if t <= self.bounds[k + 1] {
                return k;
            }
        }
        n - 1
    }
}

/// Rule selecting which cells of the box belong to the domain.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskRule {
    Full,
    Ball { center: [f64; 3], radius: f64 },
    Explicit(Vec<bool>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub d: usize,
    pub extents: [f64; 3],
    pub cells: [usize; 3],
    pub mask: MaskRule,
    pub slab_bounds: Vec<f64>,
}

impl DomainSpec {
    pub fn unit_box(d: usize, n: usize, t_final: f64) -> Self {
        DomainSpec {
            d,
            extents: [1.0; 3],
            cells: [n; 3],
            mask: MaskRule::Full,
            slab_bounds: vec![0.0, t_final],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub d: usize,
    pub grid: Grid,
    pub extents: [f64; 3],
    pub mask: Vec<bool>,
    /// No-slip markers per axis side (low, high).
    pub no_slip: [[bool; 2]; 3],
    pub slabs: TimeSlabs,
    wall_distance: Vec<f64>,
}

impl Domain {
    pub fn final_time(&self) -> f64 {
        self.slabs.final_time()
    }

    pub fn h(&self) -> f64 {
        self.grid.h
    }

    pub fn is_box(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    pub fn interior_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn measure(&self) -> f64 {
        self.interior_count() as f64 * self.grid.cell_volume()
    }

    /// Distance from a cell center to the nearest point of the domain boundary.
    pub fn wall_distance(&self, idx: usize) -> f64 {
        self.wall_distance[idx]
    }
}

pub fn build_domain(spec: &DomainSpec) -> Result<Domain, DomainError> {
    let d = spec.d;
    if d != 2 && d != 3 {
        return Err(DomainError::Config(format!(
            "dimension must be 2 or 3, got {d}"
        )));
    }
    for a in 0..d {
        if spec.cells[a] == 0 {
            return Err(DomainError::Config(format!(
                "resolution along axis {a} is zero"
            )));
        }
        if !(spec.extents[a] > 0.0) || !spec.extents[a].is_finite() {
            return Err(DomainError::Config(format!(
                "extent along axis {a} must be positive"
            )));
        }
    }
    let h = spec.extents[0] / spec.cells[0] as f64;
    for a in 1..d {
        let ha = spec.extents[a] / spec.cells[a] as f64;
        if ((ha - h) / h).abs() > 1e-12 {
            return Err(DomainError::Config(format!(
                "grid spacing must be uniform: axis 0 has {h}, axis {a} has {ha}"
            )));
        }
    }
    let slabs = TimeSlabs::new(spec.slab_bounds.clone())?;
    let grid = Grid::new(d, spec.cells, h, [0.0; 3]);
    let mask: Vec<bool> = match &spec.mask {
        MaskRule::Full => vec![true; grid.len()],
        MaskRule::Ball { center, radius } => (0..grid.len())
            .map(|i| distance(&grid.center_of(i), center) < *radius)
            .collect(),
        MaskRule::Explicit(m) => {
            if m.len() != grid.len() {
                return Err(DomainError::Config(format!(
                    "mask has {} entries, grid has {} cells",
                    m.len(),
                    grid.len()
                )));
            }
            m.clone()
        }
    };
    if !mask.iter().any(|&m| m) {
        return Err(DomainError::Degenerate("mask selects no cells".into()));
    }
    if !is_connected(&grid, &mask) {
        return Err(DomainError::Degenerate("mask is not connected".into()));
    }
    let wall_distance = wall_distances(&grid, &mask);
    let mut extents = [0.0; 3];
    extents[..d].copy_from_slice(&spec.extents[..d]);
    Ok(Domain {
        d,
        grid,
        extents,
        mask,
        no_slip: [[true; 2]; 3],
        slabs,
        wall_distance,
    })
}

fn is_connected(grid: &Grid, mask: &[bool]) -> bool {
    let start = match mask.iter().position(|&m| m) {
        Some(s) => s,
        None => return false,
    };
    let mut seen = vec![false; grid.len()];
    let mut stack = vec![start];
    seen[start] = true;
    let mut count = 0;
    while let Some(i) = stack.pop() {
        count += 1;
        let c = grid.coords(i);
        for a in 0..grid.d {
            for delta in [-1isize, 1] {
                if let Some(nc) = grid.offset(c, a, delta) {
                    let j = grid.index(nc);
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
    }
    count == mask.iter().filter(|&&m| m).count()
}

fn wall_distances(grid: &Grid, mask: &[bool]) -> Vec<f64> {
    let outside: Vec<[f64; 3]> = (0..grid.len())
        .filter(|&i| !mask[i])
        .map(|i| grid.center_of(i))
        .collect();
    (0..grid.len())
        .map(|i| {
            if !mask[i] {
                return 0.0;
            }
            let x = grid.center_of(i);
            let mut best = f64::INFINITY;
            for a in 0..grid.d {
                let lo = x[a] - grid.origin[a];
                let hi = grid.origin[a] + grid.extent(a) - x[a];
                best = best.min(lo).min(hi);
            }
            for y in &outside {
                // The boundary sits half a cell from the nearest excluded center.
                best = best.min(distance(&x, y) - 0.5 * grid.h);
            }
            best.max(0.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_has_4096_cells() {
        let dom = build_domain(&DomainSpec::unit_box(2, 64, 1.0)).unwrap();
        assert_eq!(dom.interior_count(), 4096);
        assert_eq!(dom.slabs.count(), 1);
    }

    #[test]
    fn zero_resolution_is_a_config_error() {
        let mut spec = DomainSpec::unit_box(2, 64, 1.0);
        spec.cells[1] = 0;
        assert!(matches!(build_domain(&spec), Err(DomainError::Config(_))));
    }

    #[test]
    fn unit_cube_with_two_slabs() {
        let mut spec = DomainSpec::unit_box(3, 16, 1.0);
        spec.slab_bounds = vec![0.0, 0.5, 1.0];
        let dom = build_domain(&spec).unwrap();
        assert_eq!(dom.d, 3);
        assert_eq!(dom.slabs.count(), 2);
        assert_eq!(dom.interior_count(), 16 * 16 * 16);
    }

    #[test]
    fn empty_mask_is_degenerate() {
        let mut spec = DomainSpec::unit_box(2, 8, 1.0);
        spec.mask = MaskRule::Explicit(vec![false; 64]);
        assert!(matches!(
            build_domain(&spec),
            Err(DomainError::Degenerate(_))
        ));
    }

    #[test]
    fn disconnected_mask_is_degenerate() {
        let mut spec = DomainSpec::unit_box(2, 4, 1.0);
        let mut m = vec![false; 16];
        m[0] = true;
        m[15] = true;
        spec.mask = MaskRule::Explicit(m);
        assert!(matches!(
            build_domain(&spec),
            Err(DomainError::Degenerate(_))
        ));
    }

    #[test]
    fn slab_lookup_and_partition() {
        let slabs = TimeSlabs::new(vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(slabs.slab_of(0.0), 0);
        assert_eq!(slabs.slab_of(0.5), 0);
        assert_eq!(slabs.slab_of(0.50001), 1);
        assert_eq!(slabs.slab_of(1.0), 1);
        assert!(TimeSlabs::new(vec![0.0, 0.5, 0.5]).is_err());
        assert!(TimeSlabs::new(vec![0.0]).is_err());
    }

    #[test]
    fn wall_distance_of_corner_cell() {
        let dom = build_domain(&DomainSpec::unit_box(2, 4, 1.0)).unwrap();
        assert!((dom.wall_distance(0) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn nonuniform_spacing_rejected() {
        let mut spec = DomainSpec::unit_box(2, 8, 1.0);
        spec.extents = [1.0, 2.0, 1.0];
        assert!(build_domain(&spec).is_err());
    }
}
