//! Sampled estimate of the Korn constant ‖∇u‖_q ≤ K(‖Du‖_q + ‖u‖_2) for
//! fields with zero trace.

use crate::grid::Domain;
use crate::mac::{Mac, VelocityField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KornSampling {
    /// Random low-mode sine series vanishing on the walls.
    General,
    /// Divergence-free samples (stream functions in 2D, projected series in 3D).
    Solenoidal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KornEstimate {
    pub q: f64,
    pub samples: usize,
    pub max_ratio: f64,
    pub mean_ratio: f64,
}

fn lq_norm(values: impl Iterator<Item = f64>, q: f64, vol: f64) -> f64 {
    let s: Vec<f64> = values.map(|v| v.powf(q)).collect();
    (vol * crate::quad::pairwise_sum(&s)).powf(1.0 / q)
}

/// ‖∇u‖_q / (‖Du‖_q + ‖u‖_2) on the MAC grid.
pub fn korn_ratio(mac: &Mac, mask: &[bool], u: &VelocityField, q: f64) -> f64 {
    let vol = mac.grid.cell_volume();
    let grad = mac.velocity_gradient(u);
    let strain = mac.strain(u);
    let gn = lq_norm(
        grad.iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(g, _)| g.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()),
        q,
        vol,
    );
    let dn = lq_norm(
        strain
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(t, _)| t.norm()),
        q,
        vol,
    );
    let l2 = mac.inner(u, u).sqrt();
    gn / (dn + l2)
}

fn sine_series(mac: &Mac, rng: &mut ChaCha8Rng, modes: usize) -> VelocityField {
    let g = mac.grid;
    let d = mac.d;
    let nk = if d == 3 { modes } else { 1 };
    let mut coef = vec![vec![0.0; modes * modes * nk]; d];
    for c in coef.iter_mut() {
        for (k, v) in c.iter_mut().enumerate() {
            let kk = 1 + k % modes + (k / modes) % modes + k / (modes * modes);
            *v = rng.gen_range(-1.0..1.0) / kk as f64;
        }
    }
    let ext = [
        g.extent(0),
        g.extent(1),
        if d == 3 { g.extent(2) } else { 1.0 },
    ];
    mac.velocity_from_fn(|a, x| {
        let mut s = 0.0;
        for k in 0..modes * modes * nk {
            let ks = [
                1 + k % modes,
                1 + (k / modes) % modes,
                1 + k / (modes * modes),
            ];
            let mut p = coef[a][k];
            for b in 0..d {
                p *= (ks[b] as f64 * PI * (x[b] - g.origin[b]) / ext[b]).sin();
            }
            s += p;
        }
        s
    })
}

fn stream_sample(mac: &Mac, rng: &mut ChaCha8Rng, modes: usize) -> VelocityField {
    let g = mac.grid;
    let (lx, ly) = (g.extent(0), g.extent(1));
    let coef: Vec<f64> = (0..modes * modes)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    mac.velocity_from_stream(|x| {
        let (sx, sy) = ((x[0] - g.origin[0]) / lx, (x[1] - g.origin[1]) / ly);
        // sin² factors give zero normal and tangential velocity on the walls.
        let env = (PI * sx).sin().powi(2) * (PI * sy).sin().powi(2);
        let mut s = 0.0;
        for k in 0..modes * modes {
            let (i, j) = (k % modes, k / modes);
            s += coef[k] * (i as f64 * PI * sx).cos() * (j as f64 * PI * sy).cos();
        }
        env * s
    })
}

pub fn korn_constant_estimate_with(
    domain: &Domain,
    q: f64,
    n_samples: usize,
    seed: u64,
    sampling: KornSampling,
) -> KornEstimate {
    let mac = Mac::new(domain.grid);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ratios = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let u = match sampling {
            KornSampling::General => sine_series(&mac, &mut rng, 3),
            KornSampling::Solenoidal if mac.d == 2 => stream_sample(&mac, &mut rng, 3),
            KornSampling::Solenoidal => mac.project(&sine_series(&mac, &mut rng, 3)).0,
        };
        if mac.inner(&u, &u) > 0.0 {
            ratios.push(korn_ratio(&mac, &domain.mask, &u, q));
        }
    }
    let max_ratio = ratios.iter().cloned().fold(0.0, f64::max);
    let mean_ratio = if ratios.is_empty() {
        0.0
    } else {
        ratios.iter().sum::<f64>() / ratios.len() as f64
    };
    KornEstimate {
        q,
        samples: ratios.len(),
        max_ratio,
        mean_ratio,
    }
}

/// Korn estimate from general zero-trace samples with a fixed seed.
pub fn korn_constant_estimate(domain: &Domain, q: f64, n_samples: usize) -> KornEstimate {
    korn_constant_estimate_with(domain, q, n_samples, 0x4b6f726e, KornSampling::General)
}
