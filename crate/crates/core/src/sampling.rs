//! Seeded random test fields. Every generator takes an explicit stream id
//! so suites draw independent, reproducible sequences from one seed.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graded::{FlowGrid, GridField, Role};

pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn khat(grid: &FlowGrid, j: usize) -> f64 {
    j as f64 / (grid.n_k - 1) as f64
}

/// Random trigonometric polynomial in `F₀`:
/// `Σ a_pq sin(pπφ̂)·sin((q − ½)πk̂)` with `p, q ≤ degree` and coefficients
/// decaying like `(p² + q²)^{-1}`.
pub fn f0_trig_field(rng: &mut ChaCha8Rng, grid: &FlowGrid, degree: usize) -> GridField {
    let mut coeffs = Vec::new();
    for p in 1..=degree {
        for q in 1..=degree {
            let a: f64 = rng.gen_range(-1.0..1.0) / (p * p + q * q) as f64;
            coeffs.push((p as f64, q as f64 - 0.5, a));
        }
    }
    let mut f = GridField::zeros(*grid, Role::Solution);
    for i in 0..grid.n_phi {
        let ph = grid.phi_hat(i);
        for j in 0..grid.n_k {
            let kh = khat(grid, j);
            let v: f64 = coeffs
                .iter()
                .map(|(p, q, a)| a * (p * PI * ph).sin() * (q * PI * kh).sin())
                .sum();
            f.set(i, j, v);
        }
    }
    f.project_f0();
    f
}

/// Unconstrained smooth source: random low-order cosines and sines.
pub fn smooth_source(rng: &mut ChaCha8Rng, grid: &FlowGrid, degree: usize) -> GridField {
    let mut terms = Vec::new();
    for p in 0..=degree {
        for q in 0..=degree {
            let a: f64 = rng.gen_range(-1.0..1.0) / (1 + p * p + q * q) as f64;
            let s: f64 = rng.gen_range(0.0..2.0 * PI);
            let t: f64 = rng.gen_range(0.0..2.0 * PI);
            terms.push((p as f64, q as f64, a, s, t));
        }
    }
    GridField::from_fn(*grid, Role::Source, |phi, k| {
        let ph = (phi - grid.phi_min) / grid.width();
        let kh = (k - grid.k_min) / (grid.k_max - grid.k_min);
        terms
            .iter()
            .map(|(p, q, a, s, t)| a * (p * PI * ph + s).cos() * (q * PI * kh + t).cos())
            .sum()
    })
}

/// Conductivity field with values in `[c, 2c]`.
pub fn conductivity(rng: &mut ChaCha8Rng, grid: &FlowGrid, c: f64, degree: usize) -> GridField {
    let raw = smooth_source(rng, grid, degree);
    let m = raw.sup().max(f64::MIN_POSITIVE);
    GridField::from_values(
        *grid,
        Role::Source,
        raw.values.iter().map(|v| c * (1.5 + 0.5 * v / m)).collect(),
    )
    .expect("same grid")
}

/// Rescale so that `norm(f) = target`.
pub fn rescale(f: &GridField, norm: f64, target: f64) -> GridField {
    if norm == 0.0 {
        return f.clone();
    }
    f.scale(target / norm)
}
