//! Per-mode retarded kernels of `∂ₜ² + ω² + m²χ(t)` on the time grid.
//!
//! The free kernel `sin(ω(t − s))/ω` is semiseparable, so every Volterra
//! sweep below runs in `O(N_t)` with two running sums instead of a dense
//! matrix-vector product. Dense kernels are assembled column by column from
//! the same sweep.

use serde::Serialize;

use crate::background::{Background, ModeClock};
use crate::error::{Error, Result};

/// Forward sweep of the discrete Volterra equation
///
/// `h_i = base_i + Σ_{start ≤ l < i} sin(ω(t_i − t_l))/ω · W_l · (src_l − m²χ_l h_l)`.
///
/// Entries before `start` are copied from `base`.
fn volterra_sweep(
    clock: &ModeClock,
    weights: &[f64],
    chi: &[f64],
    m2: f64,
    base: Option<&[f64]>,
    src: Option<&[f64]>,
    start: usize,
) -> Vec<f64> {
    let n = weights.len();
    let mut h = match base {
        Some(b) => b.to_vec(),
        None => vec![0.0; n],
    };
    let inv_omega = 1.0 / clock.omega;
    let (mut sc, mut ss) = (0.0, 0.0);
    for i in start..n {
        h[i] += (clock.sin[i] * sc - clock.cos[i] * ss) * inv_omega;
        let s = src.map_or(0.0, |s| s[i]);
        let x = weights[i] * (s - m2 * chi[i] * h[i]);
        sc += clock.cos[i] * x;
        ss += clock.sin[i] * x;
    }
    h
}

/// `h(t_i) = Σ_{j<i} W_j·sin(ω(t_i − t_j))/ω·g(t_j)`.
pub fn free_retarded_apply(bg: &Background, mode: usize, g: &[f64]) -> Vec<f64> {
    assert_eq!(g.len(), bg.n_t(), "time series length");
    volterra_sweep(&bg.clocks[mode], &bg.weights, &bg.chi, 0.0, None, Some(g), 0)
}

/// The interacting retarded operator applied to a time series,
/// `h = Δ^U_R g`, solving `h = Δ_R g − m²·Δ_R(χh)`.
pub fn interacting_retarded_apply(bg: &Background, mode: usize, m2: f64, g: &[f64]) -> Vec<f64> {
    assert_eq!(g.len(), bg.n_t(), "time series length");
    volterra_sweep(&bg.clocks[mode], &bg.weights, &bg.chi, m2, None, Some(g), 0)
}

/// `ψ − m²·G·(χ⊙ψ)` with quadrature weights.
pub fn moeller_apply(bg: &Background, mode: usize, m2: f64, psi: &[f64]) -> Vec<f64> {
    if m2 == 0.0 {
        return psi.to_vec();
    }
    let chi_psi: Vec<f64> = psi.iter().zip(&bg.chi).map(|(p, c)| p * c).collect();
    let g = interacting_retarded_apply(bg, mode, m2, &chi_psi);
    psi.iter().zip(g).map(|(p, h)| p - m2 * h).collect()
}

/// The free Møller inverse `(1 + m²·Δ_R χ)ψ`.
pub fn moeller_inverse_apply(bg: &Background, mode: usize, m2: f64, psi: &[f64]) -> Vec<f64> {
    let chi_psi: Vec<f64> = psi.iter().zip(&bg.chi).map(|(p, c)| p * c).collect();
    let g = free_retarded_apply(bg, mode, &chi_psi);
    psi.iter().zip(g).map(|(p, h)| p + m2 * h).collect()
}

/// Møller-transformed free solution, `M ψ` for `ψ` solving the free
/// equation, computed directly as the solution of `a + m²Δ_R(χa) = ψ`.
pub(crate) fn moeller_solution(bg: &Background, mode: usize, m2: f64, psi: &[f64]) -> Vec<f64> {
    volterra_sweep(&bg.clocks[mode], &bg.weights, &bg.chi, m2, Some(psi), None, 0)
}

/// Dense lower-triangular retarded kernel for one mode and one `m²`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropagatorKernel {
    pub mode: usize,
    pub index: i64,
    pub m2: f64,
    pub n: usize,
    /// row-major `G[i, j]`
    pub values: Vec<f64>,
}

impl PropagatorKernel {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    fn from_columns(mode: usize, index: i64, m2: f64, n: usize, cols: &[Vec<f64>]) -> Self {
        let mut values = vec![0.0; n * n];
        for (j, col) in cols.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                values[i * n + j] = *v;
            }
        }
        Self {
            mode,
            index,
            m2,
            n,
            values,
        }
    }

    /// The advanced kernel, `G_A = G_Rᵀ`.
    pub fn advanced(&self) -> Self {
        let n = self.n;
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                values[j * n + i] = self.values[i * n + j];
            }
        }
        Self {
            values,
            ..self.clone()
        }
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Largest `|G[i, j]|` with `j > i`; zero for a retarded kernel.
    pub fn acausal_max(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.n {
            for j in i + 1..self.n {
                m = m.max(self.get(i, j).abs());
            }
        }
        m
    }
}

fn free_column(bg: &Background, mode: usize, j: usize) -> Vec<f64> {
    let clock = &bg.clocks[mode];
    let n = bg.n_t();
    let mut col = vec![0.0; n];
    let (sj, cj) = (clock.sin[j], clock.cos[j]);
    for i in j + 1..n {
        // sin(ω(t_i − t_j)) from the tabulated clocks keeps the free and
        // interacting sweeps on identical arithmetic
        col[i] = (clock.sin[i] * cj - clock.cos[i] * sj) / clock.omega;
    }
    col
}

/// Free kernel `G₀[i, j] = sin(ω(t_i − t_j))/ω` for `i > j`.
pub fn free_kernel(bg: &Background, mode: usize) -> PropagatorKernel {
    let n = bg.n_t();
    let cols: Vec<Vec<f64>> = (0..n).map(|j| free_column(bg, mode, j)).collect();
    PropagatorKernel::from_columns(mode, bg.basis.modes[mode].index, 0.0, n, &cols)
}

/// Solve `G = G₀ − m²·G₀·diag(χW)·G` by forward substitution.
pub fn interacting_retarded_volterra(bg: &Background, mode: usize, m2: f64) -> Result<PropagatorKernel> {
    bg.check_m2(m2)?;
    let n = bg.n_t();
    let clock = &bg.clocks[mode];
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let base = free_column(bg, mode, j);
            volterra_sweep(clock, &bg.weights, &bg.chi, m2, Some(&base), None, j)
        })
        .collect();
    let kernel = PropagatorKernel::from_columns(mode, bg.basis.modes[mode].index, m2, n, &cols);
    if kernel.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            mode: kernel.index,
            m2,
        });
    }
    Ok(kernel)
}

/// Result of the Neumann-series construction.
#[derive(Debug, Clone)]
pub struct NeumannKernel {
    pub kernel: PropagatorKernel,
    /// number of correction terms added
    pub terms: usize,
    /// max-norms of the successive terms, starting with `G₀`
    pub term_norms: Vec<f64>,
}

impl NeumannKernel {
    /// Geometric mean contraction ratio of the correction terms.
    pub fn contraction_ratio(&self) -> Option<f64> {
        let k = self.term_norms.len();
        if k < 3 {
            return None;
        }
        let first = self.term_norms[1];
        let last = self.term_norms[k - 1];
        if first <= 0.0 || last <= 0.0 {
            return None;
        }
        Some((last / first).powf(1.0 / (k - 2) as f64))
    }
}

/// Partial sums `Σ_j G₀(−m²·diag(χW)·G₀)^j` until the term max-norm drops
/// below `tol`. Errors once `cap` terms have been added.
pub fn interacting_retarded_neumann(
    bg: &Background,
    mode: usize,
    m2: f64,
    tol: f64,
    cap: usize,
) -> Result<NeumannKernel> {
    bg.check_m2(m2)?;
    let n = bg.n_t();
    let clock = &bg.clocks[mode];
    let mut term: Vec<Vec<f64>> = (0..n).map(|j| free_column(bg, mode, j)).collect();
    let mut sum = term.clone();
    let norm = |t: &[Vec<f64>]| t.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut term_norms = vec![norm(&term)];
    let mut terms = 0;
    if m2 != 0.0 {
        loop {
            if terms >= cap {
                let r = NeumannKernel {
                    kernel: PropagatorKernel::from_columns(mode, 0, m2, n, &sum),
                    terms,
                    term_norms,
                };
                return Err(Error::SeriesNotConverged {
                    terms,
                    ratio: r.contraction_ratio().unwrap_or(f64::NAN),
                });
            }
            term = term
                .iter()
                .enumerate()
                .map(|(j, col)| {
                    let src: Vec<f64> = col.iter().zip(&bg.chi).map(|(v, c)| -m2 * c * v).collect();
                    volterra_sweep(clock, &bg.weights, &bg.chi, 0.0, None, Some(&src), j)
                })
                .collect();
            terms += 1;
            let tn = norm(&term);
            term_norms.push(tn);
            if !tn.is_finite() {
                return Err(Error::SeriesNotConverged {
                    terms,
                    ratio: f64::INFINITY,
                });
            }
            for (s, t) in sum.iter_mut().zip(&term) {
                for (a, b) in s.iter_mut().zip(t) {
                    *a += b;
                }
            }
            if tn < tol {
                break;
            }
        }
    }
    Ok(NeumannKernel {
        kernel: PropagatorKernel::from_columns(mode, bg.basis.modes[mode].index, m2, n, &sum),
        terms,
        term_norms,
    })
}

/// Dense `M = 1 − m²·G·diag(χW)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MoellerMatrix {
    pub mode: usize,
    pub m2: f64,
    pub n: usize,
    pub values: Vec<f64>,
}

impl MoellerMatrix {
    pub fn from_kernel(bg: &Background, kernel: &PropagatorKernel) -> Self {
        let n = kernel.n;
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            values[i * n + i] = 1.0;
            if kernel.m2 != 0.0 {
                for l in 0..i {
                    values[i * n + l] -= kernel.m2 * kernel.get(i, l) * bg.chi[l] * bg.weights[l];
                }
            }
        }
        Self {
            mode: kernel.mode,
            m2: kernel.m2,
            n,
            values,
        }
    }

    pub fn apply(&self, psi: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                self.values[i * self.n..(i + 1) * self.n]
                    .iter()
                    .zip(psi)
                    .map(|(m, p)| m * p)
                    .sum()
            })
            .collect()
    }
}

/// Per-mode pieces of the normal-ordered coincidence kernel: the
/// Møller-transformed state legs `a = M cos(ωt)`, `b = M sin(ωt)`.
#[derive(Debug, Clone)]
pub struct DressedLegs {
    pub weight: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

pub(crate) fn dressed_legs(bg: &Background, mode: usize, m2: f64) -> DressedLegs {
    let clock = &bg.clocks[mode];
    DressedLegs {
        weight: bg.state_weight(mode),
        a: moeller_solution(bg, mode, m2, &clock.cos),
        b: moeller_solution(bg, mode, m2, &clock.sin),
    }
}

/// `d(t_i) = Σₙ [Mₙ wₙ Mₙᵀ](t_i, t_i)`.
pub fn normal_ordered_diagonal(bg: &Background, m2: f64) -> Result<Vec<f64>> {
    bg.check_m2(m2)?;
    let n = bg.n_t();
    let per_mode = crate::par::map_range(bg.basis.len(), |mode| {
        let legs = dressed_legs(bg, mode, m2);
        (0..n)
            .map(|i| legs.weight * (legs.a[i] * legs.a[i] + legs.b[i] * legs.b[i]))
            .collect::<Vec<f64>>()
    });
    let mut d = vec![0.0; n];
    for row in per_mode {
        for (acc, v) in d.iter_mut().zip(row) {
            *acc += v;
        }
    }
    Ok(d)
}

/// Outcome of applying the discrete wave operator to a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntertwiningReport {
    pub mode: usize,
    pub m2: f64,
    pub dt: f64,
    /// max over `i ≠ j` of `|(P G)[i, j]|`
    pub smooth_residual: f64,
    /// max over `j` of `|Δt·(P G)[j, j] − 1|`: the discrete delta weight
    pub delta_residual: f64,
}

impl IntertwiningReport {
    pub fn residual(&self) -> f64 {
        self.smooth_residual.max(self.delta_residual)
    }
}

/// `(P G)[i, j]` for the central-difference operator
/// `δ²/Δt² + ω² + m²χ`, interior rows only.
pub fn column_residual(bg: &Background, kernel: &PropagatorKernel, j: usize) -> Vec<f64> {
    let n = kernel.n;
    let dt = bg.time.dt();
    let w2 = bg.clocks[kernel.mode].omega.powi(2);
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        let g = kernel.get(i, j);
        out[i] = (kernel.get(i + 1, j) - 2.0 * g + kernel.get(i - 1, j)) / (dt * dt)
            + (w2 + kernel.m2 * bg.chi[i]) * g;
    }
    out
}

/// Check `(P₀ + m²χ)G = 1` column by column. The last row lacks a forward
/// neighbour and is skipped.
pub fn verify_intertwining(bg: &Background, kernel: &PropagatorKernel) -> IntertwiningReport {
    let n = kernel.n;
    let dt = bg.time.dt();
    let cols = crate::par::map_range(n - 1, |j| {
        let r = column_residual(bg, kernel, j);
        let mut smooth: f64 = 0.0;
        for (i, v) in r.iter().enumerate().take(n - 1).skip(1) {
            if i != j {
                smooth = smooth.max(v.abs());
            }
        }
        let delta = if j >= 1 { (dt * r[j] - 1.0).abs() } else { 0.0 };
        (smooth, delta)
    });
    let (smooth_residual, delta_residual) = cols
        .into_iter()
        .fold((0.0f64, 0.0f64), |(a, b), (s, d)| (a.max(s), b.max(d)));
    IntertwiningReport {
        mode: kernel.mode,
        m2: kernel.m2,
        dt,
        smooth_residual,
        delta_residual,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    fn small_bg(n_t: usize) -> Background {
        let mut cfg = RunConfig::default_config().background;
        cfg.n_modes = 4;
        cfg.n_t = n_t;
        Background::build(&cfg).unwrap()
    }

    #[test]
    fn impulse_response_closed_form() {
        let mut cfg = RunConfig::default_config().background;
        cfg.n_modes = 4;
        cfg.mass = 0.0;
        cfg.include_zero_mode = false;
        cfg.circumference = std::f64::consts::PI;
        // mode n = 1 on a circle of length π has ω = 2
        cfg.t_min = -3.0;
        cfg.t_max = 3.0;
        cfg.n_t = 481;
        let bg = Background::build(&cfg).unwrap();
        let mode = bg.mode_position(1).unwrap();
        assert_eq!(bg.basis.modes[mode].omega, 2.0);
        let dt = bg.time.dt();
        let j = 100;
        let mut g = vec![0.0; bg.n_t()];
        g[j] = 1.0;
        let h = free_retarded_apply(&bg, mode, &g);
        let steps = (std::f64::consts::FRAC_PI_4 / dt).round() as usize;
        let i = j + steps;
        let expect = bg.weights[j] * (2.0 * (bg.time.t(i) - bg.time.t(j))).sin() / 2.0;
        assert!((h[i] - expect).abs() < 1e-14);
        assert!(h[..=j].iter().all(|&v| v == 0.0));
        let zero = free_retarded_apply(&bg, mode, &vec![0.0; bg.n_t()]);
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn m2_zero_is_free() {
        let bg = small_bg(96);
        for mode in [0, 3] {
            let g = interacting_retarded_volterra(&bg, mode, 0.0).unwrap();
            let g0 = free_kernel(&bg, mode);
            assert_eq!(g.values, g0.values);
            let m = MoellerMatrix::from_kernel(&bg, &g);
            for i in 0..m.n {
                for j in 0..m.n {
                    assert_eq!(m.values[i * m.n + j], if i == j { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn kernels_are_retarded_with_zero_diagonal() {
        let bg = small_bg(96);
        for m2 in [-0.4, 0.0, 0.3] {
            let k = interacting_retarded_volterra(&bg, 2, m2).unwrap();
            assert_eq!(k.acausal_max(), 0.0);
            for i in 0..k.n {
                assert_eq!(k.get(i, i), 0.0);
            }
            let adv = k.advanced();
            for i in 0..k.n {
                for j in 0..i {
                    assert_eq!(adv.get(j, i), k.get(i, j));
                    assert_eq!(adv.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn columns_before_the_cutoff_are_free_until_it_switches_on() {
        let bg = small_bg(128);
        let k = interacting_retarded_volterra(&bg, 1, 0.45).unwrap();
        let g0 = free_kernel(&bg, 1);
        let first_active = bg.chi.iter().position(|&c| c > 0.0).unwrap();
        for i in 0..=first_active {
            for j in 0..=i {
                assert_eq!(k.get(i, j), g0.get(i, j));
            }
        }
    }

    #[test]
    fn columns_after_the_cutoff_have_free_residual() {
        let bg = small_bg(128);
        let k = interacting_retarded_volterra(&bg, 1, 0.45).unwrap();
        let g0 = free_kernel(&bg, 1);
        let last_active = bg.chi.iter().rposition(|&c| c > 0.0).unwrap();
        for j in last_active + 1..bg.n_t() - 1 {
            assert_eq!(column_residual(&bg, &k, j), column_residual(&bg, &g0, j));
        }
    }

    #[test]
    fn moeller_inverse_identity() {
        let bg = small_bg(200);
        let psi: Vec<f64> = bg.time.points().iter().map(|t| (1.3 * t).cos() + 0.2 * t).collect();
        for m2 in [-0.3, 0.2] {
            let m_psi = moeller_apply(&bg, 1, m2, &psi);
            let back = moeller_inverse_apply(&bg, 1, m2, &m_psi);
            for (a, b) in back.iter().zip(&psi) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
            let direct = moeller_solution(&bg, 1, m2, &psi);
            for (a, b) in direct.iter().zip(&m_psi) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(moeller_apply(&bg, 1, 0.0, &psi), psi);
        let zero = moeller_apply(&bg, 1, 0.3, &vec![0.0; bg.n_t()]);
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dense_moeller_matches_sweep() {
        let bg = small_bg(120);
        let k = interacting_retarded_volterra(&bg, 2, -0.25).unwrap();
        let m = MoellerMatrix::from_kernel(&bg, &k);
        let psi: Vec<f64> = bg.time.points().iter().map(|t| (0.7 * t).sin()).collect();
        let a = m.apply(&psi);
        let b = moeller_apply(&bg, 2, -0.25, &psi);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn neumann_terminates_immediately_at_zero() {
        let bg = small_bg(64);
        let nk = interacting_retarded_neumann(&bg, 0, 0.0, 1e-12, 10).unwrap();
        assert_eq!(nk.terms, 0);
        assert_eq!(nk.kernel.values, free_kernel(&bg, 0).values);
    }

    #[test]
    fn neumann_reports_divergence() {
        let mut cfg = RunConfig::default_config().background;
        cfg.n_modes = 1;
        cfg.n_t = 128;
        cfg.m2_max = 500.0;
        let bg = Background::build(&cfg).unwrap();
        let err = interacting_retarded_neumann(&bg, 0, -400.0, 1e-12, 15).unwrap_err();
        assert!(matches!(err, Error::SeriesNotConverged { .. }), "{err}");
        assert!(err.to_string().contains("series not converged"));
    }

    #[test]
    fn out_of_range_m2_is_rejected() {
        let bg = small_bg(64);
        assert!(matches!(
            interacting_retarded_volterra(&bg, 0, 10.0),
            Err(Error::OutOfRange { .. })
        ));
    }
}
