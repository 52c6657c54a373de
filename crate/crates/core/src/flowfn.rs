//! The flow function `𝒢(m²)`, its derivative `σ` and second derivative
//! `A₂`, evaluated mode by mode from the dressed state legs and tabulated
//! on a uniform `m²` grid.
//!
//! With `a = M cos(ωt)`, `b = M sin(ωt)` and `V` the interacting retarded
//! operator with quadrature weights, `p = V(χa)` and `r = V(χp)` give the
//! exact derivatives of the discrete integrand: `∂a/∂m² = −p` and
//! `∂p/∂m² = −2r`.

use serde::Serialize;

use crate::background::Background;
use crate::error::{Error, Result};
use crate::numerics::CubicSpline;
use crate::propagators::{dressed_legs, interacting_retarded_apply};

/// `𝒢`, `σ`, `A₂` at one `m²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowPoint {
    pub m2: f64,
    pub g: f64,
    pub sigma: f64,
    pub a2: f64,
}

fn weighted_chi(bg: &Background) -> Vec<f64> {
    bg.chi.iter().zip(&bg.weights).map(|(c, w)| c * w).collect()
}

fn times_chi(bg: &Background, x: &[f64]) -> Vec<f64> {
    x.iter().zip(&bg.chi).map(|(v, c)| v * c).collect()
}

/// Per-mode sums `(Σ Wχ(a²+b²), Σ Wχ(ap_a+bp_b), Σ Wχ(p_a²+2ar_a+p_b²+2br_b))`
/// weighted by `cₙ`.
fn mode_sums(bg: &Background, mode: usize, m2: f64, wchi: &[f64], derivs: bool) -> [f64; 3] {
    let legs = dressed_legs(bg, mode, m2);
    let c = legs.weight;
    let mut out = [0.0; 3];
    out[0] = c * legs
        .a
        .iter()
        .zip(&legs.b)
        .zip(wchi)
        .map(|((a, b), w)| w * (a * a + b * b))
        .sum::<f64>();
    if !derivs {
        return out;
    }
    for leg in [&legs.a, &legs.b] {
        let p = interacting_retarded_apply(bg, mode, m2, &times_chi(bg, leg));
        let r = interacting_retarded_apply(bg, mode, m2, &times_chi(bg, &p));
        for i in 0..leg.len() {
            out[1] += c * wchi[i] * leg[i] * p[i];
            out[2] += c * wchi[i] * (p[i] * p[i] + 2.0 * leg[i] * r[i]);
        }
    }
    out
}

fn evaluate(bg: &Background, m2: f64, derivs: bool) -> Result<FlowPoint> {
    bg.check_m2(m2)?;
    let wchi = weighted_chi(bg);
    let norm: f64 = wchi.iter().sum();
    let per_mode = crate::par::map_range(bg.basis.len(), |mode| mode_sums(bg, mode, m2, &wchi, derivs));
    let mut acc = [0.0; 3];
    for s in per_mode {
        for k in 0..3 {
            acc[k] += s[k];
        }
    }
    let point = FlowPoint {
        m2,
        g: -0.5 * bg.epsilon * acc[0] / norm,
        sigma: bg.epsilon * acc[1] / norm,
        a2: -bg.epsilon * acc[2] / norm,
    };
    if !(point.g.is_finite() && point.sigma.is_finite() && point.a2.is_finite()) {
        return Err(Error::NonFinite { mode: -1, m2 });
    }
    Ok(point)
}

/// `𝒢(m²) = −(1/(2‖f‖₁))·∫ ε χ(t)·L·d(t) dt`.
pub fn flow_value(bg: &Background, m2: f64) -> Result<f64> {
    Ok(evaluate(bg, m2, false)?.g)
}

/// `σ(m²) = d𝒢/dm²`, as the weighted double quadrature of
/// `χ(t)·G(t, τ)·χ(τ)·[M w Mᵀ](τ, t)`.
pub fn sigma_value(bg: &Background, m2: f64) -> Result<f64> {
    Ok(evaluate(bg, m2, true)?.sigma)
}

/// `A₂(m²) = d²𝒢/d(m²)²`.
pub fn a2_value(bg: &Background, m2: f64) -> Result<f64> {
    Ok(evaluate(bg, m2, true)?.a2)
}

pub fn flow_point(bg: &Background, m2: f64) -> Result<FlowPoint> {
    evaluate(bg, m2, true)
}

/// Tabulated `𝒢`, `σ`, `A₂` with natural cubic-spline interpolants.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTable {
    pub m2: Vec<f64>,
    pub g: Vec<f64>,
    pub sigma: Vec<f64>,
    pub a2: Vec<f64>,
    pub background_hash: String,
    g_spline: CubicSpline,
    sigma_spline: CubicSpline,
    a2_spline: CubicSpline,
}

fn uniform_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let h = (hi - lo) / (points.max(2) - 1) as f64;
    (0..points)
        .map(|i| if i + 1 == points { hi } else { lo + i as f64 * h })
        .collect()
}

impl FlowTable {
    /// Tabulate on `points` uniform nodes covering `[−m2_max, m2_max]`.
    pub fn tabulate(bg: &Background, points: usize) -> Result<Self> {
        Self::tabulate_range(bg, -bg.m2_max, bg.m2_max, points)
    }

    pub fn tabulate_range(bg: &Background, lo: f64, hi: f64, points: usize) -> Result<Self> {
        if points < 4 {
            return Err(Error::TooFewPoints(points));
        }
        let grid = uniform_grid(lo, hi, points);
        let rows = crate::par::try_map_range(points, |i| evaluate(bg, grid[i], true))?;
        Self::from_values(
            lo,
            hi,
            rows.iter().map(|p| p.g).collect(),
            rows.iter().map(|p| p.sigma).collect(),
            rows.iter().map(|p| p.a2).collect(),
            bg.hash().to_string(),
        )
    }

    /// Build a table from precomputed node values on a uniform grid.
    pub fn from_values(
        lo: f64,
        hi: f64,
        g: Vec<f64>,
        sigma: Vec<f64>,
        a2: Vec<f64>,
        background_hash: String,
    ) -> Result<Self> {
        let n = g.len();
        if n < 4 {
            return Err(Error::TooFewPoints(n));
        }
        if sigma.len() != n || a2.len() != n {
            return Err(Error::Shape("flow table columns differ in length".into()));
        }
        let h = (hi - lo) / (n - 1) as f64;
        Ok(Self {
            m2: uniform_grid(lo, hi, n),
            g_spline: CubicSpline::natural(lo, h, &g)?,
            sigma_spline: CubicSpline::natural(lo, h, &sigma)?,
            a2_spline: CubicSpline::natural(lo, h, &a2)?,
            g,
            sigma,
            a2,
            background_hash,
        })
    }

    /// A flat table `𝒢 ≡ value` (σ = A₂ = 0).
    pub fn constant(value: f64, m2_max: f64, points: usize) -> Result<Self> {
        Self::from_values(
            -m2_max,
            m2_max,
            vec![value; points],
            vec![0.0; points],
            vec![0.0; points],
            format!("constant:{value:e}"),
        )
    }

    pub fn len(&self) -> usize {
        self.m2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m2.is_empty()
    }

    pub fn lo(&self) -> f64 {
        self.m2[0]
    }

    pub fn hi(&self) -> f64 {
        self.m2[self.m2.len() - 1]
    }

    pub fn step(&self) -> f64 {
        (self.hi() - self.lo()) / (self.len() - 1) as f64
    }

    pub fn contains(&self, m2: f64) -> bool {
        self.flow(m2).is_ok()
    }

    pub fn flow(&self, m2: f64) -> Result<f64> {
        self.g_spline.eval(m2)
    }

    pub fn sigma(&self, m2: f64) -> Result<f64> {
        self.sigma_spline.eval(m2)
    }

    pub fn sigma_derivative(&self, m2: f64) -> Result<f64> {
        self.sigma_spline.derivative(m2)
    }

    pub fn a2(&self, m2: f64) -> Result<f64> {
        self.a2_spline.eval(m2)
    }

    /// Max over interior nodes of `|σᵢ − (𝒢ᵢ₊₁ − 𝒢ᵢ₋₁)/(2Δm²)|` and of
    /// `|A₂ᵢ − (𝒢ᵢ₊₁ − 2𝒢ᵢ + 𝒢ᵢ₋₁)/Δm²²|`.
    pub fn derivative_consistency(&self) -> (f64, f64) {
        let h = self.step();
        let mut e1: f64 = 0.0;
        let mut e2: f64 = 0.0;
        for i in 1..self.len() - 1 {
            let d1 = (self.g[i + 1] - self.g[i - 1]) / (2.0 * h);
            let d2 = (self.g[i + 1] - 2.0 * self.g[i] + self.g[i - 1]) / (h * h);
            e1 = e1.max((self.sigma[i] - d1).abs());
            e2 = e2.max((self.a2[i] - d2).abs());
        }
        (e1, e2)
    }

    /// Derivative-consistency errors restricted to the given node values,
    /// used to compare tables of different resolution at shared points.
    pub fn consistency_at(&self, nodes: &[f64]) -> (f64, f64) {
        let h = self.step();
        let mut e1: f64 = 0.0;
        let mut e2: f64 = 0.0;
        for &x in nodes {
            let i = ((x - self.lo()) / h).round() as usize;
            if i == 0 || i + 1 >= self.len() {
                continue;
            }
            let d1 = (self.g[i + 1] - self.g[i - 1]) / (2.0 * h);
            let d2 = (self.g[i + 1] - 2.0 * self.g[i] + self.g[i - 1]) / (h * h);
            e1 = e1.max((self.sigma[i] - d1).abs());
            e2 = e2.max((self.a2[i] - d2).abs());
        }
        (e1, e2)
    }

    /// Smallest `C` with `|A₂(m²)| ≤ C(1 + |m²|)` over the nodes in
    /// `[−a, a]`.
    pub fn a2_tame_constant(&self, a: f64) -> f64 {
        self.m2
            .iter()
            .zip(&self.a2)
            .filter(|(m, _)| m.abs() <= a * (1.0 + 1e-12))
            .map(|(m, v)| v.abs() / (1.0 + m.abs()))
            .fold(0.0, f64::max)
    }
}

/// σ-window verdict over `[−A, A]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowReport {
    pub c: f64,
    pub eps_prime: f64,
    pub a: f64,
    pub sigma_at_zero: f64,
    pub min_sigma: f64,
    /// `max |σ′/σ|` over the window
    pub max_log_derivative: f64,
    /// `max |σ′/σ|·A`: bound on `|∂ log σ(∂²ũ)|` per unit `∂(∂²ũ)`
    pub log_variation: f64,
    pub positivity: bool,
    pub log_bound: bool,
    pub pass: bool,
    pub remedy: Option<String>,
}

const WINDOW_SAMPLES: usize = 401;

/// Check `σ ≥ c` and `|∂ log σ| < ε′` on `[−A, A]`. The log-derivative
/// bound uses the chain rule `|∂ᵢ log σ(∂²ũ)| ≤ max|σ′/σ|·|∂ᵢ∂²ũ|` with
/// `|∂ᵢ∂²ũ| ≤ A`.
pub fn check_sigma_window(table: &FlowTable, c: f64, eps_prime: f64, a: f64) -> WindowReport {
    let sigma0 = table.sigma(0.0).unwrap_or(f64::NAN);
    let in_range = table.contains(-a) && table.contains(a);
    let (mut min_sigma, mut max_log) = (f64::INFINITY, 0.0f64);
    if in_range {
        for s in 0..WINDOW_SAMPLES {
            let x = if a == 0.0 {
                0.0
            } else {
                -a + 2.0 * a * s as f64 / (WINDOW_SAMPLES - 1) as f64
            };
            let sig = table.sigma(x).unwrap_or(f64::NAN);
            let dsig = table.sigma_derivative(x).unwrap_or(f64::NAN);
            min_sigma = min_sigma.min(sig);
            max_log = if sig > 0.0 {
                max_log.max((dsig / sig).abs())
            } else {
                f64::INFINITY
            };
        }
    } else {
        min_sigma = f64::NAN;
        max_log = f64::NAN;
    }
    let positivity = in_range && min_sigma >= c;
    let log_variation = max_log * a;
    let log_bound = in_range && (a == 0.0 || log_variation < eps_prime);
    let pass = positivity && log_bound;
    let remedy = if pass {
        None
    } else if !in_range {
        Some(format!(
            "window [-{a}, {a}] exceeds the table range [{}, {}]: raise m2_max",
            table.lo(),
            table.hi()
        ))
    } else if sigma0 < 0.0 {
        Some("σ(0) < 0: flip the sign of the state amplitude alpha".to_string())
    } else if !positivity {
        Some(format!(
            "min σ = {min_sigma:.3e} < c: increase |alpha|, lower window_c or shrink window_a"
        ))
    } else {
        Some("|∂ log σ| too large: shrink window_a or raise window_eps".to_string())
    };
    WindowReport {
        c,
        eps_prime,
        a,
        sigma_at_zero: sigma0,
        min_sigma,
        max_log_derivative: max_log,
        log_variation,
        positivity,
        log_bound,
        pass,
        remedy,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::propagators::normal_ordered_diagonal;

    fn bg(n_modes: usize, n_t: usize, alpha: f64) -> Background {
        let mut cfg = RunConfig::default_config().background;
        cfg.n_modes = n_modes;
        cfg.n_t = n_t;
        cfg.alpha = alpha;
        Background::build(&cfg).unwrap()
    }

    #[test]
    fn zero_state_gives_zero_flow() {
        let b = bg(4, 128, 0.0);
        for m2 in [-0.3, 0.0, 0.4] {
            let p = flow_point(&b, m2).unwrap();
            assert_eq!((p.g, p.sigma, p.a2), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn flow_at_zero_closed_form() {
        let b = bg(6, 256, 0.7);
        let sum_c: f64 = (0..b.basis.len()).map(|m| b.state_weight(m)).sum();
        let g0 = flow_value(&b, 0.0).unwrap();
        assert!((g0 + 0.5 * b.epsilon * sum_c).abs() < 1e-13 * sum_c.abs());
        let d = normal_ordered_diagonal(&b, 0.0).unwrap();
        for v in d {
            assert!((v - sum_c).abs() < 1e-13);
        }
    }

    #[test]
    fn negative_alpha_gives_positive_flow() {
        let b = bg(4, 128, -0.5);
        assert!(flow_value(&b, 0.0).unwrap() > 0.0);
    }

    #[test]
    fn linear_in_alpha() {
        let b1 = bg(4, 128, 0.3);
        let b2 = b1.with_alpha(0.6).unwrap();
        for m2 in [-0.2, 0.1] {
            let p1 = flow_point(&b1, m2).unwrap();
            let p2 = flow_point(&b2, m2).unwrap();
            assert_eq!(p2.g, 2.0 * p1.g);
            assert_eq!(p2.sigma, 2.0 * p1.sigma);
            assert_eq!(p2.a2, 2.0 * p1.a2);
        }
    }

    #[test]
    fn sigma_is_flow_derivative() {
        let b = bg(4, 256, -1.0);
        let h = 1e-4;
        for m2 in [-0.3, 0.0, 0.25] {
            let p = flow_point(&b, m2).unwrap();
            let gp = flow_value(&b, m2 + h).unwrap();
            let gm = flow_value(&b, m2 - h).unwrap();
            let fd = (gp - gm) / (2.0 * h);
            assert!((p.sigma - fd).abs() < 1e-7 * p.sigma.abs().max(1e-3), "{} vs {fd}", p.sigma);
            let sp = sigma_value(&b, m2 + h).unwrap();
            let sm = sigma_value(&b, m2 - h).unwrap();
            let fd2 = (sp - sm) / (2.0 * h);
            assert!((p.a2 - fd2).abs() < 1e-6 * p.a2.abs().max(1e-3), "{} vs {fd2}", p.a2);
        }
    }

    #[test]
    fn table_needs_four_points() {
        let b = bg(2, 64, 1.0);
        let err = FlowTable::tabulate(&b, 1).unwrap_err();
        assert!(err.to_string().contains("need ≥ 4 points for cubic spline"));
    }

    #[test]
    fn table_is_deterministic_and_rejects_extrapolation() {
        let b = bg(3, 96, -1.0);
        let t1 = FlowTable::tabulate(&b, 11).unwrap();
        let t2 = FlowTable::tabulate(&b, 11).unwrap();
        assert_eq!(t1, t2);
        assert!(t1.flow(b.m2_max * 1.01).is_err());
        assert!(t1.sigma(-b.m2_max * 1.01).is_err());
        assert_eq!(t1.background_hash, b.hash());
    }

    #[test]
    fn window_verdicts() {
        let b = bg(4, 128, 1.0);
        let t = FlowTable::tabulate(&b, 21).unwrap();
        let s0 = t.sigma(0.0).unwrap();
        assert!(s0 > 0.0);
        let ok = check_sigma_window(&t, 0.5 * s0, 10.0, 0.1);
        assert!(ok.pass, "{ok:?}");
        let flipped = FlowTable::tabulate(&b.with_alpha(-1.0).unwrap(), 21).unwrap();
        let bad = check_sigma_window(&flipped, 0.5 * s0, 10.0, 0.1);
        assert!(!bad.pass);
        assert!(bad.remedy.unwrap().contains("flip the sign"));
        let degenerate = check_sigma_window(&t, 0.999 * s0, 1e-9, 0.0);
        assert!(degenerate.pass);
        let too_wide = check_sigma_window(&t, 0.5 * s0, 10.0, 2.0);
        assert!(!too_wide.pass);
    }
}
