//! The desk-scale spacetime: an ultrastatic cylinder `ℝ × S¹` of
//! circumference `L`, a uniform time grid, a C^∞ temporal cutoff `χ(t)`
//! (the spatially constant cutoff `f`), the regulator `q_k = (k₀ + εk)·χ`
//! and a mode-diagonal smooth state kernel.

use std::f64::consts::PI;

use serde::Serialize;

use crate::config::{hex_digest, BackgroundConfig, CutoffShape};
use crate::error::{Error, Result};
use crate::numerics::{smooth_step, trapezoid_weights};

/// Uniform time grid `t_i = t_min + i·Δt`, `i = 0..n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub n: usize,
}

impl TimeGrid {
    pub fn dt(&self) -> f64 {
        (self.t_max - self.t_min) / (self.n - 1) as f64
    }

    pub fn t(&self, i: usize) -> f64 {
        self.t_min + i as f64 * self.dt()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.t(i)).collect()
    }
}

/// Temporal cutoff: zero outside `[t1, t2]`, one on the central plateau of
/// relative width `plateau`, C^∞ transitions in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cutoff {
    pub t1: f64,
    pub t2: f64,
    pub plateau: f64,
    pub shape: CutoffShape,
}

impl Cutoff {
    pub fn plateau_bounds(&self) -> (f64, f64) {
        let mid = 0.5 * (self.t1 + self.t2);
        let half = 0.5 * self.plateau * (self.t2 - self.t1);
        (mid - half, mid + half)
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self.shape {
            CutoffShape::Indicator => {
                if t < self.t1 || t > self.t2 {
                    0.0
                } else if t == self.t1 || t == self.t2 {
                    0.5
                } else {
                    1.0
                }
            }
            CutoffShape::Smooth => {
                if t <= self.t1 || t >= self.t2 {
                    return 0.0;
                }
                let (p1, p2) = self.plateau_bounds();
                if t < p1 {
                    smooth_step((t - self.t1) / (p1 - self.t1))
                } else if t > p2 {
                    smooth_step((self.t2 - t) / (self.t2 - p2))
                } else {
                    1.0
                }
            }
        }
    }
}

/// One spatial mode: index `n`, frequency `ωₙ = sqrt(m₀² + (2πn/L)²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mode {
    pub index: i64,
    pub omega: f64,
    /// eigenvalue of the (positive) spatial Laplacian, `(2πn/L)²`
    pub laplacian: f64,
}

/// Real orthonormal harmonics on the circle, ordered by `|n|` (cosine
/// before sine at equal `|n|`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeBasis {
    pub circumference: f64,
    pub modes: Vec<Mode>,
}

impl ModeBasis {
    pub fn new(circumference: f64, mass: f64, n_modes: usize, include_zero: bool) -> Self {
        let mut modes = Vec::with_capacity(2 * n_modes + 1);
        let mode = |n: i64| {
            let kn = 2.0 * PI * n as f64 / circumference;
            Mode {
                index: n,
                omega: (mass * mass + kn * kn).sqrt(),
                laplacian: kn * kn,
            }
        };
        if include_zero {
            modes.push(mode(0));
        }
        for n in 1..=n_modes as i64 {
            modes.push(mode(n));
            modes.push(mode(-n));
        }
        Self {
            circumference,
            modes,
        }
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// `eₙ(x)`: `1/√L` for `n = 0`, `√(2/L)·cos` for `n > 0`, `√(2/L)·sin`
    /// for `n < 0`.
    pub fn harmonic(&self, n: i64, x: f64) -> f64 {
        let l = self.circumference;
        if n == 0 {
            return 1.0 / l.sqrt();
        }
        let arg = 2.0 * PI * n.unsigned_abs() as f64 * x / l;
        let amp = (2.0 / l).sqrt();
        if n > 0 {
            amp * arg.cos()
        } else {
            amp * arg.sin()
        }
    }

    /// Closed-form `∫_{S¹} eₙ e_m dx`.
    pub fn inner_product(&self, n: i64, m: i64) -> f64 {
        if n == m {
            1.0
        } else {
            0.0
        }
    }
}

/// Per-mode state kernel `wₙ(t, t') = cₙ·cos(ωₙ(t − t'))` with
/// `cₙ = α·exp(−ωₙ/Λ_w)/(2ωₙ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StateKernelModes {
    pub alpha: f64,
    pub decay: f64,
}

impl StateKernelModes {
    pub fn weight(&self, omega: f64) -> f64 {
        self.alpha * (-omega / self.decay).exp() / (2.0 * omega)
    }

    pub fn kernel(&self, omega: f64, t: f64, s: f64) -> f64 {
        self.weight(omega) * (omega * (t - s)).cos()
    }
}

/// Sampled `sin(ωt_i)`, `cos(ωt_i)` for one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeClock {
    pub omega: f64,
    pub sin: Vec<f64>,
    pub cos: Vec<f64>,
}

/// Fully resolved background. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Background {
    pub config: BackgroundConfig,
    pub basis: ModeBasis,
    pub time: TimeGrid,
    pub cutoff: Cutoff,
    pub k0: f64,
    pub epsilon: f64,
    pub state: StateKernelModes,
    pub m2_max: f64,
    /// `χ(t_i)`
    pub chi: Vec<f64>,
    /// trapezoid weights on the time grid
    pub weights: Vec<f64>,
    pub clocks: Vec<ModeClock>,
    hash: String,
}

impl Background {
    pub fn build(cfg: &BackgroundConfig) -> Result<Self> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(cfg.circumference > 0.0) {
            return bad("circumference must be positive");
        }
        if !(cfg.mass >= 0.0) {
            return bad("mass must be non-negative");
        }
        if cfg.mass == 0.0 && cfg.include_zero_mode {
            return bad("m₀ = 0 with the zero mode included: ω₀ = 0");
        }
        if !(cfg.epsilon > 0.0) {
            return bad("regulator slope ε must be positive");
        }
        if !(cfg.k0 >= 0.0) {
            return bad("k₀ must be non-negative");
        }
        if !(cfg.decay > 0.0) {
            return bad("state decay scale must be positive");
        }
        if !(cfg.plateau > 0.0 && cfg.plateau < 1.0) {
            return bad("plateau fraction must lie in (0, 1)");
        }
        if !(cfg.t1 < cfg.t2) {
            return bad("cutoff needs t1 < t2");
        }
        if cfg.n_t < 8 || !(cfg.t_max > cfg.t_min) {
            return bad("time grid needs n_t ≥ 8 and t_max > t_min");
        }
        if !(cfg.m2_max >= 0.0) {
            return bad("m2_max must be non-negative");
        }
        let time = TimeGrid {
            t_min: cfg.t_min,
            t_max: cfg.t_max,
            n: cfg.n_t,
        };
        let margin = 2.0 * time.dt();
        if cfg.t1 - cfg.t_min < margin * (1.0 - 1e-12) || cfg.t_max - cfg.t2 < margin * (1.0 - 1e-12) {
            return bad("cutoff support [t1, t2] must sit inside the time grid with ≥ 2 cells margin");
        }
        let basis = ModeBasis::new(cfg.circumference, cfg.mass, cfg.n_modes, cfg.include_zero_mode);
        if basis.is_empty() {
            return bad("mode basis is empty");
        }
        let cutoff = Cutoff {
            t1: cfg.t1,
            t2: cfg.t2,
            plateau: cfg.plateau,
            shape: cfg.cutoff_shape,
        };
        let ts = time.points();
        let chi: Vec<f64> = ts.iter().map(|&t| cutoff.eval(t)).collect();
        let weights = trapezoid_weights(time.n, time.dt());
        let clocks = basis
            .modes
            .iter()
            .map(|m| ModeClock {
                omega: m.omega,
                sin: ts.iter().map(|&t| (m.omega * t).sin()).collect(),
                cos: ts.iter().map(|&t| (m.omega * t).cos()).collect(),
            })
            .collect();
        let hash = hex_digest(serde_json::to_string(cfg).expect("serialises").as_bytes());
        Ok(Self {
            config: cfg.clone(),
            basis,
            time,
            cutoff,
            k0: cfg.k0,
            epsilon: cfg.epsilon,
            state: StateKernelModes {
                alpha: cfg.alpha,
                decay: cfg.decay,
            },
            m2_max: cfg.m2_max,
            chi,
            weights,
            clocks,
            hash,
        })
    }

    /// Same background with a different state amplitude.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        let mut cfg = self.config.clone();
        cfg.alpha = alpha;
        Self::build(&cfg)
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn n_t(&self) -> usize {
        self.time.n
    }

    pub fn cutoff_eval(&self, t: f64) -> f64 {
        self.cutoff.eval(t)
    }

    /// `∂ₖq_k(t) = ε·χ(t)`, independent of `k`.
    pub fn regulator_k_derivative(&self, t: f64) -> f64 {
        self.epsilon * self.cutoff.eval(t)
    }

    /// `‖f‖₁ = L·∫χ dt` by the trapezoid rule on the time grid.
    pub fn f_l1_norm(&self) -> f64 {
        self.basis.circumference * self.chi_integral()
    }

    pub fn chi_integral(&self) -> f64 {
        self.chi.iter().zip(&self.weights).map(|(c, w)| c * w).sum()
    }

    /// Per-mode state weight `cₙ`.
    pub fn state_weight(&self, mode: usize) -> f64 {
        self.state.weight(self.basis.modes[mode].omega)
    }

    /// Dense `wₙ(t_i, t_j)` for one mode.
    pub fn state_kernel_matrix(&self, mode: usize) -> Vec<f64> {
        let omega = self.basis.modes[mode].omega;
        let ts = self.time.points();
        let n = ts.len();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = self.state.kernel(omega, ts[i], ts[j]);
            }
        }
        out
    }

    pub fn check_m2(&self, m2: f64) -> Result<()> {
        if m2.is_finite() && m2.abs() <= self.m2_max * (1.0 + 1e-12) {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                m2,
                lo: -self.m2_max,
                hi: self.m2_max,
            })
        }
    }

    /// Position of the mode with spatial index `n`.
    pub fn mode_position(&self, n: i64) -> Option<usize> {
        self.basis.modes.iter().position(|m| m.index == n)
    }
}
