//! INI configuration. Sections: `[spacetime]`, `[cutoff]`, `[regulator]`,
//! `[state]`, `[grid]`, `[boundary]`, `[solver]`, `[verify]`, `[output]`.
//! Keys are lowercase snake_case. Every value that affects numerics enters
//! the content hash; the output directory does not.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ini::Ini;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// The configuration shipped with the crate.
pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.ini");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffShape {
    /// C^∞ plateau bump.
    Smooth,
    /// Indicator of `[t1, t2]` with half values at the ends (test hook).
    Indicator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundConfig {
    pub circumference: f64,
    pub mass: f64,
    pub n_modes: usize,
    pub include_zero_mode: bool,
    pub t_min: f64,
    pub t_max: f64,
    pub n_t: usize,
    pub t1: f64,
    pub t2: f64,
    pub plateau: f64,
    pub cutoff_shape: CutoffShape,
    pub k0: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub decay: f64,
    pub m2_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableConfig {
    pub m2_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub phi_min: f64,
    pub phi_max: f64,
    pub n_phi: usize,
    pub k_min: f64,
    pub k_max: f64,
    pub n_k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaRule {
    /// β(k) = ψ(edge): boundary frozen in k.
    Constant,
    /// β(k) = ψ(edge) + 𝒢(ψ''(edge))·(k − a): boundary follows the local flow.
    Flow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConfig {
    /// ψ(φ) = ½·curvature·φ² + ripple·sin⁶(freq·π·φ̂), φ̂ ∈ [0, 1].
    pub psi_curvature: f64,
    pub psi_ripple: f64,
    pub psi_ripple_freq: u32,
    pub beta: BetaRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub c_step: f64,
    pub dt: f64,
    pub t_max: f64,
    pub tol_rel: f64,
    pub tol_abs: f64,
    pub patience: usize,
    pub r0: f64,
    pub n_max: usize,
    pub window_c: f64,
    pub window_eps: f64,
    pub window_a: f64,
    pub march_tol: f64,
    pub march_max_iter: usize,
    pub neumann_tol: f64,
    pub neumann_cap: usize,
    pub snapshot_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub seed: u64,
    pub samples: usize,
    pub inject_negative_sigma: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub kernel_cache: bool,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub background: BackgroundConfig,
    pub table: TableConfig,
    pub grid: GridConfig,
    pub boundary: BoundaryConfig,
    pub solver: SolverConfig,
    pub verify: VerifyConfig,
    #[serde(skip)]
    pub output: Option<OutputConfig>,
}

struct Sections {
    map: BTreeMap<String, BTreeMap<String, String>>,
}

impl Sections {
    fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.map
            .get(section)
            .and_then(|s| s.get(key))
            .map(|s| s.as_str())
    }

    fn f64_or(&self, section: &str, key: &str, default: Option<f64>) -> Result<f64> {
        match self.raw(section, key) {
            Some(v) => v
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("[{section}] {key}: not a number: {v:?}"))),
            None => default.ok_or_else(|| Error::Config(format!("[{section}] {key} required"))),
        }
    }

    fn usize_or(&self, section: &str, key: &str, default: Option<usize>) -> Result<usize> {
        match self.raw(section, key) {
            Some(v) => v
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("[{section}] {key}: not a count: {v:?}"))),
            None => default.ok_or_else(|| Error::Config(format!("[{section}] {key} required"))),
        }
    }

    fn bool_or(&self, section: &str, key: &str, default: bool) -> Result<bool> {
        match self.raw(section, key).map(|s| s.trim().to_ascii_lowercase()) {
            None => Ok(default),
            Some(v) => match v.as_str() {
                "true" | "yes" | "1" | "on" => Ok(true),
                "false" | "no" | "0" | "off" => Ok(false),
                _ => Err(Error::Config(format!("[{section}] {key}: not a boolean: {v:?}"))),
            },
        }
    }
}

impl RunConfig {
    pub fn from_ini_str(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut map = BTreeMap::new();
        for (sec, props) in ini.iter() {
            let Some(sec) = sec else { continue };
            let entry: &mut BTreeMap<String, String> = map.entry(sec.to_string()).or_default();
            for (k, v) in props.iter() {
                entry.insert(k.to_string(), v.to_string());
            }
        }
        Self::from_sections(&Sections { map })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_ini_str(&text)?;
        // a relative output dir is taken relative to the config file
        if let Some(out) = cfg.output.as_mut() {
            if out.dir.is_relative() {
                if let Some(parent) = path.parent() {
                    out.dir = parent.join(&out.dir);
                }
            }
        }
        Ok(cfg)
    }

    pub fn default_config() -> Self {
        Self::from_ini_str(DEFAULT_CONFIG).expect("shipped default config parses")
    }

    fn from_sections(s: &Sections) -> Result<Self> {
        let shape = match s.raw("cutoff", "shape").map(|v| v.trim()) {
            None | Some("smooth") => CutoffShape::Smooth,
            Some("indicator") => CutoffShape::Indicator,
            Some(other) => return Err(Error::Config(format!("[cutoff] shape: unknown {other:?}"))),
        };
        let epsilon = match s.raw("regulator", "epsilon") {
            None => return Err(Error::Config("regulator slope required".into())),
            Some(_) => s.f64_or("regulator", "epsilon", None)?,
        };
        let background = BackgroundConfig {
            circumference: s.f64_or("spacetime", "circumference", None)?,
            mass: s.f64_or("spacetime", "mass", None)?,
            n_modes: s.usize_or("spacetime", "n_modes", None)?,
            include_zero_mode: s.bool_or("spacetime", "include_zero_mode", true)?,
            t_min: s.f64_or("grid", "t_min", None)?,
            t_max: s.f64_or("grid", "t_max", None)?,
            n_t: s.usize_or("grid", "n_t", None)?,
            t1: s.f64_or("cutoff", "t1", None)?,
            t2: s.f64_or("cutoff", "t2", None)?,
            plateau: s.f64_or("cutoff", "plateau", Some(0.5))?,
            cutoff_shape: shape,
            k0: s.f64_or("regulator", "k0", Some(0.0))?,
            epsilon,
            alpha: s.f64_or("state", "alpha", None)?,
            decay: s.f64_or("state", "decay", None)?,
            m2_max: s.f64_or("grid", "m2_max", Some(0.5))?,
        };
        let table = TableConfig {
            m2_points: s.usize_or("grid", "m2_points", Some(101))?,
        };
        let grid = GridConfig {
            phi_min: s.f64_or("grid", "phi_min", Some(-1.0))?,
            phi_max: s.f64_or("grid", "phi_max", Some(1.0))?,
            n_phi: s.usize_or("grid", "n_phi", Some(129))?,
            k_min: s.f64_or("grid", "k_min", Some(1.0))?,
            k_max: s.f64_or("grid", "k_max", Some(1.5))?,
            n_k: s.usize_or("grid", "n_k", Some(129))?,
        };
        let beta = match s.raw("boundary", "beta").map(|v| v.trim()) {
            None | Some("flow") => BetaRule::Flow,
            Some("constant") => BetaRule::Constant,
            Some(other) => return Err(Error::Config(format!("[boundary] beta: unknown {other:?}"))),
        };
        let freq = s.usize_or("boundary", "psi_ripple_freq", Some(1))?;
        let boundary = BoundaryConfig {
            psi_curvature: s.f64_or("boundary", "psi_curvature", Some(0.0))?,
            psi_ripple: s.f64_or("boundary", "psi_ripple", Some(0.0))?,
            psi_ripple_freq: u32::try_from(freq)
                .map_err(|_| Error::Config("[boundary] psi_ripple_freq too large".into()))?,
            beta,
        };
        let snapshot_times = match s.raw("solver", "snapshot_times") {
            None => Vec::new(),
            Some(v) if v.trim().is_empty() => Vec::new(),
            Some(v) => v
                .split(',')
                .map(|x| {
                    x.trim().parse::<f64>().map_err(|_| {
                        Error::Config(format!("[solver] snapshot_times: bad entry {x:?}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let solver = SolverConfig {
            c_step: s.f64_or("solver", "c_step", Some(1.0))?,
            dt: s.f64_or("solver", "dt", Some(0.1))?,
            t_max: s.f64_or("solver", "t_max", Some(40.0))?,
            tol_rel: s.f64_or("solver", "tol_rel", Some(1e-6))?,
            tol_abs: s.f64_or("solver", "tol_abs", Some(1e-13))?,
            patience: s.usize_or("solver", "patience", Some(40))?,
            r0: s.f64_or("solver", "r0", Some(16.0))?,
            n_max: s.usize_or("solver", "n_max", Some(6))?,
            window_c: s.f64_or("solver", "window_c", None)?,
            window_eps: s.f64_or("solver", "window_eps", None)?,
            window_a: s.f64_or("solver", "window_a", None)?,
            march_tol: s.f64_or("solver", "march_tol", Some(1e-14))?,
            march_max_iter: s.usize_or("solver", "march_max_iter", Some(50))?,
            neumann_tol: s.f64_or("solver", "neumann_tol", Some(1e-13))?,
            neumann_cap: s.usize_or("solver", "neumann_cap", Some(400))?,
            snapshot_times,
        };
        let seed = match std::env::var("CSFLOW_SEED").ok() {
            Some(v) => v
                .trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("CSFLOW_SEED: not an integer: {v:?}")))?,
            None => s.usize_or("verify", "seed", Some(20_240_917))? as u64,
        };
        let verify = VerifyConfig {
            seed,
            samples: s.usize_or("verify", "samples", Some(64))?,
            inject_negative_sigma: s.bool_or("verify", "inject_negative_sigma", false)?,
        };
        let output = OutputConfig {
            dir: PathBuf::from(s.raw("output", "dir").unwrap_or("csflow-out").trim()),
            kernel_cache: s.bool_or("output", "kernel_cache", false)?,
        };
        let cfg = RunConfig {
            background,
            table,
            grid,
            boundary,
            solver,
            verify,
            output: Some(output),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let s = &self.solver;
        if !(s.dt > 0.0 && s.c_step > 0.0 && s.dt * s.c_step <= 1.0) {
            return Err(Error::Config("[solver] need dt > 0, c_step > 0, dt·c_step ≤ 1".into()));
        }
        if !(s.window_c > 0.0 && s.window_eps > 0.0 && s.window_a >= 0.0) {
            return Err(Error::Config("[solver] window_c, window_eps must be > 0, window_a ≥ 0".into()));
        }
        if s.r0 <= 0.0 {
            return Err(Error::Config("[solver] r0 must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 over every numerics-relevant value.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serialises");
        hex_digest(canon.as_bytes())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output
            .as_ref()
            .map(|o| o.dir.clone())
            .unwrap_or_else(|| PathBuf::from("csflow-out"))
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
