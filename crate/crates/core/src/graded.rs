//! Fields on the rectangle `X × [a, b]`, the graded sup-seminorms, the
//! cosine-transform smoothing family `Sₜ`, the boundary lift `u_b` and an
//! empirical tame-estimate fit.

use std::sync::Arc;

use rustdct::{Dct1, DctPlanner};
use serde::Serialize;

use crate::background::ModeBasis;
use crate::config::{BetaRule, BoundaryConfig, GridConfig};
use crate::error::{Error, Result};
use crate::flowfn::FlowTable;
use crate::numerics::{fd_weights, smooth_step};

/// Uniform grid on `[φ_min, φ_max] × [a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowGrid {
    pub phi_min: f64,
    pub phi_max: f64,
    pub n_phi: usize,
    pub k_min: f64,
    pub k_max: f64,
    pub n_k: usize,
}

impl FlowGrid {
    pub fn new(phi_min: f64, phi_max: f64, n_phi: usize, k_min: f64, k_max: f64, n_k: usize) -> Result<Self> {
        if n_phi < 9 || n_k < 9 {
            return Err(Error::Config(format!(
                "flow grid needs at least 9 points per axis, got {n_phi}×{n_k}"
            )));
        }
        if !(phi_max > phi_min) {
            return Err(Error::Config("flow grid needs phi_max > phi_min".into()));
        }
        if !(k_max > k_min && k_min > 0.0) {
            return Err(Error::Config("flow grid needs b > a > 0".into()));
        }
        Ok(Self {
            phi_min,
            phi_max,
            n_phi,
            k_min,
            k_max,
            n_k,
        })
    }

    pub fn from_config(g: &GridConfig) -> Result<Self> {
        Self::new(g.phi_min, g.phi_max, g.n_phi, g.k_min, g.k_max, g.n_k)
    }

    pub fn dphi(&self) -> f64 {
        (self.phi_max - self.phi_min) / (self.n_phi - 1) as f64
    }

    pub fn dk(&self) -> f64 {
        (self.k_max - self.k_min) / (self.n_k - 1) as f64
    }

    pub fn phi(&self, i: usize) -> f64 {
        self.phi_min + i as f64 * self.dphi()
    }

    pub fn k(&self, j: usize) -> f64 {
        self.k_min + j as f64 * self.dk()
    }

    /// `φ̂ ∈ [0, 1]`
    pub fn phi_hat(&self, i: usize) -> f64 {
        i as f64 / (self.n_phi - 1) as f64
    }

    pub fn width(&self) -> f64 {
        self.phi_max - self.phi_min
    }

    pub fn len(&self) -> usize {
        self.n_phi * self.n_k
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// What a field represents; `Solution` fields live in `F₀`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Solution,
    Lift,
    Source,
    Residual,
}

/// Real values on a [`FlowGrid`], stored φ-major: `values[i * n_k + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub grid: FlowGrid,
    pub role: Role,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: FlowGrid, role: Role) -> Self {
        Self {
            grid,
            role,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: FlowGrid, role: Role, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = Self::zeros(grid, role);
        for i in 0..grid.n_phi {
            for j in 0..grid.n_k {
                out.values[i * grid.n_k + j] = f(grid.phi(i), grid.k(j));
            }
        }
        out
    }

    pub fn from_values(grid: FlowGrid, role: Role, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "{} values for a {}×{} grid",
                values.len(),
                grid.n_phi,
                grid.n_k
            )));
        }
        Ok(Self { grid, role, values })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.n_k + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.grid.n_k + j] = v;
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    /// `‖u‖₀`: the sup over grid nodes.
    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            grid: self.grid,
            role: self.role,
            values: self.values.iter().map(|v| s * v).collect(),
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.grid, other.grid, "fields on different grids");
        Self {
            grid: self.grid,
            role: self.role,
            values: self.values.iter().zip(&other.values).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    /// Zero the `k = a` row and the two φ-boundary rows.
    pub fn project_f0(&mut self) {
        let (np, nk) = (self.grid.n_phi, self.grid.n_k);
        for i in 0..np {
            self.values[i * nk] = 0.0;
        }
        for j in 0..nk {
            self.values[j] = 0.0;
            self.values[(np - 1) * nk + j] = 0.0;
        }
    }

    pub fn is_f0(&self) -> bool {
        let mut c = self.clone();
        c.project_f0();
        c.values == self.values
    }

    /// Centered `∂²_φ` at interior φ nodes, zero on the φ boundary.
    pub fn d2_phi(&self) -> Self {
        let (np, nk) = (self.grid.n_phi, self.grid.n_k);
        let h2 = self.grid.dphi().powi(2);
        let mut out = Self::zeros(self.grid, Role::Residual);
        for i in 1..np - 1 {
            for j in 0..nk {
                out.values[i * nk + j] =
                    (self.get(i + 1, j) - 2.0 * self.get(i, j) + self.get(i - 1, j)) / h2;
            }
        }
        out
    }

    /// Mixed finite-difference derivative `∂_φ^p ∂_k^q`.
    pub fn derivative(&self, p: usize, q: usize) -> Result<Self> {
        let dphi = AxisStencils::new(self.grid.n_phi, self.grid.dphi(), p)?;
        let dk = AxisStencils::new(self.grid.n_k, self.grid.dk(), q)?;
        Ok(dk.apply_k(&dphi.apply_phi(self)))
    }
}

/// Per-node finite-difference stencils for one derivative order on one axis.
#[derive(Debug, Clone)]
struct AxisStencils {
    order: usize,
    /// `(first node, weights)` per grid node
    stencils: Vec<(usize, Vec<f64>)>,
}

fn stencil_sizes(order: usize) -> (usize, usize) {
    let r = order.div_ceil(2);
    let centred = 2 * r + 1;
    (centred, centred.max(order + 2))
}

impl AxisStencils {
    fn new(n: usize, h: f64, order: usize) -> Result<Self> {
        if order == 0 {
            return Ok(Self {
                order,
                stencils: Vec::new(),
            });
        }
        let (centred, one_sided) = stencil_sizes(order);
        if n < one_sided {
            return Err(Error::OrderTooLarge {
                order,
                points: n,
                max: max_order_for(n),
            });
        }
        let half = centred / 2;
        let mut stencils = Vec::with_capacity(n);
        for i in 0..n {
            let (start, size) = if i >= half && i + half < n {
                (i - half, centred)
            } else {
                let start = if i < half { 0 } else { n - one_sided };
                (start, one_sided)
            };
            let xs: Vec<f64> = (start..start + size).map(|m| (m as f64 - i as f64) * h).collect();
            stencils.push((start, fd_weights(0.0, &xs, order)));
        }
        Ok(Self { order, stencils })
    }

    fn apply_phi(&self, f: &GridField) -> GridField {
        if self.order == 0 {
            return f.clone();
        }
        let nk = f.grid.n_k;
        let mut out = GridField::zeros(f.grid, Role::Residual);
        for (i, (start, w)) in self.stencils.iter().enumerate() {
            for j in 0..nk {
                let mut acc = 0.0;
                for (m, wm) in w.iter().enumerate() {
                    acc += wm * f.values[(start + m) * nk + j];
                }
                out.values[i * nk + j] = acc;
            }
        }
        out
    }

    fn apply_k(&self, f: &GridField) -> GridField {
        if self.order == 0 {
            return f.clone();
        }
        let nk = f.grid.n_k;
        let mut out = GridField::zeros(f.grid, Role::Residual);
        for i in 0..f.grid.n_phi {
            let row = &f.values[i * nk..(i + 1) * nk];
            for (j, (start, w)) in self.stencils.iter().enumerate() {
                out.values[i * nk + j] = w.iter().zip(&row[*start..]).map(|(a, b)| a * b).sum();
            }
        }
        out
    }
}

fn max_order_for(n: usize) -> usize {
    (0..=n).take_while(|&p| stencil_sizes(p).1 <= n).last().unwrap_or(0)
}

/// Evaluates `‖·‖ₙ` for fields on one grid, caching the stencils.
#[derive(Debug, Clone)]
pub struct Seminorms {
    grid: FlowGrid,
    n_max: usize,
    phi: Vec<AxisStencils>,
    k: Vec<AxisStencils>,
}

impl Seminorms {
    pub fn new(grid: FlowGrid, n_max: usize) -> Result<Self> {
        let phi = (0..=n_max)
            .map(|p| AxisStencils::new(grid.n_phi, grid.dphi(), p))
            .collect::<Result<Vec<_>>>()?;
        let k = (0..=n_max)
            .map(|p| AxisStencils::new(grid.n_k, grid.dk(), p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { grid, n_max, phi, k })
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// `sup |∂_φ^p ∂_k^q u|` for every `p + q ≤ n`, indexed `[p][q]`.
    pub fn derivative_sups(&self, f: &GridField, n: usize) -> Result<Vec<Vec<f64>>> {
        self.check(f, n)?;
        let mut out = vec![vec![0.0; n + 1]; n + 1];
        for p in 0..=n {
            let fp = self.phi[p].apply_phi(f);
            for q in 0..=n - p {
                out[p][q] = self.k[q].apply_k(&fp).sup();
            }
        }
        Ok(out)
    }

    /// `‖u‖ₙ = Σ_{j ≤ n} Σ_{|α| = j} sup |D^α u|`.
    pub fn norm(&self, f: &GridField, n: usize) -> Result<f64> {
        Ok(self.derivative_sups(f, n)?.iter().flatten().sum())
    }

    /// `[‖u‖₀, …, ‖u‖ₙ]` from one pass.
    pub fn norms_up_to(&self, f: &GridField, n: usize) -> Result<Vec<f64>> {
        let sups = self.derivative_sups(f, n)?;
        let mut out = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        for total in 0..=n {
            for p in 0..=total {
                acc += sups[p][total - p];
            }
            out.push(acc);
        }
        Ok(out)
    }

    fn check(&self, f: &GridField, n: usize) -> Result<()> {
        if f.grid != self.grid {
            return Err(Error::Shape("field and seminorm grids differ".into()));
        }
        if n > self.n_max {
            return Err(Error::OrderTooLarge {
                order: n,
                points: self.grid.n_phi.min(self.grid.n_k),
                max: self.n_max,
            });
        }
        Ok(())
    }
}

/// `‖u‖ₙ` with `n_max = n`; prefer [`Seminorms`] when evaluating many fields.
pub fn seminorm(field: &GridField, n: usize) -> Result<f64> {
    Seminorms::new(field.grid, n)?.norm(field, n)
}

/// Slice Sobolev norm `‖h‖₂ + ‖Dh‖₂` of coefficients in the given basis
/// (`coeffs[m]` belongs to `basis.modes[m]`), `D` the spatial Laplacian.
pub fn slice_sobolev_norm(basis: &ModeBasis, coeffs: &[f64]) -> f64 {
    let l2 = coeffs.iter().map(|h| h * h).sum::<f64>().sqrt();
    let dl2 = coeffs
        .iter()
        .zip(&basis.modes)
        .map(|(h, m)| (m.laplacian * h).powi(2))
        .sum::<f64>()
        .sqrt();
    l2 + dl2
}

/// Roll-off `ρ`: one on `[0, 1]`, zero on `[2, ∞)`, C^∞ in between.
pub fn rolloff(x: f64) -> f64 {
    1.0 - smooth_step(x - 1.0)
}

/// Smoothing family `Sₜ` with cut-off radius `r(t) = r₀·eᵗ` in cosine
/// wavenumber space.
#[derive(Clone)]
pub struct SmoothingSchedule {
    pub r0: f64,
    dct_phi: Arc<dyn Dct1<f64>>,
    dct_k: Arc<dyn Dct1<f64>>,
}

impl std::fmt::Debug for SmoothingSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SmoothingSchedule").field("r0", &self.r0).finish()
    }
}

impl SmoothingSchedule {
    pub fn new(grid: &FlowGrid, r0: f64) -> Self {
        let mut planner = DctPlanner::new();
        Self {
            r0,
            dct_phi: planner.plan_dct1(grid.n_phi),
            dct_k: planner.plan_dct1(grid.n_k),
        }
    }

    pub fn radius(&self, t: f64) -> f64 {
        self.r0 * t.exp()
    }

    /// Cosine coefficients `c[p * n_k + q]` of a field (DCT-I on both axes,
    /// normalised so the inverse is [`Self::synthesise`]).
    pub fn analyse(&self, f: &GridField) -> Vec<f64> {
        let (np, nk) = (f.grid.n_phi, f.grid.n_k);
        let mut c = f.values.clone();
        for i in 0..np {
            self.dct_k.process_dct1(&mut c[i * nk..(i + 1) * nk]);
        }
        let mut col = vec![0.0; np];
        for j in 0..nk {
            for i in 0..np {
                col[i] = c[i * nk + j];
            }
            self.dct_phi.process_dct1(&mut col);
            for i in 0..np {
                c[i * nk + j] = col[i];
            }
        }
        let norm = 4.0 / ((np - 1) * (nk - 1)) as f64;
        c.iter_mut().for_each(|v| *v *= norm);
        c
    }

    pub fn synthesise(&self, grid: FlowGrid, role: Role, mut c: Vec<f64>) -> GridField {
        // DCT-I is its own inverse up to the factor (n − 1)/2 per axis
        let (np, nk) = (grid.n_phi, grid.n_k);
        for i in 0..np {
            self.dct_k.process_dct1(&mut c[i * nk..(i + 1) * nk]);
        }
        let mut col = vec![0.0; np];
        for j in 0..nk {
            for i in 0..np {
                col[i] = c[i * nk + j];
            }
            self.dct_phi.process_dct1(&mut col);
            for i in 0..np {
                c[i * nk + j] = col[i];
            }
        }
        GridField {
            grid,
            role,
            values: c,
        }
    }

    /// `Sₜ u`. `Solution` fields are projected back onto `F₀`.
    pub fn apply(&self, f: &GridField, t: f64) -> GridField {
        let (np, nk) = (f.grid.n_phi, f.grid.n_k);
        let r = self.radius(t);
        let nyquist = (((np - 1).pow(2) + (nk - 1).pow(2)) as f64).sqrt();
        if r >= nyquist {
            // full passband
            let mut out = f.clone();
            if f.role == Role::Solution {
                out.project_f0();
            }
            return out;
        }
        let mut c = self.analyse(f);
        for p in 0..np {
            for q in 0..nk {
                let rho = rolloff(((p * p + q * q) as f64).sqrt() / r);
                c[p * nk + q] *= rho;
            }
        }
        let mut out = self.synthesise(f.grid, f.role, c);
        if f.role == Role::Solution {
            out.project_f0();
        }
        out
    }
}

/// Boundary data: initial profile `ψ(φ)` on the `k = a` row and side data
/// `β(k)` on the two φ edges.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryData {
    pub psi: Vec<f64>,
    pub beta_left: Vec<f64>,
    pub beta_right: Vec<f64>,
}

impl BoundaryData {
    pub fn zero(grid: &FlowGrid) -> Self {
        Self {
            psi: vec![0.0; grid.n_phi],
            beta_left: vec![0.0; grid.n_k],
            beta_right: vec![0.0; grid.n_k],
        }
    }

    /// `ψ(φ) = ½κφ² + δ·sin⁶(pπφ̂)` with `β` frozen or following the local
    /// flow `ψ(edge) + 𝒢(ψ''(edge))·(k − a)`. The ripple vanishes to sixth
    /// order at the edges, so the edge data stay compatible with the flow
    /// well beyond the first corner condition.
    pub fn from_config(cfg: &BoundaryConfig, grid: &FlowGrid, table: &FlowTable) -> Result<Self> {
        let w = grid.width();
        let freq = cfg.psi_ripple_freq as f64 * std::f64::consts::PI;
        let psi_at = |i: usize| {
            let phi = grid.phi(i);
            0.5 * cfg.psi_curvature * phi * phi + cfg.psi_ripple * (freq * grid.phi_hat(i)).sin().powi(6)
        };
        // (sin⁶ x)'' = 30 sin⁴x cos²x − 6 sin⁶x
        let psi2_at = |i: usize| {
            let x = freq * grid.phi_hat(i);
            let (s, c) = x.sin_cos();
            cfg.psi_curvature + cfg.psi_ripple * (freq / w).powi(2) * (30.0 * s.powi(4) * c * c - 6.0 * s.powi(6))
        };
        let psi: Vec<f64> = (0..grid.n_phi).map(psi_at).collect();
        let edge = |i: usize| -> Result<Vec<f64>> {
            let slope = match cfg.beta {
                BetaRule::Constant => 0.0,
                BetaRule::Flow => table.flow(psi2_at(i))?,
            };
            Ok((0..grid.n_k).map(|j| psi[i] + slope * (grid.k(j) - grid.k_min)).collect())
        };
        let beta_left = edge(0)?;
        let beta_right = edge(grid.n_phi - 1)?;
        Ok(Self {
            psi,
            beta_left,
            beta_right,
        })
    }
}

/// The lift `u_b` and its smallness seminorms.
#[derive(Debug, Clone)]
pub struct Lift {
    pub field: GridField,
    pub norm2: f64,
    pub norm3: f64,
}

/// Transfinite interpolation of `ψ` (bottom edge) and `β` (side edges):
/// `u_b = ψ(φ) + (1 − φ̂)(β_L(k) − ψ_L) + φ̂(β_R(k) − ψ_R)`.
pub fn boundary_lift(data: &BoundaryData, grid: &FlowGrid) -> Result<Lift> {
    let (np, nk) = (grid.n_phi, grid.n_k);
    if data.psi.len() != np || data.beta_left.len() != nk || data.beta_right.len() != nk {
        return Err(Error::Shape("boundary data does not match the grid".into()));
    }
    let (psi_l, psi_r) = (data.psi[0], data.psi[np - 1]);
    let scale = 1.0 + data.psi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mismatch = (data.beta_left[0] - psi_l).abs().max((data.beta_right[0] - psi_r).abs());
    if mismatch > 1e-12 * scale {
        return Err(Error::Incompatible { mismatch });
    }
    let mut field = GridField::zeros(*grid, Role::Lift);
    for i in 0..np {
        let s = grid.phi_hat(i);
        for j in 0..nk {
            let v = data.psi[i] + (1.0 - s) * (data.beta_left[j] - psi_l) + s * (data.beta_right[j] - psi_r);
            field.set(i, j, v);
        }
    }
    let norms = Seminorms::new(*grid, 3)?.norms_up_to(&field, 3)?;
    Ok(Lift {
        field,
        norm2: norms[2],
        norm3: norms[3],
    })
}

/// Outcome of an empirical tame-estimate fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TameReport {
    pub label: String,
    pub n: usize,
    pub r: usize,
    pub constant: f64,
    pub train: usize,
    pub held_out: usize,
    pub violations: usize,
    /// largest held-out `lhs / (C·rhs)`
    pub worst_ratio: f64,
    pub pass: bool,
}

/// Slack applied to the trained constant before counting held-out
/// violations.
pub const TAME_SLACK: f64 = 1.10;

/// Fit `lhs ≤ C·rhs` on the even-indexed pairs and count held-out
/// violations of `lhs ≤ 1.1·C·rhs` on the odd-indexed ones.
pub fn fit_bound(label: &str, n: usize, r: usize, pairs: &[(f64, f64)]) -> TameReport {
    let ratio = |(lhs, rhs): (f64, f64)| if rhs > 0.0 { lhs / rhs } else if lhs > 0.0 { f64::INFINITY } else { 0.0 };
    let constant = pairs.iter().step_by(2).map(|&p| ratio(p)).fold(0.0, f64::max);
    let held: Vec<f64> = pairs.iter().skip(1).step_by(2).map(|&p| ratio(p)).collect();
    let bound = TAME_SLACK * constant;
    let violations = held.iter().filter(|&&q| q > bound).count();
    let worst_ratio = held
        .iter()
        .map(|q| if constant > 0.0 { q / constant } else if *q > 0.0 { f64::INFINITY } else { 0.0 })
        .fold(0.0, f64::max);
    TameReport {
        label: label.to_string(),
        n,
        r,
        constant,
        train: pairs.len().div_ceil(2),
        held_out: held.len(),
        violations,
        worst_ratio,
        pass: violations == 0 && constant.is_finite(),
    }
}

/// Tame fit of `‖P(u)‖ₙ ≤ C(1 + ‖u‖ₙ₊ᵣ)` over samples.
pub fn tame_fit<F>(samples: &[GridField], map: F, n: usize, r: usize, norms: &Seminorms) -> Result<TameReport>
where
    F: Fn(&GridField) -> Result<GridField> + Sync + Send,
{
    let pairs = crate::par::try_map_range(samples.len(), |s| {
        let u = &samples[s];
        let out = map(u)?;
        Ok::<_, Error>((norms.norm(&out, n)?, 1.0 + norms.norm(u, n + r)?))
    })?;
    Ok(fit_bound("tame", n, r, &pairs))
}
