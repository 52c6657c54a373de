//! The linearised flow operator `L v = ∂ₖv − σ·∂²_φv` on `F₀` and its
//! inverse by implicit Euler marching in `k`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graded::{fit_bound, FlowGrid, GridField, Role, Seminorms, TameReport};
use crate::numerics::solve_tridiagonal;

/// `σ` sampled on the grid; positivity is checked on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductivityField {
    pub field: GridField,
    pub c: f64,
}

impl ConductivityField {
    /// Refuses fields with any value below `c`, reporting the first
    /// offending node.
    pub fn new(field: GridField, c: f64) -> Result<Self> {
        let nk = field.grid.n_k;
        for (idx, &s) in field.values.iter().enumerate() {
            if !(s >= c) {
                return Err(Error::SigmaWindow {
                    sigma: s,
                    c,
                    i: idx / nk,
                    j: idx % nk,
                });
            }
        }
        if !(c > 0.0) {
            return Err(Error::SigmaWindow {
                sigma: c,
                c,
                i: 0,
                j: 0,
            });
        }
        Ok(Self { field, c })
    }

    pub fn constant(grid: FlowGrid, sigma: f64) -> Result<Self> {
        Self::new(GridField::from_fn(grid, Role::Source, |_, _| sigma), sigma)
    }

    pub fn grid(&self) -> &FlowGrid {
        &self.field.grid
    }
}

/// `∂ₖv − σ⊙∂²_φv` with backward differences in `k` and centered
/// differences in `φ`, on interior φ nodes of rows `j ≥ 1`. All other
/// nodes are zero.
pub fn apply_linearized(sigma: &ConductivityField, v: &GridField) -> GridField {
    let g = v.grid;
    assert_eq!(g, *sigma.grid(), "σ and v on different grids");
    let (np, nk) = (g.n_phi, g.n_k);
    let (dk, h2) = (g.dk(), g.dphi().powi(2));
    let mut out = GridField::zeros(g, Role::Residual);
    for i in 1..np - 1 {
        for j in 1..nk {
            let lap = (v.get(i + 1, j) - 2.0 * v.get(i, j) + v.get(i - 1, j)) / h2;
            out.set(i, j, (v.get(i, j) - v.get(i, j - 1)) / dk - sigma.field.get(i, j) * lap);
        }
    }
    out
}

/// `E(g)`: march `(1 − Δk·σ·∂²_φ)v_j = v_{j−1} + Δk·g_j` from `v_0 = 0`
/// with homogeneous Dirichlet ends. The result is exactly in `F₀`.
pub fn solve_linearized(sigma: &ConductivityField, g: &GridField) -> Result<GridField> {
    let grid = g.grid;
    if grid != *sigma.grid() {
        return Err(Error::Shape("σ and g on different grids".into()));
    }
    if !g.is_finite() {
        return Err(Error::Shape("non-finite source".into()));
    }
    let (np, nk) = (grid.n_phi, grid.n_k);
    let m = np - 2;
    let dk = grid.dk();
    let lambda = dk / grid.dphi().powi(2);
    let mut v = GridField::zeros(grid, Role::Solution);
    let mut lower = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    for j in 1..nk {
        for r in 0..m {
            let i = r + 1;
            let s = lambda * sigma.field.get(i, j);
            lower[r] = -s;
            diag[r] = 1.0 + 2.0 * s;
            upper[r] = -s;
            rhs[r] = v.get(i, j - 1) + dk * g.get(i, j);
        }
        solve_tridiagonal(&lower, &diag, &upper, &mut rhs);
        for (r, x) in rhs.iter().enumerate() {
            v.set(r + 1, j, *x);
        }
    }
    Ok(v)
}

/// Interior-node comparison used for round trips: `max |a − b|` over
/// interior φ nodes of rows `j ≥ 1`.
pub fn interior_sup_diff(a: &GridField, b: &GridField) -> f64 {
    let g = a.grid;
    let mut m: f64 = 0.0;
    for i in 1..g.n_phi - 1 {
        for j in 1..g.n_k {
            m = m.max((a.get(i, j) - b.get(i, j)).abs());
        }
    }
    m
}

pub fn interior_sup(a: &GridField) -> f64 {
    let g = a.grid;
    let mut m: f64 = 0.0;
    for i in 1..g.n_phi - 1 {
        for j in 1..g.n_k {
            m = m.max(a.get(i, j).abs());
        }
    }
    m
}

/// `‖v‖₀ / ‖g‖₀` against the bound `(b − a)` with a round-off allowance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MaxPrincipleReport {
    pub ratio: f64,
    pub c_max: f64,
    pub pass: bool,
}

pub fn max_principle_certificate(sigma: &ConductivityField, g: &GridField, v: &GridField) -> MaxPrincipleReport {
    let grid = sigma.grid();
    let c_max = (grid.k_max - grid.k_min) * (1.0 + 1e-9);
    let gn = interior_sup(g);
    let ratio = if gn == 0.0 {
        if v.sup() == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        v.sup() / gn
    };
    MaxPrincipleReport {
        ratio,
        c_max,
        pass: ratio <= c_max,
    }
}

/// Fit `‖E(g)‖ₙ ≤ C(‖g‖ₙ + ‖g‖₀·‖σ‖ₙ₊₁)` over `(σ, g)` samples.
pub fn inverse_graded_check(
    samples: &[(ConductivityField, GridField)],
    n: usize,
    norms: &Seminorms,
) -> Result<TameReport> {
    let pairs = crate::par::try_map_range(samples.len(), |s| {
        let (sigma, g) = &samples[s];
        let v = solve_linearized(sigma, g)?;
        let gn = norms.norms_up_to(g, n)?;
        let rhs = gn[n] + gn[0] * norms.norm(&sigma.field, n + 1)?;
        Ok::<_, Error>((norms.norm(&v, n)?, rhs))
    })?;
    let mut rep = fit_bound("inverse", n, 1, &pairs);
    rep.label = format!("inverse n={n}");
    Ok(rep)
}

/// Continuum solution of `∂ₖv − σ∂²_φv = sin(πφ̂)` with `v(φ, a) = 0` and
/// Dirichlet ends: `sin(πφ̂)·(1 − e^{−λ(k−a)})/λ`, `λ = σπ²/|X|²`.
pub fn heat_oracle(grid: &FlowGrid, sigma: f64) -> GridField {
    let lambda = sigma * (std::f64::consts::PI / grid.width()).powi(2);
    let mut v = GridField::zeros(*grid, Role::Solution);
    for i in 0..grid.n_phi {
        let s = (std::f64::consts::PI * grid.phi_hat(i)).sin();
        for j in 0..grid.n_k {
            let dk = grid.k(j) - grid.k_min;
            v.set(i, j, s * (-(-lambda * dk).exp_m1()) / lambda);
        }
    }
    v.project_f0();
    v
}

/// Fully discrete solution for the same source: the grid sine is an
/// eigenvector of the three-point Laplacian with eigenvalue `−μ`, and each
/// implicit step multiplies the transient by `1/(1 + Δk·σ·μ)`.
pub fn heat_oracle_discrete(grid: &FlowGrid, sigma: f64) -> GridField {
    let h = grid.dphi();
    let mu = 4.0 / (h * h) * (std::f64::consts::PI * h / (2.0 * grid.width())).sin().powi(2);
    let q = 1.0 / (1.0 + grid.dk() * sigma * mu);
    let mut v = GridField::zeros(*grid, Role::Solution);
    for i in 0..grid.n_phi {
        let s = (std::f64::consts::PI * grid.phi_hat(i)).sin();
        for j in 0..grid.n_k {
            v.set(i, j, s * (1.0 - q.powi(j as i32)) / (sigma * mu));
        }
    }
    v.project_f0();
    v
}

pub fn sine_source(grid: &FlowGrid) -> GridField {
    GridField::from_fn(*grid, Role::Source, |phi, _| {
        (std::f64::consts::PI * (phi - grid.phi_min) / grid.width()).sin()
    })
}
