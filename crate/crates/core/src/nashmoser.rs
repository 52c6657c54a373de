//! The RG operator `RG(u) = ∂ₖ(u + u_b) − 𝒢(∂²_φ(u + u_b))` on `F₀`, the
//! smoothed continuous-Newton (Nash–Moser) iteration, an unsmoothed Newton
//! baseline and an implicit k-marching oracle.

use serde::Serialize;

use crate::config::{RunConfig, SolverConfig};
use crate::error::{Error, Result};
use crate::flowfn::{check_sigma_window, FlowTable, WindowReport};
use crate::graded::{boundary_lift, BoundaryData, FlowGrid, GridField, Lift, Role, Seminorms, SmoothingSchedule};
use crate::linsolve::{interior_sup, solve_linearized, ConductivityField};
use crate::numerics::solve_tridiagonal;

/// Seminorm order of the locality hypothesis `‖u‖₄ ≤ A`.
pub const LOCALITY_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    NashMoser,
    Newton,
    March,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::NashMoser => "nash-moser",
            Method::Newton => "newton",
            Method::March => "march",
        }
    }
}

/// `∂²_φũ` at node `(i, j)`; the φ-boundary rows reuse their interior
/// neighbour.
fn d2_at(u: &GridField, i: usize, j: usize) -> f64 {
    let n = u.grid.n_phi;
    let i = i.clamp(1, n - 2);
    (u.get(i + 1, j) - 2.0 * u.get(i, j) + u.get(i - 1, j)) / u.grid.dphi().powi(2)
}

fn table_range_error(table: &FlowTable, m2: f64, i: usize, j: usize) -> Error {
    Error::TableRange {
        m2,
        lo: table.lo(),
        hi: table.hi(),
        i,
        j,
    }
}

/// `RG(u)` with backward differences in `k` and centered `∂²_φ`, on
/// interior φ nodes of rows `j ≥ 1`; zero elsewhere.
pub fn rg_apply(u: &GridField, u_b: &GridField, table: &FlowTable) -> Result<GridField> {
    let ut = u.add(u_b);
    let g = ut.grid;
    let dk = g.dk();
    let rows = crate::par::try_map_range(g.n_phi - 2, |r| {
        let i = r + 1;
        let mut row = vec![0.0; g.n_k];
        for (j, out) in row.iter_mut().enumerate().skip(1) {
            let m2 = d2_at(&ut, i, j);
            let flow = table.flow(m2).map_err(|_| table_range_error(table, m2, i, j))?;
            *out = (ut.get(i, j) - ut.get(i, j - 1)) / dk - flow;
        }
        Ok::<_, Error>(row)
    })?;
    let mut out = GridField::zeros(g, Role::Residual);
    for (r, row) in rows.into_iter().enumerate() {
        out.values[(r + 1) * g.n_k..(r + 2) * g.n_k].copy_from_slice(&row);
    }
    Ok(out)
}

/// Fill the rows where the residual is undefined (`k = a` and the
/// φ-boundary) with their nearest defined neighbour, so the cosine
/// smoothing sees no artificial jump there.
fn extend_to_edges(r: &GridField) -> GridField {
    let g = r.grid;
    let (np, nk) = (g.n_phi, g.n_k);
    let mut out = r.clone();
    for i in 1..np - 1 {
        out.set(i, 0, r.get(i, 1));
    }
    for j in 0..nk {
        out.set(0, j, out.get(1, j));
        out.set(np - 1, j, out.get(np - 2, j));
    }
    out
}

/// `𝒢(∂²_φũ)` on every node; boundary rows reuse the nearest interior
/// second difference.
pub fn flow_field(ut: &GridField, table: &FlowTable) -> Result<GridField> {
    let g = ut.grid;
    let mut f = GridField::zeros(g, Role::Source);
    for i in 0..g.n_phi {
        for j in 0..g.n_k {
            let m2 = d2_at(ut, i, j);
            f.set(i, j, table.flow(m2).map_err(|_| table_range_error(table, m2, i, j))?);
        }
    }
    Ok(f)
}

/// `σ(∂²_φũ)` on every node, refusing values below `c`.
pub fn conductivity_at(ut: &GridField, table: &FlowTable, c: f64) -> Result<ConductivityField> {
    let g = ut.grid;
    let mut f = GridField::zeros(g, Role::Source);
    for i in 0..g.n_phi {
        for j in 0..g.n_k {
            let m2 = d2_at(ut, i, j);
            let s = table.sigma(m2).map_err(|_| table_range_error(table, m2, i, j))?;
            f.set(i, j, s);
        }
    }
    ConductivityField::new(f, c)
}

/// Everything the solvers share: grid, table, boundary data, lift and the
/// σ-window verdict.
#[derive(Debug, Clone)]
pub struct SolveSetup {
    pub grid: FlowGrid,
    pub table: FlowTable,
    pub data: BoundaryData,
    pub lift: Lift,
    pub window: WindowReport,
    pub solver: SolverConfig,
    pub norms: Seminorms,
}

impl SolveSetup {
    pub fn new(cfg: &RunConfig, table: FlowTable) -> Result<Self> {
        let grid = FlowGrid::from_config(&cfg.grid)?;
        let data = BoundaryData::from_config(&cfg.boundary, &grid, &table)?;
        Self::with_data(grid, table, data, &cfg.solver)
    }

    pub fn with_data(grid: FlowGrid, table: FlowTable, data: BoundaryData, solver: &SolverConfig) -> Result<Self> {
        let lift = boundary_lift(&data, &grid)?;
        let window = check_sigma_window(&table, solver.window_c, solver.window_eps, solver.window_a);
        let norms = Seminorms::new(grid, LOCALITY_ORDER.max(2))?;
        Ok(Self {
            grid,
            table,
            data,
            lift,
            window,
            solver: solver.clone(),
            norms,
        })
    }

    /// Hypotheses of the local existence result: σ-window and `‖u_b‖₃ ≤ A`.
    pub fn hypotheses(&self) -> Result<()> {
        if !self.window.pass {
            return Err(Error::Window(
                self.window
                    .remedy
                    .clone()
                    .unwrap_or_else(|| "window check failed".into()),
            ));
        }
        if self.lift.norm3 > self.solver.window_a {
            return Err(Error::Window(format!(
                "‖u_b‖₃ = {:.4e} exceeds A = {}: reduce the boundary ripple or |alpha|",
                self.lift.norm3, self.solver.window_a
            )));
        }
        Ok(())
    }

    fn tolerance(&self, res0_initial: f64) -> f64 {
        self.solver.tol_abs.max(self.solver.tol_rel * res0_initial)
    }
}

/// One row of the residual history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistoryRow {
    pub t: f64,
    pub res0: f64,
    pub res2: f64,
}

/// Outcome of a solve. Holds no timing information, so it is a
/// deterministic function of the configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub method: Method,
    pub converged: bool,
    pub iterations: usize,
    pub final_t: f64,
    pub tolerance: f64,
    pub res0_initial: f64,
    pub res0_final: f64,
    pub res2_final: f64,
    pub reduction: f64,
    pub history: Vec<HistoryRow>,
    /// `‖u‖₄` after each accepted iterate (including `u₀`)
    pub u4_history: Vec<f64>,
    pub u4_max: f64,
    /// pseudo-time at which `‖u‖₄` first exceeded `A`
    pub u4_exceeded_at: Option<f64>,
    pub window_a: f64,
    pub lift_norm2: f64,
    pub lift_norm3: f64,
    /// `‖ũ‖₀ … ‖ũ‖₄` of the returned field
    pub solution_seminorms: Vec<f64>,
}

/// The returned field `ũ = u + u_b`, the report and any snapshots taken at
/// the configured pseudo-times.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub solution: GridField,
    pub u: GridField,
    pub report: SolveReport,
    pub snapshots: Vec<(f64, GridField)>,
}

struct Tracker<'a> {
    setup: &'a SolveSetup,
    history: Vec<HistoryRow>,
    u4: Vec<f64>,
    u4_exceeded_at: Option<f64>,
}

impl<'a> Tracker<'a> {
    fn record(&mut self, t: f64, u: &GridField, r: &GridField) -> Result<f64> {
        let res0 = r.sup();
        let res2 = self.setup.norms.norm(r, 2)?;
        self.history.push(HistoryRow { t, res0, res2 });
        let u4 = self.setup.norms.norm(u, LOCALITY_ORDER)?;
        if u4 > self.setup.solver.window_a && self.u4_exceeded_at.is_none() {
            self.u4_exceeded_at = Some(t);
        }
        self.u4.push(u4);
        Ok(res0)
    }

    fn finish(self, method: Method, converged: bool, tolerance: f64, u: &GridField) -> Result<SolveOutcome> {
        let setup = self.setup;
        let solution = u.add(&setup.lift.field).with_role(Role::Lift);
        let first = self.history.first().copied().unwrap_or(HistoryRow {
            t: 0.0,
            res0: 0.0,
            res2: 0.0,
        });
        let last = self.history.last().copied().unwrap_or(first);
        let reduction = if last.res0 > 0.0 {
            first.res0 / last.res0
        } else {
            f64::INFINITY
        };
        let report = SolveReport {
            method,
            converged,
            iterations: self.history.len().saturating_sub(1),
            final_t: last.t,
            tolerance,
            res0_initial: first.res0,
            res0_final: last.res0,
            res2_final: last.res2,
            reduction,
            u4_max: self.u4.iter().copied().fold(0.0, f64::max),
            u4_history: self.u4,
            u4_exceeded_at: self.u4_exceeded_at,
            window_a: setup.solver.window_a,
            lift_norm2: setup.lift.norm2,
            lift_norm3: setup.lift.norm3,
            solution_seminorms: setup.norms.norms_up_to(&solution, LOCALITY_ORDER)?,
            history: self.history,
        };
        Ok(SolveOutcome {
            solution,
            u: u.clone(),
            report,
            snapshots: Vec::new(),
        })
    }
}

/// Pseudo-time stepping parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams {
    pub dt: f64,
    pub c_step: f64,
    pub t_max: f64,
    pub smoothing: bool,
}

impl StepParams {
    pub fn nash_moser(s: &SolverConfig) -> Self {
        Self {
            dt: s.dt,
            c_step: s.c_step,
            t_max: s.t_max,
            smoothing: true,
        }
    }

    /// Full Newton steps (`Δt·c = 1`) without smoothing.
    pub fn newton(s: &SolverConfig) -> Self {
        Self {
            dt: 1.0 / s.c_step,
            c_step: s.c_step,
            t_max: s.t_max,
            smoothing: false,
        }
    }
}

/// `u ← u − Δt·c·E(σ(Sₜu + u_b))[Sₜ RG(u)]` from `u₀ = 0` until
/// `‖RG(u)‖₀` falls below `max(tol_abs, tol_rel·‖RG(u₀)‖₀)`.
pub fn continuous_newton(setup: &SolveSetup, params: StepParams, method: Method) -> Result<SolveOutcome> {
    let grid = setup.grid;
    let cfg = &setup.solver;
    let smoother = SmoothingSchedule::new(&grid, cfg.r0);
    let u_b = &setup.lift.field;
    let mut u = GridField::zeros(grid, Role::Solution);
    let mut tracker = Tracker {
        setup,
        history: Vec::new(),
        u4: Vec::new(),
        u4_exceeded_at: None,
    };
    let mut r = rg_apply(&u, u_b, &setup.table)?;
    let res_initial = tracker.record(0.0, &u, &r)?;
    let tol = setup.tolerance(res_initial);
    let mut snapshots = Vec::new();
    let mut pending: Vec<f64> = cfg.snapshot_times.clone();
    pending.sort_by(f64::total_cmp);
    let mut pending = pending.into_iter().peekable();
    while pending.peek().is_some_and(|&s| s <= 0.0) {
        snapshots.push((pending.next().unwrap_or(0.0), u.add(u_b)));
    }
    if res_initial <= tol {
        let mut out = tracker.finish(method, true, tol, &u)?;
        out.snapshots = snapshots;
        return Ok(out);
    }
    setup.hypotheses()?;

    let step = params.dt * params.c_step;
    let mut t = 0.0;
    let mut best = res_initial;
    let mut since_best = 0;
    let mut res = res_initial;
    let mut steps = 0usize;
    while res > tol {
        if t >= params.t_max - 1e-12 {
            let mut out = tracker.finish(method, false, tol, &u)?;
            out.snapshots = snapshots;
            return Ok(out);
        }
        let (su, sr) = if params.smoothing {
            (smoother.apply(&u, t), smoother.apply(&extend_to_edges(&r), t))
        } else {
            (u.clone(), r.clone())
        };
        let sigma = conductivity_at(&su.add(u_b), &setup.table, cfg.window_c)?;
        let v = solve_linearized(&sigma, &sr)?;
        u = u.sub(&v.scale(step));
        u.project_f0();
        steps += 1;
        t = steps as f64 * params.dt;
        r = rg_apply(&u, u_b, &setup.table)?;
        res = tracker.record(t, &u, &r)?;
        while pending.peek().is_some_and(|&s| s <= t + 1e-12) {
            snapshots.push((pending.next().unwrap_or(t), u.add(u_b)));
        }
        if res < best {
            best = res;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                return Err(Error::Stalled {
                    t,
                    residual: res,
                    patience: cfg.patience,
                });
            }
        }
    }
    let mut out = tracker.finish(method, true, tol, &u)?;
    out.snapshots = snapshots;
    Ok(out)
}

pub fn nash_moser_solve(setup: &SolveSetup) -> Result<SolveOutcome> {
    continuous_newton(setup, StepParams::nash_moser(&setup.solver), Method::NashMoser)
}

pub fn newton_solve(setup: &SolveSetup) -> Result<SolveOutcome> {
    continuous_newton(setup, StepParams::newton(&setup.solver), Method::Newton)
}

/// Implicit Euler in `k` on `∂ₖũ = 𝒢(∂²_φũ)`: each step solves
/// `x − Δk·𝒢(δ²x) = ũ_{j−1}` by damped Newton with the tridiagonal
/// Jacobian `1 − Δk·σ·δ²`. Side values come from `β`, the first row from
/// `ψ`.
pub fn march_solve(setup: &SolveSetup) -> Result<SolveOutcome> {
    let grid = setup.grid;
    let cfg = &setup.solver;
    let table = &setup.table;
    let (np, nk) = (grid.n_phi, grid.n_k);
    let m = np - 2;
    let dk = grid.dk();
    let h2 = grid.dphi().powi(2);
    let mut ut = GridField::zeros(grid, Role::Lift);
    for i in 0..np {
        ut.set(i, 0, setup.data.psi[i]);
    }
    let mut x = vec![0.0; np];
    let mut lower = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut resid = vec![0.0; m];
    for j in 1..nk {
        // start from the previous row shifted by the lift's increment
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = ut.get(i, j - 1) + setup.lift.field.get(i, j) - setup.lift.field.get(i, j - 1);
        }
        x[0] = setup.data.beta_left[j];
        x[np - 1] = setup.data.beta_right[j];
        let eval = |x: &[f64], out: &mut [f64], sig: Option<&mut [f64]>| -> Result<f64> {
            let mut worst: f64 = 0.0;
            let mut sig = sig;
            for r in 0..m {
                let i = r + 1;
                let m2 = (x[i + 1] - 2.0 * x[i] + x[i - 1]) / h2;
                let flow = table.flow(m2).map_err(|_| table_range_error(table, m2, i, j))?;
                out[r] = x[i] - dk * flow - ut.get(i, j - 1);
                worst = worst.max(out[r].abs());
                if let Some(s) = sig.as_deref_mut() {
                    s[r] = table.sigma(m2).map_err(|_| table_range_error(table, m2, i, j))?;
                }
            }
            Ok(worst)
        };
        let mut sig = vec![0.0; m];
        let mut norm = eval(&x, &mut resid, Some(&mut sig))?;
        let mut iter = 0;
        while norm > cfg.march_tol {
            if iter >= cfg.march_max_iter {
                return Err(Error::InnerNewton { step: j, residual: norm });
            }
            iter += 1;
            let lam = dk / h2;
            for r in 0..m {
                let s = lam * sig[r];
                lower[r] = -s;
                diag[r] = 1.0 + 2.0 * s;
                upper[r] = -s;
            }
            let mut delta: Vec<f64> = resid.iter().map(|v| -v).collect();
            solve_tridiagonal(&lower, &diag, &upper, &mut delta);
            let mut damping = 1.0;
            loop {
                let mut trial = x.clone();
                for r in 0..m {
                    trial[r + 1] += damping * delta[r];
                }
                let mut trial_res = vec![0.0; m];
                match eval(&trial, &mut trial_res, Some(&mut sig)) {
                    Ok(n) if n < norm || damping < 1.0 / 64.0 => {
                        x = trial;
                        resid = trial_res;
                        norm = n;
                        break;
                    }
                    Err(e) if damping < 1.0 / 64.0 => return Err(e),
                    _ => damping *= 0.5,
                }
            }
            if norm > cfg.march_tol && damping < 1.0 / 64.0 {
                // a vanishing step cannot make progress below round-off
                let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if norm <= 1e-15 * (1.0 + scale) {
                    break;
                }
            }
        }
        for (i, xi) in x.iter().enumerate() {
            ut.set(i, j, *xi);
        }
    }
    let mut u = ut.sub(&setup.lift.field).with_role(Role::Solution);
    // ũ and u_b carry identical edge data; clear the round-off left there
    u.project_f0();
    let mut tracker = Tracker {
        setup,
        history: Vec::new(),
        u4: Vec::new(),
        u4_exceeded_at: None,
    };
    let r = rg_apply(&u, &setup.lift.field, table)?;
    tracker.record(grid.k_max - grid.k_min, &u, &r)?;
    let tol = cfg.march_tol / dk;
    tracker.finish(Method::March, true, tol, &u)
}

pub fn solve(setup: &SolveSetup, method: Method) -> Result<SolveOutcome> {
    match method {
        Method::NashMoser => nash_moser_solve(setup),
        Method::Newton => newton_solve(setup),
        Method::March => march_solve(setup),
    }
}

/// Bound for the agreement of two solutions of the same discrete problem:
/// both residuals mapped through the inverse's max-principle constant.
pub fn agreement_tolerance(grid: &FlowGrid, res_a: f64, res_b: f64) -> f64 {
    (grid.k_max - grid.k_min) * (res_a + res_b)
}

/// `max |ũ_a − ũ_b|` over interior nodes.
pub fn solution_gap(a: &GridField, b: &GridField) -> f64 {
    interior_sup(&a.sub(b))
}
