//! Invariant suites behind `csflow verify`. Each suite returns a
//! [`SuiteReport`] with one [`Check`] per property, the fitted constants
//! and any tame-fit reports. The numeric studies are also exposed on their
//! own so the acceptance tests can print them.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use serde::Serialize;

use crate::background::Background;
use crate::config::{BackgroundConfig, RunConfig};
use crate::error::{Error, Result};
use crate::flowfn::{check_sigma_window, FlowTable, WindowReport};
use crate::graded::{
    boundary_lift, fit_bound, BoundaryData, FlowGrid, GridField, Role, Seminorms, SmoothingSchedule, TameReport,
};
use crate::linsolve::{
    apply_linearized, heat_oracle, interior_sup, interior_sup_diff, max_principle_certificate, solve_linearized,
    ConductivityField,
};
use crate::nashmoser::flow_field;
use crate::propagators::{
    free_retarded_apply, interacting_retarded_apply, interacting_retarded_neumann, interacting_retarded_volterra,
    verify_intertwining,
};
use crate::sampling;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteName {
    Propagators,
    Flowfn,
    Graded,
    Linsolve,
}

impl SuiteName {
    pub const ALL: [SuiteName; 4] = [
        SuiteName::Propagators,
        SuiteName::Flowfn,
        SuiteName::Graded,
        SuiteName::Linsolve,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SuiteName::Propagators => "propagators",
            SuiteName::Flowfn => "flowfn",
            SuiteName::Graded => "graded",
            SuiteName::Linsolve => "linsolve",
        }
    }
}

/// One verified property: `value` compared against `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Check {
    pub fn at_most(name: &str, value: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            value,
            lo: None,
            hi: Some(hi),
            pass: value <= hi,
            detail: None,
        }
    }

    pub fn at_least(name: &str, value: f64, lo: f64) -> Self {
        Self {
            name: name.into(),
            value,
            lo: Some(lo),
            hi: None,
            pass: value >= lo,
            detail: None,
        }
    }

    pub fn within(name: &str, value: f64, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            value,
            lo: Some(lo),
            hi: Some(hi),
            pass: (lo..=hi).contains(&value),
            detail: None,
        }
    }

    /// A yes/no property; `value` is 1 when it holds.
    pub fn holds(name: &str, ok: bool) -> Self {
        Self {
            name: name.into(),
            value: if ok { 1.0 } else { 0.0 },
            lo: Some(1.0),
            hi: None,
            pass: ok,
            detail: None,
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: SuiteName,
    pub pass: bool,
    pub checks: Vec<Check>,
    pub constants: BTreeMap<String, f64>,
    pub tame: Vec<TameReport>,
}

impl SuiteReport {
    fn new(suite: SuiteName) -> Self {
        Self {
            suite,
            pass: true,
            checks: Vec::new(),
            constants: BTreeMap::new(),
            tame: Vec::new(),
        }
    }

    fn check(&mut self, c: Check) {
        self.pass &= c.pass;
        self.checks.push(c);
    }

    fn constant(&mut self, name: &str, v: f64) {
        self.constants.insert(name.into(), v);
    }

    fn tame(&mut self, t: TameReport) {
        self.check(Check::at_most(&format!("{} held-out violations", t.label), t.violations as f64, 0.0));
        self.constant(&format!("C[{}]", t.label), t.constant);
        self.tame.push(t);
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
}

pub fn run_suite(cfg: &RunConfig, suite: SuiteName) -> Result<SuiteReport> {
    match suite {
        SuiteName::Propagators => propagators_suite(cfg),
        SuiteName::Flowfn => flowfn_suite(cfg),
        SuiteName::Graded => graded_suite(cfg),
        SuiteName::Linsolve => linsolve_suite(cfg),
    }
}

/// Least-squares slope of `ln e` against `ln h`.
pub fn log_slope(h: &[f64], e: &[f64]) -> f64 {
    let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Observed orders `log₂(eᵢ/eᵢ₊₁)` between consecutive halvings.
pub fn pairwise_orders(e: &[f64]) -> Vec<f64> {
    e.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

// ---------------------------------------------------------------- propagators

pub const INTERTWINING_NT: [usize; 3] = [256, 512, 1024];
pub const INTERTWINING_M2: [f64; 3] = [-0.3, 0.0, 0.3];
pub const INTERTWINING_MODES: usize = 8;
pub const ORDER_TOLERANCE: f64 = 0.2;
pub const ORACLE_M2: [f64; 5] = [-0.1, -0.05, 0.0, 0.05, 0.1];
pub const ORACLE_TOLERANCE: f64 = 1e-8;
pub const GRONWALL_SAMPLES: usize = 21;
pub const GRONWALL_RESIDUAL: f64 = 0.05;

/// Intertwining residuals under time-grid refinement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderStudy {
    pub n_t: Vec<usize>,
    /// worst residual over modes and `m²` per resolution
    pub residual: Vec<f64>,
    pub orders: Vec<f64>,
}

impl OrderStudy {
    pub fn min_order(&self) -> f64 {
        self.orders.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_order(&self) -> f64 {
        self.orders.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn intertwining_study(cfg: &BackgroundConfig, n_ts: &[usize], m2s: &[f64], modes: usize) -> Result<OrderStudy> {
    let mut residual = Vec::with_capacity(n_ts.len());
    for &n_t in n_ts {
        let mut c = cfg.clone();
        c.n_t = n_t;
        let bg = Background::build(&c)?;
        let jobs: Vec<(usize, f64)> = (0..modes.min(bg.basis.len()))
            .flat_map(|m| m2s.iter().map(move |&m2| (m, m2)))
            .collect();
        let worst = crate::par::try_map_range(jobs.len(), |j| {
            let (m, m2) = jobs[j];
            let k = interacting_retarded_volterra(&bg, m, m2)?;
            Ok::<_, Error>(verify_intertwining(&bg, &k).residual())
        })?
        .into_iter()
        .fold(0.0, f64::max);
        residual.push(worst);
    }
    Ok(OrderStudy {
        n_t: n_ts.to_vec(),
        orders: pairwise_orders(&residual),
        residual,
    })
}

/// Worst max-norm gap between Volterra and Neumann kernels over all modes.
pub fn oracle_gap(bg: &Background, m2s: &[f64], tol: f64, cap: usize) -> Result<f64> {
    let jobs: Vec<(usize, f64)> = (0..bg.basis.len())
        .flat_map(|m| m2s.iter().map(move |&m2| (m, m2)))
        .collect();
    Ok(crate::par::try_map_range(jobs.len(), |j| {
        let (m, m2) = jobs[j];
        let v = interacting_retarded_volterra(bg, m, m2)?;
        let n = interacting_retarded_neumann(bg, m, m2, tol, cap)?;
        Ok::<_, Error>(v.max_abs_diff(&n.kernel))
    })?
    .into_iter()
    .fold(0.0, f64::max))
}

/// Fit of `‖h‖₂,₂ᵗ ≤ ‖φ‖₂,₂ᵗ·e^{C|m²|}` with `h = Δ^U_R g`, `φ = Δ_R g`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GronwallReport {
    pub m2: Vec<f64>,
    /// `ln(sup_t ‖h‖ / sup_t ‖φ‖)` per `m²`, worst over sources
    pub log_ratio: Vec<f64>,
    /// `max(log_ratio(m²), log_ratio(−m²))` per sample
    pub envelope: Vec<f64>,
    /// smallest `C` with `envelope ≤ C|m²|`
    pub constant: f64,
    /// `max |envelope − C|m²||` in natural-log units
    pub residual: f64,
    /// the bound holds at every sample with the single fitted `C`
    pub bound_holds: bool,
}

/// Random compactly supported sources, one time series per mode.
pub fn gronwall_sources(bg: &Background, seed: u64, count: usize) -> Vec<Vec<Vec<f64>>> {
    let (t1, t2) = (bg.config.t1, bg.config.t2);
    (0..count)
        .map(|s| {
            let mut rng = sampling::rng(seed, 100 + s as u64);
            (0..bg.basis.len())
                .map(|m| {
                    let omega = bg.clocks[m].omega;
                    let coeffs: Vec<(f64, f64)> = (1..=3)
                        .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0 * PI)))
                        .collect();
                    (0..bg.n_t())
                        .map(|i| {
                            let x = (bg.time.t(i) - t1) / (t2 - t1);
                            let wave: f64 = coeffs
                                .iter()
                                .enumerate()
                                .map(|(q, (a, ph))| a * ((q + 1) as f64 * PI * x + ph).sin())
                                .sum();
                            bg.chi[i] * wave / (1.0 + omega * omega)
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn sup_slice_norm(bg: &Background, series: &[Vec<f64>]) -> f64 {
    let mut coeffs = vec![0.0; series.len()];
    (0..bg.n_t())
        .map(|i| {
            for (c, s) in coeffs.iter_mut().zip(series) {
                *c = s[i];
            }
            crate::graded::slice_sobolev_norm(&bg.basis, &coeffs)
        })
        .fold(0.0, f64::max)
}

pub fn gronwall_fit(bg: &Background, a: f64, samples: usize, sources: &[Vec<Vec<f64>>]) -> Result<GronwallReport> {
    let m2: Vec<f64> = (0..samples)
        .map(|i| -a + 2.0 * a * i as f64 / (samples - 1) as f64)
        .collect();
    for &x in &m2 {
        bg.check_m2(x)?;
    }
    let free: Vec<f64> = sources
        .iter()
        .map(|g| {
            let phi: Vec<Vec<f64>> = g
                .iter()
                .enumerate()
                .map(|(m, s)| free_retarded_apply(bg, m, s))
                .collect();
            sup_slice_norm(bg, &phi)
        })
        .collect();
    let log_ratio = crate::par::map(&m2, |&x| {
        sources
            .iter()
            .zip(&free)
            .map(|(g, &p)| {
                let h: Vec<Vec<f64>> = g
                    .iter()
                    .enumerate()
                    .map(|(m, s)| interacting_retarded_apply(bg, m, x, s))
                    .collect();
                (sup_slice_norm(bg, &h) / p).ln()
            })
            .fold(f64::NEG_INFINITY, f64::max)
    });
    let envelope: Vec<f64> = (0..samples)
        .map(|i| log_ratio[i].max(log_ratio[samples - 1 - i]))
        .collect();
    let constant = m2
        .iter()
        .zip(&envelope)
        .filter(|(x, _)| x.abs() > 0.0)
        .map(|(x, e)| e / x.abs())
        .fold(0.0, f64::max);
    let residual = m2
        .iter()
        .zip(&envelope)
        .map(|(x, e)| (e - constant * x.abs()).abs())
        .fold(0.0, f64::max);
    let bound_holds = m2
        .iter()
        .zip(&log_ratio)
        .all(|(x, l)| *l <= constant * x.abs() + 1e-12);
    Ok(GronwallReport {
        m2,
        log_ratio,
        envelope,
        constant,
        residual,
        bound_holds,
    })
}

pub fn propagators_suite(cfg: &RunConfig) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(SuiteName::Propagators);
    let bg = Background::build(&cfg.background)?;

    let study = intertwining_study(&cfg.background, &INTERTWINING_NT, &INTERTWINING_M2, INTERTWINING_MODES)?;
    rep.check(Check::within(
        "intertwining order (min)",
        study.min_order(),
        2.0 - ORDER_TOLERANCE,
        2.0 + ORDER_TOLERANCE,
    ));
    rep.check(Check::within(
        "intertwining order (max)",
        study.max_order(),
        2.0 - ORDER_TOLERANCE,
        2.0 + ORDER_TOLERANCE,
    ));
    let span = cfg.background.t_max - cfg.background.t_min;
    for (n, r) in study.n_t.iter().zip(&study.residual) {
        let dt = span / (*n - 1) as f64;
        rep.constant(&format!("intertwining residual N_t={n}"), *r);
        rep.constant(&format!("intertwining residual/dt^2 N_t={n}"), r / (dt * dt));
    }

    let gap = oracle_gap(&bg, &ORACLE_M2, cfg.solver.neumann_tol, cfg.solver.neumann_cap)?;
    rep.check(Check::at_most("volterra vs neumann", gap, ORACLE_TOLERANCE));

    let mut causal = true;
    for m in 0..bg.basis.len().min(4) {
        for &m2 in &INTERTWINING_M2 {
            let k = interacting_retarded_volterra(&bg, m, m2)?;
            causal &= k.acausal_max() == 0.0 && (0..k.n).all(|i| k.get(i, i) == 0.0);
            causal &= k.advanced().values.iter().enumerate().all(|(ix, v)| ix / k.n <= ix % k.n || *v == 0.0);
        }
    }
    rep.check(Check::holds("retarded support and zero diagonal", causal));

    let sources = gronwall_sources(&bg, cfg.verify.seed, 4);
    let g = gronwall_fit(&bg, cfg.solver.window_a, GRONWALL_SAMPLES, &sources)?;
    rep.check(Check::holds("gronwall bound with single C", g.bound_holds));
    rep.check(Check::at_most("gronwall log residual", g.residual, GRONWALL_RESIDUAL));
    rep.constant("gronwall C", g.constant);
    Ok(rep)
}

// -------------------------------------------------------------------- flowfn

pub const REFINEMENT_POINTS: [usize; 3] = [26, 51, 101];
pub const SLOPE_TOLERANCE: f64 = 0.4;

/// Derivative-consistency errors at the nodes of the coarsest table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyStudy {
    pub step: Vec<f64>,
    pub sigma_error: Vec<f64>,
    pub a2_error: Vec<f64>,
    pub sigma_orders: Vec<f64>,
    pub a2_orders: Vec<f64>,
}

pub fn consistency_study(bg: &Background, points: &[usize]) -> Result<ConsistencyStudy> {
    let tables = points
        .iter()
        .map(|&p| FlowTable::tabulate(bg, p))
        .collect::<Result<Vec<_>>>()?;
    let coarse = &tables[0];
    let nodes: Vec<f64> = coarse.m2[1..coarse.len() - 1].to_vec();
    let (mut s, mut a) = (Vec::new(), Vec::new());
    for t in &tables {
        let (e1, e2) = t.consistency_at(&nodes);
        s.push(e1);
        a.push(e2);
    }
    Ok(ConsistencyStudy {
        step: tables.iter().map(|t| t.step()).collect(),
        sigma_orders: pairwise_orders(&s),
        a2_orders: pairwise_orders(&a),
        sigma_error: s,
        a2_error: a,
    })
}

/// The window verdict for the configured state and for the state with
/// the sign of `α` flipped.
pub fn window_pair(bg: &Background, cfg: &RunConfig, table: &FlowTable) -> Result<(WindowReport, WindowReport)> {
    let s = &cfg.solver;
    let here = check_sigma_window(table, s.window_c, s.window_eps, s.window_a);
    let flipped_bg = bg.with_alpha(-bg.config.alpha)?;
    let flipped = FlowTable::tabulate(&flipped_bg, cfg.table.m2_points)?;
    let there = check_sigma_window(&flipped, s.window_c, s.window_eps, s.window_a);
    Ok((here, there))
}

pub fn flowfn_suite(cfg: &RunConfig) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(SuiteName::Flowfn);
    let bg = Background::build(&cfg.background)?;
    let study = consistency_study(&bg, &REFINEMENT_POINTS)?;
    let (lo, hi) = (2.0 - SLOPE_TOLERANCE, 2.0 + SLOPE_TOLERANCE);
    for (i, o) in study.sigma_orders.iter().enumerate() {
        rep.check(Check::within(&format!("sigma refinement order {i}"), *o, lo, hi));
    }
    for (i, o) in study.a2_orders.iter().enumerate() {
        rep.check(Check::within(&format!("A2 refinement order {i}"), *o, lo, hi));
    }
    let table = FlowTable::tabulate(&bg, cfg.table.m2_points)?;
    let (here, there) = window_pair(&bg, cfg, &table)?;
    rep.check(Check::at_least("sigma window min sigma - c", here.min_sigma - here.c, 0.0));
    rep.check(Check::at_most("sigma window log variation", here.log_variation, here.eps_prime));
    rep.check(Check::holds("flipping alpha flips the verdict", here.pass != there.pass));
    rep.constant("sigma(0)", here.sigma_at_zero);
    rep.constant("min sigma", here.min_sigma);
    rep.constant("max |sigma'/sigma|", here.max_log_derivative);
    rep.constant("A2 tame C", table.a2_tame_constant(cfg.solver.window_a));
    Ok(rep)
}

// -------------------------------------------------------------------- graded

/// Base radius of the smoothing family used for the `Sₜ` tame fits.
pub const SMOOTHING_TEST_R0: f64 = 1.0;
pub const SMOOTHING_TEST_T: [f64; 12] = [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.25, 2.5, 2.75];
pub const SMOOTHING_TEST_DEGREE: usize = 12;
/// Allowed ratio between constants fitted on a grid and its refinement.
pub const REFINEMENT_STABILITY: f64 = 1.25;

fn cosine_mode(grid: &FlowGrid, p: usize, q: usize) -> GridField {
    let (np, nk) = (grid.n_phi, grid.n_k);
    let mut f = GridField::zeros(*grid, Role::Source);
    for i in 0..np {
        let cp = (p as f64 * PI * i as f64 / (np - 1) as f64).cos();
        for j in 0..nk {
            f.set(i, j, cp * (q as f64 * PI * j as f64 / (nk - 1) as f64).cos());
        }
    }
    f
}

/// Cosine-mode sweep ordered by `(t, radius)`, so training and held-out
/// samples interleave along a smooth path.
fn smoothing_sweep(degree: usize) -> Vec<(f64, usize, usize)> {
    let mut modes: Vec<(usize, usize)> = Vec::new();
    for p in 0..=degree {
        modes.push((p, 0));
        if p > 0 {
            modes.push((0, p));
            modes.push((p, p));
            modes.push((p, p.div_ceil(2)));
        }
    }
    modes.sort_by_key(|&(p, q)| (p * p + q * q, p));
    SMOOTHING_TEST_T
        .iter()
        .flat_map(|&t| modes.iter().map(move |&(p, q)| (t, p, q)))
        .collect()
}

/// Fits of `‖Sₜu‖ₙ₊ᵣ ≤ C e^{rt}‖u‖ₙ` and `‖(1 − Sₜ)u‖ₙ ≤ C e^{−rt}‖u‖ₙ₊ᵣ`
/// for `n ∈ {0, 1, 2}`, `r ∈ {1, 2}`.
pub fn smoothing_tame(grid: &FlowGrid, r0: f64, degree: usize) -> Result<Vec<TameReport>> {
    let sweep = smoothing_sweep(degree);
    let s = SmoothingSchedule::new(grid, r0);
    let norms = Seminorms::new(*grid, 4)?;
    let rows = crate::par::try_map_range(sweep.len(), |i| {
        let (t, p, q) = sweep[i];
        let u = cosine_mode(grid, p, q);
        let su = s.apply(&u, t);
        let nu = norms.norms_up_to(&u, 4)?;
        let nsu = norms.norms_up_to(&su, 4)?;
        let nd = norms.norms_up_to(&u.sub(&su), 2)?;
        Ok::<_, Error>((t, nu, nsu, nd))
    })?;
    let mut out = Vec::new();
    for r in 1..=2usize {
        for n in 0..=2usize {
            let up: Vec<(f64, f64)> = rows
                .iter()
                .map(|(t, nu, nsu, _)| (nsu[n + r], (r as f64 * t).exp() * nu[n]))
                .collect();
            let mut a = fit_bound("S", n, r, &up);
            a.label = format!("S_t n={n} r={r}");
            out.push(a);
            let down: Vec<(f64, f64)> = rows
                .iter()
                .map(|(t, nu, _, nd)| (nd[n], (-(r as f64) * t).exp() * nu[n + r]))
                .collect();
            let mut b = fit_bound("1-S", n, r, &down);
            b.label = format!("1-S_t n={n} r={r}");
            out.push(b);
        }
    }
    Ok(out)
}

/// `‖Sₜu − u‖₀` along `t` for one field.
pub fn smoothing_convergence(grid: &FlowGrid, r0: f64, u: &GridField, ts: &[f64]) -> Vec<f64> {
    let s = SmoothingSchedule::new(grid, r0);
    ts.iter().map(|&t| s.apply(u, t).sub(u).sup()).collect()
}

/// Samples `u ∈ F₀` with `‖u‖₄` spread over `(0, A]`.
pub fn locality_samples(grid: &FlowGrid, a: f64, count: usize, seed: u64) -> Result<Vec<GridField>> {
    let norms = Seminorms::new(*grid, 4)?;
    crate::par::try_map_range(count, |i| {
        let mut rng = sampling::rng(seed, 200 + i as u64);
        let degree = 1 + i % 6;
        let u = sampling::f0_trig_field(&mut rng, grid, degree);
        let target = a * (i + 1) as f64 / count as f64;
        Ok::<_, Error>(sampling::rescale(&u, norms.norm(&u, 4)?, target))
    })
}

/// Tame fits of `‖𝒢(∂²_φũ)‖ₙ ≤ C(1 + ‖ũ‖ₙ₊₂)`, `ũ = u + u_b`, for `n ≤ 2`.
pub fn flow_map_tame(samples: &[GridField], lift: &GridField, table: &FlowTable) -> Result<Vec<TameReport>> {
    let norms = Seminorms::new(lift.grid, 4)?;
    let rows = crate::par::try_map_range(samples.len(), |s| {
        let ut = samples[s].add(lift);
        let f = flow_field(&ut, table)?;
        Ok::<_, Error>((norms.norms_up_to(&f, 2)?, norms.norms_up_to(&ut, 4)?))
    })?;
    Ok((0..=2usize)
        .map(|n| {
            let pairs: Vec<(f64, f64)> = rows.iter().map(|(f, u)| (f[n], 1.0 + u[n + 2])).collect();
            let mut r = fit_bound("flow map", n, 2, &pairs);
            r.label = format!("G(d2 u) n={n} r=2");
            r
        })
        .collect())
}

pub fn graded_suite(cfg: &RunConfig) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(SuiteName::Graded);
    let grid = FlowGrid::from_config(&cfg.grid)?;

    let q = GridField::from_fn(grid, Role::Source, |p, _| p * p);
    let qn = Seminorms::new(grid, 2)?.norms_up_to(&q, 2)?;
    let expect = [
        grid.phi_min.abs().max(grid.phi_max.abs()).powi(2),
        2.0 * grid.phi_min.abs().max(grid.phi_max.abs()),
        2.0,
    ];
    let mut acc = 0.0;
    let mut worst: f64 = 0.0;
    for (n, e) in expect.iter().enumerate() {
        acc += e;
        worst = worst.max((qn[n] - acc).abs());
    }
    rep.check(Check::at_most("seminorms of phi^2", worst, 1e-10));

    let coarse = FlowGrid::new(
        grid.phi_min,
        grid.phi_max,
        grid.n_phi.div_ceil(2),
        grid.k_min,
        grid.k_max,
        grid.n_k.div_ceil(2),
    )?;
    let fine = smoothing_tame(&grid, SMOOTHING_TEST_R0, SMOOTHING_TEST_DEGREE)?;
    let rough = smoothing_tame(&coarse, SMOOTHING_TEST_R0, SMOOTHING_TEST_DEGREE)?;
    let mut drift: f64 = 1.0;
    for (f, c) in fine.iter().zip(&rough) {
        if f.constant > 0.0 && c.constant > 0.0 {
            let q = f.constant / c.constant;
            drift = drift.max(q.max(1.0 / q));
        }
    }
    rep.check(Check::at_most("S_t constants under refinement (ratio)", drift, REFINEMENT_STABILITY));
    for t in fine {
        rep.tame(t);
    }

    let ts: Vec<f64> = (0..=16).map(|i| 0.25 * i as f64).collect();
    let mut monotone = true;
    for s in 0..3u64 {
        let u = sampling::smooth_source(&mut sampling::rng(cfg.verify.seed, 300 + s), &grid, 8);
        let e = smoothing_convergence(&grid, cfg.solver.r0, &u, &ts);
        monotone &= e.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-15);
        monotone &= *e.last().expect("non-empty") <= 1e-12 * u.sup().max(1.0);
    }
    rep.check(Check::holds("S_t -> identity monotonically", monotone));

    let mut f0 = true;
    let s = SmoothingSchedule::new(&grid, cfg.solver.r0);
    for i in 0..4u64 {
        let mut rng = sampling::rng(cfg.verify.seed, 400 + i);
        let u = sampling::f0_trig_field(&mut rng, &grid, 5);
        let w = sampling::f0_trig_field(&mut rng, &grid, 3);
        f0 &= u.is_f0() && s.apply(&u, 0.5 * i as f64).is_f0();
        f0 &= u.add(&w).is_f0() && u.sub(&w).is_f0() && u.scale(-3.5).is_f0();
        let sigma = ConductivityField::constant(grid, 0.5)?;
        f0 &= solve_linearized(&sigma, &sampling::smooth_source(&mut rng, &grid, 3))?.is_f0();
    }
    rep.check(Check::holds("F0 preservation", f0));

    let table = FlowTable::tabulate(&Background::build(&cfg.background)?, cfg.table.m2_points)?;
    let data = BoundaryData::from_config(&cfg.boundary, &grid, &table)?;
    let lift = boundary_lift(&data, &grid)?;
    rep.constant("lift |u_b|_2", lift.norm2);
    rep.constant("lift |u_b|_3", lift.norm3);
    let samples = locality_samples(&grid, cfg.solver.window_a, cfg.verify.samples, cfg.verify.seed)?;
    for t in flow_map_tame(&samples, &lift.field, &table)? {
        rep.tame(t);
    }
    Ok(rep)
}

// ------------------------------------------------------------------ linsolve

pub const ROUND_TRIP_SAMPLES: usize = 16;
pub const ROUND_TRIP_TOLERANCE: f64 = 1e-8;
pub const HEAT_ORACLE_N_PHI: usize = 257;
/// k-extent and resolution of the analytic-oracle comparison.
pub const HEAT_ORACLE_K_SPAN: f64 = 0.02;
pub const HEAT_ORACLE_N_K: usize = 2001;
pub const HEAT_ORACLE_TOLERANCE: f64 = 1e-6;
pub const ACCURACY_SLOPE_TOLERANCE: f64 = 0.2;

/// `‖E(g) − v_exact‖₀` for `σ ≡ sigma`, `g = sin(πφ̂)`.
pub fn heat_oracle_error(grid: &FlowGrid, sigma: f64) -> Result<f64> {
    let s = ConductivityField::constant(*grid, sigma)?;
    let v = solve_linearized(&s, &crate::linsolve::sine_source(grid))?;
    Ok(v.sub(&heat_oracle(grid, sigma)).sup())
}

/// Refinement study of the inverse against closed forms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyStudy {
    /// `Δφ` sweep: error of the final row against the continuum steady
    /// state, long k-interval
    pub dphi: Vec<f64>,
    pub dphi_error: Vec<f64>,
    pub dphi_slope: f64,
    /// `Δk` sweep against the semi-discrete (exact-in-k) solution
    pub dk: Vec<f64>,
    pub dk_error: Vec<f64>,
    pub dk_slope: f64,
}

pub fn accuracy_study(phi_min: f64, phi_max: f64, k_min: f64) -> Result<AccuracyStudy> {
    let sigma = 1.0;
    let (mut dphi, mut dphi_error) = (Vec::new(), Vec::new());
    for n in [33usize, 65, 129] {
        let grid = FlowGrid::new(phi_min, phi_max, n, k_min, k_min + 12.0, 241)?;
        let s = ConductivityField::constant(grid, sigma)?;
        let v = solve_linearized(&s, &crate::linsolve::sine_source(&grid))?;
        let steady = grid.width().powi(2) / (PI * PI * sigma);
        let j = grid.n_k - 1;
        let err = (0..grid.n_phi)
            .map(|i| (v.get(i, j) - steady * (PI * grid.phi_hat(i)).sin()).abs())
            .fold(0.0, f64::max);
        dphi.push(grid.dphi());
        dphi_error.push(err);
    }
    let (mut dk, mut dk_error) = (Vec::new(), Vec::new());
    for n in [65usize, 129, 257] {
        let grid = FlowGrid::new(phi_min, phi_max, 65, k_min, k_min + 0.5, n)?;
        let s = ConductivityField::constant(grid, sigma)?;
        let v = solve_linearized(&s, &crate::linsolve::sine_source(&grid))?;
        let h = grid.dphi();
        let mu = 4.0 / (h * h) * (PI * h / (2.0 * grid.width())).sin().powi(2);
        let mut err: f64 = 0.0;
        for i in 0..grid.n_phi {
            let sn = (PI * grid.phi_hat(i)).sin();
            for j in 0..grid.n_k {
                let kk = grid.k(j) - grid.k_min;
                let exact = sn * (-(-sigma * mu * kk).exp_m1()) / (sigma * mu);
                err = err.max((v.get(i, j) - exact).abs());
            }
        }
        dk.push(grid.dk());
        dk_error.push(err);
    }
    Ok(AccuracyStudy {
        dphi_slope: log_slope(&dphi, &dphi_error),
        dk_slope: log_slope(&dk, &dk_error),
        dphi,
        dphi_error,
        dk,
        dk_error,
    })
}

/// Random `(σ, g)` pairs with `σ ∈ [c, 2c]`. With `sabotage`, one node of
/// the first conductivity is made negative.
pub fn inverse_samples(
    grid: &FlowGrid,
    c: f64,
    count: usize,
    seed: u64,
    stream: u64,
    sabotage: bool,
) -> Result<Vec<(ConductivityField, GridField)>> {
    (0..count)
        .map(|s| {
            let mut rng = sampling::rng(seed, stream + s as u64);
            let mut sigma = sampling::conductivity(&mut rng, grid, c, 1 + s % 4);
            if sabotage && s == 0 {
                let mid = (grid.n_phi / 2, grid.n_k / 2);
                sigma.set(mid.0, mid.1, -c);
            }
            let g = sampling::smooth_source(&mut rng, grid, 1 + s % 5);
            Ok((ConductivityField::new(sigma, c)?, g))
        })
        .collect()
}

pub fn round_trip_error(samples: &[(ConductivityField, GridField)]) -> Result<(f64, f64)> {
    let rows = crate::par::try_map_range(samples.len(), |s| {
        let (sigma, g) = &samples[s];
        let v = solve_linearized(sigma, g)?;
        let rt = interior_sup_diff(&apply_linearized(sigma, &v), g) / interior_sup(g);
        let mp = max_principle_certificate(sigma, g, &v);
        Ok::<_, Error>((rt, if mp.pass { 0.0 } else { 1.0 }))
    })?;
    Ok(rows
        .into_iter()
        .fold((0.0f64, 0.0f64), |(a, b), (x, y)| (a.max(x), b + y)))
}

pub fn linsolve_suite(cfg: &RunConfig) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(SuiteName::Linsolve);
    let grid = FlowGrid::from_config(&cfg.grid)?;
    let c = cfg.solver.window_c;
    let seed = cfg.verify.seed;
    let sabotage = cfg.verify.inject_negative_sigma;

    let rt_samples = match inverse_samples(&grid, c, ROUND_TRIP_SAMPLES, seed, 500, sabotage) {
        Ok(s) => s,
        Err(e @ Error::SigmaWindow { .. }) => {
            rep.check(Check::holds("sigma >= c before solving", false).with_detail(e.to_string()));
            return Ok(rep);
        }
        Err(e) => return Err(e),
    };
    rep.check(Check::holds("sigma >= c before solving", true));
    let (rt, mp_fail) = round_trip_error(&rt_samples)?;
    rep.check(Check::at_most("round trip |L(E g) - g|/|g|", rt, ROUND_TRIP_TOLERANCE));

    let graded_samples = inverse_samples(&grid, c, cfg.verify.samples, seed, 600, false)?;
    let (_, mp_fail2) = round_trip_error(&graded_samples)?;
    let norms = Seminorms::new(grid, 3)?;
    for n in 0..=2 {
        let mut t = crate::linsolve::inverse_graded_check(&graded_samples, n, &norms)?;
        t.label = format!("E n={n}");
        rep.tame(t);
    }

    let oracle_grid = FlowGrid::new(
        grid.phi_min,
        grid.phi_max,
        HEAT_ORACLE_N_PHI,
        grid.k_min,
        grid.k_min + HEAT_ORACLE_K_SPAN,
        HEAT_ORACLE_N_K,
    )?;
    let oracle = heat_oracle_error(&oracle_grid, 1.0)?;
    rep.check(Check::at_most("analytic heat oracle error", oracle, HEAT_ORACLE_TOLERANCE));
    let long_grid = FlowGrid::new(grid.phi_min, grid.phi_max, HEAT_ORACLE_N_PHI, grid.k_min, grid.k_max, 4 * grid.n_k - 3)?;
    rep.constant("heat oracle error, full k-interval, N_k = 4(n_k - 1) + 1", heat_oracle_error(&long_grid, 1.0)?);

    let acc = accuracy_study(grid.phi_min, grid.phi_max, grid.k_min)?;
    let tol = ACCURACY_SLOPE_TOLERANCE;
    rep.check(Check::within("dphi order", acc.dphi_slope, 2.0 * (1.0 - tol), 2.0 * (1.0 + tol)));
    rep.check(Check::within("dk order", acc.dk_slope, 1.0 - tol, 1.0 + tol));

    let mut mp_extra = 0.0;
    for sigma in [c, 1.0] {
        let s = ConductivityField::constant(grid, sigma)?;
        let one = GridField::from_fn(grid, Role::Source, |_, _| 1.0);
        let v = solve_linearized(&s, &one)?;
        if !max_principle_certificate(&s, &one, &v).pass {
            mp_extra += 1.0;
        }
    }
    rep.check(Check::at_most("max-principle failures", mp_fail + mp_fail2 + mp_extra, 0.0));
    rep.constant("C_max", (grid.k_max - grid.k_min) * (1.0 + 1e-9));
    Ok(rep)
}
