use std::sync::OnceLock;

use csflow::background::Background;
use csflow::config::RunConfig;
use csflow::flowfn::FlowTable;
use csflow::graded::{BoundaryData, FlowGrid};
use csflow::nashmoser::{
    agreement_tolerance, continuous_newton, march_solve, solution_gap, solve, Method, SolveOutcome, SolveSetup,
    StepParams,
};

fn cfg() -> &'static RunConfig {
    static C: OnceLock<RunConfig> = OnceLock::new();
    C.get_or_init(RunConfig::default_config)
}

fn table() -> &'static FlowTable {
    static T: OnceLock<FlowTable> = OnceLock::new();
    T.get_or_init(|| FlowTable::tabulate(&Background::build(&cfg().background).unwrap(), cfg().table.m2_points).unwrap())
}

fn setup() -> SolveSetup {
    SolveSetup::new(cfg(), table().clone()).unwrap()
}

fn default_runs() -> &'static (SolveOutcome, SolveOutcome, SolveOutcome) {
    static R: OnceLock<(SolveOutcome, SolveOutcome, SolveOutcome)> = OnceLock::new();
    R.get_or_init(|| {
        let s = setup();
        (
            solve(&s, Method::NashMoser).unwrap(),
            solve(&s, Method::Newton).unwrap(),
            solve(&s, Method::March).unwrap(),
        )
    })
}

#[test]
fn halving_the_pseudo_time_step_leaves_the_solution_unchanged() {
    let s = setup();
    let base = &default_runs().0;
    let mut params = StepParams::nash_moser(&s.solver);
    params.dt *= 0.5;
    let half = continuous_newton(&s, params, Method::NashMoser).unwrap();
    assert!(half.report.converged);
    let gap = solution_gap(&base.solution, &half.solution);
    let tol = agreement_tolerance(&s.grid, base.report.res0_final, half.report.res0_final);
    assert!(gap <= tol, "gap {gap:e} vs {tol:e}");
}

#[test]
fn all_three_solvers_agree_pairwise() {
    let s = setup();
    let (nm, newton, march) = default_runs();
    assert!(nm.report.converged && newton.report.converged && march.report.converged);
    for (a, b, label) in [(nm, newton, "nm/newton"), (nm, march, "nm/march"), (newton, march, "newton/march")] {
        let gap = solution_gap(&a.solution, &b.solution);
        let tol = 5.0 * agreement_tolerance(&s.grid, a.report.res0_final, b.report.res0_final);
        assert!(gap <= tol, "{label}: gap {gap:e} vs {tol:e}");
    }
}

#[test]
fn nash_moser_iterates_stay_in_the_window_and_residual_decays() {
    let (nm, _, _) = default_runs();
    let r = &nm.report;
    assert_eq!(r.u4_history.len(), r.iterations + 1);
    assert!(r.u4_exceeded_at.is_none());
    assert!(r.u4_history.iter().all(|&u| u <= r.window_a));
    assert!(r.res0_initial / r.res0_final >= 1e3);
    assert_eq!(r.history.len(), r.iterations + 1);
    assert_eq!(r.history[0].t, 0.0);
}

#[test]
fn solutions_match_the_boundary_data() {
    let s = setup();
    let (nm, newton, march) = default_runs();
    let g = s.grid;
    for out in [nm, newton, march] {
        let u = &out.solution;
        for i in 0..g.n_phi {
            assert!((u.get(i, 0) - s.data.psi[i]).abs() <= 1e-14);
        }
        for j in 0..g.n_k {
            assert!((u.get(0, j) - s.data.beta_left[j]).abs() <= 1e-14);
            assert!((u.get(g.n_phi - 1, j) - s.data.beta_right[j]).abs() <= 1e-14);
        }
        assert!(out.u.is_f0());
    }
}

#[test]
fn constant_flow_is_integrated_exactly_by_the_march() {
    let g0 = 0.0375;
    let grid = FlowGrid::new(-1.0, 1.0, 33, 1.0, 1.5, 33).unwrap();
    let flat = FlowTable::constant(g0, 0.5, 21).unwrap();
    let psi: Vec<f64> = (0..grid.n_phi).map(|i| 0.01 * (3.0 * grid.phi(i)).cos()).collect();
    let edge = |i: usize| (0..grid.n_k).map(|j| psi[i] + g0 * (grid.k(j) - grid.k_min)).collect::<Vec<_>>();
    let data = BoundaryData {
        beta_left: edge(0),
        beta_right: edge(grid.n_phi - 1),
        psi: psi.clone(),
    };
    let s = SolveSetup::with_data(grid, flat, data, &cfg().solver).unwrap();
    let out = march_solve(&s).unwrap();
    for i in 0..grid.n_phi {
        for j in 0..grid.n_k {
            let exact = psi[i] + g0 * (grid.k(j) - grid.k_min);
            assert!((out.solution.get(i, j) - exact).abs() <= 1e-13);
        }
    }
}

#[test]
fn march_self_converges_at_first_order_in_dk() {
    let mut sols = Vec::new();
    for n_k in [33usize, 65, 129] {
        let mut c = cfg().clone();
        c.grid.n_k = n_k;
        c.grid.n_phi = 33;
        let s = SolveSetup::new(&c, table().clone()).unwrap();
        sols.push(march_solve(&s).unwrap().solution);
    }
    // compare on the nodes of the coarsest grid
    let gap = |a: usize, b: usize| {
        let (ca, cb) = (&sols[a], &sols[b]);
        let stride_a = (ca.grid.n_k - 1) / 32;
        let stride_b = (cb.grid.n_k - 1) / 32;
        let mut m: f64 = 0.0;
        for i in 0..33 {
            for j in 0..33 {
                m = m.max((ca.get(i, j * stride_a) - cb.get(i, j * stride_b)).abs());
            }
        }
        m
    };
    let (e1, e2) = (gap(0, 1), gap(1, 2));
    let order = (e1 / e2).log2();
    assert!((order - 1.0).abs() <= 0.25, "order {order} from {e1:e}, {e2:e}");
}

#[test]
fn failing_window_is_reported_before_stepping() {
    let mut c = cfg().clone();
    c.background.alpha = -c.background.alpha;
    let t = FlowTable::tabulate(&Background::build(&c.background).unwrap(), c.table.m2_points).unwrap();
    let s = SolveSetup::new(&c, t).unwrap();
    assert!(!s.window.pass);
    let err = solve(&s, Method::NashMoser).unwrap_err();
    assert!(matches!(err, csflow::Error::Window(_)), "{err}");
}
