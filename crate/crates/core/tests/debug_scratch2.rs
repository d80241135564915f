//! Temporary solver diagnostics (removed before release).

use hubsim_core::ocp::{self, build_reduced};
use hubsim_core::solver::SolverSettings;

#[test]
#[ignore]
fn diag_reduced_solve() {
    let spec = hubsim_core::dp::default_oracle_spec();
    let problem = build_reduced(&spec);
    let settings = SolverSettings {
        record_iterations: true,
        ..Default::default()
    };
    let sol = ocp::solve(&problem, &settings, None);
    println!(
        "status {:?} f={} feas={:.3e} stat={:.3e} outer={} inner={}",
        sol.status, sol.objective, sol.feasibility, sol.stationarity, sol.outer_iters, sol.inner_iters
    );
    let mut last_outer = usize::MAX;
    for r in &sol.iterations {
        if r.outer != last_outer || r.inner % 50 == 0 {
            println!(
                "outer {} inner {} merit {:.6e} feas {:.3e} stat {:.3e} rho {:.1e}",
                r.outer, r.inner, r.merit, r.feasibility, r.stationarity, r.penalty
            );
            last_outer = r.outer;
        }
    }

    // Where is the residual stationarity?
    let eval = problem.evaluate(&sol.x);
    let mut g = eval.grad_objective.clone();
    for (row, col, val) in &eval.jacobian {
        g[*col] += sol.multipliers[*row] / problem.con_scale[*row] * val;
    }
    let mut pg: Vec<(usize, f64)> = (0..problem.num_vars())
        .map(|i| {
            let gs = g[i] * problem.scale[i];
            let xs = (sol.x[i] - problem.shift[i]) / problem.scale[i];
            let lo = (problem.lb[i] - problem.shift[i]) / problem.scale[i];
            let hi = (problem.ub[i] - problem.shift[i]) / problem.scale[i];
            let step = (xs - gs).max(lo).min(hi);
            (i, (xs - step).abs())
        })
        .collect();
    pg.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    for (i, v) in pg.iter().take(12) {
        println!(
            "var {} ({}) pg {:.3e} x {:.6} lb {:.3} ub {:.3}",
            i,
            problem.layout.name_of(*i),
            v,
            sol.x[*i],
            problem.lb[*i],
            problem.ub[*i]
        );
    }
}
