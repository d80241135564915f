//! Temporary DA-solve diagnostics (removed before release).

use hubsim_core::config::{HubAssets, ScenarioConfig};
use hubsim_core::harness::{FlexKind, PolicyKind};
use hubsim_core::ocp::{self, build_da};
use hubsim_core::synth;
use hubsim_core::timeseries::ScenarioData;

#[test]
#[ignore]
fn diag_da_solves() {
    let cfg = ScenarioConfig::default();
    let raw = synth::generate(&cfg);
    let data = ScenarioData::build(&raw, &cfg.market).unwrap();
    let assets = HubAssets::resolve(&cfg).unwrap();
    let state = cfg.initial_state(&assets);
    let frames = data.da_window(0, 48).unwrap();
    for policy in [PolicyKind::DaIda, PolicyKind::Da2Ida] {
        for flex in [FlexKind::NoFlex, FlexKind::FullFlex] {
            let p = build_da(&state, frames, policy, flex, &cfg, &assets, 0).unwrap();
            let t0 = std::time::Instant::now();
            let sol = ocp::solve(&p, &cfg.solver, None);
            println!(
                "{policy:?}/{flex:?}: {:?} f={:.4} feas={:.2e} stat={:.2e} outer={} inner={} comp={:.2e} {} ms",
                sol.status,
                sol.objective,
                sol.feasibility,
                sol.stationarity,
                sol.outer_iters,
                sol.inner_iters,
                sol.comp_violation,
                t0.elapsed().as_millis()
            );

            let eval = p.evaluate(&sol.x);
            let mut g = eval.grad_objective.clone();
            for (row, col, val) in &eval.jacobian {
                g[*col] += sol.multipliers[*row] / p.con_scale[*row] * val;
            }
            let mut pg: Vec<(usize, f64)> = (0..p.num_vars())
                .map(|i| {
                    let gs = g[i] * p.scale[i];
                    let xs = (sol.x[i] - p.shift[i]) / p.scale[i];
                    let lo = (p.lb[i] - p.shift[i]) / p.scale[i];
                    let hi = (p.ub[i] - p.shift[i]) / p.scale[i];
                    let step = (xs - gs).max(lo).min(hi);
                    (i, (xs - step).abs())
                })
                .collect();
            pg.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            for (i, v) in pg.iter().take(8) {
                println!(
                    "  var {} ({}) pg {:.3e} x {:.6} lb {:.3} ub {:.3}",
                    i,
                    p.layout.name_of(*i),
                    v,
                    sol.x[*i],
                    p.lb[*i],
                    p.ub[*i]
                );
            }
        }
    }
}
