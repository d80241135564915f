//! Temporary MPC-chain timing diagnostics (removed before release).

use hubsim_core::config::{HubAssets, ScenarioConfig};
use hubsim_core::harness::{plant_step, FlexKind, Plant, PolicyKind};
use hubsim_core::ocp::{self, build_da, build_mpc, da_commit_schedule, ControlSeq};
use hubsim_core::solver::SolveStatus;
use hubsim_core::synth;
use hubsim_core::timeseries::ScenarioData;

#[test]
#[ignore]
fn diag_mpc_chain() {
    let cfg = ScenarioConfig::default();
    let raw = synth::generate(&cfg);
    let data = ScenarioData::build(&raw, &cfg.market).unwrap();
    let assets = HubAssets::resolve(&cfg).unwrap();
    let plant = Plant {
        cfg: &cfg,
        assets: assets.clone(),
    };
    let mut state = cfg.initial_state(&assets);
    let policy = PolicyKind::DaIda;
    let flex = FlexKind::FullFlex;

    let frames = data.da_window(0, 48).unwrap();
    let t0 = std::time::Instant::now();
    let da_problem = build_da(&state, frames, policy, flex, &cfg, &assets, 0).unwrap();
    let da_sol = ocp::solve(&da_problem, &cfg.solver, None);
    println!(
        "DA: {:?} f={:.3} outer={} inner={} in {} ms",
        da_sol.status,
        da_sol.objective,
        da_sol.outer_iters,
        da_sol.inner_iters,
        t0.elapsed().as_millis()
    );
    let commit48 = da_commit_schedule(&da_problem, &da_sol.x);
    let da_controls = ControlSeq::from_solution(&da_problem, &da_sol.x);

    let h = cfg.time.mpc_horizon_steps();
    let mut warm = da_controls.held_to(4, h);
    let mut lambda: Option<Vec<f64>> = None;
    let mut total_ms = 0u128;
    let mut statuses = Vec::new();
    for j in 0..12 {
        let t = (j as i64) * 900;
        let frames = data.mpc_window(t, h).unwrap();
        let commit: Vec<f64> = (0..h)
            .map(|k| {
                let hour = ((t + (k as i64) * 900) / 3600) as usize;
                if hour < 24 {
                    commit48[hour]
                } else {
                    0.0
                }
            })
            .collect();
        let problem = build_mpc(
            &state, &commit, frames, policy, flex, &warm, &cfg, &assets, t,
        )
        .unwrap();
        let t1 = std::time::Instant::now();
        let sol = ocp::solve(
            &problem,
            &cfg.solver,
            lambda.as_deref().filter(|l| l.len() == problem.num_eq()),
        );
        let ms = t1.elapsed().as_millis();
        total_ms += ms;
        println!(
            "MPC {j}: {:?} f={:.4} feas={:.1e} outer={} inner={} comp={:.1e} {} ms",
            sol.status, sol.objective, sol.feasibility, sol.outer_iters, sol.inner_iters, sol.comp_violation, ms
        );
        if sol.status != SolveStatus::Optimal {
            let eval = problem.evaluate(&sol.x);
            let mut rows: Vec<(usize, f64)> = eval
                .residuals
                .iter()
                .enumerate()
                .map(|(i, r)| (i, (r / problem.con_scale[i]).abs()))
                .collect();
            rows.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            for (i, r) in rows.iter().take(6) {
                let kind = match &problem.constraints[*i] {
                    hubsim_core::ocp::Constraint::Linear { terms, .. } => {
                        format!("linear({})", terms.iter().map(|(c, _)| problem.layout.name_of(*c as usize)).collect::<Vec<_>>().join(","))
                    }
                    hubsim_core::ocp::Constraint::SocStep { .. } => "soc".into(),
                    hubsim_core::ocp::Constraint::QStep { .. } => "q".into(),
                    hubsim_core::ocp::Constraint::PackPower { i, .. } => {
                        format!("pack({})", problem.layout.name_of(*i as usize))
                    }
                    hubsim_core::ocp::Constraint::HpBalance { .. } => "hp".into(),
                    hubsim_core::ocp::Constraint::DriveCurrent { .. } => "drive".into(),
                };
                println!("   row {i} |c|={r:.3e} {kind}");
            }
            break;
        }
        statuses.push(sol.status);
        lambda = Some(sol.multipliers.clone());
        let decision = sol.decisions[0];
        let truth = data.truth_at(t).unwrap();
        let (next, _) = plant_step(&state, &decision, truth, 900.0, &plant).unwrap();
        state = next;
        warm = ControlSeq::from_solution(&problem, &sol.x).shifted();
    }
    println!("total MPC time for 12 steps: {} ms (avg {} ms)", total_ms, total_ms / 12);
    assert!(statuses.iter().all(|s| *s == SolveStatus::Optimal));
}
