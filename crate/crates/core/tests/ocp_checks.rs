//! Transcription-level checks: warm-start feasibility, finite-difference
//! gradients, policy dominance, and the reduced-instance oracle.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use hubsim_core::config::{HubAssets, ScenarioConfig};
use hubsim_core::harness::{FlexKind, PolicyKind};
use hubsim_core::ocp::{self, build_da, build_mpc, build_reduced, ControlSeq, OcpProblem};
use hubsim_core::solver::{SolverSettings, SolveStatus};
use hubsim_core::synth;
use hubsim_core::timeseries::ScenarioData;

fn winter_setup() -> (ScenarioConfig, ScenarioData, HubAssets) {
    let cfg = ScenarioConfig::default();
    let raw = synth::generate(&cfg);
    let data = ScenarioData::build(&raw, &cfg.market).unwrap();
    let assets = HubAssets::resolve(&cfg).unwrap();
    (cfg, data, assets)
}

fn build_test_mpc(
    cfg: &ScenarioConfig,
    data: &ScenarioData,
    assets: &HubAssets,
    policy: PolicyKind,
    flex: FlexKind,
) -> OcpProblem {
    let state = cfg.initial_state(assets);
    let h = cfg.time.mpc_horizon_steps();
    let frames = data.mpc_window(cfg.time.start_s, h).unwrap();
    let commit = vec![0.0; h];
    let warm = ControlSeq::zeros(h);
    build_mpc(
        &state,
        &commit,
        frames,
        policy,
        flex,
        &warm,
        cfg,
        assets,
        cfg.time.start_s,
    )
    .unwrap()
}

#[test]
fn warm_start_trajectory_is_dynamics_feasible() {
    let (cfg, data, assets) = winter_setup();
    for flex in FlexKind::ALL {
        let p = build_test_mpc(&cfg, &data, &assets, PolicyKind::DaIda, flex);
        let eval = p.evaluate(&p.warm_start);
        let worst = eval
            .residuals
            .iter()
            .fold(0.0_f64, |a, b| a.max(b.abs()));
        assert!(
            worst <= 1e-10,
            "{flex:?}: forward-simulated start violates dynamics by {worst}"
        );
    }
}

#[test]
fn da_warm_start_trajectory_is_dynamics_feasible() {
    let (cfg, data, assets) = winter_setup();
    let state = cfg.initial_state(&assets);
    let frames = data.da_window(0, cfg.time.da_horizon_hours).unwrap();
    for policy in [PolicyKind::DaIda, PolicyKind::Da2Ida] {
        let p = build_da(&state, frames, policy, FlexKind::FullFlex, &cfg, &assets, 0).unwrap();
        let eval = p.evaluate(&p.warm_start);
        // The periodicity row is not enforced by a forward simulation.
        let worst = eval
            .residuals
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != p.periodicity_con)
            .fold(0.0_f64, |a, (_, b)| a.max(b.abs()));
        assert!(worst <= 1e-10, "{policy:?}: start violates dynamics by {worst}");
    }
}

/// Central finite differences of (f, c) along random directions match the
/// hand-coded gradient and Jacobian.
#[test]
fn gradients_match_finite_differences() {
    let (cfg, data, assets) = winter_setup();
    let p = build_test_mpc(&cfg, &data, &assets, PolicyKind::DaIda, FlexKind::FullFlex);
    let mut rng = StdRng::seed_from_u64(2024);
    let n = p.num_vars();

    for trial in 0..20 {
        // Random point near the warm start, kept strictly inside bounds.
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let span = (p.ub[i] - p.lb[i]).min(4.0 * p.scale[i]);
                let v = p.warm_start[i] + rng.random_range(-0.05..0.05) * span;
                v.clamp(p.lb[i], p.ub[i])
            })
            .collect();
        let dir: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0) * 1.0).collect();

        let eval = p.evaluate(&x);
        let h = 1e-6;
        let xp: Vec<f64> = x.iter().zip(&dir).map(|(v, d)| v + h * d).collect();
        let xm: Vec<f64> = x.iter().zip(&dir).map(|(v, d)| v - h * d).collect();
        let ep = p.evaluate(&xp);
        let em = p.evaluate(&xm);

        // Objective directional derivative.
        let fd_f = (ep.objective - em.objective) / (2.0 * h);
        let an_f: f64 = eval
            .grad_objective
            .iter()
            .zip(&dir)
            .map(|(g, d)| g * d)
            .sum();
        let denom = an_f.abs().max(1.0);
        assert!(
            (fd_f - an_f).abs() / denom <= 1e-5,
            "trial {trial}: objective gradient mismatch fd={fd_f} an={an_f}"
        );

        // Constraint Jacobian directional derivative, worst row relative
        // to the largest directional derivative magnitude.
        let m = eval.residuals.len();
        let mut jv = vec![0.0; m];
        for (row, col, val) in &eval.jacobian {
            jv[*row] += val * dir[*col];
        }
        let mut worst = 0.0_f64;
        let mut norm = 1.0_f64;
        for r in 0..m {
            let fd = (ep.residuals[r] - em.residuals[r]) / (2.0 * h);
            worst = worst.max((fd - jv[r]).abs());
            norm = norm.max(jv[r].abs());
        }
        assert!(
            worst / norm <= 1e-5,
            "trial {trial}: Jacobian mismatch {worst} vs scale {norm}"
        );
    }
}

#[test]
fn noflex_build_gates_storage_variables() {
    let (cfg, data, assets) = winter_setup();
    let p = build_test_mpc(&cfg, &data, &assets, PolicyKind::DaIda, FlexKind::NoFlex);
    assert!(p.layout.bess.is_none());
    assert!(p.layout.t_tess.is_none());
    assert!(p.layout.q_hp_tess.is_none());
    // Fast-charge mode pins EV discharge to zero.
    let ev = p.layout.ev.unwrap();
    for k in 0..p.layout.h {
        assert_eq!(p.ub[ev.p_dis.at(k)], 0.0);
    }

    let full = build_test_mpc(&cfg, &data, &assets, PolicyKind::DaIda, FlexKind::FullFlex);
    assert!(full.layout.bess.is_some());
    assert!(full.layout.t_tess.is_some());
    // All ten decision channels present.
    let d = full.decisions(&full.warm_start);
    assert_eq!(d.len(), full.layout.h);
}

#[test]
fn periodicity_constraint_ties_expected_nodes() {
    let (cfg, data, assets) = winter_setup();
    let state = cfg.initial_state(&assets);
    let frames = data.da_window(0, 48).unwrap();
    let p = build_da(
        &state,
        frames,
        PolicyKind::DaIda,
        FlexKind::FullFlex,
        &cfg,
        &assets,
        0,
    )
    .unwrap();
    let row = p.periodicity_con.expect("DA has a periodicity row");
    // Perturb SoC at node 24 and 48 and watch the residual respond.
    let b = p.layout.bess.unwrap();
    let mut x = p.warm_start.clone();
    let base = p.evaluate(&x).residuals[row];
    x[b.soc.at(24)] += 0.01;
    let up = p.evaluate(&x).residuals[row];
    assert!((up - base - 0.01).abs() < 1e-12);
    x[b.soc.at(48)] += 0.01;
    let back = p.evaluate(&x).residuals[row];
    assert!((back - base).abs() < 1e-12);
}

#[test]
fn zero_scenario_zero_objective() {
    // A zero-exogenous scenario with a zero decision vector has zero cost.
    let mut cfg = ScenarioConfig::default();
    cfg.weights.w_soc = 0.0; // no EV goal in the null scenario
    let assets = HubAssets::resolve(&cfg).unwrap();
    let mut raw = synth::generate(&cfg);
    let n = raw.grid.count;
    raw.da_eur_mwh = vec![0.0; n];
    raw.ida_eur_mwh = vec![0.0; n];
    raw.id1_eur_mwh = vec![0.0; n];
    raw.load_kw = vec![0.0; n];
    raw.pv_kw = vec![0.0; n];
    raw.g_ir_kwm2 = vec![0.0; n];
    raw.gamma_ev = vec![1.0; n];
    raw.occupancy = vec![0.0; n];
    raw.p_drive_kw = vec![0.0; n];
    // Hold the building at ambient so nothing needs to move.
    raw.t_amb_k = vec![294.0; n];
    let data = ScenarioData::build(&raw, &cfg.market).unwrap();
    let mut state = cfg.initial_state(&assets);
    state.t_in = 294.0;

    let h = cfg.time.mpc_horizon_steps();
    let frames = data.mpc_window(0, h).unwrap();
    let p = build_mpc(
        &state,
        &vec![0.0; h],
        frames,
        PolicyKind::DaIda,
        FlexKind::FullFlex,
        &ControlSeq::zeros(h),
        &cfg,
        &assets,
        0,
    )
    .unwrap();
    let eval = p.evaluate(&p.warm_start);
    // Aging still runs (calendar SEI), so only the non-loss groups vanish.
    let bd = p.objective_breakdown(&p.warm_start);
    assert!(bd.grid_a.abs() < 1e-12);
    assert!(bd.comfort.abs() < 1e-12);
    assert!(bd.soc_dep.abs() < 1e-12);
    assert!(eval.residuals.iter().all(|r| r.abs() < 1e-9));
}

#[test]
fn reduced_nlp_not_worse_than_dp_reference() {
    let spec = hubsim_core::dp::default_oracle_spec();
    let dp = hubsim_core::dp::solve_dp(&spec, 51, 11);
    let problem = build_reduced(&spec);
    let sol = ocp::solve(&problem, &SolverSettings::default(), None);
    assert_eq!(sol.status, SolveStatus::Optimal, "reduced NLP must converge");
    assert!(
        sol.objective <= dp.objective_eur + 0.02 * dp.objective_eur.abs(),
        "NLP {} vs DP {}",
        sol.objective,
        dp.objective_eur
    );
}

/// The co-optimizing first stage can embed any single-market plan, so its
/// converged objective cannot be worse.
#[test]
fn da2ida_stage_dominates_single_market_stage() {
    let (cfg, data, assets) = winter_setup();
    let state = cfg.initial_state(&assets);
    let frames = data.da_window(0, 48).unwrap();
    let single = build_da(
        &state,
        frames,
        PolicyKind::DaIda,
        FlexKind::FullFlex,
        &cfg,
        &assets,
        0,
    )
    .unwrap();
    let s1 = ocp::solve(&single, &cfg.solver, None);

    let co = build_da(
        &state,
        frames,
        PolicyKind::Da2Ida,
        FlexKind::FullFlex,
        &cfg,
        &assets,
        0,
    )
    .unwrap();
    // Embed the single-market solution: same physical plan, IDA leg zero.
    let mut warm = vec![0.0; co.num_vars()];
    embed_solution(&single, &s1.x, &co, &mut warm);
    let mut co2 = co.clone();
    co2.warm_start = warm;
    let s2 = ocp::solve(&co2, &cfg.solver, None);
    assert_eq!(s1.status, SolveStatus::Optimal);
    assert_eq!(s2.status, SolveStatus::Optimal);
    let tol = 1e-4 * s1.objective.abs().max(1.0);
    assert!(
        s2.objective <= s1.objective + tol,
        "co-optimized {} vs single {}",
        s2.objective,
        s1.objective
    );
}

/// Copy a single-market DA solution into the co-optimized layout.
fn embed_solution(from: &OcpProblem, x_from: &[f64], to: &OcpProblem, x_to: &mut [f64]) {
    let lf = &from.layout;
    let lt = &to.layout;
    let h = lf.h;
    let copy = |src: Option<hubsim_core::ocp::SeriesIdx>,
                dst: Option<hubsim_core::ocp::SeriesIdx>,
                x_to: &mut [f64]| {
        if let (Some(s), Some(d)) = (src, dst) {
            for k in 0..s.len {
                x_to[d.at(k)] = x_from[s.at(k)];
            }
        }
    };
    copy(lf.t_in, lt.t_in, x_to);
    copy(lf.s_comf, lt.s_comf, x_to);
    copy(lf.w_lo, lt.w_lo, x_to);
    copy(lf.w_hi, lt.w_hi, x_to);
    copy(lf.t_tess, lt.t_tess, x_to);
    copy(lf.q_tess_d, lt.q_tess_d, x_to);
    copy(lf.q_hp_tess, lt.q_hp_tess, x_to);
    copy(lf.p_hp, lt.p_hp, x_to);
    copy(lf.q_hp_d, lt.q_hp_d, x_to);
    for (bf, bt) in [(&lf.bess, &lt.bess), (&lf.ev, &lt.ev)] {
        if let (Some(bf), Some(bt)) = (bf, bt) {
            for (s, d) in [
                (bf.soc, bt.soc),
                (bf.i_r1, bt.i_r1),
                (bf.q, bt.q),
                (bf.i_cell, bt.i_cell),
                (bf.p_ch, bt.p_ch),
                (bf.p_dis, bt.p_dis),
            ] {
                for k in 0..s.len {
                    x_to[d.at(k)] = x_from[s.at(k)];
                }
            }
        }
    }
    for k in 0..h {
        x_to[lt.grid_a_in.at(k)] = x_from[lf.grid_a_in.at(k)];
        x_to[lt.grid_a_out.at(k)] = x_from[lf.grid_a_out.at(k)];
        x_to[lt.p_net.at(k)] = x_from[lf.p_net.at(k)];
    }
    if let Some((bi, bo)) = lt.grid_b {
        for k in 0..h {
            x_to[bi.at(k)] = 0.0;
            x_to[bo.at(k)] = 0.0;
        }
    }
}
