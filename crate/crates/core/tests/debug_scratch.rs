//! Temporary diagnostics (removed before release).

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use hubsim_core::config::{HubAssets, ScenarioConfig};
use hubsim_core::harness::{FlexKind, PolicyKind};
use hubsim_core::ocp::{build_da, build_mpc, ControlSeq};
use hubsim_core::synth;
use hubsim_core::timeseries::ScenarioData;

#[test]
#[ignore]
fn diag_da_warm_residuals() {
    let cfg = ScenarioConfig::default();
    let raw = synth::generate(&cfg);
    let data = ScenarioData::build(&raw, &cfg.market).unwrap();
    let assets = HubAssets::resolve(&cfg).unwrap();
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
    let eval = p.evaluate(&p.warm_start);
    let mut rows: Vec<(usize, f64)> = eval
        .residuals
        .iter()
        .enumerate()
        .map(|(i, r)| (i, r.abs()))
        .collect();
    rows.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    for (i, r) in rows.iter().take(8) {
        println!("row {i}: |r| = {r:.6e} kind {:?}", kind_of(&p.constraints[*i]));
    }
}

fn kind_of(c: &hubsim_core::ocp::Constraint) -> &'static str {
    use hubsim_core::ocp::Constraint::*;
    match c {
        Linear { .. } => "linear",
        SocStep { .. } => "soc",
        QStep { .. } => "q",
        PackPower { .. } => "pack",
        HpBalance { .. } => "hp",
        DriveCurrent { .. } => "drive",
    }
}

#[test]
#[ignore]
fn diag_jacobian_rows() {
    let cfg = ScenarioConfig::default();
    let raw = synth::generate(&cfg);
    let data = ScenarioData::build(&raw, &cfg.market).unwrap();
    let assets = HubAssets::resolve(&cfg).unwrap();
    let state = cfg.initial_state(&assets);
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
    let n = p.num_vars();
    let mut rng = StdRng::seed_from_u64(2024);
    let x: Vec<f64> = (0..n)
        .map(|i| {
            let span = (p.ub[i] - p.lb[i]).min(4.0 * p.scale[i]);
            let v = p.warm_start[i] + rng.random_range(-0.05..0.05) * span;
            v.clamp(p.lb[i], p.ub[i])
        })
        .collect();
    let dir: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let eval = p.evaluate(&x);
    let hstep = 1e-6;
    let xp: Vec<f64> = x.iter().zip(&dir).map(|(v, d)| v + hstep * d).collect();
    let xm: Vec<f64> = x.iter().zip(&dir).map(|(v, d)| v - hstep * d).collect();
    let ep = p.evaluate(&xp);
    let em = p.evaluate(&xm);
    let m = eval.residuals.len();
    let mut jv = vec![0.0; m];
    for (row, col, val) in &eval.jacobian {
        jv[*row] += val * dir[*col];
    }
    let mut rows: Vec<(usize, f64)> = (0..m)
        .map(|r| {
            let fd = (ep.residuals[r] - em.residuals[r]) / (2.0 * hstep);
            (r, (fd - jv[r]).abs())
        })
        .collect();
    rows.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    for (i, e) in rows.iter().take(8) {
        println!("row {i}: err {e:.4e} kind {:?}", kind_of(&p.constraints[*i]));
    }
}
