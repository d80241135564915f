//! Closed-loop sequential market operation: daily planner solve,
//! quarter-hourly MPC solve, plant simulation, and metric accumulation
//! across the policy x flexibility matrix.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery::{self, power_to_current, BatteryParams};
use crate::config::{ComplementarityConfig, HubAssets, ScenarioConfig, Season};
use crate::grid::{TimeGrid, HOUR_S};
use crate::market::{cost_da, cost_deviation};
use crate::ocp::{
    self, build_da, build_mpc, da_commit_schedule, ControlSeq, CostBreakdown, OcpProblem,
    PredictedStates,
};
use crate::solver::{SolveStatus, SolverSettings};
use crate::thermal::{building_step, comfort_slack, cop, soc_tess, tess_step};
use crate::timeseries::ScenarioData;
use crate::types::{DecisionVector, ExogenousFrame, HubState};

/// Market sequence followed by the two policy stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Both stages optimize against day-ahead prices; deviations settle at
    /// the continuous-time index.
    Da2,
    /// Day-ahead first, continuous-time intra-day second.
    DaCt,
    /// Day-ahead first, intra-day auction second.
    DaIda,
    /// First stage co-optimizes day-ahead and intra-day auction.
    Da2Ida,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::Da2,
        PolicyKind::DaCt,
        PolicyKind::DaIda,
        PolicyKind::Da2Ida,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            PolicyKind::Da2 => "da2",
            PolicyKind::DaCt => "da_ct",
            PolicyKind::DaIda => "da_ida",
            PolicyKind::Da2Ida => "da2ida",
        }
    }

    /// Settlement prices of the second stage (buy, sell) at one step.
    pub fn settlement_prices(&self, f: &ExogenousFrame) -> (f64, f64) {
        match self {
            // The DA-only controller is still settled on the CT market.
            PolicyKind::Da2 | PolicyKind::DaCt => (f.lambda_id1_buy, f.lambda_id1_sell),
            PolicyKind::DaIda | PolicyKind::Da2Ida => (f.lambda_ida_buy, f.lambda_ida_sell),
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "da2" => Ok(PolicyKind::Da2),
            "da_ct" | "dact" => Ok(PolicyKind::DaCt),
            "da_ida" | "daida" => Ok(PolicyKind::DaIda),
            "da2ida" => Ok(PolicyKind::Da2Ida),
            other => Err(format!("unknown policy `{other}`")),
        }
    }
}

/// Which storages participate as decision variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlexKind {
    NoFlex,
    ThFlex,
    EFlex,
    FullFlex,
}

impl FlexKind {
    pub const ALL: [FlexKind; 4] = [
        FlexKind::NoFlex,
        FlexKind::ThFlex,
        FlexKind::EFlex,
        FlexKind::FullFlex,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            FlexKind::NoFlex => "noflex",
            FlexKind::ThFlex => "thflex",
            FlexKind::EFlex => "eflex",
            FlexKind::FullFlex => "fullflex",
        }
    }

    pub fn has_bess(&self) -> bool {
        matches!(self, FlexKind::EFlex | FlexKind::FullFlex)
    }

    pub fn has_tess(&self) -> bool {
        matches!(self, FlexKind::ThFlex | FlexKind::FullFlex)
    }

    /// Without electric flexibility the EV charges greedily (no V2G).
    pub fn fast_charge_ev(&self) -> bool {
        matches!(self, FlexKind::NoFlex | FlexKind::ThFlex)
    }
}

impl std::str::FromStr for FlexKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "noflex" => Ok(FlexKind::NoFlex),
            "thflex" => Ok(FlexKind::ThFlex),
            "eflex" => Ok(FlexKind::EFlex),
            "fullflex" => Ok(FlexKind::FullFlex),
            other => Err(format!("unknown flexibility setup `{other}`")),
        }
    }
}

/// One EV absence window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvEvent {
    pub t_dep_s: i64,
    pub t_arr_s: i64,
    pub soc_dep_target: f64,
    pub p_drive_kw: f64,
}

/// Chronological, non-overlapping EV mobility schedule.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvSchedule {
    pub events: Vec<EvEvent>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("events overlap or are out of order at index {0}")]
    Overlap(usize),
}

impl EvSchedule {
    pub fn new(events: Vec<EvEvent>) -> Result<Self, ScheduleError> {
        for (i, w) in events.windows(2).enumerate() {
            if w[0].t_arr_s > w[1].t_dep_s || w[0].t_dep_s >= w[0].t_arr_s {
                return Err(ScheduleError::Overlap(i));
            }
        }
        if let Some(last) = events.last() {
            if last.t_dep_s >= last.t_arr_s {
                return Err(ScheduleError::Overlap(events.len() - 1));
            }
        }
        Ok(Self { events })
    }

    /// Derive the schedule from the availability series (1 -> 0 edges).
    pub fn from_gamma(
        grid: &TimeGrid,
        gamma: impl Fn(usize) -> f64,
        p_drive: impl Fn(usize) -> f64,
        soc_dep_target: f64,
    ) -> Self {
        let mut events = Vec::new();
        let mut dep: Option<(i64, f64)> = None;
        for k in 0..grid.count {
            let away = gamma(k) < 0.5;
            match (&dep, away) {
                (None, true) => dep = Some((grid.at(k), p_drive(k))),
                (Some((t_dep, p)), false) => {
                    events.push(EvEvent {
                        t_dep_s: *t_dep,
                        t_arr_s: grid.at(k),
                        soc_dep_target,
                        p_drive_kw: *p,
                    });
                    dep = None;
                }
                _ => {}
            }
        }
        if let Some((t_dep, p)) = dep {
            events.push(EvEvent {
                t_dep_s: t_dep,
                t_arr_s: grid.end_s(),
                soc_dep_target,
                p_drive_kw: p,
            });
        }
        Self { events }
    }

    pub fn gamma_at(&self, t_s: i64) -> f64 {
        for e in &self.events {
            if t_s >= e.t_dep_s && t_s < e.t_arr_s {
                return 0.0;
            }
        }
        1.0
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("data span too short: need {need_s} s from start, have {have_s} s")]
    DataSpan { need_s: i64, have_s: i64 },
    #[error(transparent)]
    Build(#[from] ocp::BuildError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("plant fault at t={t_s}: {msg}")]
    Plant { t_s: i64, msg: String },
}

/// Where the warm start of an MPC solve came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WarmSource {
    DaPlan,
    PrevMpc,
}

/// Per-step closed-loop record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub t_s: i64,
    pub decision: DecisionVector,
    pub state_after: HubState,
    /// Realized net grid power, import positive [kW].
    pub p_grid_kw: f64,
    pub p_hp_e_kw: f64,
    pub p_pv_kw: f64,
    pub p_load_kw: f64,
    pub commit_kw: f64,
    pub lambda_settle_buy: f64,
    pub lambda_settle_sell: f64,
    pub cost_dev_eur: f64,
    pub cost_loss_eur: f64,
    pub penalty_comfort_eur: f64,
    pub penalty_soc_eur: f64,
    pub comfort_slack_k: f64,
    pub soc_tess: f64,
    pub i_loss_bess_a: f64,
    pub i_loss_ev_a: f64,
    pub i_sei_bess_a: f64,
    pub i_sei_ev_a: f64,
    pub solver_status: SolveStatus,
    pub solver_inner_iters: usize,
    pub warm_source: WarmSource,
    pub periodicity_residual: Option<f64>,
    pub comp_violation_kw2: f64,
    pub comp_retries: usize,
    pub fallback_hold: bool,
    pub clamped: bool,
}

/// Per-day planner record.
#[derive(Debug, Clone)]
pub struct DaRecord {
    pub day: usize,
    pub t_s: i64,
    /// Hourly DA market position over the full 48 h horizon.
    pub commit_kw: Vec<f64>,
    pub objective: f64,
    pub breakdown: CostBreakdown,
    pub status: SolveStatus,
    pub inner_iters: usize,
    pub periodicity_residual: Option<f64>,
    pub comp_violation_kw2: f64,
    pub comp_retries: usize,
    /// Settlement of the committed day at DA prices [EUR].
    pub cost_da_eur: f64,
    pub predicted: PredictedStates,
    /// Planned FEC over the committed day.
    pub plan_fec_bess: f64,
    pub plan_fec_ev: f64,
    pub plan_q_loss_bess_ah: f64,
    pub plan_q_loss_ev_ah: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Totals {
    pub c_da_eur: f64,
    pub c_dev_eur: f64,
    pub c_grid_eur: f64,
    pub c_loss_eur: f64,
    pub p_soc_dep_eur: f64,
    pub p_comfort_eur: f64,
    pub total_eur: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ScenarioKey {
    pub policy: PolicyKind,
    pub flex: FlexKind,
    pub season: Season,
}

impl ScenarioKey {
    pub fn label(&self) -> String {
        format!("{}_{}_{}", self.policy.label(), self.flex.label(), self.season)
    }
}

/// Complete closed-loop run history for one scenario.
#[derive(Debug, Clone)]
pub struct RunLedger {
    pub key: ScenarioKey,
    pub steps: Vec<StepRecord>,
    pub da: Vec<DaRecord>,
    pub totals: Totals,
    pub fec_bess: f64,
    pub fec_ev: f64,
    pub q_loss_bess_ah: f64,
    pub q_loss_ev_ah: f64,
    pub plan_fec_bess: f64,
    pub plan_fec_ev: f64,
    pub ev_schedule: EvSchedule,
    pub solve_count: usize,
    pub converged_count: usize,
}

impl RunLedger {
    /// (realized - plan) / plan per asset and summed, as fractions.
    pub fn delta_fec(&self) -> (Option<f64>, Option<f64>, Option<f64>) {
        let rel = |real: f64, plan: f64| (plan > 0.0).then(|| (real - plan) / plan);
        let total_plan = self.plan_fec_bess + self.plan_fec_ev;
        (
            rel(self.fec_bess, self.plan_fec_bess),
            rel(self.fec_ev, self.plan_fec_ev),
            rel(self.fec_bess + self.fec_ev, total_plan),
        )
    }
}

/// Plant-side context: true parameters (optionally perturbed).
pub struct Plant<'a> {
    pub cfg: &'a ScenarioConfig,
    pub assets: HubAssets,
}

/// Realized quantities of one plant step.
#[derive(Debug, Clone, Copy)]
pub struct PlantOutcome {
    pub p_grid_kw: f64,
    pub p_hp_e_kw: f64,
    pub comfort_slack_k: f64,
    pub i_loss_bess_a: f64,
    pub i_loss_ev_a: f64,
    pub i_sei_bess_a: f64,
    pub i_sei_ev_a: f64,
    pub clamped: bool,
}

/// Advance the true plant one step under a decision.
///
/// Decisions are clamped into physical device limits (flagged); the grid
/// power is the balancing residual of the realized bus flows, so the bus
/// balance holds exactly by construction.
pub fn plant_step(
    state: &HubState,
    decision: &DecisionVector,
    truth: &ExogenousFrame,
    dt_s: f64,
    plant: &Plant,
) -> Result<(HubState, PlantOutcome), RunError> {
    let cfg = plant.cfg;
    let hp = &cfg.heat_pump;
    let mut clamped = false;
    let mut clamp = |v: f64, lo: f64, hi: f64| {
        let c = v.clamp(lo, hi);
        if (c - v).abs() > 1e-12 {
            clamped = true;
        }
        c
    };

    let q_hp_d = clamp(decision.q_hp_d, 0.0, hp.q_hp_d_max);
    let q_hp_tess = clamp(decision.q_hp_tess, 0.0, hp.q_hp_tess_max);
    let q_tess_d = clamp(decision.q_tess_d, 0.0, cfg.tess.q_tess_d_max);

    // Thermal dynamics.
    let t_in_next = building_step(
        state.t_in,
        truth.t_amb,
        truth.g_ir,
        q_tess_d,
        q_hp_d,
        dt_s,
        &cfg.building,
    );
    let t_tess_next = tess_step(state.t_tess, q_hp_tess, q_tess_d, dt_s, &cfg.tess);
    if t_in_next < cfg.building.t_in_phys_lo || t_in_next > cfg.building.t_in_phys_hi {
        return Err(RunError::Plant {
            t_s: 0,
            msg: format!("T_in {t_in_next} K left physical bounds"),
        });
    }
    if t_tess_next < cfg.tess.t_tess_phys_lo || t_tess_next > cfg.tess.t_tess_phys_hi {
        return Err(RunError::Plant {
            t_s: 0,
            msg: format!("T_TESS {t_tess_next} K left physical bounds"),
        });
    }

    // Realized heat-pump electric draw from the true branch COP.
    let q_total = q_hp_d + q_hp_tess;
    let p_hp_e = if q_total > 0.0 {
        let k = hp.eta_hp * hp.mdot_cf_kw_per_k();
        let t_hp_in = if q_hp_d >= q_hp_tess {
            hp.t_out_d - q_hp_d / k
        } else {
            hp.t_out_tess - q_hp_tess / k
        };
        q_total / cop(t_hp_in, truth.t_amb, hp)
    } else {
        0.0
    };

    // Batteries: BESS follows its commanded pack power, the EV only while
    // plugged in; while away it drains by the traction draw.
    let plugged = truth.gamma_ev >= 0.5;
    let step_pack = |s: &battery::BatteryState,
                     p: &BatteryParams,
                     p_dis_cmd: f64,
                     p_ch_cmd: f64,
                     clamped: &mut bool|
     -> Result<(battery::BatteryState, f64, f64, f64), RunError> {
        let p_dis = p_dis_cmd.clamp(0.0, p.p_max_discharge_kw);
        let p_ch = p_ch_cmd.clamp(0.0, p.p_max_charge_kw);
        if (p_dis - p_dis_cmd).abs() > 1e-12 || (p_ch - p_ch_cmd).abs() > 1e-12 {
            *clamped = true;
        }
        let p_pack = p_dis - p_ch;
        let i = match power_to_current(p_pack, s, p) {
            Ok(i) => i,
            Err(_) => {
                *clamped = true;
                let v_eff = battery::ocv_with_deriv(s.soc, p).0 - s.i_r1_a * p.r1_ohm;
                v_eff / (2.0 * p.r0_ohm)
            }
        };
        let (next, ecm, aging) = battery::step_full(s, i, dt_s, p).map_err(|e| RunError::Plant {
            t_s: 0,
            msg: e.to_string(),
        })?;
        Ok((next, ecm.p_pack_kw, aging.i_loss_a, aging.i_sei_a))
    };

    let (bess_next, bess_pack_kw, i_loss_bess, i_sei_bess) = step_pack(
        &state.bess,
        &plant.assets.bess,
        decision.p_bess_plus,
        decision.p_bess_minus,
        &mut clamped,
    )?;

    let (ev_next, ev_pack_kw, i_loss_ev, i_sei_ev) = if plugged {
        step_pack(
            &state.ev,
            &plant.assets.ev,
            decision.p_ev_plus,
            decision.p_ev_minus,
            &mut clamped,
        )?
    } else {
        // Traction drain: energy-based SoC, aging from the drive current.
        let p = &plant.assets.ev;
        let s = &state.ev;
        let (ocv, _) = battery::ocv_with_deriv(s.soc, p);
        let i = 1000.0 * truth.p_drive_ev / (p.cells() * ocv);
        let aging = battery::aging_step(s, i, dt_s, p);
        let soc = s.soc - truth.p_drive_ev * (dt_s / 3600.0) / p.pack_energy_kwh();
        if !(0.0..=1.0).contains(&soc) {
            return Err(RunError::Plant {
                t_s: 0,
                msg: format!("EV SoC {soc} left [0,1] while driving"),
            });
        }
        let rc_a = (-dt_s / p.tau_s()).exp();
        let next = battery::BatteryState {
            soc,
            i_r1_a: rc_a * s.i_r1_a + (1.0 - rc_a) * i,
            q_ah: aging.q_ah,
            age_s: aging.age_s,
            fec: s.fec + battery::fec_increment(s.soc, soc),
            q_loss_ah: aging.q_loss_ah,
        };
        (next, 0.0, aging.i_loss_a, aging.i_sei_a)
    };

    // Bus-side storage flows through the converters.
    let bus_of = |pack_kw: f64, eta: f64| {
        if pack_kw >= 0.0 {
            eta * pack_kw
        } else {
            pack_kw / eta
        }
    };
    let bus_bess = bus_of(bess_pack_kw, cfg.bess.eta_conv);
    let bus_ev = if plugged {
        bus_of(ev_pack_kw, cfg.ev.eta_conv)
    } else {
        0.0
    };

    // Grid power as the balancing residual of the realized flows.
    let p_grid = truth.p_load_e + p_hp_e - truth.p_pv - bus_bess - bus_ev;
    debug_assert!(
        (truth.p_pv + bus_bess + bus_ev + p_grid - truth.p_load_e - p_hp_e).abs() < 1e-9
    );

    let next = HubState {
        t_in: t_in_next,
        t_tess: t_tess_next,
        bess: bess_next,
        ev: ev_next,
    };
    let outcome = PlantOutcome {
        p_grid_kw: p_grid,
        p_hp_e_kw: p_hp_e,
        comfort_slack_k: comfort_slack(t_in_next, &cfg.building),
        i_loss_bess_a: i_loss_bess,
        i_loss_ev_a: i_loss_ev,
        i_sei_bess_a: i_sei_bess,
        i_sei_ev_a: i_sei_ev,
        clamped,
    };
    Ok((next, outcome))
}

fn solve_with_comp_fallback(
    problem: &OcpProblem,
    settings: &SolverSettings,
    lambda0: Option<&[f64]>,
    comp: &ComplementarityConfig,
) -> (ocp::OcpSolution, usize) {
    let mut sol = ocp::solve(problem, settings, lambda0);
    let mut retries = 0;
    let mut rho = comp.penalty_rho0;
    while sol.comp_violation > comp.eps_kw2 && retries < comp.max_retries {
        let mut penalized = problem.with_comp_penalty(rho);
        penalized.warm_start = sol.x.clone();
        sol = ocp::solve(&penalized, settings, Some(&sol.multipliers));
        rho *= comp.penalty_growth;
        retries += 1;
    }
    (sol, retries)
}

fn solve_ok(sol: &ocp::OcpSolution) -> bool {
    sol.status == SolveStatus::Optimal || sol.feasibility <= 1e-3
}

/// Run one closed-loop scenario.
///
/// `forecast` supplies the belief series; `None` means perfect foresight
/// (beliefs equal the truth).
pub fn run_scenario(
    cfg: &ScenarioConfig,
    data: &ScenarioData,
    forecast: Option<&ScenarioData>,
    policy: PolicyKind,
    flex: FlexKind,
) -> Result<RunLedger, RunError> {
    let beliefs = forecast.unwrap_or(data);
    let assets = HubAssets::resolve(cfg)?;
    let plant = Plant {
        cfg,
        assets: assets.perturbed(cfg.plant.param_mismatch),
    };

    let steps_per_hour = cfg.time.mpc_steps_per_hour();
    let mpc_h = cfg.time.mpc_horizon_steps();
    let start = cfg.time.start_s;
    let days = cfg.time.days;
    let need_s = days as i64 * 86400 + cfg.time.da_horizon_hours as i64 * HOUR_S;
    let have_s = data.mpc_grid.end_s() - start;
    if have_s < need_s {
        return Err(RunError::DataSpan { need_s, have_s });
    }

    let mut state = cfg.initial_state(&plant.assets);
    let mut steps: Vec<StepRecord> = Vec::with_capacity(days * 96);
    let mut da_records: Vec<DaRecord> = Vec::with_capacity(days);
    let mut totals = Totals::default();
    let mut lambda_mpc: Option<Vec<f64>> = None;
    let mut lambda_da: Option<Vec<f64>> = None;
    let mut prev_controls: Option<ControlSeq> = None;
    let mut prev_decision = DecisionVector::default();
    let mut solve_count = 0usize;
    let mut converged = 0usize;

    let ev_schedule = EvSchedule::from_gamma(
        &data.mpc_grid,
        |k| data.mpc_frames[k].gamma_ev,
        |k| data.mpc_frames[k].p_drive_ev,
        cfg.ev.soc_dep_target,
    );

    let dt_s = cfg.time.mpc_step_s as f64;
    let dt_h = dt_s / HOUR_S as f64;

    for day in 0..days {
        let t_day = start + day as i64 * 86400;

        // Stage 1: plan the next 48 h, commit the first 24 hourly positions.
        let da_frames = beliefs
            .da_window(t_day, cfg.time.da_horizon_hours)
            .ok_or(RunError::DataSpan { need_s, have_s })?;
        let da_problem = build_da(&state, da_frames, policy, flex, cfg, &assets, t_day)?;
        let (da_sol, da_retries) = solve_with_comp_fallback(
            &da_problem,
            &cfg.solver,
            lambda_da.as_deref().filter(|l| l.len() == da_problem.num_eq()),
            &cfg.complementarity,
        );
        lambda_da = Some(da_sol.multipliers.clone());
        solve_count += 1;
        if da_sol.status == SolveStatus::Optimal {
            converged += 1;
        }

        let commit48 = da_commit_schedule(&da_problem, &da_sol.x);
        let truth_da = data
            .da_window(t_day, 24)
            .ok_or(RunError::DataSpan { need_s, have_s })?;
        let cost_da_day: f64 = (0..24)
            .map(|j| {
                cfg.weights.w_grid
                    * cost_da(commit48[j], truth_da[j].lambda_da_buy, truth_da[j].lambda_da_sell)
            })
            .sum();
        totals.c_da_eur += cost_da_day;

        let plan_fec = |soc: &[f64]| -> f64 {
            soc.windows(2)
                .take(24)
                .map(|w| battery::fec_increment(w[0], w[1]))
                .sum()
        };
        let plan_q_loss = |q: &[f64]| -> f64 {
            if q.len() > 24 {
                q[0] - q[24]
            } else {
                0.0
            }
        };
        da_records.push(DaRecord {
            day,
            t_s: t_day,
            commit_kw: commit48.clone(),
            objective: da_sol.objective,
            breakdown: da_sol.breakdown,
            status: da_sol.status,
            inner_iters: da_sol.inner_iters,
            periodicity_residual: da_sol.periodicity_residual,
            comp_violation_kw2: da_sol.comp_violation,
            comp_retries: da_retries,
            cost_da_eur: cost_da_day,
            plan_fec_bess: plan_fec(&da_sol.states.soc_bess),
            plan_fec_ev: plan_fec(&da_sol.states.soc_ev),
            plan_q_loss_bess_ah: plan_q_loss(&da_sol.states.q_bess),
            plan_q_loss_ev_ah: plan_q_loss(&da_sol.states.q_ev),
            predicted: da_sol.states.clone(),
        });

        let da_controls = ControlSeq::from_solution(&da_problem, &da_sol.x);

        // Stage 2: quarter-hourly receding-horizon control.
        for j in 0..(24 * steps_per_hour) {
            let t = t_day + (j as i64) * cfg.time.mpc_step_s;
            let frames = beliefs
                .mpc_window(t, mpc_h)
                .ok_or(RunError::DataSpan { need_s, have_s })?;

            // Commitment held hourly; zero beyond the committed day.
            let commit96: Vec<f64> = (0..mpc_h)
                .map(|k| {
                    let hour = ((t + (k as i64) * cfg.time.mpc_step_s - t_day) / HOUR_S) as usize;
                    if hour < 24 {
                        commit48[hour]
                    } else {
                        0.0
                    }
                })
                .collect();

            let (warm, warm_source) = match &prev_controls {
                Some(c) if j > 0 => (c.shifted(), WarmSource::PrevMpc),
                _ => (da_controls.held_to(steps_per_hour, mpc_h), WarmSource::DaPlan),
            };

            let problem = build_mpc(
                &state, &commit96, frames, policy, flex, &warm, cfg, &assets, t,
            )?;
            let (sol, retries) = solve_with_comp_fallback(
                &problem,
                &cfg.solver,
                lambda_mpc.as_deref().filter(|l| l.len() == problem.num_eq()),
                &cfg.complementarity,
            );
            lambda_mpc = Some(sol.multipliers.clone());
            solve_count += 1;
            if sol.status == SolveStatus::Optimal {
                converged += 1;
            }

            let (decision, fallback_hold) = if solve_ok(&sol) {
                (sol.decisions[0], false)
            } else {
                (prev_decision, true)
            };
            prev_controls = Some(ControlSeq::from_solution(&problem, &sol.x));

            let truth = *data.truth_at(t).ok_or(RunError::DataSpan { need_s, have_s })?;
            let state_before = state.clone();
            let (next, out) = plant_step(&state, &decision, &truth, dt_s, &plant)
                .map_err(|e| match e {
                    RunError::Plant { msg, .. } => RunError::Plant { t_s: t, msg },
                    other => other,
                })?;

            // Settlement and penalties realized this step.
            let (lb, ls) = policy.settlement_prices(&truth);
            let cost_dev = cfg.weights.w_grid
                * cost_deviation(out.p_grid_kw, commit96[0], lb, ls)
                * dt_h;
            let cost_loss = cfg.weights.w_loss
                * dt_h
                * (plant.assets.bess.c_loss_eur_ah
                    * plant.assets.bess.cells()
                    * out.i_loss_bess_a
                    + plant.assets.ev.c_loss_eur_ah * plant.assets.ev.cells() * out.i_loss_ev_a);
            let pen_comfort =
                cfg.weights.w_t * out.comfort_slack_k * truth.occupancy * dt_h;
            let pen_soc = if flex.fast_charge_ev() {
                let e = next.ev.soc - cfg.ev.soc_dep_target;
                cfg.weights.w_soc * truth.gamma_ev * e * e * dt_h
            } else if ev_schedule.events.iter().any(|e| e.t_dep_s == t) {
                let e = state_before.ev.soc - cfg.ev.soc_dep_target;
                cfg.weights.w_soc * e * e
            } else {
                0.0
            };

            totals.c_dev_eur += cost_dev;
            totals.c_loss_eur += cost_loss;
            totals.p_comfort_eur += pen_comfort;
            totals.p_soc_dep_eur += pen_soc;

            steps.push(StepRecord {
                t_s: t,
                decision,
                state_after: next.clone(),
                p_grid_kw: out.p_grid_kw,
                p_hp_e_kw: out.p_hp_e_kw,
                p_pv_kw: truth.p_pv,
                p_load_kw: truth.p_load_e,
                commit_kw: commit96[0],
                lambda_settle_buy: lb,
                lambda_settle_sell: ls,
                cost_dev_eur: cost_dev,
                cost_loss_eur: cost_loss,
                penalty_comfort_eur: pen_comfort,
                penalty_soc_eur: pen_soc,
                comfort_slack_k: out.comfort_slack_k,
                soc_tess: soc_tess(next.t_tess, &cfg.tess),
                i_loss_bess_a: out.i_loss_bess_a,
                i_loss_ev_a: out.i_loss_ev_a,
                i_sei_bess_a: out.i_sei_bess_a,
                i_sei_ev_a: out.i_sei_ev_a,
                solver_status: sol.status,
                solver_inner_iters: sol.inner_iters,
                warm_source,
                periodicity_residual: sol.periodicity_residual,
                comp_violation_kw2: sol.comp_violation,
                comp_retries: retries,
                fallback_hold,
                clamped: out.clamped,
            });

            prev_decision = decision;
            state = next;
        }
    }

    totals.c_grid_eur = totals.c_da_eur + totals.c_dev_eur;
    totals.total_eur =
        totals.c_grid_eur + totals.c_loss_eur + totals.p_soc_dep_eur + totals.p_comfort_eur;

    let plan_fec_bess: f64 = da_records.iter().map(|d| d.plan_fec_bess).sum();
    let plan_fec_ev: f64 = da_records.iter().map(|d| d.plan_fec_ev).sum();

    Ok(RunLedger {
        key: ScenarioKey {
            policy,
            flex,
            season: cfg.season,
        },
        totals,
        fec_bess: state.bess.fec,
        fec_ev: state.ev.fec,
        q_loss_bess_ah: state.bess.q_loss_ah,
        q_loss_ev_ah: state.ev.q_loss_ah,
        plan_fec_bess,
        plan_fec_ev,
        ev_schedule,
        steps,
        da: da_records,
        solve_count,
        converged_count: converged,
    })
}

/// Run a policy x flexibility sweep; scenarios execute in parallel and the
/// result order is fixed by the scenario key.
pub fn run_matrix(
    cfg: &ScenarioConfig,
    data: &ScenarioData,
    policies: &[PolicyKind],
    flexes: &[FlexKind],
) -> Result<Vec<RunLedger>, RunError> {
    let mut cells: Vec<(PolicyKind, FlexKind)> = Vec::new();
    for p in policies {
        for f in flexes {
            cells.push((*p, *f));
        }
    }
    let mut ledgers = cells
        .par_iter()
        .map(|(p, f)| run_scenario(cfg, data, None, *p, *f))
        .collect::<Result<Vec<_>, _>>()?;
    ledgers.sort_by_key(|l| l.key);
    Ok(ledgers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::MPC_STEP_S;

    #[test]
    fn ev_schedule_from_gamma_edges() {
        let grid = TimeGrid::new(0, MPC_STEP_S, 12);
        let gamma = [1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let s = EvSchedule::from_gamma(&grid, |k| gamma[k], |_| 1.5, 0.85);
        assert_eq!(s.events.len(), 2);
        assert_eq!(s.events[0].t_dep_s, 2 * MPC_STEP_S);
        assert_eq!(s.events[0].t_arr_s, 5 * MPC_STEP_S);
        assert_eq!(s.events[1].t_dep_s, 7 * MPC_STEP_S);
        assert_eq!(s.gamma_at(3 * MPC_STEP_S), 0.0);
        assert_eq!(s.gamma_at(0), 1.0);
    }

    #[test]
    fn ev_schedule_rejects_overlap() {
        let events = vec![
            EvEvent {
                t_dep_s: 0,
                t_arr_s: 100,
                soc_dep_target: 0.8,
                p_drive_kw: 1.0,
            },
            EvEvent {
                t_dep_s: 50,
                t_arr_s: 150,
                soc_dep_target: 0.8,
                p_drive_kw: 1.0,
            },
        ];
        assert!(EvSchedule::new(events).is_err());
    }

    #[test]
    fn policy_labels_round_trip() {
        for p in PolicyKind::ALL {
            assert_eq!(p.label().parse::<PolicyKind>().unwrap(), p);
        }
        for f in FlexKind::ALL {
            assert_eq!(f.label().parse::<FlexKind>().unwrap(), f);
        }
    }
}
