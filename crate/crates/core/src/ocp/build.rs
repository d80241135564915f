//! Assembly of the planner (DA), controller (MPC), and reduced-oracle NLPs.

use thiserror::Error;

use crate::battery::{power_to_current, BatteryParams};
use crate::config::{HubAssets, ScenarioConfig};
use crate::grid::HOUR_S;
use crate::harness::{FlexKind, PolicyKind};
use crate::types::{ExogenousFrame, HubState};

use super::{
    BatteryBlock, BatteryVars, Constraint, CostGroup, HpBlock, OcpLayout, OcpMeta, OcpProblem,
    SeriesIdx, Term,
};

#[derive(Debug, Error, PartialEq)]
pub enum BuildError {
    #[error("forecast span too short: need {need} steps, have {have}")]
    InsufficientForecast { need: usize, have: usize },
    #[error("MPC build requires a warm-start control sequence of length {need}, got {got}")]
    MissingWarmStart { need: usize, got: usize },
    #[error("commitment schedule length {got} does not match horizon {need}")]
    CommitLength { need: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageKind {
    Da,
    Mpc,
    Reduced,
}

/// Per-step control trajectory used to seed the NLP.
#[derive(Debug, Clone, Default)]
pub struct ControlSeq {
    pub q_hp_d: Vec<f64>,
    pub q_hp_tess: Vec<f64>,
    pub q_tess_d: Vec<f64>,
    pub bess_ch: Vec<f64>,
    pub bess_dis: Vec<f64>,
    pub ev_ch: Vec<f64>,
    pub ev_dis: Vec<f64>,
}

impl ControlSeq {
    pub fn zeros(h: usize) -> Self {
        Self {
            q_hp_d: vec![0.0; h],
            q_hp_tess: vec![0.0; h],
            q_tess_d: vec![0.0; h],
            bess_ch: vec![0.0; h],
            bess_dis: vec![0.0; h],
            ev_ch: vec![0.0; h],
            ev_dis: vec![0.0; h],
        }
    }

    pub fn len(&self) -> usize {
        self.q_hp_d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q_hp_d.is_empty()
    }

    /// Receding-horizon shift: drop the first step, repeat the last.
    pub fn shifted(&self) -> Self {
        fn shift(v: &[f64]) -> Vec<f64> {
            let mut out: Vec<f64> = v[1..].to_vec();
            if let Some(&last) = v.last() {
                out.push(last);
            }
            out
        }
        Self {
            q_hp_d: shift(&self.q_hp_d),
            q_hp_tess: shift(&self.q_hp_tess),
            q_tess_d: shift(&self.q_tess_d),
            bess_ch: shift(&self.bess_ch),
            bess_dis: shift(&self.bess_dis),
            ev_ch: shift(&self.ev_ch),
            ev_dis: shift(&self.ev_dis),
        }
    }

    /// Hold a coarse (hourly) sequence onto a finer grid of `h` steps.
    pub fn held_to(&self, ratio: usize, h: usize) -> Self {
        let hold = |v: &[f64]| -> Vec<f64> {
            (0..h)
                .map(|k| v[(k / ratio).min(v.len().saturating_sub(1))])
                .collect()
        };
        Self {
            q_hp_d: hold(&self.q_hp_d),
            q_hp_tess: hold(&self.q_hp_tess),
            q_tess_d: hold(&self.q_tess_d),
            bess_ch: hold(&self.bess_ch),
            bess_dis: hold(&self.bess_dis),
            ev_ch: hold(&self.ev_ch),
            ev_dis: hold(&self.ev_dis),
        }
    }

    /// Extract the control channels from a solved problem.
    pub fn from_solution(p: &OcpProblem, x: &[f64]) -> Self {
        let l = &p.layout;
        let grab = |s: Option<SeriesIdx>| -> Vec<f64> {
            s.map(|s| (0..s.len).map(|k| x[s.at(k)]).collect())
                .unwrap_or_else(|| vec![0.0; l.h])
        };
        let grab_b = |b: &Option<BatteryVars>, ch: bool| -> Vec<f64> {
            b.map(|b| {
                let s = if ch { b.p_ch } else { b.p_dis };
                (0..s.len).map(|k| x[s.at(k)]).collect()
            })
            .unwrap_or_else(|| vec![0.0; l.h])
        };
        Self {
            q_hp_d: grab(l.q_hp_d),
            q_hp_tess: grab(l.q_hp_tess),
            q_tess_d: grab(l.q_tess_d),
            bess_ch: grab_b(&l.bess, true),
            bess_dis: grab_b(&l.bess, false),
            ev_ch: grab_b(&l.ev, true),
            ev_dis: grab_b(&l.ev, false),
        }
    }
}

/// Stage-1 price inputs (market B present only when co-optimizing).
#[derive(Debug, Clone)]
pub struct DaStagePrices {
    pub a_buy: Vec<f64>,
    pub a_sell: Vec<f64>,
    pub b: Option<(Vec<f64>, Vec<f64>)>,
}

struct Assembler {
    lb: Vec<f64>,
    ub: Vec<f64>,
    shift: Vec<f64>,
    scale: Vec<f64>,
}

impl Assembler {
    fn new() -> Self {
        Self {
            lb: Vec::new(),
            ub: Vec::new(),
            shift: Vec::new(),
            scale: Vec::new(),
        }
    }

    fn series(&mut self, len: usize, lb: f64, ub: f64, shift: f64, scale: f64) -> SeriesIdx {
        let start = self.lb.len();
        for _ in 0..len {
            self.lb.push(lb);
            self.ub.push(ub);
            self.shift.push(shift);
            self.scale.push(scale);
        }
        SeriesIdx { start, len }
    }

    fn pin(&mut self, idx: usize, value: f64) {
        self.lb[idx] = value;
        self.ub[idx] = value;
    }
}

fn pushc(c: Constraint, s: f64, cons: &mut Vec<Constraint>, scales: &mut Vec<f64>) {
    cons.push(c);
    scales.push(s);
}

fn lin1(i: usize, v0: f64) -> Constraint {
    Constraint::Linear {
        terms: vec![(i as u32, 1.0)],
        constant: -v0,
    }
}

fn power_scale(rating: f64) -> f64 {
    (rating / 3.0).max(1.0)
}

/// Conservative cell-current bound from the pack power rating (2.8 V floor).
fn i_bound(p: &BatteryParams) -> f64 {
    1.5 * 1000.0 * p.p_max_charge_kw.max(p.p_max_discharge_kw) / (p.cells() * 2.8)
}

fn i_scale(p: &BatteryParams) -> f64 {
    (i_bound(p) / 3.0).max(0.5)
}

struct BatterySpec<'a> {
    params: &'a BatteryParams,
    eta_conv: f64,
    soc_min: f64,
    soc_max: f64,
    soc0: f64,
    i_r1_0: f64,
    q0: f64,
    age0_s: f64,
    /// None: stationary pack. Some: plugged flag per step.
    gamma: Option<Vec<bool>>,
    p_drive: Vec<f64>,
}

/// Constants the warm-start forward simulation needs.
struct SimConsts {
    cap: f64,
    loss_coef: f64,
    aperture: f64,
    mc_tess: f64,
    q_sd: f64,
    t_lo: f64,
    t_hi: f64,
    eta_bess: f64,
    eta_ev: f64,
}

struct StageCtx<'a> {
    stage: StageKind,
    flex: FlexKind,
    h: usize,
    dt_s: i64,
    start_s: i64,
    frames: &'a [ExogenousFrame],
    cfg: &'a ScenarioConfig,
    prices_a: (Vec<f64>, Vec<f64>),
    prices_b: Option<(Vec<f64>, Vec<f64>)>,
    commit: Option<Vec<f64>>,
    controls: ControlSeq,
    state0: &'a HubState,
    assets: &'a HubAssets,
}

/// Build the day-ahead planner NLP (hourly grid, 48 h horizon).
pub fn build_da(
    state0: &HubState,
    frames_hourly: &[ExogenousFrame],
    policy: PolicyKind,
    flex: FlexKind,
    cfg: &ScenarioConfig,
    assets: &HubAssets,
    start_s: i64,
) -> Result<OcpProblem, BuildError> {
    let h = cfg.time.da_horizon_hours;
    if frames_hourly.len() < h {
        return Err(BuildError::InsufficientForecast {
            need: h,
            have: frames_hourly.len(),
        });
    }
    let frames = &frames_hourly[..h];
    let a_buy: Vec<f64> = frames.iter().map(|f| f.lambda_da_buy).collect();
    let a_sell: Vec<f64> = frames.iter().map(|f| f.lambda_da_sell).collect();
    let b = (policy == PolicyKind::Da2Ida).then(|| {
        (
            frames.iter().map(|f| f.lambda_ida_buy).collect(),
            frames.iter().map(|f| f.lambda_ida_sell).collect(),
        )
    });
    let controls = baseline_controls(state0, frames, cfg, assets, cfg.time.da_step_s);
    assemble(StageCtx {
        stage: StageKind::Da,
        flex,
        h,
        dt_s: cfg.time.da_step_s,
        start_s,
        frames,
        cfg,
        prices_a: (a_buy, a_sell),
        prices_b: b,
        commit: None,
        controls,
        state0,
        assets,
    })
}

/// Build the intra-day MPC NLP (15 min grid, 24 h horizon).
///
/// `commit_kw` is the hourly DA position held onto the fine grid (zero
/// beyond the committed day); `warm` comes from the fresh DA plan or the
/// shifted previous MPC solution.
#[allow(clippy::too_many_arguments)]
pub fn build_mpc(
    state_t: &HubState,
    commit_kw: &[f64],
    frames_mpc: &[ExogenousFrame],
    policy: PolicyKind,
    flex: FlexKind,
    warm: &ControlSeq,
    cfg: &ScenarioConfig,
    assets: &HubAssets,
    start_s: i64,
) -> Result<OcpProblem, BuildError> {
    let h = cfg.time.mpc_horizon_hours * (HOUR_S / cfg.time.mpc_step_s) as usize;
    if frames_mpc.len() < h {
        return Err(BuildError::InsufficientForecast {
            need: h,
            have: frames_mpc.len(),
        });
    }
    if warm.len() != h {
        return Err(BuildError::MissingWarmStart {
            need: h,
            got: warm.len(),
        });
    }
    if commit_kw.len() != h {
        return Err(BuildError::CommitLength {
            need: h,
            got: commit_kw.len(),
        });
    }
    let frames = &frames_mpc[..h];
    let ratio = cfg.market.mpc_sell_ratio;
    let (a_buy, a_sell): (Vec<f64>, Vec<f64>) = match policy {
        PolicyKind::Da2 => frames
            .iter()
            .map(|f| (f.lambda_da_buy, ratio * f.lambda_da_buy))
            .unzip(),
        PolicyKind::DaCt => frames
            .iter()
            .map(|f| (f.lambda_id1_buy, f.lambda_id1_sell))
            .unzip(),
        PolicyKind::DaIda | PolicyKind::Da2Ida => frames
            .iter()
            .map(|f| (f.lambda_ida_buy, f.lambda_ida_sell))
            .unzip(),
    };
    assemble(StageCtx {
        stage: StageKind::Mpc,
        flex,
        h,
        dt_s: cfg.time.mpc_step_s,
        start_s,
        frames,
        cfg,
        prices_a: (a_buy, a_sell),
        prices_b: None,
        commit: Some(commit_kw.to_vec()),
        controls: warm.clone(),
        state0: state_t,
        assets,
    })
}

fn assemble(ctx: StageCtx) -> Result<OcpProblem, BuildError> {
    let StageCtx {
        stage,
        flex,
        h,
        dt_s,
        start_s,
        frames,
        cfg,
        prices_a,
        prices_b,
        commit,
        controls,
        state0,
        assets,
    } = ctx;
    let dt_h = dt_s as f64 / HOUR_S as f64;
    let has_bess = flex.has_bess();
    let has_tess = flex.has_tess();
    let fast_charge = flex.fast_charge_ev();

    let bld = &cfg.building;
    let hp = &cfg.heat_pump;
    let tess = &cfg.tess;
    let w = &cfg.weights;
    let glim = cfg.market.grid_limit_kw;

    let mut a = Assembler::new();

    // Thermal block.
    let t_in = a.series(h + 1, bld.t_in_phys_lo, bld.t_in_phys_hi, 293.0, 5.0);
    let s_comf = a.series(h, 0.0, 1e3, 0.0, 1.0);
    let w_lo = a.series(h, 0.0, 1e3, 0.0, 5.0);
    let w_hi = a.series(h, 0.0, 1e3, 0.0, 5.0);
    let t_tess_mid = 0.5 * (tess.t_tess_lo + tess.t_tess_hi);
    let t_tess = has_tess.then(|| {
        a.series(
            h + 1,
            tess.t_tess_phys_lo,
            tess.t_tess_phys_hi,
            t_tess_mid,
            10.0,
        )
    });
    let q_tess_d = has_tess
        .then(|| a.series(h, 0.0, tess.q_tess_d_max, 0.0, power_scale(tess.q_tess_d_max)));
    let q_hp_tess =
        has_tess.then(|| a.series(h, 0.0, hp.q_hp_tess_max, 0.0, power_scale(hp.q_hp_tess_max)));
    let p_hp = a.series(h, 0.0, hp.p_hp_e_max, 0.0, power_scale(hp.p_hp_e_max));
    let q_hp_d = a.series(h, 0.0, hp.q_hp_d_max, 0.0, power_scale(hp.q_hp_d_max));

    // Battery blocks.
    let gamma_series: Vec<bool> = frames.iter().map(|f| f.gamma_ev >= 0.5).collect();
    let p_drive: Vec<f64> = frames.iter().map(|f| f.p_drive_ev).collect();
    let bess_spec = has_bess.then(|| BatterySpec {
        params: &assets.bess,
        eta_conv: cfg.bess.eta_conv,
        soc_min: cfg.bess.soc_min,
        soc_max: cfg.bess.soc_max,
        soc0: state0.bess.soc,
        i_r1_0: state0.bess.i_r1_a,
        q0: state0.bess.q_ah,
        age0_s: state0.bess.age_s,
        gamma: None,
        p_drive: vec![0.0; h],
    });
    let ev_spec = BatterySpec {
        params: &assets.ev,
        eta_conv: cfg.ev.eta_conv,
        soc_min: cfg.ev.soc_min,
        soc_max: cfg.ev.soc_max,
        soc0: state0.ev.soc,
        i_r1_0: state0.ev.i_r1_a,
        q0: state0.ev.q_ah,
        age0_s: state0.ev.age_s,
        gamma: Some(gamma_series.clone()),
        p_drive,
    };

    fn alloc_batt(a: &mut Assembler, spec: &BatterySpec, h: usize, fast_charge: bool) -> BatteryVars {
        let p = spec.params;
        let ib = i_bound(p);
        let vars = BatteryVars {
            soc: a.series(h + 1, spec.soc_min, spec.soc_max, 0.0, 1.0),
            i_r1: a.series(h + 1, -ib, ib, 0.0, i_scale(p)),
            q: a.series(h + 1, spec.q0 - 0.05, spec.q0 + 1e-4, spec.q0, 1e-4),
            i_cell: a.series(h, -ib, ib, 0.0, i_scale(p)),
            p_ch: a.series(h, 0.0, p.p_max_charge_kw, 0.0, power_scale(p.p_max_charge_kw)),
            p_dis: a.series(
                h,
                0.0,
                p.p_max_discharge_kw,
                0.0,
                power_scale(p.p_max_discharge_kw),
            ),
        };
        if let Some(gamma) = &spec.gamma {
            for k in 0..h {
                if !gamma[k] {
                    a.pin(vars.p_ch.at(k), 0.0);
                    a.pin(vars.p_dis.at(k), 0.0);
                } else if fast_charge {
                    a.pin(vars.p_dis.at(k), 0.0);
                }
            }
        }
        vars
    }

    let bess_vars = bess_spec.as_ref().map(|s| alloc_batt(&mut a, s, h, false));
    let ev_vars = alloc_batt(&mut a, &ev_spec, h, fast_charge);

    // Grid block.
    let overbid = cfg.market.da_overbid_factor;
    let dev_mode = stage == StageKind::Mpc;
    let a_ub = if dev_mode {
        (1.0 + overbid) * glim
    } else if prices_b.is_some() {
        overbid * glim
    } else {
        glim
    };
    let grid_a_in = a.series(h, 0.0, a_ub, 0.0, power_scale(glim));
    let grid_a_out = a.series(h, 0.0, a_ub, 0.0, power_scale(glim));
    let grid_b = prices_b.is_some().then(|| {
        (
            a.series(h, 0.0, overbid * glim, 0.0, power_scale(glim)),
            a.series(h, 0.0, overbid * glim, 0.0, power_scale(glim)),
        )
    });
    let p_net = a.series(h, -glim, glim, 0.0, power_scale(glim));

    // Battery evaluation blocks (BESS first when present, then EV).
    let mut batteries = Vec::new();
    let bess_bp = bess_spec.as_ref().map(|s| {
        batteries.push(BatteryBlock::new(s.params.clone(), dt_s as f64, s.age0_s, h));
        (batteries.len() - 1) as u32
    });
    batteries.push(BatteryBlock::new(
        ev_spec.params.clone(),
        dt_s as f64,
        ev_spec.age0_s,
        h,
    ));
    let ev_bp = (batteries.len() - 1) as u32;

    let layout = OcpLayout {
        h,
        t_in: Some(t_in),
        s_comf: Some(s_comf),
        w_lo: Some(w_lo),
        w_hi: Some(w_hi),
        t_tess,
        q_tess_d,
        q_hp_tess,
        p_hp: Some(p_hp),
        q_hp_d: Some(q_hp_d),
        bess: bess_vars,
        ev: Some(ev_vars),
        grid_a_in,
        grid_a_out,
        grid_b,
        p_net,
    };

    let mut cons: Vec<Constraint> = Vec::new();
    let mut con_scale: Vec<f64> = Vec::new();

    // Initial conditions.
    pushc(lin1(t_in.at(0), state0.t_in), 1.0, &mut cons, &mut con_scale);
    if let Some(tt) = t_tess {
        pushc(lin1(tt.at(0), state0.t_tess), 1.0, &mut cons, &mut con_scale);
    }
    fn init_batt(
        vars: &BatteryVars,
        spec: &BatterySpec,
        cons: &mut Vec<Constraint>,
        scales: &mut Vec<f64>,
    ) {
        pushc(lin1(vars.soc.at(0), spec.soc0), 1.0, cons, scales);
        pushc(lin1(vars.i_r1.at(0), spec.i_r1_0), i_scale(spec.params), cons, scales);
        pushc(lin1(vars.q.at(0), spec.q0), 1e-4, cons, scales);
    }
    if let (Some(vars), Some(spec)) = (&layout.bess, &bess_spec) {
        init_batt(vars, spec, &mut cons, &mut con_scale);
    }
    init_batt(&ev_vars, &ev_spec, &mut cons, &mut con_scale);

    // Dynamics, couplings, and balance per step.
    let cap = bld.capacity_kwh_per_k();
    let loss_coef = bld.vent_coeff() + bld.cond_coeff();
    let aperture = bld.solar_aperture();
    let mc_tess = tess.mc_kwh_per_k();

    #[allow(clippy::too_many_arguments)]
    fn batt_step(
        k: usize,
        dt_h: f64,
        vars: &BatteryVars,
        spec: &BatterySpec,
        bp: u32,
        block: &BatteryBlock,
        cons: &mut Vec<Constraint>,
        scales: &mut Vec<f64>,
    ) {
        let isc = i_scale(spec.params);
        let away = spec.gamma.as_ref().is_some_and(|g| !g[k]);
        if away {
            pushc(
                Constraint::Linear {
                    terms: vec![
                        (vars.soc.at(k + 1) as u32, 1.0),
                        (vars.soc.at(k) as u32, -1.0),
                    ],
                    constant: spec.p_drive[k] * dt_h / block.e_pack_kwh,
                },
                1.0,
                cons,
                scales,
            );
            pushc(
                Constraint::DriveCurrent {
                    i: vars.i_cell.at(k) as u32,
                    soc: vars.soc.at(k) as u32,
                    p_drive_kw: spec.p_drive[k],
                    bp,
                },
                isc,
                cons,
                scales,
            );
        } else {
            pushc(
                Constraint::SocStep {
                    soc_next: vars.soc.at(k + 1) as u32,
                    soc: vars.soc.at(k) as u32,
                    i: vars.i_cell.at(k) as u32,
                    q: vars.q.at(k) as u32,
                    bp,
                },
                1.0,
                cons,
                scales,
            );
            pushc(
                Constraint::PackPower {
                    i: vars.i_cell.at(k) as u32,
                    soc: vars.soc.at(k) as u32,
                    i_r1: vars.i_r1.at(k) as u32,
                    p_dis: vars.p_dis.at(k) as u32,
                    p_ch: vars.p_ch.at(k) as u32,
                    bp,
                },
                2.0,
                cons,
                scales,
            );
        }
        pushc(
            Constraint::Linear {
                terms: vec![
                    (vars.i_r1.at(k + 1) as u32, 1.0),
                    (vars.i_r1.at(k) as u32, -block.rc_a),
                    (vars.i_cell.at(k) as u32, -(1.0 - block.rc_a)),
                ],
                constant: 0.0,
            },
            isc,
            cons,
            scales,
        );
        pushc(
            Constraint::QStep {
                q_next: vars.q.at(k + 1) as u32,
                q: vars.q.at(k) as u32,
                soc: vars.soc.at(k) as u32,
                i: vars.i_cell.at(k) as u32,
                bp,
                step: k as u32,
            },
            1e-4,
            cons,
            scales,
        );
    }

    for k in 0..h {
        let f = &frames[k];

        // Building temperature (linear).
        let mut terms = vec![
            (t_in.at(k + 1) as u32, 1.0),
            (t_in.at(k) as u32, -(1.0 - dt_h * loss_coef / cap)),
            (q_hp_d.at(k) as u32, -dt_h / cap),
        ];
        if let Some(qt) = q_tess_d {
            terms.push((qt.at(k) as u32, -dt_h / cap));
        }
        pushc(
            Constraint::Linear {
                terms,
                constant: -dt_h / cap * (aperture * f.g_ir + loss_coef * f.t_amb),
            },
            1.0,
            &mut cons,
            &mut con_scale,
        );

        // Comfort slack inequalities as bounded-slack equalities.
        pushc(
            Constraint::Linear {
                terms: vec![
                    (t_in.at(k + 1) as u32, -1.0),
                    (s_comf.at(k) as u32, -1.0),
                    (w_lo.at(k) as u32, 1.0),
                ],
                constant: bld.t_in_lo,
            },
            1.0,
            &mut cons,
            &mut con_scale,
        );
        pushc(
            Constraint::Linear {
                terms: vec![
                    (t_in.at(k + 1) as u32, 1.0),
                    (s_comf.at(k) as u32, -1.0),
                    (w_hi.at(k) as u32, 1.0),
                ],
                constant: -bld.t_in_hi,
            },
            1.0,
            &mut cons,
            &mut con_scale,
        );

        // TESS temperature (linear).
        if let (Some(tt), Some(qht), Some(qtd)) = (t_tess, q_hp_tess, q_tess_d) {
            pushc(
                Constraint::Linear {
                    terms: vec![
                        (tt.at(k + 1) as u32, 1.0),
                        (tt.at(k) as u32, -1.0),
                        (qht.at(k) as u32, -dt_h / mc_tess),
                        (qtd.at(k) as u32, dt_h / mc_tess),
                    ],
                    constant: dt_h / mc_tess * tess.q_sd,
                },
                1.0,
                &mut cons,
                &mut con_scale,
            );
        }

        // Heat-pump conversion.
        pushc(
            Constraint::HpBalance {
                q_d: q_hp_d.at(k) as u32,
                q_tess: q_hp_tess.map(|s| s.at(k) as u32),
                p_hp: p_hp.at(k) as u32,
                t_amb: f.t_amb,
            },
            5.0,
            &mut cons,
            &mut con_scale,
        );

        // Battery dynamics.
        if let (Some(vars), Some(spec), Some(bp)) = (&layout.bess, &bess_spec, bess_bp) {
            batt_step(
                k,
                dt_h,
                vars,
                spec,
                bp,
                &batteries[bp as usize],
                &mut cons,
                &mut con_scale,
            );
        }
        batt_step(
            k,
            dt_h,
            &ev_vars,
            &ev_spec,
            ev_bp,
            &batteries[ev_bp as usize],
            &mut cons,
            &mut con_scale,
        );

        // Net grid definition.
        {
            let mut terms = vec![
                (p_net.at(k) as u32, 1.0),
                (grid_a_in.at(k) as u32, -1.0),
                (grid_a_out.at(k) as u32, 1.0),
            ];
            if let Some((bi, bo)) = grid_b {
                terms.push((bi.at(k) as u32, -1.0));
                terms.push((bo.at(k) as u32, 1.0));
            }
            let constant = if dev_mode {
                -commit.as_ref().unwrap()[k]
            } else {
                0.0
            };
            pushc(
                Constraint::Linear { terms, constant },
                5.0,
                &mut cons,
                &mut con_scale,
            );
        }

        // Power balance: pv + bess + gamma*ev + p_net = load + p_hp.
        {
            let mut terms = vec![(p_net.at(k) as u32, 1.0), (p_hp.at(k) as u32, -1.0)];
            if let (Some(vars), Some(spec)) = (&layout.bess, &bess_spec) {
                terms.push((vars.p_dis.at(k) as u32, spec.eta_conv));
                terms.push((vars.p_ch.at(k) as u32, -1.0 / spec.eta_conv));
            }
            if gamma_series[k] {
                terms.push((ev_vars.p_dis.at(k) as u32, ev_spec.eta_conv));
                terms.push((ev_vars.p_ch.at(k) as u32, -1.0 / ev_spec.eta_conv));
            }
            pushc(
                Constraint::Linear {
                    terms,
                    constant: f.p_pv - f.p_load_e,
                },
                5.0,
                &mut cons,
                &mut con_scale,
            );
        }
    }

    // Terminal periodicity on the stationary battery.
    let mut periodicity_con = None;
    if let Some(vars) = &layout.bess {
        match stage {
            StageKind::Da => {
                let anchor = (24 * HOUR_S / dt_s) as usize;
                if anchor < h {
                    periodicity_con = Some(cons.len());
                    pushc(
                        Constraint::Linear {
                            terms: vec![
                                (vars.soc.at(anchor) as u32, 1.0),
                                (vars.soc.at(h) as u32, -1.0),
                            ],
                            constant: 0.0,
                        },
                        1.0,
                        &mut cons,
                        &mut con_scale,
                    );
                }
            }
            StageKind::Mpc => {
                // SoC(0) is pinned to the measured state, so tie the end
                // node to that value directly (full-rank form of the wrap).
                periodicity_con = Some(cons.len());
                pushc(
                    lin1(vars.soc.at(h), bess_spec.as_ref().unwrap().soc0),
                    1.0,
                    &mut cons,
                    &mut con_scale,
                );
            }
            StageKind::Reduced => {}
        }
    }

    // Objective.
    let mut obj: Vec<Term> = Vec::new();
    let (a_buy, a_sell) = &prices_a;
    for k in 0..h {
        obj.push(Term::Linear {
            var: grid_a_in.at(k) as u32,
            coef: w.w_grid * dt_h * a_buy[k],
            group: CostGroup::GridA,
        });
        obj.push(Term::Linear {
            var: grid_a_out.at(k) as u32,
            coef: -w.w_grid * dt_h * a_sell[k],
            group: CostGroup::GridA,
        });
        if let (Some((bi, bo)), Some((b_buy, b_sell))) = (grid_b, &prices_b) {
            obj.push(Term::Linear {
                var: bi.at(k) as u32,
                coef: w.w_grid * dt_h * b_buy[k],
                group: CostGroup::GridB,
            });
            obj.push(Term::Linear {
                var: bo.at(k) as u32,
                coef: -w.w_grid * dt_h * b_sell[k],
                group: CostGroup::GridB,
            });
        }
        // Comfort gated by the occupancy of the step ending at node k+1.
        obj.push(Term::Linear {
            var: s_comf.at(k) as u32,
            coef: w.w_t * frames[k].occupancy * dt_h,
            group: CostGroup::Comfort,
        });
    }

    // Capacity-loss cost: w_loss * c_loss * cells * (q[0] - q[h]).
    fn loss_terms(vars: &BatteryVars, p: &BatteryParams, w_loss: f64, h: usize, obj: &mut Vec<Term>) {
        let coef = w_loss * p.c_loss_eur_ah * p.cells();
        obj.push(Term::Linear {
            var: vars.q.at(0) as u32,
            coef,
            group: CostGroup::Loss,
        });
        obj.push(Term::Linear {
            var: vars.q.at(h) as u32,
            coef: -coef,
            group: CostGroup::Loss,
        });
    }
    if let (Some(vars), Some(spec)) = (&layout.bess, &bess_spec) {
        loss_terms(vars, spec.params, w.w_loss, h, &mut obj);
    }
    loss_terms(&ev_vars, ev_spec.params, w.w_loss, h, &mut obj);

    // EV charging goal.
    let target = cfg.ev.soc_dep_target;
    if fast_charge {
        for k in 0..h {
            if gamma_series[k] {
                obj.push(Term::Quadratic {
                    var: ev_vars.soc.at(k + 1) as u32,
                    target,
                    weight: w.w_soc * dt_h,
                    group: CostGroup::SocDep,
                });
            }
        }
    } else {
        for k in 1..h {
            if gamma_series[k - 1] && !gamma_series[k] {
                obj.push(Term::Quadratic {
                    var: ev_vars.soc.at(k) as u32,
                    target,
                    weight: w.w_soc,
                    group: CostGroup::SocDep,
                });
            }
        }
    }

    // Complementarity audit pairs.
    let mut comp_pairs = Vec::new();
    for k in 0..h {
        comp_pairs.push((grid_a_in.at(k) as u32, grid_a_out.at(k) as u32));
        if let Some((bi, bo)) = grid_b {
            comp_pairs.push((bi.at(k) as u32, bo.at(k) as u32));
        }
        if let Some(vars) = &layout.bess {
            comp_pairs.push((vars.p_dis.at(k) as u32, vars.p_ch.at(k) as u32));
        }
        comp_pairs.push((ev_vars.p_dis.at(k) as u32, ev_vars.p_ch.at(k) as u32));
        if let (Some(qd), Some(qt)) = (layout.q_hp_d, layout.q_hp_tess) {
            comp_pairs.push((qd.at(k) as u32, qt.at(k) as u32));
        }
    }

    let sim_consts = SimConsts {
        cap,
        loss_coef,
        aperture,
        mc_tess,
        q_sd: tess.q_sd,
        t_lo: bld.t_in_lo,
        t_hi: bld.t_in_hi,
        eta_bess: cfg.bess.eta_conv,
        eta_ev: cfg.ev.eta_conv,
    };

    let mut problem = OcpProblem {
        meta: OcpMeta {
            stage,
            h,
            dt_s,
            start_s,
        },
        n: a.lb.len(),
        lb: a.lb,
        ub: a.ub,
        shift: a.shift,
        scale: a.scale,
        constraints: cons,
        con_scale,
        objective: obj,
        warm_start: Vec::new(),
        layout,
        batteries,
        hp: HpBlock::new(hp.clone()),
        comp_pairs,
        periodicity_con,
    };
    problem.warm_start = simulate_controls(
        &problem,
        state0,
        frames,
        &controls,
        commit.as_deref(),
        &sim_consts,
    );
    Ok(problem)
}

/// Baseline heuristic controls for a cold planner start: hold the building
/// temperature against losses, charge the EV greedily toward its target
/// while plugged, leave the storages idle.
fn baseline_controls(
    state0: &HubState,
    frames: &[ExogenousFrame],
    cfg: &ScenarioConfig,
    assets: &HubAssets,
    dt_s: i64,
) -> ControlSeq {
    let h = frames.len();
    let dt_hours = dt_s as f64 / HOUR_S as f64;
    let mut c = ControlSeq::zeros(h);
    let bld = &cfg.building;
    let loss_coef = bld.vent_coeff() + bld.cond_coeff();
    let e_pack = assets.ev.pack_energy_kwh();
    let mut soc_ev = state0.ev.soc;
    for k in 0..h {
        let f = &frames[k];
        let hold = (loss_coef * (state0.t_in - f.t_amb) - bld.solar_aperture() * f.g_ir)
            .clamp(0.0, cfg.heat_pump.q_hp_d_max);
        c.q_hp_d[k] = hold;
        if f.gamma_ev >= 0.5 && soc_ev < cfg.ev.soc_dep_target {
            // Stay inside the grid connection: the charger shares the bus
            // with the load and a rough COP-3 heat-pump draw.
            let headroom =
                (cfg.market.grid_limit_kw - f.p_load_e - hold / 3.0 + f.p_pv - 0.5).max(0.0);
            let need_kw = (cfg.ev.soc_dep_target - soc_ev) * e_pack / dt_hours;
            let p = need_kw
                .min(assets.ev.p_max_charge_kw)
                .min(cfg.ev.eta_conv * headroom);
            c.ev_ch[k] = p;
            soc_ev += p * dt_hours / e_pack;
        } else if f.gamma_ev < 0.5 {
            soc_ev -= f.p_drive_ev * dt_hours / e_pack;
        }
    }
    c
}

/// Forward-simulate the controller model under a control sequence to get a
/// dynamics-consistent starting vector (in natural units).
fn simulate_controls(
    p: &OcpProblem,
    state0: &HubState,
    frames: &[ExogenousFrame],
    controls: &ControlSeq,
    commit: Option<&[f64]>,
    sc: &SimConsts,
) -> Vec<f64> {
    let l = &p.layout;
    let h = l.h;
    let mut x = vec![0.0; p.n];
    let dt_h = p.meta.dt_s as f64 / HOUR_S as f64;

    let t_in_vars = l.t_in.unwrap();
    x[t_in_vars.at(0)] = state0.t_in;
    if let Some(tt) = l.t_tess {
        x[tt.at(0)] = state0.t_tess;
    }

    struct BattSim {
        vars: BatteryVars,
        bp: usize,
        soc: f64,
        i_r1: f64,
        q: f64,
        eta: f64,
        is_ev: bool,
    }
    let mut sims: Vec<BattSim> = Vec::new();
    if let Some(vars) = &l.bess {
        sims.push(BattSim {
            vars: *vars,
            bp: 0,
            soc: state0.bess.soc,
            i_r1: state0.bess.i_r1_a,
            q: state0.bess.q_ah,
            eta: sc.eta_bess,
            is_ev: false,
        });
    }
    sims.push(BattSim {
        vars: l.ev.unwrap(),
        bp: p.batteries.len() - 1,
        soc: state0.ev.soc,
        i_r1: state0.ev.i_r1_a,
        q: state0.ev.q_ah,
        eta: sc.eta_ev,
        is_ev: true,
    });
    for sim in &sims {
        x[sim.vars.soc.at(0)] = sim.soc;
        x[sim.vars.i_r1.at(0)] = sim.i_r1;
        x[sim.vars.q.at(0)] = sim.q;
    }

    for k in 0..h {
        let f = &frames[k];

        // Heat pump: clamp heats, electric power from the blended COP,
        // shrinking the heats if the electric rating binds.
        let q_hp_d_vars = l.q_hp_d.unwrap();
        let p_hp_vars = l.p_hp.unwrap();
        let mut qd = controls.q_hp_d[k].clamp(p.lb[q_hp_d_vars.at(k)], p.ub[q_hp_d_vars.at(k)]);
        let mut qt = l
            .q_hp_tess
            .map(|s| controls.q_hp_tess[k].clamp(p.lb[s.at(k)], p.ub[s.at(k)]))
            .unwrap_or(0.0);
        let mut p_hp_v = 0.0;
        for _ in 0..3 {
            let (cop, _, _) = p.hp.cop_eff(qd, qt, f.t_amb);
            p_hp_v = (qd + qt) / cop;
            let p_max = p.ub[p_hp_vars.at(k)];
            if p_hp_v <= p_max {
                break;
            }
            let shrink = p_max * cop / (qd + qt).max(1e-12);
            qd *= shrink;
            qt *= shrink;
            p_hp_v = p_max;
        }
        x[q_hp_d_vars.at(k)] = qd;
        if let Some(s) = l.q_hp_tess {
            x[s.at(k)] = qt;
        }
        x[p_hp_vars.at(k)] = p_hp_v;

        let qtd = l
            .q_tess_d
            .map(|s| {
                let v = controls.q_tess_d[k].clamp(p.lb[s.at(k)], p.ub[s.at(k)]);
                x[s.at(k)] = v;
                v
            })
            .unwrap_or(0.0);

        // Thermal updates (same linear formulas as the constraints).
        let t_now = x[t_in_vars.at(k)];
        let t_next =
            t_now + dt_h / sc.cap * (sc.aperture * f.g_ir + qtd + qd - sc.loss_coef * (t_now - f.t_amb));
        x[t_in_vars.at(k + 1)] = t_next;
        let slack = (sc.t_lo - t_next).max(t_next - sc.t_hi).max(0.0);
        x[l.s_comf.unwrap().at(k)] = slack;
        x[l.w_lo.unwrap().at(k)] = slack - (sc.t_lo - t_next);
        x[l.w_hi.unwrap().at(k)] = slack - (t_next - sc.t_hi);
        if let Some(tt) = l.t_tess {
            let t = x[tt.at(k)];
            x[tt.at(k + 1)] = t + dt_h / sc.mc_tess * (qt - qtd - sc.q_sd);
        }

        // Batteries.
        let mut bus_net = 0.0;
        for sim in &mut sims {
            let blk = &p.batteries[sim.bp];
            let vars = &sim.vars;
            let away = sim.is_ev && f.gamma_ev < 0.5;
            if away {
                x[vars.p_ch.at(k)] = 0.0;
                x[vars.p_dis.at(k)] = 0.0;
                let (ocv, _) = crate::battery::ocv_with_deriv(sim.soc, &blk.params);
                let i = 1000.0 * f.p_drive_ev / (blk.cells * ocv);
                x[vars.i_cell.at(k)] = i;
                let (i_loss, _, _) = blk.i_loss(sim.soc, i, k);
                sim.soc = (sim.soc - f.p_drive_ev * dt_h / blk.e_pack_kwh)
                    .max(p.lb[vars.soc.at(k + 1)]);
                sim.i_r1 = blk.rc_a * sim.i_r1 + (1.0 - blk.rc_a) * i;
                sim.q -= blk.dt_h * i_loss;
            } else {
                let (p_ch_c, p_dis_c) = if sim.is_ev {
                    (controls.ev_ch[k], controls.ev_dis[k])
                } else {
                    (controls.bess_ch[k], controls.bess_dis[k])
                };
                let p_ch = p_ch_c.clamp(p.lb[vars.p_ch.at(k)], p.ub[vars.p_ch.at(k)]);
                let p_dis = p_dis_c.clamp(p.lb[vars.p_dis.at(k)], p.ub[vars.p_dis.at(k)]);
                let state = crate::battery::BatteryState {
                    soc: sim.soc,
                    i_r1_a: sim.i_r1,
                    q_ah: sim.q,
                    age_s: 1.0,
                    fec: 0.0,
                    q_loss_ah: 0.0,
                };
                let mut i = match power_to_current(p_dis - p_ch, &state, &blk.params) {
                    Ok(i) => i,
                    Err(_) => {
                        let v_eff = crate::battery::ocv_with_deriv(sim.soc, &blk.params).0
                            - sim.i_r1 * blk.params.r1_ohm;
                        v_eff / (2.0 * blk.params.r0_ohm)
                    }
                };
                // Respect the SoC box by limiting the current.
                let i_max = (sim.soc - p.lb[vars.soc.at(k + 1)]).max(0.0) * sim.q / blk.k_soc;
                let i_min = -(p.ub[vars.soc.at(k + 1)] - sim.soc).max(0.0) * sim.q / blk.k_soc;
                i = i
                    .clamp(i_min, i_max)
                    .clamp(p.lb[vars.i_cell.at(k)], p.ub[vars.i_cell.at(k)]);
                let (ocv, _) = crate::battery::ocv_with_deriv(sim.soc, &blk.params);
                let v_t = ocv - blk.params.r1_ohm * sim.i_r1 - blk.params.r0_ohm * i;
                let p_eff = blk.cells * v_t * i / 1000.0;
                let (p_dis_eff, p_ch_eff) = if p_eff >= 0.0 { (p_eff, 0.0) } else { (0.0, -p_eff) };
                x[vars.p_ch.at(k)] = p_ch_eff.min(p.ub[vars.p_ch.at(k)]);
                x[vars.p_dis.at(k)] = p_dis_eff.min(p.ub[vars.p_dis.at(k)]);
                x[vars.i_cell.at(k)] = i;
                bus_net += sim.eta * x[vars.p_dis.at(k)] - x[vars.p_ch.at(k)] / sim.eta;
                let (i_loss, _, _) = blk.i_loss(sim.soc, i, k);
                sim.soc -= blk.k_soc * i / sim.q;
                sim.i_r1 = blk.rc_a * sim.i_r1 + (1.0 - blk.rc_a) * i;
                sim.q -= blk.dt_h * i_loss;
            }
            x[vars.soc.at(k + 1)] = sim.soc;
            x[vars.i_r1.at(k + 1)] = sim.i_r1;
            x[vars.q.at(k + 1)] = sim.q;
        }

        // Grid residual and splits.
        let p_net_v = (f.p_load_e + p_hp_v - f.p_pv - bus_net)
            .clamp(p.lb[l.p_net.at(k)], p.ub[l.p_net.at(k)]);
        x[l.p_net.at(k)] = p_net_v;
        let pos = p_net_v - commit.map_or(0.0, |c| c[k]);
        x[l.grid_a_in.at(k)] = pos.max(0.0).min(p.ub[l.grid_a_in.at(k)]);
        x[l.grid_a_out.at(k)] = (-pos).max(0.0).min(p.ub[l.grid_a_out.at(k)]);
        if let Some((bi, bo)) = l.grid_b {
            x[bi.at(k)] = 0.0;
            x[bo.at(k)] = 0.0;
        }
    }
    x
}

/// Committed market-A position per step (the day-ahead auction leg).
pub fn da_commit_schedule(problem: &OcpProblem, x: &[f64]) -> Vec<f64> {
    let l = &problem.layout;
    (0..l.h)
        .map(|k| x[l.grid_a_in.at(k)] - x[l.grid_a_out.at(k)])
        .collect()
}

/// Reduced single-battery arbitrage instance for the DP cross-check.
#[derive(Debug, Clone)]
pub struct ReducedSpec {
    pub params: BatteryParams,
    pub soc0: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub age0_s: f64,
    pub h: usize,
    pub dt_s: i64,
    pub lambda_buy: Vec<f64>,
    pub lambda_sell: Vec<f64>,
    pub p_load: Vec<f64>,
    pub p_pv: Vec<f64>,
    pub grid_limit_kw: f64,
    pub eta_conv: f64,
    pub w_grid: f64,
    pub w_loss: f64,
}

/// Build the reduced problem: one battery, grid exchange, no thermal/EV.
pub fn build_reduced(spec: &ReducedSpec) -> OcpProblem {
    let h = spec.h;
    let dt_h = spec.dt_s as f64 / HOUR_S as f64;
    let mut a = Assembler::new();
    let p = &spec.params;
    let ib = i_bound(p);
    let isc = i_scale(p);

    let vars = BatteryVars {
        soc: a.series(h + 1, spec.soc_min, spec.soc_max, 0.0, 1.0),
        i_r1: a.series(h + 1, -ib, ib, 0.0, isc),
        q: a.series(h + 1, p.q0_ah - 0.05, p.q0_ah + 1e-4, p.q0_ah, 1e-4),
        i_cell: a.series(h, -ib, ib, 0.0, isc),
        p_ch: a.series(h, 0.0, p.p_max_charge_kw, 0.0, power_scale(p.p_max_charge_kw)),
        p_dis: a.series(h, 0.0, p.p_max_discharge_kw, 0.0, power_scale(p.p_max_discharge_kw)),
    };
    let gscale = power_scale(spec.grid_limit_kw);
    let grid_a_in = a.series(h, 0.0, spec.grid_limit_kw, 0.0, gscale);
    let grid_a_out = a.series(h, 0.0, spec.grid_limit_kw, 0.0, gscale);
    let p_net = a.series(h, -spec.grid_limit_kw, spec.grid_limit_kw, 0.0, gscale);

    let block = BatteryBlock::new(p.clone(), spec.dt_s as f64, spec.age0_s, h);

    let mut cons = Vec::new();
    let mut con_scale = Vec::new();
    pushc(lin1(vars.soc.at(0), spec.soc0), 1.0, &mut cons, &mut con_scale);
    pushc(lin1(vars.i_r1.at(0), 0.0), isc, &mut cons, &mut con_scale);
    pushc(lin1(vars.q.at(0), p.q0_ah), 1e-4, &mut cons, &mut con_scale);

    for k in 0..h {
        pushc(
            Constraint::SocStep {
                soc_next: vars.soc.at(k + 1) as u32,
                soc: vars.soc.at(k) as u32,
                i: vars.i_cell.at(k) as u32,
                q: vars.q.at(k) as u32,
                bp: 0,
            },
            1.0,
            &mut cons,
            &mut con_scale,
        );
        pushc(
            Constraint::PackPower {
                i: vars.i_cell.at(k) as u32,
                soc: vars.soc.at(k) as u32,
                i_r1: vars.i_r1.at(k) as u32,
                p_dis: vars.p_dis.at(k) as u32,
                p_ch: vars.p_ch.at(k) as u32,
                bp: 0,
            },
            2.0,
            &mut cons,
            &mut con_scale,
        );
        pushc(
            Constraint::Linear {
                terms: vec![
                    (vars.i_r1.at(k + 1) as u32, 1.0),
                    (vars.i_r1.at(k) as u32, -block.rc_a),
                    (vars.i_cell.at(k) as u32, -(1.0 - block.rc_a)),
                ],
                constant: 0.0,
            },
            isc,
            &mut cons,
            &mut con_scale,
        );
        pushc(
            Constraint::QStep {
                q_next: vars.q.at(k + 1) as u32,
                q: vars.q.at(k) as u32,
                soc: vars.soc.at(k) as u32,
                i: vars.i_cell.at(k) as u32,
                bp: 0,
                step: k as u32,
            },
            1e-4,
            &mut cons,
            &mut con_scale,
        );
        pushc(
            Constraint::Linear {
                terms: vec![
                    (p_net.at(k) as u32, 1.0),
                    (grid_a_in.at(k) as u32, -1.0),
                    (grid_a_out.at(k) as u32, 1.0),
                ],
                constant: 0.0,
            },
            5.0,
            &mut cons,
            &mut con_scale,
        );
        pushc(
            Constraint::Linear {
                terms: vec![
                    (p_net.at(k) as u32, 1.0),
                    (vars.p_dis.at(k) as u32, spec.eta_conv),
                    (vars.p_ch.at(k) as u32, -1.0 / spec.eta_conv),
                ],
                constant: spec.p_pv[k] - spec.p_load[k],
            },
            5.0,
            &mut cons,
            &mut con_scale,
        );
    }

    let mut obj = Vec::new();
    for k in 0..h {
        obj.push(Term::Linear {
            var: grid_a_in.at(k) as u32,
            coef: spec.w_grid * dt_h * spec.lambda_buy[k],
            group: CostGroup::GridA,
        });
        obj.push(Term::Linear {
            var: grid_a_out.at(k) as u32,
            coef: -spec.w_grid * dt_h * spec.lambda_sell[k],
            group: CostGroup::GridA,
        });
    }
    let coef = spec.w_loss * p.c_loss_eur_ah * p.cells();
    obj.push(Term::Linear {
        var: vars.q.at(0) as u32,
        coef,
        group: CostGroup::Loss,
    });
    obj.push(Term::Linear {
        var: vars.q.at(h) as u32,
        coef: -coef,
        group: CostGroup::Loss,
    });

    let mut comp_pairs = Vec::new();
    for k in 0..h {
        comp_pairs.push((grid_a_in.at(k) as u32, grid_a_out.at(k) as u32));
        comp_pairs.push((vars.p_dis.at(k) as u32, vars.p_ch.at(k) as u32));
    }

    let layout = OcpLayout {
        h,
        t_in: None,
        s_comf: None,
        w_lo: None,
        w_hi: None,
        t_tess: None,
        q_tess_d: None,
        q_hp_tess: None,
        p_hp: None,
        q_hp_d: None,
        bess: Some(vars),
        ev: None,
        grid_a_in,
        grid_a_out,
        grid_b: None,
        p_net,
    };

    let n = a.lb.len();
    let mut problem = OcpProblem {
        meta: OcpMeta {
            stage: StageKind::Reduced,
            h,
            dt_s: spec.dt_s,
            start_s: 0,
        },
        n,
        lb: a.lb,
        ub: a.ub,
        shift: a.shift,
        scale: a.scale,
        constraints: cons,
        con_scale,
        objective: obj,
        warm_start: Vec::new(),
        layout,
        batteries: vec![block],
        hp: HpBlock::new(ScenarioConfig::default().heat_pump),
        comp_pairs,
        periodicity_con: None,
    };
    // Idle warm start: battery at rest (capacity still fading), grid
    // carries the residual load.
    let mut x = vec![0.0; n];
    let b = problem.layout.bess.as_ref().unwrap();
    for node in 0..=h {
        x[b.soc.at(node)] = spec.soc0;
    }
    x[b.q.at(0)] = p.q0_ah;
    for k in 0..h {
        let (i_loss, _, _) = problem.batteries[0].i_loss(x[b.soc.at(k)], 0.0, k);
        x[b.q.at(k + 1)] = x[b.q.at(k)] - problem.batteries[0].dt_h * i_loss;
        let p_net_v =
            (spec.p_load[k] - spec.p_pv[k]).clamp(-spec.grid_limit_kw, spec.grid_limit_kw);
        x[problem.layout.p_net.at(k)] = p_net_v;
        x[problem.layout.grid_a_in.at(k)] = p_net_v.max(0.0);
        x[problem.layout.grid_a_out.at(k)] = (-p_net_v).max(0.0);
    }
    problem.warm_start = x;
    problem
}
