//! Finite-horizon NLP transcription of the planner and MPC problems.
//!
//! Full simultaneous (direct) transcription: every dynamic state is a
//! lifted variable with exactly one defining equality per step. Absolute
//! values are pre-split into nonnegative pairs and the comfort max() is a
//! slack with two linear inequalities (turned into bounded-slack
//! equalities), so the NLP is smooth throughout. Gradients are hand-coded.

mod build;

pub use build::{
    build_da, build_mpc, build_reduced, da_commit_schedule, BuildError, ControlSeq, DaStagePrices,
    ReducedSpec, StageKind,
};

use std::cell::RefCell;

use crate::battery::BatteryParams;
use crate::solver::{solve_nlp, NlpProblem, NlpResult, SolveStatus, SolverSettings};
use crate::thermal::HeatPumpParams;
use crate::types::DecisionVector;

/// Smoothing half-width for |i| inside the aging term [A]. The plant uses
/// the exact absolute value; the gap this introduces is orders of magnitude
/// below the model-consistency tolerance.
const ABS_SMOOTH_EPS_A: f64 = 1e-6;

/// Blending epsilon of the heat-pump inlet-temperature branches [kW].
/// Large enough to keep the rational blend's curvature benign around zero
/// heat; the inlet-temperature error it introduces at rated single-branch
/// output is a few hundredths of a kelvin.
const HP_BLEND_EPS_KW: f64 = 0.05;

/// A contiguous block of per-step variables: index `start + k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeriesIdx {
    pub start: usize,
    pub len: usize,
}

impl SeriesIdx {
    pub fn at(&self, k: usize) -> usize {
        debug_assert!(k < self.len);
        self.start + k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatteryVars {
    /// Nodes 0..=h.
    pub soc: SeriesIdx,
    pub i_r1: SeriesIdx,
    pub q: SeriesIdx,
    /// Steps 0..h.
    pub i_cell: SeriesIdx,
    pub p_ch: SeriesIdx,
    pub p_dis: SeriesIdx,
}

/// Where each quantity lives in the flat decision/state vector.
///
/// Thermal and EV blocks are absent on the reduced (oracle) problem; BESS
/// and TESS blocks are absent under the flexibility setups that exclude
/// them.
#[derive(Debug, Clone)]
pub struct OcpLayout {
    pub h: usize,
    pub t_in: Option<SeriesIdx>,
    /// Comfort slack for nodes 1..=h (entry k is node k+1's slack).
    pub s_comf: Option<SeriesIdx>,
    pub w_lo: Option<SeriesIdx>,
    pub w_hi: Option<SeriesIdx>,
    pub t_tess: Option<SeriesIdx>,
    pub q_tess_d: Option<SeriesIdx>,
    pub q_hp_tess: Option<SeriesIdx>,
    pub p_hp: Option<SeriesIdx>,
    pub q_hp_d: Option<SeriesIdx>,
    pub bess: Option<BatteryVars>,
    pub ev: Option<BatteryVars>,
    /// Market A split (DA position on stage 1; deviation on stage 2).
    pub grid_a_in: SeriesIdx,
    pub grid_a_out: SeriesIdx,
    /// Second market split (stage-1 IDA position, co-optimizing policy only).
    pub grid_b: Option<(SeriesIdx, SeriesIdx)>,
    /// Physical net grid power (import positive).
    pub p_net: SeriesIdx,
}

/// Per-battery constants precomputed for constraint evaluation.
#[derive(Debug, Clone)]
pub struct BatteryBlock {
    pub params: BatteryParams,
    pub cells: f64,
    /// dt * eta_c / 3600 [h-ish]: SoC change per (A / Ah).
    pub k_soc: f64,
    /// exp(-dt / tau) of the RC branch.
    pub rc_a: f64,
    pub dt_h: f64,
    /// sqrt(age) per step; age advances exogenously inside the horizon.
    pub sqrt_age: Vec<f64>,
    pub e_pack_kwh: f64,
}

impl BatteryBlock {
    pub fn new(params: BatteryParams, dt_s: f64, age0_s: f64, h: usize) -> Self {
        let cells = params.cells();
        let e_pack_kwh = params.pack_energy_kwh();
        Self {
            k_soc: dt_s * params.eta_c / 3600.0,
            rc_a: (-dt_s / params.tau_s()).exp(),
            dt_h: dt_s / 3600.0,
            sqrt_age: (0..h).map(|k| (age0_s + k as f64 * dt_s).sqrt()).collect(),
            cells,
            e_pack_kwh,
            params,
        }
    }

    /// Second partials of the smoothed aging loss current:
    /// (d2/dsoc2, d2/dsoc di, d2/di2).
    pub fn i_loss_hess(&self, soc: f64, i: f64, step: usize) -> (f64, f64, f64) {
        let p = &self.params;
        let sqrt_age = self.sqrt_age[step];
        let kb = p.n_sei * crate::battery::FARADAY / (crate::battery::GAS_R * p.t_cell_k);
        let th = 2.0 * crate::battery::GAS_R * p.t_cell_k / crate::battery::FARADAY;
        let i_ex = p.exchange_current();
        let dz = p.z_100pct - p.z_0pct;

        let z = p.stoichiometry(soc);
        let (_, docv_n, d2ocv_n) = p.ocv_n.eval2(z);
        let u_arg = i / i_ex;
        let w = (1.0 + u_arg * u_arg).sqrt();
        let eta_k = th * u_arg.asinh();
        let deta = th / (i_ex * w);
        let d2eta = -th * i / (i_ex * i_ex * i_ex * w * w * w);
        let beta = (kb * (eta_k + p.ocv_n.value(z) - p.ocv_side_v)).exp();
        let u = p.lambda_b * beta;
        let a_sei = p.sei_rate() / (p.n_sei * sqrt_age);
        // i_sei = a / (1 + u); du/di, du/dsoc, and second partials of u.
        let d1 = -a_sei / ((1.0 + u) * (1.0 + u));
        let d2 = 2.0 * a_sei / ((1.0 + u) * (1.0 + u) * (1.0 + u));
        let u_i = u * kb * deta;
        let u_s = u * kb * docv_n * dz;
        let u_ii = u * kb * (kb * deta * deta + d2eta);
        let u_ss = u * kb * (kb * docv_n * docv_n * dz * dz + d2ocv_n * dz * dz);
        let u_si = u * kb * kb * deta * docv_n * dz;
        let sei_ss = d2 * u_s * u_s + d1 * u_ss;
        let sei_si = d2 * u_s * u_i + d1 * u_si;
        let sei_ii = d2 * u_i * u_i + d1 * u_ii;

        let abs_i = (i * i + ABS_SMOOTH_EPS_A * ABS_SMOOTH_EPS_A).sqrt();
        let r_am = p.am_rate() * p.q0_ah;
        let am_si = r_am * i / abs_i;
        let am_ii = r_am * soc * ABS_SMOOTH_EPS_A * ABS_SMOOTH_EPS_A / (abs_i * abs_i * abs_i);

        (sei_ss, sei_si + am_si, sei_ii + am_ii)
    }

    /// Aging loss current and its partials w.r.t. (soc, i) with |i|
    /// smoothed for the NLP.
    pub fn i_loss(&self, soc: f64, i: f64, step: usize) -> (f64, f64, f64) {
        let p = &self.params;
        let sqrt_age = self.sqrt_age[step];
        let kbeta = p.n_sei * crate::battery::FARADAY / (crate::battery::GAS_R * p.t_cell_k);
        let th = 2.0 * crate::battery::GAS_R * p.t_cell_k / crate::battery::FARADAY;
        let i_ex = p.exchange_current();

        let z = p.stoichiometry(soc);
        let (ocv_n, docv_n) = p.ocv_n.eval(z);
        let dz = p.z_100pct - p.z_0pct;
        let u = i / i_ex;
        let eta_k = th * u.asinh();
        let deta_di = th / (i_ex * (1.0 + u * u).sqrt());
        let beta = (kbeta * (eta_k + ocv_n - p.ocv_side_v)).exp();
        let denom = 1.0 + p.lambda_b * beta;
        let a_sei = p.sei_rate() / (p.n_sei * sqrt_age);
        let i_sei = a_sei / denom;
        let dsei_dbeta = -a_sei * p.lambda_b / (denom * denom);
        let dsei_di = dsei_dbeta * beta * kbeta * deta_di;
        let dsei_dsoc = dsei_dbeta * beta * kbeta * docv_n * dz;

        let abs_i = (i * i + ABS_SMOOTH_EPS_A * ABS_SMOOTH_EPS_A).sqrt();
        let dabs_di = i / abs_i;
        let r_am = p.am_rate() * p.q0_ah;
        let i_am = r_am * soc * abs_i;
        let dam_dsoc = r_am * abs_i;
        let dam_di = r_am * soc * dabs_di;

        (i_sei + i_am, dsei_dsoc + dam_dsoc, dsei_di + dam_di)
    }
}

/// Heat-pump constants for the COP blending.
#[derive(Debug, Clone)]
pub struct HpBlock {
    pub params: HeatPumpParams,
    /// eta_hp * m_dot * c_f in kW/K.
    pub k_exch: f64,
}

impl HpBlock {
    pub fn new(params: HeatPumpParams) -> Self {
        let k_exch = params.eta_hp * params.mdot_cf_kw_per_k();
        Self { params, k_exch }
    }

    /// Smooth effective COP over both branches and its partials w.r.t.
    /// (q_d, q_tess). Exact on the complementary set up to the blend eps.
    pub fn cop_eff(&self, q_d: f64, q_t: f64, t_amb: f64) -> (f64, f64, f64) {
        let (c, cd, ct, _, _, _) = self.cop_eff2(q_d, q_t, t_amb);
        (c, cd, ct)
    }

    /// COP with first and second partials:
    /// (c, c_d, c_t, c_dd, c_dt, c_tt).
    pub fn cop_eff2(&self, q_d: f64, q_t: f64, t_amb: f64) -> (f64, f64, f64, f64, f64, f64) {
        let p = &self.params;
        let eps = HP_BLEND_EPS_KW;
        let t_ref = p.t_out_d;
        let kk = self.k_exch;
        let tin_d = p.t_out_d - q_d / kk;
        let tin_t = p.t_out_tess - q_t / kk;
        let num = q_d * tin_d + q_t * tin_t + eps * t_ref;
        let den = q_d + q_t + eps;
        let t_eff = num / den;
        let n_d = tin_d - q_d / kk;
        let n_t = tin_t - q_t / kk;
        let den2 = den * den;
        let den3 = den2 * den;
        let t_d = (n_d * den - num) / den2;
        let t_t = (n_t * den - num) / den2;
        // second partials of the quotient with D linear in both heats
        let t_dd = -2.0 / kk / den - 2.0 * n_d / den2 + 2.0 * num / den3;
        let t_tt = -2.0 / kk / den - 2.0 * n_t / den2 + 2.0 * num / den3;
        let t_dt = -(n_d + n_t) / den2 + 2.0 * num / den3;
        let c = p.cop_a * (-p.cop_b * (t_eff - t_amb)).exp();
        let b = p.cop_b;
        let c_d = -b * c * t_d;
        let c_t = -b * c * t_t;
        let c_dd = c * (b * b * t_d * t_d - b * t_dd);
        let c_dt = c * (b * b * t_d * t_t - b * t_dt);
        let c_tt = c * (b * b * t_t * t_t - b * t_tt);
        (c, c_d, c_t, c_dd, c_dt, c_tt)
    }
}

/// One equality constraint of the transcription.
#[derive(Debug, Clone)]
pub enum Constraint {
    /// sum(coef * x) + constant = 0
    Linear {
        terms: Vec<(u32, f64)>,
        constant: f64,
    },
    /// soc_next - soc + k_soc * i / q = 0
    SocStep {
        soc_next: u32,
        soc: u32,
        i: u32,
        q: u32,
        bp: u32,
    },
    /// q_next - q + dt_h * i_loss(soc, i) = 0
    QStep {
        q_next: u32,
        q: u32,
        soc: u32,
        i: u32,
        bp: u32,
        step: u32,
    },
    /// cells * (ocv(soc) - r1 i_r1 - r0 i) * i / 1000 - (p_dis - p_ch) = 0
    PackPower {
        i: u32,
        soc: u32,
        i_r1: u32,
        p_dis: u32,
        p_ch: u32,
        bp: u32,
    },
    /// q_d + q_tess - cop_eff(q_d, q_tess) * p_hp = 0
    HpBalance {
        q_d: u32,
        q_tess: Option<u32>,
        p_hp: u32,
        t_amb: f64,
    },
    /// i - 1000 * p_drive / (cells * ocv(soc)) = 0
    DriveCurrent {
        i: u32,
        soc: u32,
        p_drive_kw: f64,
        bp: u32,
    },
}

/// Which goal a cost term belongs to, for the per-term breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostGroup {
    GridA,
    GridB,
    Loss,
    SocDep,
    Comfort,
    CompPenalty,
}

#[derive(Debug, Clone)]
pub enum Term {
    Linear {
        var: u32,
        coef: f64,
        group: CostGroup,
    },
    /// weight * (x - target)^2
    Quadratic {
        var: u32,
        target: f64,
        weight: f64,
        group: CostGroup,
    },
    /// weight * x_a * x_b
    Bilinear {
        a: u32,
        b: u32,
        weight: f64,
        group: CostGroup,
    },
}

/// Identifies the problem for diagnostics and reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OcpMeta {
    pub stage: StageKind,
    pub h: usize,
    pub dt_s: i64,
    pub start_s: i64,
}

/// A transcribed NLP over one horizon.
#[derive(Debug, Clone)]
pub struct OcpProblem {
    pub meta: OcpMeta,
    pub n: usize,
    /// Bounds in natural units.
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    /// Affine variable scaling: x = shift + scale * x_scaled.
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub con_scale: Vec<f64>,
    pub objective: Vec<Term>,
    /// Dynamics-consistent starting point in natural units.
    pub warm_start: Vec<f64>,
    pub layout: OcpLayout,
    pub batteries: Vec<BatteryBlock>,
    pub hp: HpBlock,
    /// (plus, minus) variable pairs subject to the complementarity audit.
    pub comp_pairs: Vec<(u32, u32)>,
    /// Index of the terminal periodicity constraint, when present.
    pub periodicity_con: Option<usize>,
}

impl OcpProblem {
    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn num_eq(&self) -> usize {
        self.constraints.len()
    }

    fn constraint_value(&self, con: &Constraint, x: &[f64]) -> f64 {
        match con {
            Constraint::Linear { terms, constant } => {
                let mut v = *constant;
                for (i, c) in terms {
                    v += c * x[*i as usize];
                }
                v
            }
            Constraint::SocStep {
                soc_next,
                soc,
                i,
                q,
                bp,
            } => {
                let b = &self.batteries[*bp as usize];
                x[*soc_next as usize] - x[*soc as usize]
                    + b.k_soc * x[*i as usize] / x[*q as usize]
            }
            Constraint::QStep {
                q_next,
                q,
                soc,
                i,
                bp,
                step,
            } => {
                let b = &self.batteries[*bp as usize];
                let (i_loss, _, _) = b.i_loss(x[*soc as usize], x[*i as usize], *step as usize);
                x[*q_next as usize] - x[*q as usize] + b.dt_h * i_loss
            }
            Constraint::PackPower {
                i,
                soc,
                i_r1,
                p_dis,
                p_ch,
                bp,
            } => {
                let b = &self.batteries[*bp as usize];
                let iv = x[*i as usize];
                let (ocv, _) = crate::battery::ocv_with_deriv(x[*soc as usize], &b.params);
                let v_t = ocv - b.params.r1_ohm * x[*i_r1 as usize] - b.params.r0_ohm * iv;
                b.cells * v_t * iv / 1000.0 - (x[*p_dis as usize] - x[*p_ch as usize])
            }
            Constraint::HpBalance {
                q_d,
                q_tess,
                p_hp,
                t_amb,
            } => {
                let qd = x[*q_d as usize];
                let qt = q_tess.map_or(0.0, |i| x[i as usize]);
                let (c, _, _) = self.hp.cop_eff(qd, qt, *t_amb);
                qd + qt - c * x[*p_hp as usize]
            }
            Constraint::DriveCurrent {
                i,
                soc,
                p_drive_kw,
                bp,
            } => {
                let b = &self.batteries[*bp as usize];
                let (ocv, _) = crate::battery::ocv_with_deriv(x[*soc as usize], &b.params);
                x[*i as usize] - 1000.0 * p_drive_kw / (b.cells * ocv)
            }
        }
    }

    fn constraint_grad(&self, con: &Constraint, x: &[f64], mut emit: impl FnMut(u32, f64)) {
        match con {
            Constraint::Linear { terms, .. } => {
                for (i, c) in terms {
                    emit(*i, *c);
                }
            }
            Constraint::SocStep {
                soc_next,
                soc,
                i,
                q,
                bp,
            } => {
                let b = &self.batteries[*bp as usize];
                let qv = x[*q as usize];
                emit(*soc_next, 1.0);
                emit(*soc, -1.0);
                emit(*i, b.k_soc / qv);
                emit(*q, -b.k_soc * x[*i as usize] / (qv * qv));
            }
            Constraint::QStep {
                q_next,
                q,
                soc,
                i,
                bp,
                step,
            } => {
                let b = &self.batteries[*bp as usize];
                let (_, dsoc, di) = b.i_loss(x[*soc as usize], x[*i as usize], *step as usize);
                emit(*q_next, 1.0);
                emit(*q, -1.0);
                emit(*soc, b.dt_h * dsoc);
                emit(*i, b.dt_h * di);
            }
            Constraint::PackPower {
                i,
                soc,
                i_r1,
                p_dis,
                p_ch,
                bp,
            } => {
                let b = &self.batteries[*bp as usize];
                let iv = x[*i as usize];
                let (ocv, docv) = crate::battery::ocv_with_deriv(x[*soc as usize], &b.params);
                let v_t = ocv - b.params.r1_ohm * x[*i_r1 as usize] - b.params.r0_ohm * iv;
                emit(*i, b.cells * (v_t - b.params.r0_ohm * iv) / 1000.0);
                emit(*soc, b.cells * docv * iv / 1000.0);
                emit(*i_r1, -b.cells * b.params.r1_ohm * iv / 1000.0);
                emit(*p_dis, -1.0);
                emit(*p_ch, 1.0);
            }
            Constraint::HpBalance {
                q_d,
                q_tess,
                p_hp,
                t_amb,
            } => {
                let qd = x[*q_d as usize];
                let qt = q_tess.map_or(0.0, |i| x[i as usize]);
                let (c, dc_dqd, dc_dqt) = self.hp.cop_eff(qd, qt, *t_amb);
                let php = x[*p_hp as usize];
                emit(*q_d, 1.0 - dc_dqd * php);
                if let Some(qti) = q_tess {
                    emit(*qti, 1.0 - dc_dqt * php);
                }
                emit(*p_hp, -c);
            }
            Constraint::DriveCurrent {
                i,
                soc,
                p_drive_kw,
                bp,
            } => {
                let b = &self.batteries[*bp as usize];
                let (ocv, docv) = crate::battery::ocv_with_deriv(x[*soc as usize], &b.params);
                emit(*i, 1.0);
                emit(*soc, 1000.0 * p_drive_kw * docv / (b.cells * ocv * ocv));
            }
        }
    }

    /// Accumulate `(d2 c / dx2) v` into `emit` for one constraint (raw
    /// units). Linear rows contribute nothing.
    fn constraint_hess_vec(
        &self,
        con: &Constraint,
        x: &[f64],
        v: &[f64],
        mut emit: impl FnMut(u32, f64),
    ) {
        match con {
            Constraint::Linear { .. } => {}
            Constraint::SocStep {
                soc: _,
                soc_next: _,
                i,
                q,
                bp,
            } => {
                let b = &self.batteries[*bp as usize];
                let qv = x[*q as usize];
                let iv = x[*i as usize];
                let h_iq = -b.k_soc / (qv * qv);
                let h_qq = 2.0 * b.k_soc * iv / (qv * qv * qv);
                emit(*i, h_iq * v[*q as usize]);
                emit(*q, h_iq * v[*i as usize] + h_qq * v[*q as usize]);
            }
            Constraint::QStep {
                q_next: _,
                q: _,
                soc,
                i,
                bp,
                step,
            } => {
                let b = &self.batteries[*bp as usize];
                let (h_ss, h_si, h_ii) =
                    b.i_loss_hess(x[*soc as usize], x[*i as usize], *step as usize);
                let dt_h = b.dt_h;
                emit(
                    *soc,
                    dt_h * (h_ss * v[*soc as usize] + h_si * v[*i as usize]),
                );
                emit(
                    *i,
                    dt_h * (h_si * v[*soc as usize] + h_ii * v[*i as usize]),
                );
            }
            Constraint::PackPower {
                i,
                soc,
                i_r1,
                p_dis: _,
                p_ch: _,
                bp,
            } => {
                let b = &self.batteries[*bp as usize];
                let c1000 = b.cells / 1000.0;
                let iv = x[*i as usize];
                let z = b.params.stoichiometry(x[*soc as usize]);
                let dz = b.params.z_100pct - b.params.z_0pct;
                let (_, dp1, dp2) = b.params.ocv_p.eval2(z);
                let (_, dn1, dn2) = b.params.ocv_n.eval2(z);
                let docv = (dp1 - dn1) * dz;
                let d2ocv = (dp2 - dn2) * dz * dz;
                emit(
                    *i,
                    c1000
                        * (-2.0 * b.params.r0_ohm * v[*i as usize] + docv * v[*soc as usize]
                            - b.params.r1_ohm * v[*i_r1 as usize]),
                );
                emit(
                    *soc,
                    c1000 * (docv * v[*i as usize] + d2ocv * iv * v[*soc as usize]),
                );
                emit(*i_r1, -c1000 * b.params.r1_ohm * v[*i as usize]);
            }
            Constraint::HpBalance {
                q_d,
                q_tess,
                p_hp,
                t_amb,
            } => {
                let qd = x[*q_d as usize];
                let qt = q_tess.map_or(0.0, |i| x[i as usize]);
                let (_, c_d, c_t, c_dd, c_dt, c_tt) = self.hp.cop_eff2(qd, qt, *t_amb);
                let php = x[*p_hp as usize];
                let v_d = v[*q_d as usize];
                let v_t = q_tess.map_or(0.0, |i| v[i as usize]);
                let v_p = v[*p_hp as usize];
                emit(
                    *q_d,
                    -php * (c_dd * v_d + c_dt * v_t) - c_d * v_p,
                );
                if let Some(qti) = q_tess {
                    emit(*qti, -php * (c_dt * v_d + c_tt * v_t) - c_t * v_p);
                }
                emit(*p_hp, -c_d * v_d - c_t * v_t);
            }
            Constraint::DriveCurrent {
                i: _,
                soc,
                p_drive_kw,
                bp,
            } => {
                let b = &self.batteries[*bp as usize];
                let z = b.params.stoichiometry(x[*soc as usize]);
                let dz = b.params.z_100pct - b.params.z_0pct;
                let (vp, dp1, dp2) = b.params.ocv_p.eval2(z);
                let (vn, dn1, dn2) = b.params.ocv_n.eval2(z);
                let ocv = vp - vn;
                let docv = (dp1 - dn1) * dz;
                let d2ocv = (dp2 - dn2) * dz * dz;
                let kc = 1000.0 * p_drive_kw / b.cells;
                // r = i - kc/ocv: d2r/dsoc2 = kc*(d2ocv/ocv^2 - 2 docv^2/ocv^3)
                let h_ss = kc * (d2ocv / (ocv * ocv) - 2.0 * docv * docv / (ocv * ocv * ocv));
                emit(*soc, h_ss * v[*soc as usize]);
            }
        }
    }

    /// Objective value in natural units.
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        let mut f = 0.0;
        for t in &self.objective {
            f += match t {
                Term::Linear { var, coef, .. } => coef * x[*var as usize],
                Term::Quadratic {
                    var,
                    target,
                    weight,
                    ..
                } => {
                    let e = x[*var as usize] - target;
                    weight * e * e
                }
                Term::Bilinear { a, b, weight, .. } => {
                    weight * x[*a as usize] * x[*b as usize]
                }
            };
        }
        f
    }

    /// Per-group objective decomposition.
    pub fn objective_breakdown(&self, x: &[f64]) -> CostBreakdown {
        let mut bd = CostBreakdown::default();
        for t in &self.objective {
            let (v, group) = match t {
                Term::Linear { var, coef, group } => (coef * x[*var as usize], *group),
                Term::Quadratic {
                    var,
                    target,
                    weight,
                    group,
                } => {
                    let e = x[*var as usize] - target;
                    (weight * e * e, *group)
                }
                Term::Bilinear { a, b, weight, group } => {
                    (weight * x[*a as usize] * x[*b as usize], *group)
                }
            };
            match group {
                CostGroup::GridA => bd.grid_a += v,
                CostGroup::GridB => bd.grid_b += v,
                CostGroup::Loss => bd.loss += v,
                CostGroup::SocDep => bd.soc_dep += v,
                CostGroup::Comfort => bd.comfort += v,
                CostGroup::CompPenalty => bd.comp_penalty += v,
            }
        }
        bd
    }

    fn objective_grad(&self, x: &[f64], g: &mut [f64]) {
        for t in &self.objective {
            match t {
                Term::Linear { var, coef, .. } => g[*var as usize] += coef,
                Term::Quadratic {
                    var,
                    target,
                    weight,
                    ..
                } => {
                    g[*var as usize] += 2.0 * weight * (x[*var as usize] - target);
                }
                Term::Bilinear { a, b, weight, .. } => {
                    g[*a as usize] += weight * x[*b as usize];
                    g[*b as usize] += weight * x[*a as usize];
                }
            }
        }
    }

    /// Worst P+ * P- product over the audited pairs, per step max [kW^2].
    pub fn comp_violation(&self, x: &[f64]) -> f64 {
        self.comp_pairs
            .iter()
            .map(|(a, b)| x[*a as usize] * x[*b as usize])
            .fold(0.0, f64::max)
    }

    /// Clone with a quadratic complementarity penalty added on every pair.
    pub fn with_comp_penalty(&self, rho: f64) -> OcpProblem {
        let mut p = self.clone();
        for (a, b) in &self.comp_pairs {
            p.objective.push(Term::Bilinear {
                a: *a,
                b: *b,
                weight: rho,
                group: CostGroup::CompPenalty,
            });
        }
        p
    }

    /// Full evaluation in natural units: objective, gradient, residuals,
    /// and the constraint Jacobian as (row, col, value) triplets.
    pub fn evaluate(&self, x: &[f64]) -> Evaluation {
        assert_eq!(x.len(), self.n, "dimension mismatch");
        let mut residuals = vec![0.0; self.constraints.len()];
        let mut jacobian = Vec::new();
        for (row, con) in self.constraints.iter().enumerate() {
            residuals[row] = self.constraint_value(con, x);
            self.constraint_grad(con, x, |col, val| {
                jacobian.push((row, col as usize, val));
            });
        }
        let mut grad_objective = vec![0.0; self.n];
        self.objective_grad(x, &mut grad_objective);
        Evaluation {
            objective: self.objective_value(x),
            grad_objective,
            residuals,
            jacobian,
        }
    }

    /// Plain-text listing of variables, bounds, and residuals at a point.
    pub fn dump(&self, x: &[f64]) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "ocp {:?} h={} dt={}s n={} m={}",
            self.meta.stage,
            self.meta.h,
            self.meta.dt_s,
            self.n,
            self.num_eq()
        );
        let _ = writeln!(out, "-- variables (name k lb x ub)");
        for i in 0..self.n {
            let _ = writeln!(
                out,
                "{:<16} {:>14.6e} {:>14.6e} {:>14.6e}",
                self.layout.name_of(i),
                self.lb[i],
                x[i],
                self.ub[i]
            );
        }
        let _ = writeln!(out, "-- constraint residuals");
        for (row, con) in self.constraints.iter().enumerate() {
            let _ = writeln!(out, "c[{row}] = {:.6e}", self.constraint_value(con, x));
        }
        out
    }

    /// Extract per-step decisions from a solution vector.
    pub fn decisions(&self, x: &[f64]) -> Vec<DecisionVector> {
        let l = &self.layout;
        (0..l.h)
            .map(|k| {
                let pick = |s: Option<&BatteryVars>, f: fn(&BatteryVars) -> SeriesIdx| {
                    s.map_or(0.0, |b| x[f(b).at(k)])
                };
                DecisionVector {
                    p_bess_plus: pick(l.bess.as_ref(), |b| b.p_dis),
                    p_bess_minus: pick(l.bess.as_ref(), |b| b.p_ch),
                    p_ev_plus: pick(l.ev.as_ref(), |b| b.p_dis),
                    p_ev_minus: pick(l.ev.as_ref(), |b| b.p_ch),
                    p_grid_plus: x[l.p_net.at(k)].max(0.0),
                    p_grid_minus: (-x[l.p_net.at(k)]).max(0.0),
                    p_hp_e: l.p_hp.map_or(0.0, |s| x[s.at(k)]),
                    q_hp_d: l.q_hp_d.map_or(0.0, |s| x[s.at(k)]),
                    q_hp_tess: l.q_hp_tess.map_or(0.0, |s| x[s.at(k)]),
                    q_tess_d: l.q_tess_d.map_or(0.0, |s| x[s.at(k)]),
                }
            })
            .collect()
    }
}

impl OcpLayout {
    /// Human-readable variable name, derived on demand for dumps.
    pub fn name_of(&self, i: usize) -> String {
        let mut candidates: Vec<(&str, SeriesIdx)> = vec![
            ("grid_a_in", self.grid_a_in),
            ("grid_a_out", self.grid_a_out),
            ("p_net", self.p_net),
        ];
        let mut opt = |name: &'static str, s: Option<SeriesIdx>| {
            if let Some(s) = s {
                candidates.push((name, s));
            }
        };
        opt("t_in", self.t_in);
        opt("s_comf", self.s_comf);
        opt("w_lo", self.w_lo);
        opt("w_hi", self.w_hi);
        opt("t_tess", self.t_tess);
        opt("q_tess_d", self.q_tess_d);
        opt("q_hp_tess", self.q_hp_tess);
        opt("p_hp", self.p_hp);
        opt("q_hp_d", self.q_hp_d);
        for (prefix, b) in [("bess", &self.bess), ("ev", &self.ev)] {
            if let Some(b) = b {
                let names: [(&'static str, SeriesIdx); 6] = match prefix {
                    "bess" => [
                        ("bess_soc", b.soc),
                        ("bess_ir1", b.i_r1),
                        ("bess_q", b.q),
                        ("bess_i", b.i_cell),
                        ("bess_p_ch", b.p_ch),
                        ("bess_p_dis", b.p_dis),
                    ],
                    _ => [
                        ("ev_soc", b.soc),
                        ("ev_ir1", b.i_r1),
                        ("ev_q", b.q),
                        ("ev_i", b.i_cell),
                        ("ev_p_ch", b.p_ch),
                        ("ev_p_dis", b.p_dis),
                    ],
                };
                candidates.extend(names);
            }
        }
        if let Some((bi, bo)) = self.grid_b {
            candidates.push(("grid_b_in", bi));
            candidates.push(("grid_b_out", bo));
        }
        for (name, s) in candidates {
            if i >= s.start && i < s.start + s.len {
                return format!("{name}[{}]", i - s.start);
            }
        }
        format!("x[{i}]")
    }
}

/// Result of `evaluate`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub objective: f64,
    pub grad_objective: Vec<f64>,
    pub residuals: Vec<f64>,
    pub jacobian: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    pub grid_a: f64,
    pub grid_b: f64,
    pub loss: f64,
    pub soc_dep: f64,
    pub comfort: f64,
    pub comp_penalty: f64,
}

/// Predicted state trajectories of a solution (nodes 0..=h).
#[derive(Debug, Clone, Default)]
pub struct PredictedStates {
    pub t_in: Vec<f64>,
    pub t_tess: Vec<f64>,
    pub soc_bess: Vec<f64>,
    pub soc_ev: Vec<f64>,
    pub i_r1_bess: Vec<f64>,
    pub i_r1_ev: Vec<f64>,
    pub q_bess: Vec<f64>,
    pub q_ev: Vec<f64>,
}

/// Solver outcome plus extracted trajectories and diagnostics.
#[derive(Debug, Clone)]
pub struct OcpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub breakdown: CostBreakdown,
    pub status: SolveStatus,
    pub feasibility: f64,
    pub stationarity: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub multipliers: Vec<f64>,
    pub periodicity_residual: Option<f64>,
    pub comp_violation: f64,
    pub decisions: Vec<DecisionVector>,
    pub p_net: Vec<f64>,
    pub states: PredictedStates,
    pub iterations: Vec<crate::solver::IterRecord>,
}

/// Scaled adapter the solver consumes.
struct ScaledOcp<'a> {
    p: &'a OcpProblem,
    lb_s: Vec<f64>,
    ub_s: Vec<f64>,
    x_raw: RefCell<Vec<f64>>,
    v_raw: RefCell<Vec<f64>>,
}

impl<'a> ScaledOcp<'a> {
    fn new(p: &'a OcpProblem) -> Self {
        let lb_s = p
            .lb
            .iter()
            .zip(&p.shift)
            .zip(&p.scale)
            .map(|((l, sh), sc)| (l - sh) / sc)
            .collect();
        let ub_s = p
            .ub
            .iter()
            .zip(&p.shift)
            .zip(&p.scale)
            .map(|((u, sh), sc)| (u - sh) / sc)
            .collect();
        Self {
            p,
            lb_s,
            ub_s,
            x_raw: RefCell::new(vec![0.0; p.n]),
            v_raw: RefCell::new(vec![0.0; p.n]),
        }
    }

    fn unscale_into(&self, xs: &[f64], raw: &mut [f64]) {
        for i in 0..xs.len() {
            raw[i] = self.p.shift[i] + self.p.scale[i] * xs[i];
        }
    }
}

impl NlpProblem for ScaledOcp<'_> {
    fn num_vars(&self) -> usize {
        self.p.n
    }
    fn num_eq(&self) -> usize {
        self.p.constraints.len()
    }
    fn lower(&self) -> &[f64] {
        &self.lb_s
    }
    fn upper(&self) -> &[f64] {
        &self.ub_s
    }

    fn eval_fc(&self, xs: &[f64], c_out: &mut [f64]) -> f64 {
        let mut raw = self.x_raw.borrow_mut();
        self.unscale_into(xs, &mut raw);
        for (row, con) in self.p.constraints.iter().enumerate() {
            c_out[row] = self.p.constraint_value(con, &raw) / self.p.con_scale[row];
        }
        self.p.objective_value(&raw)
    }

    fn eval_grad(&self, xs: &[f64], y: &[f64], g: &mut [f64]) {
        let mut raw = self.x_raw.borrow_mut();
        self.unscale_into(xs, &mut raw);
        g.fill(0.0);
        self.p.objective_grad(&raw, g);
        for (row, con) in self.p.constraints.iter().enumerate() {
            let w = y[row] / self.p.con_scale[row];
            if w != 0.0 {
                self.p.constraint_grad(con, &raw, |col, val| {
                    g[col as usize] += w * val;
                });
            }
        }
        for i in 0..g.len() {
            g[i] *= self.p.scale[i];
        }
    }

    fn jac_prod(&self, xs: &[f64], v: &[f64], out: &mut [f64]) {
        let mut raw = self.x_raw.borrow_mut();
        self.unscale_into(xs, &mut raw);
        for (row, con) in self.p.constraints.iter().enumerate() {
            let mut acc = 0.0;
            self.p.constraint_grad(con, &raw, |col, val| {
                acc += val * v[col as usize] * self.p.scale[col as usize];
            });
            out[row] = acc / self.p.con_scale[row];
        }
    }

    fn obj_hess_prod(&self, _xs: &[f64], v: &[f64], out: &mut [f64]) {
        // Quadratic and bilinear terms only; linear terms have no curvature.
        for t in &self.p.objective {
            match t {
                Term::Linear { .. } => {}
                Term::Quadratic { var, weight, .. } => {
                    let i = *var as usize;
                    out[i] += 2.0 * weight * self.p.scale[i] * self.p.scale[i] * v[i];
                }
                Term::Bilinear { a, b, weight, .. } => {
                    let (ia, ib) = (*a as usize, *b as usize);
                    let w = weight * self.p.scale[ia] * self.p.scale[ib];
                    out[ia] += w * v[ib];
                    out[ib] += w * v[ia];
                }
            }
        }
    }

    fn con_hess_prod(&self, xs: &[f64], w: &[f64], v: &[f64], out: &mut [f64]) {
        let mut raw = self.x_raw.borrow_mut();
        self.unscale_into(xs, &mut raw);
        let mut v_raw = self.v_raw.borrow_mut();
        for i in 0..v.len() {
            v_raw[i] = v[i] * self.p.scale[i];
        }
        for (row, con) in self.p.constraints.iter().enumerate() {
            let wr = w[row] / self.p.con_scale[row];
            if wr != 0.0 {
                self.p.constraint_hess_vec(con, &raw, &v_raw, |col, val| {
                    out[col as usize] += wr * self.p.scale[col as usize] * val;
                });
            }
        }
    }

    fn precond_diag(&self, xs: &[f64], rho: f64, out: &mut [f64]) {
        let mut raw = self.x_raw.borrow_mut();
        self.unscale_into(xs, &mut raw);
        out.fill(0.0);
        for t in &self.p.objective {
            if let Term::Quadratic { var, weight, .. } = t {
                let i = *var as usize;
                out[i] += 2.0 * weight * self.p.scale[i] * self.p.scale[i];
            }
        }
        for (row, con) in self.p.constraints.iter().enumerate() {
            let s_row = self.p.con_scale[row];
            self.p.constraint_grad(con, &raw, |col, val| {
                let j = val * self.p.scale[col as usize] / s_row;
                out[col as usize] += rho * j * j;
            });
        }
    }
}

/// Solve a transcribed problem, warm-starting from its stored trajectory
/// (and optionally previous multipliers).
pub fn solve(
    problem: &OcpProblem,
    settings: &SolverSettings,
    multipliers0: Option<&[f64]>,
) -> OcpSolution {
    let scaled = ScaledOcp::new(problem);
    let xs0: Vec<f64> = problem
        .warm_start
        .iter()
        .zip(&problem.shift)
        .zip(&problem.scale)
        .map(|((x, sh), sc)| (x - sh) / sc)
        .collect();
    let res: NlpResult = solve_nlp(&scaled, &xs0, multipliers0, settings);
    let mut x = vec![0.0; problem.n];
    scaled.unscale_into(&res.x, &mut x);

    let layout = &problem.layout;
    let grab = |s: SeriesIdx| -> Vec<f64> { (0..s.len).map(|k| x[s.at(k)]).collect() };
    let states = PredictedStates {
        t_in: layout.t_in.map(grab).unwrap_or_default(),
        t_tess: layout.t_tess.map(grab).unwrap_or_default(),
        soc_bess: layout.bess.as_ref().map(|b| grab(b.soc)).unwrap_or_default(),
        soc_ev: layout.ev.as_ref().map(|b| grab(b.soc)).unwrap_or_default(),
        i_r1_bess: layout.bess.as_ref().map(|b| grab(b.i_r1)).unwrap_or_default(),
        i_r1_ev: layout.ev.as_ref().map(|b| grab(b.i_r1)).unwrap_or_default(),
        q_bess: layout.bess.as_ref().map(|b| grab(b.q)).unwrap_or_default(),
        q_ev: layout.ev.as_ref().map(|b| grab(b.q)).unwrap_or_default(),
    };
    let periodicity_residual = problem.periodicity_con.map(|row| {
        problem
            .constraint_value(&problem.constraints[row], &x)
            .abs()
    });

    OcpSolution {
        objective: problem.objective_value(&x),
        breakdown: problem.objective_breakdown(&x),
        status: res.status,
        feasibility: res.feasibility,
        stationarity: res.stationarity,
        outer_iters: res.outer_iters,
        inner_iters: res.inner_iters,
        multipliers: res.multipliers,
        periodicity_residual,
        comp_violation: problem.comp_violation(&x),
        decisions: problem.decisions(&x),
        p_net: grab(layout.p_net),
        states,
        x,
        iterations: res.iterations,
    }
}
