//! Building envelope, heat pump, and TESS dynamics plus comfort slack.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::HOUR_S;
use crate::types::EPS_COMP;

#[derive(Debug, Error, PartialEq)]
pub enum ThermalError {
    #[error("both heat-pump branches active beyond tolerance: q_hp_d={0} kW, q_hp_tess={1} kW")]
    BothBranchesActive(f64, f64),
}

/// Lumped single-zone building envelope parameters.
///
/// Surfaces are ordered roof, walls, floor, windows; irradiance gains use
/// surfaces 2..3 (1-based) only. Defaults are the winter column of the
/// reference building; summer uses s_b = 0.1 and r_b = 0.99 (ventilated
/// and shaded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildingParams {
    /// Building thermal capacity [kWh/K].
    pub c_b: f64,
    /// Volume [m^3].
    pub v_b: f64,
    /// Air density [kg/m^3].
    pub rho_air: f64,
    /// Air thermal capacity [kWh/(kg K)].
    pub c_air: f64,
    /// Wall-to-wall ratio.
    pub w_b: f64,
    /// Solar heat gain coefficient (seasonal).
    pub s_b: f64,
    /// Air change rate [1/h] (seasonal).
    pub r_b: f64,
    /// Surface thickness [m].
    pub d_s: Vec<f64>,
    /// Surface conductivity [kW/(m K)].
    pub u_s: Vec<f64>,
    /// Surface area [m^2].
    pub a_s: Vec<f64>,
    /// Comfort band [K].
    pub t_in_lo: f64,
    pub t_in_hi: f64,
    /// Hard physical bounds the plant may never leave [K].
    pub t_in_phys_lo: f64,
    pub t_in_phys_hi: f64,
}

impl Default for BuildingParams {
    fn default() -> Self {
        Self {
            c_b: 4.755,
            v_b: 585.0,
            rho_air: 1.225,
            c_air: 0.279e-3,
            w_b: 0.3,
            s_b: 0.5,
            r_b: 0.35,
            d_s: vec![0.03, 0.23, 0.23, 0.015],
            u_s: vec![0.18e-3, 1.0e-3, 1.0e-3, 0.72e-3],
            a_s: vec![90.0, 75.0, 48.0, 63.75],
            t_in_lo: 291.15,
            t_in_hi: 297.15,
            t_in_phys_lo: 278.15,
            t_in_phys_hi: 313.15,
        }
    }
}

impl BuildingParams {
    /// Effective heat capacity of the zone [kWh/K].
    pub fn capacity_kwh_per_k(&self) -> f64 {
        self.c_b + self.v_b * self.rho_air * self.c_air
    }

    /// Ventilation loss coefficient [kW/K].
    pub fn vent_coeff(&self) -> f64 {
        self.c_air * self.rho_air * self.v_b * self.r_b
    }

    /// Conduction loss coefficient [kW/K], sum of d_s * U_s * A_s.
    pub fn cond_coeff(&self) -> f64 {
        self.d_s
            .iter()
            .zip(&self.u_s)
            .zip(&self.a_s)
            .map(|((d, u), a)| d * u * a)
            .sum()
    }

    /// Solar aperture: w_b * s_b * (A_2 + A_3) [m^2].
    pub fn solar_aperture(&self) -> f64 {
        let a23: f64 = self.a_s.iter().skip(1).take(2).sum();
        self.w_b * self.s_b * a23
    }
}

/// Heat pump with two mutually exclusive heat exchangers (demand / TESS).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatPumpParams {
    /// Electric power rating [kW].
    pub p_hp_e_max: f64,
    /// Heat-exchanger efficiency.
    pub eta_hp: f64,
    /// Fluid mass flow [kg/s].
    pub m_dot_f: f64,
    /// Fluid heat capacity [kWh/(kg K)].
    pub c_f: f64,
    /// Outlet temperature, demand branch [K].
    pub t_out_d: f64,
    /// Outlet temperature, TESS branch [K].
    pub t_out_tess: f64,
    pub cop_a: f64,
    /// [1/K]
    pub cop_b: f64,
    /// Thermal output limit per branch [kW].
    pub q_hp_d_max: f64,
    pub q_hp_tess_max: f64,
}

impl Default for HeatPumpParams {
    fn default() -> Self {
        Self {
            p_hp_e_max: 4.0,
            eta_hp: 0.95,
            m_dot_f: 0.22,
            c_f: 1.16e-3,
            t_out_d: 323.0,
            t_out_tess: 323.0,
            cop_a: 7.90471,
            cop_b: 0.024,
            q_hp_d_max: 12.0,
            q_hp_tess_max: 12.0,
        }
    }
}

impl HeatPumpParams {
    /// m_dot * c_f expressed in kW/K (c_f is per kWh, flow is per second).
    pub fn mdot_cf_kw_per_k(&self) -> f64 {
        self.m_dot_f * self.c_f * HOUR_S as f64
    }
}

/// Sensible-heat thermal storage characterized by a temperature band.
/// Defaults size a 200 kWh store over a 20 K band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TessParams {
    /// Mass [kg].
    pub m_tess: f64,
    /// Heat capacity [kWh/(kg K)].
    pub c_tess: f64,
    /// Self-discharge [kW].
    pub q_sd: f64,
    pub t_tess_lo: f64,
    pub t_tess_hi: f64,
    pub t_tess_phys_lo: f64,
    pub t_tess_phys_hi: f64,
    /// Discharge limit toward the building [kW].
    pub q_tess_d_max: f64,
}

impl Default for TessParams {
    fn default() -> Self {
        Self {
            m_tess: 8620.689655172414,
            c_tess: 1.16e-3,
            q_sd: 0.0,
            t_tess_lo: 303.0,
            t_tess_hi: 323.0,
            t_tess_phys_lo: 288.0,
            t_tess_phys_hi: 338.0,
            q_tess_d_max: 10.0,
        }
    }
}

impl TessParams {
    /// Thermal mass [kWh/K].
    pub fn mc_kwh_per_k(&self) -> f64 {
        self.m_tess * self.c_tess
    }

    /// Usable capacity over the band [kWh].
    pub fn capacity_kwh(&self) -> f64 {
        self.mc_kwh_per_k() * (self.t_tess_hi - self.t_tess_lo)
    }
}

/// Advance the building temperature one step of `dt_s` seconds.
pub fn building_step(
    t_in: f64,
    t_amb: f64,
    g_ir: f64,
    q_tess_d: f64,
    q_hp_d: f64,
    dt_s: f64,
    p: &BuildingParams,
) -> f64 {
    debug_assert!(dt_s > 0.0);
    let q_ir = p.solar_aperture() * g_ir;
    let q_loss = (p.vent_coeff() + p.cond_coeff()) * (t_in - t_amb);
    let dt_h = dt_s / HOUR_S as f64;
    t_in + dt_h / p.capacity_kwh_per_k() * (q_ir + q_tess_d + q_hp_d - q_loss)
}

/// Comfort excursion: zero inside the band, linear outside [K].
pub fn comfort_slack(t_in: f64, p: &BuildingParams) -> f64 {
    (p.t_in_lo - t_in).max(t_in - p.t_in_hi).max(0.0)
}

/// Coefficient of performance at the given exchanger inlet temperature.
pub fn cop(t_hp_in: f64, t_amb: f64, p: &HeatPumpParams) -> f64 {
    p.cop_a * (-p.cop_b * (t_hp_in - t_amb)).exp()
}

/// Result of resolving the heat-pump branch coupling at one operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HpSplit {
    /// Total heat output q_hp_d + q_hp_tess [kW].
    pub q_hp_total: f64,
    /// Inlet temperature of the active branch [K].
    pub t_hp_in: f64,
    /// COP at that inlet temperature.
    pub cop: f64,
    /// Residual of q_total - COP * p_hp_e [kW]; zero when consistent.
    pub residual: f64,
}

/// Resolve the active branch, inlet temperature, and heat-balance residual.
///
/// At most one branch may carry heat (complementarity); the inlet
/// temperature comes from the active branch's outlet minus the exchanger
/// temperature drop.
pub fn hp_heat_split(
    p_hp_e: f64,
    q_hp_d: f64,
    q_hp_tess: f64,
    t_amb: f64,
    p: &HeatPumpParams,
) -> Result<HpSplit, ThermalError> {
    if q_hp_d * q_hp_tess > EPS_COMP {
        return Err(ThermalError::BothBranchesActive(q_hp_d, q_hp_tess));
    }
    let k = p.eta_hp * p.mdot_cf_kw_per_k();
    let t_hp_in = if q_hp_d >= q_hp_tess && q_hp_d > 0.0 {
        p.t_out_d - q_hp_d / k
    } else if q_hp_tess > 0.0 {
        p.t_out_tess - q_hp_tess / k
    } else {
        p.t_out_d
    };
    let c = cop(t_hp_in, t_amb, p);
    let q_total = q_hp_d + q_hp_tess;
    Ok(HpSplit {
        q_hp_total: q_total,
        t_hp_in,
        cop: c,
        residual: q_total - c * p_hp_e,
    })
}

/// Advance the TESS temperature one step of `dt_s` seconds.
pub fn tess_step(t_tess: f64, q_hp_tess: f64, q_tess_d: f64, dt_s: f64, p: &TessParams) -> f64 {
    debug_assert!(dt_s > 0.0);
    let dt_h = dt_s / HOUR_S as f64;
    t_tess + dt_h / p.mc_kwh_per_k() * (q_hp_tess - q_tess_d - p.q_sd)
}

/// Thermal buffer state of charge, not clamped.
pub fn soc_tess(t_tess: f64, p: &TessParams) -> f64 {
    debug_assert!(p.t_tess_hi > p.t_tess_lo);
    (t_tess - p.t_tess_lo) / (p.t_tess_hi - p.t_tess_lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioConfig;
    use proptest::prelude::*;

    fn building() -> BuildingParams {
        ScenarioConfig::default().building
    }

    fn hp() -> HeatPumpParams {
        ScenarioConfig::default().heat_pump
    }

    fn tess() -> TessParams {
        ScenarioConfig::default().tess
    }

    #[test]
    fn building_equilibrium_is_fixed_point() {
        let p = building();
        let t = building_step(283.0, 283.0, 0.0, 0.0, 0.0, 900.0, &p);
        assert!((t - 283.0).abs() < 1e-12);
    }

    #[test]
    fn building_losses_only_cool() {
        let p = building();
        let t = building_step(293.0, 283.0, 0.0, 0.0, 0.0, 900.0, &p);
        assert!(t < 293.0);
    }

    #[test]
    fn building_step_matches_term_by_term_oracle() {
        // Spreadsheet-style evaluation with the Table-A winter defaults:
        // q_ir = 0, q_hp_d = 4 kW, losses from vent + cond at dT = 10 K.
        let p = building();
        let t_in = 293.0;
        let t_amb = 283.0;
        let vent = 0.279e-3 * 1.225 * 585.0 * 0.35; // 0.069966...
        let cond = 0.03 * 0.18e-3 * 90.0
            + 0.23 * 1.0e-3 * 75.0
            + 0.23 * 1.0e-3 * 48.0
            + 0.015 * 0.72e-3 * 63.75;
        let cap = 4.755 + 585.0 * 1.225 * 0.279e-3;
        let expected = t_in + (900.0 / 3600.0) / cap * (4.0 - (vent + cond) * 10.0);
        let got = building_step(t_in, t_amb, 0.0, 0.0, 4.0, 900.0, &p);
        assert!((got - expected).abs() < 1e-12, "got {got}, expected {expected}");
    }

    #[test]
    fn comfort_slack_band_and_excursions() {
        let p = building();
        let mid = 0.5 * (p.t_in_lo + p.t_in_hi);
        assert_eq!(comfort_slack(mid, &p), 0.0);
        assert!((comfort_slack(p.t_in_hi + 2.0, &p) - 2.0).abs() < 1e-12);
        assert!((comfort_slack(p.t_in_lo - 0.5, &p) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cop_at_zero_delta_t() {
        let p = hp();
        assert!((cop(280.0, 280.0, &p) - 7.90471).abs() < 1e-9);
    }

    #[test]
    fn cop_halves_at_analytic_half_life() {
        // ln(2) / 0.024 = 28.8811... K halves the zero-dT value.
        let p = hp();
        let dt = std::f64::consts::LN_2 / 0.024;
        let c = cop(280.0 + dt, 280.0, &p);
        assert!((c - 7.90471 / 2.0).abs() < 1e-9);
    }

    #[test]
    fn cop_decays_to_zero() {
        let p = hp();
        assert!(cop(280.0 + 1e4, 280.0, &p) < 1e-90);
    }

    #[test]
    fn hp_split_off_state() {
        let p = hp();
        let s = hp_heat_split(0.0, 0.0, 0.0, 278.0, &p).unwrap();
        assert_eq!(s.q_hp_total, 0.0);
        assert_eq!(s.residual, 0.0);
    }

    #[test]
    fn hp_split_demand_branch_inlet_temperature() {
        // Single-equation hand evaluation: T_in = T_out_D - Q / (eta * mdot * c_f),
        // with mdot*c_f converted to kW/K (0.22 kg/s * 1.16e-3 kWh/kgK * 3600 s/h).
        let p = hp();
        let k = p.eta_hp * 0.22 * 1.16e-3 * 3600.0;
        let expected = p.t_out_d - 4.0 / k;
        let s = hp_heat_split(1.0, 4.0, 0.0, 278.0, &p).unwrap();
        assert!((s.t_hp_in - expected).abs() < 1e-12);
    }

    #[test]
    fn hp_split_tess_branch_symmetric() {
        let p = hp();
        let k = p.eta_hp * p.mdot_cf_kw_per_k();
        let s = hp_heat_split(1.0, 0.0, 4.0, 278.0, &p).unwrap();
        assert!((s.t_hp_in - (p.t_out_tess - 4.0 / k)).abs() < 1e-12);
    }

    #[test]
    fn hp_split_rejects_both_branches() {
        let p = hp();
        assert!(hp_heat_split(2.0, 3.0, 3.0, 278.0, &p).is_err());
    }

    #[test]
    fn tess_balance_holds_temperature() {
        let p = tess();
        let t = tess_step(310.0, p.q_sd + 2.0, 2.0, 900.0, &p);
        assert!((t - 310.0).abs() < 1e-12);
    }

    #[test]
    fn tess_charge_unit_conversion() {
        // 10 kW for 1 h into 2 kWh/K raises temperature by 5 K.
        let p = TessParams {
            m_tess: 2.0,
            c_tess: 1.0,
            q_sd: 0.0,
            t_tess_lo: 300.0,
            t_tess_hi: 320.0,
            t_tess_phys_lo: 280.0,
            t_tess_phys_hi: 340.0,
            q_tess_d_max: 10.0,
        };
        let t = tess_step(305.0, 10.0, 0.0, 3600.0, &p);
        assert!((t - 310.0).abs() < 1e-12);
    }

    #[test]
    fn tess_self_discharge_strictly_cools() {
        let p = TessParams { q_sd: 0.2, ..tess() };
        let t = tess_step(310.0, 0.0, 0.0, 900.0, &p);
        assert!(t < 310.0);
    }

    #[test]
    fn soc_tess_endpoints_and_midpoint() {
        let p = tess();
        assert_eq!(soc_tess(p.t_tess_lo, &p), 0.0);
        assert_eq!(soc_tess(p.t_tess_hi, &p), 1.0);
        let mid = 0.5 * (p.t_tess_lo + p.t_tess_hi);
        assert!((soc_tess(mid, &p) - 0.5).abs() < 1e-12);
    }

    proptest! {
        // step(q1+q2) - step(0) = (step(q1)-step(0)) + (step(q2)-step(0))
        #[test]
        fn building_step_superposition(q1 in 0.0f64..20.0, q2 in 0.0f64..20.0, t_in in 280.0f64..300.0) {
            let p = building();
            let base = building_step(t_in, 283.0, 0.1, 0.0, 0.0, 900.0, &p);
            let a = building_step(t_in, 283.0, 0.1, 0.0, q1, 900.0, &p) - base;
            let b = building_step(t_in, 283.0, 0.1, 0.0, q2, 900.0, &p) - base;
            let ab = building_step(t_in, 283.0, 0.1, 0.0, q1 + q2, 900.0, &p) - base;
            prop_assert!((ab - (a + b)).abs() < 1e-12);
        }

        #[test]
        fn cop_strictly_decreasing(dt1 in -20.0f64..60.0, gap in 1e-3f64..30.0) {
            let p = hp();
            prop_assert!(cop(280.0 + dt1 + gap, 280.0, &p) < cop(280.0 + dt1, 280.0, &p));
        }

        #[test]
        fn comfort_slack_convex_piecewise_linear(t1 in 270.0f64..320.0, t2 in 270.0f64..320.0, w in 0.0f64..1.0) {
            let p = building();
            let mid = comfort_slack(w * t1 + (1.0 - w) * t2, &p);
            prop_assert!(mid <= w * comfort_slack(t1, &p) + (1.0 - w) * comfort_slack(t2, &p) + 1e-12);
        }

        // With q_sd = 0, m*c*dT equals the integral of net heat exactly.
        #[test]
        fn tess_energy_bookkeeping(flows in proptest::collection::vec((0.0f64..8.0, 0.0f64..8.0), 1..50)) {
            let p = TessParams { q_sd: 0.0, ..tess() };
            let mut t = 310.0;
            let mut integral_kwh = 0.0;
            for (qin, qout) in &flows {
                t = tess_step(t, *qin, *qout, 900.0, &p);
                integral_kwh += (qin - qout) * 0.25;
            }
            let lhs = p.mc_kwh_per_k() * (t - 310.0);
            prop_assert!((lhs - integral_kwh).abs() <= 1e-9 * integral_kwh.abs().max(1.0));
        }
    }
}
