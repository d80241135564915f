//! Shared domain types and unit conventions.
//!
//! Internal units everywhere: kW, kWh, K, A, Ah, EUR/kWh, seconds for
//! battery age. Prices arrive in EUR/MWh at the file boundary and are
//! converted on ingest.

use serde::{Deserialize, Serialize};

use crate::battery::BatteryState;

/// Default complementarity tolerance for P+ * P- residuals, in kW^2.
pub const EPS_COMP: f64 = 1e-4;

/// Bus-side power of a bidirectional asset from its split components.
///
/// Discharging `p_plus` delivers `eta * p_plus` to the bus; charging
/// `p_minus` draws `p_minus / eta` from the bus.
pub fn net_power(p_plus: f64, p_minus: f64, eta: f64) -> f64 {
    debug_assert!(p_plus >= 0.0 && p_minus >= 0.0);
    debug_assert!(eta > 0.0 && eta <= 1.0);
    eta * p_plus - p_minus / eta
}

/// Electrical storage assets in the hub.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BatteryId {
    Bess,
    Ev,
}

impl BatteryId {
    pub const ALL: [BatteryId; 2] = [BatteryId::Bess, BatteryId::Ev];

    pub fn label(&self) -> &'static str {
        match self {
            BatteryId::Bess => "bess",
            BatteryId::Ev => "ev",
        }
    }
}

/// Full plant state: temperatures plus per-battery electrical state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HubState {
    /// Building inner temperature [K].
    pub t_in: f64,
    /// TESS internal temperature [K].
    pub t_tess: f64,
    pub bess: BatteryState,
    pub ev: BatteryState,
}

impl HubState {
    pub fn battery(&self, id: BatteryId) -> &BatteryState {
        match id {
            BatteryId::Bess => &self.bess,
            BatteryId::Ev => &self.ev,
        }
    }

    pub fn battery_mut(&mut self, id: BatteryId) -> &mut BatteryState {
        match id {
            BatteryId::Bess => &mut self.bess,
            BatteryId::Ev => &mut self.ev,
        }
    }
}

/// One timestep of exogenous data seen by the policies and the plant.
///
/// Prices are EUR/kWh; sell prices are derived from buy prices by the
/// configured ratios when the source files do not carry them explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExogenousFrame {
    pub lambda_da_buy: f64,
    pub lambda_da_sell: f64,
    pub lambda_ida_buy: f64,
    pub lambda_ida_sell: f64,
    pub lambda_id1_buy: f64,
    pub lambda_id1_sell: f64,
    /// Global irradiance [kW/m^2].
    pub g_ir: f64,
    /// Ambient temperature [K].
    pub t_amb: f64,
    /// Uncontrollable electric load [kW].
    pub p_load_e: f64,
    /// PV generation [kW].
    pub p_pv: f64,
    /// EV plugged in (1) or away (0).
    pub gamma_ev: f64,
    /// Someone in the building (1) or not (0).
    pub occupancy: f64,
    /// Average EV traction draw while away [kW].
    pub p_drive_ev: f64,
}

/// One timestep of actions, all split components nonnegative.
///
/// `p_*_plus` is discharge toward the bus, `p_*_minus` is charge, both
/// device side; grid plus is import. Heats are thermal kW.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DecisionVector {
    pub p_bess_plus: f64,
    pub p_bess_minus: f64,
    pub p_ev_plus: f64,
    pub p_ev_minus: f64,
    pub p_grid_plus: f64,
    pub p_grid_minus: f64,
    /// Heat-pump electric consumption [kW].
    pub p_hp_e: f64,
    /// Heat pump to building [kW th].
    pub q_hp_d: f64,
    /// Heat pump to TESS [kW th].
    pub q_hp_tess: f64,
    /// TESS to building [kW th].
    pub q_tess_d: f64,
}

impl DecisionVector {
    /// Worst complementarity residual over the bidirectional pairs [kW^2].
    pub fn comp_residual(&self) -> f64 {
        let pairs = [
            self.p_bess_plus * self.p_bess_minus,
            self.p_ev_plus * self.p_ev_minus,
            self.p_grid_plus * self.p_grid_minus,
            self.q_hp_d * self.q_hp_tess,
        ];
        pairs.into_iter().fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn net_power_single_direction() {
        assert!((net_power(10.0, 0.0, 0.95) - 9.5).abs() < 1e-12);
    }

    #[test]
    fn net_power_inverse_efficiency_discharge() {
        let v = net_power(0.0, 10.0, 0.95);
        assert!((v - (-10.0 / 0.95)).abs() < 1e-12);
        assert!((v + 10.526315789473685).abs() < 1e-9);
    }

    #[test]
    fn net_power_identity() {
        assert_eq!(net_power(0.0, 0.0, 0.95), 0.0);
    }

    proptest! {
        #[test]
        fn net_power_monotone(p in 0.0f64..50.0, m in 0.0f64..50.0, d in 1e-6f64..10.0, eta in 0.5f64..1.0) {
            prop_assert!(net_power(p + d, m, eta) > net_power(p, m, eta));
            prop_assert!(net_power(p, m + d, eta) < net_power(p, m, eta));
        }
    }
}
