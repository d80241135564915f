//! Scenario configuration: defaults, plain-text (TOML) load/save,
//! environment overrides, and validation.
//!
//! An empty config file yields the winter standard scenario. All physical
//! defaults stated by the source data sheets live here; everything is
//! overridable per key via `HUBSIM_<SECTION>__<KEY>` environment variables.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery::{self, BatteryParams};
use crate::grid::HOUR_S;
use crate::harness::{FlexKind, PolicyKind};
use crate::market::ObjectiveWeights;
use crate::solver::SolverSettings;
use crate::thermal::{BuildingParams, HeatPumpParams, TessParams};
use crate::types::HubState;

pub const ENV_PREFIX: &str = "HUBSIM_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid parameter `{param}`: {msg}")]
    Invalid { param: String, msg: String },
    #[error("cell file `{path}`: {source}")]
    CellFile {
        path: String,
        source: battery::BatteryError,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Season {
    Winter,
    Summer,
}

impl std::fmt::Display for Season {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Season::Winter => "winter",
            Season::Summer => "summer",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeConfig {
    /// Absolute start of the simulated span [s].
    pub start_s: i64,
    pub days: usize,
    pub da_horizon_hours: usize,
    pub mpc_horizon_hours: usize,
    pub da_step_s: i64,
    pub mpc_step_s: i64,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self {
            start_s: 0,
            days: 7,
            da_horizon_hours: 48,
            mpc_horizon_hours: 24,
            da_step_s: 3600,
            mpc_step_s: 900,
        }
    }
}

impl TimeConfig {
    pub fn mpc_steps_per_hour(&self) -> usize {
        (HOUR_S / self.mpc_step_s) as usize
    }

    pub fn mpc_horizon_steps(&self) -> usize {
        self.mpc_horizon_hours * self.mpc_steps_per_hour()
    }
}

/// Pack arrangement and electrical interface of one battery asset. The
/// electrochemistry comes from the cell file; these fields override the
/// pack-level entries in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatteryAssetConfig {
    /// "builtin:nmc18650" or a path to a cell parameter file.
    pub cell_file: String,
    pub n_s: u32,
    pub n_p: u32,
    pub p_max_charge_kw: f64,
    pub p_max_discharge_kw: f64,
    pub c_loss_eur_ah: f64,
    /// Converter efficiency toward the AC bus.
    pub eta_conv: f64,
    pub soc0: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub age0_days: f64,
    /// Departure SoC goal; used by the EV asset only.
    pub soc_dep_target: f64,
}

impl Default for BatteryAssetConfig {
    fn default() -> Self {
        // 20 kWh stationary pack.
        Self {
            cell_file: "builtin:nmc18650".to_string(),
            n_s: 14,
            n_p: 106,
            p_max_charge_kw: 10.0,
            p_max_discharge_kw: 10.0,
            c_loss_eur_ah: 3.6,
            eta_conv: 0.95,
            soc0: 0.5,
            soc_min: 0.05,
            soc_max: 0.95,
            age0_days: 30.0,
            soc_dep_target: 0.85,
        }
    }
}

impl BatteryAssetConfig {
    pub fn default_ev() -> Self {
        // ~60 kWh pack behind a 12.5 kW bidirectional charger.
        Self {
            n_s: 96,
            n_p: 46,
            p_max_charge_kw: 12.5,
            p_max_discharge_kw: 12.5,
            c_loss_eur_ah: 4.5,
            soc0: 0.7,
            ..Default::default()
        }
    }

    /// Resolve the cell file and apply the pack-level overrides.
    pub fn params(&self) -> Result<BatteryParams, ConfigError> {
        let mut p = if self.cell_file == "builtin:nmc18650" {
            battery::default_bess_params()
        } else {
            let text = std::fs::read_to_string(&self.cell_file)?;
            battery::load_battery_params(&self.cell_file, &text).map_err(|e| {
                ConfigError::CellFile {
                    path: self.cell_file.clone(),
                    source: e,
                }
            })?
        };
        p.n_s = self.n_s;
        p.n_p = self.n_p;
        p.p_max_charge_kw = self.p_max_charge_kw;
        p.p_max_discharge_kw = self.p_max_discharge_kw;
        p.c_loss_eur_ah = self.c_loss_eur_ah;
        Ok(p)
    }

    pub fn age0_s(&self) -> f64 {
        self.age0_days * 86400.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarketConfig {
    pub da_sell_ratio: f64,
    pub mpc_sell_ratio: f64,
    pub grid_limit_kw: f64,
    /// Bound multiple on the DA leg when the first stage co-optimizes both
    /// auctions (offers beyond the physical connection).
    pub da_overbid_factor: f64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            da_sell_ratio: 0.95,
            mpc_sell_ratio: 0.8,
            grid_limit_kw: 17.0,
            da_overbid_factor: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComplementarityConfig {
    /// Residual tolerance on P+ * P- pairs [kW^2].
    pub eps_kw2: f64,
    pub penalty_rho0: f64,
    pub penalty_growth: f64,
    pub max_retries: usize,
}

impl Default for ComplementarityConfig {
    fn default() -> Self {
        Self {
            eps_kw2: crate::types::EPS_COMP,
            penalty_rho0: 10.0,
            penalty_growth: 10.0,
            max_retries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    /// Relative perturbation of the plant battery parameters, emulating a
    /// higher-fidelity plant (0 = perfect model).
    pub param_mismatch: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            param_mismatch: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub pv_kwp: f64,
    pub load_peak_kw: f64,
    /// Relative amplitude of the seeded noise on loads and prices.
    pub noise_rel: f64,
    pub ev_p_drive_kw: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            pv_kwp: 5.0,
            load_peak_kw: 6.0,
            noise_rel: 0.03,
            ev_p_drive_kw: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialStateConfig {
    pub t_in_k: f64,
    pub t_tess_k: f64,
}

impl Default for InitialStateConfig {
    fn default() -> Self {
        Self {
            t_in_k: 294.0,
            t_tess_k: 318.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub season: Season,
    pub policy: PolicyKind,
    pub flex: FlexKind,
    pub time: TimeConfig,
    pub initial: InitialStateConfig,
    pub building: BuildingParams,
    pub heat_pump: HeatPumpParams,
    pub tess: TessParams,
    pub bess: BatteryAssetConfig,
    pub ev: BatteryAssetConfig,
    pub market: MarketConfig,
    pub weights: ObjectiveWeights,
    pub solver: SolverSettings,
    pub complementarity: ComplementarityConfig,
    pub plant: PlantConfig,
    pub synth: SynthConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            season: Season::Winter,
            policy: PolicyKind::DaIda,
            flex: FlexKind::FullFlex,
            time: TimeConfig::default(),
            initial: InitialStateConfig::default(),
            building: BuildingParams::default(),
            heat_pump: HeatPumpParams::default(),
            tess: TessParams::default(),
            bess: BatteryAssetConfig::default(),
            ev: BatteryAssetConfig::default_ev(),
            market: MarketConfig::default(),
            weights: ObjectiveWeights::default(),
            solver: SolverSettings::default(),
            complementarity: ComplementarityConfig::default(),
            plant: PlantConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

/// Nominal TESS capacity implied by the system listing [kWh].
pub const TESS_NOMINAL_KWH: f64 = 200.0;

impl ScenarioConfig {
    /// Summer variant: ventilated and shaded envelope, summer season.
    pub fn default_summer() -> Self {
        let mut cfg = Self::default();
        cfg.season = Season::Summer;
        cfg.building.s_b = 0.1;
        cfg.building.r_b = 0.99;
        cfg
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn initial_state(&self, assets: &HubAssets) -> HubState {
        HubState {
            t_in: self.initial.t_in_k,
            t_tess: self.initial.t_tess_k,
            bess: crate::battery::BatteryState::fresh(self.bess.soc0, &assets.bess, self.bess.age0_s()),
            ev: crate::battery::BatteryState::fresh(self.ev.soc0, &assets.ev, self.ev.age0_s()),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |param: &str, msg: &str| {
            Err(ConfigError::Invalid {
                param: param.to_string(),
                msg: msg.to_string(),
            })
        };
        let b = &self.building;
        for (name, v) in [
            ("building.c_b", b.c_b),
            ("building.v_b", b.v_b),
            ("building.rho_air", b.rho_air),
            ("building.c_air", b.c_air),
            ("building.w_b", b.w_b),
            ("building.s_b", b.s_b),
            ("building.r_b", b.r_b),
        ] {
            if v <= 0.0 {
                return inv(name, "must be positive");
            }
        }
        if b.d_s.len() < 4 || b.d_s.len() != b.u_s.len() || b.d_s.len() != b.a_s.len() {
            return inv("building.d_s", "surface arrays must have equal length >= 4");
        }
        if b.t_in_lo >= b.t_in_hi {
            return inv("building.t_in_lo", "comfort band must have t_in_lo < t_in_hi");
        }
        let t = &self.tess;
        if t.t_tess_lo >= t.t_tess_hi {
            return inv("tess.t_tess_lo", "band must have t_tess_lo < t_tess_hi");
        }
        let cap = t.capacity_kwh();
        if (cap - TESS_NOMINAL_KWH).abs() > 1e-6 * TESS_NOMINAL_KWH {
            return inv(
                "tess.m_tess",
                &format!("m*c*(hi-lo) = {cap} kWh must equal the nominal {TESS_NOMINAL_KWH} kWh"),
            );
        }
        if self.heat_pump.p_hp_e_max <= 0.0 {
            return inv("heat_pump.p_hp_e_max", "must be positive");
        }
        for (prefix, a) in [("bess", &self.bess), ("ev", &self.ev)] {
            let p = a.params()?;
            battery::validate_params(&p).map_err(|msg| ConfigError::Invalid {
                param: format!("{prefix}.cell"),
                msg,
            })?;
            if !(0.0..=1.0).contains(&a.soc0) || a.soc_min >= a.soc_max {
                return inv(&format!("{prefix}.soc0"), "SoC settings out of order");
            }
            if a.age0_days <= 0.0 {
                return inv(&format!("{prefix}.age0_days"), "initial age must be positive");
            }
        }
        let w = &self.weights;
        if w.w_grid < 0.0 || w.w_loss < 0.0 || w.w_soc < 0.0 || w.w_t < 0.0 {
            return inv("weights", "weights must be nonnegative");
        }
        let tm = &self.time;
        if tm.da_step_s <= 0 || tm.mpc_step_s <= 0 || tm.da_step_s % tm.mpc_step_s != 0 {
            return inv("time.da_step_s", "DA step must be a positive multiple of the MPC step");
        }
        if tm.days == 0 || tm.da_horizon_hours == 0 || tm.mpc_horizon_hours == 0 {
            return inv("time.days", "horizons and day count must be positive");
        }
        if self.market.grid_limit_kw <= 0.0 {
            return inv("market.grid_limit_kw", "must be positive");
        }
        if self.solver.feas_tol <= 0.0 || self.solver.opt_tol <= 0.0 {
            return inv("solver.feas_tol", "tolerances must be positive");
        }
        Ok(())
    }
}

/// Resolved battery parameter sets for both assets.
#[derive(Debug, Clone)]
pub struct HubAssets {
    pub bess: BatteryParams,
    pub ev: BatteryParams,
}

impl HubAssets {
    pub fn resolve(cfg: &ScenarioConfig) -> Result<Self, ConfigError> {
        Ok(Self {
            bess: cfg.bess.params()?,
            ev: cfg.ev.params()?,
        })
    }

    /// Plant-side parameters with the configured model mismatch applied.
    pub fn perturbed(&self, rel: f64) -> Self {
        Self {
            bess: self.bess.perturbed(rel),
            ev: self.ev.perturbed(rel),
        }
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

/// Parse a config from TOML text; unknown keys are rejected.
pub fn load_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.span().map(|s| line_of_offset(text, s.start)).unwrap_or(0),
        msg: e.message().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parse a config and apply `HUBSIM_SECTION__KEY` environment overrides
/// (top-level keys use `HUBSIM_KEY`).
pub fn load_config_with_overrides(
    text: &str,
    env: impl Iterator<Item = (String, String)>,
) -> Result<ScenarioConfig, ConfigError> {
    let mut value: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.span().map(|s| line_of_offset(text, s.start)).unwrap_or(0),
        msg: e.message().to_string(),
    })?;
    for (key, raw) in env {
        let Some(rest) = key.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let path: Vec<String> = rest.split("__").map(|p| p.to_ascii_lowercase()).collect();
        let parsed: toml::Value = if let Ok(i) = raw.parse::<i64>() {
            toml::Value::Integer(i)
        } else if let Ok(f) = raw.parse::<f64>() {
            toml::Value::Float(f)
        } else if let Ok(b) = raw.parse::<bool>() {
            toml::Value::Boolean(b)
        } else {
            toml::Value::String(raw.clone())
        };
        match path.len() {
            1 => {
                value.insert(path[0].clone(), parsed);
            }
            2 => {
                let section = value
                    .entry(path[0].clone())
                    .or_insert_with(|| toml::Value::Table(Default::default()));
                if let toml::Value::Table(t) = section {
                    t.insert(path[1].clone(), parsed);
                }
            }
            _ => {}
        }
    }
    let rendered = toml::to_string(&value).expect("override table serializes");
    load_config(&rendered)
}

pub fn load_config_file(path: &std::path::Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    load_config_with_overrides(&text, std::env::vars())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_winter_standard() {
        let cfg = load_config("").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        assert_eq!(cfg.season, Season::Winter);
        assert_eq!(cfg.building.s_b, 0.5);
        assert_eq!(cfg.building.r_b, 0.35);
    }

    #[test]
    fn summer_envelope_parameters() {
        let cfg = load_config("[building]\ns_b = 0.1\nr_b = 0.99\n").unwrap();
        assert_eq!(cfg.building.s_b, 0.1);
        assert_eq!(cfg.building.r_b, 0.99);
        assert_eq!(cfg, {
            let mut c = ScenarioConfig::default_summer();
            c.season = Season::Winter; // the section override does not flip the season label
            c
        });
    }

    #[test]
    fn negative_capacity_rejected() {
        let err = load_config("[building]\nc_b = -1.0\n").unwrap_err();
        match err {
            ConfigError::Invalid { param, .. } => assert_eq!(param, "building.c_b"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let err = load_config("[building]\nnot_a_key = 1.0\n").unwrap_err();
        match err {
            ConfigError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let cfg = ScenarioConfig::default();
        let text = cfg.to_toml_string();
        let back = load_config(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(text, back.to_toml_string());
    }

    #[test]
    fn env_override_applies() {
        let env = vec![
            ("HUBSIM_WEIGHTS__W_T".to_string(), "5.5".to_string()),
            ("HUBSIM_SEED".to_string(), "7".to_string()),
        ];
        let cfg = load_config_with_overrides("", env.into_iter()).unwrap();
        assert_eq!(cfg.weights.w_t, 5.5);
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn tess_capacity_invariant_enforced() {
        let err = load_config("[tess]\nm_tess = 100.0\n").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { .. }));
    }
}
