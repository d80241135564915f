//! Equivalent-circuit battery performance model coupled with reduced-order
//! SEI-growth and active-material-loss aging, per pack (BESS and EV).
//!
//! Sign convention: positive cell current discharges the cell and positive
//! pack power flows toward the bus. Capacity and loss are per cell in Ah;
//! `n_s * n_p` scales cell quantities to the pack.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Faraday constant [C/mol].
pub const FARADAY: f64 = 96485.33212;
/// Universal gas constant [J/(mol K)].
pub const GAS_R: f64 = 8.314462618;

#[derive(Debug, Error, PartialEq)]
pub enum BatteryError {
    #[error("state of charge {0} outside [0, 1]")]
    SocOutOfRange(f64),
    #[error("requested power {p_kw} kW exceeds pack capability (discriminant {disc})")]
    InfeasiblePower { p_kw: f64, disc: f64 },
    #[error("OCV curve needs at least two points")]
    CurveTooShort,
    #[error("OCV curve abscissae must be strictly increasing at row {0}")]
    CurveNotSorted(usize),
    #[error("OCV curve values must be monotone at row {0}")]
    CurveNotMonotone(usize),
    #[error("{path}:{line}: {msg}")]
    ParamFile {
        path: String,
        line: usize,
        msg: String,
    },
}

/// Monotone tabulated half-cell potential vs stoichiometry.
///
/// Interpolated with a monotone piecewise-cubic Hermite (Fritsch–Butland
/// slopes), so the interpolant is C1 and preserves the table's monotonicity.
/// Outside the table it continues linearly with the end slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct OcvCurve {
    x: Vec<f64>,
    y: Vec<f64>,
    slope: Vec<f64>,
}

impl OcvCurve {
    pub fn new(points: &[(f64, f64)]) -> Result<Self, BatteryError> {
        if points.len() < 2 {
            return Err(BatteryError::CurveTooShort);
        }
        let n = points.len();
        let x: Vec<f64> = points.iter().map(|p| p.0).collect();
        let y: Vec<f64> = points.iter().map(|p| p.1).collect();
        for i in 1..n {
            if x[i] <= x[i - 1] {
                return Err(BatteryError::CurveNotSorted(i));
            }
        }
        // Monotone in one direction over the whole table.
        let dir = (y[n - 1] - y[0]).signum();
        for i in 1..n {
            if dir * (y[i] - y[i - 1]) < 0.0 {
                return Err(BatteryError::CurveNotMonotone(i));
            }
        }

        let h: Vec<f64> = (0..n - 1).map(|i| x[i + 1] - x[i]).collect();
        let d: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut slope = vec![0.0; n];
        slope[0] = d[0];
        slope[n - 1] = d[n - 2];
        for i in 1..n - 1 {
            if d[i - 1] * d[i] <= 0.0 {
                slope[i] = 0.0;
            } else {
                // Fritsch–Butland weighted harmonic mean keeps monotonicity.
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                slope[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i]);
            }
        }
        Ok(Self { x, y, slope })
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.x.iter().copied().zip(self.y.iter().copied())
    }

    /// Value and derivative at `x`.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let (v, d, _) = self.eval2(x);
        (v, d)
    }

    /// Value, first, and second derivative at `x`.
    pub fn eval2(&self, x: f64) -> (f64, f64, f64) {
        let n = self.x.len();
        if x <= self.x[0] {
            return (self.y[0] + self.slope[0] * (x - self.x[0]), self.slope[0], 0.0);
        }
        if x >= self.x[n - 1] {
            return (
                self.y[n - 1] + self.slope[n - 1] * (x - self.x[n - 1]),
                self.slope[n - 1],
                0.0,
            );
        }
        let i = match self.x.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) if i + 1 < n => i,
            Ok(i) => i - 1,
            Err(i) => i - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let t = (x - self.x[i]) / h;
        let (y0, y1, m0, m1) = (self.y[i], self.y[i + 1], self.slope[i], self.slope[i + 1]);
        let t2 = t * t;
        let t3 = t2 * t;
        let val = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * h * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * h * m1;
        let deriv = (6.0 * t2 - 6.0 * t) * (y0 - y1) / h
            + (3.0 * t2 - 4.0 * t + 1.0) * m0
            + (3.0 * t2 - 2.0 * t) * m1;
        let deriv2 = (12.0 * t - 6.0) * (y0 - y1) / (h * h)
            + (6.0 * t - 4.0) * m0 / h
            + (6.0 * t - 2.0) * m1 / h;
        (val, deriv, deriv2)
    }

    pub fn value(&self, x: f64) -> f64 {
        self.eval(x).0
    }
}

impl TryFrom<Vec<[f64; 2]>> for OcvCurve {
    type Error = BatteryError;
    fn try_from(rows: Vec<[f64; 2]>) -> Result<Self, Self::Error> {
        let pts: Vec<(f64, f64)> = rows.into_iter().map(|r| (r[0], r[1])).collect();
        OcvCurve::new(&pts)
    }
}

impl From<OcvCurve> for Vec<[f64; 2]> {
    fn from(c: OcvCurve) -> Self {
        c.points().map(|(x, y)| [x, y]).collect()
    }
}

/// Cell and pack parameters for one battery asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryParams {
    /// Series cells.
    pub n_s: u32,
    /// Parallel strings.
    pub n_p: u32,
    /// Beginning-of-life capacity per cell [Ah].
    pub q0_ah: f64,
    /// Coulombic efficiency.
    pub eta_c: f64,
    /// Series resistance [Ohm].
    pub r0_ohm: f64,
    /// RC branch resistance [Ohm].
    pub r1_ohm: f64,
    /// RC branch capacitance [F].
    pub c1_farad: f64,
    /// Cathode half-cell potential vs anode stoichiometry [V].
    pub ocv_p: OcvCurve,
    /// Anode half-cell potential vs anode stoichiometry [V].
    pub ocv_n: OcvCurve,
    /// Anode stoichiometry at 0 % and 100 % SoC.
    pub z_0pct: f64,
    pub z_100pct: f64,
    /// SEI rate constant [A sqrt(s)].
    pub k_sei: f64,
    /// SEI activation energy [J/mol].
    pub e_sei_j_mol: f64,
    /// Electrons in the side reaction.
    pub n_sei: f64,
    /// Diffusion-limitation weight on beta.
    pub lambda_b: f64,
    /// Side-reaction equilibrium potential [V].
    pub ocv_side_v: f64,
    /// Active-material loss rate constant.
    pub k_am: f64,
    /// AM activation energy [J/mol].
    pub e_am_j_mol: f64,
    /// Specific interfacial area [1/m].
    pub a_s_per_m: f64,
    /// Electrode area [m^2].
    pub a_cell_m2: f64,
    /// Anode thickness [m].
    pub l_n_m: f64,
    /// Exchange current density [A/m^2].
    pub i0_a_m2: f64,
    /// Constant cell temperature [K].
    pub t_cell_k: f64,
    /// Capacity-loss cost [EUR/Ah].
    pub c_loss_eur_ah: f64,
    /// Pack-side power limits [kW].
    pub p_max_charge_kw: f64,
    pub p_max_discharge_kw: f64,
}

impl BatteryParams {
    pub fn cells(&self) -> f64 {
        self.n_s as f64 * self.n_p as f64
    }

    /// Anode stoichiometry at the given SoC (Eq.-style affine map).
    pub fn stoichiometry(&self, soc: f64) -> f64 {
        soc * (self.z_100pct - self.z_0pct) + self.z_0pct
    }

    /// Arrhenius prefactor of the SEI reaction [A sqrt(s)].
    pub fn sei_rate(&self) -> f64 {
        self.k_sei * (-self.e_sei_j_mol / (GAS_R * self.t_cell_k)).exp()
    }

    /// Arrhenius prefactor of the AM reaction [1/(A s)-ish, per model].
    pub fn am_rate(&self) -> f64 {
        self.k_am * (-self.e_am_j_mol / (GAS_R * self.t_cell_k)).exp()
    }

    /// Denominator current of the overpotential asinh [A].
    pub fn exchange_current(&self) -> f64 {
        self.n_sei * self.a_s_per_m * self.a_cell_m2 * self.l_n_m * self.i0_a_m2
    }

    /// Nominal pack energy [kWh], using the mid-SoC open-circuit voltage.
    pub fn pack_energy_kwh(&self) -> f64 {
        self.cells() * self.q0_ah * ocv(0.5, self).unwrap() / 1000.0
    }

    /// RC time constant [s].
    pub fn tau_s(&self) -> f64 {
        self.r1_ohm * self.c1_farad
    }

    /// Relative perturbation emulating a plant/controller model mismatch.
    pub fn perturbed(&self, rel: f64) -> BatteryParams {
        let mut p = self.clone();
        p.r0_ohm *= 1.0 + rel;
        p.r1_ohm *= 1.0 + rel;
        p.q0_ah *= 1.0 - rel;
        p.k_sei *= 1.0 + rel;
        p.k_am *= 1.0 + rel;
        p
    }
}

/// Per-asset electrical state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryState {
    pub soc: f64,
    /// RC branch current [A].
    pub i_r1_a: f64,
    /// Current capacity per cell [Ah].
    pub q_ah: f64,
    /// Cell age since beginning of life [s].
    pub age_s: f64,
    /// Cumulative full equivalent cycles.
    pub fec: f64,
    /// Cumulative capacity loss per cell [Ah].
    pub q_loss_ah: f64,
}

impl BatteryState {
    pub fn fresh(soc: f64, p: &BatteryParams, age0_s: f64) -> Self {
        Self {
            soc,
            i_r1_a: 0.0,
            q_ah: p.q0_ah,
            age_s: age0_s,
            fec: 0.0,
            q_loss_ah: 0.0,
        }
    }
}

/// Full-cell open-circuit voltage at the given SoC [V].
pub fn ocv(soc: f64, p: &BatteryParams) -> Result<f64, BatteryError> {
    if !(0.0..=1.0).contains(&soc) {
        return Err(BatteryError::SocOutOfRange(soc));
    }
    let z = p.stoichiometry(soc);
    Ok(p.ocv_p.value(z) - p.ocv_n.value(z))
}

/// OCV and its derivative w.r.t. SoC, total over the real line (used by the
/// transcription, where iterates may transiently leave [0, 1]).
pub fn ocv_with_deriv(soc: f64, p: &BatteryParams) -> (f64, f64) {
    let dz = p.z_100pct - p.z_0pct;
    let z = p.stoichiometry(soc);
    let (vp, dp) = p.ocv_p.eval(z);
    let (vn, dn) = p.ocv_n.eval(z);
    (vp - vn, (dp - dn) * dz)
}

/// Outcome of one ECM performance step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcmStep {
    pub soc: f64,
    pub i_r1_a: f64,
    /// Terminal voltage at the step's operating point [V].
    pub v_t: f64,
    /// Pack power toward the bus [kW].
    pub p_pack_kw: f64,
}

/// Advance SoC and the RC branch one step; voltage and power are evaluated
/// at the beginning-of-step state.
pub fn ecm_step(
    s: &BatteryState,
    i_cell_a: f64,
    dt_s: f64,
    p: &BatteryParams,
) -> Result<EcmStep, BatteryError> {
    debug_assert!(dt_s > 0.0);
    let v_ocv = ocv_with_deriv(s.soc, p).0;
    let v_t = v_ocv - s.i_r1_a * p.r1_ohm - i_cell_a * p.r0_ohm;
    let p_pack_kw = p.cells() * v_t * i_cell_a / 1000.0;
    let soc = s.soc - dt_s / (s.q_ah * 3600.0) * p.eta_c * i_cell_a;
    if !(0.0..=1.0).contains(&soc) {
        return Err(BatteryError::SocOutOfRange(soc));
    }
    let a = (-dt_s / p.tau_s()).exp();
    let i_r1_a = a * s.i_r1_a + (1.0 - a) * i_cell_a;
    Ok(EcmStep {
        soc,
        i_r1_a,
        v_t,
        p_pack_kw,
    })
}

/// Side-reaction currents at one operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgingStep {
    pub i_sei_a: f64,
    pub i_am_a: f64,
    pub i_loss_a: f64,
    pub q_ah: f64,
    pub q_loss_ah: f64,
    pub age_s: f64,
}

/// Intercalation overpotential at the given cell current [V].
pub fn overpotential(i_cell_a: f64, p: &BatteryParams) -> f64 {
    let th = 2.0 * GAS_R * p.t_cell_k / FARADAY;
    th * (i_cell_a / p.exchange_current()).asinh()
}

/// SEI and active-material loss currents from the beginning-of-step state.
pub fn aging_currents(soc: f64, i_cell_a: f64, age_s: f64, p: &BatteryParams) -> (f64, f64) {
    debug_assert!(age_s > 0.0, "cell age must be positive (see age0 config)");
    let z = p.stoichiometry(soc);
    let ocv_n = p.ocv_n.value(z);
    let eta_k = overpotential(i_cell_a, p);
    let beta = (p.n_sei * FARADAY / (GAS_R * p.t_cell_k) * (eta_k + ocv_n - p.ocv_side_v)).exp();
    let i_sei = p.sei_rate() / (p.n_sei * (1.0 + p.lambda_b * beta) * age_s.sqrt());
    let i_am = p.am_rate() * soc * i_cell_a.abs() * p.q0_ah;
    (i_sei, i_am)
}

/// Advance capacity, loss, and age one step.
pub fn aging_step(s: &BatteryState, i_cell_a: f64, dt_s: f64, p: &BatteryParams) -> AgingStep {
    let (i_sei, i_am) = aging_currents(s.soc, i_cell_a, s.age_s, p);
    let i_loss = i_sei + i_am;
    let dq = dt_s / 3600.0 * i_loss;
    AgingStep {
        i_sei_a: i_sei,
        i_am_a: i_am,
        i_loss_a: i_loss,
        q_ah: s.q_ah - dq,
        q_loss_ah: s.q_loss_ah + dq,
        age_s: s.age_s + dt_s,
    }
}

/// Combined performance + aging step with all right-hand sides evaluated at
/// the beginning-of-step state; FEC advances by |dSoC|/2.
pub fn step_full(
    s: &BatteryState,
    i_cell_a: f64,
    dt_s: f64,
    p: &BatteryParams,
) -> Result<(BatteryState, EcmStep, AgingStep), BatteryError> {
    let aging = aging_step(s, i_cell_a, dt_s, p);
    let ecm = ecm_step(s, i_cell_a, dt_s, p)?;
    let next = BatteryState {
        soc: ecm.soc,
        i_r1_a: ecm.i_r1_a,
        q_ah: aging.q_ah,
        age_s: aging.age_s,
        fec: s.fec + fec_increment(s.soc, ecm.soc),
        q_loss_ah: aging.q_loss_ah,
    };
    Ok((next, ecm, aging))
}

/// Full-equivalent-cycle increment for one SoC transition.
pub fn fec_increment(soc_prev: f64, soc_next: f64) -> f64 {
    (soc_next - soc_prev).abs() / 2.0
}

/// Cell current delivering the requested pack power, with the RC current
/// frozen over the step.
///
/// Solves `n_s n_p (OCV - R1 i_R1 - R0 i) i = 1000 P` and picks the root
/// with the smaller magnitude.
pub fn power_to_current(
    p_pack_kw: f64,
    s: &BatteryState,
    p: &BatteryParams,
) -> Result<f64, BatteryError> {
    let v_eff = ocv_with_deriv(s.soc, p).0 - s.i_r1_a * p.r1_ohm;
    let p_cell_w = p_pack_kw * 1000.0 / p.cells();
    if p.r0_ohm == 0.0 {
        return Ok(p_cell_w / v_eff);
    }
    let disc = v_eff * v_eff - 4.0 * p.r0_ohm * p_cell_w;
    if disc < 0.0 {
        return Err(BatteryError::InfeasiblePower {
            p_kw: p_pack_kw,
            disc,
        });
    }
    Ok((v_eff - disc.sqrt()) / (2.0 * p.r0_ohm))
}

/// Load battery parameters from the plain-text format: `key = value` lines
/// for scalars plus `[ocv_p]` / `[ocv_n]` tables of `stoichiometry voltage`
/// rows.
pub fn load_battery_params(path_label: &str, text: &str) -> Result<BatteryParams, BatteryError> {
    let mut kv: std::collections::BTreeMap<String, (f64, usize)> = Default::default();
    let mut tables: [Vec<(f64, f64)>; 2] = [Vec::new(), Vec::new()];
    let mut section: Option<usize> = None;

    let err = |line: usize, msg: String| BatteryError::ParamFile {
        path: path_label.to_string(),
        line,
        msg,
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = match name.trim() {
                "ocv_p" => Some(0),
                "ocv_n" => Some(1),
                other => return Err(err(line_no, format!("unknown section [{other}]"))),
            };
            continue;
        }
        match section {
            Some(t) => {
                let mut it = line.split_whitespace();
                let x = it.next().and_then(|v| v.parse::<f64>().ok());
                let y = it.next().and_then(|v| v.parse::<f64>().ok());
                match (x, y, it.next()) {
                    (Some(x), Some(y), None) => tables[t].push((x, y)),
                    _ => return Err(err(line_no, format!("expected `stoich volts`, got `{line}`"))),
                }
            }
            None => {
                let Some((k, v)) = line.split_once('=') else {
                    return Err(err(line_no, format!("expected `key = value`, got `{line}`")));
                };
                let key = k.trim().to_string();
                let val: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| err(line_no, format!("bad number `{}` for `{key}`", v.trim())))?;
                if kv.insert(key.clone(), (val, line_no)).is_some() {
                    return Err(err(line_no, format!("duplicate key `{key}`")));
                }
            }
        }
    }

    let mut missing = Vec::new();
    let mut take = |name: &str| -> f64 {
        match kv.remove(name) {
            Some((v, _)) => v,
            None => {
                missing.push(name.to_string());
                f64::NAN
            }
        }
    };

    let params = BatteryParams {
        n_s: take("n_s") as u32,
        n_p: take("n_p") as u32,
        q0_ah: take("q0_ah"),
        eta_c: take("eta_c"),
        r0_ohm: take("r0_ohm"),
        r1_ohm: take("r1_ohm"),
        c1_farad: take("c1_farad"),
        ocv_p: OcvCurve::new(&tables[0])?,
        ocv_n: OcvCurve::new(&tables[1])?,
        z_0pct: take("z_0pct"),
        z_100pct: take("z_100pct"),
        k_sei: take("k_sei"),
        e_sei_j_mol: take("e_sei_j_mol"),
        n_sei: take("n_sei"),
        lambda_b: take("lambda_b"),
        ocv_side_v: take("ocv_side_v"),
        k_am: take("k_am"),
        e_am_j_mol: take("e_am_j_mol"),
        a_s_per_m: take("a_s_per_m"),
        a_cell_m2: take("a_cell_m2"),
        l_n_m: take("l_n_m"),
        i0_a_m2: take("i0_a_m2"),
        t_cell_k: take("t_cell_k"),
        c_loss_eur_ah: take("c_loss_eur_ah"),
        p_max_charge_kw: take("p_max_charge_kw"),
        p_max_discharge_kw: take("p_max_discharge_kw"),
    };
    if !missing.is_empty() {
        return Err(err(0, format!("missing keys: {}", missing.join(", "))));
    }
    if let Some((key, (_, line))) = kv.into_iter().next() {
        return Err(err(line, format!("unknown key `{key}`")));
    }
    validate_params(&params).map_err(|msg| err(0, msg))?;
    Ok(params)
}

pub fn validate_params(p: &BatteryParams) -> Result<(), String> {
    if p.q0_ah <= 0.0 {
        return Err("q0_ah must be positive".into());
    }
    if !(p.eta_c > 0.0 && p.eta_c <= 1.0) {
        return Err("eta_c must be in (0, 1]".into());
    }
    for (name, v) in [
        ("k_sei", p.k_sei),
        ("k_am", p.k_am),
        ("e_sei_j_mol", p.e_sei_j_mol),
        ("e_am_j_mol", p.e_am_j_mol),
    ] {
        if v < 0.0 {
            return Err(format!("{name} must be nonnegative"));
        }
    }
    if p.n_s == 0 || p.n_p == 0 {
        return Err("n_s and n_p must be positive".into());
    }
    Ok(())
}

/// Serialize parameters back to the plain-text format.
pub fn params_to_text(p: &BatteryParams) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: f64| {
        let _ = writeln!(out, "{k} = {v}");
    };
    kv("n_s", p.n_s as f64);
    kv("n_p", p.n_p as f64);
    kv("q0_ah", p.q0_ah);
    kv("eta_c", p.eta_c);
    kv("r0_ohm", p.r0_ohm);
    kv("r1_ohm", p.r1_ohm);
    kv("c1_farad", p.c1_farad);
    kv("z_0pct", p.z_0pct);
    kv("z_100pct", p.z_100pct);
    kv("k_sei", p.k_sei);
    kv("e_sei_j_mol", p.e_sei_j_mol);
    kv("n_sei", p.n_sei);
    kv("lambda_b", p.lambda_b);
    kv("ocv_side_v", p.ocv_side_v);
    kv("k_am", p.k_am);
    kv("e_am_j_mol", p.e_am_j_mol);
    kv("a_s_per_m", p.a_s_per_m);
    kv("a_cell_m2", p.a_cell_m2);
    kv("l_n_m", p.l_n_m);
    kv("i0_a_m2", p.i0_a_m2);
    kv("t_cell_k", p.t_cell_k);
    kv("c_loss_eur_ah", p.c_loss_eur_ah);
    kv("p_max_charge_kw", p.p_max_charge_kw);
    kv("p_max_discharge_kw", p.p_max_discharge_kw);
    for (name, curve) in [("ocv_p", &p.ocv_p), ("ocv_n", &p.ocv_n)] {
        let _ = writeln!(out, "\n[{name}]");
        for (x, y) in curve.points() {
            let _ = writeln!(out, "{x} {y}");
        }
    }
    out
}

/// Illustrative NMC 18650-class cell, 20 kWh pack split (14s112p).
/// Electrochemical constants are plausible defaults, not fitted data.
pub const DEFAULT_CELL_TEXT: &str = include_str!("params/nmc18650.batt");

pub fn default_bess_params() -> BatteryParams {
    load_battery_params("builtin:nmc18650", DEFAULT_CELL_TEXT).expect("builtin cell file parses")
}

/// Same cell arranged as a 96s46p EV pack behind a 12.5 kW charger.
pub fn default_ev_params() -> BatteryParams {
    let mut p = default_bess_params();
    p.n_s = 96;
    p.n_p = 46;
    p.p_max_charge_kw = 12.5;
    p.p_max_discharge_kw = 12.5;
    p.c_loss_eur_ah = 4.5;
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> BatteryParams {
        default_bess_params()
    }

    fn rest_state(soc: f64) -> BatteryState {
        BatteryState::fresh(soc, &params(), 30.0 * 86400.0)
    }

    #[test]
    fn default_pack_sizes() {
        let b = params();
        assert!((b.pack_energy_kwh() - 20.0).abs() < 1.0, "BESS ~20 kWh");
        let ev = default_ev_params();
        assert!((ev.pack_energy_kwh() - 60.0).abs() < 2.0, "EV ~60 kWh");
    }

    #[test]
    fn ocv_exact_at_table_nodes() {
        let p = params();
        // Pick a z node, map it back to SoC, and expect the exact difference.
        let z_node = 0.30;
        let soc = (z_node - p.z_0pct) / (p.z_100pct - p.z_0pct);
        let expected = p.ocv_p.value(z_node) - p.ocv_n.value(z_node);
        assert_eq!(ocv(soc, &p).unwrap(), expected);
    }

    #[test]
    fn ocv_between_nodes_brackets_and_monotone() {
        let p = params();
        for i in 0..1000 {
            let a = i as f64 / 1000.0;
            let b = (i + 1) as f64 / 1000.0;
            assert!(ocv(a, &p).unwrap() <= ocv(b, &p).unwrap() + 1e-12);
        }
        assert!(ocv(0.8, &p).unwrap() >= ocv(0.2, &p).unwrap());
    }

    #[test]
    fn ocv_rejects_out_of_range() {
        assert!(ocv(1.2, &params()).is_err());
    }

    #[test]
    fn curve_interpolant_is_c1() {
        // Central differences of the curve match its reported derivative.
        let p = params();
        for i in 0..200 {
            let z = 0.01 + 0.98 * i as f64 / 199.0;
            let h = 1e-6;
            let fd = (p.ocv_n.value(z + h) - p.ocv_n.value(z - h)) / (2.0 * h);
            let (_, d) = p.ocv_n.eval(z);
            assert!((fd - d).abs() < 1e-6, "z={z} fd={fd} d={d}");
        }
    }

    #[test]
    fn ecm_rest_state_unchanged() {
        let p = params();
        let s = rest_state(0.5);
        let e = ecm_step(&s, 0.0, 900.0, &p).unwrap();
        assert_eq!(e.soc, s.soc);
        assert_eq!(e.i_r1_a, 0.0);
        assert!((e.v_t - ocv(0.5, &p).unwrap()).abs() < 1e-12);
        assert_eq!(e.p_pack_kw, 0.0);
    }

    #[test]
    fn ecm_rc_first_order_asymptote() {
        let p = params();
        let mut s = rest_state(0.5);
        s.q_ah = 1e9; // keep SoC in range over the long hold
        let i = 1.0;
        let steps = (10.0 * p.tau_s() / 900.0).ceil() as usize;
        for _ in 0..steps {
            let e = ecm_step(&s, i, 900.0, &p).unwrap();
            s.soc = e.soc;
            s.i_r1_a = e.i_r1_a;
        }
        assert!((s.i_r1_a - i).abs() / i < 1e-4);
    }

    #[test]
    fn ecm_soc_hand_step() {
        let p = BatteryParams {
            eta_c: 1.0,
            q0_ah: 3.0,
            ..params()
        };
        let mut s = rest_state(0.5);
        s.q_ah = 3.0;
        let e = ecm_step(&s, 1.0, 900.0, &p).unwrap();
        assert!((e.soc - (0.5 - 1.0 / 12.0)).abs() < 1e-15);
    }

    #[test]
    fn ecm_rc_exact_discretization_matches_ode() {
        // i_R1(t) = i + (i_R1(0) - i) exp(-t/tau) for constant i.
        let p = params();
        let mut s = rest_state(0.5);
        s.i_r1_a = 0.3;
        s.q_ah = 1e9;
        let i = -0.8;
        let mut t = 0.0;
        for _ in 0..20 {
            let e = ecm_step(&s, i, 900.0, &p).unwrap();
            t += 900.0;
            let exact = i + (0.3 - i) * (-t / p.tau_s()).exp();
            assert!((e.i_r1_a - exact).abs() < 1e-13);
            s.soc = e.soc;
            s.i_r1_a = e.i_r1_a;
        }
    }

    #[test]
    fn aging_calendar_persists_at_rest() {
        let p = params();
        let (i_sei, i_am) = aging_currents(0.5, 0.0, 30.0 * 86400.0, &p);
        assert!(i_sei > 0.0);
        assert_eq!(i_am, 0.0);
    }

    #[test]
    fn aging_am_vanishes_at_zero_soc() {
        let p = params();
        let (_, i_am) = aging_currents(0.0, 2.0, 30.0 * 86400.0, &p);
        assert_eq!(i_am, 0.0);
    }

    #[test]
    fn aging_sqrt_time_law() {
        let p = params();
        let age = 30.0 * 86400.0;
        let (a, _) = aging_currents(0.6, 1.0, age, &p);
        let (b, _) = aging_currents(0.6, 1.0, 4.0 * age, &p);
        assert!((b - a / 2.0).abs() / a < 1e-12);
    }

    #[test]
    fn aging_sei_depends_on_current_sign() {
        let p = params();
        let (chg, _) = aging_currents(0.6, -2.0, 30.0 * 86400.0, &p);
        let (dis, _) = aging_currents(0.6, 2.0, 30.0 * 86400.0, &p);
        assert!(chg > dis, "SEI grows faster while charging");
    }

    #[test]
    fn fec_examples() {
        assert!((fec_increment(0.2, 0.8) + fec_increment(0.8, 0.2) - 0.6).abs() < 1e-15);
        assert_eq!(fec_increment(0.4, 0.4), 0.0);
        assert!((fec_increment(0.0, 1.0) + fec_increment(1.0, 0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn power_to_current_zero_and_resistance_free() {
        let p = params();
        let s = rest_state(0.5);
        assert_eq!(power_to_current(0.0, &s, &p).unwrap(), 0.0);

        let free = BatteryParams {
            r0_ohm: 0.0,
            r1_ohm: 0.0,
            ..params()
        };
        let i = power_to_current(2.0, &s, &free).unwrap();
        let expected = 2000.0 / (free.cells() * ocv(0.5, &free).unwrap());
        assert!((i - expected).abs() < 1e-12);
    }

    #[test]
    fn power_to_current_near_capability_matches_bisection() {
        let p = params();
        let s = rest_state(0.5);
        let v_eff = ocv(0.5, &p).unwrap();
        let p_cap_kw = v_eff * v_eff / (4.0 * p.r0_ohm) * p.cells() / 1000.0;
        let target = 0.999 * p_cap_kw;
        let i = power_to_current(target, &s, &p).unwrap();

        // Bisection on the same scalar equation, smaller root branch.
        let f = |i: f64| p.cells() * (v_eff - p.r0_ohm * i) * i / 1000.0 - target;
        let (mut lo, mut hi) = (0.0, v_eff / (2.0 * p.r0_ohm));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((i - lo).abs() < 1e-6, "quadratic {i} vs bisection {lo}");

        assert!(matches!(
            power_to_current(1.01 * p_cap_kw, &s, &p),
            Err(BatteryError::InfeasiblePower { .. })
        ));
    }

    #[test]
    fn param_file_round_trip_and_errors() {
        let p = params();
        let text = params_to_text(&p);
        let back = load_battery_params("roundtrip", &text).unwrap();
        assert_eq!(p, back);

        let bad = "nonsense line\n";
        assert!(matches!(
            load_battery_params("bad", bad),
            Err(BatteryError::ParamFile { line: 1, .. })
        ));
    }

    proptest! {
        // Q nonincreasing, Q_loss nondecreasing, Q + Q_loss constant, and
        // coulomb counting with eta_c = 1 against the per-step capacity.
        #[test]
        fn trajectory_invariants(currents in proptest::collection::vec(-1.5f64..1.5, 1..60)) {
            let p = BatteryParams { eta_c: 1.0, ..params() };
            let mut s = rest_state(0.5);
            let q_total0 = s.q_ah + s.q_loss_ah;
            let mut integral = 0.0;
            for i in &currents {
                integral += i / (3600.0 * s.q_ah) * 900.0;
                let Ok((next, _, aging)) = step_full(&s, *i, 900.0, &p) else {
                    return Ok(()); // SoC hit a wall; nothing more to check
                };
                prop_assert!(next.q_ah <= s.q_ah);
                prop_assert!(next.q_loss_ah >= s.q_loss_ah);
                prop_assert!((next.q_ah + next.q_loss_ah - q_total0).abs() < 1e-12);
                prop_assert!(aging.i_sei_a > 0.0);
                prop_assert!(aging.i_am_a >= 0.0);
                s = next;
            }
            prop_assert!((s.soc - (0.5 - integral)).abs() < 1e-9);
        }

        #[test]
        fn am_commutes_with_current_sign(i in 0.0f64..3.0, soc in 0.0f64..1.0) {
            let p = params();
            let (_, am_pos) = aging_currents(soc, i, 1e6, &p);
            let (_, am_neg) = aging_currents(soc, -i, 1e6, &p);
            prop_assert!((am_pos - am_neg).abs() < 1e-18);
        }
    }
}
