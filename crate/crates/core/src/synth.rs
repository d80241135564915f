//! Seeded synthetic "standard week" inputs for both seasons.
//!
//! The shapes preserve the phenomena the policies exploit: day-ahead and
//! the continuous-time index share one fundamental daily shape, the
//! intra-day auction has distinct dynamics (a daily descending trend in
//! winter), and summer day-ahead prices dip negative around noon.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::config::{ScenarioConfig, Season};
use crate::grid::{TimeGrid, HOUR_S, MPC_STEP_S};
use crate::timeseries::RawTimeseries;

fn gauss(x: f64, mu: f64, sigma: f64) -> f64 {
    let d = (x - mu) / sigma;
    (-0.5 * d * d).exp()
}

/// Hourly day-ahead price shape [EUR/MWh] at hour-of-day `h` on `day`.
fn da_price(season: Season, day: usize, h: f64) -> f64 {
    let day_offset = 14.0 * ((day as f64 * 0.9).sin());
    match season {
        Season::Winter => {
            118.0 + day_offset + 46.0 * gauss(h, 8.2, 1.6) + 58.0 * gauss(h, 18.8, 2.0)
                - 24.0 * gauss(h, 13.5, 2.6)
        }
        Season::Summer => {
            64.0 + day_offset + 24.0 * gauss(h, 7.8, 1.4) + 34.0 * gauss(h, 20.2, 1.9)
                - 96.0 * gauss(h, 13.2, 2.4)
        }
    }
}

/// Generate the raw series for `cfg.time.days` plus the 48 h lookahead.
pub fn generate(cfg: &ScenarioConfig) -> RawTimeseries {
    let season = cfg.season;
    let days = cfg.time.days + 2;
    let steps = days * 24 * (HOUR_S / MPC_STEP_S) as usize;
    let grid = TimeGrid::new(cfg.time.start_s, MPC_STEP_S, steps);
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let noise = cfg.synth.noise_rel;

    // Hourly DA prices with per-hour noise, held onto the fine grid.
    let hours = days * 24;
    let mut da_hourly = Vec::with_capacity(hours);
    for j in 0..hours {
        let day = j / 24;
        let h = (j % 24) as f64 + 0.5;
        let base = da_price(season, day, h);
        da_hourly.push(base + rng.random_range(-1.0..1.0) * noise * 100.0);
    }

    let mut da = Vec::with_capacity(steps);
    let mut ida = Vec::with_capacity(steps);
    let mut id1 = Vec::with_capacity(steps);
    let mut load = Vec::with_capacity(steps);
    let mut pv = Vec::with_capacity(steps);
    let mut t_amb = Vec::with_capacity(steps);
    let mut g_ir = Vec::with_capacity(steps);
    let mut gamma = Vec::with_capacity(steps);
    let mut occ = Vec::with_capacity(steps);
    let mut p_drive = Vec::with_capacity(steps);

    let (sunrise, sunset, g_peak, t_mean, t_swing) = match season {
        Season::Winter => (8.3, 16.9, 0.34, 276.6, 3.4),
        Season::Summer => (6.0, 21.4, 0.82, 291.2, 5.2),
    };

    for k in 0..steps {
        let t_h = k as f64 * 0.25;
        let day = (t_h / 24.0) as usize;
        let h = t_h % 24.0;
        let weekday = day % 7; // day 0 is a Monday
        let j = k / 4;

        let da_v = da_hourly[j];
        da.push(da_v);

        // CT index: same fundamental as DA plus faster dynamics.
        let wiggle = 16.0 * (2.0 * std::f64::consts::PI * t_h / 3.1).sin()
            + 7.0 * (2.0 * std::f64::consts::PI * t_h / 1.3).cos();
        id1.push(da_v + wiggle + rng.random_range(-1.0..1.0) * noise * 120.0);

        // Intra-day auction: its own dynamics. Winter descends through the
        // day; summer stays positive.
        let ida_v = match season {
            Season::Winter => {
                let day_mean = 118.0 + 12.0 * ((day as f64 * 1.3).cos());
                day_mean + 52.0 * (1.0 - h / 12.0)
                    + 26.0 * (2.0 * std::f64::consts::PI * t_h / 1.7).sin()
                    + rng.random_range(-1.0..1.0) * noise * 140.0
            }
            Season::Summer => {
                let v = 58.0 + 14.0 * ((day as f64 * 1.3).cos()) + 18.0 * gauss(h, 19.8, 2.2)
                    - 28.0 * gauss(h, 13.4, 2.6)
                    + 20.0 * (2.0 * std::f64::consts::PI * t_h / 1.9).sin()
                    + rng.random_range(-1.0..1.0) * noise * 90.0;
                v.max(1.0)
            }
        };
        ida.push(ida_v);

        // Electric base load.
        let weekend = weekday >= 5;
        let day_bump = if weekend { 0.5 * gauss(h, 13.0, 3.5) } else { 0.0 };
        let l = 0.35
            + 1.05 * gauss(h, 7.8, 1.0)
            + 2.1 * gauss(h, 19.3, 1.7)
            + day_bump
            + rng.random_range(0.0..1.0) * noise * 2.0;
        load.push(l * cfg.synth.load_peak_kw / 6.0 * 2.2);

        // Irradiance and PV.
        let g = if h > sunrise && h < sunset {
            let x = (h - sunrise) / (sunset - sunrise) * std::f64::consts::PI;
            g_peak * x.sin().powf(1.25)
        } else {
            0.0
        };
        g_ir.push(g);
        pv.push(cfg.synth.pv_kwp * g / 1.0 * 0.92);

        t_amb.push(
            t_mean + t_swing * (2.0 * std::f64::consts::PI * (h - 15.0) / 24.0).cos()
                + 0.8 * ((day as f64 * 0.7).sin()),
        );

        // Mobility: commute on weekdays, a Saturday trip, home on Sunday.
        let away = if weekday < 5 {
            (8.0..18.0).contains(&h)
        } else if weekday == 5 {
            (10.0..14.0).contains(&h)
        } else {
            false
        };
        gamma.push(if away { 0.0 } else { 1.0 });
        occ.push(if away { 0.0 } else { 1.0 });
        p_drive.push(if away { cfg.synth.ev_p_drive_kw } else { 0.0 });
    }

    RawTimeseries {
        grid,
        da_eur_mwh: da,
        ida_eur_mwh: ida,
        id1_eur_mwh: id1,
        load_kw: load,
        pv_kw: pv,
        t_amb_k: t_amb,
        g_ir_kwm2: g_ir,
        gamma_ev: gamma,
        occupancy: occ,
        p_drive_kw: p_drive,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::ScenarioData;

    #[test]
    fn deterministic_for_fixed_seed() {
        let cfg = ScenarioConfig::default();
        assert_eq!(generate(&cfg), generate(&cfg));
        let mut other = cfg.clone();
        other.seed = 7;
        assert_ne!(generate(&cfg), generate(&other));
    }

    #[test]
    fn winter_week_has_required_phenomena() {
        let cfg = ScenarioConfig::default();
        let raw = generate(&cfg);
        // EV transitions sit on hour boundaries so hourly means stay binary.
        let data = ScenarioData::build(&raw, &cfg.market).unwrap();
        for f in &data.da_frames {
            assert!(f.gamma_ev == 0.0 || f.gamma_ev == 1.0);
        }
        // IDA descends within each winter day (first vs last quarter mean).
        let day: Vec<f64> = raw.ida_eur_mwh[0..96].to_vec();
        let head: f64 = day[0..24].iter().sum::<f64>() / 24.0;
        let tail: f64 = day[72..96].iter().sum::<f64>() / 24.0;
        assert!(head > tail + 20.0, "winter IDA should descend: {head} vs {tail}");
        assert!(raw.da_eur_mwh.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn summer_week_has_negative_midday_da_and_positive_ida() {
        let cfg = ScenarioConfig::default_summer();
        let raw = generate(&cfg);
        let min_da = raw.da_eur_mwh.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min_da < 0.0, "summer midday DA should dip negative, min {min_da}");
        assert!(raw.ida_eur_mwh.iter().all(|v| *v > 0.0));
    }
}
