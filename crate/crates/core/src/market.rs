//! Price-series management and the grid, degradation, and penalty cost
//! terms of the objective.

use serde::{Deserialize, Serialize};

use crate::grid::{resample_hold, GridError, TimeGrid, HOUR_S, MPC_STEP_S};

/// Buy/sell price pair [EUR/kWh].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricePair {
    pub buy: f64,
    pub sell: f64,
}

/// All market price series on their native grids.
///
/// DA lives on the hourly grid; IDA and ID1 (the continuous-time index)
/// on the 15 min grid. Sell prices are buy prices scaled by the configured
/// ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceBook {
    pub da_grid: TimeGrid,
    pub mpc_grid: TimeGrid,
    pub da_buy: Vec<f64>,
    pub da_sell: Vec<f64>,
    pub ida_buy: Vec<f64>,
    pub ida_sell: Vec<f64>,
    pub id1_buy: Vec<f64>,
    pub id1_sell: Vec<f64>,
}

impl PriceBook {
    /// Build from buy series, deriving sell prices by ratio.
    pub fn from_buy_series(
        da_grid: TimeGrid,
        mpc_grid: TimeGrid,
        da_buy: Vec<f64>,
        ida_buy: Vec<f64>,
        id1_buy: Vec<f64>,
        da_sell_ratio: f64,
        mpc_sell_ratio: f64,
    ) -> Self {
        let scale = |s: &[f64], r: f64| s.iter().map(|v| v * r).collect::<Vec<_>>();
        Self {
            da_grid,
            mpc_grid,
            da_sell: scale(&da_buy, da_sell_ratio),
            ida_sell: scale(&ida_buy, mpc_sell_ratio),
            id1_sell: scale(&id1_buy, mpc_sell_ratio),
            da_buy,
            ida_buy,
            id1_buy,
        }
    }

    /// DA buy price resampled onto a 15 min window starting at `start_s`.
    pub fn da_buy_on_mpc(&self, start_s: i64, count: usize) -> Result<Vec<f64>, GridError> {
        let tgt = TimeGrid::new(start_s, MPC_STEP_S, count);
        resample_hold(&self.da_buy, &self.da_grid, &tgt)
    }

    /// Slice a 15 min-grid series over a window.
    pub fn mpc_window<'a>(&self, series: &'a [f64], start_s: i64, count: usize) -> Option<&'a [f64]> {
        let i = self.mpc_grid.index_of(start_s)?;
        if i + count > series.len() {
            return None;
        }
        Some(&series[i..i + count])
    }

    /// DA window in hourly steps starting at `start_s`.
    pub fn da_window(&self, start_s: i64, hours: usize) -> Option<(&[f64], &[f64])> {
        let i = self.da_grid.index_of(start_s)?;
        if (start_s - self.da_grid.start_s) % HOUR_S != 0 || i + hours > self.da_buy.len() {
            return None;
        }
        Some((&self.da_buy[i..i + hours], &self.da_sell[i..i + hours]))
    }
}

/// Objective weights of the four goal terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveWeights {
    pub w_grid: f64,
    pub w_loss: f64,
    pub w_soc: f64,
    pub w_t: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            w_grid: 1.0,
            w_loss: 1.0,
            w_soc: 100.0,
            w_t: 10.0,
        }
    }
}

/// Asymmetric settlement of a grid position [EUR/h].
///
/// Algebraically `(b-s)/2 |P| + (b+s)/2 P`, i.e. buy price on imports and
/// sell price on exports.
pub fn cost_da(p_grid_kw: f64, lambda_buy: f64, lambda_sell: f64) -> f64 {
    0.5 * (lambda_buy - lambda_sell) * p_grid_kw.abs() + 0.5 * (lambda_buy + lambda_sell) * p_grid_kw
}

/// Settlement of the deviation from the committed position [EUR/h].
pub fn cost_deviation(p_grid_mpc_kw: f64, p_grid_da_kw: f64, lambda_buy: f64, lambda_sell: f64) -> f64 {
    cost_da(p_grid_mpc_kw - p_grid_da_kw, lambda_buy, lambda_sell)
}

/// Weighted capacity-loss cost over a trajectory [EUR].
///
/// `i_loss` is per cell [A], `dt_s` per step; the Ah integral scales by the
/// cell count.
pub fn cost_loss(i_loss_series: &[f64], dt_s: f64, n_s: u32, n_p: u32, c_loss: f64, w_loss: f64) -> f64 {
    let cells = n_s as f64 * n_p as f64;
    let dt_h = dt_s / HOUR_S as f64;
    w_loss * c_loss * cells * dt_h * i_loss_series.iter().sum::<f64>()
}

/// Quadratic penalty on the departure SoC miss.
pub fn penalty_soc_departure(soc_at_dep: f64, soc_target: f64, w_soc: f64) -> f64 {
    let e = soc_at_dep - soc_target;
    w_soc * e * e
}

/// Integral tracking penalty while plugged in (fast-charge mode).
pub fn penalty_soc_fastcharge(
    soc_series: &[f64],
    soc_target: f64,
    gamma_series: &[f64],
    w_soc: f64,
    dt_s: f64,
) -> f64 {
    debug_assert_eq!(soc_series.len(), gamma_series.len());
    let dt_h = dt_s / HOUR_S as f64;
    soc_series
        .iter()
        .zip(gamma_series)
        .map(|(soc, g)| {
            let e = soc - soc_target;
            w_soc * g * e * e * dt_h
        })
        .sum()
}

/// Occupancy-gated comfort penalty over a trajectory.
pub fn penalty_comfort(slack_series: &[f64], occupancy_series: &[f64], w_t: f64, dt_s: f64) -> f64 {
    debug_assert_eq!(slack_series.len(), occupancy_series.len());
    let dt_h = dt_s / HOUR_S as f64;
    slack_series
        .iter()
        .zip(occupancy_series)
        .map(|(s, o)| w_t * s * o * dt_h)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cost_da_buy_branch() {
        assert!((cost_da(10.0, 0.30, 0.285) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn cost_da_sell_branch() {
        assert!((cost_da(-10.0, 0.30, 0.285) + 2.85).abs() < 1e-12);
    }

    #[test]
    fn cost_da_symmetric_collapse() {
        for p in [-7.3, 0.0, 12.1] {
            assert!((cost_da(p, 0.2, 0.2) - 0.2 * p).abs() < 1e-12);
        }
    }

    #[test]
    fn cost_deviation_cases() {
        assert_eq!(cost_deviation(5.0, 5.0, 0.3, 0.24), 0.0);
        assert!((cost_deviation(7.0, 5.0, 0.3, 0.24) - 0.6).abs() < 1e-12);
        assert!((cost_deviation(3.0, 5.0, 0.3, 0.24) + 0.48).abs() < 1e-12);
    }

    #[test]
    fn cost_loss_unit_conversion() {
        // 1e-4 A over 900 s across 100 cells at 40 EUR/Ah = 0.1 EUR.
        let c = cost_loss(&[1e-4], 900.0, 10, 10, 40.0, 1.0);
        assert!((c - 0.1).abs() < 1e-15);
        assert_eq!(cost_loss(&[0.0, 0.0], 900.0, 10, 10, 40.0, 1.0), 0.0);
        let doubled = cost_loss(&[1e-4], 900.0, 10, 10, 40.0, 2.0);
        assert!((doubled - 0.2).abs() < 1e-15);
    }

    #[test]
    fn penalty_departure_quadratic_and_even() {
        assert_eq!(penalty_soc_departure(0.8, 0.8, 100.0), 0.0);
        assert!((penalty_soc_departure(0.7, 0.8, 100.0) - 1.0).abs() < 1e-12);
        assert!(
            (penalty_soc_departure(0.9, 0.8, 100.0) - penalty_soc_departure(0.7, 0.8, 100.0)).abs()
                < 1e-12
        );
    }

    #[test]
    fn penalty_fastcharge_gating_and_sum() {
        let soc = [0.6; 4];
        let on = [1.0; 4];
        let off = [0.0; 4];
        assert_eq!(penalty_soc_fastcharge(&[0.8; 4], 0.8, &on, 1.0, 900.0), 0.0);
        assert_eq!(penalty_soc_fastcharge(&soc, 0.8, &off, 1.0, 900.0), 0.0);
        let v = penalty_soc_fastcharge(&soc, 0.8, &on, 1.0, 900.0);
        assert!((v - 4.0 * 0.04 * 0.25).abs() < 1e-12);
    }

    #[test]
    fn penalty_comfort_gating() {
        assert_eq!(penalty_comfort(&[0.0; 4], &[1.0; 4], 10.0, 900.0), 0.0);
        assert_eq!(penalty_comfort(&[1.0; 4], &[0.0; 4], 10.0, 900.0), 0.0);
        let v = penalty_comfort(&[1.0; 4], &[1.0; 4], 10.0, 3600.0);
        assert!((v - 40.0).abs() < 1e-12);
    }

    proptest! {
        // Convex piecewise-linear with the kink at zero.
        #[test]
        fn cost_da_branch_identity(p in -50.0f64..50.0, b in 0.0f64..1.0, spread in 0.0f64..0.5) {
            let s = b - spread;
            let expected = if p >= 0.0 { b * p } else { s * p };
            prop_assert!((cost_da(p, b, s) - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        }

        // No arbitrage by splitting a position across the same settlement.
        #[test]
        fn cost_da_no_split_arbitrage(p1 in 0.0f64..50.0, p2 in -50.0f64..0.0, b in 0.0f64..1.0, spread in 0.0f64..0.5) {
            let s = b - spread;
            let lhs = cost_da(p1, b, s) + cost_da(p2, b, s);
            prop_assert!(lhs >= cost_da(p1 + p2, b, s) - 1e-12);
        }

        #[test]
        fn penalties_nonnegative(soc in 0.0f64..1.0, target in 0.0f64..1.0, slack in 0.0f64..5.0) {
            prop_assert!(penalty_soc_departure(soc, target, 100.0) >= 0.0);
            prop_assert!(penalty_comfort(&[slack], &[1.0], 10.0, 900.0) >= 0.0);
        }
    }
}
