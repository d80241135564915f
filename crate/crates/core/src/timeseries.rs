//! Exogenous data ingestion: CSV formats, grid alignment, and the frame
//! assembly both policy stages consume.
//!
//! Two files describe a scenario span:
//!   prices.csv  — `timestamp, da_eur_mwh, ida_eur_mwh, id1_eur_mwh`,
//!                 one row per 15 min step (the hourly DA price held);
//!   series.csv  — `timestamp, load_kw, pv_kw, t_amb_k, g_ir_kwm2,
//!                 gamma_ev, occupancy, p_drive_kw`, one row per 15 min.
//! Prices arrive in EUR/MWh and are converted to EUR/kWh on ingest.

use std::path::Path;

use thiserror::Error;

use crate::config::MarketConfig;
use crate::grid::{resample_hold, GridError, TimeGrid, HOUR_S, MPC_STEP_S};
use crate::market::PriceBook;
use crate::types::ExogenousFrame;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {msg}")]
    Csv {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: missing required column `{col}`")]
    MissingColumn { path: String, col: String },
    #[error("{path}:{line}: non-monotone timestamp")]
    NonMonotone { path: String, line: usize },
    #[error("{path}:{line}: gap of {gap} steps exceeds the forward-fill limit of {limit}")]
    GapTooLong {
        path: String,
        line: usize,
        gap: usize,
        limit: usize,
    },
    #[error("series span mismatch: prices cover {prices} steps, series {series}")]
    SpanMismatch { prices: usize, series: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Maximum number of consecutive missing cells forward-filled before
/// ingestion fails.
pub const GAP_FILL_LIMIT: usize = 4;

/// Raw per-quantity series on the 15 min grid (prices still per MWh).
#[derive(Debug, Clone, PartialEq)]
pub struct RawTimeseries {
    pub grid: TimeGrid,
    pub da_eur_mwh: Vec<f64>,
    pub ida_eur_mwh: Vec<f64>,
    pub id1_eur_mwh: Vec<f64>,
    pub load_kw: Vec<f64>,
    pub pv_kw: Vec<f64>,
    pub t_amb_k: Vec<f64>,
    pub g_ir_kwm2: Vec<f64>,
    pub gamma_ev: Vec<f64>,
    pub occupancy: Vec<f64>,
    pub p_drive_kw: Vec<f64>,
}

/// Fully aligned scenario inputs on both grids.
#[derive(Debug, Clone)]
pub struct ScenarioData {
    pub mpc_grid: TimeGrid,
    pub da_grid: TimeGrid,
    pub mpc_frames: Vec<ExogenousFrame>,
    pub da_frames: Vec<ExogenousFrame>,
    pub prices: PriceBook,
    /// Ingestion notes (e.g. columns forward-filled from a fallback).
    pub warnings: Vec<String>,
}

impl ScenarioData {
    /// Assemble frames on both grids from raw series.
    pub fn build(raw: &RawTimeseries, market: &MarketConfig) -> Result<Self, DataError> {
        Self::build_with_warnings(raw, market, Vec::new())
    }

    fn build_with_warnings(
        raw: &RawTimeseries,
        market: &MarketConfig,
        warnings: Vec<String>,
    ) -> Result<Self, DataError> {
        let mpc_grid = raw.grid;
        assert_eq!(mpc_grid.step_s, MPC_STEP_S, "raw series live on the 15 min grid");
        let hours = mpc_grid.count / 4;
        let da_grid = TimeGrid::new(mpc_grid.start_s, HOUR_S, hours);

        let to_kwh = |v: &f64| v / 1000.0;
        let da_buy_fine: Vec<f64> = raw.da_eur_mwh.iter().map(to_kwh).collect();
        let ida_buy: Vec<f64> = raw.ida_eur_mwh.iter().map(to_kwh).collect();
        let id1_buy: Vec<f64> = raw.id1_eur_mwh.iter().map(to_kwh).collect();
        let da_buy_hourly = resample_hold(&da_buy_fine, &mpc_grid, &da_grid)?;

        let prices = PriceBook::from_buy_series(
            da_grid,
            mpc_grid,
            da_buy_hourly.clone(),
            ida_buy.clone(),
            id1_buy.clone(),
            market.da_sell_ratio,
            market.mpc_sell_ratio,
        );

        let mut mpc_frames = Vec::with_capacity(mpc_grid.count);
        for k in 0..mpc_grid.count {
            let hour = k / 4;
            let da_buy = da_buy_hourly[hour.min(hours - 1)];
            mpc_frames.push(ExogenousFrame {
                lambda_da_buy: da_buy,
                lambda_da_sell: market.da_sell_ratio * da_buy,
                lambda_ida_buy: ida_buy[k],
                lambda_ida_sell: market.mpc_sell_ratio * ida_buy[k],
                lambda_id1_buy: id1_buy[k],
                lambda_id1_sell: market.mpc_sell_ratio * id1_buy[k],
                g_ir: raw.g_ir_kwm2[k],
                t_amb: raw.t_amb_k[k],
                p_load_e: raw.load_kw[k],
                p_pv: raw.pv_kw[k],
                gamma_ev: raw.gamma_ev[k],
                occupancy: raw.occupancy[k],
                p_drive_ev: raw.p_drive_kw[k],
            });
        }

        let mean = |s: &[f64]| -> Result<Vec<f64>, GridError> {
            resample_hold(s, &mpc_grid, &da_grid)
        };
        let binary = |s: Vec<f64>| -> Vec<f64> {
            s.into_iter().map(|v| if v >= 0.5 { 1.0 } else { 0.0 }).collect()
        };
        let ida_hourly = mean(&ida_buy)?;
        let id1_hourly = mean(&id1_buy)?;
        let g_ir_h = mean(&raw.g_ir_kwm2)?;
        let t_amb_h = mean(&raw.t_amb_k)?;
        let load_h = mean(&raw.load_kw)?;
        let pv_h = mean(&raw.pv_kw)?;
        let gamma_h = binary(mean(&raw.gamma_ev)?);
        let occ_h = binary(mean(&raw.occupancy)?);
        let p_drive_h = mean(&raw.p_drive_kw)?;

        let mut da_frames = Vec::with_capacity(hours);
        for j in 0..hours {
            da_frames.push(ExogenousFrame {
                lambda_da_buy: da_buy_hourly[j],
                lambda_da_sell: market.da_sell_ratio * da_buy_hourly[j],
                lambda_ida_buy: ida_hourly[j],
                lambda_ida_sell: market.mpc_sell_ratio * ida_hourly[j],
                lambda_id1_buy: id1_hourly[j],
                lambda_id1_sell: market.mpc_sell_ratio * id1_hourly[j],
                g_ir: g_ir_h[j],
                t_amb: t_amb_h[j],
                p_load_e: load_h[j],
                p_pv: pv_h[j],
                gamma_ev: gamma_h[j],
                occupancy: occ_h[j],
                p_drive_ev: p_drive_h[j],
            });
        }

        Ok(Self {
            mpc_grid,
            da_grid,
            mpc_frames,
            da_frames,
            prices,
            warnings,
        })
    }

    /// 15 min frames starting at `start_s`, `count` steps.
    pub fn mpc_window(&self, start_s: i64, count: usize) -> Option<&[ExogenousFrame]> {
        let i = self.mpc_grid.index_of(start_s)?;
        if i + count > self.mpc_frames.len() {
            return None;
        }
        Some(&self.mpc_frames[i..i + count])
    }

    /// Hourly frames starting at `start_s`, `count` steps.
    pub fn da_window(&self, start_s: i64, count: usize) -> Option<&[ExogenousFrame]> {
        let i = self.da_grid.index_of(start_s)?;
        if (start_s - self.da_grid.start_s) % HOUR_S != 0 || i + count > self.da_frames.len() {
            return None;
        }
        Some(&self.da_frames[i..i + count])
    }

    pub fn truth_at(&self, t_s: i64) -> Option<&ExogenousFrame> {
        self.mpc_frames.get(self.mpc_grid.index_of(t_s)?)
    }
}

/// Parse `1718236800`, `2024-01-15T06:30:00Z`, or `2024-01-15 06:30` into
/// seconds on the fixed axis.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    let s = s.strip_suffix('Z').unwrap_or(s);
    let (date, time) = if let Some((d, t)) = s.split_once('T') {
        (d, t)
    } else {
        s.split_once(' ')?
    };
    let mut dp = date.split('-');
    let (y, m, d) = (
        dp.next()?.parse::<i64>().ok()?,
        dp.next()?.parse::<u32>().ok()?,
        dp.next()?.parse::<u32>().ok()?,
    );
    let mut tp = time.split(':');
    let hh = tp.next()?.parse::<i64>().ok()?;
    let mm = tp.next()?.parse::<i64>().ok()?;
    let ss = tp.next().map_or(Some(0), |v| v.parse::<i64>().ok())?;
    Some(days_from_civil(y, m, d) * 86400 + hh * 3600 + mm * 60 + ss)
}

/// Days since 1970-01-01 (proleptic Gregorian).
fn days_from_civil(y: i64, m: u32, d: u32) -> i64 {
    let y = y - if m <= 2 { 1 } else { 0 };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400;
    let mp = ((m as i64) + 9) % 12;
    let doy = (153 * mp + 2) / 5 + (d as i64) - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146097 + doe - 719468
}

/// Render a fixed-axis second count in the CSV timestamp format.
pub fn format_timestamp(t_s: i64) -> String {
    let days = t_s.div_euclid(86400);
    let secs = t_s.rem_euclid(86400);
    let (y, m, d) = civil_from_days(days);
    format!(
        "{y:04}-{m:02}-{d:02}T{:02}:{:02}:{:02}Z",
        secs / 3600,
        (secs % 3600) / 60,
        secs % 60
    )
}

fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719468;
    let era = if z >= 0 { z } else { z - 146096 } / 146097;
    let doe = z - era * 146097;
    let yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (if m <= 2 { y + 1 } else { y }, m, d)
}

struct Column {
    name: String,
    values: Vec<Option<f64>>,
}

fn read_csv(path: &Path) -> Result<(Vec<i64>, Vec<Column>), DataError> {
    let label = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_path(path)
        .map_err(|e| DataError::Csv {
            path: label.clone(),
            line: 0,
            msg: e.to_string(),
        })?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| DataError::Csv {
            path: label.clone(),
            line: 1,
            msg: e.to_string(),
        })?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let mut timestamps = Vec::new();
    let mut columns: Vec<Column> = headers
        .iter()
        .skip(1)
        .map(|name| Column {
            name: name.clone(),
            values: Vec::new(),
        })
        .collect();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| DataError::Csv {
            path: label.clone(),
            line,
            msg: e.to_string(),
        })?;
        let ts = parse_timestamp(rec.get(0).unwrap_or("")).ok_or_else(|| DataError::Csv {
            path: label.clone(),
            line,
            msg: format!("bad timestamp `{}`", rec.get(0).unwrap_or("")),
        })?;
        if let Some(&last) = timestamps.last() {
            if ts <= last {
                return Err(DataError::NonMonotone { path: label, line });
            }
        }
        timestamps.push(ts);
        for (c, col) in columns.iter_mut().enumerate() {
            let cell = rec.get(c + 1).unwrap_or("");
            if cell.is_empty() {
                col.values.push(None);
            } else {
                let v = cell.parse::<f64>().map_err(|_| DataError::Csv {
                    path: label.clone(),
                    line,
                    msg: format!("bad number `{cell}` in column `{}`", col.name),
                })?;
                col.values.push(Some(v));
            }
        }
    }
    Ok((timestamps, columns))
}

/// Forward-fill gaps up to the limit; error on longer holes or a leading
/// hole.
fn fill_column(path: &str, col: &Column) -> Result<Vec<f64>, DataError> {
    let mut out = Vec::with_capacity(col.values.len());
    let mut last: Option<f64> = None;
    let mut gap = 0usize;
    for (i, v) in col.values.iter().enumerate() {
        match v {
            Some(v) => {
                last = Some(*v);
                gap = 0;
                out.push(*v);
            }
            None => {
                gap += 1;
                let Some(prev) = last else {
                    return Err(DataError::Csv {
                        path: path.to_string(),
                        line: i + 2,
                        msg: format!("column `{}` starts with a hole", col.name),
                    });
                };
                if gap > GAP_FILL_LIMIT {
                    return Err(DataError::GapTooLong {
                        path: path.to_string(),
                        line: i + 2,
                        gap,
                        limit: GAP_FILL_LIMIT,
                    });
                }
                out.push(prev);
            }
        }
    }
    Ok(out)
}

/// Load a scenario from `prices.csv` and `series.csv` in `dir`.
pub fn load_timeseries(dir: &Path, market: &MarketConfig) -> Result<ScenarioData, DataError> {
    let prices_path = dir.join("prices.csv");
    let series_path = dir.join("series.csv");
    let mut warnings = Vec::new();

    let (pts, pcols) = read_csv(&prices_path)?;
    let plabel = prices_path.display().to_string();
    let find = |cols: &[Column], name: &str| -> Option<usize> {
        cols.iter().position(|c| c.name == name)
    };
    let da_idx = find(&pcols, "da_eur_mwh").ok_or_else(|| DataError::MissingColumn {
        path: plabel.clone(),
        col: "da_eur_mwh".into(),
    })?;
    let da = fill_column(&plabel, &pcols[da_idx])?;
    let ida = match find(&pcols, "ida_eur_mwh") {
        Some(i) => fill_column(&plabel, &pcols[i])?,
        None => {
            warnings.push("prices.csv: ida_eur_mwh missing, filled from da_eur_mwh".to_string());
            da.clone()
        }
    };
    let id1 = match find(&pcols, "id1_eur_mwh") {
        Some(i) => fill_column(&plabel, &pcols[i])?,
        None => {
            warnings.push("prices.csv: id1_eur_mwh missing, filled from da_eur_mwh".to_string());
            da.clone()
        }
    };

    let (sts, scols) = read_csv(&series_path)?;
    let slabel = series_path.display().to_string();
    if pts.len() != sts.len() || pts.first() != sts.first() {
        return Err(DataError::SpanMismatch {
            prices: pts.len(),
            series: sts.len(),
        });
    }
    let col = |name: &str| -> Result<Vec<f64>, DataError> {
        let i = find(&scols, name).ok_or_else(|| DataError::MissingColumn {
            path: slabel.clone(),
            col: name.into(),
        })?;
        fill_column(&slabel, &scols[i])
    };

    let start = *pts.first().ok_or_else(|| DataError::Csv {
        path: plabel.clone(),
        line: 1,
        msg: "no data rows".into(),
    })?;
    let grid = TimeGrid::new(start, MPC_STEP_S, pts.len());
    // Uniform spacing check.
    for (i, &t) in pts.iter().enumerate() {
        if t != grid.at(i) {
            return Err(DataError::Csv {
                path: plabel,
                line: i + 2,
                msg: format!("timestamp {t} is off the 15 min grid starting at {start}"),
            });
        }
    }

    let raw = RawTimeseries {
        grid,
        da_eur_mwh: da,
        ida_eur_mwh: ida,
        id1_eur_mwh: id1,
        load_kw: col("load_kw")?,
        pv_kw: col("pv_kw")?,
        t_amb_k: col("t_amb_k")?,
        g_ir_kwm2: col("g_ir_kwm2")?,
        gamma_ev: col("gamma_ev")?,
        occupancy: col("occupancy")?,
        p_drive_kw: col("p_drive_kw")?,
    };
    ScenarioData::build_with_warnings(&raw, market, warnings)
}

/// Write the two scenario CSVs for a raw series set.
pub fn write_timeseries(dir: &Path, raw: &RawTimeseries) -> Result<(), DataError> {
    std::fs::create_dir_all(dir)?;
    let mut prices = String::from("timestamp,da_eur_mwh,ida_eur_mwh,id1_eur_mwh\n");
    let mut series =
        String::from("timestamp,load_kw,pv_kw,t_amb_k,g_ir_kwm2,gamma_ev,occupancy,p_drive_kw\n");
    for k in 0..raw.grid.count {
        let ts = format_timestamp(raw.grid.at(k));
        prices.push_str(&format!(
            "{ts},{},{},{}\n",
            raw.da_eur_mwh[k], raw.ida_eur_mwh[k], raw.id1_eur_mwh[k]
        ));
        series.push_str(&format!(
            "{ts},{},{},{},{},{},{},{}\n",
            raw.load_kw[k],
            raw.pv_kw[k],
            raw.t_amb_k[k],
            raw.g_ir_kwm2[k],
            raw.gamma_ev[k],
            raw.occupancy[k],
            raw.p_drive_kw[k]
        ));
    }
    std::fs::write(dir.join("prices.csv"), prices)?;
    std::fs::write(dir.join("series.csv"), series)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamp_round_trip() {
        for t in [0_i64, 86400, 1718236800, 1718236800 + 900] {
            assert_eq!(parse_timestamp(&format_timestamp(t)), Some(t));
        }
        assert_eq!(parse_timestamp("2024-01-15 06:30"), parse_timestamp("2024-01-15T06:30:00Z"));
        assert_eq!(parse_timestamp("900"), Some(900));
    }

    #[test]
    fn da_hourly_mean_recovers_held_values() {
        let raw = tiny_raw(8);
        let data = ScenarioData::build(&raw, &MarketConfig::default()).unwrap();
        assert_eq!(data.da_frames.len(), 2);
        assert_eq!(data.mpc_frames.len(), 8);
        // held 100 EUR/MWh -> 0.1 EUR/kWh on both grids
        assert!((data.da_frames[0].lambda_da_buy - 0.1).abs() < 1e-12);
        assert!((data.mpc_frames[3].lambda_da_buy - 0.1).abs() < 1e-12);
        assert!((data.mpc_frames[0].lambda_da_sell - 0.095).abs() < 1e-12);
    }

    fn tiny_raw(n: usize) -> RawTimeseries {
        RawTimeseries {
            grid: TimeGrid::new(0, MPC_STEP_S, n),
            da_eur_mwh: vec![100.0; n],
            ida_eur_mwh: vec![90.0; n],
            id1_eur_mwh: vec![95.0; n],
            load_kw: vec![1.0; n],
            pv_kw: vec![0.0; n],
            t_amb_k: vec![280.0; n],
            g_ir_kwm2: vec![0.0; n],
            gamma_ev: vec![1.0; n],
            occupancy: vec![1.0; n],
            p_drive_kw: vec![1.5; n],
        }
    }

    #[test]
    fn csv_round_trip_and_gap_policy() {
        let dir = std::env::temp_dir().join(format!("hubsim_ts_{}", std::process::id()));
        let raw = tiny_raw(8);
        write_timeseries(&dir, &raw).unwrap();
        let data = load_timeseries(&dir, &MarketConfig::default()).unwrap();
        assert_eq!(data.mpc_frames.len(), 8);
        assert!(data.warnings.is_empty());

        // Puncture one cell: forward-filled.
        let p = std::fs::read_to_string(dir.join("series.csv")).unwrap();
        let mut lines: Vec<String> = p.lines().map(|l| l.to_string()).collect();
        lines[3] = {
            let mut parts: Vec<&str> = lines[3].split(',').collect();
            parts[1] = "";
            parts.join(",")
        };
        std::fs::write(dir.join("series.csv"), lines.join("\n") + "\n").unwrap();
        let data = load_timeseries(&dir, &MarketConfig::default()).unwrap();
        assert_eq!(data.mpc_frames[2].p_load_e, 1.0);

        // Rip out the ida column: falls back to da with a warning.
        let p = std::fs::read_to_string(dir.join("prices.csv")).unwrap();
        let stripped: Vec<String> = p
            .lines()
            .map(|l| {
                let parts: Vec<&str> = l.split(',').collect();
                format!("{},{},{}", parts[0], parts[1], parts[3])
            })
            .collect();
        std::fs::write(dir.join("prices.csv"), stripped.join("\n") + "\n").unwrap();
        let data = load_timeseries(&dir, &MarketConfig::default()).unwrap();
        assert_eq!(data.warnings.len(), 1);
        assert_eq!(
            data.mpc_frames[0].lambda_ida_buy,
            data.mpc_frames[0].lambda_da_buy
        );

        // Non-monotone timestamps are rejected.
        let p = std::fs::read_to_string(dir.join("prices.csv")).unwrap();
        let mut lines: Vec<String> = p.lines().map(|l| l.to_string()).collect();
        let swap = lines[2].clone();
        lines[2] = lines[3].clone();
        lines[3] = swap;
        std::fs::write(dir.join("prices.csv"), lines.join("\n") + "\n").unwrap();
        assert!(matches!(
            load_timeseries(&dir, &MarketConfig::default()),
            Err(DataError::NonMonotone { .. })
        ));

        std::fs::remove_dir_all(&dir).ok();
    }
}
