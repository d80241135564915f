//! Machine-readable exports of the run ledgers: cost summary, per-scenario
//! time series, degradation-vs-FEC curves, and the FEC-change matrix.
//!
//! Floats are written with the shortest round-trip formatting, so summing
//! exported per-step columns reproduces the summary totals exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::battery::fec_increment;
use crate::config::Season;
use crate::harness::{FlexKind, PolicyKind, RunLedger};
use crate::timeseries::format_timestamp;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no ledgers to report")]
    Empty,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Paths of everything a report emission produced.
#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub outdir: PathBuf,
    pub summary_csv: PathBuf,
    pub summary_txt: PathBuf,
    pub delta_fec_csv: PathBuf,
    pub degradation_csv: PathBuf,
    pub longform_csv: PathBuf,
    pub series_files: Vec<PathBuf>,
    pub da_plan_files: Vec<PathBuf>,
}

fn scenario_series_csv(l: &RunLedger) -> String {
    let mut out = String::new();
    out.push_str(
        "timestamp,p_grid_kw,commit_kw,p_pv_kw,p_load_kw,p_hp_e_kw,\
         p_bess_plus_kw,p_bess_minus_kw,p_ev_plus_kw,p_ev_minus_kw,\
         q_hp_d_kw,q_hp_tess_kw,q_tess_d_kw,t_in_k,t_tess_k,soc_tess,\
         soc_bess,soc_ev,q_loss_bess_ah,q_loss_ev_ah,fec_bess,fec_ev,\
         i_sei_bess_a,i_sei_ev_a,lambda_settle_buy,lambda_settle_sell,\
         cost_dev_eur,cost_loss_eur,penalty_comfort_eur,penalty_soc_eur,\
         comfort_slack_k,solver_status,solver_inner_iters,warm_source,\
         comp_violation_kw2,comp_retries,fallback_hold,clamped\n",
    );
    for s in &l.steps {
        let d = &s.decision;
        let st = &s.state_after;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:?},{},{:?},{},{},{},{}",
            format_timestamp(s.t_s),
            s.p_grid_kw,
            s.commit_kw,
            s.p_pv_kw,
            s.p_load_kw,
            s.p_hp_e_kw,
            d.p_bess_plus,
            d.p_bess_minus,
            d.p_ev_plus,
            d.p_ev_minus,
            d.q_hp_d,
            d.q_hp_tess,
            d.q_tess_d,
            st.t_in,
            st.t_tess,
            s.soc_tess,
            st.bess.soc,
            st.ev.soc,
            st.bess.q_loss_ah,
            st.ev.q_loss_ah,
            st.bess.fec,
            st.ev.fec,
            s.i_sei_bess_a,
            s.i_sei_ev_a,
            s.lambda_settle_buy,
            s.lambda_settle_sell,
            s.cost_dev_eur,
            s.cost_loss_eur,
            s.penalty_comfort_eur,
            s.penalty_soc_eur,
            s.comfort_slack_k,
            s.solver_status,
            s.solver_inner_iters,
            s.warm_source,
            s.comp_violation_kw2,
            s.comp_retries,
            s.fallback_hold,
            s.clamped,
        );
    }
    out
}

fn da_plan_csv(l: &RunLedger) -> String {
    let mut out = String::from(
        "day,hour,commit_kw,plan_soc_bess,plan_soc_ev,plan_t_in_k,plan_t_tess_k\n",
    );
    for d in &l.da {
        let n = d.commit_kw.len();
        for j in 0..n {
            let pick = |v: &Vec<f64>| v.get(j + 1).copied().unwrap_or(f64::NAN);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                d.day,
                j,
                d.commit_kw[j],
                pick(&d.predicted.soc_bess),
                pick(&d.predicted.soc_ev),
                pick(&d.predicted.t_in),
                pick(&d.predicted.t_tess),
            );
        }
    }
    out
}

/// Degradation curves: realized per step, plan per committed-day hour.
fn degradation_rows(l: &RunLedger, out: &mut String) {
    let label = l.key.label();
    for (i, s) in l.steps.iter().enumerate() {
        let b = &s.state_after.bess;
        let e = &s.state_after.ev;
        let _ = writeln!(out, "{label},bess,realized,{i},{},{}", b.fec, b.q_loss_ah);
        let _ = writeln!(out, "{label},ev,realized,{i},{},{}", e.fec, e.q_loss_ah);
    }
    // DA-plan trajectories stitched across the committed days.
    for asset in ["bess", "ev"] {
        let mut fec = 0.0;
        let mut ql = 0.0;
        let mut idx = 0usize;
        for d in &l.da {
            let (soc, q) = match asset {
                "bess" => (&d.predicted.soc_bess, &d.predicted.q_bess),
                _ => (&d.predicted.soc_ev, &d.predicted.q_ev),
            };
            if soc.len() < 25 {
                continue;
            }
            for j in 0..24 {
                fec += fec_increment(soc[j], soc[j + 1]);
                ql += q[j] - q[j + 1];
                let _ = writeln!(out, "{label},{asset},plan,{idx},{fec},{ql}");
                idx += 1;
            }
        }
    }
}

/// Emit every export for a set of ledgers; file names follow
/// `policy_flex_season`.
pub fn emit_reports(ledgers: &[RunLedger], outdir: &Path) -> Result<ReportBundle, ReportError> {
    if ledgers.is_empty() {
        return Err(ReportError::Empty);
    }
    std::fs::create_dir_all(outdir)?;

    // Summary (CSV + aligned text).
    let mut summary = String::from(
        "scenario,policy,flex,season,c_da_eur,c_dev_eur,c_grid_eur,c_loss_eur,\
         p_soc_dep_eur,p_comfort_eur,total_eur,fec_bess,fec_ev,plan_fec_bess,\
         plan_fec_ev,q_loss_bess_ah,q_loss_ev_ah,solves,converged\n",
    );
    let mut text = String::new();
    let _ = writeln!(
        text,
        "{:<24} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "scenario", "c_grid", "c_da", "c_dev", "c_loss", "p_soc", "p_T"
    );
    for l in ledgers {
        let t = &l.totals;
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            l.key.label(),
            l.key.policy.label(),
            l.key.flex.label(),
            l.key.season,
            t.c_da_eur,
            t.c_dev_eur,
            t.c_grid_eur,
            t.c_loss_eur,
            t.p_soc_dep_eur,
            t.p_comfort_eur,
            t.total_eur,
            l.fec_bess,
            l.fec_ev,
            l.plan_fec_bess,
            l.plan_fec_ev,
            l.q_loss_bess_ah,
            l.q_loss_ev_ah,
            l.solve_count,
            l.converged_count,
        );
        let _ = writeln!(
            text,
            "{:<24} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
            l.key.label(),
            t.c_grid_eur,
            t.c_da_eur,
            t.c_dev_eur,
            t.c_loss_eur,
            t.p_soc_dep_eur,
            t.p_comfort_eur
        );
    }
    let summary_csv = outdir.join("summary.csv");
    let summary_txt = outdir.join("summary.txt");
    std::fs::write(&summary_csv, summary)?;
    std::fs::write(&summary_txt, text)?;

    // FEC-change matrix, formatted as percentages per asset and summed.
    let mut dfec = String::from("season,flex,asset");
    for p in PolicyKind::ALL {
        let _ = write!(dfec, ",{}", p.label());
    }
    dfec.push('\n');
    let seasons: Vec<Season> = {
        let mut s: Vec<Season> = ledgers.iter().map(|l| l.key.season).collect();
        s.dedup();
        s
    };
    for season in seasons {
        for flex in FlexKind::ALL {
            for asset in ["bess", "ev", "total"] {
                let mut row = format!("{season},{},{asset}", flex.label());
                let mut any = false;
                for policy in PolicyKind::ALL {
                    let cell = ledgers
                        .iter()
                        .find(|l| {
                            l.key.season == season && l.key.flex == flex && l.key.policy == policy
                        })
                        .and_then(|l| {
                            let (b, e, t) = l.delta_fec();
                            match asset {
                                "bess" => b,
                                "ev" => e,
                                _ => t,
                            }
                        });
                    match cell {
                        Some(v) => {
                            any = true;
                            let _ = write!(row, ",{:.1}%", v * 100.0);
                        }
                        None => row.push(','),
                    }
                }
                if any {
                    dfec.push_str(&row);
                    dfec.push('\n');
                }
            }
        }
    }
    let delta_fec_csv = outdir.join("delta_fec.csv");
    std::fs::write(&delta_fec_csv, dfec)?;

    // Degradation curves (long format).
    let mut deg = String::from("scenario,asset,kind,index,fec,q_loss_ah\n");
    for l in ledgers {
        degradation_rows(l, &mut deg);
    }
    let degradation_csv = outdir.join("degradation.csv");
    std::fs::write(&degradation_csv, deg)?;

    // Plot-ready long format of the headline series.
    let mut long = String::from("scenario,series,timestamp,value\n");
    for l in ledgers {
        let label = l.key.label();
        for s in &l.steps {
            let ts = format_timestamp(s.t_s);
            for (name, v) in [
                ("p_grid_kw", s.p_grid_kw),
                ("commit_kw", s.commit_kw),
                ("t_in_k", s.state_after.t_in),
                ("t_tess_k", s.state_after.t_tess),
                ("soc_bess", s.state_after.bess.soc),
                ("soc_ev", s.state_after.ev.soc),
            ] {
                let _ = writeln!(long, "{label},{name},{ts},{v}");
            }
        }
    }
    let longform_csv = outdir.join("longform.csv");
    std::fs::write(&longform_csv, long)?;

    // Per-scenario series and DA plans.
    let mut series_files = Vec::new();
    let mut da_plan_files = Vec::new();
    for l in ledgers {
        let p = outdir.join(format!("{}_series.csv", l.key.label()));
        std::fs::write(&p, scenario_series_csv(l))?;
        series_files.push(p);
        let p = outdir.join(format!("{}_da_plan.csv", l.key.label()));
        std::fs::write(&p, da_plan_csv(l))?;
        da_plan_files.push(p);
    }

    Ok(ReportBundle {
        outdir: outdir.to_path_buf(),
        summary_csv,
        summary_txt,
        delta_fec_csv,
        degradation_csv,
        longform_csv,
        series_files,
        da_plan_files,
    })
}
