//! Assembles the diagnostics outputs of a run: a JSONL stream with one
//! record per (snapshot, diagnostic) and a summary JSON with fits and
//! flags, plus optional CSV mirrors for plotting.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::config::RunConfigFile;
use crate::diagnostics::{
    delta_schedule, dispersion_decay_report, localized_mass_fraction, moment_scaling_fit,
    theta0, DiagnosticsError, SimplexBinning, SnapshotSource,
};

#[derive(Debug, Clone)]
pub struct DiagnosticsOutput {
    pub jsonl: String,
    pub summary: Value,
    /// Plot-ready CSV mirrors keyed by file name; empty unless requested.
    pub csv_mirrors: BTreeMap<String, String>,
}

fn record(t: f64, tau: f64, name: &str, params: Value, value: Value) -> Value {
    json!({"t": t, "tau": tau, "name": name, "params": params, "value": value})
}

/// Recomputes every enabled diagnostic from the snapshots.
pub fn run_diagnostics(
    source: &mut dyn SnapshotSource<f64>,
    config: &RunConfigFile,
) -> Result<DiagnosticsOutput, DiagnosticsError> {
    let diag = &config.diagnostics;
    let gamma = config.kernel.gamma;
    let mut lines: Vec<String> = Vec::new();
    let mut mirrors: BTreeMap<String, String> = BTreeMap::new();

    if source.is_empty() {
        return Err(DiagnosticsError::TooFewSnapshots {
            needed: 1,
            found: 0,
            t_min: 0.0,
        });
    }
    let (_, first) = source.get(0)?;
    let theta = theta0(&first)?;
    let m0: f64 = first.accounted_mass_vector().iter().sum();
    let d = first.d();
    let resolution = diag
        .simplex_resolution
        .unwrap_or_else(|| SimplexBinning::<f64>::default_resolution(d));
    let binning = SimplexBinning::<f64>::new(d, resolution)?;

    // Per-snapshot scalar records.
    let mut moments_csv = String::from("t,tau,k,value\n");
    let mut fractions_csv = String::from("t,tau,delta,fraction\n");
    let mut fractions: Vec<(f64, f64)> = Vec::new();
    for i in 0..source.len() {
        let (t, state) = source.get(i)?;
        let tau = (t + 1.0).ln();
        for &k in &diag.moment_exponents {
            let value = state.moment(k).value;
            lines.push(record(t, tau, "moment", json!({ "k": k }), json!(value)).to_string());
            moments_csv.push_str(&format!("{t},{tau},{k},{value}\n"));
        }
        let (large, small) = state.split_moment(gamma, config.kernel.p);
        lines.push(
            record(
                t,
                tau,
                "split_moment",
                json!({"gamma": gamma, "p": config.kernel.p}),
                json!([large, small]),
            )
            .to_string(),
        );
        if t > 0.0 {
            let fraction =
                localized_mass_fraction(&state, gamma, diag.localization_delta, &theta)?;
            fractions.push((t, fraction));
            lines.push(
                record(
                    t,
                    tau,
                    "localized_mass_fraction",
                    json!({"delta": diag.localization_delta}),
                    json!(fraction),
                )
                .to_string(),
            );
            fractions_csv.push_str(&format!(
                "{t},{tau},{},{fraction}\n",
                diag.localization_delta
            ));
        }
    }

    // Dispersion series.
    let dispersion = dispersion_decay_report(
        source,
        gamma,
        &binning,
        diag.window_mass_fraction,
        diag.window_m_cap,
    );
    let mut dispersion_csv = String::from("t,tau,M,window_fraction,dispersion,defined\n");
    let dispersion_summary = match &dispersion {
        Ok(report) => {
            for p in &report.points {
                lines.push(
                    record(
                        p.time,
                        p.tau,
                        "dispersion",
                        json!({"M": p.m_window, "window_fraction": p.window_fraction}),
                        json!({"value": p.dispersion, "defined": p.defined}),
                    )
                    .to_string(),
                );
                dispersion_csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    p.time, p.tau, p.m_window, p.window_fraction, p.dispersion, p.defined
                ));
            }
            json!({
                "cumulative_integral": report.total,
                "plateau": report.plateau,
                "points": report.points.iter().map(|p| json!({
                    "t": p.time, "tau": p.tau, "M": p.m_window,
                    "window_fraction": p.window_fraction,
                    "value": p.dispersion, "defined": p.defined,
                })).collect::<Vec<_>>(),
            })
        }
        Err(e) => json!({"unavailable": e.to_string()}),
    };

    // Empirical localization schedule.
    let schedule = delta_schedule(source, gamma, &theta, diag.delta_target);
    let mut schedule_csv = String::from("t,delta,reached\n");
    let schedule_summary = match &schedule {
        Ok(s) => {
            for p in &s.points {
                schedule_csv.push_str(&format!("{},{},{}\n", p.time, p.delta, p.reached));
            }
            json!({
                "target": s.target,
                "non_increasing_last_half": s.non_increasing_last_half,
                "points": s.points.iter().map(|p| json!({
                    "t": p.time, "delta": p.delta, "reached": p.reached,
                })).collect::<Vec<_>>(),
            })
        }
        Err(e) => json!({"unavailable": e.to_string()}),
    };

    // Moment-scaling fits over the configured or default window.
    let t_end = source.time(source.len() - 1);
    let window = diag
        .fit_window
        .unwrap_or(((t_end / 10.0).max(1.0), t_end));
    let mut fits = Vec::new();
    for &k in &diag.moment_exponents {
        match moment_scaling_fit(source, k, gamma, window) {
            Ok(fit) => fits.push(json!({
                "k": k,
                "slope": fit.slope,
                "intercept": fit.intercept,
                "max_ratio": fit.max_ratio,
                "points": fit.points.len(),
            })),
            Err(e) => fits.push(json!({"k": k, "unavailable": e.to_string()})),
        }
    }

    let summary = json!({
        "theta0": theta,
        "m0": m0,
        "gamma": gamma,
        "simplex_resolution": resolution,
        "fit_window": [window.0, window.1],
        "moment_fits": fits,
        "localized_fractions": fractions,
        "localization_delta": diag.localization_delta,
        "delta_schedule": schedule_summary,
        "dispersion": dispersion_summary,
    });

    if diag.csv_mirrors {
        mirrors.insert("moments.csv".into(), moments_csv);
        mirrors.insert("localized_fraction.csv".into(), fractions_csv);
        mirrors.insert("dispersion.csv".into(), dispersion_csv);
        mirrors.insert("delta_schedule.csv".into(), schedule_csv);
    }

    let mut jsonl = lines.join("\n");
    jsonl.push('\n');
    Ok(DiagnosticsOutput {
        jsonl,
        summary,
        csv_mirrors: mirrors,
    })
}
