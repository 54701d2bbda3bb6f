//! Results emission: hourly and summary CSVs, plus the optional
//! iteration trace.
//!
//! Every numeric cell is written with six decimal places. Summary rows
//! are computed from the quantized hourly values (in row order), so
//! parsing the emitted files and re-aggregating reproduces the summary
//! byte for byte.

use std::fs;
use std::io;
use std::path::Path;

use crate::equilibrium::DailyResults;
use crate::network::NetworkCase;

/// Quantize to the emitted precision: the f64 that `{:.6}` parsing
/// returns for the formatted value.
pub fn q6(x: f64) -> f64 {
    format!("{x:.6}").parse().expect("fixed-point format always parses")
}

fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

/// Technology label for the summary: the distinct technologies of the
/// case's units, or "none" without DG.
pub fn technology_label(case: &NetworkCase) -> String {
    let mut tags: Vec<&str> = case.dg_units.iter().map(|u| u.technology.as_str()).collect();
    tags.sort_unstable();
    tags.dedup();
    if tags.is_empty() {
        "none".to_string()
    } else {
        tags.join("+")
    }
}

/// Write `hourly.csv` and `summary.csv` into `out_dir` (created if
/// missing).
pub fn export_results(
    results: &DailyResults,
    case: &NetworkCase,
    out_dir: impl AsRef<Path>,
) -> io::Result<()> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let n_classes = case.classes.len();

    let mut hourly = csv::Writer::from_path(out_dir.join("hourly.csv"))?;
    let mut header = vec![
        "hour".to_string(),
        "class".to_string(),
        "price".to_string(),
        "load_kw".to_string(),
        "p_wholesale_kw".to_string(),
    ];
    for unit in &case.dg_units {
        header.push(format!("p_dg_{}_kw", unit.id));
    }
    header.extend([
        "profit".to_string(),
        "loss_kw".to_string(),
        "iterations".to_string(),
        "converged".to_string(),
    ]);
    hourly.write_record(&header)?;

    // Quantized per-class accumulators for the summary.
    let mut profit_sum = vec![0.0f64; n_classes];
    let mut price_sum = vec![0.0f64; n_classes];
    let mut solved_hours = 0usize;

    for outcome in &results.hours {
        let eq = match outcome {
            Ok(eq) => eq,
            Err(_) => continue,
        };
        solved_hours += 1;
        for (c, decision) in eq.decisions.iter().enumerate() {
            let mut row = vec![
                eq.hour.to_string(),
                decision.class_id.clone(),
                fmt(decision.price),
                fmt(decision.load_kw),
                fmt(decision.p_wholesale),
            ];
            for &q in &decision.p_dg {
                row.push(fmt(q));
            }
            row.extend([
                fmt(decision.profit),
                fmt(eq.dispatch.total_loss_kw),
                eq.iterations.to_string(),
                eq.converged.to_string(),
            ]);
            hourly.write_record(&row)?;
            profit_sum[c] += q6(decision.profit);
            price_sum[c] += q6(decision.price);
        }
    }
    hourly.flush()?;

    let mut summary = csv::Writer::from_path(out_dir.join("summary.csv"))?;
    summary.write_record([
        "retailer",
        "technology",
        "daily_profit",
        "mean_price",
        "solved_hours",
        "partial",
    ])?;
    let tech = technology_label(case);
    for (c, class) in case.classes.iter().enumerate() {
        let mean_price = if solved_hours > 0 {
            price_sum[c] / solved_hours as f64
        } else {
            0.0
        };
        summary.write_record([
            class.as_str(),
            tech.as_str(),
            &fmt(q6(profit_sum[c])),
            &fmt(q6(mean_price)),
            &solved_hours.to_string(),
            &results.partial.to_string(),
        ])?;
    }
    summary.flush()?;
    Ok(())
}

/// Write `trace.csv`: one row per hour, iteration, and class.
pub fn export_trace(
    results: &DailyResults,
    case: &NetworkCase,
    out_dir: impl AsRef<Path>,
) -> io::Result<()> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let mut trace = csv::Writer::from_path(out_dir.join("trace.csv"))?;
    trace.write_record([
        "hour",
        "iteration",
        "class",
        "price",
        "proposed_price",
        "total_dg_kw",
        "p_wholesale_kw",
        "loss_kw",
    ])?;
    for outcome in &results.hours {
        let eq = match outcome {
            Ok(eq) => eq,
            Err(_) => continue,
        };
        for step in &eq.price_trace {
            for (c, class) in case.classes.iter().enumerate() {
                trace.write_record([
                    eq.hour.to_string(),
                    step.iteration.to_string(),
                    class.clone(),
                    fmt(step.class_prices[c]),
                    fmt(step.proposed_prices[c]),
                    fmt(step.total_dg_kw),
                    fmt(step.p_wholesale_kw),
                    fmt(step.loss_kw),
                ])?;
            }
        }
    }
    trace.flush()?;
    Ok(())
}

/// Report per-hour failures on stderr; returns how many there were.
pub fn report_failures(results: &DailyResults) -> usize {
    let mut failures = 0;
    for outcome in &results.hours {
        if let Err(failure) = outcome {
            eprintln!("hour {}: {}", failure.hour, failure.message);
            failures += 1;
        }
    }
    failures
}
