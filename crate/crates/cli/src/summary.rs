// SPDX-License-Identifier: Apache-2.0

//! Text summaries of sweep CSV files.

use std::fmt::Write as _;

use crate::sweep::{AGGREGATE_COLUMNS, AGGREGATE_MARKER, REALISATION_COLUMNS};
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryPoint {
    pub tau_block: f64,
    pub tau_attestation: f64,
    pub realisations: usize,
    pub failures: usize,
    pub mu_mean: f64,
    pub mu_sd: f64,
    pub f_mean: f64,
    pub f_sd: f64,
    pub threshold_margin: f64,
    pub predicted_threshold_margin: Option<f64>,
}

fn parse_err(line: usize, msg: impl Into<String>) -> CliError {
    CliError::Csv {
        line,
        msg: msg.into(),
    }
}

/// Reads the aggregate section of a sweep CSV, validating the realisation
/// section's shape on the way.
pub fn parse_aggregates(csv: &str) -> Result<Vec<SummaryPoint>, CliError> {
    let mut in_aggregate = false;
    let mut header_seen = false;
    let mut points = Vec::new();
    for (idx, raw) in csv.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line == AGGREGATE_MARKER {
            in_aggregate = true;
            header_seen = false;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let columns = if in_aggregate {
            AGGREGATE_COLUMNS
        } else {
            REALISATION_COLUMNS
        };
        if !header_seen {
            if fields != columns {
                return Err(parse_err(
                    line_no,
                    format!("expected header {:?}", columns.join(",")),
                ));
            }
            header_seen = true;
            continue;
        }
        if fields.len() != columns.len() {
            return Err(parse_err(
                line_no,
                format!("expected {} fields, got {}", columns.len(), fields.len()),
            ));
        }
        if !in_aggregate {
            for (name, value) in columns.iter().zip(&fields) {
                if !(value.is_empty() && *name == "predicted_diameter") {
                    value
                        .parse::<f64>()
                        .map_err(|_| parse_err(line_no, format!("{name}: bad number {value:?}")))?;
                }
            }
            continue;
        }
        let num = |i: usize| -> Result<f64, CliError> {
            fields[i].parse::<f64>().map_err(|_| {
                parse_err(
                    line_no,
                    format!("{}: bad number {:?}", AGGREGATE_COLUMNS[i], fields[i]),
                )
            })
        };
        let count = |i: usize| -> Result<usize, CliError> {
            fields[i].parse::<usize>().map_err(|_| {
                parse_err(
                    line_no,
                    format!("{}: bad count {:?}", AGGREGATE_COLUMNS[i], fields[i]),
                )
            })
        };
        points.push(SummaryPoint {
            tau_block: num(1)?,
            tau_attestation: num(2)?,
            realisations: count(3)?,
            failures: count(4)?,
            mu_mean: num(5)?,
            mu_sd: num(6)?,
            f_mean: num(7)?,
            f_sd: num(8)?,
            threshold_margin: num(9)?,
            predicted_threshold_margin: if fields[10].is_empty() {
                None
            } else {
                Some(num(10)?)
            },
        });
    }
    Ok(points)
}

/// For each consecutive pair whose margin changes sign, the index of the
/// member closer to zero.
fn crossings(margins: &[Option<f64>]) -> Vec<usize> {
    let mut out = Vec::new();
    for i in 1..margins.len() {
        if let (Some(a), Some(b)) = (margins[i - 1], margins[i]) {
            if (a < 0.0) != (b < 0.0) {
                out.push(if a.abs() <= b.abs() { i - 1 } else { i });
            }
        }
    }
    out
}

/// Per grid point `mean ± sd` of mu and F. Points where the threshold
/// margin changes sign are flagged, separately for the measured diameter
/// and for the ER estimate.
pub fn summarize(csv: &str) -> Result<String, CliError> {
    let points = parse_aggregates(csv)?;
    if points.is_empty() {
        return Ok("no data\n".to_string());
    }

    // Consecutive points sharing the untouched latency form one series.
    let mut series: Vec<Vec<&SummaryPoint>> = Vec::new();
    for p in &points {
        let same_series = series.last().and_then(|s| s.last()).is_some_and(|last| {
            let (a, b) = (last, p);
            a.tau_attestation == b.tau_attestation && a.tau_block != b.tau_block
                || a.tau_block == b.tau_block && a.tau_attestation != b.tau_attestation
        });
        if same_series {
            series.last_mut().expect("non-empty").push(p);
        } else {
            series.push(vec![p]);
        }
    }

    let mut out = String::new();
    for s in series {
        let measured = crossings(&s.iter().map(|p| Some(p.threshold_margin)).collect::<Vec<_>>());
        let predicted =
            crossings(&s.iter().map(|p| p.predicted_threshold_margin).collect::<Vec<_>>());
        for (i, p) in s.iter().enumerate() {
            let _ = write!(
                out,
                "tau_block={:<10} tau_attestation={:<10} mu={:.4}±{:.4} F={:.4}±{:.4} n={}",
                fmt_g(p.tau_block),
                fmt_g(p.tau_attestation),
                p.mu_mean,
                p.mu_sd,
                p.f_mean,
                p.f_sd,
                p.realisations
            );
            if p.failures > 0 {
                let _ = write!(out, " failed={}", p.failures);
            }
            if measured.contains(&i) {
                out.push_str(" [threshold crossing: measured diameter]");
            }
            if predicted.contains(&i) {
                out.push_str(" [threshold crossing: ER estimate]");
            }
            out.push('\n');
        }
    }
    Ok(out)
}

fn fmt_g(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "# gasper-abm sweep schema=1\n\
        seed,n,avg_degree,tau_block,tau_attestation,slot_duration,horizon,total_blocks,mainchain_blocks,mu,F,diameter,predicted_diameter,threshold_margin\n";

    fn agg_header() -> String {
        format!("{AGGREGATE_MARKER}\n{}\n", AGGREGATE_COLUMNS.join(","))
    }

    #[test]
    fn empty_aggregate_is_no_data() {
        let csv = format!("{HEADER}{}", agg_header());
        assert_eq!(summarize(&csv).unwrap(), "no data\n");
    }

    #[test]
    fn single_point_single_line() {
        let csv = format!(
            "{HEADER}1,8,2,0.5,1,12,48,5,5,1,0,2,,-11\n{}0,0.5,1,1,0,1,0,0,0,-11,\n",
            agg_header()
        );
        let text = summarize(&csv).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.contains("mu=1.0000±0.0000"), "{text}");
    }

    #[test]
    fn flags_nearest_point_of_crossing() {
        let d = 2.33;
        let mut rows = String::new();
        let taus = [1.0, 2.0, 4.44, 6.49, 9.49];
        for (i, t) in taus.iter().enumerate() {
            let _ = writeln!(
                rows,
                "{i},{t},1,20,0,1,0,0,0,{},{}",
                4.0 * t - 12.0,
                d * t - 12.0
            );
        }
        let csv = format!("{HEADER}{}{rows}", agg_header());
        let text = summarize(&csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[1].contains("measured diameter"));
        assert!(lines[2].contains("ER estimate"));
        assert!(!lines[3].contains("crossing"));
    }

    #[test]
    fn malformed_csv_names_line() {
        let csv = format!("{HEADER}1,2,3\n");
        assert!(matches!(
            summarize(&csv),
            Err(CliError::Csv { line: 3, .. })
        ));
        let csv = format!("{HEADER}{}0,x,1,1,0,1,0,0,0,-11,\n", agg_header());
        assert!(matches!(
            summarize(&csv),
            Err(CliError::Csv { line: 5, .. })
        ));
        assert!(matches!(
            summarize("a,b\n"),
            Err(CliError::Csv { line: 1, .. })
        ));
    }
}
