//! Report aggregation across seeds and CSV cell formatting.
//!
//! Undefined metrics print as "--", mirroring how collapsed models are
//! reported in the result tables this pipeline feeds.

use vlbc_core::fairness::{aggregate, AggregateReport, FairnessReport, MeanStd};

use crate::error::{HarnessError, Result};
use crate::runner::ReportRow;

pub fn csv_cell(value: f64) -> String {
    format!("{value}")
}

pub fn csv_opt_cell(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v}"),
        None => "--".to_string(),
    }
}

fn mean_std_cells(ms: Option<MeanStd>) -> (String, String) {
    match ms {
        Some(ms) => (format!("{}", ms.mean), format!("{}", ms.std)),
        None => ("--".to_string(), "--".to_string()),
    }
}

/// Parse the per-seed rows back out of a reports.csv produced by a run.
pub fn parse_reports_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| HarnessError::Format("empty reports csv".into()))?;
    if header != "task,method,seed,accuracy,f1,acc_diff,delta_a,delta_m" {
        return Err(HarnessError::Format(format!(
            "unexpected reports header '{header}'"
        )));
    }
    let parse_opt = |tok: &str| -> Result<Option<f64>> {
        if tok == "--" {
            Ok(None)
        } else {
            tok.parse::<f64>()
                .map(Some)
                .map_err(|_| HarnessError::Format(format!("bad metric '{tok}'")))
        }
    };
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 8 {
            return Err(HarnessError::Format(format!(
                "report row has {} cells",
                cells.len()
            )));
        }
        let report = FairnessReport {
            accuracy: cells[3]
                .parse()
                .map_err(|_| HarnessError::Format("bad accuracy".into()))?,
            f1: cells[4]
                .parse()
                .map_err(|_| HarnessError::Format("bad f1".into()))?,
            f1_defined: true,
            acc_diff: parse_opt(cells[2 + 3])?,
            delta_a: parse_opt(cells[6])?,
            delta_m: parse_opt(cells[7])?,
            excluded_classes: [false; 2],
            group_sizes: [0, 0],
        };
        rows.push(ReportRow {
            task: cells[0].to_string(),
            method: cells[1].to_string(),
            seed: cells[2]
                .parse()
                .map_err(|_| HarnessError::Format("bad seed".into()))?,
            report,
        });
    }
    Ok(rows)
}

/// Aggregate per-seed rows into one mean/std row per (task, method).
pub fn aggregate_rows(rows: &[ReportRow]) -> Result<Vec<(String, String, AggregateReport)>> {
    let mut groups: Vec<(String, String, Vec<FairnessReport>)> = Vec::new();
    for row in rows {
        match groups
            .iter_mut()
            .find(|(task, method, _)| task == &row.task && method == &row.method)
        {
            Some((_, _, reports)) => reports.push(row.report.clone()),
            None => groups.push((row.task.clone(), row.method.clone(), vec![row.report.clone()])),
        }
    }
    groups
        .into_iter()
        .map(|(task, method, reports)| Ok((task, method, aggregate(&reports)?)))
        .collect()
}

/// Render the aggregate CSV, mean and std side by side per metric in the
/// table column order.
pub fn aggregate_csv(groups: &[(String, String, AggregateReport)]) -> String {
    let mut out = String::from(
        "task,method,runs,accuracy_mean,accuracy_std,f1_mean,f1_std,\
         acc_diff_mean,acc_diff_std,delta_a_mean,delta_a_std,delta_m_mean,delta_m_std\n",
    );
    for (task, method, agg) in groups {
        let (ad_m, ad_s) = mean_std_cells(agg.acc_diff);
        let (da_m, da_s) = mean_std_cells(agg.delta_a);
        let (dm_m, dm_s) = mean_std_cells(agg.delta_m);
        out.push_str(&format!(
            "{task},{method},{},{},{},{},{},{ad_m},{ad_s},{da_m},{da_s},{dm_m},{dm_s}\n",
            agg.runs,
            csv_cell(agg.accuracy.mean),
            csv_cell(agg.accuracy.std),
            csv_cell(agg.f1.mean),
            csv_cell(agg.f1.std),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::reports_csv;

    fn row(method: &str, seed: u64, accuracy: f64, acc_diff: Option<f64>) -> ReportRow {
        ReportRow {
            task: "attr0".to_string(),
            method: method.to_string(),
            seed,
            report: FairnessReport {
                accuracy,
                f1: 50.0,
                f1_defined: true,
                acc_diff,
                delta_a: Some(4.0),
                delta_m: Some(6.0),
                excluded_classes: [false; 2],
                group_sizes: [10, 10],
            },
        }
    }

    #[test]
    fn csv_round_trip_preserves_rows() {
        let rows = vec![
            row("baseline", 1, 91.25, Some(10.5)),
            row("baseline", 2, 90.75, None),
        ];
        let text = reports_csv(&rows);
        let back = parse_reports_csv(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].seed, 1);
        assert_eq!(back[0].report.accuracy, 91.25);
        assert_eq!(back[1].report.acc_diff, None);
    }

    #[test]
    fn aggregation_groups_by_task_and_method() {
        let rows = vec![
            row("baseline", 1, 90.0, Some(10.0)),
            row("baseline", 2, 92.0, Some(14.0)),
            row("vlbc_minus", 1, 91.0, Some(5.0)),
        ];
        let groups = aggregate_rows(&rows).unwrap();
        assert_eq!(groups.len(), 2);
        let (_, _, base) = &groups[0];
        assert_eq!(base.runs, 2);
        assert!((base.accuracy.mean - 91.0).abs() < 1e-12);
        assert!((base.acc_diff.unwrap().mean - 12.0).abs() < 1e-12);
        let csv = aggregate_csv(&groups);
        assert!(csv.contains("baseline"));
        assert!(csv.contains("vlbc_minus"));
    }
}
