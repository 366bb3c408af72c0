//! Comparison reports: a Table-1-style accuracy grid with validation and
//! (train) values, a CSV export, and a timing breakdown with speedups.

use anyhow::{bail, Result};
use ddclass_core::pipeline::{PipelineKind, RunReport};

/// One summary row of the CSV export.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub pipeline: String,
    pub model: String,
    pub grid: String,
    pub dataset: String,
    pub seed: u64,
    pub val_accuracy: f64,
    pub train_accuracy: f64,
    pub local_seconds_max: f64,
    pub local_seconds_sum: f64,
    pub finetune_seconds: f64,
    pub total_seconds: f64,
    pub fair_budget: bool,
}

pub const CSV_HEADER: &str = "pipeline,model,grid,dataset,seed,val_accuracy,train_accuracy,local_seconds_max,local_seconds_sum,finetune_seconds,total_seconds,fair_budget";

fn grid_string(grid: &[usize]) -> String {
    grid.iter().map(|g| g.to_string()).collect::<Vec<_>>().join("x")
}

fn phase_seconds(report: &RunReport, phase: &str) -> (f64, f64) {
    report
        .phase_times
        .iter()
        .find(|p| p.phase == phase)
        .map(|p| (p.seconds_max, p.seconds_sum))
        .unwrap_or((0.0, 0.0))
}

/// The phase that dominates each pipeline's "fine-tuning / fitting" cost.
fn finetune_phase(pipeline: &str) -> &'static str {
    match pipeline {
        "global-cnn" => "baseline",
        "cnn-dnn-transfer" | "dd-cnn-transfer" => "transfer",
        "global-lda" => "fit",
        _ => "head",
    }
}

impl SummaryRow {
    pub fn from_report(report: &RunReport) -> SummaryRow {
        let (local_max, local_sum) = phase_seconds(report, "local");
        let (finetune, _) = phase_seconds(report, finetune_phase(&report.pipeline));
        let total: f64 = report.phase_times.iter().map(|p| p.seconds_max).sum();
        SummaryRow {
            pipeline: report.pipeline.clone(),
            model: report.model.clone(),
            grid: grid_string(&report.grid),
            dataset: report.dataset_id.clone(),
            seed: report.seed,
            val_accuracy: report.final_val_accuracy,
            train_accuracy: report.final_train_accuracy,
            local_seconds_max: local_max,
            local_seconds_sum: local_sum,
            finetune_seconds: finetune,
            total_seconds: total,
            fair_budget: report.fair_budget,
        }
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{:.4},{:.4},{:.3},{:.3},{:.3},{:.3},{}",
            self.pipeline,
            self.model,
            self.grid,
            self.dataset,
            self.seed,
            self.val_accuracy,
            self.train_accuracy,
            self.local_seconds_max,
            self.local_seconds_sum,
            self.finetune_seconds,
            self.total_seconds,
            self.fair_budget
        )
    }

    pub fn from_csv_line(line: &str) -> Result<SummaryRow> {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 12 {
            bail!("expected 12 CSV fields, got {}", parts.len());
        }
        Ok(SummaryRow {
            pipeline: parts[0].to_string(),
            model: parts[1].to_string(),
            grid: parts[2].to_string(),
            dataset: parts[3].to_string(),
            seed: parts[4].parse()?,
            val_accuracy: parts[5].parse()?,
            train_accuracy: parts[6].parse()?,
            local_seconds_max: parts[7].parse()?,
            local_seconds_sum: parts[8].parse()?,
            finetune_seconds: parts[9].parse()?,
            total_seconds: parts[10].parse()?,
            fair_budget: parts[11].parse()?,
        })
    }
}

/// Rows to CSV text (header + one line per row).
pub fn rows_to_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv_line());
        out.push('\n');
    }
    out
}

/// Parse CSV text produced by [`rows_to_csv`].
pub fn rows_from_csv(text: &str) -> Result<Vec<SummaryRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => bail!("bad CSV header: {other:?}"),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(SummaryRow::from_csv_line)
        .collect()
}

/// Render the merged comparison: accuracy grid, timing breakdown, and
/// speedups over the baseline. All reports must describe the same dataset.
pub fn write_report(reports: &[RunReport]) -> Result<(String, Vec<SummaryRow>)> {
    if reports.is_empty() {
        bail!("no reports to merge");
    }
    let dataset = &reports[0].dataset_id;
    for r in reports {
        if &r.dataset_id != dataset {
            bail!(
                "incompatible reports: dataset `{}` vs `{}`",
                dataset,
                r.dataset_id
            );
        }
    }
    let rows: Vec<SummaryRow> = reports.iter().map(SummaryRow::from_report).collect();

    let mut text = String::new();
    text.push_str(&format!("dataset: {dataset}\n\n"));

    // Accuracy grid: one row per (model, grid) setting, validation accuracy
    // with the training accuracy in brackets.
    let mut settings: Vec<(String, String)> = Vec::new();
    for row in &rows {
        let key = (row.model.clone(), row.grid.clone());
        if !settings.contains(&key) {
            settings.push(key);
        }
    }
    let columns: Vec<&str> = PipelineKind::all().iter().map(|p| p.name()).collect();
    let setting_width = settings
        .iter()
        .map(|(m, g)| format!("{m} {g}").len())
        .max()
        .unwrap_or(10)
        .max("decomp.".len());
    text.push_str(&format!("{:<setting_width$}", "decomp."));
    for c in &columns {
        text.push_str(&format!(" | {c:>18}"));
    }
    text.push('\n');
    text.push_str(&"-".repeat(setting_width + columns.len() * 21));
    text.push('\n');
    for (model, grid) in &settings {
        text.push_str(&format!("{:<setting_width$}", format!("{model} {grid}")));
        for col in &columns {
            let cell = rows
                .iter()
                .find(|r| &r.pipeline == col && &r.model == model && &r.grid == grid)
                .map(|r| format!("{:.4} ({:.4})", r.val_accuracy, r.train_accuracy))
                .unwrap_or_else(|| "-".to_string());
            text.push_str(&format!(" | {cell:>18}"));
        }
        text.push('\n');
    }

    // Timing breakdown.
    text.push_str("\ntiming (seconds):\n");
    for row in &rows {
        text.push_str(&format!(
            "  {:<18} {:<12} local max {:>8.3} | local sum {:>8.3} | finetune {:>8.3} | total {:>8.3}\n",
            row.pipeline,
            row.grid,
            row.local_seconds_max,
            row.local_seconds_sum,
            row.finetune_seconds,
            row.total_seconds
        ));
    }

    // Speedup of each transfer pipeline against the monolithic baseline,
    // counting the parallel (max-over-workers) local time.
    if let Some(baseline) = rows.iter().find(|r| r.pipeline == "global-cnn") {
        let base = baseline.finetune_seconds;
        let mut lines = Vec::new();
        for row in &rows {
            if row.pipeline == "cnn-dnn-transfer" || row.pipeline == "dd-cnn-transfer" {
                let cost = row.local_seconds_max + row.finetune_seconds;
                if cost > 0.0 && base > 0.0 {
                    lines.push(format!(
                        "  {} {}: {:.2}x (baseline {:.3} s vs local-max {:.3} + finetune {:.3} s)",
                        row.pipeline, row.grid, base / cost, base, row.local_seconds_max, row.finetune_seconds
                    ));
                }
            }
        }
        if !lines.is_empty() {
            text.push_str("\nspeedup vs global baseline:\n");
            for l in lines {
                text.push_str(&l);
                text.push('\n');
            }
        }
    }

    Ok((text, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ddclass_core::pipeline::PhaseTime;

    fn report(pipeline: &str, val: f64) -> RunReport {
        RunReport {
            pipeline: pipeline.to_string(),
            dataset_id: "synthetic:test".into(),
            model: "vgg9".into(),
            grid: vec![2, 2],
            seed: 1,
            fair_budget: true,
            epochs: vec![],
            final_train_accuracy: val + 0.1,
            final_val_accuracy: val,
            phase_times: vec![
                PhaseTime { phase: "local".into(), seconds_max: 1.0, seconds_sum: 3.5 },
                PhaseTime { phase: "transfer".into(), seconds_max: 2.0, seconds_sum: 2.0 },
                PhaseTime { phase: "baseline".into(), seconds_max: 6.0, seconds_sum: 6.0 },
            ],
            parameter_counts: Default::default(),
            artifact: None,
        }
    }

    #[test]
    fn single_report_renders_one_row() {
        let (text, rows) = write_report(&[report("global-cnn", 0.8)]).unwrap();
        assert!(text.contains("vgg9 2x2"));
        assert!(text.contains("0.8000 (0.9000)"));
        assert_eq!(rows.len(), 1);
    }

    #[test]
    fn speedup_is_printed_for_transfers() {
        let (text, _) = write_report(&[report("global-cnn", 0.7), report("cnn-dnn-transfer", 0.8)]).unwrap();
        assert!(text.contains("speedup"), "{text}");
        assert!(text.contains("2.00x"), "{text}");
    }

    #[test]
    fn incompatible_datasets_rejected() {
        let mut other = report("lda-dnn", 0.5);
        other.dataset_id = "something-else".into();
        assert!(write_report(&[report("global-cnn", 0.7), other]).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let rows: Vec<SummaryRow> = [report("global-cnn", 0.7), report("lda-dnn", 0.6)]
            .iter()
            .map(SummaryRow::from_report)
            .collect();
        let csv = rows_to_csv(&rows);
        let back = rows_from_csv(&csv).unwrap();
        assert_eq!(rows, back);
        assert_eq!(rows_to_csv(&back), csv);
    }
}
