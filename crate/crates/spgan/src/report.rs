//! CSV and plain-text reports.
//!
//! Wall-clock time is deliberately left out of the training CSV so that
//! re-runs produce identical files; it goes to the log instead.

use std::path::Path;

use serde::Serialize;
use spgan_core::evaluation::{MetricReport, TABLE_COLUMNS};
use spgan_core::training::EpochRecord;

use crate::error::{io_err, Error, Result};
use crate::formats::write_text;

#[derive(Serialize)]
struct TrainRow {
    epoch: usize,
    l_reg: f64,
    l_adv: f64,
    l_d: f64,
    dp_real: f64,
    dp_fake: f64,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

fn to_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| csv_err(path, e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("CSV of numbers is UTF-8"))
}

pub fn format_train_csv(epochs: &[EpochRecord]) -> String {
    to_csv(
        Path::new("<memory>"),
        epochs.iter().map(|e| TrainRow {
            epoch: e.epoch,
            l_reg: e.l_reg,
            l_adv: e.l_adv,
            l_d: e.l_d,
            dp_real: e.dp_real,
            dp_fake: e.dp_fake,
        }),
    )
    .expect("in-memory CSV")
}

pub fn write_train_csv(path: &Path, epochs: &[EpochRecord]) -> Result<()> {
    write_text(path, &format_train_csv(epochs))
}

#[derive(Serialize)]
struct MetricRow<'a> {
    split: &'a str,
    bleu_4: f64,
    bleu_3: f64,
    bleu_2: f64,
    bleu_1: f64,
    rouge: f64,
    token_recovery: f64,
    temporal_variance: f64,
    truncated: usize,
    examples: usize,
}

pub fn format_metrics_csv(split: &str, r: &MetricReport) -> String {
    let row = MetricRow {
        split,
        bleu_4: r.bleu_4,
        bleu_3: r.bleu_3,
        bleu_2: r.bleu_2,
        bleu_1: r.bleu_1,
        rouge: r.rouge_l_f1,
        token_recovery: r.mean_token_recovery(),
        temporal_variance: r.temporal_variance,
        truncated: r.truncated,
        examples: r.token_recovery.len(),
    };
    to_csv(Path::new("<memory>"), [row]).expect("in-memory CSV")
}

/// Fixed-width table, scores as percentages with two decimals.
pub fn format_metrics_table(split: &str, r: &MetricReport) -> String {
    let mut out = format!("{:<8}", "split");
    for c in TABLE_COLUMNS {
        out.push_str(&format!(" {c:>8}"));
    }
    out.push('\n');
    out.push_str(&format!("{split:<8}"));
    for v in r.table_row() {
        out.push_str(&format!(" {:>8.2}", 100.0 * v));
    }
    out.push('\n');
    out
}

pub fn write_metrics(dir: &Path, split: &str, r: &MetricReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_text(&dir.join(format!("metrics_{split}.csv")), &format_metrics_csv(split, r))?;
    write_text(&dir.join(format!("metrics_{split}.txt")), &format_metrics_table(split, r))
}
