//! The `report` table: every CSV this tool writes, flattened into rows of
//! `source,kind,snr_db,metric,value`.

use anyhow::{bail, Context, Result};
use pcsc_core::eval::SweepResult;
use pcsc_core::training::TrainReport;
use serde::{Deserialize, Serialize};

pub const HEADER: [&str; 5] = ["source", "kind", "snr_db", "metric", "value"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub source: String,
    pub kind: String,
    /// Empty for rows that are not tied to one SNR.
    pub snr_db: Option<f64>,
    pub metric: String,
    pub value: f64,
}

fn row(source: &str, kind: &str, snr_db: Option<f64>, metric: &str, value: f64) -> Row {
    Row {
        source: source.to_string(),
        kind: kind.to_string(),
        snr_db,
        metric: metric.to_string(),
        value,
    }
}

fn first_data_line(text: &str) -> &str {
    text.lines().find(|l| !l.starts_with('#')).unwrap_or("")
}

/// Rows of one CSV written by this tool, recognized by its header.
pub fn rows_from_csv(source: &str, text: &str) -> Result<Vec<Row>> {
    let header = first_data_line(text);
    if header.starts_with("snr_db,accuracy,") {
        let sweep = SweepResult::from_csv(text)?;
        let mut rows: Vec<Row> = sweep
            .rows
            .iter()
            .map(|r| row(source, "sweep", Some(r.snr_db), "accuracy", r.accuracy))
            .collect();
        if !sweep.rows.is_empty() {
            rows.push(row(source, "sweep", None, "mean_accuracy", sweep.mean_accuracy()));
        }
        Ok(rows)
    } else if header.starts_with("stage,epoch,") {
        let rep = TrainReport::from_csv(text)?;
        let kind = format!("train_{}", rep.stage.name());
        let Some(last) = rep.records.last() else {
            return Ok(Vec::new());
        };
        let mut rows = vec![
            row(source, &kind, None, "epochs", rep.records.len() as f64),
            row(source, &kind, None, "final_loss", last.loss),
            row(source, &kind, None, "final_train_accuracy", last.train_accuracy),
        ];
        if let Some(probes) = rep.final_probes() {
            for (snr, acc) in rep.probe_snrs.iter().zip(probes) {
                rows.push(row(source, &kind, Some(*snr), "test_accuracy", *acc));
            }
        }
        Ok(rows)
    } else if header.starts_with("n_clouds,") {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut rows = Vec::new();
        let names = rdr.headers()?.clone();
        for rec in rdr.records() {
            let rec = rec?;
            for (name, v) in names.iter().zip(rec.iter()) {
                let v: f64 = v.parse().with_context(|| format!("bench column {name}"))?;
                rows.push(row(source, "bench", None, name, v));
            }
        }
        Ok(rows)
    } else if header == HEADER.join(",") {
        parse_table(text)
    } else {
        bail!("unrecognized CSV header {header:?}")
    }
}

/// External baseline numbers: `method,snr_db,accuracy` per line.
pub fn baseline_rows(text: &str) -> Result<Vec<Row>> {
    #[derive(Deserialize)]
    struct B {
        method: String,
        snr_db: f64,
        accuracy: f64,
    }
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    rdr.deserialize::<B>()
        .map(|b| {
            let b = b?;
            Ok(row(&b.method, "baseline", Some(b.snr_db), "accuracy", b.accuracy))
        })
        .collect()
}

pub fn parse_table(text: &str) -> Result<Vec<Row>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<Row>, _>>()?)
}

pub fn to_csv(rows: &[Row]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(HEADER)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
