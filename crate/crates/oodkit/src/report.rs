//! JSON and CSV renderings of scores and reports.
//!
//! Every writer produces bytes that depend only on its input: JSON objects
//! keep struct field order (maps are sorted), floats print in shortest
//! round-trip form, and CSV rows follow the report's own order.
//!
//! CSV schemas (all with a header row):
//!
//! * scores: `population,index,score`, plus `decision` (`id`/`ood`) when a threshold is given
//! * sweep rows: `point,label,series,axis,rule,tau,dataset,auroc,fpr95,threshold_at_tpr95,n_id,n_ood`;
//!   per-dataset rows first, then one `dataset = mean` row per (point, rule, tau)
//!   with the threshold and counts left empty
//! * sweep points: `index,label,series,axis,bundle_digest,<extra keys sorted>`
//! * distributions: `report,population,series,kind,index,x0,x1,y`

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::Path;

use oodkit_core::insight::{DistributionRow, RowKind};
use oodkit_core::sweep::EvalReport;
use oodkit_core::scoring::{decide, Decision};
use oodkit_core::BundleScores;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("scores file: {0}")]
    Format(String),
}

pub fn json_string<T: Serialize + ?Sized>(value: &T) -> Result<String, serde_json::Error> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), ReportError> {
    std::fs::write(path, json_string(value)?)?;
    Ok(())
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String, ReportError> {
    let bytes = w.into_inner().map_err(|e| io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is built from UTF-8 strings"))
}

/// With `lambda`, each row also gets a `decision` column (`id` iff
/// `score >= lambda`).
pub fn scores_csv(scores: &BundleScores, lambda: Option<f64>) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["population", "index", "score"];
    if lambda.is_some() {
        header.push("decision");
    }
    w.write_record(&header)?;
    let populations = std::iter::once(("id", &scores.id)).chain(scores.ood.iter().map(|(k, v)| (k.as_str(), v)));
    for (population, values) in populations {
        for (i, v) in values.iter().enumerate() {
            let mut rec = vec![population.to_string(), i.to_string(), v.to_string()];
            if let Some(l) = lambda {
                rec.push(match decide(*v, l) {
                    Decision::Id => "id".into(),
                    Decision::Ood => "ood".into(),
                });
            }
            w.write_record(&rec)?;
        }
    }
    finish(w)
}

/// Reads a scores CSV back into per-population vectors, `id` included. A
/// trailing `decision` column is ignored.
pub fn parse_scores_csv(text: &str) -> Result<BTreeMap<String, Vec<f64>>, ReportError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names != ["population", "index", "score"] && names != ["population", "index", "score", "decision"] {
        return Err(ReportError::Format("expected header population,index,score[,decision]".into()));
    }
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let bad = |what: &str| ReportError::Format(format!("data row {}: {what}", line + 1));
        let index: usize = record[1].parse().map_err(|_| bad("index is not an integer"))?;
        let score: f64 = record[2].parse().map_err(|_| bad("score is not a number"))?;
        let values = out.entry(record[0].to_string()).or_default();
        if index != values.len() {
            return Err(bad("indices must count up from 0 within each population"));
        }
        values.push(score);
    }
    Ok(out)
}

pub fn report_csv(report: &EvalReport) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "point", "label", "series", "axis", "rule", "tau", "dataset", "auroc", "fpr95", "threshold_at_tpr95", "n_id", "n_ood",
    ])?;
    for row in &report.rows {
        let p = &report.points[row.point];
        let m = &row.metrics;
        w.write_record([
            row.point.to_string(),
            p.label.clone(),
            opt(p.series.as_ref()),
            opt(p.axis),
            row.rule.to_string(),
            row.tau.to_string(),
            row.dataset.clone(),
            m.auroc.to_string(),
            m.fpr95.to_string(),
            m.threshold_at_tpr95.to_string(),
            m.n_id.to_string(),
            m.n_ood.to_string(),
        ])?;
    }
    for avg in &report.averages {
        let p = &report.points[avg.point];
        w.write_record([
            avg.point.to_string(),
            p.label.clone(),
            opt(p.series.as_ref()),
            opt(p.axis),
            avg.rule.to_string(),
            avg.tau.to_string(),
            "mean".to_string(),
            avg.auroc.to_string(),
            avg.fpr95.to_string(),
            String::new(),
            String::new(),
            String::new(),
        ])?;
    }
    finish(w)
}

pub fn points_csv(report: &EvalReport) -> Result<String, ReportError> {
    let keys: BTreeSet<&str> = report.points.iter().flat_map(|p| p.extra.keys().map(String::as_str)).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["index", "label", "series", "axis", "bundle_digest"];
    header.extend(keys.iter().copied());
    w.write_record(&header)?;
    for p in &report.points {
        let mut rec = vec![p.index.to_string(), p.label.clone(), opt(p.series.as_ref()), opt(p.axis), p.bundle_digest.clone()];
        rec.extend(keys.iter().map(|k| opt(p.extra.get(*k))));
        w.write_record(&rec)?;
    }
    finish(w)
}

pub fn distributions_csv(rows: &[DistributionRow]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["report", "population", "series", "kind", "index", "x0", "x1", "y"])?;
    for r in rows {
        let kind = match r.kind {
            RowKind::Hist => "hist",
            RowKind::Cdf => "cdf",
        };
        w.write_record([
            r.report,
            &r.population,
            &r.series,
            kind,
            &r.index.to_string(),
            &r.x0.to_string(),
            &r.x1.to_string(),
            &r.y.to_string(),
        ])?;
    }
    finish(w)
}
