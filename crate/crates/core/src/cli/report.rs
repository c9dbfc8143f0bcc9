use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::experiments::{Outputs, RunReport, SharpnessRow};
use crate::metrics::{overlap_histogram, Aggregates, MetricsReport, Provenance, SequenceMetrics};

#[derive(Clone, Debug, PartialEq)]
pub enum Report {
    Metrics(MetricsReport),
    Run(RunReport),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl Report {
    /// A metrics or experiment report in JSON, or a metrics CSV.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "csv") {
            return Ok(Report::Metrics(metrics_from_csv(&text)?));
        }
        if let Ok(m) = serde_json::from_str::<MetricsReport>(&text) {
            return Ok(Report::Metrics(m));
        }
        serde_json::from_str::<RunReport>(&text)
            .map(Report::Run)
            .map_err(|e| Error::format(path, format!("neither a metrics nor an experiment report: {e}")))
    }

    fn is_empty(&self) -> bool {
        match self {
            Report::Metrics(m) => m.records.is_empty(),
            Report::Run(r) => r.outputs.tables().values().all(|rows| rows.len() <= 1),
        }
    }
}

const METRIC_COLUMNS: [&str; 8] =
    ["index", "length", "ttr", "self_bleu", "dataset_bleu", "overlap", "nll_sum", "nll_tokens"];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-sequence rows, preceded by `#` comment lines carrying provenance and
/// the TTR window. Floats use shortest round-trip formatting.
pub fn metrics_to_csv(m: &MetricsReport) -> Result<String> {
    let mut out = String::new();
    let p = &m.provenance;
    for (k, v) in [
        ("ttr_window", m.ttr_window.to_string()),
        ("model_id", p.model_id.clone()),
        ("dataset_id", p.dataset_id.clone()),
        ("config_hash", p.config_hash.clone()),
        ("bleu_variant", p.bleu_variant.clone()),
    ] {
        writeln!(out, "# {k}={v}").expect("string write");
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRIC_COLUMNS)?;
    for r in &m.records {
        w.write_record([
            r.index.to_string(),
            r.length.to_string(),
            r.ttr.to_string(),
            opt(r.self_bleu),
            opt(r.dataset_bleu),
            opt(r.overlap),
            opt(r.nll_sum),
            opt(r.nll_tokens),
        ])?;
    }
    let body = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    out.push_str(&String::from_utf8(body).expect("csv is utf-8"));
    Ok(out)
}

pub fn metrics_from_csv(text: &str) -> Result<MetricsReport> {
    let mut provenance = Provenance::default();
    let mut window = None;
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        if let Some((k, v)) = line[1..].trim_start().split_once('=') {
            match k {
                "ttr_window" => window = v.parse().ok(),
                "model_id" => provenance.model_id = v.into(),
                "dataset_id" => provenance.dataset_id = v.into(),
                "config_hash" => provenance.config_hash = v.into(),
                "bleu_variant" => provenance.bleu_variant = v.into(),
                _ => {}
            }
        }
    }
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let mut records = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).filter(|s| !s.is_empty());
        let num = |i: usize| -> Result<Option<f64>> {
            field(i).map(|s| s.parse().map_err(|_| Error::Invalid(format!("bad number {s:?}")))).transpose()
        };
        let int = |i: usize| -> Result<Option<usize>> {
            field(i).map(|s| s.parse().map_err(|_| Error::Invalid(format!("bad integer {s:?}")))).transpose()
        };
        records.push(SequenceMetrics {
            index: int(0)?.ok_or_else(|| Error::Invalid("missing index".into()))?,
            length: int(1)?.ok_or_else(|| Error::Invalid("missing length".into()))?,
            ttr: num(2)?.ok_or_else(|| Error::Invalid("missing ttr".into()))?,
            self_bleu: num(3)?,
            dataset_bleu: num(4)?,
            overlap: int(5)?,
            nll_sum: num(6)?,
            nll_tokens: int(7)?,
        });
    }
    let aggregates = Aggregates::from_records(&records)?;
    let ttr_window = window.ok_or_else(|| Error::Invalid("metrics CSV lacks ttr_window".into()))?;
    Ok(MetricsReport { provenance, ttr_window, records, aggregates })
}

pub(crate) fn overlap_histogram_rows(m: &MetricsReport) -> Option<Vec<Vec<String>>> {
    let lens: Option<Vec<usize>> = m.records.iter().map(|r| r.overlap).collect();
    let lens = lens.filter(|l| !l.is_empty())?;
    let mut rows = vec![vec!["overlap".to_string(), "count".to_string()]];
    rows.extend(overlap_histogram(&lens).into_iter().map(|(b, c)| vec![b.to_string(), c.to_string()]));
    Some(rows)
}

pub(crate) fn write_rows(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn fmt_opt(v: Option<f64>, scale: f64, digits: usize) -> String {
    v.map_or("-".into(), |x| format!("{:.*}", digits, x * scale))
}

fn metrics_markdown(m: &MetricsReport) -> String {
    let a = &m.aggregates;
    let mut s = String::new();
    s.push_str("| Sequences | TTR | Self-BLEU | Dataset BLEU | Overlap > 5 | Max Overlap | Perplexity |\n");
    s.push_str("|---:|---:|---:|---:|---:|---:|---:|\n");
    writeln!(
        s,
        "| {} | {:.1} | {} | {} | {} | {} | {} |",
        a.count,
        a.ttr_mean * 100.0,
        fmt_opt(a.self_bleu_mean, 1.0, 1),
        fmt_opt(a.dataset_bleu_mean, 1.0, 1),
        fmt_opt(a.overlap_exceeds_ratio, 100.0, 1),
        a.overlap_max.map_or("-".into(), |v| v.to_string()),
        fmt_opt(a.perplexity, 1.0, 2),
    )
    .expect("string write");
    s
}

/// Model, Perplexity, Entropy and @1/@3/@5 (as percentages).
pub fn sharpness_markdown(rows: &[SharpnessRow]) -> String {
    let mut s = String::from("| Model | Perplexity | Entropy | @1 | @3 | @5 |\n|---|---:|---:|---:|---:|---:|\n");
    for r in rows {
        writeln!(
            s,
            "| {} | {:.2} | {:.2} | {:.1} | {:.1} | {:.1} |",
            r.label,
            r.perplexity,
            r.entropy,
            r.at1 * 100.0,
            r.at3 * 100.0,
            r.at5 * 100.0
        )
        .expect("string write");
    }
    s
}

fn table_markdown(rows: &[Vec<String>]) -> String {
    let mut s = String::new();
    let Some(head) = rows.first() else { return s };
    writeln!(s, "| {} |", head.join(" | ")).expect("string write");
    writeln!(s, "|{}|", vec!["---"; head.len()].join("|")).expect("string write");
    for r in &rows[1..] {
        writeln!(s, "| {} |", r.join(" | ")).expect("string write");
    }
    s
}

fn write(path: PathBuf, bytes: &[u8]) -> Result<PathBuf> {
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes `report` into `dir` as `<stem>.<ext>` (one CSV per table for
/// experiment reports) and returns the files written.
pub fn emit_report(report: &Report, format: ReportFormat, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    if report.is_empty() {
        return Err(Error::Empty("report"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    match (report, format) {
        (Report::Metrics(m), ReportFormat::Json) => {
            Ok(vec![write(dir.join(format!("{stem}.json")), &serde_json::to_vec_pretty(m)?)?])
        }
        (Report::Run(r), ReportFormat::Json) => {
            Ok(vec![write(dir.join(format!("{stem}.json")), &serde_json::to_vec_pretty(r)?)?])
        }
        (Report::Metrics(m), ReportFormat::Csv) => {
            Ok(vec![write(dir.join(format!("{stem}.csv")), metrics_to_csv(m)?.as_bytes())?])
        }
        (Report::Run(r), ReportFormat::Csv) => r
            .outputs
            .tables()
            .iter()
            .map(|(name, rows)| {
                let path = dir.join(format!("{stem}_{name}"));
                write_rows(&path, rows)?;
                Ok(path)
            })
            .collect(),
        (Report::Metrics(m), ReportFormat::Markdown) => {
            Ok(vec![write(dir.join(format!("{stem}.md")), metrics_markdown(m).as_bytes())?])
        }
        (Report::Run(r), ReportFormat::Markdown) => {
            let text = match &r.outputs {
                Outputs::Sharpness { rows } => sharpness_markdown(rows),
                other => other
                    .tables()
                    .iter()
                    .map(|(name, rows)| format!("### {name}\n\n{}", table_markdown(rows)))
                    .collect::<Vec<_>>()
                    .join("\n"),
            };
            Ok(vec![write(dir.join(format!("{stem}.md")), text.as_bytes())?])
        }
    }
}
