use super::*;
use crate::experiments::SharpnessRow;
use crate::metrics::SequenceMetrics;

fn sample_report() -> MetricsReport {
    let records = vec![
        SequenceMetrics { index: 0, length: 96, ttr: 0.5, self_bleu: Some(12.25), dataset_bleu: Some(1.0 / 3.0), overlap: Some(7), nll_sum: Some(10.1), nll_tokens: Some(127) },
        SequenceMetrics { index: 1, length: 96, ttr: 0.1 + 0.2, self_bleu: Some(3.5e-7), dataset_bleu: Some(0.0), overlap: Some(2), nll_sum: Some(3.3), nll_tokens: Some(127) },
    ];
    let aggregates = crate::metrics::Aggregates::from_records(&records).unwrap();
    MetricsReport {
        provenance: Provenance { model_id: "m".into(), dataset_id: "d".into(), config_hash: "c".into(), bleu_variant: "b, with comma".into() },
        ttr_window: 96,
        records,
        aggregates,
    }
}

#[test]
fn json_csv_json_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let r = Report::Metrics(sample_report());
    let csv = emit_report(&r, ReportFormat::Csv, dir.path(), "m").unwrap();
    let back = Report::load(&csv[0]).unwrap();
    assert_eq!(back, r);
    let json = emit_report(&back, ReportFormat::Json, dir.path(), "again").unwrap();
    assert_eq!(Report::load(&json[0]).unwrap(), r);
}

#[test]
fn sharpness_table_columns() {
    let rows = vec![SharpnessRow { label: "base".into(), perplexity: 13.1, entropy: 3.47, at1: 0.484, at3: 0.6, at5: 0.7 }];
    let md = sharpness_markdown(&rows);
    let header = md.lines().next().unwrap();
    assert_eq!(header, "| Model | Perplexity | Entropy | @1 | @3 | @5 |");
    assert!(md.contains("| base | 13.10 | 3.47 | 48.4 | 60.0 | 70.0 |"));
}

#[test]
fn empty_report_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = sample_report();
    m.records.clear();
    assert!(emit_report(&Report::Metrics(m), ReportFormat::Json, dir.path(), "x").is_err());
}

#[test]
fn exit_codes() {
    assert_eq!(dispatch(["hfl", "--help"]), 0);
    assert_eq!(dispatch(["hfl", "frobnicate"]), 2);
    assert_eq!(dispatch(["hfl", "ingest", "--no-such-flag"]), 2);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(dispatch(["hfl", "--out", out, "analyze", "--generations", "/nonexistent.jsonl"]), 1);
}

#[test]
fn config_hash_tracks_content() {
    let a = GlobalConfig::default();
    let b = GlobalConfig { seed: 1, ..GlobalConfig::default() };
    assert_ne!(a.hash(), b.hash());
    assert_eq!(a.hash(), GlobalConfig::default().hash());
    assert_eq!(a.hash(), GlobalConfig { out: "elsewhere".into(), ..a.clone() }.hash());
    let back: GlobalConfig = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
    assert_eq!(back, a);
}
