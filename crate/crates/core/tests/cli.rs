//! The `hfl` pipeline end to end on a tiny synthetic corpus.

use std::ffi::OsString;
use std::path::Path;

use hyperfit::cli::{dispatch, read_generations};
use hyperfit::metrics::MetricsReport;

fn hfl(out: &Path, args: &[&str]) -> i32 {
    let mut argv: Vec<OsString> = vec!["hfl".into(), "--out".into(), out.into()];
    argv.extend(args.iter().map(OsString::from));
    dispatch(argv)
}

#[test]
fn pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(hfl(out, &["ingest", "--synthetic", "200000", "--vocab", "300", "--samples", "3", "--sample-len", "48", "--held", "12"]), 0);
    for f in ["tokenizer.json", "train.hfs", "held.hfs", "set.hfs", "ingest.run.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(hfl(out, &["train", "pretrain", "--max-steps", "5", "--val-limit", "4", "--eval-contexts", "1"]), 0);
    assert!(out.join("pretrain.ckpt").exists() && out.join("pretrain_curve.csv").exists());
    assert_eq!(hfl(out, &["hyperfit", "--epochs", "2", "--val-limit", "4", "--eval-contexts", "1"]), 0);
    assert!(out.join("hyperfit.ckpt").exists() && out.join("hyperfit_curve.csv").exists());

    assert_eq!(hfl(out, &["generate", "--count", "4", "--tokens", "24", "--block"]), 0);
    let recs = read_generations(&out.join("generations.jsonl")).unwrap();
    assert_eq!(recs.len(), 4);
    assert!(recs.iter().all(|r| r.tokens.len() == 24 && r.trace.len() == 24 && r.context.len() == 32));

    assert_eq!(hfl(out, &["analyze", "--window", "24", "--checkpoint", out.join("hyperfit.ckpt").to_str().unwrap()]), 0);
    let report: MetricsReport = serde_json::from_slice(&std::fs::read(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(report.aggregates.count, 4);
    assert!(report.aggregates.perplexity.is_some_and(|p| p > 1.0));
    assert!(out.join("metrics_overlap_histogram.csv").exists());

    let md = out.join("md");
    std::fs::create_dir(&md).unwrap();
    assert_eq!(hfl(&md, &["report", out.join("metrics.json").to_str().unwrap()]), 0);
    let table = std::fs::read_dir(&md).unwrap().map(|e| e.unwrap().path()).find(|p| p.extension().is_some_and(|e| e == "md"));
    assert!(std::fs::read_to_string(table.expect("markdown table")).unwrap().contains("| Self-BLEU"));
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hfl(dir.path(), &["generate", "--no-such-flag"]), 2);
    assert_eq!(hfl(dir.path(), &["generate"]), 1);
    assert_eq!(hfl(dir.path(), &["--help"]), 0);
}
