use std::fs;
use std::process::{Command as Proc, Output};

use dispersion_cli::config::{parse_config_text, RunConfig};
use dispersion_cli::output::{read_csv, read_json, write_results, Document, Table};
use dispersion_cli::{run, Command, Format};
use serde_json::json;

fn bin(args: &[&str]) -> Output {
    Proc::new(env!("CARGO_BIN_EXE_dispersion")).args(args).output().expect("spawn")
}

fn cfg(command: Command, pairs: &[(&str, &str)]) -> RunConfig {
    let pairs: Vec<(String, String)> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    RunConfig::build(command, &pairs, &[]).unwrap()
}

#[test]
fn same_seed_gives_identical_bytes() {
    let args = ["lambda", "--T", "50", "--ensemble", "6", "--workers", "1", "--timing", "false"];
    let a = bin(&args);
    let b = bin(&args);
    assert!(a.status.code().is_some());
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn worker_count_does_not_change_numbers() {
    let base = [("d", "2"), ("T", "20"), ("ensemble", "5"), ("timing", "false")];
    let one = run(&cfg(Command::Lambda, &[base.as_slice(), &[("workers", "1")]].concat())).unwrap();
    let three = run(&cfg(Command::Lambda, &[base.as_slice(), &[("workers", "3")]].concat())).unwrap();
    assert_eq!(one.document.json["result"], three.document.json["result"]);
}

#[test]
fn config_error_exits_2_and_names_key() {
    let out = bin(&["lambda", "--dt", "-0.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`dt`"));
    let out = bin(&["spectrum", "--nonsense", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonsense"));
}

#[test]
fn failed_verification_exits_3() {
    // coarse Euler-Maruyama misses the sum identity by ~10%
    let out = bin(&[
        "spectrum", "--d", "2", "--T", "10", "--dt", "0.1", "--scheme", "em", "--ensemble", "1", "--timing", "false",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["passed"], json!(false));
}

#[test]
fn config_file_then_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    fs::write(&path, "# span check\nd = 3\npoints = 40\nzero_points = 4\n").unwrap();
    let out = bin(&["verify-span", "--config", path.to_str().unwrap(), "--points", "30", "--timing", "false"]);
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["result"]["points"], json!(30));
    assert_eq!(doc["result"]["min_rank"], json!(6));
    assert_eq!(doc["provenance"]["config"]["d"], json!(3));
    assert!(doc["provenance"]["wall_time_s"].is_null());
    assert!(doc["provenance"]["build_id"].as_str().is_some_and(|s| !s.is_empty()));
}

#[test]
fn verify_span_d2() {
    let out = run(&cfg(Command::VerifySpan, &[("d", "2")])).unwrap();
    assert_eq!(out.passed, Some(true));
    let r = &out.document.json["result"];
    assert_eq!(r["points"], json!(1000));
    assert_eq!(r["min_rank"], json!(4));
    assert!(out.document.json["provenance"]["wall_time_s"].as_f64().is_some());
}

#[test]
fn lambda_document_has_all_estimates() {
    let out = run(&cfg(Command::Lambda, &[("T", "100"), ("ensemble", "4")])).unwrap();
    let r = &out.document.json["result"];
    let methods: Vec<&str> = r["estimates"].as_array().unwrap().iter().map(|e| e["method"].as_str().unwrap()).collect();
    assert_eq!(methods, ["airy", "density-quadrature", "direct", "invariants"]);
    assert_eq!(r["agreement"].as_array().unwrap().len(), 4);
    assert_eq!(r["localization_positive"], json!(true));
}

#[test]
fn histogram_csv_has_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.csv");
    let out = bin(&[
        "density", "--T", "20", "--ensemble", "2", "--bins", "16", "--format", "csv", "--output",
        path.to_str().unwrap(),
    ]);
    assert!(matches!(out.status.code(), Some(0 | 3)));
    let t = read_csv(&path).unwrap();
    assert_eq!(t.header, ["bin_lo", "bin_hi", "mass", "expected"]);
    assert_eq!(t.rows.len(), 16);
}

#[test]
fn json_and_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&cfg(Command::VerifyControl, &[("d", "1"), ("pairs", "5"), ("steps", "200")])).unwrap();
    let jp = dir.path().join("r.json");
    write_results(&out.document, Some(&jp), Format::Json).unwrap();
    assert_eq!(read_json(&jp).unwrap(), out.document.json);
    let cp = dir.path().join("r.csv");
    write_results(&out.document, Some(&cp), Format::Csv).unwrap();
    assert_eq!(&read_csv(&cp).unwrap(), out.document.table.as_ref().unwrap());
}

#[test]
fn empty_document_writes_valid_files() {
    let dir = tempfile::tempdir().unwrap();
    let jp = dir.path().join("e.json");
    write_results(&Document::empty(), Some(&jp), Format::Json).unwrap();
    assert_eq!(read_json(&jp).unwrap(), json!({}));
    let cp = dir.path().join("e.csv");
    let doc = Document {
        table: Some(Table::default()),
        ..Document::empty()
    };
    write_results(&doc, Some(&cp), Format::Csv).unwrap();
    assert_eq!(read_csv(&cp).unwrap(), Table::default());
    assert!(write_results(&Document::empty(), Some(&cp), Format::Csv).is_err());
}

#[test]
fn unwritable_path_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("missing").join("x.json");
    assert!(write_results(&Document::empty(), Some(&p), Format::Json).is_err());
}

#[test]
fn control_table_covers_zero_rho() {
    let out = run(&cfg(Command::VerifyControl, &[("d", "3"), ("pairs", "20"), ("steps", "2000")])).unwrap();
    assert_eq!(out.passed, Some(true));
    assert!(out.document.json["result"]["pairs_with_zero_rho"].as_u64().unwrap() >= 4);
}

#[test]
fn parse_text_rejects_bad_lines() {
    assert!(parse_config_text("d = 2\n= 3\n").is_err());
    assert_eq!(parse_config_text("  \n# only a comment\n").unwrap(), vec![]);
}
