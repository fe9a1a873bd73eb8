use std::process::{Command, Output};

fn rankmon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rankmon")).args(args).output().expect("binary runs")
}

const HEADER: &str = "trial,seed,protocol,n,phi,k,m,messages_unicast,messages_broadcast,messages_total,rounds,verdict,fallback_used,result_rank";

#[test]
fn csv_header_is_stable() {
    let out = rankmon(&["topk", "--n", "256", "--k", "5", "--trials", "3"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], HEADER);
    assert_eq!(lines.len(), 4);
    assert!(lines[1..].iter().all(|l| l.contains(",topk,256,0.5,5,0,") && l.contains(",pass,false,5")));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<_> = (0..2).map(|i| (dir.path().join(format!("a{i}.csv")), dir.path().join(format!("a{i}.tsv")))).collect();
    for (csv, trace) in &paths {
        let out = rankmon(&[
            "query", "--n", "1024", "--k", "4", "--m", "16", "--epochs", "3", "--trials", "2", "--seed", "5",
            "--out", csv.to_str().unwrap(), "--trace", trace.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let read = |p: &std::path::Path| std::fs::read(p).unwrap();
    assert_eq!(read(&paths[0].0), read(&paths[1].0));
    assert_eq!(read(&paths[0].1), read(&paths[1].1));
    let trace = String::from_utf8(read(&paths[0].1)).unwrap();
    for line in trace.lines() {
        let f: Vec<&str> = line.split('\t').collect();
        assert_eq!(f.len(), 6, "{line}");
        assert!(f[2] == "BCAST" || f[2] == "UNICAST");
        assert_eq!(f[2] == "BCAST", f[4] == "-");
    }
}

#[test]
fn config_errors_exit_2() {
    assert_eq!(rankmon(&["topk", "--phi", "1.5"]).status.code(), Some(2));
    assert_eq!(rankmon(&["cofasel", "--n", "0"]).status.code(), Some(2));
    assert_eq!(rankmon(&["query", "--scenario", "/nonexistent/file"]).status.code(), Some(2));
    assert_eq!(rankmon(&["topk", "--bogus"]).status.code(), Some(2));
    let out = rankmon(&["query", "--n", "16", "--k", "17"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty(), "no partial CSV");
}

#[test]
fn thresholds_set_exit_status() {
    let base = ["topk", "--n", "512", "--k", "4", "--trials", "20"];
    let pass = rankmon(&[&base[..], &["--max-mean-messages", "1000"]].concat());
    assert_eq!(pass.status.code(), Some(0));
    let fail = rankmon(&[&base[..], &["--max-mean-messages", "3"]].concat());
    assert_eq!(fail.status.code(), Some(1));
}

#[test]
fn scenario_file_drives_queries() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.txt");
    std::fs::write(&path, "4 2\nE 0\nU 1 40\nU 2 10\nU 3 30\nU 4 20\nE 1\nU 2 50\nQ TOPK 2\nE 2\nQ KSEL 1 0.25 0.1\n").unwrap();
    let out = rankmon(&["query", "--n", "4", "--scenario", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 3, "init row plus two queries");
    assert!(rows[0].contains(",init,"));
    assert!(rows[1].ends_with(",pass,false,2") || rows[1].ends_with(",pass,true,2"));
    assert!(rows[2].contains(",pass,"));
}

#[test]
fn selemon_snapshot_has_a_line_per_level() {
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("snap.tsv");
    let out = rankmon(&["selemon", "--n", "65536", "--m", "64", "--snapshot", snap.to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(snap).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().all(|l| l.split('\t').count() == 8));
}

#[test]
fn geocoin_prints_one_row_per_height() {
    let out = rankmon(&["geocoin", "--n", "1024", "--trials", "2000"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("h\tmean_count\ttarget"));
    assert_eq!(text.lines().filter(|l| l.starts_with("tail")).count(), 1);
    assert_eq!(text.lines().count(), 1 + 9 + 1);
}

#[test]
fn accept_runs_selected_criteria() {
    let out = rankmon(&["accept", "--only", "7"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("[PASS] C7 "));
}
