use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cyclotrace"))
        .args(args)
        .env_remove("CYCLOTRACE_THREADS")
        .output()
        .expect("spawn cyclotrace")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn is_sum_of_two_squares_b2_4a2(n: i64) -> bool {
    (1..).take_while(|a| 4 * a * a <= n).any(|a| {
        let r = n - 4 * a * a;
        (0..=r).take_while(|b| b * b <= r).any(|b| b * b == r)
    })
}

#[test]
fn trace_exact_prints_integer() {
    let o = run(&["trace", "--k", "2", "--D", "12", "--method", "exact"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).lines().any(|l| l == "value: 24"), "{}", stdout(&o));
}

#[test]
fn trace_exit_codes() {
    assert_eq!(run(&["trace", "--k", "2", "--D", "5", "--method", "geodesic"]).status.code(), Some(2));
    assert_eq!(run(&["trace", "--k", "2", "--D", "9", "--method", "exact"]).status.code(), Some(3));
    assert_eq!(run(&["trace", "--k", "3", "--D", "12", "--method", "exact"]).status.code(), Some(3));
    assert_eq!(run(&["trace", "--k", "1", "--D", "12"]).status.code(), Some(3));
    assert_eq!(run(&["trace", "--k", "2", "--D", "12", "--d", "-5"]).status.code(), Some(3));
    assert_eq!(run(&["trace", "--k", "2", "--D", "12", "--tol", "0"]).status.code(), Some(3));
    assert_eq!(run(&["trace", "--bogus"]).status.code(), Some(3));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn trace_json_rows_agree() {
    let o = run(&["trace", "--k", "4", "--D", "12", "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let rows: Vec<serde_json::Value> = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0]["value"], "72");
    for r in &rows[1..] {
        let v: f64 = r["value"].as_str().unwrap().parse().unwrap();
        assert!((v - 72.0).abs() < 1e-4 * 73.0);
        assert_eq!(r["hypothesis_ok"], true);
    }
}

#[test]
fn verify_even_and_odd() {
    let o = run(&["verify", "--k", "4", "--D", "12"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("geodesic-exact"));

    let o = run(&["verify", "--k", "3", "--D", "12"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(!out.contains("exact"));
    assert!(out.contains("latticesum-geodesic"));
}

#[test]
fn verify_hypothesis_violation() {
    assert_eq!(run(&["verify", "--k", "4", "--D", "8"]).status.code(), Some(2));
}

#[test]
fn table_flags_inadmissible_discriminants() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    let o = run(&["table", "--k", "2", "--Dmax", "40", "--method", "exact", "--out", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("k,D,d,method,value,error_estimate,hypothesis_ok,seconds"));
    let mut seen = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let big_d: i64 = f[1].parse().unwrap();
        seen.push(big_d);
        let flagged = f[6] == "false";
        assert_eq!(flagged, is_sum_of_two_squares_b2_4a2(big_d), "{line}");
        assert_eq!(f[4].is_empty(), flagged);
    }
    assert_eq!(&seen[..4], &[5, 8, 12, 13]);
    assert!(seen.windows(2).all(|w| w[0] < w[1]));
    let row12 = text.lines().find(|l| l.starts_with("2,12,")).unwrap();
    assert_eq!(row12, "2,12,-4,exact,24,0.000000000000e+00,true,0.000000000000e+00");
}

#[test]
fn table_empty_range_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    let o = run(&["table", "--k", "2", "--Dmin", "30", "--Dmax", "20", "--out", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        std::fs::read_to_string(&path).unwrap(),
        "k,D,d,method,value,error_estimate,hypothesis_ok,seconds\n"
    );
}

#[test]
fn table_json_matches_csv() {
    let args = ["table", "--k", "4", "--Dmax", "25", "--method", "geodesic"];
    let csv_out = run(&args);
    let mut json_args = args.to_vec();
    json_args.push("--json");
    let json_out = run(&json_args);
    assert_eq!(csv_out.status.code(), Some(0));
    assert_eq!(json_out.status.code(), Some(0));

    let rows: Vec<serde_json::Map<String, serde_json::Value>> = serde_json::from_slice(&json_out.stdout).unwrap();
    let mut reader = csv::Reader::from_reader(&csv_out.stdout[..]);
    let header: Vec<String> = reader.headers().unwrap().iter().map(str::to_string).collect();
    let records: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), records.len());
    for (row, rec) in rows.iter().zip(&records) {
        assert_eq!(row.keys().cloned().collect::<std::collections::BTreeSet<_>>(), header.iter().cloned().collect());
        for (key, field) in header.iter().zip(rec.iter()) {
            let v = &row[key];
            let text = match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            assert_eq!(text, field, "{key}");
        }
    }
}

#[test]
fn table_is_deterministic_across_thread_counts() {
    let base = ["table", "--k", "4", "--Dmin", "5", "--Dmax", "30", "--method", "all"];
    let one = run(&[&base[..], &["--threads", "1"]].concat());
    let three = run(&[&base[..], &["--threads", "3"]].concat());
    assert_eq!(one.status.code(), Some(0));
    assert_eq!(one.stdout, three.stdout);
    let env = Command::new(env!("CARGO_BIN_EXE_cyclotrace"))
        .args(base)
        .env("CYCLOTRACE_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(env.stdout, one.stdout);
}

#[test]
fn table_unwritable_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing").join("t.csv");
    let o = run(&["table", "--k", "2", "--Dmax", "20", "--method", "exact", "--out", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn timing_flag_fills_seconds() {
    let o = run(&["table", "--k", "4", "--Dmin", "12", "--Dmax", "12", "--method", "geodesic", "--timing"]);
    let text = stdout(&o);
    let row = text.lines().nth(1).unwrap();
    let secs: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
    assert!(secs > 0.0, "{row}");
}

#[test]
fn selftest_reports_counts() {
    let o = run(&["selftest"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.lines().last().unwrap().starts_with("selftest: "));
    assert!(out.ends_with(" 0 failed\n"));
}
