use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ylab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ylab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ylab_env(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ylab"))
        .args(args)
        .env("YLAB_THREADS", threads)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rd = csv::Reader::from_path(path).unwrap();
    let header = rd.headers().unwrap().iter().map(String::from).collect();
    let rows = rd
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Leaf values of a JSON document under dotted names.
fn leaves(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(m) => m.iter().for_each(|(k, x)| leaves(&key(k), x, out)),
        Value::Array(xs) => xs.iter().enumerate().for_each(|(i, x)| leaves(&key(&i.to_string()), x, out)),
        _ => out.push((prefix.to_string(), v.clone())),
    }
}

fn assert_same_value(name: &str, csv: &str, json: &Value) {
    match json {
        Value::Number(n) => {
            let a: f64 = csv.parse().unwrap_or_else(|_| panic!("{name}: `{csv}` is not a number"));
            let b = n.as_f64().unwrap();
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{name}: {a} vs {b}");
        }
        Value::Null => assert_eq!(csv, "", "{name}"),
        Value::Bool(b) => assert_eq!(csv, b.to_string(), "{name}"),
        Value::String(s) => assert_eq!(csv, s, "{name}"),
        _ => unreachable!(),
    }
}

fn assert_report_formats_agree(csv_path: &Path, json_path: &Path) {
    let (header, rows) = read_csv(csv_path);
    assert_eq!(rows.len(), 1);
    let mut flat = Vec::new();
    leaves("", &read_json(json_path), &mut flat);
    assert_eq!(header.len(), flat.len());
    for ((h, cell), (k, v)) in header.iter().zip(&rows[0]).zip(&flat) {
        assert_eq!(h, k);
        assert_same_value(h, cell, v);
    }
}

#[test]
fn coupling_bound_inverts_the_formula() {
    let o = ylab(&["coupling-bound", "--beta2", "1", "--d", "1", "--p", "inf", "--target", "0.26763"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let eta = v["eta"].as_f64().unwrap();
    assert!((eta - 100.0).abs() < 0.1, "{eta}");
    assert!(v["probability_bound"].as_f64().unwrap() <= 0.26763);
    assert_eq!(v["order"], 2);
}

#[test]
fn missing_seed_is_a_validation_error() {
    for args in [
        &["kde-eig", "--h", "0.03", "--delta", "0.01"][..],
        &["factor-demo"],
        &["series-band"],
        &["localpoly-band"],
        &["lp-ks"],
        &["coverage", "--estimator", "series"],
        &["clt-bound", "--set-class", "lp_balls:2", "--d", "2"],
    ] {
        let o = ylab(args);
        assert_eq!(code(&o), 2, "{args:?}");
        assert!(stderr(&o).contains("seed"), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn bad_input_exits_2_and_names_the_parameter() {
    let o = ylab(&["coupling-bound", "--d", "1", "--beta2", "-1", "--eta", "1"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("beta_p2"), "{}", stderr(&o));

    let o = ylab(&["kde-eig", "--h", "0.03", "--delta", "0.01", "--seed", "1", "--bogus", "3"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--bogus"), "{}", stderr(&o));

    let o = ylab(&["kde-eig", "--h", "0.03", "--a", "0.7", "--delta", "0.01", "--seed", "1"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("`a`"), "{}", stderr(&o));
}

#[test]
fn numerical_failure_exits_3() {
    let o = ylab(&["coupling-bound", "--d", "1", "--beta2", "1", "--target", "1e-30"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    // 20 points cannot fill 10 linear cells
    let o = ylab(&["series-band", "--n", "20", "--seed", "1"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn io_failure_leaves_no_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("missing").join("x.json");
    let o = ylab(&["coupling-bound", "--d", "1", "--beta2", "1", "--eta", "5", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn config_file_supplies_flags_and_command_line_wins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "command = coupling-bound\nd = 1\np = inf\nbeta2 = 1\ntarget = 0.5\n").unwrap();
    let c = cfg.to_str().unwrap();

    let from_file: Value = serde_json::from_slice(&ylab(&["--config", c]).stdout).unwrap();
    let direct: Value =
        serde_json::from_slice(&ylab(&["coupling-bound", "--d", "1", "--p", "inf", "--beta2", "1", "--target", "0.5"]).stdout)
            .unwrap();
    assert_eq!(from_file, direct);

    let o = ylab(&["--config", c, "--target", "0.26763"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["eta"].as_f64().unwrap() - 100.0).abs() < 0.1);

    std::fs::write(&cfg, "command = coupling-bound\nd = 1\nbeta2 = 1\ntarget = 0.5\nwidth = 3\n").unwrap();
    let o = ylab(&["--config", c]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--width"), "{}", stderr(&o));

    let o = ylab(&["kde-eig", "--config", c]);
    assert_eq!(code(&o), 2);
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let runs: [&[&str]; 4] = [
        &["kde-eig", "--h", "0.03,0.01", "--delta-grid", "0.01:0.1:5", "--seed", "7"],
        &["series-band", "--n", "500", "--draws", "200", "--seed", "3"],
        &["localpoly-band", "--n", "800", "--h", "0.15", "--draws", "200", "--seed", "3"],
        &["factor-demo", "--replicates", "40", "--n", "100", "--seed", "9"],
    ];
    for (i, args) in runs.iter().enumerate() {
        let mut outputs = Vec::new();
        for (j, threads) in ["1", "3", "1"].iter().enumerate() {
            let out = dir.path().join(format!("r{i}_{j}.csv"));
            let mut a = args.to_vec();
            a.extend(["--out", out.to_str().unwrap()]);
            let o = ylab_env(&a, threads);
            assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
            outputs.push(std::fs::read(&out).unwrap());
        }
        assert!(outputs.windows(2).all(|w| w[0] == w[1]), "{args:?}");
    }
}

#[test]
fn json_and_csv_encode_the_same_values() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let run = |args: &[&str], out: &Path| {
        let mut a = args.to_vec();
        a.extend(["--out", out.to_str().unwrap()]);
        let o = ylab(&a);
        assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
    };

    let kde = ["kde-eig", "--h", "0.03", "--delta-grid", "0.02:0.1:4", "--seed", "1"];
    run(&kde, &p("k.csv"));
    run(&kde, &p("k.json"));
    let (header, rows) = read_csv(&p("k.csv"));
    assert_eq!(
        &header[..9],
        ["delta", "h", "n", "a", "N", "lambda_min_sim", "lambda_min_exact", "upper_bound", "rank_sim"]
    );
    let json = read_json(&p("k.json"));
    let objs = json.as_array().unwrap();
    assert_eq!(objs.len(), rows.len());
    for (row, obj) in rows.iter().zip(objs) {
        for (h, cell) in header.iter().zip(row) {
            assert_same_value(h, cell, &obj[h]);
        }
    }

    for args in [
        &["coupling-bound", "--d", "3", "--p", "2", "--beta2", "2", "--beta3", "1", "--order", "3", "--target", "0.2"][..],
        &["clt-bound", "--set-class", "lp_balls:2", "--d", "3", "--beta2", "0.5", "--seed", "4", "--sigma-hat-diag", "1.2,1,1"],
        &["factor-demo", "--replicates", "20", "--n", "50", "--regime", "ar", "--seed", "2"],
        &["coverage", "--estimator", "series", "--datasets", "4", "--n", "400", "--draws", "100", "--seed", "2"],
    ] {
        run(args, &p("r.csv"));
        run(args, &p("r.json"));
        assert_report_formats_agree(&p("r.csv"), &p("r.json"));
    }

    let band = ["series-band", "--n", "600", "--draws", "150", "--seed", "5"];
    run(&band, &p("b.csv"));
    run(&band, &p("b.json"));
    let (header, rows) = read_csv(&p("b.csv"));
    assert_eq!(header, ["w", "mu_hat", "lower", "upper", "rho_hat"]);
    let json = read_json(&p("b.json"));
    let keys = ["eval_grid", "mu_hat", "lower", "upper", "rho_hat_diag"];
    for (i, row) in rows.iter().enumerate() {
        for (cell, key) in row.iter().zip(keys) {
            assert_same_value(key, cell, &json["band"][key][i]);
        }
    }
    let meta = read_json(&p("b.meta.json"));
    assert_eq!(meta["q_tau"], json["q_tau"]);
    assert_eq!(meta["q_tau"], json["band"]["q_tau"]);
}

#[test]
fn band_from_data_file_matches_simulated_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let base = ["localpoly-band", "--n", "700", "--h", "0.2", "--draws", "100", "--seed", "8"];
    let mut first = base.to_vec();
    first.extend(["--data-out", data.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    assert_eq!(code(&ylab(&first)), 0);
    let (header, rows) = read_csv(&data);
    assert_eq!(header, ["i", "W", "Y"]);
    assert_eq!(rows.len(), 700);
    let mut second = base.to_vec();
    second.extend(["--data", data.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(code(&ylab(&second)), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn lp_ks_reports_statistic_and_bound() {
    let o = ylab(&["lp-ks", "--replicates", "600", "--n", "100", "--mc-draws", "20000", "--seed", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    for key in ["statistic", "mc_draws", "replicates", "se", "class"] {
        assert!(!v[key].is_null(), "{key}");
    }
    assert_eq!(v["class"], "rectangles_halfinfinite");
    let s = v["statistic"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&s));
    let vacuous = v["vacuous"].as_bool().unwrap();
    assert_eq!(vacuous, v["bound"]["total"].as_f64().unwrap() >= 1.0);

    let o = ylab(&["lp-ks", "--regime", "ar", "--seed", "1"]);
    assert_eq!(code(&o), 2);
}
