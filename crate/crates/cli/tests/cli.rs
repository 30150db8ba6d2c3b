use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sofi-rgl"));
    c.env_remove("SOFIRGL_OUT_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("sofi-rgl-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

/// Data rows of a CSV document as (column name → cell) lookups.
fn rows(csv: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let body = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, body)
}

fn col(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("missing column {name}"))
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["--no-such-flag"]).status.code(), Some(1));
    assert_eq!(run(&[]).status.code(), Some(1));
    let bad = run(&["rgl", "--alpha", "1.5"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("alpha"));
    assert_eq!(run(&["sweep", "--range", "1,2"]).status.code(), Some(1));
    assert_eq!(run(&["sweep", "--axis", "theta", "--range", "1,2"]).status.code(), Some(1));
    assert_eq!(run(&["rgl", "--scheme", "M+XC3"]).status.code(), Some(1));
    assert_eq!(run(&["rgl", "--scheme", "MAX", "--mu-b", "1"]).status.code(), Some(1));
    assert_eq!(run(&["tau-opt"]).status.code(), Some(1));
    assert_eq!(run(&["fi-curve", "--range", "0:1:log3"]).status.code(), Some(1));
    assert_eq!(run(&["rgl", "--pbar", "10", "--nbar", "10"]).status.code(), Some(1));
}

#[test]
fn csv_header_echoes_resolved_parameters() {
    let o = run(&["zeta-max", "--p", "0.5", "--alpha", "0", "--nbar", "1000"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let first = text.lines().next().unwrap();
    assert!(first.starts_with("# sofi-rgl ") && first.contains("schema=1"));
    let params: serde_json::Value = serde_json::from_str(first.split_once("params=").unwrap().1).unwrap();
    assert_eq!(params["command"], "zeta-max");
    assert_eq!(params["dx"], 0.5);
    assert_eq!(params["nbar"], 1000.0);
    let (h, r) = rows(&text);
    assert_eq!(h, ["nbar", "zeta_max", "zeta_max_asymptotic", "delta_g"]);
    let z: f64 = r[0][col(&h, "zeta_max")].parse().unwrap();
    assert!((z - 1.0).abs() < 1e-12);
}

#[test]
fn json_mirrors_csv() {
    let csv = stdout(&run(&["fi-curve", "--range", "0.1,0.5"]));
    let json: serde_json::Value = serde_json::from_str(&stdout(&run(&["fi-curve", "--range", "0.1,0.5", "--format", "json"]))).unwrap();
    let (h, r) = rows(&csv);
    let cols: Vec<String> = json["columns"].as_array().unwrap().iter().map(|c| c.as_str().unwrap().to_string()).collect();
    assert_eq!(cols, h);
    assert_eq!(json["rows"].as_array().unwrap().len(), r.len());
    assert_eq!(r.len(), 6);
    let ratio: f64 = r[0][col(&h, "ratio")].parse().unwrap();
    assert_eq!(json["rows"][0]["ratio"].as_f64().unwrap(), ratio);
}

#[test]
fn documented_rgl_example() {
    let o = run(&["rgl", "--scheme", "AC2", "--model", "simplified", "--p", "0.5", "--alpha", "1", "--nbar", "1e5"]);
    assert!(o.status.success());
    let (h, r) = rows(&stdout(&o));
    let z: f64 = r[0][col(&h, "zeta")].parse().unwrap();
    assert!((z - 1.189).abs() < 0.01, "zeta {z}");
    assert_eq!(r[0][col(&h, "converged")], "true");
}

#[test]
fn config_file_with_flag_override() {
    let dir = scratch("config");
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, "# test\ncommand = rgl\nschemes = M+AC2, MAX\nalpha = 0.5\nnbar = 1000\n").unwrap();
    let from_file = stdout(&run(&["--config", cfg.to_str().unwrap()]));
    let overridden = stdout(&run(&["--config", cfg.to_str().unwrap(), "--alpha", "1", "--scheme", "MAX"]));
    let (h, a) = rows(&from_file);
    let (_, b) = rows(&overridden);
    assert_eq!(a.len(), 2);
    assert_eq!(b.len(), 1);
    assert_eq!(b[0][col(&h, "scheme")], "MAX");
    let max_half: f64 = a[1][col(&h, "zeta")].parse().unwrap();
    let max_full: f64 = b[0][col(&h, "zeta")].parse().unwrap();
    assert!(max_full > max_half);
    assert!(overridden.lines().next().unwrap().contains("\"alpha\":1.0"));
    // A subcommand on the command line wins over the file's command.
    let zm = stdout(&run(&["zeta-max", "--config", cfg.to_str().unwrap()]));
    assert!(zm.contains("zeta_max_asymptotic"));
}

#[test]
fn output_directory_from_environment() {
    let dir = scratch("outdir");
    let o = bin()
        .env("SOFIRGL_OUT_DIR", &dir)
        .args(["zeta-max", "--nbar", "50", "--format", "json"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("zeta-max.json")).unwrap()).unwrap();
    assert_eq!(doc["rows"][0]["nbar"], 50.0);
    // An explicit path takes precedence.
    let explicit = dir.join("sub").join("x.csv");
    let o = bin()
        .env("SOFIRGL_OUT_DIR", &dir)
        .args(["zeta-max", "--out", explicit.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(fs::read_to_string(&explicit).unwrap().starts_with("# sofi-rgl"));
}

#[test]
fn repeat_runs_are_byte_identical() {
    let dir = scratch("determinism");
    let args = |name: &str| {
        vec![
            "validate".to_string(),
            "--frames".into(),
            "20000".into(),
            "--samples".into(),
            "20000".into(),
            "--seed".into(),
            "11".into(),
            "--out".into(),
            dir.join(name).to_str().unwrap().to_string(),
        ]
    };
    let a = bin().args(args("a.csv")).output().unwrap();
    let b = bin().args(args("b.csv")).args(["--threads", "1"]).output().unwrap();
    assert!(a.status.code().is_some_and(|c| c == 0 || c == 3));
    assert_eq!(a.status.code(), b.status.code());
    let (fa, fb) = (fs::read(dir.join("a.csv")).unwrap(), fs::read(dir.join("b.csv")).unwrap());
    // Only the threads entry of the header may differ.
    let body = |f: &[u8]| String::from_utf8(f.to_vec()).unwrap().lines().skip(1).collect::<Vec<_>>().join("\n");
    assert_eq!(body(&fa), body(&fb));

    let sweep = ["sweep", "--axis", "alpha", "--range", "0:1:lin4", "--schemes", "M+AC2,MAX", "--nbar", "100"];
    assert_eq!(run(&sweep).stdout, run(&sweep).stdout);
}

#[test]
fn validate_suite_passes() {
    let o = run(&["validate", "--frames", "100000", "--samples", "100000", "--seed", "5"]);
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{text}");
    let (h, r) = rows(&text);
    assert_eq!(r.len(), 5);
    assert!(r.iter().all(|row| row[col(&h, "pass")] == "true"));
}

#[test]
fn boundary_optimum_is_flagged_not_failed() {
    let o = run(&["tau-opt", "--model", "markov", "--pbar", "300", "--tau-min", "1", "--tau-max", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let (h, r) = rows(&stdout(&o));
    assert_eq!(r[0][col(&h, "at_boundary")], "true");
    assert!(String::from_utf8_lossy(&o.stderr).contains("flagged"));
}

#[test]
fn sweep_rel_change_is_relative_to_first_point() {
    let o = run(&["sweep", "--axis", "nbar", "--range", "10:1000:log3", "--schemes", "MAX"]);
    let (h, r) = rows(&stdout(&o));
    assert_eq!(h[0], "nbar");
    assert_eq!(r[0][col(&h, "rel_change")], "0.0");
    let z0: f64 = r[0][col(&h, "zeta")].parse().unwrap();
    let z2: f64 = r[2][col(&h, "zeta")].parse().unwrap();
    let rel: f64 = r[2][col(&h, "rel_change")].parse().unwrap();
    assert!((rel - (z2 / z0 - 1.0)).abs() < 1e-12);
}

/// Frame-time sweep of the blinking model: ζ falls back towards 1 at both
/// ends of the range.
#[test]
fn frame_time_sweep_example() {
    let o = run(&[
        "sweep", "--model", "markov", "--axis", "tau", "--range", "0.01:100:log25", "--schemes", "M+AC2,M+XC2", "--pbar", "300",
    ]);
    assert!(o.status.success());
    let (h, r) = rows(&stdout(&o));
    assert_eq!(r.len(), 50);
    let zeta = |row: &Vec<String>| -> f64 { row[col(&h, "zeta")].parse().unwrap() };
    for scheme in ["M+AC2", "M+XC2"] {
        let series: Vec<f64> = r.iter().filter(|row| row[col(&h, "scheme")] == scheme).map(zeta).collect();
        let peak = series.iter().cloned().fold(0.0, f64::max);
        let (first, last) = (series[0], series[series.len() - 1]);
        assert!(first < peak && last < peak, "{scheme}: {series:?}");
        if scheme == "M+AC2" {
            assert!((first - 1.0).abs() < 0.05 && (last - 1.0).abs() < 0.05, "{first} {last}");
        }
    }
}

fn figs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../figs")
}

#[test]
fn shipped_figure_configs_are_valid() {
    let mut configs: Vec<PathBuf> = fs::read_dir(figs_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "cfg"))
        .collect();
    configs.sort();
    assert!(configs.len() >= 15, "{configs:?}");
    for cfg in &configs {
        let o = run(&["--config", cfg.to_str().unwrap(), "--dry-run"]);
        assert!(o.status.success(), "{}: {}", cfg.display(), String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn fast_figure_configs_run() {
    for name in ["fig1", "fig4a", "fig6a", "figA1", "figS1b"] {
        let cfg = figs_dir().join(format!("{name}.cfg"));
        let o = run(&["--config", cfg.to_str().unwrap()]);
        assert!(o.status.success(), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        let (_, r) = rows(&stdout(&o));
        assert!(!r.is_empty(), "{name}");
    }
}
