use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_surrobench");

fn surrobench(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("SURROBENCH_PARALLELISM")
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn read_grid(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn eval_value(function: &str, point: &[f64]) -> f64 {
    let mut args = vec!["eval".to_string(), function.to_string(), "--".to_string()];
    args.extend(point.iter().map(|v| format!("{v:?}")));
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let o = surrobench(&args);
    assert!(o.status.success());
    stdout(&o).trim().parse().unwrap()
}

#[test]
fn eval_prints_six_decimals() {
    let o = surrobench(&["eval", "branin2", "--", "-3.14159265", "12.275"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "0.397887");

    let o = surrobench(&["eval", "branin2", "--", "0", "0"]);
    assert_eq!(stdout(&o).trim(), "55.602113");

    // 2 * 0.39788736 prints as 0.795775 at six decimals
    let o = surrobench(&["eval", "branin4", "--", "3.14159265", "2.275", "3.14159265", "2.275"]);
    let v: f64 = stdout(&o).trim().parse().unwrap();
    assert!((v - 0.795774).abs() <= 1e-5);
}

#[test]
fn eval_usage_errors() {
    let o = surrobench(&["eval", "branin2", "--", "1", "2", "3"]);
    assert_eq!(o.status.code(), Some(2));
    let o = surrobench(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    let o = surrobench(&["eval", "branin2", "--bogus", "1", "2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn grid_rows_match_eval() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.csv");
    let o = surrobench(&["grid", "branin2", "--resolution", "3", "-o", path.to_str().unwrap()]);
    assert!(o.status.success());
    let (header, rows) = read_grid(&path);
    assert_eq!(header, ["x1", "x2", "f"]);
    assert_eq!(rows.len(), 9);
    for corner in [[-5.0, 0.0], [10.0, 0.0], [-5.0, 15.0], [10.0, 15.0]] {
        let row = rows.iter().find(|r| r[0] == corner[0] && r[1] == corner[1]).expect("corner present");
        assert!((row[2] - eval_value("branin2", &corner)).abs() <= 1e-6);
    }

    let o = surrobench(&["grid", "branin2", "--resolution", "1", "-o", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = surrobench(&["grid", "branin2", "-o", dir.path().join("missing/g.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn fortified_slice_minimum() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("slice.csv");
    let slice = format!("x1={:?}", -std::f64::consts::PI);
    let o = surrobench(&[
        "grid",
        "branin2-fortified",
        "--resolution",
        "1201",
        "--slice",
        &slice,
        "-o",
        path.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (_, rows) = read_grid(&path);
    assert_eq!(rows.len(), 1201);
    let best = rows.iter().min_by(|a, b| a[2].total_cmp(&b[2])).unwrap();
    assert!((best[1] - 12.275).abs() <= 1e-9, "minimum at x2 = {}", best[1]);
    assert!((best[2] + 3.280907).abs() <= 1e-5);
}

#[test]
fn fortified_grid_matches_outside_support() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for (name, path) in [("branin2", &a), ("branin2-fortified", &b)] {
        let o = surrobench(&["grid", name, "--resolution", "61", "-o", path.to_str().unwrap()]);
        assert!(o.status.success());
    }
    let ((_, plain), (_, fortified)) = (read_grid(&a), read_grid(&b));
    let mut inside = 0;
    for (p, f) in plain.iter().zip(&fortified) {
        assert_eq!((p[0], p[1]), (f[0], f[1]));
        let r = ((p[0] + std::f64::consts::PI).powi(2) + (p[1] - 12.275).powi(2)).sqrt();
        if r >= 1.0 {
            assert_eq!(p[2].to_bits(), f[2].to_bits());
        } else {
            inside += 1;
            assert!(f[2] < p[2]);
        }
    }
    assert!(inside > 0);
}

#[test]
fn optimize_is_deterministic_and_logs() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.csv");
    let args = ["optimize", "branin2", "--algorithm", "rbfopt", "--seed", "11", "--log", log.to_str().unwrap()];
    let first = surrobench(&args);
    let second = surrobench(&args);
    assert!(first.status.success());
    assert_eq!(stdout(&first), stdout(&second));
    let text = stdout(&first);
    for key in ["x_final:", "f_final:", "n_evaluations:", "termination:"] {
        assert!(text.contains(key), "{text}");
    }
    let n: usize = text
        .lines()
        .find_map(|l| l.strip_prefix("n_evaluations: "))
        .unwrap()
        .parse()
        .unwrap();
    let rows = csv::Reader::from_path(&log).unwrap().records().count();
    assert_eq!(rows, n);
}

#[test]
fn optimize_usage_errors() {
    let o = surrobench(&["optimize", "nosuchfunction"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("branin2") && err.contains("branin4-fortified"), "{err}");
    let o = surrobench(&["optimize", "branin2", "--algorithm", "ego", "--eps", "0.01"]);
    assert_eq!(o.status.code(), Some(2));
    let o = surrobench(&["optimize", "branin2", "--initial-design-ndata", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ego_with_polish_reaches_global_value() {
    let good = (0..20)
        .filter(|seed| {
            let s = seed.to_string();
            let o = surrobench(&["optimize", "branin2", "--algorithm", "ego", "--polish", "--seed", &s]);
            assert!(o.status.success());
            let f: f64 = stdout(&o)
                .lines()
                .find_map(|l| l.strip_prefix("f_final: "))
                .unwrap()
                .parse()
                .unwrap();
            f <= 0.397887 + 0.01
        })
        .count();
    assert!(good >= 16, "{good}/20 seeds within tolerance");
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn campaign_smoke_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        "function = \"branin2\"\nalgorithm = \"rbfopt\"\ninitial_design_ndata = 16\nmax_iter = 16\nn_replicates = 10\nmaster_seed = 3\n",
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let start = std::time::Instant::now();
    let first = surrobench(&["campaign", &cfg, "--output-dir", a.to_str().unwrap()]);
    assert!(start.elapsed().as_secs() < 60);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let second = surrobench(&["campaign", &cfg, "--output-dir", b.to_str().unwrap(), "--parallelism", "3"]);
    assert!(second.status.success());
    assert_eq!(stdout(&first), stdout(&second));
    assert!(stdout(&first).trim_start().starts_with("| RBFopt"));
    for file in ["summary.json", "summary.csv", "summary.md", "runs.csv"] {
        assert_eq!(read(&a.join(file)), read(&b.join(file)), "{file}");
    }
    let runs = csv::Reader::from_path(a.join("runs.csv")).unwrap().records().count();
    assert!(runs >= 10 * 16);

    let out = dir.path().join("table.csv");
    let o = surrobench(&["table", a.join("summary.json").to_str().unwrap(), "--format", "csv"]);
    assert!(o.status.success());
    std::fs::write(&out, stdout(&o)).unwrap();
    let mut r = csv::Reader::from_path(&out).unwrap();
    assert_eq!(r.headers().unwrap().len(), 5 + 3);
    assert_eq!(r.records().count(), 1);
}

#[test]
fn campaign_on_fortified_4d_has_nine_basins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        "function = \"branin4-fortified\"\nalgorithm = \"rbfopt\"\ninitial_design_ndata = 5\nmax_iter = 3\nn_replicates = 2\nmaster_seed = 1\n",
    );
    let o = surrobench(&["campaign", &cfg, "--output-dir", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut r = csv::Reader::from_path(dir.path().join("summary.csv")).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    let basins = &header[5..];
    assert_eq!(basins, ["b11", "b12", "b13", "b21", "b22", "b23", "b31", "b32", "b33"]);
}

#[test]
fn campaign_config_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("function = \"branin2\"\nalgorithm = \"rbfopt\"\ninitial_design_ndata = 16\nmax_iter = 16\nn_replicates = 10\nmaster_seed = 3\nbogus = 1\n", "bogus"),
        ("function = \"branin2\"\nalgorithm = \"rbfopt\"\ninitial_design_ndata = 16\nmax_iter = 16\nmaster_seed = 3\n", "n_replicates"),
        ("function = \"nope\"\nalgorithm = \"rbfopt\"\ninitial_design_ndata = 16\nmax_iter = 16\nn_replicates = 10\nmaster_seed = 3\n", "function"),
        ("function = \"branin2\"\nalgorithm = \"ego\"\ninitial_design_ndata = 16\nmax_iter = 16\nn_replicates = 10\nmaster_seed = 3\neps = 0.1\n", "eps"),
    ];
    for (i, (body, key)) in cases.iter().enumerate() {
        let cfg = write_config(dir.path(), &format!("bad{i}.toml"), body);
        let o = surrobench(&["campaign", &cfg, "--output-dir", dir.path().to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "case {key}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(key), "case {key}: {err}");
    }
    let o = surrobench(&["campaign", dir.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}
