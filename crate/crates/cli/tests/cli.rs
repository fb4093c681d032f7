use std::path::Path;
use std::process::{Command, Output};

fn lmnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lmnet"))
        .args(args)
        .output()
        .expect("failed to launch lmnet")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn missing_config_is_a_config_error() {
    let out = lmnet(&["train", "--config", "/nonexistent/run.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read config"));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.cfg", "optimizer = lm\nlamda0 = 1\n");
    let out = lmnet(&["train", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lamda0"));
}

#[test]
fn bad_usage_exits_one() {
    assert_eq!(lmnet(&["train"]).status.code(), Some(1));
    assert_eq!(lmnet(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(lmnet(&["--help"]).status.code(), Some(0));
}

#[test]
fn gradient_check_passes() {
    let out = lmnet(&["check", "--grad"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert_eq!(stdout.lines().count(), 4);
    assert!(stdout.lines().all(|l| l.starts_with("ok")));
}

#[test]
fn train_writes_csv_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "lm.cfg",
        "optimizer = lm\nepochs = 3\nsine_n_train = 30\nsine_n_test = 10\nhidden = 4\n",
    );
    let out = lmnet(&["train", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let mut lines = stdout.lines();
    assert!(lines.next().unwrap().starts_with("iter,epoch,wall_time_s,train_loss"));
    assert_eq!(lines.count(), 4);
}

#[test]
fn compare_plots_one_curve_per_config() {
    let dir = tempfile::tempdir().unwrap();
    let common = "epochs = 10\nsine_n_train = 40\nsine_n_test = 20\nhidden = 6\n";
    let cfgs: Vec<String> = ["lm", "adam", "lbfgs"]
        .iter()
        .map(|o| write_config(dir.path(), &format!("{o}.cfg"), &format!("optimizer = {o}\n{common}")))
        .collect();
    let plot = dir.path().join("cmp.svg");
    let out = lmnet(&[
        "compare",
        "--configs",
        &cfgs.join(","),
        "--plot",
        plot.to_str().unwrap(),
        "--log-y",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let svg = std::fs::read_to_string(&plot).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 3);
    for o in ["lm", "adam", "lbfgs"] {
        assert!(dir.path().join(format!("{o}.csv")).is_file());
        assert!(svg.contains(&format!(">{o}</text>")));
    }
}

#[test]
fn gen_data_writes_requested_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("sine.csv");
    let out = lmnet(&["gen-data", "--out", out_path.to_str().unwrap(), "--n", "25", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&out_path).unwrap();
    assert_eq!(text.lines().count(), 26);
}
