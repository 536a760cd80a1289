use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_nanobatch");

fn nanobatch(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let text = format!(
        "run.id = {name}\nrun.epochs = 2\nrun.workers = 2\nrun.output_dir = out\nmodel.hidden = 8\n\
         data.classes = 3\ndata.per_class = 20\ndata.shape = 5\ndata.seed = 11\n\
         dp.clip_norm = 1.0\ndp.noise_multiplier = 1.0\ndp.grad_acc = 6\n{body}"
    );
    let path = dir.join(format!("{name}.cfg"));
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn account(extra: &[&str]) -> Vec<String> {
    let mut args = vec!["account", "--n", "60000", "--batch", "256"];
    args.extend_from_slice(extra);
    let o = nanobatch(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    stdout(&o).trim().split(',').map(str::to_string).collect()
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad", "dp.mystery = 1\n");
    let o = nanobatch(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dp.mystery"));

    let missing = dir.path().join("absent.cfg");
    let o = nanobatch(&["run", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_arguments_exit_with_two() {
    let o = nanobatch(&["account", "--n", "ten"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn account_echoes_schedule_and_orders_epsilon() {
    let row = account(&["--sigma", "1.1", "--epochs", "60"]);
    assert_eq!(row.len(), 4);
    assert!((row[0].parse::<f64>().unwrap() - 256.0 / 60000.0).abs() < 1e-9);
    assert_eq!(row[1], "14040");

    let zero = account(&["--sigma", "1.1", "--epochs", "0"]);
    assert_eq!(zero[1], "0");
    assert_eq!(zero[2].parse::<f64>().unwrap(), 0.0);

    let quieter = account(&["--sigma", "2.2", "--epochs", "60"]);
    assert!(quieter[2].parse::<f64>().unwrap() < row[2].parse::<f64>().unwrap());
}

#[test]
fn account_header_flag() {
    let o = nanobatch(&["account", "--n", "100", "--batch", "10", "--sigma", "1", "--epochs", "1", "--header"]);
    assert_eq!(stdout(&o).lines().next(), Some("q,T,epsilon,best_order"));
}

#[test]
fn repeated_runs_write_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "twice", "");
    let csv = dir.path().join("out/twice.csv");
    let mut copies = Vec::new();
    for _ in 0..2 {
        let o = nanobatch(&["run", &cfg]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).starts_with("run twice: steps=20"));
        copies.push(std::fs::read(&csv).unwrap());
    }
    assert_eq!(copies[0], copies[1]);
}

#[test]
fn single_point_sweep_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let run_cfg = write_config(dir.path(), "solo", "");
    let sweep_cfg = write_config(dir.path(), "grid", "sweep.grad_acc = 6\n");
    assert!(nanobatch(&["run", &run_cfg]).status.success());
    let o = nanobatch(&["sweep", &sweep_cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let solo = std::fs::read(dir.path().join("out/solo.csv")).unwrap();
    let point = std::fs::read(dir.path().join("out/grid_p000.csv")).unwrap();
    assert_eq!(solo, point);
}

#[test]
fn sweep_grid_writes_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "grid", "sweep.grad_acc = 2, 4, 6\nsweep.sigma = 0.8, 1.6\n");
    let o = nanobatch(&["sweep", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let frontier = std::fs::read_to_string(dir.path().join("out/grid_frontier.csv")).unwrap();
    let lines: Vec<&str> = frontier.lines().collect();
    assert_eq!(lines.len(), 7);
    let keys: Vec<String> = lines[1..]
        .iter()
        .map(|l| l.split(',').take(2).collect::<Vec<_>>().join(","))
        .collect();
    assert_eq!(keys, ["2,0.8", "2,1.6", "4,0.8", "4,1.6", "6,0.8", "6,1.6"]);
    assert!(lines[1..].iter().all(|l| l.ends_with(",ok")));
}

#[test]
fn failing_point_is_reported_without_aborting_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "partial", "sweep.grad_acc = 6, 1000\n");
    let o = nanobatch(&["sweep", &cfg]);
    assert!(o.status.success());
    let frontier = std::fs::read_to_string(dir.path().join("out/partial_frontier.csv")).unwrap();
    let rows: Vec<&str> = frontier.lines().skip(1).collect();
    assert!(rows[0].ends_with(",ok"));
    assert!(rows[1].contains(",failed: "));
}
