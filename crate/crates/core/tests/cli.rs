use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn affr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_affr"))
        .args(args)
        .env_remove("AFFR_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_writes_round_logs_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scenario = \"dp_ea\"\nrounds = 4\nseeds = [3, 4]\n");
    let out = dir.path().join("out");
    let o = affr(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let rounds = fs::read_to_string(out.join("dp_ea_lr_seed3_rounds.csv")).unwrap();
    let mut lines = rounds.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("# affr round-log v1 config="), "{header}");
    assert!(header.ends_with("seeds=3;4"));
    assert_eq!(
        lines.next().unwrap(),
        "round,scenario,model,seed,accuracy,selected,completed,dropped,epsilon_spent"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    let eps: Vec<f64> = rows.iter().map(|r| r.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert!(eps.windows(2).all(|w| w[1] > w[0]), "epsilon must grow: {eps:?}");

    for name in ["dp_ea_lr_seed4_sched.csv", "dp_ea_lr_seed4_report.csv", "dp_ea_lr_summary.csv"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let summary = fs::read_to_string(out.join("dp_ea_lr_summary.csv")).unwrap();
    assert!(summary.lines().any(|l| l.starts_with("mean,")));
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scenario = \"baseline\"\nrounds = 2\nseeds = [1]\n");
    let out = dir.path().join("env-out");
    let o = Command::new(env!("CARGO_BIN_EXE_affr"))
        .args(["run", &cfg])
        .env("AFFR_OUT_DIR", &out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(out.join("baseline_lr_seed1_rounds.csv").exists());
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let cfg = write_config(dir.path(), "scenario = \"dp\"\nnoise_std = 0.0\n");
    let o = affr(&["run", &cfg, "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("noise_std"));

    let cfg = write_config(dir.path(), "scenario = \"ea\"\nclients = 3\n");
    let o = affr(&["run", &cfg, "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("clients"));

    let o = affr(&["run", "/nonexistent/config.toml", "--out", out]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let cfg = write_config(
        dir.path(),
        &format!("scenario = \"baseline\"\n[dataset]\nkind = \"csv\"\npath = {:?}\n", missing.to_str().unwrap()),
    );
    let o = affr(&["run", &cfg, "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn csv_dataset_round_trip_through_gen_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("blobs.csv");
    let o = affr(&["gen-data", "--classes", "3", "--dim", "4", "--per-class", "40", "--separation", "3", "--output", data.to_str().unwrap()]);
    assert!(o.status.success());
    let cfg = write_config(
        dir.path(),
        &format!(
            "scenario = \"ea\"\nrounds = 5\nseeds = [2]\nnum_clients = 4\nclients_per_round = 3\nshots_per_class = 3\n[dataset]\nkind = \"csv\"\npath = {:?}\n",
            data.to_str().unwrap()
        ),
    );
    let out = dir.path().join("out");
    let o = affr(&["run", &cfg, "--set", "model=mlp", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(out.join("ea_mlp_seed2_report.csv")).unwrap();
    assert!(report.contains("true,pred_0,pred_1,pred_2"));
}

#[test]
fn accountant_subcommand() {
    let o = affr(&["accountant", "--sigma", "1.2", "--rounds", "1"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.starts_with("epsilon 4.345993"), "{text}");

    let o = affr(&["accountant", "--target-epsilon", "8", "--rounds", "10"]);
    assert!(o.status.success());

    let o = affr(&["accountant", "--sigma", "1", "--target-epsilon", "2"]);
    assert_eq!(o.status.code(), Some(1));
}
