use std::path::Path;
use std::process::{Command, Output};

fn trustlab(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trustlab"))
        .args(args)
        .env("TRUSTLAB_OUT", root)
        .current_dir(root)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value(o: &Output, key: &str) -> String {
    stdout(o)
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")).map(str::to_string))
        .unwrap_or_else(|| panic!("no {key}= line in {}", stdout(o)))
}

fn read_rows(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

const TINY: &str = r#"
seeds = [1]
methods = ["ce"]
epsilons = [0.0]
output_dir = "run"

[dataset]
classes = 4
dim = 6
train_per_class = 100
test_per_class = 50

[noise]
pattern = "symmetric"
epsilon = 0.0

[classifier]
hidden = [32]

[classifier.train]
epochs = 8
batch_size = 32
learning_rate = 0.05

[expertnet]
amateur_hidden = [16]
expert_width = 16

[expertnet.train]
epochs = 5
batch_size = 16
"#;

#[test]
fn every_subcommand_has_help() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["gen-noise", "bound", "corrupt", "split", "train", "sweep", "rescale"] {
        let o = trustlab(dir.path(), &[sub, "--help"]);
        assert!(o.status.success(), "{sub} --help failed");
        assert!(stdout(&o).contains("Usage"));
    }
}

#[test]
fn gen_noise_symmetric() {
    let dir = tempfile::tempdir().unwrap();
    let o = trustlab(dir.path(), &["gen-noise", "--pattern", "symmetric", "--epsilon", "0.4", "--classes", "10"]);
    assert!(o.status.success());
    let ratio: f64 = value(&o, "noise_ratio").parse().unwrap();
    assert!((ratio - 0.4).abs() < 1e-12);
    let path = value(&o, "artifact");
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().count(), 10);
    assert!(text.lines().all(|l| l.split(',').count() == 10));
}

#[test]
fn gen_noise_bimodal_has_two_ridges() {
    let dir = tempfile::tempdir().unwrap();
    let o = trustlab(
        dir.path(),
        &[
            "gen-noise", "--pattern", "bimodal", "--epsilon", "0.9", "--classes", "10", "--mu1", "2", "--sigma1", "0.5",
            "--mu2", "7", "--sigma2", "0.5",
        ],
    );
    assert!(o.status.success());
    let text = std::fs::read_to_string(value(&o, "artifact")).unwrap();
    let mut ridges = std::collections::BTreeSet::new();
    for line in text.lines() {
        let row: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        let best = (0..10).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        ridges.insert(best);
    }
    assert!(ridges.contains(&2) && ridges.contains(&7));
}

#[test]
fn bad_epsilon_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = trustlab(dir.path(), &["gen-noise", "--pattern", "symmetric", "--epsilon", "1.5", "--classes", "10"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bound_symmetric_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o = trustlab(dir.path(), &["bound", "--pattern", "symmetric", "--classes", "10", "--grid", "0,0.5,1"]);
    assert!(o.status.success());
    let rows = read_rows(Path::new(&value(&o, "artifact")));
    let want = [(0.0, 1.0), (0.5, 0.277778), (1.0, 0.111111)];
    assert_eq!(rows.len(), 3);
    for (row, (e, a)) in rows.iter().zip(want) {
        assert_eq!(row[0], e);
        assert!((row[1] - a).abs() < 1e-6, "{row:?}");
    }

    let one = trustlab(dir.path(), &["bound", "--pattern", "symmetric", "--classes", "10", "--grid", "0.3", "--out", "one.csv"]);
    assert_eq!(read_rows(Path::new(&value(&one, "artifact"))).len(), 1);
}

#[test]
fn bound_from_matrix_file_matches_pattern() {
    let dir = tempfile::tempdir().unwrap();
    let g = trustlab(
        dir.path(),
        &["gen-noise", "--pattern", "truncated-normal", "--epsilon", "0.5", "--classes", "6", "--mu", "1", "--sigma", "0.5"],
    );
    assert!(g.status.success());
    let from_pattern = trustlab(
        dir.path(),
        &[
            "bound", "--pattern", "truncated-normal", "--classes", "6", "--mu", "1", "--sigma", "0.5", "--grid", "0.5",
            "--out", "p.csv",
        ],
    );
    let from_matrix = trustlab(dir.path(), &["bound", "--matrix", "transition.csv", "--grid", "0.5", "--out", "m.csv"]);
    let a = read_rows(Path::new(&value(&from_pattern, "artifact")));
    let b = read_rows(Path::new(&value(&from_matrix, "artifact")));
    assert!((a[0][1] - b[0][1]).abs() < 1e-12);
}

#[test]
fn infeasible_requests_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    trustlab(dir.path(), &["gen-noise", "--pattern", "symmetric", "--epsilon", "0", "--classes", "4", "--out", "clean.csv"]);
    let o = trustlab(dir.path(), &["rescale", "--matrix", "clean.csv", "--epsilon", "0.3"]);
    assert_eq!(o.status.code(), Some(3));
    let o = trustlab(dir.path(), &["bound", "--matrix", "clean.csv", "--grid", "0.2,0.4"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn rescale_hits_target() {
    let dir = tempfile::tempdir().unwrap();
    trustlab(dir.path(), &["gen-noise", "--pattern", "symmetric", "--epsilon", "0.4", "--classes", "5"]);
    let o = trustlab(dir.path(), &["rescale", "--matrix", "transition.csv", "--epsilon", "0.1"]);
    assert!(o.status.success());
    let ratio: f64 = value(&o, "noise_ratio").parse().unwrap();
    assert!((ratio - 0.1).abs() < 1e-12);
}

#[test]
fn corrupt_and_split_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let o = trustlab(dir.path(), &["corrupt", "--config", "tiny.toml", "--epsilon", "0.3", "--out", "gen"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = trustlab(dir.path(), &["split", "--data", "gen/untrusted.csv", "--classes", "4", "--fraction", "0.2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trusted = std::fs::read_to_string(dir.path().join("split/trusted.csv")).unwrap();
    let untrusted = std::fs::read_to_string(dir.path().join("split/untrusted.csv")).unwrap();
    assert_eq!(trusted.lines().count() - 1 + untrusted.lines().count() - 1, 360);
    let o = trustlab(
        dir.path(),
        &["corrupt", "--data", "gen/test.csv", "--matrix", "gen/transition.csv", "--classes", "4", "--out", "c.csv"],
    );
    assert!(o.status.success());
}

#[test]
fn train_clean_data_is_accurate() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let o = trustlab(dir.path(), &["train", "--config", "tiny.toml"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(dir.path().join("run/report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("method,seed,clean_acc,noisy_acc,seconds"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "ce");
    assert!(row[2].parse::<f64>().unwrap() >= 0.98, "{report}");
    assert!(dir.path().join("run/report.json").exists());
}

#[test]
fn sweep_rows_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let args = [
        "sweep", "--config", "tiny.toml", "--epsilons", "0,0.2,0.4", "--methods", "ce,bootstrap", "--seeds", "1,2,3",
        "--epochs", "2",
    ];
    let a = trustlab(dir.path(), &args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let first = std::fs::read(dir.path().join("run/sweep.csv")).unwrap();
    let first_json = std::fs::read(dir.path().join("run/sweep.json")).unwrap();
    assert_eq!(String::from_utf8_lossy(&first).lines().count(), 19);
    let b = trustlab(dir.path(), &args);
    assert!(b.status.success());
    assert_eq!(std::fs::read(dir.path().join("run/sweep.csv")).unwrap(), first);
    assert_eq!(std::fs::read(dir.path().join("run/sweep.json")).unwrap(), first_json);
    assert_eq!(stdout(&a), stdout(&b));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = trustlab(dir.path(), &["train", "--config", "missing.toml"]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(dir.path().join("bad.toml"), "unknown_key = 3\n").unwrap();
    let o = trustlab(dir.path(), &["sweep", "--config", "bad.toml"]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let o = trustlab(dir.path(), &["train", "--config", "tiny.toml", "--methods", "mae"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergence_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TINY.replace("learning_rate = 0.05", "learning_rate = 1e200");
    std::fs::write(dir.path().join("hot.toml"), cfg).unwrap();
    let o = trustlab(dir.path(), &["train", "--config", "hot.toml"]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}
