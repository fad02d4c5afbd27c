use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

const SMALL: &str = "\
synth_train_speakers = 60
synth_dev_speakers = 12
synth_eval_speakers = 12
synth_max_impostors = 800
epochs = 2,4
seeds = 1,2
batch_speakers = 12
tbc_target_goal = 20
tbc_max_impostors = 500
analyze_max_points = 40
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_asdplda"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin().arg("--config").arg(dir.join("small.cfg")).arg("--out").arg(dir).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn workspace(dir: &Path) {
    std::fs::write(dir.join("small.cfg"), SMALL).unwrap();
    run(dir, &["generate"]);
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

/// A generated benchmark with a baseline and one trained model, shared by the
/// tests that only read it.
fn shared() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli-shared");
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        workspace(&dir);
        run(&dir, &["init", "--train", &p(&dir, "train"), "--cal", &p(&dir, "dev-d1-clean")]);
        run(&dir, &["train", "--train", &p(&dir, "train")]);
        dir
    })
}

#[test]
fn generate_writes_every_set() {
    let dir = shared();
    for name in ["train.emb", "train.meta.tsv", "config.txt"] {
        assert!(dir.join(name).exists(), "{name}");
    }
    for split in ["dev", "eval"] {
        for c in ["d1-clean", "d1-noisy", "d2-clean", "d2-noisy"] {
            for ext in [".emb", ".meta.tsv", ".trials.tsv", ".oracle.tsv"] {
                assert!(dir.join(format!("{split}-{c}{ext}")).exists(), "{split}-{c}{ext}");
            }
        }
    }
}

#[test]
fn evaluate_on_oracle_scores_is_nearly_calibrated() {
    let dir = tempfile::tempdir().unwrap();
    let base = shared();
    let out = bin()
        .args(["evaluate", "--out"])
        .arg(dir.path())
        .arg("--scores")
        .arg(base.join("eval-d1-clean.oracle.tsv"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let table = std::fs::read_to_string(dir.path().join("evaluate.tsv")).unwrap();
    let row: Vec<&str> = table.lines().nth(1).unwrap().split('\t').collect();
    let (actual, min): (f64, f64) = (row[3].parse().unwrap(), row[4].parse().unwrap());
    assert!(actual - min < 0.05 && actual >= min, "actual {actual} min {min}");
}

#[test]
fn scoring_commands_write_their_outputs() {
    let base = shared();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("small.cfg"), SMALL).unwrap();
    let eval = p(base, "eval-d1-noisy");
    run(d, &["score", "--model", &p(base, "plda.json"), "--set", &eval]);
    std::fs::rename(d.join("eval-d1-noisy.scores.tsv"), d.join("plda.tsv")).unwrap();
    run(d, &["score", "--model", &p(base, "model.seed1.epoch4.json"), "--set", &eval]);
    run(d, &["tbc-score", "--model", &p(base, "plda.json"), "--pool", &p(base, "dev-d1-clean"), "--pool", &p(base, "dev-d1-noisy"), "--set", &eval]);
    let out = run(d, &["evaluate", "--scores", &p(d, "plda.tsv"), "--scores", &p(d, "eval-d1-noisy.scores.tsv"), "--scores", &p(d, "eval-d1-noisy.tbc.scores.tsv")]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 4, "{stdout}");
    let trials = std::fs::read_to_string(base.join("eval-d1-noisy.trials.tsv")).unwrap().lines().count();
    let scores = std::fs::read_to_string(d.join("eval-d1-noisy.tbc.scores.tsv")).unwrap().lines().count();
    assert!(scores >= trials);
}

#[test]
fn analysis_commands_write_tables() {
    let base = shared();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("small.cfg"), SMALL).unwrap();
    let model = p(base, "model.seed1.epoch4.json");
    let sets = ["eval-d1-clean", "eval-d1-noisy"].map(|s| p(base, s));
    let out = run(d, &["analyze-z", "--model", &model, "--train", &p(base, "train"), "--set", &sets[0], "--set", &sets[1]]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("separation"));
    let z = std::fs::read_to_string(d.join("analyze_z.tsv")).unwrap();
    assert_eq!(z.lines().filter(|l| l.contains("\tcentroid\t")).count(), 2);
    run(d, &["probe-z", "--model", &model, "--train", &p(base, "train"), "--set", &sets[0], "--set", &sets[1]]);
    let probe = std::fs::read_to_string(d.join("probe_z.tsv")).unwrap();
    assert_eq!(probe.lines().count(), 1 + 3 * 2);
}

#[test]
fn sweep_writes_table_and_best_snapshot() {
    let base = shared();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("small.cfg"), SMALL).unwrap();
    run(d, &["sweep", "--train", &p(base, "train"), "--dev", &p(base, "dev-d1-clean"), "--dev", &p(base, "dev-d2-noisy")]);
    let table = std::fs::read_to_string(d.join("sweep.tsv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 2 * 2);
    let snapshots = std::fs::read_dir(d).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("model.seed")).count();
    assert_eq!(snapshots, 1);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [a.path(), b.path()] {
        workspace(d);
        run(d, &["--epochs", "2", "train", "--train", &p(d, "train")]);
    }
    for name in ["train.emb", "eval-d2-clean.trials.tsv", "eval-d2-clean.oracle.tsv", "config.txt", "model.seed1.epoch2.json"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn usage_errors_exit_with_one() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).to_lowercase().contains("usage"));

    let out = bin().args(["score", "--set", "x"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "no_such_key = 3\n").unwrap();
    let out = bin().arg("--config").arg(&cfg).arg("--out").arg(dir.path()).arg("generate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
}

#[test]
fn data_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .arg("--out")
        .arg(dir.path())
        .args(["score", "--model"])
        .arg(dir.path().join("missing.json"))
        .arg("--set")
        .arg(dir.path().join("missing"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_exits_with_zero() {
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["generate", "init", "train", "sweep", "score", "tbc-score", "evaluate", "analyze-z", "probe-z"] {
        assert!(text.contains(sub), "{sub}");
    }
}
