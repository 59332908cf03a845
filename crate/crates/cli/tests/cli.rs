use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
embedding_dim = 16
subspace_dim = 2
subclusters = 2
kmeans_k = 4
kmeans_restarts = 1
epochs = 2
batch_size = 8
seeds = 2
hidden_units = 8
hidden_layers = 1
sweep_dims = 2,4
synth_sections = 2
synth_latent_dim = 2
synth_source_train = 12
synth_target_train = 3
synth_test_normal = 4
synth_test_anomalous = 4
synth_spectrogram_dim = 6
synth_spectrum_dim = 6
";

fn adaproj(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adaproj"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_train_score_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.cfg"), TINY).unwrap();
    ok(&adaproj(&["synth", "--config", "tiny.cfg", "--out", "data"], d));
    assert!(fs::read_to_string(d.join("data/manifest.csv")).unwrap().starts_with("id,path,machine_type,"));

    let manifest_cfg = format!("{TINY}manifest = data/manifest.csv\n");
    fs::write(d.join("m.cfg"), manifest_cfg).unwrap();
    ok(&adaproj(&["train", "--config", "m.cfg", "--out", "sys", "--loss", "adacos"], d));
    assert!(d.join("sys/model.adpj").exists());
    assert!(d.join("sys/scorers/synth_00.km").exists());
    assert_eq!(&fs::read(d.join("sys/model.adpj")).unwrap()[..5], b"ADPJ1");

    ok(&adaproj(&["score", "--config", "m.cfg", "--out", "sys"], d));
    let scores = fs::read_to_string(d.join("sys/scores.csv")).unwrap();
    assert!(scores.starts_with("sample_id,section,domain,label,score\n"));
    assert_eq!(scores.lines().count(), 1 + 2 * 2 * (4 + 4));

    let out = adaproj(&["eval", "--config", "m.cfg", "--out", "sys"], d);
    ok(&out);
    let results = fs::read_to_string(d.join("sys/results.csv")).unwrap();
    assert!(results.starts_with("section,domain_scope,auc,pauc\n"));
    assert!(results.lines().last().unwrap().starts_with("ALL,official,"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("official score"));
}

#[test]
fn run_and_sweep_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.cfg"), TINY).unwrap();
    ok(&adaproj(&["run", "--config", "tiny.cfg", "--out", "run", "--seed-offset", "5"], d));
    assert!(d.join("run/trial_5/results.csv").exists());
    assert!(d.join("run/trial_6/scores.csv").exists());
    assert!(d.join("run/aggregate.csv").exists());
    ok(&adaproj(&["sweep", "--config", "tiny.cfg", "--out", "sweep"], d));
    let sweep = fs::read_to_string(d.join("sweep/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);
}

#[test]
fn compare_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.cfg"), TINY.replace("seeds = 2", "seeds = 1")).unwrap();
    ok(&adaproj(&["compare", "--config", "tiny.cfg", "--out", "a"], d));
    ok(&adaproj(&["compare", "--config", "tiny.cfg", "--out", "b"], d));
    let a = fs::read(d.join("a/comparison.csv")).unwrap();
    assert_eq!(a, fs::read(d.join("b/comparison.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("loss_head,auc_mean,auc_std,pauc_mean,pauc_std,official_mean,official_std\n"));
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.cfg"), "colour = blue\n").unwrap();
    assert_eq!(adaproj(&["run", "--config", "bad.cfg"], d).status.code(), Some(2));
    fs::write(d.join("tiny.cfg"), TINY).unwrap();
    assert_eq!(adaproj(&["run", "--config", "tiny.cfg", "--subspace-dim", "16"], d).status.code(), Some(2));
    assert_eq!(adaproj(&["run", "--config", "tiny.cfg", "--loss", "arcface"], d).status.code(), Some(2));
    assert_eq!(adaproj(&["run", "--config", "missing.cfg"], d).status.code(), Some(2));
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("m.csv"),
        "id,path,machine_type,section,domain,split,label,attributes\na,a.ft,fan,00,source,train,anomalous,\n",
    )
    .unwrap();
    fs::write(d.join("m.cfg"), format!("{TINY}manifest = m.csv\n")).unwrap();
    assert_eq!(adaproj(&["train", "--config", "m.cfg", "--out", "o"], d).status.code(), Some(3));

    fs::write(d.join("m.csv"), "id,path,machine_type,section,domain,split,label,attributes\na,a.ft,fan,00,source,train,normal,\n")
        .unwrap();
    fs::write(d.join("a.ft"), b"garbage").unwrap();
    assert_eq!(adaproj(&["train", "--config", "m.cfg", "--out", "o"], d).status.code(), Some(3));
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["quick.cfg", "benchmark.cfg"] {
        let cfg = adaproj_core::harness::ExperimentConfig::load(&root.join(name)).unwrap();
        if name == "benchmark.cfg" {
            assert_eq!(cfg, adaproj_core::harness::ExperimentConfig::default());
        }
    }
}
