use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hydrocurate_core::fixture::{write_fixture, Fixture};
use hydrocurate_core::metrics::read_predictions_csv;
use hydrocurate_core::mock::MockServer;
use hydrocurate_core::pipeline::{Funnel, PipelineConfig};
use hydrocurate_core::report::{evaluate_rows, Evaluation};

struct Env {
    root: tempfile::TempDir,
    fixture: Fixture,
    server: MockServer,
}

impl Env {
    fn new() -> Env {
        let root = tempfile::tempdir().unwrap();
        let fixture = write_fixture(&root.path().join("fixture")).unwrap();
        let server = MockServer::start(fixture.data.clone()).unwrap();
        Env { root, fixture, server }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.path().join(rel)
    }

    /// Writes a config whose relative paths resolve inside the fixture.
    fn config(&self, edit: impl FnOnce(&mut PipelineConfig)) -> PathBuf {
        let mut cfg = PipelineConfig::default();
        cfg.endpoints.images = self.server.images_url();
        cfg.endpoints.params = self.server.params_url();
        cfg.ingest.sites = PathBuf::from("fixture/sites.csv");
        cfg.ingest.start = self.fixture.range.start;
        cfg.ingest.end = self.fixture.range.end;
        cfg.ingest.page_size = 16;
        cfg.ingest.max_attempts = 2;
        cfg.ingest.initial_backoff_ms = 1;
        cfg.ingest.max_backoff_ms = 1;
        cfg.segval.images_dir = self.fixture.images_dir.clone();
        cfg.segval.masks_dir = self.fixture.masks_dir.clone();
        edit(&mut cfg);
        let path = self.path("hydrocurate.toml");
        fs::write(&path, cfg.to_toml_string().unwrap()).unwrap();
        path
    }
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hydrocurate"))
        .args(args)
        .env_remove("HYDRO_ENDPOINT_IMAGES")
        .env_remove("HYDRO_ENDPOINT_PARAMS")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert_eq!(code(&out), 0, "{args:?}\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["evaluate"])), 1);
    assert_eq!(code(&run(&["--seed", "x", "run"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn separate_stages_reproduce_the_chained_run() {
    let env = Env::new();
    let cfg = env.config(|_| {});
    let (a, b) = (env.path("stages"), env.path("chained"));
    for stage in ["ingest", "daynight", "segval", "align"] {
        ok(&["--config", s(&cfg), "--out-dir", s(&a), stage]);
    }
    let stdout = ok(&["--config", s(&cfg), "--out-dir", s(&b), "run"]);
    assert!(stdout.contains("matched: 90"), "{stdout}");
    assert_eq!(snapshot(&a), snapshot(&b));

    let funnel = Funnel::read(&a.join("funnel.json")).unwrap();
    let after: Vec<usize> = funnel.stages.iter().map(|s| s.after).collect();
    assert_eq!(after, [200, 150, 120, 100, 90]);

    let resumed = ok(&["--config", s(&cfg), "--out-dir", s(&b), "run", "--resume"]);
    assert_eq!(resumed.matches("up to date").count(), 4, "{resumed}");
}

#[test]
fn seed_flag_changes_only_seeded_outputs() {
    let env = Env::new();
    let cfg = env.config(|_| {});
    let (a, b) = (env.path("a"), env.path("b"));
    ok(&["--config", s(&cfg), "--out-dir", s(&a), "--seed", "1", "run"]);
    ok(&["--config", s(&cfg), "--out-dir", s(&b), "--seed", "2", "run"]);
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    assert_eq!(sa["dataset_turbidity.csv"], sb["dataset_turbidity.csv"]);
    assert_eq!(sa["funnel.json"], sb["funnel.json"]);
    assert_ne!(sa["dataset_turbidity_train.csv"], sb["dataset_turbidity_train.csv"]);
}

#[test]
fn report_renders_artifacts_present_in_out_dir() {
    let env = Env::new();
    let cfg = env.config(|_| {});
    let out = env.path("out");
    ok(&["--config", s(&cfg), "--out-dir", s(&out), "run"]);
    ok(&["--out-dir", s(&out), "report"]);
    for f in ["funnel.svg", "funnel.md", "dictionary.md"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let md = fs::read_to_string(out.join("funnel.md")).unwrap();
    assert!(md.contains("| matched | 100 | 90 | 10 |"), "{md}");

    let empty = env.path("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(code(&run(&["--out-dir", s(&empty), "report"])), 2);
}

#[test]
fn evaluate_writes_scores_and_report_draws_confusions() {
    let env = Env::new();
    let out = env.path("eval");
    let csv = env.path("predictions.csv");
    let mut text = String::from("image_path,actual,predicted,model_tag,parameter\n");
    for i in 0..30 {
        let actual = f64::from(i);
        for (model, predicted) in [("VGG16", actual + 0.5), ("ViT", 29.0 - actual)] {
            text.push_str(&format!("img{i}.jpg,{actual},{predicted},{model},turbidity\n"));
        }
    }
    fs::write(&csv, text).unwrap();
    let stdout = ok(&["--out-dir", s(&out), "evaluate", "--predictions", s(&csv)]);
    assert!(stdout.contains("VGG16") && stdout.contains("ViT"), "{stdout}");

    let written: Vec<Evaluation> =
        serde_json::from_str(&fs::read_to_string(out.join("evaluations.json")).unwrap()).unwrap();
    let direct = evaluate_rows(&read_predictions_csv(&csv).unwrap()).unwrap();
    assert_eq!(written, direct);
    assert!(out.join("metrics.md").is_file());

    ok(&["--out-dir", s(&out), "report"]);
    assert!(out.join("confusion_turbidity_vgg16.svg").is_file());
    assert!(out.join("confusion_turbidity_vit.svg").is_file());

    fs::write(&csv, "a,b\n1,2\n").unwrap();
    assert_eq!(code(&run(&["--out-dir", s(&out), "evaluate", "--predictions", s(&csv)])), 2);
}

#[test]
fn failures_map_to_exit_codes() {
    let env = Env::new();
    let out = env.path("out");

    let cfg = env.config(|c| c.ingest.sites = PathBuf::from("missing/sites.csv"));
    let res = run(&["--config", s(&cfg), "--out-dir", s(&out), "ingest"]);
    assert_eq!(code(&res), 1);
    assert!(String::from_utf8_lossy(&res.stderr).contains("missing/sites.csv"));

    let bad = env.path("bad.toml");
    fs::write(&bad, "[ingest]\nno_such_key = 1\n").unwrap();
    assert_eq!(code(&run(&["--config", s(&bad), "run"])), 1);

    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    drop(listener);
    let cfg = env.config(|c| c.endpoints.images = format!("http://127.0.0.1:{port}/images"));
    assert_eq!(code(&run(&["--config", s(&cfg), "--out-dir", s(&out), "ingest"])), 3);

    let cfg = env.config(|c| c.segval.masks_dir = PathBuf::from("nowhere"));
    let res = run(&["--config", s(&cfg), "--out-dir", s(&out), "run"]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("segval stage"));
}

/// Speaks the trainer protocol with a constant loss of 0.9 - 0.1 * trial id,
/// echoing every instructed learning rate.
const TRAINER: &str = r#"
read cfg
id=$(printf '%s' "$cfg" | sed -n 's/.*"trial_id":\([0-9]*\).*/\1/p')
lr=$(printf '%s' "$cfg" | sed -n 's/.*"learning_rate":\([^,}]*\).*/\1/p')
loss="0.$((9 - id))"
echo "{\"type\":\"ready\",\"trial_id\":$id}"
epoch=1
while :; do
  echo "{\"type\":\"epoch\",\"epoch\":$epoch,\"train_loss\":$loss,\"val_loss\":$loss,\"lr\":$lr,\"wall_seconds\":0.0}"
  read reply || exit 0
  case "$reply" in
    *set_lr*) lr=$(printf '%s' "$reply" | sed -n 's/.*"lr":\([^,}]*\).*/\1/p') ;;
    *stop*) echo "{\"type\":\"done\",\"best_epoch\":1,\"checkpoint\":null}"; exit 0 ;;
  esac
  epoch=$((epoch + 1))
done
"#;

#[test]
fn study_writes_ledgers_and_best_cell_table() {
    let env = Env::new();
    let script = env.path("trainer.sh");
    fs::write(&script, TRAINER).unwrap();
    let cfg = env.config(|c| {
        c.study.trainer = vec!["sh".into(), s(&script).into()];
        c.study.budget = 3;
    });
    let out = env.path("out");
    let stdout = ok(&[
        "--config", s(&cfg), "--out-dir", s(&out), "study", "--architecture", "vgg16", "--architecture", "ViT",
    ]);
    let study = out.join("study");
    for arch in ["vgg16", "vit"] {
        let ledger = fs::read_to_string(study.join(format!("ledger_turbidity_fnu_{arch}.jsonl"))).unwrap();
        assert_eq!(ledger.lines().count(), 3);
    }
    let table = fs::read_to_string(study.join("best_cells.md")).unwrap();
    assert_eq!(stdout.matches("0.7000").count(), 2, "{stdout}");
    assert!(table.contains("| VGG16 | 0.7000 |") && table.contains("| ViT | 0.7000 |"), "{table}");

    let again = ok(&["--config", s(&cfg), "--out-dir", s(&out), "study", "--architecture", "vgg16"]);
    assert!(again.contains("3 resumed"), "{again}");

    let cfg = env.config(|c| c.study.trainer = vec![env.path("no-such-trainer").display().to_string()]);
    assert_eq!(code(&run(&["--config", s(&cfg), "--out-dir", s(&env.path("out2")), "study", "--budget", "1"])), 1);
}
