use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SPEC: &str = r#"
images = 16
grid = [8, 8]
channels = 16
sigma_n = 0.1
seed = 3

[[pseudo]]
magnitude = 3.0
probability = 0.5
blob = [4, 4]
spread = 0.3

[defect]
distance = 10.0
blob = [2, 2]
fraction = 0.25
"#;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pa-score"));
    cmd.env("RUST_LOG", "warn");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    /// A synthetic container plus a config pointing at it.
    fn new(spec: &str, config_extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let spec_path = dir.path().join("spec.toml");
        fs::write(&spec_path, spec).unwrap();
        let out = run(&[
            "synth",
            "--spec",
            spec_path.to_str().unwrap(),
            "--out",
            dir.path().join("container").to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let config = format!("container = \"container\"\noutput = \"out\"\n\n[aggregation]\nscales = [1, 3]\n{config_extra}");
        fs::write(dir.path().join("config.toml"), config).unwrap();
        Self { dir }
    }

    fn config(&self) -> String {
        self.dir
            .path()
            .join("config.toml")
            .to_string_lossy()
            .into_owned()
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn cmd(&self, args: &[&str]) -> Output {
        let config = self.config();
        let mut all = vec!["--config", config.as_str()];
        all.extend_from_slice(args);
        run(&all)
    }
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn printed_config_is_a_valid_config() {
    let out = run(&["--print-config"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = pa_score::PipelineConfig::parse(&text).unwrap();
    assert_eq!(cfg, pa_score::PipelineConfig::default());
    for key in [
        "alpha",
        "tau_percentile",
        "k_min",
        "k_max",
        "pad_enabled",
        "full_ratio",
        "fpr_limit",
    ] {
        assert!(text.contains(key), "{key} undocumented");
    }
}

#[test]
fn run_writes_full_report() {
    let fx = Fixture::new(SPEC, "");
    let out = fx.cmd(&["run"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(fx.path("out/report.json")).unwrap()).unwrap();
    let metrics = report["metrics"].as_object().unwrap();
    assert_eq!(metrics.len(), 7);
    for (name, v) in metrics {
        let v = v.as_f64().unwrap_or_else(|| panic!("{name} = {v}"));
        assert!((0.0..=100.0).contains(&v));
        assert_eq!((v * 10.0).round() / 10.0, v);
    }
    assert_eq!(fs::read_dir(fx.path("out/maps")).unwrap().count(), 32);
    let png = fs::read(fx.path("out/maps/0000_img_000.png")).unwrap();
    let decoder = png::Decoder::new(std::io::Cursor::new(png));
    let reader = decoder.read_info().unwrap();
    assert_eq!(reader.info().bit_depth, png::BitDepth::Sixteen);
    assert_eq!((reader.info().width, reader.info().height), (32, 32));
    let table = fs::read_to_string(fx.path("out/scores.csv")).unwrap();
    assert_eq!(table.lines().count(), 17);
    assert!(!fx.path("out.partial").exists());
}

#[test]
fn runs_are_byte_identical_across_worker_counts() {
    let fx = Fixture::new(SPEC, "");
    assert_eq!(code(&fx.cmd(&["run", "--jobs", "1"])), 0);
    let first = read_tree(&fx.path("out"));
    assert_eq!(code(&fx.cmd(&["run", "--jobs", "3"])), 0);
    assert_eq!(first, read_tree(&fx.path("out")));
}

#[test]
fn cached_banks_reproduce_a_cold_run() {
    let fx = Fixture::new(SPEC, "");
    let cache = fx.path("cache");
    let cache = cache.to_str().unwrap();
    assert_eq!(code(&fx.cmd(&["run"])), 0);
    let cold = read_tree(&fx.path("out"));
    assert_eq!(code(&fx.cmd(&["build-banks", "--bank-cache", cache])), 0);
    let banks = fs::read_dir(fx.path("cache")).unwrap().count();
    // normal + full at two scales, three files each
    assert_eq!(banks, 12);
    assert_eq!(code(&fx.cmd(&["run", "--bank-cache", cache])), 0);
    assert_eq!(cold, read_tree(&fx.path("out")));

    // a different seed must not reuse the cached banks
    assert_eq!(
        code(&fx.cmd(&["run", "--bank-cache", cache, "--seed", "9"])),
        0
    );
    let reseeded = read_tree(&fx.path("out"));
    assert_eq!(code(&fx.cmd(&["run", "--seed", "9"])), 0);
    assert_eq!(reseeded, read_tree(&fx.path("out")));
}

#[test]
fn score_then_evaluate_matches_run() {
    let fx = Fixture::new(SPEC, "");
    assert_eq!(code(&fx.cmd(&["run"])), 0);
    let report = fs::read(fx.path("out/report.json")).unwrap();
    assert_eq!(code(&fx.cmd(&["score"])), 0);
    assert!(!fx.path("out/report.json").exists());
    assert_eq!(code(&fx.cmd(&["evaluate"])), 0);
    assert_eq!(report, fs::read(fx.path("out/report.json")).unwrap());
}

#[test]
fn select_and_validate() {
    let fx = Fixture::new(SPEC, "");
    assert_eq!(code(&fx.cmd(&["select"])), 0);
    let sel: serde_json::Value =
        serde_json::from_slice(&fs::read(fx.path("out/selection.json")).unwrap()).unwrap();
    // max(1, ceil(0.1 * 16)) = 2
    assert_eq!(sel["selected"].as_array().unwrap().len(), 2);
    assert_eq!(sel["ranking"].as_array().unwrap().len(), 16);
    let out = fx.cmd(&["extract-validate"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("16 images"));
}

#[test]
fn config_errors_exit_2() {
    let fx = Fixture::new(SPEC, "[decision]\nalpha = 1.5\n");
    assert_eq!(code(&fx.cmd(&["run"])), 2);
    let fx = Fixture::new(SPEC, "[toggles]\npad = true\n");
    assert_eq!(code(&fx.cmd(&["run"])), 2);
    assert_eq!(
        code(&run(&["run", "--config", "/nonexistent/config.toml"])),
        2
    );
    assert_eq!(code(&run(&["run", "--jobs", "many"])), 2);
    let fx = Fixture::new(SPEC, "");
    fs::write(fx.path("bad.toml"), "images = 2\ngrid = [2, 2]\nchannels = 4\nsigma_n = 0.1\n[defect]\ndistance = 1.0\nblob = [9, 9]\nfraction = 0.5\n").unwrap();
    let out = run(&[
        "synth",
        "--spec",
        fx.path("bad.toml").to_str().unwrap(),
        "--out",
        fx.path("x").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(!fx.path("x").exists());
}

#[test]
fn data_errors_exit_3_and_leave_no_output() {
    let fx = Fixture::new(SPEC, "");
    let blob = fx.path("container/features/img_004.bin");
    let bytes = fs::read(&blob).unwrap();
    fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
    let out = fx.cmd(&["run"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("img_004"));
    assert!(!fx.path("out").exists());
    assert!(!fx.path("out.partial").exists());
}

#[test]
fn undefined_metrics_exit_4_with_report() {
    let no_defects = SPEC.replace("fraction = 0.25", "fraction = 0.0");
    let fx = Fixture::new(&no_defects, "");
    assert_eq!(code(&fx.cmd(&["run"])), 4);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(fx.path("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["metrics"]["AUROC-cls"], "n/a");
    assert_eq!(report["metrics"]["PRO-segm"], "n/a");
}

#[test]
fn pad_off_matches_plain_full_bank_scoring() {
    let fx = Fixture::new(SPEC, "[toggles]\npad_enabled = false\n");
    assert_eq!(code(&fx.cmd(&["run"])), 0);
    let pad_off = fs::read(fx.path("out/scores.csv")).unwrap();
    fs::write(
        fx.path("config.toml"),
        "container = \"container\"\noutput = \"out\"\n[aggregation]\nscales = [1, 3]\n[toggles]\npam_enabled = false\n",
    )
    .unwrap();
    assert_eq!(code(&fx.cmd(&["run"])), 0);
    assert_eq!(pad_off, fs::read(fx.path("out/scores.csv")).unwrap());
}
