use std::path::Path;
use std::process::{Command, Output};

use iformer::analysis::count_params;
use iformer::backbone::{IFormer, ModelConfig};

fn iformer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iformer")).args(args).env_remove("IFORMER_THREADS").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// `total: params N (...), FLOPs M (...)`
fn totals(text: &str) -> (u64, u64) {
    let line = text.lines().find(|l| l.starts_with("total:")).expect("total line");
    let words: Vec<&str> = line.split_whitespace().collect();
    let after = |key: &str| words[words.iter().position(|w| *w == key).unwrap() + 1].parse().unwrap();
    (after("params"), after("FLOPs"))
}

fn write_ppm(path: &Path, size: usize) {
    let mut bytes = format!("P6\n{size} {size}\n255\n").into_bytes();
    bytes.extend((0..size * size * 3).map(|i| (i * 7 % 256) as u8));
    std::fs::write(path, bytes).unwrap();
}

fn micro_128(dir: &Path) -> String {
    let path = dir.join("micro128.toml");
    std::fs::write(&path, "preset = \"iformer-micro\"\ninput_size = 128\n").unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn describe_reproduces_published_totals() {
    for (preset, params, flops) in [("iformer-s", 20e6, 4.8e9), ("iformer-b", 48e6, 9.4e9), ("iformer-l", 87e6, 14.0e9)] {
        let o = iformer(&["describe", "--preset", preset]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let (p, f) = totals(&stdout(&o));
        assert!((p as f64 - params).abs() <= 0.1 * params, "{preset} params {p}");
        assert!((f as f64 - flops).abs() <= 0.1 * flops, "{preset} FLOPs {f}");
    }
    let text = stdout(&iformer(&["describe", "--preset", "iformer-s"]));
    assert!(text.contains("ramp C_h/h per block: 3/10 3/10 3/10 2/10 2/10 2/10 2/10 1/10 1/10"), "{text}");
    assert!(text.contains("stage3: 14x14") && text.contains("pool stride 1"));
}

#[test]
fn describe_micro_matches_count_params_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("cost.csv");
    let o = iformer(&["describe", "--preset", "iformer-micro", "--csv", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let expected = count_params(&IFormer::new(&ModelConfig::preset("iformer-micro").unwrap()).unwrap());
    let (p, f) = totals(&stdout(&o));
    assert_eq!(p, expected);
    let text = std::fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().last().unwrap(), format!("total,{p},{f}"));
}

#[test]
fn unknown_preset_lists_valid_ones() {
    let o = iformer(&["describe", "--preset", "iformer-xl"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("iformer-s, iformer-b, iformer-l, iformer-micro"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_2_with_paths() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "preset = \"iformer-micro\"\ninput_size = 48\n").unwrap();
    let o = iformer(&["describe", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bad.toml"), "{}", stderr(&o));
    assert_eq!(code(&iformer(&["describe"])), 2);
    assert_eq!(code(&iformer(&["describe", "--preset", "iformer-s", "--config", "x.toml"])), 2);
}

#[test]
fn every_subcommand_documents_its_flags() {
    for (cmd, flags) in [
        ("describe", &["--preset", "--config", "--input-size", "--csv"][..]),
        ("forward", &["--seed", "--weights", "--image", "--random", "--dump-stage", "--out"]),
        ("spectrum", &["--stage", "--block", "--branch", "--compare", "--input", "--feed", "--bins", "--out"]),
        ("gradcheck", &["--tolerance", "--sabotage", "--samples"]),
        ("train-toy", &["--steps", "--seed", "--lr", "--out"]),
        ("ablate", &["--variants", "--seeds", "--steps", "--out"]),
    ] {
        let o = iformer(&[cmd, "--help"]);
        assert_eq!(code(&o), 0);
        let text = stdout(&o);
        for flag in flags {
            assert!(text.contains(flag), "{cmd} --help lacks {flag}");
        }
    }
}

const MICRO_SEED0_CHECKSUMS: [&str; 4] = [
    "stage1 [1, 8, 8, 16] sha256:40337cf829a0b3a5",
    "stage2 [1, 4, 4, 32] sha256:5eac701a2fc84492",
    "stage3 [1, 2, 2, 48] sha256:a6f9791328887c61",
    "stage4 [1, 1, 1, 64] sha256:fcc2781971537cfb",
];

#[test]
fn forward_checksums_are_stable() {
    let args = ["forward", "--preset", "iformer-micro", "--seed", "0", "--random"];
    let (a, b) = (iformer(&args), iformer(&args));
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    for line in MICRO_SEED0_CHECKSUMS {
        assert!(text.contains(line), "{text}");
    }
    let other = stdout(&iformer(&["forward", "--preset", "iformer-micro", "--seed", "1", "--random"]));
    assert!(!other.contains(MICRO_SEED0_CHECKSUMS[0]));
}

#[test]
fn forward_on_a_224_image_gives_stage_resolutions() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("x.ppm");
    write_ppm(&img, 224);
    let o = iformer(&["forward", "--preset", "iformer-s", "--seed", "0", "--image", img.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    for shape in ["[1, 56, 56, 96]", "[1, 28, 28, 192]", "[1, 14, 14, 320]", "[1, 7, 7, 384]", "[1, 1000]"] {
        assert!(text.contains(shape), "{text}");
    }
}

#[test]
fn forward_rejects_wrong_image_size() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("x.ppm");
    write_ppm(&img, 64);
    let o = iformer(&["forward", "--preset", "iformer-micro", "--image", img.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn forward_dump_and_weight_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("stage2.ifw");
    let o = iformer(&["forward", "--preset", "iformer-micro", "--random", "--dump-stage", "2", "--out", dump.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let store: iformer::params::ParamStore<f32> = iformer::io::load_weights(&dump).unwrap();
    assert_eq!(store.get("stage2").unwrap().shape(), &[1, 4, 4, 32]);

    // a container that is not a micro checkpoint at all
    let o = iformer(&["forward", "--preset", "iformer-micro", "--weights", dump.to_str().unwrap(), "--random"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("stage1.stem.conv1.kernel"), "{}", stderr(&o));

    let (_, mut params) = iformer::backbone::build_model::<f32>(&ModelConfig::preset("iformer-micro").unwrap(), 0).unwrap();
    let w = dir.path().join("micro.ifw");
    iformer::io::save_weights(&params, &w).unwrap();
    let o = iformer(&["forward", "--preset", "iformer-micro", "--weights", w.to_str().unwrap(), "--random"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains(MICRO_SEED0_CHECKSUMS[0]));
    *params.get_mut("stage2.block0.norm1.gamma").unwrap() = iformer::Tensor::ones(&[31]);
    iformer::io::save_weights(&params, &w).unwrap();
    let o = iformer(&["forward", "--preset", "iformer-micro", "--weights", w.to_str().unwrap(), "--random"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("stage2.block0.norm1.gamma"), "{}", stderr(&o));

    std::fs::write(&w, b"not a container").unwrap();
    assert_eq!(code(&iformer(&["forward", "--preset", "iformer-micro", "--weights", w.to_str().unwrap(), "--random"])), 3);
}

#[test]
fn spectrum_compares_attention_with_dwconv() {
    let o = iformer(&["spectrum", "--preset", "iformer-micro", "--stage", "1", "--branch", "attention", "--compare", "dwconv", "--feed", "block"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("attention top-quartile delta") && stdout(&o).contains("is lower than dwconv"), "{}", stdout(&o));
}

#[test]
fn spectrum_constant_input_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let config = micro_128(dir.path());
    for branch in ["attention", "maxpool", "dwconv", "output"] {
        let csv = dir.path().join(format!("{branch}.csv"));
        let o = iformer(&[
            "spectrum", "--config", &config, "--stage", "1", "--branch", branch, "--feed", "block", "--input", "constant",
            "--out", csv.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(stdout(&o).contains("concentrated at zero frequency: yes"), "{branch}: {}", stdout(&o));
        assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 17);
    }
}

#[test]
fn spectrum_invalid_selector_exits_2() {
    let o = iformer(&["spectrum", "--preset", "iformer-micro", "--stage", "3", "--block", "5", "--branch", "attention"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("stage3.block1.mixer.attention"), "{}", stderr(&o));
    let o = iformer(&["spectrum", "--preset", "iformer-micro", "--stage", "1", "--branch", "fft"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("attention, maxpool, dwconv"), "{}", stderr(&o));
    assert_eq!(code(&iformer(&["spectrum", "--preset", "iformer-micro", "--stage", "9", "--branch", "output"])), 2);
}

#[test]
fn gradcheck_passes_on_micro() {
    let o = iformer(&["gradcheck", "--config", "iformer-micro", "--tolerance", "1e-5"]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("PASS"));
}

#[test]
fn gradcheck_names_a_sabotaged_group() {
    let o = iformer(&["gradcheck", "--preset", "iformer-micro", "--sabotage", "stage3.block1.ffn.fc1.weight"]);
    assert_ne!(code(&o), 0);
    assert!(stdout(&o).contains("failing groups: stage3.block1.ffn.fc1.weight"), "{}", stdout(&o));
    assert_eq!(code(&iformer(&["gradcheck", "--preset", "iformer-micro", "--sabotage", "nope"])), 2);
}

#[test]
fn gradcheck_refuses_large_models() {
    let o = iformer(&["gradcheck", "--preset", "iformer-s"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("1000000"), "{}", stderr(&o));
}

fn last_accuracy(dir: &Path) -> (f64, f64) {
    let text = std::fs::read_to_string(dir.join("accuracy.csv")).unwrap();
    let overall: Vec<&str> = text.lines().last().unwrap().split(',').collect();
    assert_eq!(overall[0], "overall");
    (overall[1].parse().unwrap(), overall[2].parse().unwrap())
}

#[test]
fn train_toy_zero_steps_is_chance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = iformer(&["train-toy", "--steps", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (initial, last) = last_accuracy(&out);
    assert_eq!(initial, last);
    assert!((last - 0.25).abs() <= 0.1, "{last}");
    for f in ["loss.csv", "weights.ifw", "config.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let cfg = iformer::io::load_config(out.join("config.toml")).unwrap();
    assert_eq!(cfg.model, ModelConfig::preset("iformer-micro").unwrap());
}

#[test]
fn train_toy_default_run_learns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = iformer(&["train-toy", "--seed", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (_, acc) = last_accuracy(&out);
    assert!(acc >= 0.9, "{acc}");
    let losses = std::fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(losses.lines().count(), 501);
    let o = iformer(&["forward", "--config", out.join("config.toml").to_str().unwrap(), "--weights", out.join("weights.ifw").to_str().unwrap(), "--random"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn train_toy_divergence_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = iformer(&["train-toy", "--steps", "5", "--lr", "1e30", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("non-finite") && stderr(&o).contains("step"), "{}", stderr(&o));
}

#[test]
fn ablate_writes_one_row_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("ablation.csv");
    let o = iformer(&["ablate", "--steps", "2", "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    let names: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["attn-only", "attn-maxpool", "full", "ramp-reversed", "ramp-equal", "ramp-default"]);

    let o = iformer(&["ablate", "--variants", "full,attn-only", "--seeds", "3,4", "--steps", "1", "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 5);
    assert_eq!(code(&iformer(&["ablate", "--variants", "convnext", "--steps", "1", "--out", csv.to_str().unwrap()])), 2);
}

#[test]
fn threads_variable_is_validated() {
    let run = |v: &str| {
        Command::new(env!("CARGO_BIN_EXE_iformer"))
            .args(["describe", "--preset", "iformer-micro"])
            .env("IFORMER_THREADS", v)
            .output()
            .unwrap()
    };
    assert_eq!(code(&run("1")), 0);
    assert_eq!(code(&run("4")), 0);
    assert_eq!(code(&run("zero")), 2);
    assert_eq!(code(&run("0")), 2);
}
