use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lumafix_core::config::KvConfig;
use lumafix_core::dit::ModelConfig;

fn lumafix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lumafix"))
        .args(args)
        .output()
        .expect("spawn lumafix")
}

fn ok(args: &[&str]) -> String {
    let out = lumafix(args);
    assert!(
        out.status.success(),
        "lumafix {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

/// The `AGGREGATE` line's mean PSNR and mean SSIM.
fn aggregate(csv: &str) -> (f64, f64) {
    let line = csv
        .lines()
        .find(|l| l.starts_with("AGGREGATE,"))
        .expect("aggregate line");
    let f: Vec<f64> = line.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    (f[0], f[1])
}

#[test]
fn datagen_is_byte_identical_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    for dir in [&a, &b] {
        ok(&["datagen", "--count", "4", "--seed", "7", "--output", s(dir)]);
    }
    ok(&["datagen", "--count", "4", "--seed", "8", "--output", s(&c)]);
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.len(), 9, "{:?}", ta.keys().collect::<Vec<_>>());
    assert_eq!(ta, tb);
    assert_ne!(ta, tree(&c));
}

#[test]
fn eval_of_identical_directories_hits_the_cap() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&[
        "datagen",
        "--count",
        "3",
        "--output",
        s(&data),
        "--set",
        "image_size=16",
    ]);
    let gt = data.join("gt");
    let report = tmp.path().join("report.csv");
    let csv = ok(&["eval", "--input", s(&gt), "--reference", s(&gt), "--output", s(&report)]);
    assert_eq!(std::fs::read_to_string(&report).unwrap(), csv);
    assert_eq!(csv.lines().count(), 5);
    assert!(
        csv.ends_with("AGGREGATE,100.000000,1.000000,0.000000,0.000000\n"),
        "{csv}"
    );
}

#[test]
fn overrides_apply_after_the_config_file_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("gen.cfg");
    std::fs::write(&cfg, "# small\ncount = 5\nimage_size = 16\n").unwrap();
    let count = |dir: &Path| std::fs::read_dir(dir.join("gt")).unwrap().count();

    let a = tmp.path().join("a");
    ok(&["datagen", "--config", s(&cfg), "--output", s(&a)]);
    assert_eq!(count(&a), 5);
    let b = tmp.path().join("b");
    ok(&["datagen", "--config", s(&cfg), "--set", "count=3", "--output", s(&b)]);
    assert_eq!(count(&b), 3);
    let c = tmp.path().join("c");
    ok(&[
        "datagen",
        "--config",
        s(&cfg),
        "--set",
        "count=3",
        "--count",
        "2",
        "--output",
        s(&c),
    ]);
    assert_eq!(count(&c), 2);
}

#[test]
fn validation_errors_exit_1_and_name_the_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope");

    let out = lumafix(&["frobnicate"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = lumafix(&["train", "--input", s(&missing), "--output", s(&tmp.path().join("run"))]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));

    let out = lumafix(&["datagen", "--output", s(&tmp.path().join("d")), "--set", "colour=red"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));

    let out = lumafix(&[
        "datagen",
        "--output",
        s(&tmp.path().join("d")),
        "--set",
        "image_size=-3",
    ]);
    assert_eq!(code(&out), 1);

    let out = lumafix(&["eval", "--input", s(tmp.path()), "--reference", s(&missing)]);
    assert_eq!(code(&out), 1);

    assert!(!tmp.path().join("d").exists());
    assert_eq!(code(&lumafix(&["--help"])), 0);
}

#[test]
fn runtime_failures_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bogus = tmp.path().join("model.ckpt");
    std::fs::write(&bogus, b"not a checkpoint").unwrap();
    let images = tmp.path().join("imgs");
    std::fs::create_dir(&images).unwrap();
    let out = lumafix(&[
        "restore",
        "--checkpoint",
        s(&bogus),
        "--input",
        s(&images),
        "--output",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.ckpt"));
}

#[test]
fn train_restore_eval_beats_the_corrupted_input() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    let restored = tmp.path().join("restored");

    let mut kv = KvConfig::new();
    ModelConfig::tiny().write_kv(&mut kv);
    kv.set("learning_rate", 1e-2);
    kv.set("batch_size", 4);
    kv.set("image_size", 16);
    let cfg = tmp.path().join("toy.cfg");
    std::fs::write(&cfg, kv.to_text()).unwrap();

    ok(&[
        "datagen",
        "--config",
        s(&cfg),
        "--count",
        "8",
        "--seed",
        "3",
        "--output",
        s(&data),
    ]);
    let out = ok(&[
        "train",
        "--config",
        s(&cfg),
        "--input",
        s(&data),
        "--output",
        s(&run),
        "--epochs",
        "100",
        "--seed",
        "1",
    ]);
    assert!(out.contains("trained 200 steps"), "{out}");
    let ckpt = run.join("model.ckpt");
    let trace = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(trace.lines().count(), 201);

    ok(&[
        "restore",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&data),
        "--output",
        s(&restored),
        "--seed",
        "5",
    ]);
    let gt = data.join("gt");
    let (ours, ours_ssim) = aggregate(&ok(&["eval", "--input", s(&restored), "--reference", s(&gt)]));
    let (base, base_ssim) = aggregate(&ok(&["eval", "--input", s(&data.join("input")), "--reference", s(&gt)]));
    eprintln!("cli smoke: psnr {base:.2} -> {ours:.2}, ssim {base_ssim:.4} -> {ours_ssim:.4}");
    assert!(ours > base, "restored {ours} dB vs corrupted {base} dB");

    let again = tmp.path().join("again");
    ok(&[
        "restore",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&data),
        "--output",
        s(&again),
        "--seed",
        "5",
    ]);
    assert_eq!(tree(&restored), tree(&again));

    let clusters = tmp.path().join("clusters.csv");
    let table = ok(&[
        "cluster-diagnose",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&data),
        "--output",
        s(&clusters),
    ]);
    assert!(table.lines().next().unwrap().contains("dbi"));
    let csv = std::fs::read_to_string(&clusters).unwrap();
    assert_eq!(csv.lines().next(), Some("block,level,channels,samples,dbi"));
    assert_eq!(csv.lines().count(), 1 + ModelConfig::tiny().levels - 1);
}
