use std::path::Path;
use std::process::{Command, Output};

fn srnas(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srnas"))
        .current_dir(dir)
        .env_remove("SRNAS_CONFIG")
        .args(args)
        .output()
        .expect("spawn srnas")
}

fn ok(dir: &Path, args: &[&str]) {
    let o = srnas(dir, args);
    assert!(
        o.status.success(),
        "srnas {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

const SMALL: &[&str] = &[
    "--set",
    "search.patch_size=8",
    "--set",
    "search.patches_per_epoch=16",
    "--set",
    "data.synthetic_images=2",
    "--set",
    "model.n_blocks=2",
];

fn fitted_speed(dir: &Path) {
    ok(dir, &["bench", "--n", "256", "--out", "ds.csv"]);
    ok(dir, &["fit-speed", "--dataset", "ds.csv", "--out", "speed.bin", "--epochs", "20", "--gate", "10"]);
}

#[test]
fn bench_and_corpus_are_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(d, &["bench", "--n", "64", "--out", "a.csv"]);
    ok(d, &["bench", "--n", "64", "--out", "b.csv"]);
    assert_eq!(std::fs::read(d.join("a.csv")).unwrap(), std::fs::read(d.join("b.csv")).unwrap());
    ok(d, &["corpus", "--out", "c1", "--n", "2", "--size", "24", "--seed", "4"]);
    ok(d, &["corpus", "--out", "c2", "--n", "2", "--size", "24", "--seed", "4"]);
    for f in ["img_0000.png", "img_0001.png"] {
        assert_eq!(std::fs::read(d.join("c1").join(f)).unwrap(), std::fs::read(d.join("c2").join(f)).unwrap());
    }
}

#[test]
fn gate_and_usage_exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(d, &["bench", "--n", "64", "--out", "ds.csv"]);
    let o = srnas(d, &["fit-speed", "--dataset", "ds.csv", "--out", "s.bin", "--epochs", "2", "--gate", "0"]);
    assert_eq!(code(&o), 1);
    // The model is still written so the failure can be inspected.
    assert!(d.join("s.bin").exists() && d.join("s.bin.fit.csv").exists());

    assert_eq!(code(&srnas(d, &["bench", "--out", "missing/x.csv"])), 2);
    assert_eq!(code(&srnas(d, &["--set", "search.gama=1", "bench", "--out", "x.csv"])), 2);
    assert_eq!(code(&srnas(d, &["bench", "--mode", "guess", "--out", "x.csv"])), 2);
    assert_eq!(code(&srnas(d, &["fit-speed", "--dataset", "nope.csv", "--out", "s.bin"])), 2);
}

#[test]
fn eval_rejects_mismatched_lr() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(d, &["corpus", "--out", "hr", "--n", "1", "--size", "24"]);
    let o = srnas(d, &["eval", "--bicubic", "--hr", "hr", "--lr", "hr"]);
    assert_eq!(code(&o), 2);
    ok(d, &["eval", "--bicubic", "--hr", "hr", "--report", "r.csv"]);
    let csv = std::fs::read_to_string(d.join("r.csv")).unwrap();
    assert!(csv.starts_with("image,psnr_db,ssim"));
    assert!(csv.lines().last().unwrap().starts_with("mean,"));
}

#[test]
fn resumed_search_matches_uninterrupted() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    fitted_speed(d);
    let run = |out: &str, epochs: &str, resume: bool| {
        let mut args = vec!["search", "--speed", "speed.bin", "--vt-fraction", "0.5", "--out", out, "--epochs", epochs];
        if resume {
            args.push("--resume");
        }
        args.extend_from_slice(SMALL);
        ok(d, &args);
    };
    run("full", "3", false);
    run("split", "2", false);
    run("split", "3", true);
    for f in ["history.csv", "supernet.bin", "compact.bin", "architecture.json", "resolved.toml"] {
        assert_eq!(
            std::fs::read(d.join("full").join(f)).unwrap(),
            std::fs::read(d.join("split").join(f)).unwrap(),
            "{f} differs after resume"
        );
    }

    ok(d, &["finetune", "--compact", "full/compact.bin", "--out", "ft.bin", "--epochs", "1", SMALL[0], SMALL[1], SMALL[2], SMALL[3], SMALL[4], SMALL[5]]);
    assert!(d.join("ft.bin.history.csv").exists());
    ok(d, &["export", "--compact", "ft.bin", "--out", "exp", "--speed", "speed.bin"]);
    let json = std::fs::read_to_string(d.join("exp/architecture.json")).unwrap();
    assert!(json.contains("\"kept_blocks\""));
}
