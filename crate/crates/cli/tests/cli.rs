use std::path::Path;
use std::process::{Command, Output};

fn idv(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idv"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn idv")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const CONFIG: &str = "\
manifest = toy/manifest.csv
out_dir = OUT
input_size = 16
resize_to = 18
crop_to = 16
backbone = 8:3:pool,16:3:pool
embedding_dim = 32
batch_size = 8
base_lr = 0.01
final_lr = 0.001
momentum = 0.9
dropout = 0.2
max_epochs = 30
checkpoint_every = 10
";

fn make_toy(dir: &Path) {
    ok(&idv(
        &["make-toy", "--out", "toy", "--ids", "4", "--per-cam", "4", "--cams", "2", "--sigma", "0", "--seed", "7", "--size", "18"],
        dir,
    ));
}

fn write_config(dir: &Path, name: &str, out: &str) {
    std::fs::write(dir.join(name), CONFIG.replace("OUT", out)).unwrap();
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = idv(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_required_flag_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(idv(&["extract", "--ckpt", "x"], dir.path()).status.code(), Some(1));
}

#[test]
fn runtime_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = idv(&["train", "--config", "nope.conf"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.conf"));

    std::fs::write(dir.path().join("bad.conf"), "learning_rate = 1\n").unwrap();
    let out = idv(&["train", "--config", "bad.conf"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn grad_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&idv(&["grad-check", "--seed", "3"], dir.path()));
    assert!(stdout.contains("PASS"), "{stdout}");
}

#[test]
fn end_to_end_noiseless_toy() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    make_toy(dir);
    write_config(dir, "run.conf", "out");
    let stdout = ok(&idv(&["train", "--config", "run.conf"], dir));
    assert!(stdout.contains("seed = 42"), "resolved config not echoed:\n{stdout}");
    assert!(stdout.contains("num_identities = 4"));
    assert!(dir.join("out/final.idvc").exists());
    assert!(dir.join("out/checkpoint_epoch0010.idvc").exists());
    let log = std::fs::read_to_string(dir.join("out/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 31);

    for split in ["query", "gallery"] {
        ok(&idv(
            &["extract", "--ckpt", "out/final.idvc", "--manifest", "toy/manifest.csv", "--split", split, "--out", &format!("{split}.idvd")],
            dir,
        ));
    }
    let report = ok(&idv(
        &["evaluate", "--query", "query.idvd", "--gallery", "gallery.idvd", "--manifest", "toy/manifest.csv",
          "--protocol", "single-query", "--out", "report"],
        dir,
    ));
    assert!(report.contains("rank-1: 1.0000"), "{report}");
    let csv = std::fs::read_to_string(dir.join("report/per_query_ap.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 16);

    let img = std::fs::read_dir(dir.join("toy/query")).unwrap().next().unwrap().unwrap().path();
    ok(&idv(
        &["activation-map", "--ckpt", "out/final.idvc", "--image", img.to_str().unwrap(), "--stage", "2", "--out", "map.pgm"],
        dir,
    ));
    let pgm = std::fs::read(dir.join("map.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n8 8\n255\n"), "{:?}", &pgm[..12]);
    assert_eq!(pgm.len(), 11 + 64);
}

#[test]
fn rerun_and_resume_are_bitwise_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    make_toy(dir);
    write_config(dir, "a.conf", "a");
    let read = |name: &str| std::fs::read(dir.join("a").join(name)).unwrap();

    ok(&idv(&["train", "--config", "a.conf"], dir));
    let (c10, c20, fin) = (read("checkpoint_epoch0010.idvc"), read("checkpoint_epoch0020.idvc"), read("final.idvc"));

    // the checkpoint embeds the resolved config, out_dir included, so rerun in place
    std::fs::remove_dir_all(dir.join("a")).unwrap();
    ok(&idv(&["train", "--config", "a.conf"], dir));
    assert_eq!(fin, read("final.idvc"));
    assert_eq!(c10, read("checkpoint_epoch0010.idvc"));

    for name in ["checkpoint_epoch0020.idvc", "checkpoint_epoch0030.idvc", "final.idvc"] {
        std::fs::remove_file(dir.join("a").join(name)).unwrap();
    }
    ok(&idv(&["train", "--config", "a.conf", "--resume", "a/checkpoint_epoch0010.idvc"], dir));
    assert_eq!(c20, read("checkpoint_epoch0020.idvc"));
    assert_eq!(fin, read("final.idvc"));

    write_config(dir, "b.conf", "b");
    let out = idv(&["train", "--config", "b.conf", "--resume", "a/checkpoint_epoch0010.idvc"], dir);
    assert_eq!(out.status.code(), Some(2), "resume with a different config must fail");
}
