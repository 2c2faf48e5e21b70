use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use ordq::io::{read_codebooks, read_features, read_grid, GridFile};

struct Work {
    dir: tempfile::TempDir,
}

impl Work {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }
}

fn ordq(args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_ordq")).args(args).output().unwrap();
    out.status.code().unwrap()
}

fn ok(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_ordq")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn bytes(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap()
}

#[test]
fn full_pipeline() {
    let w = Work::new();
    ok(&["synth", "--spec", "ar1:8:0.8", "--rows", "400", "--seed", "3", "--out", &w.arg("x.sofm")]);
    ok(&[
        "train", "--in", &w.arg("x.sofm"), "--out", &w.arg("cb.socb"), "--kind", "opq", "--codebooks", "4",
        "--codewords", "8", "--group-size", "2", "--iterations", "5", "--loss-out", &w.arg("loss.csv"),
    ]);
    let cbs = read_codebooks(&w.path("cb.socb")).unwrap();
    assert_eq!(cbs.stream_count(), 2);
    assert_eq!(fs::read_to_string(w.path("loss.csv")).unwrap().lines().count(), 6);

    ok(&["encode", "--in", &w.arg("x.sofm"), "--codebooks", &w.arg("cb.socb"), "--out", &w.arg("ids.sotg")]);
    ok(&["decode", "--in", &w.arg("ids.sotg"), "--codebooks", &w.arg("cb.socb"), "--prefix", "1", "--out", &w.arg("y.sofm")]);
    let y = read_features(&w.path("y.sofm")).unwrap();
    assert_eq!((y.rows(), y.cols()), (400, 8));
    assert!(y.row(0)[4..].iter().all(|v| *v == 0.0));

    ok(&["prefix-curve", "--in", &w.arg("x.sofm"), "--codebooks", &w.arg("cb.socb"), "--out", &w.arg("curve.csv")]);
    let curve = fs::read_to_string(w.path("curve.csv")).unwrap();
    let rows: Vec<&str> = curve.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 1 + 2, "{curve}");

    ok(&["delay", "--in", &w.arg("ids.sotg"), "--delay", "2", "--out", &w.arg("d.sotg")]);
    ok(&["undelay", "--in", &w.arg("d.sotg"), "--out", &w.arg("u.sotg")]);
    assert_eq!(bytes(&w.path("u.sotg")), bytes(&w.path("ids.sotg")));
    match read_grid(&w.path("d.sotg")).unwrap() {
        GridFile::Delayed(g) => assert_eq!(g.frames(), 402),
        GridFile::Plain(_) => panic!("expected a delayed grid"),
    }

    ok(&["fit-markov", "--in", &w.arg("d.sotg"), "--in", &w.arg("ids.sotg"), "--delay", "2", "--order", "2", "--out", &w.arg("lm.csv")]);
    for run in ["a", "b"] {
        ok(&[
            "generate", "--in", &w.arg("lm.csv"), "--seed", "9", "--max-frames", "40",
            "--out", &w.arg(&format!("{run}.sotg")), "--plain-out", &w.arg(&format!("{run}.plain.sotg")),
            "--log", &w.arg(&format!("{run}.log")),
        ]);
    }
    assert_eq!(bytes(&w.path("a.sotg")), bytes(&w.path("b.sotg")));
    assert_eq!(bytes(&w.path("a.log")), bytes(&w.path("b.log")));
    let log = fs::read_to_string(w.path("a.log")).unwrap();
    assert!(log.starts_with("seed,config_hash,frames_emitted,stop_reason\n9,"), "{log}");
    match read_grid(&w.path("a.plain.sotg")).unwrap() {
        GridFile::Plain(g) => assert!(g.frames() <= 40 && g.streams() == 2),
        GridFile::Delayed(_) => panic!("expected a plain grid"),
    }

    for run in ["c", "d"] {
        ok(&["clip-shuffle", "--in", &w.arg("x.sofm"), "--frame-rate", "20", "--seed", "4", "--out", &w.arg(&format!("{run}.sofm"))]);
    }
    assert_eq!(bytes(&w.path("c.sofm")), bytes(&w.path("d.sofm")));
    let rows = read_features(&w.path("c.sofm")).unwrap().rows();
    assert!((100..=300).contains(&rows), "{rows}");
}

#[test]
fn flags_override_config_values() {
    let w = Work::new();
    ok(&["synth", "--spec", "clusters:3:4:0.1", "--rows", "90", "--out", &w.arg("x.sofm")]);
    fs::write(
        w.path("run.cfg"),
        format!("# small run\nkind = pq\ncodebooks = 4\ncodewords = 16\niterations = 2\nin = {}\n", w.arg("x.sofm")),
    )
    .unwrap();
    ok(&["train", "--config", &w.arg("run.cfg"), "--codewords", "4", "--out", &w.arg("cb.socb")]);
    let cbs = read_codebooks(&w.path("cb.socb")).unwrap();
    assert_eq!(cbs.codewords_per_book(), 4);
    assert_eq!(cbs.codebooks().len(), 4);
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    let w = Work::new();
    assert_eq!(ordq(&["train", "--no-such-flag"]), 1);
    assert_eq!(ordq(&["synth", "--spec", "bogus:1", "--out", &w.arg("x.sofm")]), 1);
    fs::write(w.path("bad.cfg"), "colour = blue\n").unwrap();
    assert_eq!(ordq(&["encode", "--config", &w.arg("bad.cfg"), "--codebooks", "cb"]), 1);
    assert_eq!(ordq(&["encode", "--in", &w.arg("x.sofm"), "--codebooks", &w.arg("nope.socb"), "--out", &w.arg("o")]), 2);
    fs::write(w.path("junk.sofm"), b"not a feature file").unwrap();
    assert_eq!(ordq(&["clip-shuffle", "--in", &w.arg("junk.sofm"), "--out", &w.arg("o.sofm")]), 2);
    assert_eq!(ordq(&["--help"]), 0);
}
