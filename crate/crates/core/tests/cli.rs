//! End-to-end runs of the `pckd` binary on a small synthetic dataset.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

struct Ws {
    dir: tempfile::TempDir,
}

impl Ws {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn p(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.p(name).display().to_string()
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_pckd"))
            .args(args)
            .current_dir(self.dir.path())
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    /// synth, prep and a short teacher run.
    fn prepared() -> Self {
        let ws = Self::new();
        ws.ok(&["synth", "--users", "60", "--items", "80", "--density", "0.08", "--seed", "7", "--out", &ws.s("raw.csv")]);
        ws.ok(&["prep", "--in", &ws.s("raw.csv"), "--out", &ws.s("data"), "--min-interactions", "1"]);
        ws.ok(&[
            "train-teacher", "--data", &ws.s("data"), "--dim", "16", "--seed", "1", "--max-epochs", "6", "--lr", "0.01",
            "--batch-size", "128", "--out", &ws.s("teacher"),
        ]);
        ws
    }

    /// Short distillation run; flags in `extra` replace the defaults.
    fn distill(&self, out: &str, extra: &[&str]) -> Output {
        let (data, teacher, out) = (self.s("data"), self.s("teacher/model.ckpt"), self.s(out));
        let defaults = [
            ("--data", data.as_str()),
            ("--teacher", teacher.as_str()),
            ("--d-teacher", "16"),
            ("--d-student", "4"),
            ("--seed", "1"),
            ("--max-epochs", "6"),
            ("--lr", "0.01"),
            ("--batch-size", "128"),
            ("--Q", "5"),
            ("--T2", "20"),
            ("--diag-every", "2"),
            ("--out", out.as_str()),
        ];
        let mut args = vec!["distill"];
        for (k, v) in defaults {
            if !extra.contains(&k) {
                args.extend([k, v]);
            }
        }
        args.extend_from_slice(extra);
        self.run(&args)
    }
}

fn no_temp_leftovers(dir: &Path) {
    for e in fs::read_dir(dir).unwrap() {
        let e = e.unwrap();
        let name = e.file_name().to_string_lossy().into_owned();
        assert!(!name.contains(".tmp-"), "leftover temp file {name} in {}", dir.display());
        if e.file_type().unwrap().is_dir() {
            no_temp_leftovers(&e.path());
        }
    }
}

#[test]
fn full_pipeline_through_the_binary() {
    let ws = Ws::prepared();
    assert!(ws.p("raw.csv").is_file());
    for f in ["meta", "train", "val", "test"] {
        assert!(ws.p("data").join(f).is_file(), "missing dataset file {f}");
    }
    for f in ["model.ckpt", "runlog.csv", "manifest", "summary"] {
        assert!(ws.p("teacher").join(f).is_file(), "missing teacher file {f}");
    }
    let teacher_bytes = fs::read(ws.p("teacher/model.ckpt")).unwrap();

    let out = ws.distill("student", &["--method", "pckd_l"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = fs::read_to_string(ws.p("student/runlog.csv")).unwrap();
    assert!(log.starts_with("epoch,loss_base,loss_de,loss_pckd,val_ndcg20,C,seconds\n"));
    assert_eq!(log.lines().count(), 7);
    let manifest = fs::read_to_string(ws.p("student/manifest")).unwrap();
    assert!(manifest.contains("config_digest=") && manifest.contains("seed=1") && manifest.contains("code_version="));
    assert!(fs::read_to_string(ws.p("student/inconsistency.csv")).unwrap().starts_with("epoch,C\n"));
    assert_eq!(fs::read(ws.p("teacher/model.ckpt")).unwrap(), teacher_bytes);

    let eval = ws.ok(&["eval", "--data", &ws.s("data"), "--ckpt", &ws.s("student/model.ckpt"), "--split", "test", "--N", "10,20", "--out", &ws.s("metrics")]);
    assert!(eval.contains("recall@10=") && eval.contains("ndcg@20="));
    assert_eq!(fs::read_to_string(ws.p("metrics")).unwrap(), eval);

    let diag = ws.ok(&[
        "diagnose", "--data", &ws.s("data"), "--student", &ws.s("student/model.ckpt"), "--teacher", &ws.s("teacher/model.ckpt"),
        "--pairs", "50", "--cells-pairs", "10", "--out", &ws.s("groupwise.csv"),
    ]);
    let c: f64 = diag.lines().next().unwrap().strip_prefix("C=").unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&c));
    let g = fs::read_to_string(ws.p("groupwise.csv")).unwrap();
    assert!(g.starts_with("group,g1,g2,g3,g4,g5\n"));
    assert_eq!(g.lines().count(), 6);

    no_temp_leftovers(ws.dir.path());
}

#[test]
fn repeated_distill_is_byte_identical() {
    let ws = Ws::prepared();
    for out in ["a", "b"] {
        let o = ws.distill(out, &["--method", "pckd_h"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["model.ckpt", "runlog.csv", "manifest"] {
        assert_eq!(fs::read(ws.p("a").join(f)).unwrap(), fs::read(ws.p("b").join(f)).unwrap(), "{f} differs");
    }
    let o = ws.distill("c", &["--method", "pckd_h", "--seed", "2"]);
    assert!(o.status.success());
    assert_ne!(fs::read(ws.p("a/model.ckpt")).unwrap(), fs::read(ws.p("c/model.ckpt")).unwrap());
}

#[test]
fn config_file_with_flag_overrides() {
    let ws = Ws::prepared();
    fs::write(
        ws.p("run.cfg"),
        format!(
            "data={}\nteacher={}\nd_teacher=16\nd_student=4\nseed=1\nmax_epochs=3\nbatch_size=128\nmethod=pckd_p\nlr=0.5\n",
            ws.s("data"),
            ws.s("teacher/model.ckpt")
        ),
    )
    .unwrap();
    ws.ok(&["distill", "--config", &ws.s("run.cfg"), "--lr", "0.01", "--max-epochs", "2", "--out", &ws.s("s")]);
    let manifest = fs::read_to_string(ws.p("s/manifest")).unwrap();
    assert!(manifest.contains("config.lr=0.01"), "{manifest}");
    assert!(manifest.contains("config.method=pckd_p"));
    assert_eq!(fs::read_to_string(ws.p("s/runlog.csv")).unwrap().lines().count(), 3);
}

#[test]
fn grid_writes_summary() {
    let ws = Ws::prepared();
    fs::write(
        ws.p("grid.cfg"),
        format!(
            "data={}\nteacher={}\nd_teacher=16\nd_student=4\nseed=1\nmax_epochs=2\nbatch_size=128\nq=5\n\
             grid.method=de,pckd_l\ngrid.lambda_pckd=0.001,0.01\n",
            ws.s("data"),
            ws.s("teacher/model.ckpt")
        ),
    )
    .unwrap();
    let out = ws.ok(&["grid", "--spec", &ws.s("grid.cfg"), "--out", &ws.s("grid")]);
    let summary = fs::read_to_string(ws.p("grid/summary.csv")).unwrap();
    assert_eq!(out, summary);
    assert_eq!(summary.lines().count(), 5);
    assert!(summary.starts_with("cell,axes,best_val_ndcg20,test_recall20,test_ndcg20,final_C,error\n"));
    for cell in 0..4 {
        assert!(ws.p("grid").join(format!("cell_{cell}/model.ckpt")).is_file());
    }
}

#[test]
fn usage_and_runtime_errors_have_distinct_codes() {
    let ws = Ws::new();
    let out = ws.run(&["distill", "--method", "bogus", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("pckd_l") && err.contains("fitnet"), "{err}");

    assert_eq!(ws.run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(ws.run(&["distill", "--bogus-flag", "1", "--out", "x"]).status.code(), Some(2));
    assert!(!ws.p("x").exists());

    // missing input file is a runtime failure
    let out = ws.run(&["eval", "--data", "nowhere", "--ckpt", "none.ckpt"]);
    assert_eq!(out.status.code(), Some(1));

    // no seed is a configuration problem
    let out = ws.run(&["train-teacher", "--data", "nowhere", "--out", "t"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
    assert_eq!(ws.run(&["--help"]).status.code(), Some(0));
}

#[test]
fn mismatched_teacher_is_rejected() {
    let ws = Ws::prepared();
    let out = ws.distill("s", &["--method", "de", "--d-teacher", "32"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("d_teacher"));
    let out = ws.distill("s", &["--method", "de", "--backbone", "gcn"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!ws.p("s").exists());
}
