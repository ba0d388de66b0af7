//! End-to-end runs of the command-line tool on a tiny synthetic benchmark.

use std::path::Path;
use std::process::{Command, Output};

use semirank::harness::{read_report, SplitRecord};
use semirank::pseudo_label::PseudoSidecar;

const TINY: &str = "\
# tiny end-to-end config
synth_queries = 40
synth_docs = 8
synth_features = 6
ratios = 0.2
seeds = 0
losses = listnet
committee_losses = rmse,listnet
committee_epochs = 3
confidence_threshold = 0.5
blocks = 1
heads = 2
d_model = 8
d_ff = 8
repr_dim = 4
decoder_hidden = 8
pretrain_epochs = 2
ranker_hidden = 8
ranker_epochs = 3
rff_candidates = 8,16
cv_folds = 2
";

fn semirank(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semirank"))
        .args(args)
        .current_dir(dir)
        .env("SEMIRANK_DATA_DIR", dir.join("data"))
        .output()
        .expect("spawn semirank")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = semirank(dir, args);
    assert!(
        out.status.success(),
        "semirank {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn stage_by_stage_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::create_dir(dir.join("data")).unwrap();
    std::fs::write(dir.join("tiny.cfg"), TINY).unwrap();

    ok(dir, &["synth", "-c", "tiny.cfg", "--out", "data/bench.svm"]);
    // later stages read the file through the data-dir variable
    let common = ["-c", "tiny.cfg", "--set", "data=bench.svm"];
    let with = |extra: &[&str], head: &str| -> Vec<String> {
        let mut v = vec![head.to_string()];
        v.extend(common.iter().map(|s| s.to_string()));
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    let run = |args: Vec<String>| ok(dir, &args.iter().map(String::as_str).collect::<Vec<_>>());

    run(with(&["--seed", "3", "--out", "split.json"], "split"));
    let record = SplitRecord::read(dir.join("split.json")).unwrap();
    assert_eq!(record.test.len(), 8);
    assert_eq!(record.manifest.labeled.len() + record.manifest.unlabeled.len(), 32);
    assert!(record.test.iter().all(|q| !record.manifest.labeled.contains(q)));

    run(with(&["--seed", "3", "--split", "split.json", "--out", "pseudo.svm"], "pseudo"));
    let sidecar: PseudoSidecar =
        serde_json::from_str(&std::fs::read_to_string(dir.join("pseudo.svm.json")).unwrap()).unwrap();
    let pseudo = semirank::dataset::parse_svmlight(dir.join("pseudo.svm")).unwrap();
    assert_eq!(pseudo.len(), sidecar.groups.len());
    for (g, s) in pseudo.groups().iter().zip(&sidecar.groups) {
        assert_eq!(g.qid, s.qid);
        assert_eq!(g.num_docs(), s.kept_documents.len());
        assert!(record.manifest.unlabeled.contains(&g.qid));
        assert!(s.confidence.iter().all(|&c| c >= 0.5));
    }

    run(with(
        &["--seed", "3", "--split", "split.json", "--pseudo", "pseudo.svm", "--out", "enc.ckpt"],
        "pretrain",
    ));
    let trace: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("enc.ckpt.trace.json")).unwrap()).unwrap();
    // initial state plus one entry per epoch
    assert_eq!(trace["epochs"].as_array().unwrap().len(), 3);
    assert_eq!(&std::fs::read(dir.join("enc.ckpt")).unwrap()[..8], b"SRCKPT01");

    run(with(
        &[
            "--seed", "3", "--split", "split.json", "--pseudo", "pseudo.svm", "--encoder", "enc.ckpt", "--out",
            "ranker.ckpt", "--cv-out", "cv.csv",
        ],
        "train",
    ));
    let cv = std::fs::read_to_string(dir.join("cv.csv")).unwrap();
    let lines: Vec<&str> = cv.lines().collect();
    assert_eq!(lines[0], "N,mean_ndcg@10,std");
    assert_eq!(lines.len(), 3);

    let stdout = run(with(
        &["--split", "split.json", "--ranker", "ranker.ckpt", "--encoder", "enc.ckpt", "--out", "eval.json"],
        "eval",
    ));
    assert!(stdout.contains("NDCG@10 "), "{stdout}");
    let rows = read_report(dir.join("eval.json")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].method, "pseudo+pretrain+rff");
    assert_eq!(rows[0].seed, 3);
    // the printed value is the report value at two decimals
    let printed = stdout.lines().find(|l| l.starts_with("NDCG@10 ")).unwrap();
    assert_eq!(printed, format!("NDCG@10 {:.2}", rows[0].ndcg_at(10).unwrap()));

    // stage by stage reproduces the in-process cell exactly
    run(with(&["--seed", "3", "--set", "baseline=off", "--out", "sweep.json"], "sweep"));
    let swept = read_report(dir.join("sweep.json")).unwrap();
    assert_eq!(swept.len(), 1);
    assert_eq!(swept[0].ndcg, rows[0].ndcg);

    // an encoder of the wrong width is rejected, not silently used
    let bad = semirank(
        dir,
        &["eval", "-c", "tiny.cfg", "--set", "data=bench.svm", "--split", "split.json", "--ranker", "ranker.ckpt"],
    );
    assert!(!bad.status.success());
}

#[test]
fn sweep_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::create_dir(dir.join("data")).unwrap();
    std::fs::write(dir.join("tiny.cfg"), TINY).unwrap();
    let stdout = ok(
        dir,
        &[
            "sweep", "-c", "tiny.cfg", "--set", "seeds=0,1", "--set", "pretrain=off", "--out", "rows.json",
            "--cv-dir", "cv",
        ],
    );
    assert!(stdout.starts_with("method,"), "{stdout}");
    let rows = read_report(dir.join("rows.json")).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.is_ok()), "{rows:?}");
    assert_eq!(std::fs::read_dir(dir.join("cv")).unwrap().count(), 2);

    ok(dir, &["report", "--input", "rows.json", "--out", "summary.csv"]);
    let summary = std::fs::read_to_string(dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3, "{summary}");
    assert!(summary.contains("pseudo+rff"));
    assert!(summary.contains("mlp"));

    ok(dir, &["sweep", "-c", "tiny.cfg", "--set", "pretrain=off", "--out", "rows.csv"]);
    let csv = std::fs::read_to_string(dir.join("rows.csv")).unwrap();
    assert!(csv.starts_with("method,ratio,loss,seed,ndcg@4,ndcg@10,"), "{csv}");
}

#[test]
fn bad_input_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("bad.cfg"), "no_such_key = 3\n").unwrap();
    let out = semirank(dir, &["split", "-c", "bad.cfg", "--out", "s.json"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 1") && err.contains("no_such_key"), "{err}");

    let out = semirank(dir, &["split", "--set", "data=missing.svm", "--out", "s.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.svm"));

    let out = semirank(dir, &["split", "--loss", "hinge", "--out", "s.json"]);
    assert!(!out.status.success());
}
