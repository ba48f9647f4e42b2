use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn busvision(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_busvision"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = busvision(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn stages_chain_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--n-trips", "24", "--width", "64", "--height", "64", "--separable", "--seed", "2", "--out", "s"]);
    ok(d, &["trigger", "--feed", "s/feed.jsonl", "--out", "t"]);
    ok(d, &["label", "--manifest", "t/manifest.csv", "--trips", "t/trips.csv", "--avl", "s/avl.csv", "--out", "l.csv"]);
    ok(d, &["augment", "--manifest", "l.csv", "--passes", "1", "--size", "32x32", "--out", "a"]);
    fs::write(d.join("model.cfg"), "# small and quick\nepochs = 2\nimage-size = 32\npatch-size = 8\n").unwrap();
    let log = ok(d, &["train", "--manifest", "a/manifest.csv", "--config", "model.cfg", "--folds", "2", "--holdout-fold", "1", "--out", "m.ckpt"]);
    assert_eq!(log.lines().count(), 2);
    ok(d, &["eval", "--ckpt", "m.ckpt", "--manifest", "a/manifest.csv", "--folds", "2", "--fold", "1", "--out", "e"]);
    for f in ["metrics_frame.csv", "metrics_sequence.csv", "confusion_sequence.csv", "predictions.csv", "summary.txt"] {
        assert!(d.join("e").join(f).is_file(), "missing {f}");
    }
    let frame = fs::read_dir(d.join("s/frames")).unwrap().next().unwrap().unwrap().path();
    ok(d, &["attention", "--ckpt", "m.ckpt", "--frame", frame.to_str().unwrap(), "--out", "att.ppm"]);
    assert!(fs::read(d.join("att.ppm")).unwrap().starts_with(b"P6"));

    let replayed = ok(d, &["replay", "--feed", "s/feed.jsonl", "--fast"]);
    let feed = fs::read_to_string(d.join("s/feed.jsonl")).unwrap();
    assert_eq!(replayed.lines().count(), feed.lines().filter(|l| !l.trim().is_empty()).count());
}

#[test]
fn regress_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--n-trips", "60", "--width", "16", "--height", "16", "--out", "s"]);
    ok(d, &["trigger", "--feed", "s/feed.jsonl", "--out", "t"]);
    ok(d, &["label", "--manifest", "t/manifest.csv", "--trips", "t/trips.csv", "--avl", "s/avl.csv", "--out", "l.csv"]);
    // Oracle bands straight from the labels.
    let labeled = fs::read_to_string(d.join("l.csv")).unwrap();
    let mut lines = labeled.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |n: &str| header.iter().position(|h| *h == n).unwrap();
    let (trip, eff, band) = (col("trip_id"), col("eff_tt_s"), col("band"));
    let mut bands = String::from("trip_id,eff_tt_s,pred_band\n");
    let mut seen = std::collections::BTreeSet::new();
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        if seen.insert(f[trip].to_string()) {
            bands.push_str(&format!("{},{},{}\n", f[trip], f[eff], f[band]));
        }
    }
    fs::write(d.join("bands.csv"), bands).unwrap();
    let out = ok(d, &["regress", "--trips", "t/trip_attributes.csv", "--bands", "bands.csv", "--scope", "outbound", "--out", "r"]);
    assert!(out.contains("R2"));
    let report = fs::read_to_string(d.join("r/olsplus_outbound.csv")).unwrap();
    assert!(report.starts_with("variable,coef,se,t,p,stars"));
    ok(d, &["regress", "--trips", "t/trip_attributes.csv", "--bands", "bands.csv", "--lookahead", "--scope", "inbound", "--out", "r"]);
    assert!(d.join("r/scatter_inbound_lookahead.csv").is_file());
}

#[test]
fn validation_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("run.cfg"), "out = run\nsource = ingest\nfeed = feed.jsonl\navl = missing.csv\nframes = .\n").unwrap();
    fs::write(d.join("feed.jsonl"), "").unwrap();
    let out = busvision(d, &["pipeline", "--config", "run.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("avl"));
    assert!(!d.join("run").exists());

    fs::write(d.join("bad.cfg"), "out = run\ndropout = 0.5\nradius-m = 0\n").unwrap();
    let out = busvision(d, &["pipeline", "--config", "bad.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("[0, 0.25]") && err.contains("radius-m"), "{err}");

    assert_eq!(busvision(d, &["no-such-command"]).status.code(), Some(1));
    assert_eq!(busvision(d, &["trigger", "--feed", "absent.jsonl", "--out", "t"]).status.code(), Some(1));
    assert_eq!(busvision(d, &["--help"]).status.code(), Some(0));
}

#[test]
fn stage_failure_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    // Three trips cannot fill five folds, so the folds stage fails.
    fs::write(d.join("run.cfg"), "out = run\nsource = synth\nn-trips = 3\nfolds = 5\nframe-width = 32\nframe-height = 32\n").unwrap();
    let out = busvision(d, &["pipeline", "--config", "run.cfg", "--threads", "1"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(d.join("run/error.json")).unwrap();
    assert!(report.contains("\"stage\""));
    assert!(d.join("run/01_source/feed.jsonl").is_file());
}

#[test]
fn pipeline_with_one_thread_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("small.cfg"),
        "source = synth\nn-trips = 30\nframe-width = 32\nframe-height = 32\npasses = 1\nfolds = 2\n\
         image-size = 32\npatch-size = 8\nlatent-dim = 16\nnum-layers = 1\nnum-heads = 2\nmlp-hidden-dim = 32\n\
         batch-size = 16\nlearning-rate = 0.001\nepochs = 2\n",
    )
    .unwrap();
    for run in ["a", "b"] {
        ok(d, &["pipeline", "--config", "small.cfg", "--seed", "9", "--threads", "1", "--out", run]);
    }
    for f in ["07_eval/metrics_frame.csv", "07_eval/metrics_sequence.csv", "07_eval/predictions.csv", "summary.json"] {
        let (a, b) = (fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap());
        assert_eq!(a, b, "{f} differs between runs");
    }
}
