use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bnmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bnmc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = bnmc(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path, name: &str, signal: &str, seed: &str) -> PathBuf {
    let out = dir.to_str().unwrap();
    ok(&[
        "synth",
        "--preset",
        "hiv-like",
        "--name",
        name,
        "--nodes",
        "8",
        "--subjects",
        "10,10",
        "--delta",
        "0.3",
        "--signal",
        signal,
        "--seed",
        seed,
        "--out",
        out,
    ]);
    dir.join(format!("{name}-fmri"))
}

const SMALL: [&str; 10] = [
    "--hidden",
    "4,3",
    "--head-hidden",
    "3",
    "--k",
    "4",
    "--finetune-epochs",
    "2",
    "--meta-epochs",
    "2",
];

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_writes_one_dataset_per_view() {
    let dir = tempfile::tempdir().unwrap();
    let view = synth(dir.path(), "h", "1", "0");
    assert!(view.join("manifest.json").exists());
    assert!(dir.path().join("h-dti/manifest.json").exists());
    let manifest = fs::read_to_string(view.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"node_count\": 8"));
}

#[test]
fn meta_train_then_finetune_gives_five_rows() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let sources: Vec<PathBuf> = (0..3)
        .map(|i| synth(p, &format!("src{i}"), "1", &i.to_string()))
        .collect();
    let target = synth(p, "tgt", "1", "9");
    let ck = p.join("ck");
    let mut args = vec![
        "meta-train",
        "--strategy",
        "mml",
        "--seed",
        "0",
        "--out",
        s(&ck),
        "--sources",
    ];
    args.extend(sources.iter().map(|x| s(x)));
    args.extend(SMALL);
    let printed = ok(&args);
    assert!(printed.contains("init_seed0.bnmc"));

    let res = p.join("res");
    let init = ck.join("init_seed0.bnmc");
    let mut args = vec![
        "finetune",
        "--init",
        s(&init),
        "--target",
        s(&target),
        "--seed",
        "0",
        "--out",
        s(&res),
    ];
    args.extend(&SMALL[8..]);
    args.extend(["--finetune-epochs", "2"]);
    let printed = ok(&args);
    assert!(printed.contains("mml"));
    let csv = fs::read_to_string(res.join("results.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "strategy,encoder,dataset,modality,atlas,seed,fold,auc,acc"
    );
    assert_eq!(lines.len(), 6);
    assert!(lines[1..]
        .iter()
        .all(|l| l.starts_with("mml,gcn,tgt,fmri,zero-pad,0,")));

    let report = ok(&["report", s(&res)]);
    assert!(report.contains("tgt/fmri"));
}

#[test]
fn fixed_seed_evaluate_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let src = synth(p, "src", "2", "1");
    let target = synth(p, "tgt", "2", "2");
    let run = |out: &str| {
        let out = p.join(out);
        let mut args = vec![
            "evaluate",
            "--strategy",
            "mtt",
            "--epochs",
            "2",
            "--seed",
            "7",
        ];
        args.extend([
            "--sources",
            s(&src),
            "--target",
            s(&target),
            "--out",
            s(&out),
        ]);
        args.extend(SMALL);
        ok(&args);
        fs::read(out.join("results.csv")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn missing_sources_is_a_config_error() {
    let out = bnmc(&["evaluate", "--strategy", "mml", "--target", "nowhere"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--sources"));
    assert_eq!(
        bnmc(&["evaluate", "--strategy", "maml"]).status.code(),
        Some(1)
    );
    assert_eq!(bnmc(&["evaluate", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(
        bnmc(&["pretrain", "--strategy", "mml", "--sources", "x"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn unreadable_data_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = bnmc(&[
        "evaluate",
        "--target",
        s(&dir.path().join("missing")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let bad = dir.path().join("bad.bnmc");
    fs::write(&bad, b"NOPE").unwrap();
    let target = synth(dir.path(), "t", "0", "0");
    let out = bnmc(&[
        "finetune",
        "--init",
        s(&bad),
        "--target",
        s(&target),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let target = synth(dir.path(), "t", "0", "0");
    let out = bnmc(&[
        "finetune",
        "--target",
        s(&target),
        "--out",
        s(&dir.path().join("o")),
        "--finetune-lr",
        "1e300",
        "--lr-min",
        "1e-4",
        "--finetune-epochs",
        "5",
        "--hidden",
        "4,3",
        "--head-hidden",
        "3",
    ]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn task_sim_writes_symmetric_csv() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a", "1", "0");
    let b = synth(dir.path(), "b", "2", "1");
    let out = dir.path().join("sim.csv");
    ok(&[
        "task-sim",
        "--tasks",
        s(&a),
        s(&b),
        "--epochs",
        "2",
        "--out",
        s(&out),
    ]);
    let csv = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "task,a/fmri,b/fmri");
    assert!(lines[1].starts_with("a/fmri,1,"));
    let ab = lines[1].split(',').nth(2).unwrap();
    let ba = lines[2].split(',').nth(1).unwrap();
    assert_eq!(ab, ba);
}
