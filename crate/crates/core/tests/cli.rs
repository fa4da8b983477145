use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SETTINGS: &[&str] = &[
    "seed=3",
    "data.codec_train=16",
    "data.codec_test=8",
    "data.generator_train=16",
    "data.edit_train=16",
    "data.edit_pairs=8",
    "data.control=4",
    "data.frames=32",
    "codec.hidden=8",
    "codec.latent_dim=6",
    "codec_train.epochs=1",
    "generator.width=16",
    "generator.heads=2",
    "generator.blocks=1",
    "generator.ffn=16",
    "generator_train.epochs=1",
    "edit_train.epochs=1",
    "eval.conditional_samples=8",
    "eval.compositions=4",
];

fn mstok(dir: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mstok"));
    cmd.current_dir(dir).args(args);
    for s in SETTINGS {
        cmd.args(["--set", s]);
    }
    cmd.output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = mstok(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn error_line(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(stderr.lines().last().unwrap()).unwrap()
}

#[test]
fn full_workflow_through_the_command_line() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["gen-data", "--out", "data"]);
    ok(d, &["train-codec", "--data", "data", "--out", "codec.ckpt"]);
    ok(
        d,
        &[
            "train-gen",
            "--data",
            "data",
            "--codec",
            "codec.ckpt",
            "--out",
            "gen.ckpt",
        ],
    );
    ok(
        d,
        &[
            "train-edit",
            "--data",
            "data",
            "--codec",
            "codec.ckpt",
            "--out",
            "edit.ckpt",
        ],
    );

    let clip = "data/codec-test/00000.motion.msqm";
    let other = "data/codec-test/00001.motion.msqm";
    let inputs = [clip, other, "codec.ckpt", "gen.ckpt", "edit.ckpt"];
    let before: Vec<Vec<u8>> = inputs.iter().map(|p| fs::read(d.join(p)).unwrap()).collect();

    ok(d, &["encode", "--in", clip, "--ckpt", "codec.ckpt", "--out", "a.msqt"]);
    ok(d, &["encode", "--in", other, "--ckpt", "codec.ckpt", "--out", "b.msqt"]);
    ok(
        d,
        &["decode", "--in", "a.msqt", "--ckpt", "codec.ckpt", "--out", "a.msqm"],
    );
    let decoded = mstok::motiondata::read_motion(d.join("a.msqm")).unwrap();
    assert_eq!(decoded.len(), 32);
    ok(
        d,
        &[
            "partial-decode",
            "--in",
            "a.msqt",
            "--ckpt",
            "codec.ckpt",
            "--scales",
            "2",
            "--out",
            "p.msqm",
        ],
    );
    ok(
        d,
        &[
            "compose",
            "--first",
            "a.msqt",
            "--second",
            "b.msqt",
            "--ckpt",
            "codec.ckpt",
            "--out",
            "c.msqm",
            "--tokens-out",
            "c.msqt",
        ],
    );
    ok(
        d,
        &[
            "compose",
            "--first",
            "a.msqt",
            "--second",
            "b.msqt",
            "--ckpt",
            "codec.ckpt",
            "--mode",
            "spatial",
            "--split",
            "3",
            "--out",
            "s.msqm",
        ],
    );
    ok(
        d,
        &[
            "control",
            "--trajectory",
            clip,
            "--codec",
            "codec.ckpt",
            "--generator",
            "gen.ckpt",
            "--out",
            "ctl.msqm",
        ],
    );
    ok(
        d,
        &[
            "edit",
            "--in",
            clip,
            "--codec",
            "codec.ckpt",
            "--editor",
            "edit.ckpt",
            "--label",
            "raise-arms",
            "--out",
            "e.msqm",
        ],
    );
    ok(
        d,
        &[
            "inpaint",
            "--in",
            clip,
            "--codec",
            "codec.ckpt",
            "--generator",
            "gen.ckpt",
            "--mask",
            "in-between",
            "--out",
            "i.msqm",
        ],
    );
    ok(
        d,
        &[
            "inpaint",
            "--in",
            clip,
            "--codec",
            "codec.ckpt",
            "--generator",
            "gen.ckpt",
            "--mask",
            "lower",
            "--out",
            "l.msqm",
        ],
    );
    ok(
        d,
        &[
            "sample",
            "--codec",
            "codec.ckpt",
            "--generator",
            "gen.ckpt",
            "--class",
            "wave",
            "--out",
            "w.msqm",
        ],
    );
    for p in [
        "p.msqm", "c.msqm", "s.msqm", "ctl.msqm", "e.msqm", "i.msqm", "l.msqm", "w.msqm",
    ] {
        assert_eq!(mstok::motiondata::read_motion(d.join(p)).unwrap().len(), 32, "{p}");
    }

    let table = ok(
        d,
        &[
            "eval",
            "--task",
            "scale-ablation",
            "--data",
            "data",
            "--codec",
            "codec.ckpt",
            "--out",
            "r1.jsonl",
        ],
    );
    let table = String::from_utf8(table.stdout).unwrap();
    for s in 1..=6 {
        assert!(table.contains(&format!("partial_{s}")), "{table}");
    }
    ok(
        d,
        &[
            "eval",
            "--task",
            "scale-ablation",
            "--data",
            "data",
            "--codec",
            "codec.ckpt",
            "--out",
            "r2.jsonl",
        ],
    );
    assert_eq!(
        fs::read(d.join("r1.jsonl")).unwrap(),
        fs::read(d.join("r2.jsonl")).unwrap()
    );
    let printed = ok(d, &["report", "--in", "r1.jsonl"]);
    assert_eq!(String::from_utf8(printed.stdout).unwrap(), table);
    for (task, extra) in [
        ("conditional", ["--generator", "gen.ckpt"]),
        ("control", ["--generator", "gen.ckpt"]),
        ("edit", ["--editor", "edit.ckpt"]),
        ("compose", ["--generator", "gen.ckpt"]),
    ] {
        let mut args = vec!["eval", "--task", task, "--data", "data", "--codec", "codec.ckpt"];
        args.extend(extra);
        ok(d, &args);
    }
    let missing = mstok(
        d,
        &["eval", "--task", "edit", "--data", "data", "--codec", "codec.ckpt"],
    );
    assert_eq!(missing.status.code(), Some(2));

    let after: Vec<Vec<u8>> = inputs.iter().map(|p| fs::read(d.join(p)).unwrap()).collect();
    assert!(before == after, "an input file changed");

    // A token file from a different codec is an invariant violation.
    fs::write(
        d.join("junk.msqt"),
        b"MSQT\x01\x00\x01\x00\x01\x00\x02\x00\x00\x00\x01\x00\x00\x00",
    )
    .unwrap();
    let out = mstok(
        d,
        &["decode", "--in", "junk.msqt", "--ckpt", "codec.ckpt", "--out", "x.msqm"],
    );
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_line(&out)["error"], "layout-mismatch");
}

#[test]
fn usage_errors_and_missing_inputs_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = mstok(
        d,
        &["decode", "--in", "nope.msqt", "--ckpt", "nope.ckpt", "--out", "x.msqm"],
    );
    assert_eq!(out.status.code(), Some(2));
    let line = error_line(&out);
    assert_eq!(line["error"], "input-not-found");
    assert!(line["message"].as_str().unwrap().contains("input not found"));
    assert_eq!(mstok(d, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(mstok(d, &["encode", "--bogus"]).status.code(), Some(2));
    assert_eq!(
        mstok(d, &["gen-data", "--out", "x", "--set", "seed"]).status.code(),
        Some(2)
    );
    assert!(!d.join("x").exists());
}

#[test]
fn malformed_inputs_exit_3_with_their_code() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("bad.msqm"), b"MSQM\x02\x00").unwrap();
    fs::write(d.join("c.ckpt"), b"").unwrap();
    let out = mstok(
        d,
        &["encode", "--in", "bad.msqm", "--ckpt", "c.ckpt", "--out", "y.msqt"],
    );
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_line(&out)["error"], "truncated");
}
