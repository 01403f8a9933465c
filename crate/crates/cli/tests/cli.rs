use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set",
    "data.count=2",
    "--set",
    "data.frames=4",
    "--set",
    "model.frames_per_clip=4",
    "--set",
    "model.base_width=8",
    "--set",
    "model.depth=2",
    "--set",
    "sample.steps=3",
];

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_headswap"))
        .args(SMALL)
        .args(args)
        .output()
        .expect("spawn headswap")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["gen-data", "--out", s(&a)]);
    ok(&["gen-data", "--out", s(&b)]);
    let manifest = |d: &Path| fs::read(d.join("manifest.txt")).unwrap();
    assert_eq!(manifest(&a), manifest(&b));
    let frame = "sample_00001/v_a/frame_000002.png";
    assert_eq!(fs::read(a.join(frame)).unwrap(), fs::read(b.join(frame)).unwrap());

    let c = dir.path().join("c");
    ok(&["--seed", "5", "gen-data", "--out", s(&c)]);
    assert_ne!(fs::read(a.join(frame)).unwrap(), fs::read(c.join(frame)).unwrap());
}

#[test]
fn eval_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let rep = dir.path().join("rep");
    ok(&["gen-data", "--out", s(&data)]);
    ok(&["eval", "--generated", s(&data), "--ground-truth", s(&data), "--out", s(&rep)]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(rep.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["ssim"].as_f64().unwrap(), 1.0, "{json}");
    assert_eq!(json["sim_id"].as_f64().unwrap(), 1.0);
    assert_eq!(json["pose_mae"].as_f64().unwrap(), 0.0);
    assert_eq!(json["expr_nme"].as_f64().unwrap(), 0.0);
    assert_eq!(json["per_clip"].as_array().unwrap().len(), 2);
    assert!(fs::read_to_string(rep.join("report.txt")).unwrap().contains("overall"));
}

#[test]
fn resumed_training_matches_a_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen-data", "--out", s(&data)]);
    let straight = dir.path().join("straight");
    ok(&["--set", "train.steps=8", "train", "--data", s(&data), "--out", s(&straight)]);
    let split = dir.path().join("split");
    ok(&["--set", "train.steps=4", "train", "--data", s(&data), "--out", s(&split)]);
    let ck = split.join("checkpoint.bin");
    ok(&["--set", "train.steps=4", "train", "--data", s(&data), "--out", s(&split), "--resume", s(&ck)]);

    let losses = |d: &Path| -> Vec<(String, String)> {
        fs::read_to_string(d.join("train_log.csv"))
            .unwrap()
            .lines()
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                (f[0].to_string(), f[1].to_string())
            })
            .collect()
    };
    let a = losses(&straight);
    assert_eq!(a.len(), 8);
    assert_eq!(a, losses(&split));
    assert_eq!(
        fs::read(straight.join("checkpoint.bin")).unwrap().len(),
        fs::read(&ck).unwrap().len()
    );
}

#[test]
fn swap_and_weights_viz_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run_dir = dir.path().join("run");
    ok(&["gen-data", "--out", s(&data)]);
    ok(&["--set", "train.steps=2", "train", "--data", s(&data), "--out", s(&run_dir)]);
    let ck = run_dir.join("checkpoint.bin");

    let one = dir.path().join("one");
    let sample = data.join("sample_00000");
    ok(&[
        "swap",
        "--checkpoint",
        s(&ck),
        "--driving",
        s(&sample.join("v_d")),
        "--reference",
        s(&sample.join("i_b.png")),
        "--out",
        s(&one),
    ]);
    assert!(one.join("clip.json").is_file());
    assert_eq!(fs::read_dir(&one).unwrap().count(), 5);

    let png = dir.path().join("viz/w.png");
    ok(&["weights-viz", "--data", s(&data), "--id", "sample_00001", "--out", s(&png)]);
    assert_eq!(&fs::read(&png).unwrap()[1..4], b"PNG");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen-data", "--out", s(&data)]);
    let code = |args: &[&str]| run(args).status.code().unwrap();

    assert_eq!(code(&["--set", "nope=1", "gen-data", "--out", s(&data)]), 2);
    assert_eq!(code(&["--set", "seed=abc", "gen-data", "--out", s(&data)]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    let missing = dir.path().join("missing.bin");
    assert_eq!(code(&["swap", "--checkpoint", s(&missing), "--data", s(&data), "--out", s(&dir.path().join("g"))]), 3);
    let junk = dir.path().join("junk.bin");
    fs::write(&junk, b"definitely not a checkpoint").unwrap();
    assert_eq!(code(&["swap", "--checkpoint", s(&junk), "--data", s(&data), "--out", s(&dir.path().join("g"))]), 3);
    assert_eq!(code(&["train", "--data", s(&dir.path().join("nothing")), "--out", s(&dir.path().join("r"))]), 4);
    fs::write(data.join("manifest.txt"), "garbage\n").unwrap();
    assert_eq!(code(&["train", "--data", s(&data), "--out", s(&dir.path().join("r"))]), 4);

    let file = dir.path().join("plain");
    fs::write(&file, b"").unwrap();
    assert_eq!(code(&["gen-data", "--out", s(&file.join("sub"))]), 5);
}

#[test]
fn config_file_and_help() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# comment\ndata.count = 1\ndata.frames = 2   # short\n").unwrap();
    let data = dir.path().join("data");
    let bin = env!("CARGO_BIN_EXE_headswap");
    let out = Command::new(bin).args(["--config", s(&cfg), "gen-data", "--out", s(&data)]).output().unwrap();
    assert!(String::from_utf8_lossy(&out.stdout).contains("1 samples"));
    assert_eq!(fs::read_dir(data.join("sample_00000/v_a")).unwrap().count(), 3);
    // --set beats the file
    let out = Command::new(bin)
        .args(["--config", s(&cfg), "--set", "data.count=3", "gen-data", "--out", s(&data)])
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&out.stdout).contains("3 samples"));

    let help = Command::new(env!("CARGO_BIN_EXE_headswap")).arg("--help").output().unwrap();
    let text = String::from_utf8_lossy(&help.stdout);
    assert!(text.contains("mear.weight_floor_lambda"));
    assert!(text.contains("Exit status") && text.contains("5  output location not writable"));
}
