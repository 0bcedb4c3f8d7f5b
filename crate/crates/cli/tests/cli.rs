use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn pogars(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pogars"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(
        o.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        stdout(&o),
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

/// Non-comment CSV lines split on commas (the fixture tables hold no quoted fields).
fn rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

/// A two-sample dataset and a one-epoch checkpoint shared by the tests.
fn fixture() -> &'static PathBuf {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli-fixture");
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        ok(pogars(
            &[
                "gen-synth",
                "--out",
                "d.jsonl",
                "--classes",
                "2",
                "--per-class",
                "1",
                "--seed",
                "3",
            ],
            &dir,
        ));
        ok(pogars(
            &[
                "train",
                "--data",
                "d.jsonl",
                "--out-checkpoint",
                "m.ckpt",
                "--epochs",
                "1",
                "--no-augment",
            ],
            &dir,
        ));
        dir
    })
}

#[test]
fn gen_synth_counts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out| {
        [
            "gen-synth",
            "--out",
            out,
            "--classes",
            "4",
            "--per-class",
            "16",
            "--seed",
            "1",
        ]
    };
    let o = ok(pogars(&args("a.jsonl"), dir.path()));
    assert!(
        stdout(&o).contains("\"classes\":4"),
        "resolved config is echoed"
    );
    assert!(stdout(&o).contains("wrote 64 records"));
    ok(pogars(&args("b.jsonl"), dir.path()));
    let a = std::fs::read(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.jsonl")).unwrap());
    let records = a
        .split(|&b| b == b'\n')
        .filter(|l| !l.is_empty() && l[0] != b'#')
        .count();
    assert_eq!(records, 64);
}

#[test]
fn invalid_input_exits_1_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let o = pogars(
        &["gen-synth", "--out", "x.jsonl", "--classes", "9"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("x.jsonl").exists());

    let o = pogars(
        &[
            "train",
            "--data",
            "d.jsonl",
            "--out-checkpoint",
            "m",
            "--learning-rate",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));

    std::fs::write(
        dir.path().join("bad.jsonl"),
        "{\"id\": \"clip-7\", \"frame_width\": 1}\n",
    )
    .unwrap();
    let o = pogars(
        &["train", "--data", "bad.jsonl", "--out-checkpoint", "m.ckpt"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
    assert!(!dir.path().join("m.ckpt").exists());
    assert!(!dir.path().join("m.ckpt.history.csv").exists());

    let mut text = std::fs::read_to_string(fixture().join("d.jsonl")).unwrap();
    text = text.replacen("\"spiking\"", "\"juggling\"", 1);
    std::fs::write(dir.path().join("label.jsonl"), text).unwrap();
    let o = pogars(
        &[
            "train",
            "--data",
            "label.jsonl",
            "--out-checkpoint",
            "m.ckpt",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("synth-0-0000"));

    let no_ball: String = std::fs::read_to_string(fixture().join("d.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("ball");
            format!("{v}\n")
        })
        .collect();
    std::fs::write(dir.path().join("no_ball.jsonl"), no_ball).unwrap();
    let o = pogars(
        &[
            "train",
            "--data",
            "no_ball.jsonl",
            "--out-checkpoint",
            "b.ckpt",
            "--ball",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("synth-0-0000"));
    assert!(!dir.path().join("b.ckpt").exists());
}

#[test]
fn train_writes_checkpoint_and_history() {
    let dir = fixture();
    let h = rows(&dir.join("m.ckpt.history.csv"));
    assert_eq!(h[0], ["epoch", "lr", "L_MT", "L_GA", "L_IA", "train_acc"]);
    assert_eq!(h.len(), 2);
    let header = std::fs::read_to_string(dir.join("m.ckpt.history.csv")).unwrap();
    assert!(header.starts_with("# data: d.jsonl\n# model: {"));
    assert!(std::fs::metadata(dir.join("m.ckpt")).unwrap().len() > 0);
}

#[test]
fn zero_alpha_history_reports_group_loss_only() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(fixture().join("d.jsonl"), dir.path().join("d.jsonl")).unwrap();
    ok(pogars(
        &[
            "train",
            "--data",
            "d.jsonl",
            "--out-checkpoint",
            "a.ckpt",
            "--epochs",
            "2",
            "--alpha",
            "0",
            "--no-augment",
        ],
        dir.path(),
    ));
    for r in &rows(&dir.path().join("a.ckpt.history.csv"))[1..] {
        assert_eq!(r[2], r[3]);
    }
}

#[test]
fn eval_numbers_match_the_matrix_file() {
    let dir = fixture();
    let o = ok(pogars(
        &[
            "eval",
            "--checkpoint",
            "m.ckpt",
            "--data",
            "d.jsonl",
            "--confusion-out",
            "c.csv",
        ],
        dir,
    ));
    let out = stdout(&o);
    let value = |key: &str| -> f64 {
        out.lines()
            .find_map(|l| l.strip_prefix(key))
            .unwrap_or_else(|| panic!("{key} missing in {out}"))
            .trim()
            .parse()
            .unwrap()
    };
    let m = rows(&dir.join("c.csv"));
    assert_eq!(m.len(), 9);
    let counts: Vec<Vec<u64>> = m[1..]
        .iter()
        .map(|r| r[1..].iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    let total: u64 = counts.iter().flatten().sum();
    let trace: u64 = (0..8).map(|i| counts[i][i]).sum();
    assert_eq!(total, 2);
    assert_eq!(value("samples"), 2.0);
    assert_eq!(value("group_accuracy"), trace as f64 / total as f64);
    assert!((0.0..=1.0).contains(&value("individual_accuracy")));
}

#[test]
fn predictions_are_consistent_and_deterministic() {
    let dir = fixture();
    ok(pogars(
        &[
            "predict",
            "--checkpoint",
            "m.ckpt",
            "--data",
            "d.jsonl",
            "--out",
            "p1.csv",
        ],
        dir,
    ));
    ok(pogars(
        &[
            "predict",
            "--checkpoint",
            "m.ckpt",
            "--data",
            "d.jsonl",
            "--out",
            "p2.csv",
        ],
        dir,
    ));
    assert_eq!(
        std::fs::read(dir.join("p1.csv")).unwrap(),
        std::fs::read(dir.join("p2.csv")).unwrap()
    );
    let p = rows(&dir.join("p1.csv"));
    assert_eq!(p[0].len(), 2 + 8 + 12);
    ok(pogars(
        &[
            "eval",
            "--checkpoint",
            "m.ckpt",
            "--data",
            "d.jsonl",
            "--confusion-out",
            "c2.csv",
        ],
        dir,
    ));
    let m = rows(&dir.join("c2.csv"));
    let mut recount = vec![vec![0u64; 8]; 8];
    for (row, truth) in p[1..].iter().zip(["r_spike", "l_spike"]) {
        let probs: Vec<f64> = row[2..10].iter().map(|v| v.parse().unwrap()).collect();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let best = (0..8)
            .max_by(|&a, &b| probs[a].total_cmp(&probs[b]).then(b.cmp(&a)))
            .unwrap();
        assert_eq!(p[0][2 + best], format!("p_{}", row[1]));
        let t = m[0].iter().position(|h| h == truth).unwrap() - 1;
        recount[t][best] += 1;
    }
    let counts: Vec<Vec<u64>> = m[1..]
        .iter()
        .map(|r| r[1..].iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(counts, recount);
}

#[test]
fn attention_export_writes_three_tables() {
    let dir = fixture();
    ok(pogars(
        &[
            "export-attention",
            "--checkpoint",
            "m.ckpt",
            "--data",
            "d.jsonl",
            "--out",
            "att",
        ],
        dir,
    ));
    let mean = rows(&dir.join("att/mean_temporal.csv"));
    assert_eq!(mean.len(), 37);
    let sum: f64 = mean[1..].iter().map(|r| r[1].parse::<f64>().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-6);
    assert_eq!(rows(&dir.join("att/spatial.csv")).len(), 1 + 2 * 12);
    assert_eq!(rows(&dir.join("att/temporal.csv")).len(), 1 + 2 * 12 * 36);
}

#[test]
fn early_fusion_checkpoint_has_no_attention_export() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(fixture().join("d.jsonl"), dir.path().join("d.jsonl")).unwrap();
    ok(pogars(
        &[
            "train",
            "--data",
            "d.jsonl",
            "--out-checkpoint",
            "e.ckpt",
            "--epochs",
            "1",
            "--fusion",
            "early",
            "--no-augment",
        ],
        dir.path(),
    ));
    let o = pogars(
        &[
            "export-attention",
            "--checkpoint",
            "e.ckpt",
            "--data",
            "d.jsonl",
            "--out",
            "att",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("att").exists());
    ok(pogars(
        &[
            "eval",
            "--checkpoint",
            "e.ckpt",
            "--data",
            "d.jsonl",
            "--confusion-out",
            "c.csv",
        ],
        dir.path(),
    ));
}

#[test]
fn verify_passes_on_a_clean_build() {
    let dir = tempfile::tempdir().unwrap();
    let o = ok(pogars(&["verify"], dir.path()));
    let out = stdout(&o);
    assert!(
        out.contains("grad:conv1d") && out.contains("grad:tiny model (late)"),
        "{out}"
    );
    assert!(!out.contains("FAIL"));
}
