use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use uniseq::baselines::{layout, LayoutKind};
use uniseq::codec::{read_grid, write_grid, write_wav, AudioSignal, TokenGrid};

fn uniseq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uniseq")).args(args).env_remove("UNISEQ_SEED").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn help_lists_config_keys() {
    let o = uniseq(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    for needle in ["codec-train", "inspect", "codec.levels = 3", "sample.k = 30", "sample.temperature = 0.8", "sample.max_patches = 3000", "bench.iters = 20", "multitask.alpha = 0.05"] {
        assert!(out.contains(needle), "--help lacks {needle}");
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(uniseq(&[]).status.code(), Some(1));
    assert_eq!(uniseq(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(uniseq(&["inspect", "--layout", "delay", "--T", "3"]).status.code(), Some(1));
    assert_eq!(uniseq(&["inspect", "--layout", "zigzag", "--T", "3", "--nq", "3"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("b.csv");
    let o = uniseq(&["bench", "--T", "1000", "--out", p(&csv)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--long"));
    assert!(!csv.exists());
}

#[test]
fn data_errors_exit_two_with_context() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", "{\n  \"sample\": {\"topk\": 3}\n}\n");
    let o = uniseq(&["--config", p(&cfg), "inspect", "--layout", "flatten", "--T", "2", "--nq", "2"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains(&cfg.display().to_string()) && err.contains("line 2"), "{err}");
    assert!(err.contains("topk"), "{err}");

    let bad = write(dir.path(), "bad.uag", "UAGX garbage");
    let o = uniseq(&["inspect", "--grid", p(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.uag"));

    let missing = dir.path().join("nope.uag");
    assert_eq!(uniseq(&["inspect", "--grid", p(&missing)]).status.code(), Some(2));
}

#[test]
fn inspect_renders_layouts_and_grids() {
    let o = uniseq(&["inspect", "--layout", "delay", "--T", "3", "--nq", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let want = layout(LayoutKind::Delay, 3, 3).unwrap().render();
    assert_eq!(stdout(&o), want);
    assert!(want.contains("steps=5"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.uag");
    let grid = TokenGrid::from_frames(&[vec![1, 2], vec![3, 4]]).unwrap();
    write_grid(&grid, std::fs::File::create(&path).unwrap()).unwrap();
    let o = uniseq(&["inspect", "--grid", p(&path)]);
    assert_eq!(stdout(&o), "T=2 n_q=2\n     0: 1 2\n     1: 3 4\n");
}

#[test]
fn inspect_dumps_a_serialized_example() {
    let o = uniseq(&["inspect", "--example", "0"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    // 16 target frames of 3 codes plus markers and the condition
    assert!(lines.len() > 16 * 3);
    assert!(lines.iter().any(|l| l.contains("audio_start")));
    assert_eq!(lines[lines.len() - 2..], ["<audio_end>", "<end>"], "{out}");
    assert_eq!(uniseq(&["inspect", "--example", "999999"]).status.code(), Some(1));
}

#[test]
fn bench_writes_the_full_grid() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("b.csv");
    let o = uniseq(&["bench", "--archs", "flatten,multiscale", "--T", "8,16,32", "--nq", "3,8", "--out", p(&csv), "--iters", "1", "--warmup", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "arch,T,n_q,ms_per_iter,attn_pairs,param_count");
    assert_eq!(lines.len(), 1 + 2 * 3 * 2);
    // counters are deterministic: rerun and compare every column but timing
    let csv2 = dir.path().join("b2.csv");
    uniseq(&["bench", "--archs", "flatten,multiscale", "--T", "8,16,32", "--nq", "3,8", "--out", p(&csv2), "--iters", "1", "--warmup", "0"]);
    let strip = |t: &str| -> Vec<String> {
        t.lines().map(|l| l.split(',').enumerate().filter(|(i, _)| *i != 3).map(|(_, c)| c).collect::<Vec<_>>().join(",")).collect()
    };
    assert_eq!(strip(&text), strip(&std::fs::read_to_string(&csv2).unwrap()));
    assert!(stdout(&o).contains("T^"));
}

const TINY: &str = r#"{
  "codec": {"hop": 16, "latent_dim": 8, "levels": 2, "codebook_size": 8},
  "model": {"global_width": 16, "global_layers": 1, "global_heads": 2, "global_ff": 32,
            "local_width": 8, "local_layers": 1, "local_heads": 2, "local_ff": 16,
            "continuous_dim": 1, "max_patches": 32},
  "train": {"steps": 30, "batch_size": 4, "eval_every": 10},
  "sample": {"k": 3},
  "task": {"task": "tts", "rule": "token-tts", "train": 40, "eval": 4, "frames": 4, "n_q": 2,
           "symbols": 4, "codebook_size": 8}
}"#;

#[test]
fn codec_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", TINY);
    let wav = dir.path().join("a.wav");
    let samples: Vec<f64> = (0..16 * 40).map(|i| (i as f64 * 0.05).sin() * 0.5 + (i as f64 * 0.31).cos() * 0.2).collect();
    write_wav(&AudioSignal::new(samples, 16_000).unwrap(), std::fs::File::create(&wav).unwrap()).unwrap();

    let books = dir.path().join("books.uac");
    let o = uniseq(&["--config", p(&cfg), "--seed", "3", "codec-train", "--in", p(&wav), "--out", p(&books)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let grid = dir.path().join("a.uag");
    let o = uniseq(&["--config", p(&cfg), "codec-encode", "--codebooks", p(&books), "--in", p(&wav), "--out", p(&grid)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let bytes = std::fs::read(&grid).unwrap();
    assert_eq!(&bytes[..4], b"UAG1");
    let g = read_grid(bytes.as_slice()).unwrap();
    assert_eq!((g.frames(), g.levels()), (40, 2));

    let back = dir.path().join("b.wav");
    let o = uniseq(&["--config", p(&cfg), "codec-decode", "--codebooks", p(&books), "--in", p(&grid), "--out", p(&back)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(std::fs::metadata(&back).unwrap().len() > 44);

    // the same seed reproduces the codebooks bit for bit, through the env fallback too
    let again = dir.path().join("again.uac");
    let o = Command::new(env!("CARGO_BIN_EXE_uniseq"))
        .args(["--config", p(&cfg), "codec-train", "--in", p(&wav), "--out", p(&again)])
        .env("UNISEQ_SEED", "3")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read(&books).unwrap(), std::fs::read(&again).unwrap());

    // a WAV is not a grid
    assert_eq!(uniseq(&["--config", p(&cfg), "codec-decode", "--codebooks", p(&books), "--in", p(&wav), "--out", p(&back)]).status.code(), Some(2));
}

#[test]
fn train_then_generate_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", TINY);
    let model = dir.path().join("m.uaw");
    let report = dir.path().join("r.json");
    let o = uniseq(&["--config", p(&cfg), "--seed", "5", "train", "--out", p(&model), "--report", p(&report)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(model.exists() && model.with_extension("json").exists());
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["losses"].as_array().unwrap().len(), r["steps_run"].as_u64().unwrap() as usize);

    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = uniseq(&["--config", p(&cfg), "--seed", "9", "generate", "--model", p(&model), "--phones", "0,1,2,3", "--out", p(&out)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        std::fs::read(out).unwrap()
    };
    let a = run("x.uag");
    assert_eq!(a, run("y.uag"));
    let grid = read_grid(a.as_slice()).unwrap();
    assert_eq!(grid.levels(), 2);
    assert!(grid.codes().iter().all(|&c| c < 8));

    // wrong condition kind for the configured task
    let o = uniseq(&["--config", p(&cfg), "generate", "--model", p(&model), "--in", p(&model), "--out", p(&dir.path().join("z.uag"))]);
    assert_eq!(o.status.code(), Some(1));
}
