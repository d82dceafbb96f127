use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bipath_core::density::{count_mae_mse, pixel_mae_mse, rasterize_density, DEFAULT_SIGMA};
use bipath_core::io::{decode_planes, read_bytes, read_density, SequenceLayout};
use tempfile::TempDir;

fn bipath(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bipath"))
        .args(["--jobs", "1"])
        .args(args)
        .output()
        .expect("spawn bipath")
}

fn ok(args: &[&str]) -> Output {
    let out = bipath(args);
    assert!(
        out.status.success(),
        "bipath {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_spec(dir: &Path, frames: usize) -> PathBuf {
    let p = dir.join("scene.cfg");
    fs::write(&p, format!("width = 64\nheight = 64\nframes = {frames}\nn_persons = 5\nseed = 11\n")).unwrap();
    p
}

fn generate(dir: &Path, frames: usize, count: usize, night: f64) -> PathBuf {
    let spec = write_spec(dir, frames);
    let out = dir.join("data");
    ok(&["gen-synthetic", "--out", s(&out), "--spec", s(&spec), "--count", &count.to_string(), "--night-fraction", &night.to_string()]);
    out
}

const TINY: [&str; 8] = ["--set", "width=0.0625", "--set", "crop=32", "--set", "steps_per_epoch=2", "--epochs", "2"];

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "run.json" {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn exit_codes() {
    assert_eq!(bipath(&[]).status.code(), Some(1));
    assert_eq!(bipath(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(bipath(&["--help"]).status.code(), Some(0));
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nope");
    let out = bipath(&["flow", "--seq", s(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let spec = tmp.path().join("bad.cfg");
    fs::write(&spec, "width = 10\n").unwrap();
    let out = bipath(&["gen-synthetic", "--out", s(&tmp.path().join("o")), "--spec", s(&spec)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn flow_writes_pairs_and_is_idempotent() {
    let tmp = TempDir::new().unwrap();
    let data = generate(tmp.path(), 3, 1, 0.0);
    let seq = data.join("seq0001");
    ok(&["flow", "--seq", s(&seq), "--encode", "polar"]);
    let l = SequenceLayout::open(&seq).unwrap();
    let flo: Vec<_> = fs::read_dir(&seq)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "flo") && e.file_name().to_string_lossy().starts_with("flow"))
        .collect();
    assert_eq!(flo.len(), 2);

    let snapshot = |l: &SequenceLayout| -> Vec<_> {
        (1..=3)
            .flat_map(|i| [l.flow_path(i), l.flow_input_path(i)])
            .filter(|p| p.exists())
            .map(|p| fs::metadata(&p).unwrap().modified().unwrap())
            .collect()
    };
    let before = snapshot(&l);
    assert_eq!(before.len(), 5);
    std::thread::sleep(std::time::Duration::from_millis(20));
    let out = ok(&["flow", "--seq", s(&seq), "--encode", "polar"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 file(s)"));
    assert_eq!(snapshot(&l), before);

    for i in 1..=3 {
        let planes = decode_planes(&read_bytes(&l.flow_input_path(i)).unwrap()).unwrap();
        assert_eq!(planes.len(), 3);
        assert_eq!(planes[0].dims(), (64, 64));
        for p in &planes {
            assert!(p.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    let out = bipath(&["flow", "--seq", s(&seq), "--encode", "cartesian"]);
    assert!(out.status.success());
    fs::remove_file(l.frame_path(2)).unwrap();
    assert_eq!(bipath(&["flow", "--seq", s(&seq), "--force"]).status.code(), Some(2));
}

#[test]
fn gen_synthetic_night_split_and_determinism() {
    let tmp = TempDir::new().unwrap();
    let data = generate(tmp.path(), 2, 4, 0.5);
    let means: Vec<f64> = (1..=4)
        .map(|k| {
            let l = SequenceLayout::open(&data.join(format!("seq{k:04}"))).unwrap();
            assert!(l.true_flow_path(1).exists());
            (1..=l.frames).map(|i| l.read_frame(i).unwrap().mean()).sum::<f64>() / l.frames as f64
        })
        .collect();
    let night: Vec<_> = (1..=4)
        .map(|k| SequenceLayout::open(&data.join(format!("seq{k:04}"))).unwrap().luminance <= 0.2)
        .collect();
    assert_eq!(night, [true, true, false, false]);
    let night_mean = (means[0] + means[1]) / 2.0;
    let day_mean = (means[2] + means[3]) / 2.0;
    assert!(night_mean < 0.15 * day_mean, "night {night_mean} day {day_mean}");
    assert!(data.join("run.json").is_file());

    let again = tmp.path().join("again");
    let spec = tmp.path().join("scene.cfg");
    ok(&["gen-synthetic", "--out", s(&again), "--spec", s(&spec), "--count", "4", "--night-fraction", "0.5"]);
    assert_eq!(tree(&data), tree(&again));
}

#[test]
fn train_eval_predict_round() {
    let tmp = TempDir::new().unwrap();
    let data = generate(tmp.path(), 2, 3, 0.0);
    let ckpt = tmp.path().join("model.ckpt");
    let mut args = vec!["train", "--data", s(&data), "--out", s(&ckpt), "--no-flow", "--val-sequences", "1"];
    args.extend(TINY);
    ok(&args);
    let log1 = fs::read_to_string(tmp.path().join("model.ckpt.metrics.csv")).unwrap();
    let lines: Vec<_> = log1.lines().collect();
    assert_eq!(lines[0], "epoch,split,count_mae,count_mse,pixel_mae,pixel_mse,loss");
    assert_eq!(lines.len(), 5);
    assert!(tmp.path().join("model.ckpt.run.json").is_file());
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("model.ckpt.run.json")).unwrap()).unwrap();
    assert_eq!(meta["metrics"].as_array().unwrap().len(), 4);

    // Same seed, fresh metrics file: identical log.
    let ckpt2 = tmp.path().join("again.ckpt");
    let mut args = vec!["train", "--data", s(&data), "--out", s(&ckpt2), "--no-flow", "--val-sequences", "1"];
    args.extend(TINY);
    ok(&args);
    assert_eq!(fs::read_to_string(tmp.path().join("again.ckpt.metrics.csv")).unwrap(), log1);
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(&ckpt2).unwrap());

    // Appending keeps one header.
    ok(&args);
    let appended = fs::read_to_string(tmp.path().join("again.ckpt.metrics.csv")).unwrap();
    assert_eq!(appended.lines().count(), 9);
    assert_eq!(appended.matches("epoch,split").count(), 1);

    // Eval metrics against maps saved by predict.
    let ev = tmp.path().join("eval.csv");
    ok(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--out", s(&ev)]);
    let ev_mix = tmp.path().join("eval_mix.csv");
    ok(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--ckpt-night", s(&ckpt2), "--night-threshold", "0", "--out", s(&ev_mix)]);
    assert_eq!(fs::read(&ev).unwrap(), fs::read(&ev_mix).unwrap());

    let text = fs::read_to_string(&ev).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    let mut pairs = Vec::new();
    for k in 1..=3 {
        let seq = data.join(format!("seq{k:04}"));
        let pred_dir = tmp.path().join(format!("pred{k}"));
        ok(&["predict", "--ckpt", s(&ckpt), "--seq", s(&seq), "--out", s(&pred_dir)]);
        let counts = fs::read_to_string(pred_dir.join("counts.csv")).unwrap();
        assert_eq!(counts.lines().count(), 1 + 2);
        let l = SequenceLayout::open(&seq).unwrap();
        for i in 1..=2 {
            let pred = read_density(&pred_dir.join(format!("density{i:06}.raw"))).unwrap();
            let gt = rasterize_density(&l.read_dots(i).unwrap(), DEFAULT_SIGMA).unwrap();
            let (mae, mse) = pixel_mae_mse(&pred, &gt).unwrap();
            let row = rows.iter().find(|r| r[0] == format!("seq{k:04}") && r[1] == i.to_string()).unwrap();
            assert_eq!(row[2], "day");
            assert_eq!(row[3].parse::<f64>().unwrap(), pred.count());
            assert_eq!(row[5].parse::<f64>().unwrap(), mae);
            assert_eq!(row[6].parse::<f64>().unwrap(), mse);
            pairs.push((pred.count(), gt.count()));

            // The raw argmax renders at full brightness.
            let png = bipath_core::io::read_rgb_png(&pred_dir.join(format!("density{i:06}.png"))).unwrap().plane(0);
            let p = pred.plane();
            let peak = p.max();
            if peak > 0.0 {
                let at = p.data.iter().position(|&v| v == peak).unwrap();
                assert_eq!(png.data[at], 1.0);
                assert_eq!(png.max(), 1.0);
            }
        }
        let rerun = tmp.path().join(format!("rerun{k}"));
        ok(&["predict", "--ckpt", s(&ckpt), "--seq", s(&seq), "--out", s(&rerun)]);
        for i in 1..=2 {
            let name = format!("density{i:06}.raw");
            assert_eq!(fs::read(pred_dir.join(&name)).unwrap(), fs::read(rerun.join(&name)).unwrap());
        }
    }
    let (cmae, _) = count_mae_mse(&pairs).unwrap();
    assert!(cmae.is_finite());
}

#[test]
fn ablate_emits_table() {
    let tmp = TempDir::new().unwrap();
    let data = generate(tmp.path(), 2, 2, 0.0);
    let table = tmp.path().join("ablation.txt");
    let args = [
        "ablate", "--data", s(&data), "--val-sequences", "1", "--out", s(&table), "--set", "width=0.03125", "--set", "crop=32",
        "--set", "steps_per_epoch=1", "--epochs", "1",
    ];
    let out = ok(&args);
    let text = fs::read_to_string(&table).unwrap();
    assert_eq!(String::from_utf8_lossy(&out.stdout), text);
    assert!(text.lines().count() >= 19, "{text}");
}
