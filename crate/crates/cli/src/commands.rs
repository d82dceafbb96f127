use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use bipath_core::density::DensityMap;
use bipath_core::flow::{dis_flow, encode_flow, frame_difference, threshold_filter, FlowField, FlowMode};
use bipath_core::io::{
    apply_config_str, encode_planes, load_checkpoint, parse_config, parse_scene_spec, read_bytes, save_checkpoint,
    write_atomic, write_density, write_density_png, write_flo, RunConfig, SequenceLayout,
};
use bipath_core::model::BiPathModel;
use bipath_core::synthetic::{generate_sequence, SceneSpec, DEFAULT_NIGHT_LUMINANCE};
use bipath_core::train::{
    ablation_grid, evaluate, format_ablation_table, predict_group, run_ablation, train as train_model, Dataset,
    METRICS_HEADER,
};
use rayon::prelude::*;

use crate::meta::{MetricsJson, RunMetadata};
use crate::{AblateArgs, EvalArgs, FlowArgs, GenArgs, ModelOverrides, PredictArgs, TrainArgs};

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

/// Sequence dirs named directly, or the sorted sequence subdirectories of each path.
fn collect_sequences(paths: &[PathBuf]) -> Result<Vec<SequenceLayout>> {
    let mut out = Vec::new();
    for p in paths {
        if SequenceLayout::manifest_path(p).is_file() {
            out.push(SequenceLayout::open(p)?);
            continue;
        }
        let mut subs: Vec<PathBuf> = fs::read_dir(p)
            .with_context(|| format!("reading {}", p.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|d| SequenceLayout::manifest_path(d).is_file())
            .collect();
        subs.sort();
        ensure!(!subs.is_empty(), "{} holds no sequences", p.display());
        for d in subs {
            out.push(SequenceLayout::open(&d)?);
        }
    }
    Ok(out)
}

fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    Ok(match path {
        Some(p) => parse_config(p).with_context(|| format!("config {}", p.display()))?,
        None => RunConfig::default(),
    })
}

fn apply_overrides(base: RunConfig, o: &ModelOverrides) -> Result<RunConfig> {
    let mut text = String::new();
    if let Some(e) = o.epochs {
        text.push_str(&format!("epochs = {e}\n"));
    }
    if o.no_flow {
        text.push_str("flow_enabled = false\n");
    }
    if o.no_gamma {
        text.push_str("gamma_prob = 0\n");
    }
    if let Some(s) = &o.scale_range {
        text.push_str(&format!("scale_range = {s}\n"));
    }
    if let Some(a) = o.attention {
        let a: bipath_core::model::AttentionPlacement = a.into();
        text.push_str(&format!("attention = {}\n", a.as_str()));
    }
    if let Some(s) = o.seed {
        text.push_str(&format!("seed = {s}\n"));
    }
    for kv in &o.set {
        text.push_str(kv);
        text.push('\n');
    }
    let cfg = apply_config_str(base, &text).context("command-line overrides")?;
    cfg.validate()?;
    Ok(cfg)
}

/// Rebuilds a model from `<ckpt>` and its `<ckpt>.cfg` run configuration.
fn load_model(ckpt: &Path) -> Result<(BiPathModel<f32>, RunConfig)> {
    let cfg_path = sidecar(ckpt, ".cfg");
    let run = parse_config(&cfg_path).with_context(|| format!("checkpoint config {}", cfg_path.display()))?;
    let mut model = BiPathModel::<f32>::new(run.model.clone(), 0)?;
    load_checkpoint(&mut model, ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    Ok((model, run))
}

fn newer_than(target: &Path, sources: &[PathBuf]) -> bool {
    let Ok(t) = fs::metadata(target).and_then(|m| m.modified()) else {
        return false;
    };
    sources
        .iter()
        .all(|s| fs::metadata(s).and_then(|m| m.modified()).map(|m| m <= t).unwrap_or(false))
}

/// Writes `bytes` unless `path` already holds exactly them. Returns whether it wrote.
fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<bool> {
    if path.is_file() && read_bytes(path)? == bytes {
        return Ok(false);
    }
    write_atomic(path, bytes)?;
    Ok(true)
}

pub fn flow(a: FlowArgs) -> Result<()> {
    let crate::FlowType::Dis = a.flow_type;
    let run = load_run_config(a.config.as_deref())?;
    let tau = a.tau.unwrap_or(run.train.tau);
    ensure!(tau >= 0.0, "--tau must be >= 0");
    let mode: FlowMode = a.encode.into();
    let meta = RunMetadata::new("flow", run.to_text(), run.train.seed);
    let mut written = 0usize;
    for seq in &a.seqs {
        let l = SequenceLayout::open(seq)?;
        ensure!(l.frames >= 2, "{} has a single frame; flow needs pairs", seq.display());
        let frames = (1..=l.frames).map(|i| l.read_frame(i)).collect::<Result<Vec<_>, _>>()?;
        let flows: Vec<(FlowField, bool)> = (1..l.frames)
            .into_par_iter()
            .map(|i| -> Result<(FlowField, bool)> {
                let p = l.flow_path(i);
                if !a.force && newer_than(&p, &[l.frame_path(i), l.frame_path(i + 1)]) {
                    return Ok((bipath_core::io::read_flo(&p)?, false));
                }
                let f = dis_flow(&frames[i - 1].luminance(), &frames[i].luminance(), &run.dis)?;
                write_flo(&p, &f)?;
                Ok((f, true))
            })
            .collect::<Result<_>>()?;
        written += flows.iter().filter(|(_, w)| *w).count();
        let t = l.frames;
        let back = dis_flow(&frames[t - 1].luminance(), &frames[t - 2].luminance(), &run.dis)?;
        for i in 0..t {
            let (f, j) = if i + 1 < t { (&flows[i].0, i + 1) } else { (&back, i - 1) };
            let f = threshold_filter(f, tau)?;
            let enc = encode_flow(&f, &frame_difference(&frames[i], &frames[j])?, mode)?;
            if write_if_changed(&l.flow_input_path(i + 1), &encode_planes(&enc.channels())?)? {
                written += 1;
            }
        }
    }
    println!("flow: {written} file(s) written");
    if written > 0 {
        let first = a.seqs.first().expect("clap requires one");
        meta.finish(&first.join("flow.run.json"))?;
    }
    Ok(())
}

pub fn gen_synthetic(a: GenArgs) -> Result<()> {
    ensure!(a.count >= 1, "--count must be >= 1");
    ensure!((0.0..=1.0).contains(&a.night_fraction), "--night-fraction must lie in [0, 1]");
    let mut spec = match &a.spec {
        Some(p) => parse_scene_spec(p).with_context(|| format!("spec {}", p.display()))?,
        None => SceneSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    spec.validate()?;
    let n_night = (a.count as f64 * a.night_fraction).round() as usize;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let meta = RunMetadata::new(
        "gen-synthetic",
        format!("{spec:?} count={} night_fraction={}", a.count, a.night_fraction),
        spec.seed,
    );
    (0..a.count).into_par_iter().try_for_each(|k| -> Result<()> {
        let mut s = spec.clone();
        s.seed = spec.seed.wrapping_add(k as u64);
        s.background_seed = spec.background_seed.wrapping_add(k as u64);
        if k < n_night {
            s.luminance = s.luminance.min(DEFAULT_NIGHT_LUMINANCE);
        }
        let g = generate_sequence(&s)?;
        let name = format!("seq{:04}", k + 1);
        let tmp = a.out.join(format!(".{name}.partial"));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        SequenceLayout::create(&tmp, &g.frames, &g.dots, Some(&g.flows), s.luminance as f64)?;
        let dst = a.out.join(&name);
        if dst.exists() {
            fs::remove_dir_all(&dst)?;
        }
        fs::rename(&tmp, &dst)?;
        Ok(())
    })?;
    println!("gen-synthetic: {} sequence(s), {} night", a.count, n_night);
    meta.finish(&a.out.join("run.json"))
}

fn split_val(mut layouts: Vec<SequenceLayout>, explicit: Vec<SequenceLayout>, n: Option<usize>) -> (Vec<SequenceLayout>, Vec<SequenceLayout>) {
    if !explicit.is_empty() {
        return (layouts, explicit);
    }
    let default = if layouts.len() >= 2 { (layouts.len() / 10).max(1) } else { 0 };
    let n = n.unwrap_or(default).min(layouts.len().saturating_sub(1));
    let val = layouts.split_off(layouts.len() - n);
    (layouts, val)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let run = apply_overrides(load_run_config(a.model.config.as_deref())?, &a.model)?;
    let layouts = collect_sequences(&a.data)?;
    let explicit = if a.val.is_empty() { Vec::new() } else { collect_sequences(&a.val)? };
    let (tr, va) = split_val(layouts, explicit, a.val_sequences);
    ensure!(!tr.is_empty(), "no training sequences");
    let train_set = Dataset::from_layouts(&tr, &run)?;
    let val_set = Dataset::from_layouts(&va, &run)?;

    let metrics_path = a.metrics.clone().unwrap_or_else(|| sidecar(&a.out, ".metrics.csv"));
    let fresh = !metrics_path.is_file()
        || fs::read_to_string(&metrics_path)?.lines().next() != Some(METRICS_HEADER);
    let mut csv = fs::OpenOptions::new()
        .create(true)
        .append(!fresh)
        .write(true)
        .truncate(fresh)
        .open(&metrics_path)
        .with_context(|| format!("opening {}", metrics_path.display()))?;
    if fresh {
        writeln!(csv, "{METRICS_HEADER}")?;
    }
    let mut meta = RunMetadata::new("train", run.to_text(), run.train.seed);
    let mut io_err = None;
    let outcome = train_model(&run, &train_set, (!val_set.is_empty()).then_some(&val_set), &mut |rows| {
        for r in rows {
            if let Err(e) = writeln!(csv, "{}", r.csv()) {
                io_err.get_or_insert(e);
            }
            eprintln!("epoch {} {}: loss {:.4e} count_mae {:.3}", r.epoch, r.split, r.loss, r.count_mae);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e).context("writing metrics");
    }
    csv.flush()?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_checkpoint(&outcome.best, &a.out)?;
    write_atomic(&sidecar(&a.out, ".cfg"), run.to_text().as_bytes())?;
    meta.metrics = outcome.rows.iter().map(MetricsJson::from).collect();
    println!("train: best epoch {} saved to {}", outcome.best_epoch, a.out.display());
    meta.finish(&sidecar(&a.out, ".run.json"))
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let (day, mut run) = load_model(&a.ckpt)?;
    let night = a.ckpt_night.as_deref().map(load_model).transpose()?;
    if night.as_ref().is_some_and(|(m, _)| m.config().flow_enabled) {
        run.model.flow_enabled = true;
    }
    let threshold = a.night_threshold.unwrap_or(run.train.night_threshold);
    ensure!(threshold >= 0.0, "--night-threshold must be >= 0");
    let data = Dataset::from_layouts(&collect_sequences(&a.data)?, &run)?;
    ensure!(!data.is_empty(), "no frames to evaluate");
    let meta = RunMetadata::new("eval", run.to_text(), run.train.seed);
    let report = evaluate(&day, night.as_ref().map(|(m, _)| (m, threshold)), &data, run.train.sigma)?;

    let mut text = String::from("sequence,frame,model,pred_count,gt_count,pixel_mae,pixel_mse\n");
    for f in &report.frames {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            f.sequence,
            f.frame,
            if f.night_model { "night" } else { "day" },
            f.pred_count,
            f.gt_count,
            f.pixel_mae,
            f.pixel_mse
        ));
    }
    let out = a.out.unwrap_or_else(|| sidecar(&a.ckpt, ".eval.csv"));
    write_atomic(&out, text.as_bytes())?;
    println!("count_mae,count_mse,pixel_mae,pixel_mse");
    println!("{},{},{},{}", report.count_mae, report.count_mse, report.pixel_mae, report.pixel_mse);
    meta.finish(&sidecar(&out, ".run.json"))
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let (model, run) = load_model(&a.ckpt)?;
    let layout = SequenceLayout::open(&a.seq)?;
    if layout.frames < 2 && run.model.flow_enabled {
        bail!("{} has a single frame; the flow branch needs pairs", a.seq.display());
    }
    let data = Dataset::from_layouts(std::slice::from_ref(&layout), &run)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let meta = RunMetadata::new("predict", run.to_text(), run.train.seed);
    let groups: Vec<_> = data.groups().collect();
    let maps: Vec<DensityMap> = groups
        .par_iter()
        .map(|g| predict_group(&model, g).map_err(anyhow::Error::from))
        .collect::<Result<_>>()?;
    let mut counts = String::from("frame,count,gt_count\n");
    for (g, m) in groups.iter().zip(&maps) {
        let i = g.meta.frame;
        write_density(&a.out.join(format!("density{i:06}.raw")), m)?;
        write_density_png(&a.out.join(format!("density{i:06}.png")), m)?;
        counts.push_str(&format!("{i},{},{}\n", m.count(), g.dots.len()));
    }
    write_atomic(&a.out.join("counts.csv"), counts.as_bytes())?;
    println!("predict: {} frame(s) written to {}", maps.len(), a.out.display());
    meta.finish(&a.out.join("run.json"))
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    let mut run = apply_overrides(load_run_config(a.model.config.as_deref())?, &a.model)?;
    // Datasets always carry flow; image-only settings ignore it.
    run.model.flow_enabled = true;
    let (tr, va) = split_val(collect_sequences(&a.data)?, Vec::new(), a.val_sequences);
    ensure!(!tr.is_empty() && !va.is_empty(), "ablation needs training and validation sequences");
    let train_set = Dataset::from_layouts(&tr, &run)?;
    let val_set = Dataset::from_layouts(&va, &run)?;
    let meta = RunMetadata::new("ablate", run.to_text(), run.train.seed);
    let rows = run_ablation(&run, &train_set, &val_set, &ablation_grid())?;
    let table = format_ablation_table(&rows);
    print!("{table}");
    write_atomic(&a.out, table.as_bytes())?;
    eprintln!("ablate: {} setting(s)", rows.len());
    meta.finish(&sidecar(&a.out, ".run.json"))
}
