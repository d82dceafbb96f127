use std::fmt::Write as _;

use rayon::prelude::*;

use super::eval::{evaluate, EvalReport};
use super::trainer::train;
use super::{Dataset, Result};
use crate::flow::FlowMode;
use crate::io::RunConfig;

/// One cell of the flow × gamma × scale sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationSetting {
    pub flow: Option<FlowMode>,
    pub gamma: bool,
    pub scale: Option<(f64, f64)>,
}

impl AblationSetting {
    pub fn name(&self) -> String {
        let flow = self.flow.map_or("image", FlowMode::as_str);
        let gamma = if self.gamma { "gamma" } else { "no-gamma" };
        let scale = self
            .scale
            .map_or_else(|| "no-scale".to_string(), |(a, b)| format!("scale[{a},{b}]"));
        format!("{flow}/{gamma}/{scale}")
    }

    /// `base` with this setting's toggles applied.
    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut run = base.clone();
        run.model.flow_enabled = self.flow.is_some();
        if let Some(m) = self.flow {
            run.model.flow_mode = m;
        }
        if !self.gamma {
            run.augment.gamma_prob = 0.0;
        } else if run.augment.gamma_prob == 0.0 {
            run.augment.gamma_prob = 0.5;
        }
        run.augment.scale_range = self.scale.unwrap_or((1.0, 1.0));
        run
    }
}

/// {image only, cartesian, polar} × {gamma on, off} × {no scale, [0.7,1.2], [0.6,1.8]}.
pub fn ablation_grid() -> Vec<AblationSetting> {
    let mut out = Vec::new();
    for flow in [None, Some(FlowMode::Cartesian), Some(FlowMode::Polar)] {
        for gamma in [true, false] {
            for scale in [None, Some((0.7, 1.2)), Some((0.6, 1.8))] {
                out.push(AblationSetting { flow, gamma, scale });
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub setting: AblationSetting,
    pub best_epoch: usize,
    pub count_mae: f64,
    pub count_mse: f64,
    pub pixel_mae: f64,
    pub pixel_mse: f64,
}

/// Trains and validates every setting; settings run in parallel, each
/// deterministic on its own.
pub fn run_ablation(
    base: &RunConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    settings: &[AblationSetting],
) -> Result<Vec<AblationRow>> {
    settings
        .par_iter()
        .map(|s| {
            let run = s.apply(base);
            let out = train(&run, train_set, Some(val_set), &mut |_| {})?;
            let r = evaluate(&out.best, None, val_set, run.train.sigma)?;
            Ok(AblationRow {
                setting: s.clone(),
                best_epoch: out.best_epoch,
                count_mae: r.count_mae,
                count_mse: r.count_mse,
                pixel_mae: r.pixel_mae,
                pixel_mse: r.pixel_mse,
            })
        })
        .collect()
}

pub fn format_ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "{:<34} {:>5} {:>10} {:>10} {:>11} {:>11}",
        "setting", "epoch", "count_mae", "count_mse", "pixel_mae", "pixel_mse"
    )
    .unwrap();
    for r in rows {
        writeln!(
            s,
            "{:<34} {:>5} {:>10.4} {:>10.4} {:>11.3e} {:>11.3e}",
            r.setting.name(),
            r.best_epoch,
            r.count_mae,
            r.count_mse,
            r.pixel_mae,
            r.pixel_mse
        )
        .unwrap();
    }
    s
}

/// Day-only model versus day + night routing, on day and night validation data.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingReport {
    pub day_only_night: EvalReport,
    pub mixed_night: EvalReport,
    pub day_only_day: EvalReport,
    pub mixed_day: EvalReport,
    pub threshold: f64,
}

/// Trains a day model on `day_train` and a night model on `night_train`,
/// then compares single-model and routed evaluation.
pub fn night_mixing(
    run: &RunConfig,
    day_train: &Dataset,
    night_train: &Dataset,
    day_val: &Dataset,
    night_val: &Dataset,
) -> Result<MixingReport> {
    let (day, night) = rayon::join(
        || train(run, day_train, None, &mut |_| {}),
        || train(run, night_train, None, &mut |_| {}),
    );
    let (day, night) = (day?.best, night?.best);
    let th = run.train.night_threshold;
    let sigma = run.train.sigma;
    Ok(MixingReport {
        day_only_night: evaluate(&day, None, night_val, sigma)?,
        mixed_night: evaluate(&day, Some((&night, th)), night_val, sigma)?,
        day_only_day: evaluate(&day, None, day_val, sigma)?,
        mixed_day: evaluate(&day, Some((&night, th)), day_val, sigma)?,
        threshold: th,
    })
}

pub fn format_mixing_table(r: &MixingReport) -> String {
    let mut s = String::new();
    writeln!(s, "{:<22} {:>14} {:>14} {:>10}", "model", "night_mae", "day_mae", "routed").unwrap();
    let routed = |e: &EvalReport| e.frames.iter().filter(|f| f.night_model).count();
    for (name, n, d) in [
        ("day-only", &r.day_only_night, &r.day_only_day),
        ("day+night mix", &r.mixed_night, &r.mixed_day),
    ] {
        writeln!(
            s,
            "{:<22} {:>14.4} {:>14.4} {:>10}",
            name,
            n.count_mae,
            d.count_mae,
            routed(n) + routed(d)
        )
        .unwrap();
    }
    s
}
