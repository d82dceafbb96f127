use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::eval::evaluate;
use super::{Dataset, Result, TrainError};
use crate::augment::{apply_pipeline, SampleGroup};
use crate::density::{count_mae_mse, pixel_mae_mse, rasterize_density, DensityMap};
use crate::flow::FlowMode;
use crate::io::RunConfig;
use crate::model::BiPathModel;
use crate::raster::Plane;
use crate::tensor::{Adam, Tensor};

pub const METRICS_HEADER: &str = "epoch,split,count_mae,count_mse,pixel_mae,pixel_mse,loss";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: &'static str,
    pub count_mae: f64,
    pub count_mse: f64,
    pub pixel_mae: f64,
    pub pixel_mse: f64,
    pub loss: f64,
}

impl MetricsRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch, self.split, self.count_mae, self.count_mse, self.pixel_mae, self.pixel_mse, self.loss
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights with the lowest validation count MAE (the last epoch's without validation data).
    pub best: BiPathModel<f32>,
    pub last: BiPathModel<f32>,
    pub best_epoch: usize,
    pub rows: Vec<MetricsRow>,
    pub step_losses: Vec<f64>,
}

/// Stacks groups into `N×3×H×W` image and flow tensors and an `N×1×H×W`
/// density target. Flow is omitted when `with_flow` is false.
pub fn batch_tensors(
    groups: &[SampleGroup],
    mode: FlowMode,
    sigma: f64,
    with_flow: bool,
) -> Result<(Tensor<f32>, Option<Tensor<f32>>, Tensor<f32>)> {
    let first = groups.first().ok_or(TrainError::Empty("batch"))?;
    let (w, h) = first.dims();
    let n = groups.len();
    let mut img = Vec::with_capacity(n * 3 * w * h);
    let mut flow = Vec::with_capacity(if with_flow { n * 3 * w * h } else { 0 });
    let mut target = Vec::with_capacity(n * w * h);
    for g in groups {
        if g.dims() != (w, h) {
            return Err(TrainError::Config(format!("batch mixes sizes {:?} and {:?}", (w, h), g.dims())));
        }
        img.extend_from_slice(&g.image.data);
        if with_flow {
            for p in g.flow.with_mode_ref(mode).channels() {
                flow.extend_from_slice(&p.data);
            }
        }
        target.extend_from_slice(&rasterize_density(&g.dots, sigma)?.0.data);
    }
    let t = |c: usize, d: Vec<f32>| Tensor::new(vec![n, c, h, w], d).expect("sized per group");
    Ok((t(3, img), with_flow.then(|| t(3, flow)), t(1, target)))
}

fn split_planes(t: &Tensor<f32>, w: usize, h: usize) -> Vec<DensityMap> {
    t.data()
        .chunks(w * h)
        .map(|c| {
            DensityMap(Plane {
                width: w,
                height: h,
                data: c.to_vec(),
            })
        })
        .collect()
}

/// Adam over augmented random batches; validates each epoch on whole frames.
pub fn train(
    run: &RunConfig,
    train: &Dataset,
    val: Option<&Dataset>,
    on_epoch: &mut dyn FnMut(&[MetricsRow]),
) -> Result<TrainOutcome> {
    run.validate()?;
    let groups: Vec<&SampleGroup> = train.groups().collect();
    if groups.is_empty() {
        return Err(TrainError::Empty("no training frames"));
    }
    for g in &groups {
        let (w, h) = g.dims();
        run.augment.validate_for(w, h)?;
    }
    let tc = &run.train;
    let mut model = BiPathModel::<f32>::new(run.model.clone(), tc.seed)?;
    let mut adam = Adam::new(tc.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ run.augment.seed.rotate_left(32));
    let steps = if tc.steps_per_epoch > 0 {
        tc.steps_per_epoch
    } else {
        groups.len().div_ceil(tc.batch_size)
    };
    let with_flow = run.model.flow_enabled;

    let mut rows = Vec::new();
    let mut step_losses = Vec::new();
    let mut best = (f64::INFINITY, model.clone(), 0);
    for epoch in 1..=tc.epochs {
        let mut losses = Vec::with_capacity(steps);
        let mut counts = Vec::new();
        let (mut pmae, mut psq) = (0.0, 0.0);
        for step in 0..steps {
            let batch = (0..tc.batch_size)
                .map(|_| {
                    let g = groups[rng.gen_range(0..groups.len())];
                    apply_pipeline(g, &run.augment, &mut rng).map(|(a, _)| a)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let (img, flow, target) = batch_tensors(&batch, run.model.flow_mode, tc.sigma, with_flow)?;
            adam.config.lr = tc.lr_schedule.lr_at(tc.lr, (epoch - 1) * steps + step, tc.epochs * steps);
            model.params_mut().zero_grad();
            let (loss, pred) = model.accumulate_gradients(img, flow, target.clone())?;
            if !loss.is_finite() {
                return Err(TrainError::NonFinite { epoch, step });
            }
            adam.step(model.params_mut());
            let (w, h) = batch[0].dims();
            for (p, t) in split_planes(&pred, w, h).iter().zip(split_planes(&target, w, h)) {
                counts.push((p.count(), t.count()));
                let (a, r) = pixel_mae_mse(p, &t)?;
                pmae += a;
                psq += r * r;
            }
            losses.push(loss);
            step_losses.push(loss);
        }
        let n = counts.len() as f64;
        let (cmae, cmse) = count_mae_mse(&counts)?;
        let mut epoch_rows = vec![MetricsRow {
            epoch,
            split: "train",
            count_mae: cmae,
            count_mse: cmse,
            pixel_mae: pmae / n,
            pixel_mse: (psq / n).sqrt(),
            loss: losses.iter().sum::<f64>() / losses.len() as f64,
        }];
        let score = match val.filter(|v| !v.is_empty()) {
            Some(v) => {
                let r = evaluate(&model, None, v, tc.sigma)?;
                epoch_rows.push(MetricsRow {
                    epoch,
                    split: "val",
                    count_mae: r.count_mae,
                    count_mse: r.count_mse,
                    pixel_mae: r.pixel_mae,
                    pixel_mse: r.pixel_mse,
                    loss: r.loss,
                });
                r.count_mae
            }
            None => f64::NEG_INFINITY,
        };
        if score < best.0 || (score == f64::NEG_INFINITY) {
            best = (score, model.clone(), epoch);
        }
        on_epoch(&epoch_rows);
        rows.extend(epoch_rows);
    }
    Ok(TrainOutcome {
        best: best.1,
        last: model,
        best_epoch: best.2,
        rows,
        step_losses,
    })
}
