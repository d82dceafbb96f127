use rayon::prelude::*;

use super::{Dataset, Result, TrainError};
use crate::augment::SampleGroup;
use crate::density::{count_mae_mse, pixel_mae_mse, rasterize_density, DensityMap};
use crate::model::BiPathModel;

#[derive(Clone, Debug, PartialEq)]
pub struct FrameResult {
    pub sequence: String,
    pub frame: usize,
    pub pred_count: f64,
    pub gt_count: f64,
    pub pixel_mae: f64,
    pub pixel_mse: f64,
    pub loss: f64,
    pub night_model: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub frames: Vec<FrameResult>,
    pub count_mae: f64,
    pub count_mse: f64,
    /// Mean over frames of the per-frame pixel MAE.
    pub pixel_mae: f64,
    /// Root of the mean per-frame squared pixel error.
    pub pixel_mse: f64,
    pub loss: f64,
}

impl EvalReport {
    pub fn from_frames(frames: Vec<FrameResult>) -> Result<Self> {
        if frames.is_empty() {
            return Err(TrainError::Empty("no frames to evaluate"));
        }
        let pairs: Vec<_> = frames.iter().map(|f| (f.pred_count, f.gt_count)).collect();
        let (count_mae, count_mse) = count_mae_mse(&pairs)?;
        let n = frames.len() as f64;
        Ok(Self {
            count_mae,
            count_mse,
            pixel_mae: frames.iter().map(|f| f.pixel_mae).sum::<f64>() / n,
            pixel_mse: (frames.iter().map(|f| f.pixel_mse * f.pixel_mse).sum::<f64>() / n).sqrt(),
            loss: frames.iter().map(|f| f.loss).sum::<f64>() / n,
            frames,
        })
    }
}

pub fn predict_group(model: &BiPathModel<f32>, g: &SampleGroup) -> Result<DensityMap> {
    Ok(model.predict(&g.image, Some(&g.flow))?)
}

/// Scores every frame at full size. With `night = Some((model, l))`, frames
/// whose mean luminance is below `l` are predicted by the night model.
pub fn evaluate(
    day: &BiPathModel<f32>,
    night: Option<(&BiPathModel<f32>, f64)>,
    data: &Dataset,
    sigma: f64,
) -> Result<EvalReport> {
    let groups: Vec<&SampleGroup> = data.groups().collect();
    let frames = groups
        .par_iter()
        .map(|g| {
            let routed = night.filter(|(_, l)| g.image.luminance().mean() < *l);
            let model = routed.map(|(m, _)| m).unwrap_or(day);
            let pred = predict_group(model, g)?;
            let gt = rasterize_density(&g.dots, sigma)?;
            let (mae, rms) = pixel_mae_mse(&pred, &gt)?;
            Ok(FrameResult {
                sequence: g.meta.sequence.clone(),
                frame: g.meta.frame,
                pred_count: pred.count(),
                gt_count: g.dots.len() as f64,
                pixel_mae: mae,
                pixel_mse: rms,
                loss: rms * rms,
                night_model: routed.is_some(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_frames(frames)
}

/// Count MAE and MSE of always predicting `mean` people.
pub fn mean_baseline(data: &Dataset, mean: f64) -> Result<(f64, f64)> {
    let pairs: Vec<_> = data.groups().map(|g| (mean, g.dots.len() as f64)).collect();
    Ok(count_mae_mse(&pairs)?)
}
