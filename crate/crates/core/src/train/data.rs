use rayon::prelude::*;

use super::{Result, TrainError};
use crate::augment::{SampleGroup, SampleMeta};
use crate::density::DotMap;
use crate::flow::{dis_flow, encode_flow, frame_difference, threshold_filter, DisParams, FlowField, FlowInput, FlowMode};
use crate::io::{RunConfig, SequenceLayout};
use crate::raster::{Plane, RgbImage};
use crate::synthetic::GeneratedSequence;

/// Frames of one sequence, each grouped with its flow input and dots.
#[derive(Clone, Debug)]
pub struct SequenceData {
    pub name: String,
    pub groups: Vec<SampleGroup>,
    /// Scene luminance factor, 1 for ordinary footage.
    pub luminance: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub sequences: Vec<SequenceData>,
}

/// Flow input for every frame. Frame `t` uses the pair `(t, t+1)`; the last
/// frame uses `(T, T-1)`. `cached[t]`, when present, replaces the DIS
/// estimate for the forward pair starting at `t`.
pub fn sequence_flow_inputs(
    frames: &[RgbImage],
    cached: &[Option<FlowField>],
    dis: &DisParams,
    tau: f32,
    mode: FlowMode,
) -> Result<Vec<FlowInput>> {
    let t = frames.len();
    if t < 2 {
        return Err(TrainError::Empty("flow needs at least two frames"));
    }
    (0..t)
        .into_par_iter()
        .map(|i| {
            let j = if i + 1 < t { i + 1 } else { i - 1 };
            let flow = match cached.get(i).and_then(Option::as_ref) {
                Some(f) if j == i + 1 => f.clone(),
                _ => dis_flow(&frames[i].luminance(), &frames[j].luminance(), dis)?,
            };
            let flow = threshold_filter(&flow, tau)?;
            let fsub = frame_difference(&frames[i], &frames[j])?;
            Ok(encode_flow(&flow, &fsub, mode)?)
        })
        .collect()
}

fn blank_flow(w: usize, h: usize, mode: FlowMode) -> FlowInput {
    FlowInput {
        mode,
        su: Plane::new(w, h),
        sv: Plane::new(w, h),
        fsub: Plane::filled(w, h, 0.5),
        norm: 1.0,
    }
}

fn assemble(
    name: String,
    frames: Vec<RgbImage>,
    dots: Vec<DotMap>,
    cached: &[Option<FlowField>],
    luminance: f64,
    run: &RunConfig,
) -> Result<SequenceData> {
    let mode = run.model.flow_mode;
    let flows = if run.model.flow_enabled {
        sequence_flow_inputs(&frames, cached, &run.dis, run.train.tau, mode)?
    } else {
        frames.iter().map(|f| blank_flow(f.width, f.height, mode)).collect()
    };
    let groups = frames
        .into_iter()
        .zip(flows)
        .zip(dots)
        .enumerate()
        .map(|(i, ((image, flow), dots))| {
            SampleGroup::new(
                image,
                flow,
                dots,
                SampleMeta {
                    sequence: name.clone(),
                    frame: i + 1,
                },
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SequenceData {
        name,
        groups,
        luminance,
    })
}

impl Dataset {
    /// Uses DIS flow on the rendered frames, not the generator's exact flow.
    pub fn from_generated(seqs: &[GeneratedSequence], run: &RunConfig) -> Result<Self> {
        let sequences = seqs
            .iter()
            .enumerate()
            .map(|(k, s)| {
                assemble(
                    format!("synthetic{k:03}"),
                    s.frames.clone(),
                    s.dots.clone(),
                    &[],
                    s.spec.luminance as f64,
                    run,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { sequences })
    }

    /// Loads sequences from disk, preferring cached `.flo` files.
    pub fn from_layouts(layouts: &[SequenceLayout], run: &RunConfig) -> Result<Self> {
        let mut sequences = Vec::new();
        for l in layouts {
            let frames = (1..=l.frames).map(|i| l.read_frame(i)).collect::<Result<Vec<_>, _>>()?;
            let dots = (1..=l.frames).map(|i| l.read_dots(i)).collect::<Result<Vec<_>, _>>()?;
            let cached = (1..l.frames).map(|i| l.read_flow(i)).collect::<Result<Vec<_>, _>>()?;
            let name = l
                .dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| l.dir.display().to_string());
            sequences.push(assemble(name, frames, dots, &cached, l.luminance, run)?);
        }
        Ok(Self { sequences })
    }

    pub fn len(&self) -> usize {
        self.sequences.iter().map(|s| s.groups.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn groups(&self) -> impl Iterator<Item = &SampleGroup> {
        self.sequences.iter().flat_map(|s| s.groups.iter())
    }

    /// Mean dot count per frame.
    pub fn mean_count(&self) -> f64 {
        let n = self.len();
        if n == 0 {
            return 0.0;
        }
        self.groups().map(|g| g.dots.len() as f64).sum::<f64>() / n as f64
    }

    /// Moves the last `n_val` whole sequences into a validation set.
    pub fn split_sequences(mut self, n_val: usize) -> (Dataset, Dataset) {
        let keep = self.sequences.len().saturating_sub(n_val);
        let val = self.sequences.split_off(keep);
        (self, Dataset { sequences: val })
    }
}
