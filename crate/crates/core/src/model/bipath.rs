use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::attention::{cam_forward, sam_forward, SamParams};
use super::config::{AttentionPlacement, ModelConfig};
use super::layers::{Conv, Decoder, Encoder};
use super::{ModelError, Result};
use crate::density::DensityMap;
use crate::flow::FlowInput;
use crate::raster::{Plane, RgbImage};
use crate::tensor::kernels::ConvGeometry;
use crate::tensor::{ParamStore, Scalar, Tape, Tensor, TensorError, Var};

#[derive(Clone, Debug)]
struct Stream {
    encoder: Encoder,
    decoder: Decoder,
}

impl Stream {
    fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: &ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            encoder: Encoder::register(store, prefix, cfg, rng)?,
            decoder: Decoder::register(store, prefix, cfg, rng)?,
        })
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &[Var], x: Var) -> Result<Var> {
        let f = self.encoder.forward(tape, params, x)?;
        Ok(self.decoder.forward(tape, params, f)?)
    }
}

/// Image and flow streams, attention, and regression head over one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct BiPathModel<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    image: Stream,
    flow: Option<Stream>,
    sam: SamParams,
    cam_gamma: usize,
    regression: Conv,
    head: Conv,
}

impl<T: Scalar> BiPathModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<T>::new();
        let std = config.conv_std();
        let image = Stream::register(&mut store, "image", &config, &mut rng)?;
        let flow = if config.flow_enabled {
            Some(Stream::register(&mut store, "flow", &config, &mut rng)?)
        } else {
            None
        };
        let sam_channels = match (config.flow_enabled, config.attention) {
            (true, AttentionPlacement::PerStream) => config.stream_channels(),
            _ => config.fused_channels(),
        };
        let sam = SamParams::register(&mut store, "sam", sam_channels, std, &mut rng)?;
        let cam_gamma = store.add("cam.gamma", Tensor::zeros(&[1]))?;
        let r = config.regression_channels();
        let regression = Conv::register(
            &mut store,
            "regression.conv",
            config.regression_input_channels(),
            r,
            3,
            ConvGeometry::new(1, 2, 2),
            true,
            std,
            &mut rng,
        )?;
        let head = Conv::register(
            &mut store,
            "regression.head",
            r,
            1,
            1,
            ConvGeometry::new(1, 0, 1),
            true,
            Some(config.init_std),
            &mut rng,
        )?;
        // Its input is post-relu, so nonnegative weights keep the output relu live.
        let hw = &mut store.get_mut(head.weight).value;
        *hw = hw.map(|v| v.abs());
        Ok(Self {
            config,
            params: store,
            image,
            flow,
            sam,
            cam_gamma,
            regression,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn sam(&self) -> &SamParams {
        &self.sam
    }

    pub fn check_inputs(&self, image: &[usize], flow: Option<&[usize]>) -> Result<()> {
        if image.len() != 4 || image[1] != 3 {
            return Err(ModelError::Channels {
                expected: 3,
                got: image.get(1).copied().unwrap_or(0),
            });
        }
        let (h, w) = (image[2], image[3]);
        if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
            return Err(ModelError::NotDivisible { width: w, height: h });
        }
        if self.flow.is_some() {
            match flow {
                Some(f) if f == image => {}
                Some(f) => return Err(ModelError::InputMismatch(image.to_vec(), f.to_vec())),
                None => return Err(ModelError::Config("flow branch enabled but no flow input".into())),
            }
        }
        Ok(())
    }

    /// Records the forward pass on `tape`; `params` are the vars from
    /// binding [`BiPathModel::params`]. Returns an `N×1×H×W` density.
    /// `flow` is ignored when the flow branch is disabled.
    pub fn forward(&self, tape: &mut Tape<T>, params: &[Var], image: Var, flow: Option<Var>) -> Result<Var> {
        let flow_shape = flow.map(|f| tape.value(f).shape().to_vec());
        self.check_inputs(tape.value(image).shape(), flow_shape.as_deref())?;
        if params.len() != self.params.len() {
            return Err(ModelError::Config(format!(
                "expected {} parameter vars, got {}",
                self.params.len(),
                params.len()
            )));
        }
        let (image, flow) = if self.config.input_mean == 0.0 {
            (image, flow)
        } else {
            let c = -self.config.input_mean;
            (tape.offset(image, c)?, flow.map(|f| tape.offset(f, c)).transpose()?)
        };
        let fi = self.image.forward(tape, params, image)?;
        let fused = match (&self.flow, flow) {
            (Some(stream), Some(f)) => {
                let ff = stream.forward(tape, params, f)?;
                if self.config.attention == AttentionPlacement::PerStream {
                    let s = sam_forward(tape, params, &self.sam, fi)?;
                    let c = cam_forward(tape, params[self.cam_gamma], ff)?;
                    tape.concat_channels(&[s.y, c.y])?
                } else {
                    let cat = tape.concat_channels(&[fi, ff])?;
                    self.attend(tape, params, cat)?
                }
            }
            _ => self.attend(tape, params, fi)?,
        };
        let r = self.regression.forward(tape, params, fused)?;
        let d = self.head.forward(tape, params, r)?;
        let up = tape.bilinear_upsample(d, 8)?;
        if self.config.output_scale == 1.0 {
            Ok(up)
        } else {
            Ok(tape.scale(up, self.config.output_scale)?)
        }
    }

    fn attend(&self, tape: &mut Tape<T>, params: &[Var], x: Var) -> Result<Var, TensorError> {
        let s = sam_forward(tape, params, &self.sam, x)?;
        let c = cam_forward(tape, params[self.cam_gamma], x)?;
        tape.concat_channels(&[s.y, c.y])
    }

    fn input_tensors(&self, image: &RgbImage, flow: Option<&FlowInput>) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        let flow = match (&self.flow, flow) {
            (Some(_), Some(f)) => {
                if f.dims() != image.dims() {
                    return Err(ModelError::InputMismatch(
                        vec![image.height, image.width],
                        vec![f.dims().1, f.dims().0],
                    ));
                }
                Some(f.with_mode_ref(self.config.flow_mode).to_tensor())
            }
            _ => None,
        };
        Ok((image.to_tensor(), flow))
    }

    /// Density map for one frame.
    pub fn predict(&self, image: &RgbImage, flow: Option<&FlowInput>) -> Result<DensityMap> {
        let (img, fl) = self.input_tensors(image, flow)?;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape)?;
        let x = tape.leaf(img)?;
        let f = fl.map(|t| tape.leaf(t)).transpose()?;
        let y = self.forward(&mut tape, &vars, x, f)?;
        let out = tape.value(y);
        Ok(DensityMap(Plane {
            width: image.width,
            height: image.height,
            data: out.data().iter().map(|v| v.as_f64() as f32).collect(),
        }))
    }

    /// MSE loss of a batch against `target` (`N×1×H×W`); adds the gradient
    /// into every `Param::grad` and returns the loss and the prediction.
    pub fn accumulate_gradients(
        &mut self,
        image: Tensor<T>,
        flow: Option<Tensor<T>>,
        target: Tensor<T>,
    ) -> Result<(f64, Tensor<T>)> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape)?;
        let x = tape.leaf(image)?;
        let f = flow.map(|t| tape.leaf(t)).transpose()?;
        let t = tape.leaf(target)?;
        let y = self.forward(&mut tape, &vars, x, f)?;
        let l = tape.mse(y, t)?;
        let loss = tape.value(l).data()[0].as_f64();
        let grads = tape.backward(l)?;
        self.params.accumulate(&grads, &vars);
        Ok((loss, tape.value(y).clone()))
    }

    /// Loss without gradients.
    pub fn evaluate_loss(&self, image: Tensor<T>, flow: Option<Tensor<T>>, target: Tensor<T>) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape)?;
        let x = tape.leaf(image)?;
        let f = flow.map(|t| tape.leaf(t)).transpose()?;
        let t = tape.leaf(target)?;
        let y = self.forward(&mut tape, &vars, x, f)?;
        let l = tape.mse(y, t)?;
        Ok(tape.value(l).data()[0].as_f64())
    }
}

/// Mean squared pixel error.
pub fn loss(pred: &DensityMap, gt: &DensityMap) -> Result<f64> {
    if pred.dims() != gt.dims() {
        let (a, b) = (pred.dims(), gt.dims());
        return Err(ModelError::InputMismatch(vec![a.1, a.0], vec![b.1, b.0]));
    }
    let n = pred.0.data.len().max(1) as f64;
    Ok(pred
        .0
        .data
        .iter()
        .zip(&gt.0.data)
        .map(|(&p, &g)| {
            let d = p as f64 - g as f64;
            d * d
        })
        .sum::<f64>()
        / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn fresh_model_matches_attention_free_path() {
        let model = BiPathModel::<f32>::new(ModelConfig::with_width(1.0 / 16.0), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = Tensor::from_fn(&[1, 3, 32, 32], |_| rng.gen::<f32>());
        let flow = Tensor::from_fn(&[1, 3, 32, 32], |_| rng.gen::<f32>());

        let mut tape = Tape::new();
        let vars = model.params.bind(&mut tape).unwrap();
        let x = tape.leaf(img.clone()).unwrap();
        let f = tape.leaf(flow.clone()).unwrap();
        let full = model.forward(&mut tape, &vars, x, Some(f)).unwrap();

        let mut bare = Tape::new();
        let vars = model.params.bind(&mut bare).unwrap();
        let m = -model.config.input_mean;
        let x = bare.leaf(img).unwrap();
        let x = bare.offset(x, m).unwrap();
        let f = bare.leaf(flow).unwrap();
        let f = bare.offset(f, m).unwrap();
        let fi = model.image.forward(&mut bare, &vars, x).unwrap();
        let ff = model.flow.as_ref().unwrap().forward(&mut bare, &vars, f).unwrap();
        let cat = bare.concat_channels(&[fi, ff]).unwrap();
        let cat = bare.concat_channels(&[cat, cat]).unwrap();
        let r = model.regression.forward(&mut bare, &vars, cat).unwrap();
        let d = model.head.forward(&mut bare, &vars, r).unwrap();
        let y = bare.bilinear_upsample(d, 8).unwrap();
        assert_eq!(tape.value(full), bare.value(y));
    }
}
