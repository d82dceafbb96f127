use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::{ModelConfig, ENCODER_STRIDES};
use crate::tensor::kernels::ConvGeometry;
use crate::tensor::{ParamStore, Result, Scalar, Tape, Tensor, Var};

/// A conv layer whose weight and bias live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: usize,
    pub bias: usize,
    pub geom: ConvGeometry,
    pub relu: bool,
}

pub(crate) fn normal_tensor<T: Scalar, R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    let normal = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(normal.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("sized from shape")
}

impl Conv {
    /// Weight init: `std` normal, or He-normal (`sqrt(2 / fan_in)`) when `None`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn register<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        geom: ConvGeometry,
        relu: bool,
        std: Option<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        let std = std.unwrap_or_else(|| (2.0 / (cin * k * k) as f64).sqrt());
        let weight = store.add(
            format!("{name}.weight"),
            normal_tensor(&[cout, cin, k, k], std, rng),
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]))?;
        Ok(Self {
            weight,
            bias,
            geom,
            relu,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &[Var], x: Var) -> Result<Var> {
        let y = tape.conv2d(x, params[self.weight], params[self.bias], self.geom)?;
        if self.relu {
            tape.relu(y)
        } else {
            Ok(y)
        }
    }
}

fn run<T: Scalar>(convs: &[Conv], tape: &mut Tape<T>, params: &[Var], mut x: Var) -> Result<Var> {
    for c in convs {
        x = c.forward(tape, params, x)?;
    }
    Ok(x)
}

/// Stem plus three stages, two 3x3 conv+relu each, total stride 8.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub convs: Vec<Conv>,
}

impl Encoder {
    pub(crate) fn register<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut convs = Vec::new();
        let mut cin = 3;
        for (s, (&c, &stride)) in cfg.encoder_channels().iter().zip(&ENCODER_STRIDES).enumerate() {
            let g = ConvGeometry::new(stride, 1, 1);
            convs.push(Conv::register(store, &format!("{prefix}.enc{s}a"), cin, c, 3, g, true, None, rng)?);
            let g = ConvGeometry::new(1, 1, 1);
            convs.push(Conv::register(store, &format!("{prefix}.enc{s}b"), c, c, 3, g, true, None, rng)?);
            cin = c;
        }
        Ok(Self { convs })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &[Var], x: Var) -> Result<Var> {
        run(&self.convs, tape, params, x)
    }
}

/// Six 3x3 dilation-2 conv+relu layers; spatial size preserved.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub convs: Vec<Conv>,
}

impl Decoder {
    pub(crate) fn register<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut convs = Vec::new();
        let mut cin = cfg.encoder_channels()[3];
        let g = ConvGeometry::new(1, 2, 2);
        for (k, &c) in cfg.decoder_channels().iter().enumerate() {
            convs.push(Conv::register(
                store,
                &format!("{prefix}.dec{k}"),
                cin,
                c,
                3,
                g,
                true,
                cfg.conv_std(),
                rng,
            )?);
            cin = c;
        }
        Ok(Self { convs })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &[Var], x: Var) -> Result<Var> {
        run(&self.convs, tape, params, x)
    }
}
