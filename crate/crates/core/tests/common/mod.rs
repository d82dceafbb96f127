#![allow(dead_code)]

use bipath_core::model::{AttentionPlacement, BiPathModel, ModelConfig, ModelError};
use bipath_core::tensor::kernels::ConvGeometry;
use bipath_core::tensor::{gradient_check_sampled, ParamStore, Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

pub fn te(e: ModelError) -> TensorError {
    match e {
        ModelError::Tensor(t) => t,
        other => TensorError::InvalidArgument(other.to_string()),
    }
}

/// Rescales every weight to He scale, randomizes biases and sets both gammas.
pub fn energize(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for p in store.iter_mut() {
        let shape = p.value.shape().to_vec();
        if p.name.ends_with("gamma") {
            p.value = Tensor::full(&[1], rng.gen_range(0.3..0.9));
        } else if p.name == "regression.head.bias" {
            // Keeps the final relu mostly active so gradients are not trivially zero.
            p.value = Tensor::full(&shape, 0.5);
        } else if p.name.ends_with("bias") {
            p.value = random(&shape, 0.1, rng);
        } else {
            let fan_in: usize = shape[1..].iter().product();
            p.value = random(&shape, (6.0 / fan_in as f64).sqrt(), rng);
        }
    }
}

/// Max relative gradient error of the full forward pass (w=1/32, 16x16
/// inputs), probing `coords` entries of every input and parameter.
pub fn full_model_error(seed: u64, attention: AttentionPlacement, coords: usize) -> f64 {
    let cfg = ModelConfig {
        attention,
        ..ModelConfig::with_width(1.0 / 32.0)
    };
    let mut model = BiPathModel::<f64>::new(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    energize(model.params_mut(), &mut rng);
    let mut inputs = vec![
        random(&[1, 3, 16, 16], 1.0, &mut rng),
        random(&[1, 3, 16, 16], 1.0, &mut rng),
    ];
    inputs.extend(model.params().iter().map(|p| p.value.clone()));
    let live = {
        let mut tape = Tape::new();
        let vars = model.params().bind(&mut tape).unwrap();
        let x = tape.leaf(inputs[0].clone()).unwrap();
        let f = tape.leaf(inputs[1].clone()).unwrap();
        let y = model.forward(&mut tape, &vars, x, Some(f)).unwrap();
        let d = tape.value(y).data();
        d.iter().filter(|&&v| v > 0.0).count() as f64 / d.len() as f64
    };
    assert!(live > 0.5, "output mostly clipped ({live})");
    gradient_check_sampled(
        |tape: &mut Tape<f64>, v: &[Var]| model.forward(tape, &v[2..], v[0], Some(v[1])).map_err(te),
        &inputs,
        1e-6,
        coords,
        seed,
    )
    .unwrap()
}

/// Direct nested-loop convolution.
pub fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, g: ConvGeometry) -> Vec<f64> {
    let (n, c, h, wd) = x.dims4("x").unwrap();
    let (o, _, kh, kw) = w.dims4("w").unwrap();
    let oh = g.out_dim(h, kh).unwrap();
    let ow = g.out_dim(wd, kw).unwrap();
    let mut out = Vec::with_capacity(n * o * oh * ow);
    for ni in 0..n {
        for oi in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b.data()[oi];
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * g.stride + ky * g.dilation) as isize - g.padding as isize;
                                let ix = (xx * g.stride + kx * g.dilation) as isize - g.padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[((ni * c + ci) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((oi * c + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}
