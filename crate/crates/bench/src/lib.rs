//! Fixed inputs shared by the benchmarks.

use bipath_core::raster::RgbImage;
use bipath_core::synthetic::{generate_sequence, SceneSpec};
use bipath_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Two consecutive frames of a default synthetic scene at `size`×`size`.
pub fn frame_pair(size: usize) -> (RgbImage, RgbImage) {
    let seq = generate_sequence(&SceneSpec {
        width: size,
        height: size,
        frames: 2,
        n_persons: size / 4,
        ..SceneSpec::default()
    })
    .expect("valid scene");
    let mut it = seq.frames.into_iter();
    (it.next().unwrap(), it.next().unwrap())
}
