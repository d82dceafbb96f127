//! Property tests for the module invariants.

mod common;

use bipath_core::augment::{apply_pipeline, scale_coord, AugmentConfig, SampleGroup, SampleMeta};
use bipath_core::density::{count, pixel_mae_mse, rasterize_density, DensityMap, DotMap};
use bipath_core::flow::{encode_flow, threshold_filter, FlowField, FlowMode};
use bipath_core::io::{decode_density, decode_flo, decode_planes, encode_density, encode_flo, encode_planes};
use bipath_core::model::{BiPathModel, ModelConfig};
use bipath_core::raster::{Plane, RgbImage};
use bipath_core::synthetic::{generate_sequence, SceneSpec};
use bipath_core::tensor::kernels::{concat_channels, conv2d, slice_channels, ConvGeometry};
use bipath_core::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::conv_oracle;

fn plane(w: usize, h: usize, rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> Plane {
    Plane::from_fn(w, h, |_, _| rng.gen_range(lo..hi))
}

fn flow_field(w: usize, h: usize, rng: &mut ChaCha8Rng) -> FlowField {
    FlowField {
        u: plane(w, h, rng, -8.0, 8.0),
        v: plane(w, h, rng, -8.0, 8.0),
    }
}

fn group(w: usize, h: usize, n_dots: usize, rng: &mut ChaCha8Rng) -> SampleGroup {
    let image = RgbImage::from_planes([plane(w, h, rng, 0.0, 1.0), plane(w, h, rng, 0.0, 1.0), plane(w, h, rng, 0.0, 1.0)]);
    let flow = encode_flow(&flow_field(w, h, rng), &plane(w, h, rng, 0.0, 1.0), FlowMode::Polar).unwrap();
    let pts: Vec<(f64, f64)> = (0..n_dots)
        .map(|_| (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64)))
        .collect();
    SampleGroup::new(image, flow, DotMap::new(w, h, pts).unwrap(), SampleMeta::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn conv2d_matches_direct_sum(
        n in 1usize..3, c in 1usize..4, o in 1usize..4,
        h in 1usize..7, w in 1usize..7, k in 1usize..4,
        stride in 1usize..3, padding in 0usize..3, dilation in 1usize..3,
        seed in any::<u64>(),
    ) {
        let g = ConvGeometry::new(stride, padding, dilation);
        prop_assume!(g.out_dim(h, k).is_some() && g.out_dim(w, k).is_some());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = common::random(&[n, c, h, w], 1.0, &mut rng);
        let wt = common::random(&[o, c, k, k], 1.0, &mut rng);
        let b = common::random(&[o], 1.0, &mut rng);
        let got = conv2d(&x, &wt, &b, g).unwrap();
        let want = conv_oracle(&x, &wt, &b, g);
        for (a, e) in got.data().iter().zip(&want) {
            prop_assert!((a - e).abs() <= 1e-12 * (1.0 + e.abs()));
        }
    }

    #[test]
    fn concat_then_slice_is_bit_exact(channels in proptest::collection::vec(1usize..4, 1..4), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parts: Vec<Tensor<f64>> = channels.iter().map(|&c| common::random(&[2, c, 3, 2], 5.0, &mut rng)).collect();
        let cat = concat_channels(&parts.iter().collect::<Vec<_>>()).unwrap();
        let mut start = 0;
        for p in &parts {
            let c = p.shape()[1];
            prop_assert_eq!(&slice_channels(&cat, start, c).unwrap(), p);
            start += c;
        }
    }

    #[test]
    fn threshold_filter_is_idempotent(w in 1usize..12, h in 1usize..12, tau in 0.0f32..10.0, seed in any::<u64>()) {
        let f = flow_field(w, h, &mut ChaCha8Rng::seed_from_u64(seed));
        let once = threshold_filter(&f, tau).unwrap();
        prop_assert_eq!(threshold_filter(&once, tau).unwrap(), once);
    }

    #[test]
    fn polar_encoding_decodes(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = flow_field(w, h, &mut rng);
        let fi = encode_flow(&f, &Plane::filled(w, h, 0.5), FlowMode::Polar).unwrap();
        let [fh, fs, _] = fi.channels();
        for i in 0..w * h {
            let ang = fh.data[i] as f64 * std::f64::consts::TAU;
            let mag = fs.data[i] as f64 * fi.norm as f64;
            prop_assert!((mag * ang.cos() - f.u.data[i] as f64).abs() < 1e-5 * (1.0 + fi.norm as f64));
            prop_assert!((mag * ang.sin() - f.v.data[i] as f64).abs() < 1e-5 * (1.0 + fi.norm as f64));
        }
    }

    #[test]
    fn density_translation_covariance(
        x in 20.0f64..30.0, y in 20.0f64..30.0, dx in -4i32..5, dy in -4i32..5, sigma in 0.5f64..3.0,
    ) {
        let (w, h) = (56, 56);
        let a = rasterize_density(&DotMap::new(w, h, [(x, y)]).unwrap(), sigma).unwrap();
        let b = rasterize_density(&DotMap::new(w, h, [(x + dx as f64, y + dy as f64)]).unwrap(), sigma).unwrap();
        for yy in 0..h as i32 {
            for xx in 0..w as i32 {
                let (sx, sy) = (xx - dx, yy - dy);
                let want = if sx >= 0 && sy >= 0 && sx < w as i32 && sy < h as i32 { a.0.at(sx as usize, sy as usize) } else { 0.0 };
                prop_assert_eq!(b.0.at(xx as usize, yy as usize), want);
            }
        }
    }

    #[test]
    fn density_count_is_conserved(w in 8usize..64, h in 8usize..64, n in 0usize..300, sigma in 0.3f64..8.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64))).collect();
        let map = rasterize_density(&DotMap::new(w, h, pts).unwrap(), sigma).unwrap();
        prop_assert!((count(&map) - n as f64).abs() < 1e-3);
    }

    #[test]
    fn mae_never_exceeds_mse(w in 1usize..16, h in 1usize..16, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, g) = (DensityMap(plane(w, h, &mut rng, -1.0, 1.0)), DensityMap(plane(w, h, &mut rng, -1.0, 1.0)));
        let (mae, mse) = pixel_mae_mse(&p, &g).unwrap();
        prop_assert!(mae <= mse + 1e-12);
    }

    #[test]
    fn pipeline_keeps_range_dims_and_exact_dots(
        w in 24usize..48, h in 24usize..48, n in 0usize..40, crop in 8usize..20,
        lo in 0.6f64..1.0, hi in 1.0f64..1.6, seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = group(w, h, n, &mut rng);
        let cfg = AugmentConfig { crop, scale_range: (lo, hi), gamma_prob: 0.5, ..AugmentConfig::default() };
        let (out, trace) = apply_pipeline(&g, &cfg, &mut rng).unwrap();
        prop_assert_eq!(out.image.dims(), (crop, crop));
        prop_assert_eq!(out.flow.dims(), (crop, crop));
        prop_assert_eq!(out.dots.dims(), (crop, crop));
        prop_assert!(out.image.data.iter().all(|v| (0.0..=1.0).contains(v)));
        let last = (crop - 1) as f64;
        let expected = g.dots.dots().iter().filter(|d| {
            let (x, y) = if trace.scale == 1.0 { (d.x, d.y) } else { (scale_coord(d.x, trace.scale), scale_coord(d.y, trace.scale)) };
            let (x, y) = (x - trace.offset.0 as f64, y - trace.offset.1 as f64);
            (0.0..=last).contains(&x) && (0.0..=last).contains(&y)
        }).count();
        prop_assert_eq!(out.dots.len(), expected);
    }

    #[test]
    fn writers_deterministic_and_truncations_rejected(w in 1usize..6, h in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flow = flow_field(w, h, &mut rng);
        let flo = encode_flo(&flow).unwrap();
        prop_assert_eq!(&encode_flo(&flow).unwrap(), &flo);
        prop_assert_eq!(decode_flo(&flo).unwrap(), flow);
        prop_assert!((0..flo.len()).all(|k| decode_flo(&flo[..k]).is_err()));

        let map = DensityMap(plane(w, h, &mut rng, 0.0, 1.0));
        let raw = encode_density(&map);
        prop_assert_eq!(&encode_density(&map), &raw);
        prop_assert_eq!(decode_density(&raw).unwrap(), map);
        prop_assert!((0..raw.len()).all(|k| decode_density(&raw[..k]).is_err()));

        let planes = vec![plane(w, h, &mut rng, 0.0, 1.0), plane(w, h, &mut rng, 0.0, 1.0)];
        let bytes = encode_planes(&planes).unwrap();
        prop_assert_eq!(decode_planes(&bytes).unwrap(), planes);
        prop_assert!((0..bytes.len()).all(|k| decode_planes(&bytes[..k]).is_err()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn synthetic_is_deterministic_and_conserves_persons(n in 0usize..30, seed in any::<u64>(), bg in any::<u64>()) {
        let spec = SceneSpec { width: 64, height: 64, frames: 4, n_persons: n, seed, background_seed: bg, ..SceneSpec::default() };
        let a = generate_sequence(&spec).unwrap();
        let b = generate_sequence(&spec).unwrap();
        prop_assert_eq!(&a.frames, &b.frames);
        prop_assert_eq!(&a.dots, &b.dots);
        prop_assert_eq!(&a.flows, &b.flows);
        prop_assert!(a.dots.iter().all(|d| d.len() == n));
    }

    #[test]
    fn fresh_model_output_finite_nonnegative(seed in any::<u64>(), flow in any::<bool>()) {
        let cfg = ModelConfig { flow_enabled: flow, ..ModelConfig::with_width(1.0 / 32.0) };
        let model = BiPathModel::<f32>::new(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = group(16, 16, 0, &mut rng);
        let d = model.predict(&g.image, Some(&g.flow)).unwrap();
        prop_assert!(d.0.data.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}
