use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::{io_err, IoError, Result};
use crate::augment::AugmentConfig;
use crate::flow::{DensifyWeight, DisParams};
use crate::model::ModelConfig;
use crate::synthetic::SceneSpec;
use crate::train::TrainConfig;

/// Everything a run needs, parsed from `key = value` lines.
///
/// `crop` sets both the augmentation crop and the model input size.
/// `scale_range = none` disables rescaling. `#` starts a comment.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunConfig {
    pub augment: AugmentConfig,
    pub dis: DisParams,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn parse<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("{v:?}: {e}"))
}

fn pair(v: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = v.split_once(',').ok_or_else(|| format!("expected `lo,hi`, got {v:?}"))?;
    Ok((parse(a.trim())?, parse(b.trim())?))
}

fn boolean(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(format!("expected a boolean, got {v:?}")),
    }
}

fn densify(v: &str) -> std::result::Result<DensifyWeight, String> {
    match v {
        "patch_mean" => Ok(DensifyWeight::PatchMean),
        "per_pixel" => Ok(DensifyWeight::PerPixel),
        _ => Err(format!("expected patch_mean|per_pixel, got {v:?}")),
    }
}

impl RunConfig {
    /// Sets one key; the error is the message for a bad value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<bool, String> {
        let (a, d, m, t) = (&mut self.augment, &mut self.dis, &mut self.model, &mut self.train);
        match key {
            "crop" => {
                a.crop = parse(value)?;
                m.crop = a.crop;
            }
            "hflip_prob" => a.hflip_prob = parse(value)?,
            "vflip_prob" => a.vflip_prob = parse(value)?,
            "gamma_prob" => a.gamma_prob = parse(value)?,
            "gamma_range" => a.gamma_range = pair(value)?,
            "scale_range" => {
                a.scale_range = if value == "none" { (1.0, 1.0) } else { pair(value)? }
            }
            "flow_correction" => a.flow_correction = boolean(value)?,
            "augment_seed" => a.seed = parse(value)?,
            "patch_size" => d.patch_size = parse(value)?,
            "patch_stride" => d.patch_stride = parse(value)?,
            "dis_iterations" => d.iterations = parse(value)?,
            "pyramid_downscale" => d.downscale = parse(value)?,
            "pyramid_min_dim" => d.min_dim = parse(value)?,
            "densify_eps" => d.densify_eps = parse(value)?,
            "densify_weight" => d.densify_weight = densify(value)?,
            "width" => m.width = parse(value)?,
            "flow_mode" => m.flow_mode = parse(value)?,
            "flow_enabled" => m.flow_enabled = boolean(value)?,
            "attention" => m.attention = parse(value)?,
            "init" => m.init = parse(value)?,
            "init_std" => m.init_std = parse(value)?,
            "output_scale" => m.output_scale = parse(value)?,
            "input_mean" => m.input_mean = parse(value)?,
            "lr" => t.lr = parse(value)?,
            "lr_schedule" => t.lr_schedule = parse(value)?,
            "beta1" => t.beta1 = parse(value)?,
            "beta2" => t.beta2 = parse(value)?,
            "adam_eps" => t.adam_eps = parse(value)?,
            "epochs" => t.epochs = parse(value)?,
            "batch_size" => t.batch_size = parse(value)?,
            "steps_per_epoch" => t.steps_per_epoch = parse(value)?,
            "seed" => t.seed = parse(value)?,
            "sigma" => t.sigma = parse(value)?,
            "tau" => t.tau = parse(value)?,
            "night_threshold" => t.night_threshold = parse(value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        let inv = |e: &dyn std::fmt::Display| IoError::Invalid(e.to_string());
        self.augment.validate().map_err(|e| inv(&e))?;
        self.dis.validate().map_err(|e| inv(&e))?;
        self.model.validate().map_err(|e| inv(&e))?;
        self.train.validate().map_err(|e| inv(&e))?;
        if self.augment.crop != self.model.crop {
            return Err(IoError::Invalid("augment and model crop differ".into()));
        }
        Ok(())
    }

    /// Every key with its current value; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let (a, d, m, t) = (&self.augment, &self.dis, &self.model, &self.train);
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("String write");
        kv("crop", a.crop.to_string());
        kv("hflip_prob", a.hflip_prob.to_string());
        kv("vflip_prob", a.vflip_prob.to_string());
        kv("gamma_prob", a.gamma_prob.to_string());
        kv("gamma_range", format!("{},{}", a.gamma_range.0, a.gamma_range.1));
        kv("scale_range", format!("{},{}", a.scale_range.0, a.scale_range.1));
        kv("flow_correction", a.flow_correction.to_string());
        kv("augment_seed", a.seed.to_string());
        kv("patch_size", d.patch_size.to_string());
        kv("patch_stride", d.patch_stride.to_string());
        kv("dis_iterations", d.iterations.to_string());
        kv("pyramid_downscale", d.downscale.to_string());
        kv("pyramid_min_dim", d.min_dim.to_string());
        kv("densify_eps", d.densify_eps.to_string());
        kv(
            "densify_weight",
            match d.densify_weight {
                DensifyWeight::PatchMean => "patch_mean",
                DensifyWeight::PerPixel => "per_pixel",
            }
            .into(),
        );
        kv("width", m.width.to_string());
        kv("flow_mode", m.flow_mode.as_str().into());
        kv("flow_enabled", m.flow_enabled.to_string());
        kv("attention", m.attention.as_str().into());
        kv("init", m.init.as_str().into());
        kv("init_std", m.init_std.to_string());
        kv("output_scale", m.output_scale.to_string());
        kv("input_mean", m.input_mean.to_string());
        kv("lr", t.lr.to_string());
        kv("lr_schedule", t.lr_schedule.as_str().to_string());
        kv("beta1", t.beta1.to_string());
        kv("beta2", t.beta2.to_string());
        kv("adam_eps", t.adam_eps.to_string());
        kv("epochs", t.epochs.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("steps_per_epoch", t.steps_per_epoch.to_string());
        kv("seed", t.seed.to_string());
        kv("sigma", t.sigma.to_string());
        kv("tau", t.tau.to_string());
        kv("night_threshold", t.night_threshold.to_string());
        s
    }
}

/// Applies `text` on top of `base` without validating.
pub fn apply_config_str(base: RunConfig, text: &str) -> Result<RunConfig> {
    let mut cfg = base;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.split('#').next().unwrap_or("").trim();
        if s.is_empty() {
            continue;
        }
        let (key, value) = s.split_once('=').ok_or_else(|| IoError::Malformed {
            line,
            msg: format!("expected `key = value`, got {s:?}"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        match cfg.set(key, value) {
            Ok(true) => {}
            Ok(false) => {
                return Err(IoError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
            Err(msg) => {
                return Err(IoError::BadValue {
                    line,
                    key: key.to_string(),
                    msg,
                })
            }
        }
    }
    Ok(cfg)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let cfg = apply_config_str(RunConfig::default(), text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    parse_config_str(&std::fs::read_to_string(path).map_err(io_err(path))?)
}

fn pair32(v: &str) -> std::result::Result<(f32, f32), String> {
    pair(v).map(|(a, b)| (a as f32, b as f32))
}

/// Applies `key = value` lines to a [`SceneSpec`] and validates it.
pub fn parse_scene_spec_str(text: &str, base: SceneSpec) -> Result<SceneSpec> {
    let mut s = base;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.split('#').next().unwrap_or("").trim();
        if t.is_empty() {
            continue;
        }
        let (key, value) = t.split_once('=').ok_or_else(|| IoError::Malformed {
            line,
            msg: format!("expected `key = value`, got {t:?}"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        let r: std::result::Result<(), String> = (|| {
            match key {
                "n_persons" => s.n_persons = parse(value)?,
                "radius_range" => s.radius_range = pair32(value)?,
                "speed_range" => s.speed_range = pair32(value)?,
                "background_seed" => s.background_seed = parse(value)?,
                "octaves" => s.octaves = parse(value)?,
                "jitter" => s.jitter = parse(value)?,
                "luminance" => s.luminance = parse(value)?,
                "frames" => s.frames = parse(value)?,
                "width" => s.width = parse(value)?,
                "height" => s.height = parse(value)?,
                "seed" => s.seed = parse(value)?,
                _ => return Err(String::new()),
            }
            Ok(())
        })();
        match r {
            Ok(()) => {}
            Err(msg) if msg.is_empty() => {
                return Err(IoError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
            Err(msg) => {
                return Err(IoError::BadValue {
                    line,
                    key: key.to_string(),
                    msg,
                })
            }
        }
    }
    s.validate().map_err(|e| IoError::Invalid(e.to_string()))?;
    Ok(s)
}

pub fn parse_scene_spec(path: &Path) -> Result<SceneSpec> {
    parse_scene_spec_str(&std::fs::read_to_string(path).map_err(io_err(path))?, SceneSpec::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_spec_keys() {
        let s = parse_scene_spec_str("n_persons = 3\nradius_range = 2,3\nwidth = 96", SceneSpec::default()).unwrap();
        assert_eq!((s.n_persons, s.radius_range, s.width), (3, (2.0, 3.0), 96));
        assert!(parse_scene_spec_str("width = 10", SceneSpec::default()).is_err());
        assert!(matches!(
            parse_scene_spec_str("colour = red", SceneSpec::default()),
            Err(IoError::UnknownKey { .. })
        ));
    }

    #[test]
    fn empty_is_defaults() {
        let c = parse_config_str("").unwrap();
        assert_eq!(c.augment.crop, 576);
        assert_eq!(c.augment.gamma_range, (0.4, 2.0));
        assert_eq!(c.augment.scale_range, (0.6, 1.8));
        assert_eq!(c.train.lr, 1e-5);
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn errors() {
        assert!(matches!(parse_config_str("crop = 0"), Err(IoError::Invalid(_))));
        match parse_config_str("lr = 1e-4\nbogus = 3") {
            Err(IoError::UnknownKey { line: 2, key }) => assert_eq!(key, "bogus"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_config_str("epochs = many"), Err(IoError::BadValue { .. })));
        assert!(matches!(parse_config_str("just text"), Err(IoError::Malformed { .. })));
    }

    #[test]
    fn scale_range_and_round_trip() {
        let c = parse_config_str("scale_range = 0.7,1.2  # middle setting\ncrop = 64\nwidth = 0.0625").unwrap();
        assert_eq!(c.augment.scale_range, (0.7, 1.2));
        assert_eq!(c.model.crop, 64);
        assert_eq!(parse_config_str(&c.to_text()).unwrap(), c);
        let n = parse_config_str("scale_range = none").unwrap();
        assert_eq!(n.augment.scale_range, (1.0, 1.0));
    }
}
