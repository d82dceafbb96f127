use super::{ModelError, Result};
use crate::flow::FlowMode;

/// Full-width encoder stage channels (stem, then three stages).
pub const ENCODER_CHANNELS: [usize; 4] = [64, 256, 512, 1024];
/// Full-width dilated decoder channels.
pub const DECODER_CHANNELS: [usize; 6] = [512, 512, 512, 256, 128, 64];
/// Full-width regression conv channels.
pub const REGRESSION_CHANNELS: usize = 512;
/// Encoder stage strides; their product is the x8 downsampling.
pub const ENCODER_STRIDES: [usize; 4] = [2, 1, 2, 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionPlacement {
    /// SAM and CAM run in parallel over the fused streams; outputs concatenated.
    Fused,
    /// SAM on the image stream, CAM on the flow stream, then concatenated.
    PerStream,
}

impl AttentionPlacement {
    pub fn as_str(self) -> &'static str {
        match self {
            AttentionPlacement::Fused => "fused",
            AttentionPlacement::PerStream => "per_stream",
        }
    }
}

impl std::str::FromStr for AttentionPlacement {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fused" => Ok(AttentionPlacement::Fused),
            "per_stream" => Ok(AttentionPlacement::PerStream),
            other => Err(format!("unknown attention placement {other:?} (fused|per_stream)")),
        }
    }
}

/// Weight init for the convs after the encoders.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightInit {
    /// N(0, init_std).
    Normal,
    /// N(0, 2 / fan_in). The output head keeps |N(0, init_std)|.
    He,
}

impl WeightInit {
    pub fn as_str(self) -> &'static str {
        match self {
            WeightInit::Normal => "normal",
            WeightInit::He => "he",
        }
    }
}

impl std::str::FromStr for WeightInit {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normal" => Ok(WeightInit::Normal),
            "he" => Ok(WeightInit::He),
            other => Err(format!("unknown weight init {other:?} (normal|he)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Width multiplier in (0, 1] applied to every channel count.
    pub width: f64,
    pub crop: usize,
    pub flow_mode: FlowMode,
    pub flow_enabled: bool,
    pub attention: AttentionPlacement,
    pub init: WeightInit,
    /// Std of the normal init for non-encoder convs.
    pub init_std: f64,
    /// Constant multiplier on the network output.
    pub output_scale: f64,
    /// Subtracted from every image and flow input value.
    pub input_mean: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            width: 1.0,
            crop: 576,
            flow_mode: FlowMode::Polar,
            flow_enabled: true,
            attention: AttentionPlacement::Fused,
            init: WeightInit::Normal,
            init_std: 0.01,
            output_scale: 1.0,
            input_mean: 0.5,
        }
    }
}

fn scaled(w: f64, c: usize) -> usize {
    (w * c as f64).round() as usize
}

impl ModelConfig {
    pub fn with_width(width: f64) -> Self {
        Self {
            width,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.width <= 1.0) {
            return Err(ModelError::Config(format!(
                "width multiplier {} outside (0, 1]",
                self.width
            )));
        }
        if self.crop == 0 || self.crop % 8 != 0 {
            return Err(ModelError::Config(format!(
                "crop {} must be a positive multiple of 8",
                self.crop
            )));
        }
        if !(self.init_std > 0.0) {
            return Err(ModelError::Config("init_std must be positive".into()));
        }
        if !(self.output_scale > 0.0 && self.output_scale.is_finite()) {
            return Err(ModelError::Config("output_scale must be positive".into()));
        }
        if !self.input_mean.is_finite() {
            return Err(ModelError::Config("input_mean must be finite".into()));
        }
        let all = self
            .encoder_channels()
            .into_iter()
            .chain(self.decoder_channels())
            .chain([self.regression_channels()]);
        for c in all {
            if c == 0 {
                return Err(ModelError::Config(format!(
                    "width {} scales a channel count to zero",
                    self.width
                )));
            }
        }
        Ok(())
    }

    /// Init std for the decoder, attention and regression convs; `None` is He.
    pub fn conv_std(&self) -> Option<f64> {
        match self.init {
            WeightInit::Normal => Some(self.init_std),
            WeightInit::He => None,
        }
    }

    pub fn encoder_channels(&self) -> [usize; 4] {
        ENCODER_CHANNELS.map(|c| scaled(self.width, c))
    }

    pub fn decoder_channels(&self) -> [usize; 6] {
        DECODER_CHANNELS.map(|c| scaled(self.width, c))
    }

    pub fn regression_channels(&self) -> usize {
        scaled(self.width, REGRESSION_CHANNELS)
    }

    /// Channels out of one stream's decoder.
    pub fn stream_channels(&self) -> usize {
        self.decoder_channels()[5]
    }

    /// Channels entering the attention block(s).
    pub fn fused_channels(&self) -> usize {
        if self.flow_enabled {
            2 * self.stream_channels()
        } else {
            self.stream_channels()
        }
    }

    /// Channels entering the regression conv.
    pub fn regression_input_channels(&self) -> usize {
        match (self.flow_enabled, self.attention) {
            (true, AttentionPlacement::PerStream) => 2 * self.stream_channels(),
            _ => 2 * self.fused_channels(),
        }
    }

    /// Query/key width of a SAM block over `c` channels.
    pub fn sam_reduced(c: usize) -> usize {
        (c / 8).max(1)
    }

    /// `(C, H/8, W/8)` produced by one encoder for an `H`×`W` input.
    pub fn encoder_output_shape(&self, height: usize, width: usize) -> Result<[usize; 3]> {
        if height % 8 != 0 || width % 8 != 0 || height == 0 || width == 0 {
            return Err(ModelError::NotDivisible { width, height });
        }
        let (mut h, mut w) = (height, width);
        for s in ENCODER_STRIDES {
            h = (h + 2 - 3) / s + 1;
            w = (w + 2 - 3) / s + 1;
        }
        Ok([self.encoder_channels()[3], h, w])
    }

    /// Decoder output shape for an input of `(C, h, w)`.
    pub fn decoder_output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let expected = self.encoder_channels()[3];
        if input[0] != expected {
            return Err(ModelError::Channels {
                expected,
                got: input[0],
            });
        }
        // 3x3, dilation 2, padding 2 preserves the spatial size.
        Ok([self.stream_channels(), input[1], input[2]])
    }

    /// Closed-form parameter count.
    ///
    /// A 3x3 conv from `i` to `o` channels has `9io + o` weights. Per stream:
    /// `sum_s 9 e_{s-1} e_s + 9 e_s^2 + 2 e_s` over the four encoder stages
    /// (`e_{-1} = 3`), plus `sum_k 9 d_{k-1} d_k + d_k` over the six decoder
    /// convs (`d_{-1} = e_3`). A SAM over `c` channels with `q = max(1, c/8)`
    /// has `2(cq + q) + c^2 + c + 1`; a CAM has 1. The head adds
    /// `9 r_in r + r` and `r + 1`.
    pub fn param_count(&self) -> usize {
        let conv = |i: usize, o: usize, k: usize| k * k * i * o + o;
        let e = self.encoder_channels();
        let d = self.decoder_channels();
        let mut stream = 0;
        let mut prev = 3;
        for &c in &e {
            stream += conv(prev, c, 3) + conv(c, c, 3);
            prev = c;
        }
        for &c in &d {
            stream += conv(prev, c, 3);
            prev = c;
        }
        let streams = if self.flow_enabled { 2 } else { 1 };
        let sam = |c: usize| {
            let q = Self::sam_reduced(c);
            2 * conv(c, q, 1) + conv(c, c, 1) + 1
        };
        let attention = match (self.flow_enabled, self.attention) {
            (true, AttentionPlacement::PerStream) => sam(self.stream_channels()) + 1,
            _ => sam(self.fused_channels()) + 1,
        };
        let r = self.regression_channels();
        let head = conv(self.regression_input_channels(), r, 3) + conv(r, 1, 1);
        streams * stream + attention + head
    }

    /// Canonical text of the fields that determine the parameter layout and
    /// input encoding.
    pub fn structural_key(&self) -> String {
        format!(
            "width={};flow_enabled={};attention={};flow_mode={};output_scale={};input_mean={}",
            self.width,
            self.flow_enabled,
            self.attention.as_str(),
            self.flow_mode.as_str(),
            self.output_scale,
            self.input_mean
        )
    }

    /// 64-bit FNV-1a digest of [`ModelConfig::structural_key`].
    pub fn digest(&self) -> u64 {
        self.structural_key()
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
                (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_width_shapes() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.encoder_output_shape(576, 576).unwrap(), [1024, 72, 72]);
        assert_eq!(cfg.decoder_output_shape([1024, 72, 72]).unwrap(), [64, 72, 72]);
        assert!(cfg.decoder_output_shape([512, 72, 72]).is_err());
        assert!(cfg.encoder_output_shape(570, 576).is_err());
    }

    #[test]
    fn scaling_rule() {
        let cfg = ModelConfig::with_width(1.0 / 16.0);
        assert_eq!(cfg.encoder_channels(), [4, 16, 32, 64]);
        assert_eq!(cfg.decoder_channels(), [32, 32, 32, 16, 8, 4]);
        assert_eq!(cfg.encoder_output_shape(64, 64).unwrap(), [64, 8, 8]);
    }

    #[test]
    fn invalid_widths() {
        assert!(ModelConfig::with_width(0.0).validate().is_err());
        assert!(ModelConfig::with_width(1.5).validate().is_err());
        assert!(ModelConfig::with_width(1.0 / 200.0).validate().is_err());
        assert!(ModelConfig::with_width(1.0 / 32.0).validate().is_ok());
    }

    #[test]
    fn digest_tracks_structure() {
        let a = ModelConfig::with_width(0.25);
        let b = ModelConfig::with_width(0.125);
        assert_ne!(a.digest(), b.digest());
        let c = ModelConfig { crop: 64, ..a.clone() };
        assert_eq!(a.digest(), c.digest());
    }
}
