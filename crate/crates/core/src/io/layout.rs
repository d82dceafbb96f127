use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::ImageFormat;

use super::density_raw::{decode_planes, encode_planes};
use super::{io_err, read_bytes, read_flo, write_atomic, write_dots_csv, write_flo, IoError, Result};
use crate::density::DotMap;
use crate::flow::FlowField;
use crate::raster::{Plane, RgbImage};

pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)
        .map_err(|e| IoError::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = RgbImage::new(w, h);
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            out.data[c * w * h + i] = px[c] as f32 / 255.0;
        }
    }
    Ok(out)
}

pub fn encode_rgb_png(img: &RgbImage) -> Result<Vec<u8>> {
    let n = img.width * img.height;
    let buf = image::RgbImage::from_fn(img.width as u32, img.height as u32, |x, y| {
        let i = y as usize * img.width + x as usize;
        image::Rgb(std::array::from_fn(|c| {
            (img.data[c * n + i] * 255.0).round().clamp(0.0, 255.0) as u8
        }))
    });
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png).map_err(|e| IoError::Image {
        path: "<memory>".into(),
        msg: e.to_string(),
    })?;
    Ok(out.into_inner())
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    write_atomic(path, &encode_rgb_png(img)?)
}

/// A directory of `img{:06}.png` frames with `img{:06}.csv` dots, indexed
/// from 1, plus a `sequence.cfg` manifest. Flow from frame `i` to `i+1`
/// is cached as `flow{:06}.flo` (estimated) and `gtflow{:06}.flo` (exact,
/// synthetic only); `flowin{:06}.raw` holds the encoded network input.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceLayout {
    pub dir: PathBuf,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Scene luminance factor recorded by the generator, 1 when unknown.
    pub luminance: f64,
}

impl SequenceLayout {
    pub fn manifest_path(dir: &Path) -> PathBuf {
        dir.join("sequence.cfg")
    }

    pub fn frame_path(&self, i: usize) -> PathBuf {
        self.dir.join(format!("img{i:06}.png"))
    }

    pub fn dots_path(&self, i: usize) -> PathBuf {
        self.dir.join(format!("img{i:06}.csv"))
    }

    pub fn flow_path(&self, i: usize) -> PathBuf {
        self.dir.join(format!("flow{i:06}.flo"))
    }

    pub fn true_flow_path(&self, i: usize) -> PathBuf {
        self.dir.join(format!("gtflow{i:06}.flo"))
    }

    pub fn flow_input_path(&self, i: usize) -> PathBuf {
        self.dir.join(format!("flowin{i:06}.raw"))
    }

    pub fn is_night(&self, threshold: f64) -> bool {
        self.luminance <= threshold
    }

    fn manifest_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "frames = {}", self.frames).unwrap();
        writeln!(s, "width = {}", self.width).unwrap();
        writeln!(s, "height = {}", self.height).unwrap();
        writeln!(s, "luminance = {}", self.luminance).unwrap();
        s
    }

    /// Reads the manifest and checks that every frame and dot file exists.
    pub fn open(dir: &Path) -> Result<Self> {
        let mpath = Self::manifest_path(dir);
        let text = std::fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
        let mut frames = None;
        let mut width = None;
        let mut height = None;
        let mut luminance = 1.0;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.split('#').next().unwrap_or("").trim();
            if s.is_empty() {
                continue;
            }
            let (k, v) = s.split_once('=').ok_or_else(|| IoError::Malformed {
                line,
                msg: format!("expected `key = value`, got {s:?}"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            let bad = |msg: String| IoError::BadValue {
                line,
                key: k.to_string(),
                msg,
            };
            let num = |v: &str| v.parse::<usize>().map_err(|e| bad(e.to_string()));
            match k {
                "frames" => frames = Some(num(v)?),
                "width" => width = Some(num(v)?),
                "height" => height = Some(num(v)?),
                "luminance" => luminance = v.parse::<f64>().map_err(|e| bad(e.to_string()))?,
                _ => {
                    return Err(IoError::UnknownKey {
                        line,
                        key: k.to_string(),
                    })
                }
            }
        }
        let missing = |k: &str| IoError::Layout {
            path: dir.to_path_buf(),
            msg: format!("manifest lacks `{k}`"),
        };
        let layout = Self {
            dir: dir.to_path_buf(),
            frames: frames.ok_or_else(|| missing("frames"))?,
            width: width.ok_or_else(|| missing("width"))?,
            height: height.ok_or_else(|| missing("height"))?,
            luminance,
        };
        if layout.frames == 0 {
            return Err(IoError::Layout {
                path: dir.to_path_buf(),
                msg: "sequence has no frames".into(),
            });
        }
        for i in 1..=layout.frames {
            for p in [layout.frame_path(i), layout.dots_path(i)] {
                if !p.is_file() {
                    return Err(IoError::Layout {
                        path: dir.to_path_buf(),
                        msg: format!("missing {}", p.display()),
                    });
                }
            }
        }
        Ok(layout)
    }

    /// Writes frames, dots and optional exact flow, then the manifest.
    pub fn create(
        dir: &Path,
        frames: &[RgbImage],
        dots: &[DotMap],
        true_flows: Option<&[FlowField]>,
        luminance: f64,
    ) -> Result<Self> {
        let first = frames.first().ok_or_else(|| IoError::Layout {
            path: dir.to_path_buf(),
            msg: "no frames".into(),
        })?;
        if dots.len() != frames.len() {
            return Err(IoError::Layout {
                path: dir.to_path_buf(),
                msg: format!("{} frames but {} dot maps", frames.len(), dots.len()),
            });
        }
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let layout = Self {
            dir: dir.to_path_buf(),
            frames: frames.len(),
            width: first.width,
            height: first.height,
            luminance,
        };
        for (i, (f, d)) in frames.iter().zip(dots).enumerate() {
            write_rgb_png(&layout.frame_path(i + 1), f)?;
            write_dots_csv(&layout.dots_path(i + 1), d)?;
        }
        for (i, f) in true_flows.unwrap_or(&[]).iter().enumerate() {
            write_flo(&layout.true_flow_path(i + 1), f)?;
        }
        write_atomic(&Self::manifest_path(dir), layout.manifest_text().as_bytes())?;
        Ok(layout)
    }

    pub fn read_frame(&self, i: usize) -> Result<RgbImage> {
        let img = read_rgb_png(&self.frame_path(i))?;
        if img.dims() != (self.width, self.height) {
            return Err(IoError::Layout {
                path: self.frame_path(i),
                msg: format!("frame is {:?}, manifest says {}x{}", img.dims(), self.width, self.height),
            });
        }
        Ok(img)
    }

    pub fn read_dots(&self, i: usize) -> Result<DotMap> {
        super::parse_dots_csv(&self.dots_path(i), self.width, self.height)
    }

    pub fn read_flow(&self, i: usize) -> Result<Option<FlowField>> {
        let p = self.flow_path(i);
        if p.is_file() {
            read_flo(&p).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn read_true_flow(&self, i: usize) -> Result<Option<FlowField>> {
        let p = self.true_flow_path(i);
        if p.is_file() {
            read_flo(&p).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn write_flow_input(&self, i: usize, planes: &[Plane]) -> Result<()> {
        write_atomic(&self.flow_input_path(i), &encode_planes(planes)?)
    }

    pub fn read_flow_input(&self, i: usize) -> Result<Vec<Plane>> {
        decode_planes(&read_bytes(&self.flow_input_path(i))?)
    }
}
