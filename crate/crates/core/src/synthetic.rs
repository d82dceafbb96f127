//! Procedural crowd sequences with exact ground-truth dots and flow.
//!
//! Frames are textured discs ("persons") moving at constant velocity over a
//! value-noise background, with a per-frame global jitter that shifts the
//! whole frame. Because every pixel is rendered from a continuous function
//! of scene coordinates, the true flow between frames is known exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::density::DotMap;
use crate::flow::FlowField;
use crate::raster::{Plane, RgbImage};

/// Luminance at or below which a sequence counts as night.
pub const NIGHT_LUMINANCE: f32 = 0.2;
/// Luminance used when rendering night sequences.
pub const DEFAULT_NIGHT_LUMINANCE: f32 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    Invalid(String),
}

/// Explicit initial state for one person, bypassing the random draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PersonInit {
    pub x: f32,
    pub y: f32,
    pub vx: f32,
    pub vy: f32,
    pub radius: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub n_persons: usize,
    pub radius_range: (f32, f32),
    pub speed_range: (f32, f32),
    pub background_seed: u64,
    pub octaves: u32,
    /// Max per-axis global shift (px) applied to each frame.
    pub jitter: f32,
    pub luminance: f32,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub persons: Option<Vec<PersonInit>>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_persons: 12,
            radius_range: (4.0, 7.0),
            speed_range: (0.5, 2.0),
            background_seed: 7,
            octaves: 4,
            jitter: 0.5,
            luminance: 1.0,
            frames: 6,
            width: 128,
            height: 128,
            seed: 1,
            persons: None,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if self.width < 64 || self.height < 64 {
            return bad(format!("frame {}x{} below 64x64", self.width, self.height));
        }
        if self.frames < 2 {
            return bad("need at least 2 frames".into());
        }
        if !(self.luminance > 0.0 && self.luminance <= 1.0) {
            return bad(format!("luminance {} outside (0, 1]", self.luminance));
        }
        let (s0, s1) = self.speed_range;
        if !(s0 >= 0.0 && s1 >= s0) {
            return bad("speed range must be nonnegative and ordered".into());
        }
        let (r0, r1) = self.radius_range;
        if !(r0 > 0.0 && r1 >= r0) {
            return bad("radius range must be positive and ordered".into());
        }
        if !(self.jitter >= 0.0) || 2.0 * self.jitter + 2.0 >= self.width.min(self.height) as f32 {
            return bad(format!("jitter {} out of range", self.jitter));
        }
        if self.octaves == 0 {
            return bad("octaves must be >= 1".into());
        }
        Ok(())
    }

    pub fn is_night(&self) -> bool {
        self.luminance <= NIGHT_LUMINANCE
    }
}

#[derive(Clone, Debug)]
pub struct GeneratedSequence {
    pub frames: Vec<RgbImage>,
    pub dots: Vec<DotMap>,
    /// True flow from frame `t` to `t + 1`.
    pub flows: Vec<FlowField>,
    /// Pixels covered by a person (alpha >= 0.5) in each frame.
    pub person_masks: Vec<Vec<bool>>,
    pub spec: SceneSpec,
}

// ---------------------------------------------------------------- noise

fn hash2(seed: u64, x: i64, y: i64) -> f32 {
    let mut h = seed
        ^ (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    h = h.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    h ^= h >> 33;
    (h >> 40) as f32 / (1u64 << 24) as f32
}

fn smooth(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise_octave(seed: u64, x: f32, y: f32, cell: f32) -> f32 {
    let (gx, gy) = (x / cell, y / cell);
    let (x0, y0) = (gx.floor(), gy.floor());
    let (fx, fy) = (smooth(gx - x0), smooth(gy - y0));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = hash2(seed, ix, iy);
    let b = hash2(seed, ix + 1, iy);
    let c = hash2(seed, ix, iy + 1);
    let d = hash2(seed, ix + 1, iy + 1);
    let top = a + (b - a) * fx;
    let bot = c + (d - c) * fx;
    top + (bot - top) * fy
}

/// Multi-octave value noise in `[0, 1]`, continuous in `(x, y)`.
pub fn value_noise(seed: u64, octaves: u32, base_cell: f32, x: f32, y: f32) -> f32 {
    let (mut amp, mut total, mut norm, mut cell) = (1.0, 0.0, 0.0, base_cell);
    for o in 0..octaves {
        total += amp * value_noise_octave(seed.wrapping_add(o as u64 * 1013), x, y, cell);
        norm += amp;
        amp *= 0.55;
        cell = (cell * 0.5).max(1.5);
    }
    total / norm
}

/// Textured luminance plane: a window of an unbounded noise texture with its
/// origin at `(ox, oy)`.
pub fn textured_plane(width: usize, height: usize, seed: u64, ox: f32, oy: f32) -> Plane {
    Plane::from_fn(width, height, |x, y| {
        value_noise(seed, 4, 16.0, x as f32 + ox, y as f32 + oy)
    })
}

/// Two frames of the same texture where content moves by `(dx, dy)` px,
/// and the exact flow between them.
pub fn translation_pair(width: usize, height: usize, dx: f32, dy: f32, seed: u64) -> (Plane, Plane, FlowField) {
    let a = textured_plane(width, height, seed, 0.0, 0.0);
    let b = textured_plane(width, height, seed, -dx, -dy);
    (a, b, FlowField::uniform(width, height, dx, dy))
}

// ---------------------------------------------------------------- scene

#[derive(Clone, Debug)]
struct Person {
    x: f32,
    y: f32,
    vx: f32,
    vy: f32,
    radius: f32,
    color: [f32; 3],
    texture_seed: u64,
}

fn reflect(pos: f32, vel: f32, lo: f32, hi: f32) -> (f32, f32) {
    let mut p = pos + vel;
    let mut v = vel;
    if p < lo {
        p = 2.0 * lo - p;
        v = -v;
    }
    if p > hi {
        p = 2.0 * hi - p;
        v = -v;
    }
    (p.clamp(lo, hi), v)
}

fn background_rgb(spec: &SceneSpec, x: f32, y: f32) -> [f32; 3] {
    let n = value_noise(spec.background_seed, spec.octaves, 16.0, x, y);
    let m = value_noise(spec.background_seed ^ 0x5555, 2, 40.0, x, y);
    [
        0.20 + 0.45 * n + 0.10 * m,
        0.25 + 0.40 * n + 0.05 * m,
        0.18 + 0.35 * n + 0.12 * (1.0 - m),
    ]
}

fn person_rgb(p: &Person, lx: f32, ly: f32) -> [f32; 3] {
    let t = value_noise(p.texture_seed, 2, 3.0, lx + 64.0, ly + 64.0);
    let shade = 0.6 + 0.4 * t;
    [p.color[0] * shade, p.color[1] * shade, p.color[2] * shade]
}

fn init_persons(spec: &SceneSpec, rng: &mut ChaCha8Rng, lo: (f32, f32), hi: (f32, f32)) -> Vec<Person> {
    if let Some(list) = &spec.persons {
        return list
            .iter()
            .enumerate()
            .map(|(i, p)| Person {
                x: p.x,
                y: p.y,
                vx: p.vx,
                vy: p.vy,
                radius: p.radius,
                color: [0.9, 0.55, 0.4],
                texture_seed: spec.seed.wrapping_add(i as u64 * 7919),
            })
            .collect();
    }
    (0..spec.n_persons)
        .map(|i| {
            let speed = rng.gen_range(spec.speed_range.0..=spec.speed_range.1);
            let dir = rng.gen_range(0.0..std::f32::consts::TAU);
            Person {
                x: rng.gen_range(lo.0..=hi.0),
                y: rng.gen_range(lo.1..=hi.1),
                vx: speed * dir.cos(),
                vy: speed * dir.sin(),
                radius: rng.gen_range(spec.radius_range.0..=spec.radius_range.1),
                color: [
                    rng.gen_range(0.55..1.0),
                    rng.gen_range(0.3..0.95),
                    rng.gen_range(0.25..0.9),
                ],
                texture_seed: spec.seed.wrapping_mul(31).wrapping_add(i as u64 * 7919),
            }
        })
        .collect()
}

/// Renders one frame. Returns the image and, per pixel, the index of the
/// topmost person with alpha >= 0.5.
fn render(spec: &SceneSpec, persons: &[Person], jitter: (f32, f32)) -> (RgbImage, Vec<Option<usize>>) {
    let (w, h) = (spec.width, spec.height);
    let mut img = RgbImage::new(w, h);
    let mut owner = vec![None; w * h];
    let n = w * h;
    for y in 0..h {
        for x in 0..w {
            let rgb = background_rgb(spec, x as f32 - jitter.0, y as f32 - jitter.1);
            for c in 0..3 {
                img.data[c * n + y * w + x] = rgb[c];
            }
        }
    }
    for (idx, p) in persons.iter().enumerate() {
        let (cx, cy) = (p.x + jitter.0, p.y + jitter.1);
        let reach = p.radius + 1.0;
        let x0 = (cx - reach).floor().max(0.0) as usize;
        let x1 = ((cx + reach).ceil() as usize).min(w - 1);
        let y0 = (cy - reach).floor().max(0.0) as usize;
        let y1 = ((cy + reach).ceil() as usize).min(h - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (lx, ly) = (x as f32 - cx, y as f32 - cy);
                let d = lx.hypot(ly);
                let alpha = (p.radius + 0.5 - d).clamp(0.0, 1.0);
                if alpha <= 0.0 {
                    continue;
                }
                let rgb = person_rgb(p, lx, ly);
                let i = y * w + x;
                for c in 0..3 {
                    let dst = &mut img.data[c * n + i];
                    *dst = *dst * (1.0 - alpha) + rgb[c] * alpha;
                }
                if alpha >= 0.5 {
                    owner[i] = Some(idx);
                }
            }
        }
    }
    (img, owner)
}

pub fn generate_sequence(spec: &SceneSpec) -> Result<GeneratedSequence, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let margin = spec.jitter;
    let lo = (margin, margin);
    let hi = (
        spec.width as f32 - 1.0 - margin,
        spec.height as f32 - 1.0 - margin,
    );
    let mut persons = init_persons(spec, &mut rng, lo, hi);
    for p in &persons {
        if !(p.x >= lo.0 && p.x <= hi.0 && p.y >= lo.1 && p.y <= hi.1) {
            return Err(SynthError::Invalid(format!(
                "person at ({}, {}) outside the jitter margin",
                p.x, p.y
            )));
        }
    }

    let mut jitters = Vec::with_capacity(spec.frames);
    let mut centers: Vec<Vec<(f32, f32)>> = Vec::with_capacity(spec.frames);
    let mut frames = Vec::with_capacity(spec.frames);
    let mut owners = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let j = if spec.jitter > 0.0 {
            (
                rng.gen_range(-spec.jitter..=spec.jitter),
                rng.gen_range(-spec.jitter..=spec.jitter),
            )
        } else {
            (0.0, 0.0)
        };
        if t > 0 {
            for p in &mut persons {
                (p.x, p.vx) = reflect(p.x, p.vx, lo.0, hi.0);
                (p.y, p.vy) = reflect(p.y, p.vy, lo.1, hi.1);
            }
        }
        let (img, owner) = render(spec, &persons, j);
        centers.push(persons.iter().map(|p| (p.x + j.0, p.y + j.1)).collect());
        jitters.push(j);
        frames.push(img);
        owners.push(owner);
    }
    let frames = apply_night(&frames, spec.luminance)?;

    let dots = centers
        .iter()
        .map(|cs| {
            DotMap::new(
                spec.width,
                spec.height,
                cs.iter().map(|&(x, y)| (x as f64, y as f64)),
            )
            .map_err(|e| SynthError::Invalid(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let flows = (0..spec.frames - 1)
        .map(|t| {
            let bg = (jitters[t + 1].0 - jitters[t].0, jitters[t + 1].1 - jitters[t].1);
            let mut f = FlowField::uniform(spec.width, spec.height, bg.0, bg.1);
            for (i, o) in owners[t].iter().enumerate() {
                if let Some(k) = *o {
                    f.u.data[i] = centers[t + 1][k].0 - centers[t][k].0;
                    f.v.data[i] = centers[t + 1][k].1 - centers[t][k].1;
                }
            }
            f
        })
        .collect();

    let person_masks = owners
        .iter()
        .map(|o| o.iter().map(Option::is_some).collect())
        .collect();
    Ok(GeneratedSequence {
        frames,
        dots,
        flows,
        person_masks,
        spec: spec.clone(),
    })
}

/// Multiplies every channel by `luminance` and clamps to `[0, 1]`.
pub fn apply_night(frames: &[RgbImage], luminance: f32) -> Result<Vec<RgbImage>, SynthError> {
    if !(luminance > 0.0 && luminance <= 1.0) {
        return Err(SynthError::Invalid(format!(
            "luminance {luminance} outside (0, 1]"
        )));
    }
    Ok(frames
        .iter()
        .map(|f| {
            if luminance == 1.0 {
                return f.clone();
            }
            let mut out = f.clone();
            out.data
                .iter_mut()
                .for_each(|v| *v = (*v * luminance).clamp(0.0, 1.0));
            out
        })
        .collect())
}
