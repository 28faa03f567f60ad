use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{Container, Payload, Record};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::Rng;

/// Knobs that make a sequence harder to track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Difficulty {
    /// Std-dev of the per-frame velocity kick, in pixels.
    pub motion: f64,
    /// Per-frame appearance random-walk step (texture and brightness).
    pub drift: f64,
    /// Std-dev of i.i.d. pixel noise.
    pub noise: f64,
    /// Number of moving look-alike patches.
    pub distractors: usize,
}

impl Default for Difficulty {
    fn default() -> Self {
        Self {
            motion: 1.0,
            drift: 0.02,
            noise: 0.05,
            distractors: 2,
        }
    }
}

impl Difficulty {
    pub const STATIC: Difficulty = Difficulty {
        motion: 0.0,
        drift: 0.0,
        noise: 0.0,
        distractors: 0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub object_w: usize,
    pub object_h: usize,
    pub difficulty: Difficulty,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 88,
            width: 88,
            object_w: 16,
            object_h: 16,
            difficulty: Difficulty::default(),
        }
    }
}

/// Grayscale frames in `[0, 1]` plus the true box of the object in each.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSequence {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub difficulty: Difficulty,
    /// Row-major `height x width` images.
    pub frames: Vec<Vec<f32>>,
    pub truth: Vec<BoundingBox>,
}

impl SyntheticSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Uniform noise on a coarse lattice, bilinearly upsampled to `h x w`.
fn smooth_noise(h: usize, w: usize, cell: usize, rng: &mut Rng) -> Vec<f32> {
    let gh = h / cell + 2;
    let gw = w / cell + 2;
    let grid: Vec<f64> = (0..gh * gw).map(|_| rng.uniform()).collect();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let fy = y as f64 / cell as f64;
        let (y0, ty) = (fy.floor() as usize, fy.fract());
        for x in 0..w {
            let fx = x as f64 / cell as f64;
            let (x0, tx) = (fx.floor() as usize, fx.fract());
            let g = |r: usize, c: usize| grid[r * gw + c];
            let top = g(y0, x0) * (1.0 - tx) + g(y0, x0 + 1) * tx;
            let bot = g(y0 + 1, x0) * (1.0 - tx) + g(y0 + 1, x0 + 1) * tx;
            out.push((top * (1.0 - ty) + bot * ty) as f32);
        }
    }
    out
}

/// Random walk with damped velocity, reflected to stay in `[0, max]`.
struct Walker {
    pos: (f64, f64),
    vel: (f64, f64),
    max: (f64, f64),
}

impl Walker {
    fn new(max: (f64, f64), rng: &mut Rng) -> Self {
        Self {
            pos: (rng.uniform_in(0.0, max.0), rng.uniform_in(0.0, max.1)),
            vel: (0.0, 0.0),
            max,
        }
    }

    fn step(&mut self, scale: f64, rng: &mut Rng) {
        if scale == 0.0 {
            return;
        }
        self.vel.0 = 0.8 * self.vel.0 + scale * rng.normal();
        self.vel.1 = 0.8 * self.vel.1 + scale * rng.normal();
        let reflect = |p: f64, v: &mut f64, max: f64| {
            let mut p = p + *v;
            if p < 0.0 {
                p = -p;
                *v = -*v;
            }
            if p > max {
                p = 2.0 * max - p;
                *v = -*v;
            }
            p.clamp(0.0, max)
        };
        self.pos.0 = reflect(self.pos.0, &mut self.vel.0, self.max.0);
        self.pos.1 = reflect(self.pos.1, &mut self.vel.1, self.max.1);
    }

    fn corner(&self) -> (usize, usize) {
        (self.pos.0.round() as usize, self.pos.1.round() as usize)
    }
}

struct Sprite {
    texture: Vec<f32>,
    brightness: f32,
    walker: Walker,
}

impl Sprite {
    fn draw(&self, img: &mut [f32], width: usize, ow: usize, oh: usize) {
        let (x0, y0) = self.walker.corner();
        for y in 0..oh {
            let row = &mut img[(y0 + y) * width + x0..][..ow];
            for (p, &t) in row.iter_mut().zip(&self.texture[y * ow..(y + 1) * ow]) {
                *p = (t + self.brightness).clamp(0.0, 1.0);
            }
        }
    }

    fn drift(&mut self, amount: f64, rng: &mut Rng) {
        if amount == 0.0 {
            return;
        }
        for t in &mut self.texture {
            *t = (*t + (amount * rng.normal()) as f32).clamp(0.0, 1.0);
        }
        self.brightness = (self.brightness + (0.5 * amount * rng.normal()) as f32).clamp(-0.3, 0.3);
    }
}

fn object_texture(ow: usize, oh: usize, rng: &mut Rng) -> Vec<f32> {
    let base = smooth_noise(oh, ow, 3, rng);
    // stretch to full contrast
    let (lo, hi) = base.iter().fold((f32::MAX, f32::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    let span = (hi - lo).max(1e-6);
    base.iter().map(|&v| (v - lo) / span).collect()
}

/// Deterministic synthetic sequence of `length` frames.
///
/// The background is smoothed noise in `[0.25, 0.55]`. The object is a
/// full-contrast textured patch moving on a damped random walk reflected at
/// the borders; its texture and brightness drift each frame. Distractors are
/// patches blending the object's initial texture with fresh noise and move
/// independently under the object. Pixel noise is added last and the result
/// clamped to `[0, 1]`. Truth boxes are the integer corners the object is
/// drawn at.
pub fn gen_sequence(seed: u64, length: usize, scene: &SceneConfig) -> Result<SyntheticSequence> {
    let SceneConfig {
        height,
        width,
        object_w: ow,
        object_h: oh,
        difficulty: d,
    } = *scene;
    if length < 2 {
        return Err(Error::invalid("gen_sequence", format!("length {length} below 2")));
    }
    if ow == 0 || oh == 0 || ow > width || oh > height {
        return Err(Error::invalid("gen_sequence", format!("object {ow}x{oh} does not fit {width}x{height}")));
    }
    if ![d.motion, d.drift, d.noise].iter().all(|v| v.is_finite() && *v >= 0.0) {
        return Err(Error::invalid("gen_sequence", format!("bad difficulty {d:?}")));
    }
    let mut rng = Rng::derive(seed, 0);
    let mut motion_rng = Rng::derive(seed, 1);
    let mut look_rng = Rng::derive(seed, 2);
    let mut noise_rng = Rng::derive(seed, 3);

    let background: Vec<f32> = smooth_noise(height, width, 8, &mut rng).iter().map(|v| 0.25 + 0.3 * v).collect();
    let max = ((width - ow) as f64, (height - oh) as f64);
    let texture = object_texture(ow, oh, &mut rng);
    let mut object = Sprite {
        texture: texture.clone(),
        brightness: 0.0,
        walker: Walker::new(max, &mut rng),
    };
    let mut distractors: Vec<Sprite> = (0..d.distractors)
        .map(|_| {
            let fresh = object_texture(ow, oh, &mut rng);
            Sprite {
                texture: texture.iter().zip(&fresh).map(|(a, b)| 0.4 * a + 0.6 * b).collect(),
                brightness: 0.0,
                walker: Walker::new(max, &mut rng),
            }
        })
        .collect();

    let mut frames = Vec::with_capacity(length);
    let mut truth = Vec::with_capacity(length);
    for t in 0..length {
        if t > 0 {
            object.walker.step(d.motion, &mut motion_rng);
            for s in &mut distractors {
                s.walker.step(d.motion, &mut motion_rng);
            }
            object.drift(d.drift, &mut look_rng);
        }
        let mut img = background.clone();
        for s in &distractors {
            s.draw(&mut img, width, ow, oh);
        }
        object.draw(&mut img, width, ow, oh);
        if d.noise > 0.0 {
            for p in &mut img {
                *p = (*p + (d.noise * noise_rng.normal()) as f32).clamp(0.0, 1.0);
            }
        }
        let (x, y) = object.walker.corner();
        truth.push(BoundingBox::new(x as f64, y as f64, ow as f64, oh as f64)?);
        frames.push(img);
    }
    Ok(SyntheticSequence {
        seed,
        height,
        width,
        difficulty: d,
        frames,
        truth,
    })
}

/// Store a sequence in the tensor container: `frames` (f32, `[T, H, W]`),
/// `truth` (f32, `[T, 4]` as x, y, w, h) and `meta` (f64: seed high and low
/// 32-bit halves, motion, drift, noise, distractors).
pub fn save_sequence(seq: &SyntheticSequence, path: impl AsRef<Path>) -> Result<()> {
    let t = seq.len() as u32;
    let mut c = Container::default();
    c.push(Record::new(
        "frames",
        vec![t, seq.height as u32, seq.width as u32],
        Payload::F32(seq.frames.concat()),
    )?);
    let boxes = seq.truth.iter().flat_map(|b| [b.x as f32, b.y as f32, b.w as f32, b.h as f32]).collect();
    c.push(Record::new("truth", vec![t, 4], Payload::F32(boxes))?);
    let d = seq.difficulty;
    let meta = vec![
        (seq.seed >> 32) as f64,
        (seq.seed & 0xffff_ffff) as f64,
        d.motion,
        d.drift,
        d.noise,
        d.distractors as f64,
    ];
    c.push(Record::new("meta", vec![6], Payload::F64(meta))?);
    c.save(path)
}

pub fn load_sequence(path: impl AsRef<Path>) -> Result<SyntheticSequence> {
    let c = Container::load(path)?;
    let frames = c.require("frames")?;
    let truth = c.require("truth")?;
    let meta = c.require("meta")?;
    let (Payload::F32(pixels), Payload::F32(boxes), Payload::F64(meta)) = (&frames.payload, &truth.payload, &meta.payload) else {
        return Err(Error::Format("sequence fixture has unexpected dtypes".into()));
    };
    let [t, h, w] = frames.dims[..] else {
        return Err(Error::Format(format!("frames dims {:?}", frames.dims)));
    };
    if truth.dims != [t, 4] || meta.len() != 6 {
        return Err(Error::Format(format!("truth dims {:?} for {t} frames", truth.dims)));
    }
    let (h, w) = (h as usize, w as usize);
    let truth = boxes
        .chunks_exact(4)
        .map(|b| BoundingBox::new(f64::from(b[0]), f64::from(b[1]), f64::from(b[2]), f64::from(b[3])))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok(SyntheticSequence {
        seed: ((meta[0] as u64) << 32) | meta[1] as u64,
        height: h,
        width: w,
        difficulty: Difficulty {
            motion: meta[2],
            drift: meta[3],
            noise: meta[4],
            distractors: meta[5] as usize,
        },
        frames: pixels.chunks_exact(h * w).map(<[f32]>::to_vec).collect(),
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_scene_keeps_box() {
        let scene = SceneConfig {
            difficulty: Difficulty::STATIC,
            ..SceneConfig::default()
        };
        let s = gen_sequence(3, 30, &scene).unwrap();
        assert!(s.truth.iter().all(|b| *b == s.truth[0]));
        assert!(s.frames.iter().all(|f| *f == s.frames[0]));
    }

    #[test]
    fn deterministic_and_sized() {
        let scene = SceneConfig::default();
        let a = gen_sequence(11, 200, &scene).unwrap();
        let b = gen_sequence(11, 200, &scene).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 200);
        assert_eq!(a.truth.len(), 200);
        assert_ne!(a, gen_sequence(12, 200, &scene).unwrap());
    }

    #[test]
    fn boxes_stay_inside_and_pixels_in_range() {
        let scene = SceneConfig {
            difficulty: Difficulty {
                motion: 4.0,
                ..Difficulty::default()
            },
            ..SceneConfig::default()
        };
        let s = gen_sequence(5, 300, &scene).unwrap();
        for b in &s.truth {
            assert!(b.x >= 0.0 && b.y >= 0.0 && b.x + b.w <= 88.0 && b.y + b.h <= 88.0);
            assert!(b.intersects_image(s.width, s.height));
        }
        assert!(s.frames.iter().flatten().all(|&p| (0.0..=1.0).contains(&p)));
        assert!(s.truth.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn rejects_short_or_oversized() {
        assert!(gen_sequence(1, 1, &SceneConfig::default()).is_err());
        let big = SceneConfig {
            object_w: 100,
            ..SceneConfig::default()
        };
        assert!(gen_sequence(1, 5, &big).is_err());
    }

    #[test]
    fn fixture_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("seq.dmix");
        let s = gen_sequence(u64::MAX - 7, 12, &SceneConfig::default()).unwrap();
        save_sequence(&s, &p).unwrap();
        assert_eq!(load_sequence(&p).unwrap(), s);
    }
}
