//! Synthetic moving-camera crowd clips with exact identities.
//!
//! Persons random-walk in a world plane with reflecting borders; a viewport
//! moves over the world following a camera path. Each frame renders the
//! viewport and annotates every person whose center lies inside it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::annotations::{flags_from_ids, ClipAnnotation, FrameAnnotation, HeadPoint, Supervision};
use crate::error::{Error, Result};
use crate::image::Image;

/// Annotation coordinates are snapped to this grid so that box corners
/// written to CSV re-parse to the identical center.
const COORD_QUANTUM: f64 = 1.0 / 256.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraKey {
    /// World coordinate of the viewport's top-left corner.
    pub x: f64,
    pub y: f64,
    /// Viewport pixels per world unit.
    pub zoom: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CameraPath {
    /// One key per frame.
    Keyframes { keys: Vec<CameraKey> },
    /// Linear interpolation from `start` (first frame) to `end` (last frame).
    Linear { start: CameraKey, end: CameraKey },
}

impl CameraPath {
    pub fn fixed(key: CameraKey) -> Self {
        CameraPath::Linear { start: key, end: key }
    }

    pub fn resolve(&self, n_frames: usize) -> Result<Vec<CameraKey>> {
        match self {
            CameraPath::Keyframes { keys } => {
                if keys.len() != n_frames {
                    return Err(Error::Config(format!(
                        "camera path has {} keys for {n_frames} frames",
                        keys.len()
                    )));
                }
                Ok(keys.clone())
            }
            CameraPath::Linear { start, end } => Ok((0..n_frames)
                .map(|i| {
                    let t = if n_frames > 1 {
                        i as f64 / (n_frames - 1) as f64
                    } else {
                        0.0
                    };
                    CameraKey {
                        x: start.x + t * (end.x - start.x),
                        y: start.y + t * (end.y - start.y),
                        zoom: start.zoom + t * (end.zoom - start.zoom),
                    }
                })
                .collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderStyle {
    Dots,
    GaussianBlobs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub clip_id: String,
    pub world_width: f64,
    pub world_height: f64,
    pub n_persons: usize,
    /// Per-person speed is drawn uniformly from this range (world units / frame).
    pub speed_min: f64,
    pub speed_max: f64,
    pub camera_path: CameraPath,
    pub viewport_width: u32,
    pub viewport_height: u32,
    pub n_frames: usize,
    pub render: RenderStyle,
    /// Blob standard deviation in viewport pixels.
    pub blob_sigma: f64,
    pub fps: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            clip_id: "synth".into(),
            world_width: 160.0,
            world_height: 128.0,
            n_persons: 40,
            speed_min: 0.3,
            speed_max: 1.2,
            camera_path: CameraPath::Linear {
                start: CameraKey {
                    x: 0.0,
                    y: 32.0,
                    zoom: 1.0,
                },
                end: CameraKey {
                    x: 96.0,
                    y: 32.0,
                    zoom: 1.0,
                },
            },
            viewport_width: 64,
            viewport_height: 64,
            n_frames: 16,
            render: RenderStyle::GaussianBlobs,
            blob_sigma: 1.5,
            fps: 5.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<Vec<CameraKey>> {
        if !(self.world_width > 0.0 && self.world_height > 0.0) {
            return Err(Error::Config("world size must be positive".into()));
        }
        if self.viewport_width == 0 || self.viewport_height == 0 {
            return Err(Error::Config("viewport size must be positive".into()));
        }
        if self.n_frames == 0 {
            return Err(Error::Config("n_frames must be >= 1".into()));
        }
        if !(0.0 <= self.speed_min && self.speed_min <= self.speed_max) {
            return Err(Error::Config(format!(
                "speed range [{}, {}] is invalid",
                self.speed_min, self.speed_max
            )));
        }
        if !(self.blob_sigma > 0.0) {
            return Err(Error::Config("blob_sigma must be positive".into()));
        }
        let keys = self.camera_path.resolve(self.n_frames)?;
        let eps = 1e-9;
        for (i, k) in keys.iter().enumerate() {
            if !(k.zoom > 0.0) {
                return Err(Error::Config(format!("frame {i}: zoom must be positive")));
            }
            let span_w = self.viewport_width as f64 / k.zoom;
            let span_h = self.viewport_height as f64 / k.zoom;
            if k.x < -eps
                || k.y < -eps
                || k.x + span_w > self.world_width + eps
                || k.y + span_h > self.world_height + eps
            {
                return Err(Error::Config(format!(
                    "frame {i}: viewport must fit inside the world ({:.1}x{:.1} at ({}, {}) in {}x{})",
                    span_w, span_h, k.x, k.y, self.world_width, self.world_height
                )));
            }
        }
        Ok(keys)
    }
}

/// Output of [`generate`]; `positions[t][p]` is person `p`'s world position
/// at frame `t`.
#[derive(Debug, Clone)]
pub struct SyntheticClip {
    pub frames: Vec<Image>,
    pub clip: ClipAnnotation,
    pub positions: Vec<Vec<(f64, f64)>>,
    pub cameras: Vec<CameraKey>,
}

struct Person {
    x: f64,
    y: f64,
    heading: f64,
    speed: f64,
    color: [f32; 3],
}

fn reflect(v: f64, hi: f64) -> (f64, bool) {
    if v < 0.0 {
        (-v, true)
    } else if v > hi {
        (2.0 * hi - v, true)
    } else {
        (v, false)
    }
}

fn quantize(v: f64) -> f64 {
    (v / COORD_QUANTUM).round() * COORD_QUANTUM
}

/// Viewport pixel coordinates of a world point.
pub fn project(cam: &CameraKey, wx: f64, wy: f64) -> (f64, f64) {
    (quantize((wx - cam.x) * cam.zoom), quantize((wy - cam.y) * cam.zoom))
}

pub fn generate(config: &SynthConfig) -> Result<SyntheticClip> {
    let cameras = config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let turn = Normal::new(0.0, 0.3).expect("valid normal");

    let mut persons: Vec<Person> = (0..config.n_persons)
        .map(|_| {
            let hue = rng.random::<f32>();
            Person {
                x: rng.random::<f64>() * config.world_width,
                y: rng.random::<f64>() * config.world_height,
                heading: rng.random::<f64>() * std::f64::consts::TAU,
                speed: rng.random_range(config.speed_min..=config.speed_max),
                color: hue_color(hue),
            }
        })
        .collect();

    let (vw, vh) = (config.viewport_width, config.viewport_height);
    let mut frames = Vec::with_capacity(config.n_frames);
    let mut annotations = Vec::with_capacity(config.n_frames);
    let mut positions = Vec::with_capacity(config.n_frames);

    for (t, cam) in cameras.iter().enumerate() {
        if t > 0 {
            for p in &mut persons {
                p.heading += turn.sample(&mut rng);
                let (nx, fx) = reflect(p.x + p.speed * p.heading.cos(), config.world_width);
                let (ny, fy) = reflect(p.y + p.speed * p.heading.sin(), config.world_height);
                if fx {
                    p.heading = std::f64::consts::PI - p.heading;
                }
                if fy {
                    p.heading = -p.heading;
                }
                p.x = nx;
                p.y = ny;
            }
        }
        positions.push(persons.iter().map(|p| (p.x, p.y)).collect());

        let points: Vec<HeadPoint> = persons
            .iter()
            .enumerate()
            .filter_map(|(id, p)| {
                let (x, y) = project(cam, p.x, p.y);
                ((0.0..vw as f64).contains(&x) && (0.0..vh as f64).contains(&y))
                    .then(|| HeadPoint::with_id(x, y, id as u64))
            })
            .collect();
        annotations.push(FrameAnnotation::new(t, vw, vh, points));
        frames.push(render(config, cam, &persons));
    }

    let clip = ClipAnnotation {
        clip_id: config.clip_id.clone(),
        frames: annotations,
        fps: config.fps,
        supervision: Supervision::Full,
    };
    Ok(SyntheticClip {
        frames,
        clip,
        positions,
        cameras,
    })
}

fn hue_color(h: f32) -> [f32; 3] {
    let f = |n: f32| {
        let k = (n + h * 6.0) % 6.0;
        0.9 - 0.8 * (k.min(4.0 - k).clamp(0.0, 1.0))
    };
    [f(5.0), f(3.0), f(1.0)]
}

/// World-fixed texture so that camera motion is visible in the background.
fn background(wx: f64, wy: f64) -> [f32; 3] {
    let a = (0.21 * wx + 0.7).sin() * (0.17 * wy).sin();
    let b = (0.05 * (wx + 2.0 * wy)).sin();
    let c = (0.11 * wx - 0.09 * wy + 1.3).cos();
    [
        (0.45 + 0.12 * a + 0.08 * b) as f32,
        (0.45 + 0.10 * b + 0.06 * c) as f32,
        (0.40 + 0.10 * c + 0.05 * a) as f32,
    ]
}

fn render(config: &SynthConfig, cam: &CameraKey, persons: &[Person]) -> Image {
    let (vw, vh) = (config.viewport_width as usize, config.viewport_height as usize);
    let mut img = Image::filled(vw, vh, [0.0; 3]);
    for y in 0..vh {
        for x in 0..vw {
            let wx = cam.x + x as f64 / cam.zoom;
            let wy = cam.y + y as f64 / cam.zoom;
            img.set_pixel(x, y, background(wx, wy));
        }
    }
    let sigma = config.blob_sigma;
    let reach = (3.0 * sigma).ceil() as isize;
    for p in persons {
        let px = (p.x - cam.x) * cam.zoom;
        let py = (p.y - cam.y) * cam.zoom;
        let (cx, cy) = (px.round() as isize, py.round() as isize);
        if cx < -reach || cy < -reach || cx >= vw as isize + reach || cy >= vh as isize + reach {
            continue;
        }
        match config.render {
            RenderStyle::Dots => {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (x, y) = (cx + dx, cy + dy);
                        if x >= 0 && y >= 0 && (x as usize) < vw && (y as usize) < vh {
                            img.set_pixel(x as usize, y as usize, p.color);
                        }
                    }
                }
            }
            RenderStyle::GaussianBlobs => {
                for y in (cy - reach).max(0)..(cy + reach + 1).min(vh as isize) {
                    for x in (cx - reach).max(0)..(cx + reach + 1).min(vw as isize) {
                        let d2 = (x as f64 - px).powi(2) + (y as f64 - py).powi(2);
                        let a = (-d2 / (2.0 * sigma * sigma)).exp() as f32;
                        let old = img.pixel(x as usize, y as usize);
                        let mixed = [
                            old[0] * (1.0 - a) + p.color[0] * a,
                            old[1] * (1.0 - a) + p.color[1] * a,
                            old[2] * (1.0 - a) + p.color[2] * a,
                        ];
                        img.set_pixel(x as usize, y as usize, mixed);
                    }
                }
            }
        }
    }
    img
}

/// Weakly labelled copy: identities erased, inflow/outflow flags set relative
/// to the frames `stride` before and after each frame.
pub fn weak_labels_from_ids(clip: &ClipAnnotation, stride: usize) -> Result<ClipAnnotation> {
    if stride == 0 {
        return Err(Error::Parameter("stride must be >= 1".into()));
    }
    let flags = flags_from_ids(clip, stride)?;
    let frames = clip
        .frames
        .iter()
        .zip(flags)
        .map(|(f, fl)| FrameAnnotation {
            points: f
                .points
                .iter()
                .zip(fl)
                .map(|(p, flags)| HeadPoint {
                    track_id: None,
                    flags,
                    ..p.clone()
                })
                .collect(),
            ..f.clone()
        })
        .collect();
    Ok(ClipAnnotation {
        frames,
        supervision: Supervision::Weak,
        ..clip.clone()
    })
}
