//! Procedural multi-view and scene dataset used for desk-scale runs.
//!
//! Every object is a textured sprite (ellipse or irregular polygon with a
//! two-colour pattern). Multi-view records render the sprite alone on a
//! black background at different rotations and lightness; scene records
//! place it on a textured background, drifting across frames, under a
//! global colour cast that differs from the multi-view renderings.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{read_file, write_file, ImageBuffer, MaskBuffer};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub objects: usize,
    pub views_per_object: usize,
    /// Frames per scene sequence; 0 disables scene generation.
    pub frames_per_scene: usize,
    pub image_size: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            objects: 20,
            views_per_object: 12,
            frames_per_scene: 12,
            image_size: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Multiview,
    Scene,
}

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub kind: RecordKind,
    pub object_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_id: Option<u32>,
    pub image_path: String,
    pub mask_path: String,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("record serializes"));
            s.push('\n');
        }
        s
    }

    pub fn parse_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Parse(format!("manifest line {}: {e}", i + 1)))
            })
            .collect::<Result<_>>()?;
        Ok(Manifest { records })
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let bytes = read_file(dir.as_ref().join(MANIFEST_FILE))?;
        Self::parse_jsonl(&String::from_utf8_lossy(&bytes))
    }

    pub fn count(&self, kind: RecordKind) -> usize {
        self.records.iter().filter(|r| r.kind == kind).count()
    }
}

#[derive(Debug, Clone, Copy)]
enum Pattern {
    Stripes { angle: f64, period: f64 },
    Checker { period: f64 },
    Rings { period: f64 },
    Dots { period: f64, radius: f64 },
}

#[derive(Debug, Clone)]
struct Sprite {
    /// Radii at evenly spaced angles; a single entry pair means an ellipse.
    radii: Vec<f64>,
    ellipse: Option<(f64, f64)>,
    colors: [[f64; 3]; 2],
    pattern: Pattern,
}

fn object_rng(seed: u64, object: u32, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(((object as u64) << 8) | stream);
    rng
}

fn random_color<R: Rng>(rng: &mut R) -> [f64; 3] {
    [
        rng.random_range(0.1..0.95),
        rng.random_range(0.1..0.95),
        rng.random_range(0.1..0.95),
    ]
}

impl Sprite {
    fn new(seed: u64, object: u32) -> Self {
        let mut rng = object_rng(seed, object, 0);
        let ellipse = if rng.random_bool(0.35) {
            Some((rng.random_range(0.55..1.0), rng.random_range(0.55..1.0)))
        } else {
            None
        };
        let k = rng.random_range(5..=8);
        let radii = (0..k).map(|_| rng.random_range(0.6..1.0)).collect();
        let c1 = random_color(&mut rng);
        let mut c2 = random_color(&mut rng);
        // keep the two pattern colours visibly apart
        if (0..3).map(|i| (c1[i] - c2[i]).abs()).sum::<f64>() < 0.6 {
            c2 = c1.map(|v| if v > 0.5 { v - 0.45 } else { v + 0.45 });
        }
        let period = rng.random_range(0.18..0.4);
        let pattern = match rng.random_range(0..4) {
            0 => Pattern::Stripes {
                angle: rng.random_range(0.0..TAU),
                period,
            },
            1 => Pattern::Checker { period },
            2 => Pattern::Rings { period },
            _ => Pattern::Dots {
                period,
                radius: rng.random_range(0.25..0.4) * period,
            },
        };
        Sprite {
            radii,
            ellipse,
            colors: [c1, c2],
            pattern,
        }
    }

    /// Shape membership in unit object coordinates.
    fn inside(&self, u: f64, v: f64) -> bool {
        if let Some((a, b)) = self.ellipse {
            return (u / a).powi(2) + (v / b).powi(2) <= 1.0;
        }
        let r = (u * u + v * v).sqrt();
        let k = self.radii.len();
        let t = v.atan2(u).rem_euclid(TAU) / TAU * k as f64;
        let i = t.floor() as usize % k;
        let f = t - t.floor();
        // straight edges between vertices, evaluated in polar form
        let (r0, r1) = (self.radii[i], self.radii[(i + 1) % k]);
        let a0 = i as f64 / k as f64 * TAU;
        let a1 = a0 + TAU / k as f64;
        let (p0, p1) = ((r0 * a0.cos(), r0 * a0.sin()), (r1 * a1.cos(), r1 * a1.sin()));
        let ang = a0 + f * TAU / k as f64;
        let (dx, dy) = (ang.cos(), ang.sin());
        let ex = (p1.0 - p0.0, p1.1 - p0.1);
        let denom = dx * ex.1 - dy * ex.0;
        if denom.abs() < 1e-12 {
            return r <= r0.min(r1);
        }
        let edge_r = (p0.0 * ex.1 - p0.1 * ex.0) / denom;
        r <= edge_r
    }

    fn color(&self, u: f64, v: f64) -> [f64; 3] {
        let pick = match self.pattern {
            Pattern::Stripes { angle, period } => {
                let d = u * angle.cos() + v * angle.sin();
                (d / period).floor() as i64 % 2 == 0
            }
            Pattern::Checker { period } => {
                ((u / period).floor() as i64 + (v / period).floor() as i64) % 2 == 0
            }
            Pattern::Rings { period } => ((u * u + v * v).sqrt() / period).floor() as i64 % 2 == 0,
            Pattern::Dots { period, radius } => {
                let fu = u.rem_euclid(period) - period / 2.0;
                let fv = v.rem_euclid(period) - period / 2.0;
                fu * fu + fv * fv > radius * radius
            }
        };
        if pick {
            self.colors[0]
        } else {
            self.colors[1]
        }
    }
}

struct Placement {
    cy: f64,
    cx: f64,
    radius: f64,
    rotation: f64,
    lightness: f64,
}

fn render_sprite(
    sprite: &Sprite,
    size: usize,
    place: &Placement,
    background: impl Fn(usize, usize) -> [f64; 3],
    tint: [f64; 3],
) -> (Vec<f64>, Vec<bool>) {
    let mut img = Vec::with_capacity(size * size * 3);
    let mut mask = Vec::with_capacity(size * size);
    let (s, c) = place.rotation.sin_cos();
    for r in 0..size {
        for col in 0..size {
            let dy = (r as f64 - place.cy) / place.radius;
            let dx = (col as f64 - place.cx) / place.radius;
            let u = c * dx + s * dy;
            let v = -s * dx + c * dy;
            let on = sprite.inside(u, v);
            let p = if on {
                sprite.color(u, v).map(|x| x * place.lightness)
            } else {
                background(r, col)
            };
            for k in 0..3 {
                img.push((p[k] * tint[k]).clamp(0.0, 1.0));
            }
            mask.push(on);
        }
    }
    (img, mask)
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn to_buffers<T: Scalar>(size: usize, img: Vec<f64>, mask: Vec<bool>) -> Result<(ImageBuffer<T>, MaskBuffer<T>)> {
    let image = ImageBuffer::new(size, size, img.into_iter().map(|v| T::c(quantize(v))).collect())?;
    let mask = MaskBuffer::new(
        size,
        size,
        mask.into_iter().map(|b| if b { T::one() } else { T::zero() }).collect(),
    )?;
    Ok((image, mask))
}

/// Renders view `view` of `object` on a black background.
pub fn render_view<T: Scalar>(cfg: &SyntheticConfig, object: u32, view: u32) -> Result<(ImageBuffer<T>, MaskBuffer<T>)> {
    let sprite = Sprite::new(cfg.seed, object);
    let mut rng = object_rng(cfg.seed, object, 1 + view as u64 * 2);
    let n = cfg.image_size as f64;
    let base = TAU * view as f64 / cfg.views_per_object.max(1) as f64;
    let place = Placement {
        cy: (n - 1.0) / 2.0 + rng.random_range(-0.04..0.04) * n,
        cx: (n - 1.0) / 2.0 + rng.random_range(-0.04..0.04) * n,
        radius: n * rng.random_range(0.34..0.42),
        rotation: base + rng.random_range(-0.2..0.2),
        lightness: rng.random_range(0.75..1.15),
    };
    let (img, mask) = render_sprite(&sprite, cfg.image_size, &place, |_, _| [0.0; 3], [1.0; 3]);
    to_buffers(cfg.image_size, img, mask)
}

/// Renders frame `frame` of `object`'s scene sequence.
pub fn render_frame<T: Scalar>(cfg: &SyntheticConfig, object: u32, frame: u32) -> Result<(ImageBuffer<T>, MaskBuffer<T>)> {
    let sprite = Sprite::new(cfg.seed, object);
    let mut rng = object_rng(cfg.seed, object, 255);
    let n = cfg.image_size as f64;
    let radius = n * rng.random_range(0.2..0.27);
    let margin = radius + 1.0;
    let start = (rng.random_range(margin..n - margin), rng.random_range(margin..n - margin));
    let end = (rng.random_range(margin..n - margin), rng.random_range(margin..n - margin));
    let rot0 = rng.random_range(0.0..TAU);
    let spin = rng.random_range(-0.15..0.15);
    let bg_a = random_color(&mut rng);
    let bg_b = random_color(&mut rng);
    let bg_angle = rng.random_range(0.0..TAU);
    let bg_freq = rng.random_range(1.0..3.0);
    let tint0: [f64; 3] = [
        rng.random_range(0.8..1.15),
        rng.random_range(0.8..1.15),
        rng.random_range(0.8..1.15),
    ];
    let tint_drift: [f64; 3] = [
        rng.random_range(-0.01..0.01),
        rng.random_range(-0.01..0.01),
        rng.random_range(-0.01..0.01),
    ];
    let frames = cfg.frames_per_scene.max(2) as f64;
    let f = frame as f64 / (frames - 1.0);
    let place = Placement {
        cy: start.0 + (end.0 - start.0) * f,
        cx: start.1 + (end.1 - start.1) * f,
        radius,
        rotation: rot0 + spin * frame as f64,
        lightness: 1.0,
    };
    let tint = [0, 1, 2].map(|k| tint0[k] + tint_drift[k] * frame as f64);
    let (sa, ca) = bg_angle.sin_cos();
    let background = |r: usize, c: usize| {
        let (y, x) = (r as f64 / n, c as f64 / n);
        let t = (x * ca + y * sa).rem_euclid(1.0);
        let wave = 0.5 + 0.5 * (TAU * bg_freq * (x * sa - y * ca)).sin();
        let m = 0.7 * t + 0.3 * wave;
        [0, 1, 2].map(|k| bg_a[k] * (1.0 - m) + bg_b[k] * m)
    };
    let (img, mask) = render_sprite(&sprite, cfg.image_size, &place, background, tint);
    to_buffers(cfg.image_size, img, mask)
}

/// Writes images, masks and `manifest.jsonl` under `dir`.
pub fn generate_synthetic_dataset(cfg: &SyntheticConfig, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    if cfg.image_size < crate::image::MIN_SIDE || cfg.objects == 0 || cfg.views_per_object == 0 {
        return Err(Error::Config(format!("invalid synthetic config {cfg:?}")));
    }
    for sub in ["images", "masks"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let mut manifest = Manifest::default();
    for obj in 0..cfg.objects as u32 {
        for view in 0..cfg.views_per_object as u32 {
            let (img, mask) = render_view::<f32>(cfg, obj, view)?;
            let name = format!("mv_{obj:04}_{view:03}.png");
            img.write_png(dir.join("images").join(&name))?;
            mask.write_png(dir.join("masks").join(&name))?;
            manifest.records.push(ManifestRecord {
                kind: RecordKind::Multiview,
                object_id: obj,
                view_id: Some(view),
                frame_id: None,
                image_path: format!("images/{name}"),
                mask_path: format!("masks/{name}"),
            });
        }
        for frame in 0..cfg.frames_per_scene as u32 {
            let (img, mask) = render_frame::<f32>(cfg, obj, frame)?;
            let name = format!("sc_{obj:04}_{frame:03}.png");
            img.write_png(dir.join("images").join(&name))?;
            mask.write_png(dir.join("masks").join(&name))?;
            manifest.records.push(ManifestRecord {
                kind: RecordKind::Scene,
                object_id: obj,
                view_id: None,
                frame_id: Some(frame),
                image_path: format!("images/{name}"),
                mask_path: format!("masks/{name}"),
            });
        }
    }
    write_file(dir.join(MANIFEST_FILE), manifest.to_jsonl().as_bytes())?;
    Ok(manifest)
}

/// An image with its exact object mask.
#[derive(Debug, Clone, PartialEq)]
pub struct View<T> {
    pub image: ImageBuffer<T>,
    pub mask: MaskBuffer<T>,
}

/// In-memory dataset grouped by object id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset<T> {
    pub multiview: BTreeMap<u32, Vec<View<T>>>,
    pub scenes: BTreeMap<u32, Vec<View<T>>>,
}

impl<T: Scalar> Dataset<T> {
    /// Loads a dataset directory described by `manifest.jsonl`. Views and
    /// frames are ordered by their ids.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = Manifest::read(dir)?;
        let mut mv: BTreeMap<u32, Vec<(u32, View<T>)>> = BTreeMap::new();
        let mut sc: BTreeMap<u32, Vec<(u32, View<T>)>> = BTreeMap::new();
        for r in &manifest.records {
            let view = View {
                image: ImageBuffer::read_png(dir.join(&r.image_path))?,
                mask: MaskBuffer::read_png(dir.join(&r.mask_path))?,
            };
            match r.kind {
                RecordKind::Multiview => mv
                    .entry(r.object_id)
                    .or_default()
                    .push((r.view_id.unwrap_or(0), view)),
                RecordKind::Scene => sc
                    .entry(r.object_id)
                    .or_default()
                    .push((r.frame_id.unwrap_or(0), view)),
            }
        }
        let sort = |m: BTreeMap<u32, Vec<(u32, View<T>)>>| {
            m.into_iter()
                .map(|(k, mut v)| {
                    v.sort_by_key(|(i, _)| *i);
                    (k, v.into_iter().map(|(_, x)| x).collect())
                })
                .collect()
        };
        Ok(Dataset {
            multiview: sort(mv),
            scenes: sort(sc),
        })
    }

    /// Renders the synthetic dataset directly into memory; pixel values
    /// match what [`Dataset::load`] reads back from a generated directory.
    pub fn synthesize(cfg: &SyntheticConfig) -> Result<Self> {
        let mut ds = Dataset::default();
        for obj in 0..cfg.objects as u32 {
            let views = (0..cfg.views_per_object as u32)
                .map(|v| render_view(cfg, obj, v).map(|(image, mask)| View { image, mask }))
                .collect::<Result<Vec<_>>>()?;
            ds.multiview.insert(obj, views);
            if cfg.frames_per_scene > 0 {
                let frames = (0..cfg.frames_per_scene as u32)
                    .map(|f| render_frame(cfg, obj, f).map(|(image, mask)| View { image, mask }))
                    .collect::<Result<Vec<_>>>()?;
                ds.scenes.insert(obj, frames);
            }
        }
        Ok(ds)
    }
}
