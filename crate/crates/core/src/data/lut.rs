//! 3-D colour look-up tables with trilinear interpolation.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::{read_file, write_file, ImageBuffer};
use crate::scalar::Scalar;

/// Cube of `size^3` RGB entries; entry `(r, g, b)` lives at
/// `(r * size + g) * size + b` (blue fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Lut3D {
    size: usize,
    table: Vec<[f64; 3]>,
}

/// Grid edge used for sampled colour perturbations.
pub const PERTURBATION_GRID: usize = 17;

impl Lut3D {
    pub fn new(size: usize, table: Vec<[f64; 3]>) -> Result<Self> {
        if size < 2 {
            return Err(Error::Config(format!("LUT size must be >= 2, got {size}")));
        }
        if table.len() != size * size * size {
            return Err(Error::Dimension(format!(
                "LUT of size {size} needs {} entries, got {}",
                size * size * size,
                table.len()
            )));
        }
        if table.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Range("LUT entries must lie in [0, 1]".into()));
        }
        Ok(Lut3D { size, table })
    }

    pub fn from_fn(size: usize, f: impl Fn(f64, f64, f64) -> [f64; 3]) -> Result<Self> {
        let n = (size.max(2) - 1) as f64;
        let mut table = Vec::with_capacity(size * size * size);
        for r in 0..size {
            for g in 0..size {
                for b in 0..size {
                    table.push(f(r as f64 / n, g as f64 / n, b as f64 / n));
                }
            }
        }
        Self::new(size, table)
    }

    pub fn identity(size: usize) -> Result<Self> {
        Self::from_fn(size, |r, g, b| [r, g, b])
    }

    pub fn constant(size: usize, c: [f64; 3]) -> Result<Self> {
        Self::from_fn(size, |_, _, _| c)
    }

    /// Smooth random colour shift: per-channel gain, offset and gamma.
    pub fn random_perturbation<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut curves = [(1.0, 0.0, 1.0); 3];
        for c in &mut curves {
            *c = (
                rng.random_range(0.8..=1.25),
                rng.random_range(-0.05..=0.05),
                rng.random_range(0.8..=1.25),
            );
        }
        let f = |v: f64, (gain, off, gamma): (f64, f64, f64)| (gain * v.powf(gamma) + off).clamp(0.0, 1.0);
        Self::from_fn(PERTURBATION_GRID, |r, g, b| {
            [f(r, curves[0]), f(g, curves[1]), f(b, curves[2])]
        })
        .expect("valid perturbation LUT")
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn entry(&self, r: usize, g: usize, b: usize) -> [f64; 3] {
        self.table[(r * self.size + g) * self.size + b]
    }

    /// Trilinear lookup of a single colour.
    pub fn lookup(&self, rgb: [f64; 3]) -> [f64; 3] {
        let n = (self.size - 1) as f64;
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for k in 0..3 {
            let p = rgb[k].clamp(0.0, 1.0) * n;
            let i = (p.floor() as usize).min(self.size - 2);
            base[k] = i;
            frac[k] = p - i as f64;
        }
        let mut out = [0.0; 3];
        for dr in 0..2 {
            let wr = if dr == 0 { 1.0 - frac[0] } else { frac[0] };
            for dg in 0..2 {
                let wg = if dg == 0 { 1.0 - frac[1] } else { frac[1] };
                for db in 0..2 {
                    let wb = if db == 0 { 1.0 - frac[2] } else { frac[2] };
                    let e = self.entry(base[0] + dr, base[1] + dg, base[2] + db);
                    let w = wr * wg * wb;
                    for k in 0..3 {
                        out[k] += w * e[k];
                    }
                }
            }
        }
        out.map(|v| v.clamp(0.0, 1.0))
    }

    /// Plain-text cube format: `LUT_3D_SIZE N` then `N^3` lines, blue fastest.
    pub fn to_cube_string(&self) -> String {
        let mut s = format!("LUT_3D_SIZE {}\n", self.size);
        for e in &self.table {
            let _ = writeln!(s, "{} {} {}", e[0], e[1], e[2]);
        }
        s
    }

    pub fn parse_cube(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Parse("empty LUT file".into()))?;
        let size: usize = header
            .strip_prefix("LUT_3D_SIZE")
            .and_then(|r| r.trim().parse().ok())
            .ok_or_else(|| Error::Parse(format!("bad LUT header `{header}`")))?;
        let mut table = Vec::with_capacity(size * size * size);
        for (i, l) in lines.enumerate() {
            let v: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("LUT line {}: {e}", i + 2)))?;
            if v.len() != 3 {
                return Err(Error::Parse(format!("LUT line {} needs 3 floats", i + 2)));
            }
            table.push([v[0], v[1], v[2]]);
        }
        Self::new(size, table)
    }

    pub fn write_cube(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path, self.to_cube_string().as_bytes())
    }

    pub fn read_cube(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = read_file(path)?;
        Self::parse_cube(&String::from_utf8_lossy(&bytes))
    }
}

/// Maps every pixel through `lut`.
pub fn apply_lut<T: Scalar>(image: &ImageBuffer<T>, lut: &Lut3D) -> ImageBuffer<T> {
    let mut out = image.clone();
    for r in 0..image.height() {
        for c in 0..image.width() {
            let p = image.pixel(r, c).map(|v| v.f64());
            let q = lut.lookup(p);
            out.set_pixel(r, c, q.map(T::c));
        }
    }
    out
}
