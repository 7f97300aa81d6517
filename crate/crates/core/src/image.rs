//! Image and mask buffers, resampling and 8-bit PNG I/O.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHANNELS: usize = 3;
pub const MIN_SIDE: usize = 8;

/// RGB image with values in `[0, 1]`, stored row-major as `h x w x 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// Single-channel mask with values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskBuffer<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// Half-open pixel rectangle `[top, bottom) x [left, right)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl BBox {
    pub fn height(&self) -> usize {
        self.bottom - self.top
    }

    pub fn width(&self) -> usize {
        self.right - self.left
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.top && r < self.bottom && c >= self.left && c < self.right
    }

    pub fn diagonal(&self) -> f64 {
        ((self.height().pow(2) + self.width().pow(2)) as f64).sqrt()
    }
}

fn check_side(h: usize, w: usize) -> Result<()> {
    if h < MIN_SIDE || w < MIN_SIDE {
        return Err(Error::Dimension(format!(
            "image {h}x{w} is smaller than {MIN_SIDE}x{MIN_SIDE}"
        )));
    }
    Ok(())
}

fn check_unit<T: Scalar>(data: &[T], what: &str) -> Result<()> {
    if let Some(v) = data
        .iter()
        .find(|v| !(**v >= T::zero() && **v <= T::one()))
    {
        return Err(Error::Range(format!("{what} value {v} outside [0, 1]")));
    }
    Ok(())
}

impl<T: Scalar> ImageBuffer<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        check_side(height, width)?;
        if data.len() != height * width * CHANNELS {
            return Err(Error::Dimension(format!(
                "{}x{}x3 image needs {} values, got {}",
                height,
                width,
                height * width * CHANNELS,
                data.len()
            )));
        }
        check_unit(&data, "image")?;
        Ok(ImageBuffer {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [T; 3]) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::filled(height, width, [T::zero(); 3])
    }

    /// Builds an image from arbitrary values, clamping into `[0, 1]`.
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<T>) -> Result<Self> {
        for v in &mut data {
            *v = v.max(T::zero()).min(T::one());
            if v.is_nan() {
                *v = T::zero();
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        CHANNELS
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize, ch: usize) -> T {
        self.data[(r * self.width + c) * CHANNELS + ch]
    }

    #[inline]
    pub fn pixel(&self, r: usize, c: usize) -> [T; 3] {
        let i = (r * self.width + c) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, r: usize, c: usize, rgb: [T; 3]) {
        let i = (r * self.width + c) * CHANNELS;
        for (k, v) in rgb.into_iter().enumerate() {
            self.data[i + k] = v.max(T::zero()).min(T::one());
        }
    }

    pub fn same_size(&self, h: usize, w: usize, what: &str) -> Result<()> {
        if self.height != h || self.width != w {
            return Err(Error::Dimension(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, h, w
            )));
        }
        Ok(())
    }

    /// Channel-first tensor `[3, h, w]` mapped to `[-1, 1]`.
    pub fn to_signed_chw(&self) -> Tensor<T> {
        let hw = self.height * self.width;
        let mut out = vec![T::zero(); CHANNELS * hw];
        let two = T::c(2.0);
        for p in 0..hw {
            for ch in 0..CHANNELS {
                out[ch * hw + p] = self.data[p * CHANNELS + ch] * two - T::one();
            }
        }
        Tensor::from_vec(&[CHANNELS, self.height, self.width], out).expect("sized")
    }

    /// Inverse of [`ImageBuffer::to_signed_chw`], clamping into `[0, 1]`.
    pub fn from_signed_chw(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 || s[0] != CHANNELS {
            return Err(Error::Dimension(format!("expected [3, h, w], got {s:?}")));
        }
        let (h, w) = (s[1], s[2]);
        let hw = h * w;
        let half = T::c(0.5);
        let mut data = vec![T::zero(); hw * CHANNELS];
        for p in 0..hw {
            for ch in 0..CHANNELS {
                data[p * CHANNELS + ch] = (t.data()[ch * hw + p] + T::one()) * half;
            }
        }
        Self::from_clamped(h, w, data)
    }

    pub fn cast<U: Scalar>(&self) -> ImageBuffer<U> {
        ImageBuffer {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| U::c(v.f64())).collect(),
        }
    }

    /// Bilinear sample at continuous pixel coordinates; outside pixels are 0.
    pub fn sample_bilinear(&self, y: f64, x: f64) -> [T; 3] {
        let mut out = [T::zero(); 3];
        let y0 = y.floor();
        let x0 = x.floor();
        let fy = y - y0;
        let fx = x - x0;
        for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
            for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                let w = wy * wx;
                if w == 0.0 {
                    continue;
                }
                let (yy, xx) = (y0 + dy, x0 + dx);
                if yy < 0.0 || xx < 0.0 || yy >= self.height as f64 || xx >= self.width as f64 {
                    continue;
                }
                let p = self.pixel(yy as usize, xx as usize);
                for k in 0..3 {
                    out[k] += p[k] * T::c(w);
                }
            }
        }
        out
    }

    /// Sub-image `rect`.
    pub fn crop(&self, rect: BBox) -> Result<Self> {
        let mut data = Vec::with_capacity(rect.height() * rect.width() * CHANNELS);
        for r in rect.top..rect.bottom {
            let start = (r * self.width + rect.left) * CHANNELS;
            data.extend_from_slice(&self.data[start..start + rect.width() * CHANNELS]);
        }
        Ok(ImageBuffer {
            height: rect.height(),
            width: rect.width(),
            data,
        })
    }

    /// Bilinear resize using pixel-centre alignment with edge clamping.
    /// Resizing to the same size is the identity.
    pub fn resize(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for r in 0..height {
            let y = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            for c in 0..width {
                let x = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let p = self.sample_bilinear(y, x);
                data.extend(p.iter().map(|v| v.max(T::zero()).min(T::one())));
            }
        }
        ImageBuffer {
            height,
            width,
            data,
        }
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_png_bytes()?;
        write_file(path, &bytes)
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let raw: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
        encode_png(self.width, self.height, png::ColorType::Rgb, &raw)
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = read_file(&path)?;
        Self::from_png_bytes(&bytes)
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        let (w, h, ct, raw) = decode_png(bytes)?;
        let data: Vec<T> = match ct {
            png::ColorType::Rgb => raw.iter().map(|&b| from_u8(b)).collect(),
            png::ColorType::Rgba => raw
                .chunks(4)
                .flat_map(|p| [p[0], p[1], p[2]])
                .map(from_u8)
                .collect(),
            png::ColorType::Grayscale => raw.iter().flat_map(|&b| [b; 3]).map(from_u8).collect(),
            png::ColorType::GrayscaleAlpha => {
                raw.chunks(2).flat_map(|p| [p[0]; 3]).map(from_u8).collect()
            }
            other => return Err(Error::Png(format!("unsupported color type {other:?}"))),
        };
        Self::new(h, w, data)
    }
}

impl<T: Scalar> MaskBuffer<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        check_side(height, width)?;
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "{}x{} mask needs {} values, got {}",
                height,
                width,
                height * width,
                data.len()
            )));
        }
        check_unit(&data, "mask")?;
        Ok(MaskBuffer {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, v: T) -> Result<Self> {
        Self::new(height, width, vec![v; height * width])
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(if f(r, c) { T::one() } else { T::zero() });
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.width + c]
    }

    #[inline]
    pub fn is_on(&self, r: usize, c: usize) -> bool {
        self.get(r, c) > T::c(0.5)
    }

    pub fn same_size(&self, h: usize, w: usize, what: &str) -> Result<()> {
        if self.height != h || self.width != w {
            return Err(Error::Dimension(format!(
                "{what}: mask {}x{} vs {}x{}",
                self.height, self.width, h, w
            )));
        }
        Ok(())
    }

    /// True when no pixel exceeds 0.5.
    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v > T::c(0.5))
    }

    /// Number of pixels above 0.5.
    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v > T::c(0.5)).count()
    }

    /// Tight bounding box of pixels above 0.5.
    pub fn bbox(&self) -> Option<BBox> {
        let mut bb: Option<BBox> = None;
        for r in 0..self.height {
            for c in 0..self.width {
                if self.is_on(r, c) {
                    let b = bb.get_or_insert(BBox {
                        top: r,
                        left: c,
                        bottom: r + 1,
                        right: c + 1,
                    });
                    b.top = b.top.min(r);
                    b.left = b.left.min(c);
                    b.bottom = b.bottom.max(r + 1);
                    b.right = b.right.max(c + 1);
                }
            }
        }
        bb
    }

    pub fn binarized(&self) -> Self {
        MaskBuffer {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|&v| if v > T::c(0.5) { T::one() } else { T::zero() })
                .collect(),
        }
    }

    pub fn crop(&self, rect: BBox) -> Self {
        let mut data = Vec::with_capacity(rect.height() * rect.width());
        for r in rect.top..rect.bottom {
            data.extend_from_slice(&self.data[r * self.width + rect.left..r * self.width + rect.right]);
        }
        MaskBuffer {
            height: rect.height(),
            width: rect.width(),
            data,
        }
    }

    /// Nearest-neighbour resize, re-binarized at 0.5.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.binarized();
        }
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            let sr = (((r as f64 + 0.5) * self.height as f64 / height as f64) as usize)
                .min(self.height - 1);
            for c in 0..width {
                let sc = (((c as f64 + 0.5) * self.width as f64 / width as f64) as usize)
                    .min(self.width - 1);
                data.push(if self.is_on(sr, sc) { T::one() } else { T::zero() });
            }
        }
        MaskBuffer {
            height,
            width,
            data,
        }
    }

    /// Tensor `[1, h, w]`.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::from_vec(&[1, self.height, self.width], self.data.clone()).expect("sized")
    }

    pub fn cast<U: Scalar>(&self) -> MaskBuffer<U> {
        MaskBuffer {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| U::c(v.f64())).collect(),
        }
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path, &self.to_png_bytes()?)
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let raw: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
        encode_png(self.width, self.height, png::ColorType::Grayscale, &raw)
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_png_bytes(&read_file(&path)?)
    }

    /// Decodes a mask PNG; color inputs use their first channel.
    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        let (w, h, ct, raw) = decode_png(bytes)?;
        let stride = match ct {
            png::ColorType::Grayscale => 1,
            png::ColorType::GrayscaleAlpha => 2,
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            other => return Err(Error::Png(format!("unsupported color type {other:?}"))),
        };
        let data = raw.chunks(stride).map(|p| from_u8(p[0])).collect();
        Self::new(h, w, data)
    }
}

fn to_u8<T: Scalar>(v: T) -> u8 {
    (v.f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

fn from_u8<T: Scalar>(b: u8) -> T {
    T::c(b as f64 / 255.0)
}

fn encode_png(width: usize, height: usize, ct: png::ColorType, raw: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(ct);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
        w.write_image_data(raw).map_err(|e| Error::Png(e.to_string()))?;
    }
    Ok(out)
}

fn decode_png(bytes: &[u8]) -> Result<(usize, usize, png::ColorType, Vec<u8>)> {
    let mut dec = png::Decoder::new(std::io::Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Png(e.to_string()))?;
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, info.color_type, buf))
}

pub(crate) fn write_file(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(buf)
}
