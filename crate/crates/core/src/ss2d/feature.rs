use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::numlin::{read_exact, read_f64s, read_u64, Rng};

const FEATURE_MAGIC: &[u8; 4] = b"LRF1";

/// `H x W x C` tensor stored in (row, col, channel) order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "feature map dimensions must be positive");
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::arg(format!(
                "feature map dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(
                "FeatureMap::from_vec",
                format!("{height}x{width}x{channels}"),
                format!("{} elements", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("feature map entries must be finite"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn random(height: usize, width: usize, channels: usize, std: f64, rng: &mut Rng) -> Self {
        let data = rng.normal_vec(height * width * channels, std);
        Self::from_vec(height, width, channels, data).expect("finite samples")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(H, W, C)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub(crate) fn dims_str(&self) -> String {
        format!("{}x{}x{}", self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    fn offset(&self, row: usize, col: usize) -> usize {
        (row * self.width + col) * self.channels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.offset(row, col) + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f64) {
        let o = self.offset(row, col);
        self.data[o + ch] = v;
    }

    /// Channel vector at one pixel.
    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let o = self.offset(row, col);
        &self.data[o..o + self.channels]
    }

    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let o = self.offset(row, col);
        &mut self.data[o..o + self.channels]
    }

    /// Swaps the spatial axes: `out(c, r) = self(r, c)`.
    pub fn transpose(&self) -> FeatureMap {
        let mut out = FeatureMap::zeros(self.width, self.height, self.channels);
        for r in 0..self.height {
            for c in 0..self.width {
                out.pixel_mut(c, r).copy_from_slice(self.pixel(r, c));
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> FeatureMap {
        FeatureMap {
            data: self.data.iter().map(|v| v * s).collect(),
            height: self.height,
            width: self.width,
            channels: self.channels,
        }
    }

    fn check_same(&self, other: &FeatureMap, op: &'static str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(op, self.dims_str(), other.dims_str()));
        }
        Ok(())
    }

    pub fn add(&self, other: &FeatureMap) -> Result<FeatureMap> {
        self.check_same(other, "FeatureMap::add")?;
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &FeatureMap) -> Result<()> {
        self.check_same(other, "FeatureMap::add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &FeatureMap) -> Result<FeatureMap> {
        self.check_same(other, "FeatureMap::sub")?;
        Ok(FeatureMap {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
            height: self.height,
            width: self.width,
            channels: self.channels,
        })
    }

    /// Writes the `LRF1` container: magic, `H`, `W`, `C` as little-endian
    /// `u64`, then the data in (row, col, channel) order as little-endian
    /// `f64`.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(FEATURE_MAGIC)?;
        for d in [self.height, self.width, self.channels] {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(28 + 8 * self.data.len());
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<FeatureMap> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != FEATURE_MAGIC {
            return Err(Error::Format(format!("bad feature map magic {magic:?}")));
        }
        let h = read_u64(r)? as usize;
        let w = read_u64(r)? as usize;
        let c = read_u64(r)? as usize;
        let len = h
            .checked_mul(w)
            .and_then(|v| v.checked_mul(c))
            .ok_or_else(|| Error::Format(format!("feature header overflows: {h}x{w}x{c}")))?;
        let data = read_f64s(r, len)?;
        FeatureMap::from_vec(h, w, c, data).map_err(|e| Error::Format(e.to_string()))
    }
}
