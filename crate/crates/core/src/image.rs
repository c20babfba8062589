use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{io, Tensor};

/// Default physical pixel size (0.1 mm).
pub const DEFAULT_PIXEL_SPACING: f64 = 1e-4;

/// Square real-valued image, row-major. Row index is `y`, column index `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image2D {
    size: usize,
    values: Vec<f64>,
    pixel_spacing: f64,
}

impl Image2D {
    pub fn zeros(size: usize) -> Self {
        Image2D {
            size,
            values: vec![0.0; size * size],
            pixel_spacing: DEFAULT_PIXEL_SPACING,
        }
    }

    pub fn from_values(size: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != size * size {
            return Err(Error::shape(
                "image",
                format!("{} values for a {size}x{size} image", values.len()),
            ));
        }
        Ok(Image2D {
            size,
            values,
            pixel_spacing: DEFAULT_PIXEL_SPACING,
        })
    }

    pub fn from_fn(size: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                values.push(f(y, x));
            }
        }
        Image2D {
            size,
            values,
            pixel_spacing: DEFAULT_PIXEL_SPACING,
        }
    }

    pub fn with_pixel_spacing(mut self, dx: f64) -> Self {
        self.pixel_spacing = dx;
        self
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixel_spacing(&self) -> f64 {
        self.pixel_spacing
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.size + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.values[y * self.size + x] = v;
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_all_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn mirrored_lr(&self) -> Self {
        Image2D::from_fn(self.size, |y, x| self.get(y, self.size - 1 - x)).with_pixel_spacing(self.pixel_spacing)
    }

    pub fn to_tensor(&self) -> Tensor<f64> {
        Tensor::new(vec![self.size, self.size], self.values.clone()).expect("square image")
    }

    pub fn from_tensor(t: &Tensor<f64>) -> Result<Self> {
        match t.shape() {
            [h, w] if h == w => Self::from_values(*h, t.data().to_vec()),
            [1, 1, h, w] if h == w => Self::from_values(*h, t.data().to_vec()),
            s => Err(Error::shape("image", format!("tensor {s:?} is not a square image"))),
        }
    }

    pub fn write_ptns(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write(path, &self.to_tensor())
    }

    pub fn read_ptns(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensor(&io::read(path)?.into_tensor())
    }

    /// Binary P5 PGM, linearly scaled so the image maximum maps to 255.
    /// Negative values clip to 0.
    pub fn to_pgm(&self) -> Vec<u8> {
        pgm_bytes(self.size, self.size, &self.values)
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_pgm()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// P5 encoding of an arbitrary `width x height` grid, max-scaled.
pub fn pgm_bytes(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    let peak = values.iter().copied().fold(0.0, f64::max);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| {
        if peak > 0.0 {
            (v.max(0.0) / peak * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    out
}
