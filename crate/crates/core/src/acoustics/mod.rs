//! Forward photoacoustic simulation on a square grid with a ring of point
//! detectors, and time-reversal reconstruction with the same solver.
//!
//! The absorbing layer pads the image on every side: an image of `grid`
//! pixels is simulated on `grid + 2 * pml_width` nodes and detectors must lie
//! on image pixels.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image2D;
use crate::tensor::{io, Tensor};

mod fft2;
mod solver;

pub use solver::{simulate_forward, time_reverse, KSpaceSolver, WaveState};

pub const MAX_CFL: f64 = 0.3;
pub const DEFAULT_SOUND_SPEED: f64 = 1500.0;
pub const DEFAULT_PML_WIDTH: usize = 20;
pub const DEFAULT_PML_STRENGTH: f64 = 2.0;
pub const DENSITY: f64 = 1000.0;

/// Minimum detector count for an image `d` pixels across: `ceil(pi * d)`.
pub fn required_detectors(d: usize) -> usize {
    (PI * d as f64).ceil() as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Medium {
    pub sound_speed: f64,
    /// Pixel spacing in metres.
    pub dx: f64,
    /// Time step in seconds.
    pub dt: f64,
    /// Number of recorded samples, including `t = 0`.
    pub n_steps: usize,
    pub pml_width: usize,
    /// Absorption at the outer edge of the layer, nepers per grid point.
    pub pml_strength: f64,
}

impl Medium {
    /// Homogeneous water-like medium for a `grid`-pixel image: 0.1 mm pixels,
    /// CFL 0.3 and enough steps for the wave to cross the diagonal twice.
    pub fn for_grid(grid: usize) -> Self {
        Self::with_spacing(grid, crate::image::DEFAULT_PIXEL_SPACING)
    }

    pub fn with_spacing(grid: usize, dx: f64) -> Self {
        let c = DEFAULT_SOUND_SPEED;
        let dt = MAX_CFL * dx / c;
        let crossing = 2.0 * 2f64.sqrt() * grid as f64 * dx / (c * dt);
        Medium {
            sound_speed: c,
            dx,
            dt,
            n_steps: (crossing - 1e-9).ceil() as usize,
            pml_width: DEFAULT_PML_WIDTH,
            pml_strength: DEFAULT_PML_STRENGTH,
        }
    }

    pub fn cfl(&self) -> f64 {
        self.sound_speed * self.dt / self.dx
    }

    pub fn validate(&self) -> Result<()> {
        let cfl = self.cfl();
        if !(cfl > 0.0) || cfl > MAX_CFL * (1.0 + 1e-9) {
            return Err(Error::Cfl { cfl, limit: MAX_CFL });
        }
        if self.pml_width < 8 {
            return Err(Error::InvalidArgument(format!(
                "pml_width {} below the minimum of 8",
                self.pml_width
            )));
        }
        if self.n_steps == 0 {
            return Err(Error::InvalidArgument("n_steps must be positive".into()));
        }
        Ok(())
    }
}

/// How coincident grid nodes produced by rounding are handled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coincident {
    Reject,
    /// Keep the first detector at each node and drop later duplicates.
    Merge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorGeometry {
    /// Detector nodes as `(x, y)` image pixel coordinates.
    pub positions: Vec<(usize, usize)>,
    pub radius_px: f64,
    pub center: (f64, f64),
    pub grid: usize,
}

impl SensorGeometry {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// `n` detectors equally spaced in angle, detector `k` at angle `2 pi k / n`
/// measured from the +x axis, each rounded to the nearest pixel.
pub fn make_circular_array(n: usize, radius_px: f64, center: (f64, f64), grid: usize) -> Result<SensorGeometry> {
    make_circular_array_with(n, radius_px, center, grid, Coincident::Reject)
}

pub fn make_circular_array_with(
    n: usize,
    radius_px: f64,
    center: (f64, f64),
    grid: usize,
    coincident: Coincident,
) -> Result<SensorGeometry> {
    if n == 0 {
        return Err(Error::Geometry("at least one detector is required".into()));
    }
    let hi = grid as f64 - 1.0;
    let (cx, cy) = center;
    if !(radius_px > 0.0) || cx - radius_px < 0.0 || cy - radius_px < 0.0 || cx + radius_px > hi || cy + radius_px > hi
    {
        return Err(Error::Geometry(format!(
            "circle of radius {radius_px} px at ({cx}, {cy}) leaves the {grid}x{grid} interior and enters the absorbing layer"
        )));
    }
    let mut seen = BTreeSet::new();
    let mut positions = Vec::with_capacity(n);
    for k in 0..n {
        let theta = 2.0 * PI * k as f64 / n as f64;
        let x = (cx + radius_px * theta.cos()).round() as usize;
        let y = (cy + radius_px * theta.sin()).round() as usize;
        if !seen.insert((x, y)) {
            match coincident {
                Coincident::Reject => {
                    return Err(Error::Geometry(format!(
                        "detector {k} rounds onto occupied pixel ({x}, {y}); {n} detectors are too dense for radius {radius_px}"
                    )))
                }
                Coincident::Merge => continue,
            }
        }
        positions.push((x, y));
    }
    Ok(SensorGeometry {
        positions,
        radius_px,
        center,
        grid,
    })
}

/// Standard ring: centred, radius `grid * 60 / 128` pixels.
pub fn default_ring(n: usize, grid: usize) -> Result<SensorGeometry> {
    let c = grid as f64 / 2.0;
    make_circular_array(n, default_radius(grid), (c, c), grid)
}

pub fn default_radius(grid: usize) -> f64 {
    (grid as f64 * 60.0 / 128.0).round()
}

/// Detector time series, one row per detector.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorData {
    samples: Vec<f64>,
    n_sensors: usize,
    n_steps: usize,
    pub dt: f64,
}

/// JSON companion written next to a sensor-data PTNS file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorSidecar {
    pub dt: f64,
    pub dx: f64,
    pub sound_speed: f64,
    pub n_steps: usize,
    pub pml_width: usize,
    pub pml_strength: f64,
    pub grid: usize,
    pub radius_px: f64,
    pub center: (f64, f64),
    pub positions: Vec<(usize, usize)>,
    pub seed: Option<u64>,
}

impl SensorSidecar {
    pub fn new(medium: &Medium, sensors: &SensorGeometry, seed: Option<u64>) -> Self {
        SensorSidecar {
            dt: medium.dt,
            dx: medium.dx,
            sound_speed: medium.sound_speed,
            n_steps: medium.n_steps,
            pml_width: medium.pml_width,
            pml_strength: medium.pml_strength,
            grid: sensors.grid,
            radius_px: sensors.radius_px,
            center: sensors.center,
            positions: sensors.positions.clone(),
            seed,
        }
    }

    pub fn medium(&self) -> Medium {
        Medium {
            sound_speed: self.sound_speed,
            dx: self.dx,
            dt: self.dt,
            n_steps: self.n_steps,
            pml_width: self.pml_width,
            pml_strength: self.pml_strength,
        }
    }

    pub fn sensors(&self) -> SensorGeometry {
        SensorGeometry {
            positions: self.positions.clone(),
            radius_px: self.radius_px,
            center: self.center,
            grid: self.grid,
        }
    }
}

impl SensorData {
    pub fn zeros(n_sensors: usize, n_steps: usize, dt: f64) -> Self {
        SensorData {
            samples: vec![0.0; n_sensors * n_steps],
            n_sensors,
            n_steps,
            dt,
        }
    }

    pub fn from_samples(n_sensors: usize, n_steps: usize, dt: f64, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != n_sensors * n_steps {
            return Err(Error::shape(
                "sensor_data",
                format!("{} samples for {n_sensors} x {n_steps}", samples.len()),
            ));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("sensor data contains non-finite samples".into()));
        }
        Ok(SensorData {
            samples,
            n_sensors,
            n_steps,
            dt,
        })
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn trace(&self, sensor: usize) -> &[f64] {
        &self.samples[sensor * self.n_steps..(sensor + 1) * self.n_steps]
    }

    pub(crate) fn trace_mut(&mut self, sensor: usize) -> &mut [f64] {
        &mut self.samples[sensor * self.n_steps..(sensor + 1) * self.n_steps]
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &SensorData, b: f64) -> Result<SensorData> {
        if (self.n_sensors, self.n_steps) != (other.n_sensors, other.n_steps) {
            return Err(Error::shape("sensor_data", "combining data of different dimensions"));
        }
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(&x, &y)| a * x + b * y)
            .collect();
        Ok(SensorData { samples, ..*self })
    }

    pub fn to_tensor(&self) -> Tensor<f64> {
        Tensor::new(vec![self.n_sensors, self.n_steps], self.samples.clone()).expect("consistent dims")
    }

    pub fn write(&self, path: impl AsRef<Path>, sidecar: &SensorSidecar) -> Result<()> {
        let path = path.as_ref();
        io::write(path, &self.to_tensor())?;
        let json = serde_json::to_string_pretty(sidecar)?;
        let side = sidecar_path(path);
        fs::write(&side, json).map_err(|e| Error::io(format!("writing {}", side.display()), e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<(SensorData, SensorSidecar)> {
        let path = path.as_ref();
        let t: Tensor<f64> = io::read(path)?.into_tensor();
        let side = sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(|e| Error::io(format!("reading {}", side.display()), e))?;
        let sidecar: SensorSidecar = serde_json::from_str(&text)?;
        let (n, t_len) = match t.shape() {
            [n, t_len] => (*n, *t_len),
            s => return Err(Error::shape("sensor_data", format!("expected rank 2, got {s:?}"))),
        };
        Ok((SensorData::from_samples(n, t_len, sidecar.dt, t.into_data())?, sidecar))
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("json")
}

/// Checks that `image` fits the geometry the solver will use.
pub(crate) fn check_image(image: &Image2D, sensors: &SensorGeometry) -> Result<()> {
    if image.size() != sensors.grid {
        return Err(Error::shape(
            "simulate_forward",
            format!(
                "image is {} px but sensors assume a {} grid",
                image.size(),
                sensors.grid
            ),
        ));
    }
    Ok(())
}
