//! Ground-truth initial-pressure images. The optical-to-acoustic conversion
//! efficiency is taken as one, so each phantom directly defines the initial
//! pressure.
//!
//! Every generator is a pure function of its seed and size.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image2D;
use crate::rng::{derive_seed, rng_from};

/// Random union of one to five equal-magnitude disks.
pub fn gen_circles(seed: u64, size: usize) -> Image2D {
    let mut rng = rng_from(seed);
    let count = rng.random_range(1..=5);
    let s = size as f64;
    let mut img = Image2D::zeros(size);
    for _ in 0..count {
        let cx = rng.random_range(0.0..s);
        let cy = rng.random_range(0.0..s);
        let r = rng.random_range(s / 32.0..=s / 8.0);
        let (x0, x1) = (
            (cx - r).floor().max(0.0) as usize,
            ((cx + r).ceil() as usize).min(size - 1),
        );
        let (y0, y1) = (
            (cy - r).floor().max(0.0) as usize,
            ((cy + r).ceil() as usize).min(size - 1),
        );
        for y in y0..=y1 {
            for x in x0..=x1 {
                if (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r {
                    img.set(y, x, 1.0);
                }
            }
        }
    }
    img
}

/// One ellipse of the head phantom: intensity, semi-axes, centre and
/// rotation in degrees, in normalized `[-1, 1]` coordinates with y up.
#[derive(Clone, Copy, Debug)]
pub struct Ellipse {
    pub intensity: f64,
    pub a: f64,
    pub b: f64,
    pub x0: f64,
    pub y0: f64,
    pub phi_deg: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.phi_deg.to_radians().sin_cos();
        let (dx, dy) = (x - self.x0, y - self.y0);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

const fn ellipse(intensity: f64, a: f64, b: f64, x0: f64, y0: f64, phi_deg: f64) -> Ellipse {
    Ellipse {
        intensity,
        a,
        b,
        x0,
        y0,
        phi_deg,
    }
}

/// The original ten-ellipse Shepp-Logan table.
pub const SHEPP_LOGAN: [Ellipse; 10] = [
    ellipse(2.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    ellipse(-0.98, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    ellipse(-0.02, 0.11, 0.31, 0.22, 0.0, -18.0),
    ellipse(-0.02, 0.16, 0.41, -0.22, 0.0, 18.0),
    ellipse(0.01, 0.21, 0.25, 0.0, 0.35, 0.0),
    ellipse(0.01, 0.046, 0.046, 0.0, 0.1, 0.0),
    ellipse(0.01, 0.046, 0.046, 0.0, -0.1, 0.0),
    ellipse(0.01, 0.046, 0.023, -0.08, -0.605, 0.0),
    ellipse(0.01, 0.023, 0.023, 0.0, -0.606, 0.0),
    ellipse(0.01, 0.023, 0.046, 0.06, -0.605, 0.0),
];

/// Peak of the table (the skull rim), used to map the phantom onto `[0, 1]`.
pub const SHEPP_LOGAN_PEAK: f64 = 2.0;

/// Normalized coordinate of pixel `i` on an `n`-pixel axis.
fn axis_coord(i: usize, n: usize) -> f64 {
    let half = (n as f64 - 1.0) / 2.0;
    (i as f64 - half) / half
}

pub fn gen_shepp_logan(size: usize) -> Image2D {
    Image2D::from_fn(size, |row, col| {
        let x = axis_coord(col, size);
        let y = -axis_coord(row, size);
        let raw: f64 = SHEPP_LOGAN
            .iter()
            .filter(|e| e.contains(x, y))
            .map(|e| e.intensity)
            .sum();
        (raw / SHEPP_LOGAN_PEAK).clamp(0.0, 1.0)
    })
}

/// Constants of the procedural vessel tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VesselParams {
    pub roots: (usize, usize),
    pub root_width: (f64, f64),
    pub width_decay: f64,
    pub turn_sigma_deg: f64,
    pub branch_prob: f64,
    pub max_depth: usize,
    pub branch_angle_deg: (f64, f64),
    pub intensity: (f64, f64),
    /// Root walkers stop after this many unit steps, in multiples of the
    /// image size; each branch level multiplies the budget by `length_decay`.
    pub max_length: f64,
    pub length_decay: f64,
    pub max_walkers: usize,
}

impl Default for VesselParams {
    fn default() -> Self {
        VesselParams {
            roots: (2, 4),
            root_width: (3.0, 5.0),
            width_decay: 0.8,
            turn_sigma_deg: 10.0,
            branch_prob: 0.05,
            max_depth: 4,
            branch_angle_deg: (20.0, 50.0),
            intensity: (0.5, 1.0),
            max_length: 0.9,
            length_decay: 0.6,
            max_walkers: 24,
        }
    }
}

impl VesselParams {
    /// A deliberately different tree family (thinner, twistier, denser
    /// branching) used as out-of-distribution test data.
    pub fn held_out() -> Self {
        VesselParams {
            roots: (3, 5),
            root_width: (2.0, 3.5),
            turn_sigma_deg: 16.0,
            branch_prob: 0.08,
            branch_angle_deg: (30.0, 70.0),
            ..Self::default()
        }
    }
}

struct Walker {
    x: f64,
    y: f64,
    heading: f64,
    width: f64,
    intensity: f64,
    depth: usize,
}

/// Anti-aliased disk of diameter `width`, combined by maximum.
fn stamp(img: &mut Image2D, cx: f64, cy: f64, width: f64, intensity: f64) {
    let size = img.size() as isize;
    let r = width / 2.0;
    let reach = (r + 1.0).ceil() as isize;
    let (ix, iy) = (cx.round() as isize, cy.round() as isize);
    for y in (iy - reach).max(0)..=(iy + reach).min(size - 1) {
        for x in (ix - reach).max(0)..=(ix + reach).min(size - 1) {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            let cover = (r + 0.5 - d).clamp(0.0, 1.0);
            if cover > 0.0 {
                let v = intensity * cover;
                let (yu, xu) = (y as usize, x as usize);
                if v > img.get(yu, xu) {
                    img.set(yu, xu, v);
                }
            }
        }
    }
}

pub fn gen_vessels(seed: u64, size: usize) -> Image2D {
    gen_vessels_with(seed, size, &VesselParams::default())
}

/// Branching random-walk vessel tree grown inward from the image border.
pub fn gen_vessels_with(seed: u64, size: usize, params: &VesselParams) -> Image2D {
    let mut rng = rng_from(seed);
    let s = size as f64;
    let turn = Normal::new(0.0, params.turn_sigma_deg.to_radians()).expect("finite sigma");
    let mut img = Image2D::zeros(size);
    let mut stack = Vec::new();
    let roots = rng.random_range(params.roots.0..=params.roots.1);
    for _ in 0..roots {
        let t = rng.random_range(0.0..s - 1.0);
        let (x, y) = match rng.random_range(0..4) {
            0 => (t, 0.0),
            1 => (s - 1.0, t),
            2 => (t, s - 1.0),
            _ => (0.0, t),
        };
        let inward = (s / 2.0 - y).atan2(s / 2.0 - x);
        stack.push(Walker {
            x,
            y,
            heading: inward + rng.random_range(-PI / 6.0..PI / 6.0),
            width: rng.random_range(params.root_width.0..=params.root_width.1),
            intensity: rng.random_range(params.intensity.0..=params.intensity.1),
            depth: 0,
        });
    }
    let mut spawned = stack.len();
    while let Some(mut w) = stack.pop() {
        let budget = params.max_length * params.length_decay.powi(w.depth as i32) * s;
        for _ in 0..budget.round() as usize {
            stamp(&mut img, w.x, w.y, w.width, w.intensity);
            w.heading += turn.sample(&mut rng);
            w.x += w.heading.cos();
            w.y += w.heading.sin();
            if w.x < -1.0 || w.y < -1.0 || w.x > s || w.y > s {
                break;
            }
            if w.depth < params.max_depth && spawned < params.max_walkers && rng.random::<f64>() < params.branch_prob {
                let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let angle = rng
                    .random_range(params.branch_angle_deg.0..=params.branch_angle_deg.1)
                    .to_radians();
                stack.push(Walker {
                    x: w.x,
                    y: w.y,
                    heading: w.heading + side * angle,
                    width: w.width * params.width_decay,
                    intensity: rng.random_range(params.intensity.0..=params.intensity.1),
                    depth: w.depth + 1,
                });
                spawned += 1;
            }
        }
    }
    img.values_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    img
}

/// Random similarity transform plus crop and zero-padded translation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub scale: f64,
    pub rotation_deg: f64,
    /// `(x, y)` offset of the crop window in the transformed image.
    pub crop_offset: (usize, usize),
    /// `(x, y)` translation of the crop; vacated pixels become zero.
    pub shift: (usize, usize),
}

pub const SCALE_RANGE: (f64, f64) = (0.5, 2.0);
pub const MAX_ROTATION_DEG: f64 = 359.0;
pub const MAX_SHIFT: usize = 10;

/// Side of the scaled canvas for a `source`-pixel image.
pub fn transformed_size(source: usize, scale: f64) -> usize {
    (source as f64 * scale).round() as usize
}

/// Source image side that keeps every sampled crop inside the transform at
/// the smallest scale (340 px for a 128 px output).
pub fn source_size_for(out_size: usize) -> usize {
    (out_size as f64 * 340.0 / 128.0).ceil() as usize
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            scale: 1.0,
            rotation_deg: 0.0,
            crop_offset: (0, 0),
            shift: (0, 0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(SCALE_RANGE.0..=SCALE_RANGE.1).contains(&self.scale) {
            return Err(Error::InvalidArgument(format!("scale {} outside [0.5, 2]", self.scale)));
        }
        if !(0.0..=MAX_ROTATION_DEG).contains(&self.rotation_deg) {
            return Err(Error::InvalidArgument(format!(
                "rotation {} outside [0, 359] degrees",
                self.rotation_deg
            )));
        }
        if self.shift.0 > MAX_SHIFT || self.shift.1 > MAX_SHIFT {
            return Err(Error::InvalidArgument(format!(
                "shift {:?} outside [0, 10]",
                self.shift
            )));
        }
        Ok(())
    }

    pub fn sample(rng: &mut impl Rng, source: usize, out_size: usize) -> Result<Self> {
        let scale = rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1);
        let rotation_deg = rng.random_range(0..=MAX_ROTATION_DEG as u32) as f64;
        let t = transformed_size(source, scale);
        if t < out_size {
            return Err(Error::Crop(format!(
                "{source} px source scaled by {scale:.3} is {t} px, smaller than the {out_size} px crop"
            )));
        }
        let crop_offset = (rng.random_range(0..=t - out_size), rng.random_range(0..=t - out_size));
        let shift = (rng.random_range(0..=MAX_SHIFT), rng.random_range(0..=MAX_SHIFT));
        Ok(AugmentParams {
            scale,
            rotation_deg,
            crop_offset,
            shift,
        })
    }
}

fn bilinear(img: &Image2D, x: f64, y: f64) -> f64 {
    let n = img.size() as isize;
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let at = |xx: isize, yy: isize| -> f64 {
        if xx < 0 || yy < 0 || xx >= n || yy >= n {
            0.0
        } else {
            img.get(yy as usize, xx as usize)
        }
    };
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
    let bottom = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Scales the source (about its centre), rotates counter-clockwise as
/// displayed (y pointing down) about the canvas centre, crops `out_size`
/// pixels at `crop_offset` and shifts the crop by `shift` with zero fill.
/// Both resampling steps are folded into one bilinear lookup.
pub fn augment(source: &Image2D, params: &AugmentParams, out_size: usize) -> Result<Image2D> {
    params.validate()?;
    let t = transformed_size(source.size(), params.scale);
    let (ox, oy) = params.crop_offset;
    if ox + out_size > t || oy + out_size > t {
        return Err(Error::Crop(format!(
            "{out_size} px window at ({ox}, {oy}) exceeds the {t} px transformed image"
        )));
    }
    let center_t = (t as f64 - 1.0) / 2.0;
    let center_s = (source.size() as f64 - 1.0) / 2.0;
    let (sin, cos) = params.rotation_deg.to_radians().sin_cos();
    let identity_rotation = params.rotation_deg == 0.0;
    let (sx, sy) = params.shift;
    let out = Image2D::from_fn(out_size, |y, x| {
        if x < sx || y < sy {
            return 0.0;
        }
        let (tx, ty) = ((x - sx + ox) as f64, (y - sy + oy) as f64);
        // inverse rotation, then inverse scaling
        let (dx, dy) = (tx - center_t, ty - center_t);
        let (ux, uy) = if identity_rotation {
            (dx, dy)
        } else {
            (cos * dx - sin * dy, sin * dx + cos * dy)
        };
        let (px, py) = (ux / params.scale + center_s, uy / params.scale + center_s);
        bilinear(source, px, py)
    });
    Ok(out.with_pixel_spacing(source.pixel_spacing()))
}

/// Sum of one to five independent augmentations of `source`, rescaled to a
/// peak of 1.
pub fn compose_complex(seed: u64, source: &Image2D, out_size: usize) -> Result<Image2D> {
    let mut rng = rng_from(seed);
    let count = rng.random_range(1..=5u64);
    let mut acc = Image2D::zeros(out_size).with_pixel_spacing(source.pixel_spacing());
    for i in 0..count {
        let mut sub = rng_from(derive_seed(seed, "compose", i));
        let params = AugmentParams::sample(&mut sub, source.size(), out_size)?;
        let img = augment(source, &params, out_size)?;
        for (a, v) in acc.values_mut().iter_mut().zip(img.values()) {
            *a += v;
        }
    }
    let peak = acc.max();
    if peak > 0.0 {
        acc.scale(1.0 / peak);
    }
    Ok(acc)
}

/// Augmented crop with parameters drawn from `seed`.
pub fn random_augment(seed: u64, source: &Image2D, out_size: usize) -> Result<Image2D> {
    let mut rng = rng_from(seed);
    let params = AugmentParams::sample(&mut rng, source.size(), out_size)?;
    augment(source, &params, out_size)
}
