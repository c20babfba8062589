use num_complex::Complex64;

use super::fft2::{signed_index, Fft2};
use super::{check_image, Medium, SensorData, SensorGeometry, DENSITY};
use crate::error::{Error, Result};
use crate::image::Image2D;

/// First-order k-space pseudospectral solver for the homogeneous, lossless
/// acoustic equations on a staggered grid with a split-field PML:
///
/// ```text
/// du/dt   = -grad(p) / rho0
/// drho/dt = -rho0 div(u)
/// p       = c^2 rho
/// ```
///
/// Spatial derivatives are spectral with half-cell shift operators and the
/// k-space correction `sinc(c k dt / 2)`; density is split into x and y parts
/// so each can be damped by its own one-dimensional absorption profile.
pub struct KSpaceSolver {
    medium: Medium,
    grid: usize,
    n: usize,
    fft: Fft2,
    /// `kappa * (ddx_pos + i ddy_pos)`, used to get both pressure gradients
    /// from one inverse transform.
    grad_op: Vec<Complex64>,
    /// Packed divergence operator, see [`KSpaceSolver::step`].
    div_a: Vec<Complex64>,
    div_b: Vec<Complex64>,
    neg_index: Vec<usize>,
    pml: Vec<f64>,
    pml_sg: Vec<f64>,
    buf: Vec<Complex64>,
    work: Vec<Complex64>,
}

/// Pressure, staggered particle velocity and split density on the full
/// (padded) simulation grid, all `[y][x]` row-major.
#[derive(Clone, Debug)]
pub struct WaveState {
    pub p: Vec<f64>,
    pub ux: Vec<f64>,
    pub uy: Vec<f64>,
    pub rhox: Vec<f64>,
    pub rhoy: Vec<f64>,
    pub step: usize,
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

fn pml_profile(n: usize, width: usize, medium: &Medium, staggered: bool) -> Vec<f64> {
    let mut out = vec![1.0; n];
    let coef = medium.pml_strength * medium.sound_speed / medium.dx;
    let w = width as f64;
    let shift = if staggered { 0.5 } else { 0.0 };
    for i in 0..width {
        let x = (i + 1) as f64 + shift;
        let left = coef * ((x - w - 1.0) / -w).powi(4);
        let right = coef * (x / w).powi(4);
        out[i] = (-left * medium.dt / 2.0).exp();
        out[n - width + i] = (-right * medium.dt / 2.0).exp();
    }
    out
}

impl KSpaceSolver {
    pub fn new(medium: &Medium, grid: usize) -> Result<Self> {
        medium.validate()?;
        let n = grid + 2 * medium.pml_width;
        let dk = 2.0 * std::f64::consts::PI / (n as f64 * medium.dx);
        let i = Complex64::i();
        let half = medium.dx / 2.0;
        let mut grad_op = Vec::with_capacity(n * n);
        let mut div_a = Vec::with_capacity(n * n);
        let mut div_b = Vec::with_capacity(n * n);
        let mut neg_index = Vec::with_capacity(n * n);
        for ix in 0..n {
            let kx = signed_index(ix, n) * dk;
            for iy in 0..n {
                let ky = signed_index(iy, n) * dk;
                let k = (kx * kx + ky * ky).sqrt();
                let kappa = sinc(medium.sound_speed * k * medium.dt / 2.0);
                let dxp = i * kx * Complex64::from_polar(1.0, kx * half) * kappa;
                let dyp = i * ky * Complex64::from_polar(1.0, ky * half) * kappa;
                let dxn = i * kx * Complex64::from_polar(1.0, -kx * half) * kappa;
                let dyn_ = i * ky * Complex64::from_polar(1.0, -ky * half) * kappa;
                grad_op.push(dxp + i * dyp);
                div_a.push((dxn + dyn_) / 2.0);
                div_b.push((dxn - dyn_) / 2.0);
                neg_index.push(((n - ix) % n) * n + (n - iy) % n);
            }
        }
        Ok(KSpaceSolver {
            medium: medium.clone(),
            grid,
            n,
            fft: Fft2::new(n),
            grad_op,
            div_a,
            div_b,
            neg_index,
            pml: pml_profile(n, medium.pml_width, medium, false),
            pml_sg: pml_profile(n, medium.pml_width, medium, true),
            buf: vec![Complex64::default(); n * n],
            work: vec![Complex64::default(); n * n],
        })
    }

    pub fn medium(&self) -> &Medium {
        &self.medium
    }

    /// Side length of the padded simulation grid.
    pub fn sim_size(&self) -> usize {
        self.n
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    /// Flat simulation-grid index of image pixel `(x, y)`.
    pub fn node(&self, x: usize, y: usize) -> usize {
        let off = self.medium.pml_width;
        (y + off) * self.n + x + off
    }

    pub fn zero_state(&self) -> WaveState {
        let z = vec![0.0; self.n * self.n];
        WaveState {
            p: z.clone(),
            ux: z.clone(),
            uy: z.clone(),
            rhox: z.clone(),
            rhoy: z,
            step: 0,
        }
    }

    /// State at `t = 0` for initial pressure `p0` and zero particle velocity.
    /// The velocity is set to its value at `-dt/2` so that the first leapfrog
    /// update centres it on zero.
    pub fn initial_state(&mut self, p0: &Image2D) -> Result<WaveState> {
        if p0.size() != self.grid {
            return Err(Error::shape(
                "simulate_forward",
                format!("initial pressure is {} px, solver grid is {}", p0.size(), self.grid),
            ));
        }
        let mut s = self.zero_state();
        let c2 = self.medium.sound_speed.powi(2);
        for y in 0..self.grid {
            for x in 0..self.grid {
                let v = p0.get(y, x);
                let k = self.node(x, y);
                s.p[k] = v;
                s.rhox[k] = v / (2.0 * c2);
                s.rhoy[k] = v / (2.0 * c2);
            }
        }
        self.pressure_gradient(&s.p);
        let scale = self.medium.dt / (2.0 * DENSITY);
        for (k, g) in self.buf.iter().enumerate() {
            s.ux[k] = scale * g.re;
            s.uy[k] = scale * g.im;
        }
        Ok(s)
    }

    /// Leaves `kappa * grad(p)` on the staggered grid in `buf` as
    /// `(d/dx, d/dy)` in the real and imaginary parts.
    fn pressure_gradient(&mut self, p: &[f64]) {
        for (b, &v) in self.buf.iter_mut().zip(p) {
            *b = Complex64::new(v, 0.0);
        }
        self.fft.forward(&mut self.buf);
        for (b, op) in self.buf.iter_mut().zip(&self.grad_op) {
            *b *= op;
        }
        self.fft.inverse(&mut self.buf);
    }

    /// Advances one time step. Both real velocity components are transformed
    /// together as `ux + i uy`; their spectra are separated with the Hermitian
    /// symmetry `U(-k) = conj(U(k))` and recombined so the inverse transform
    /// returns `(dux/dx, duy/dy)` as real and imaginary parts.
    pub fn step(&mut self, s: &mut WaveState) {
        let n = self.n;
        let dt = self.medium.dt;
        self.pressure_gradient(&s.p);
        let vel_scale = dt / DENSITY;
        for y in 0..n {
            let py = self.pml_sg[y];
            for x in 0..n {
                let k = y * n + x;
                let px = self.pml_sg[x];
                let g = self.buf[k];
                s.ux[k] = px * (px * s.ux[k] - vel_scale * g.re);
                s.uy[k] = py * (py * s.uy[k] - vel_scale * g.im);
            }
        }
        for ((b, &ux), &uy) in self.buf.iter_mut().zip(&s.ux).zip(&s.uy) {
            *b = Complex64::new(ux, uy);
        }
        self.fft.forward(&mut self.buf);
        for k in 0..n * n {
            let z = self.buf[k];
            let zn = self.buf[self.neg_index[k]].conj();
            self.work[k] = z * self.div_a[k] + zn * self.div_b[k];
        }
        self.fft.inverse(&mut self.work);
        let rho_scale = dt * DENSITY;
        let c2 = self.medium.sound_speed.powi(2);
        for y in 0..n {
            let py = self.pml[y];
            for x in 0..n {
                let k = y * n + x;
                let px = self.pml[x];
                let d = self.work[k];
                s.rhox[k] = px * (px * s.rhox[k] - rho_scale * d.re);
                s.rhoy[k] = py * (py * s.rhoy[k] - rho_scale * d.im);
                s.p[k] = c2 * (s.rhox[k] + s.rhoy[k]);
            }
        }
        s.step += 1;
    }

    /// Overwrites the pressure at one node, splitting it evenly between the
    /// density components.
    pub fn set_pressure(&self, s: &mut WaveState, node: usize, value: f64) {
        let c2 = self.medium.sound_speed.powi(2);
        s.rhox[node] = value / (2.0 * c2);
        s.rhoy[node] = value / (2.0 * c2);
        s.p[node] = value;
    }

    /// Pressure restricted to the image (non-absorbing) region.
    pub fn interior_pressure(&self, s: &WaveState) -> Image2D {
        Image2D::from_fn(self.grid, |y, x| s.p[self.node(x, y)]).with_pixel_spacing(self.medium.dx)
    }

    /// Acoustic energy per unit depth inside the image region.
    pub fn interior_energy(&self, s: &WaveState) -> f64 {
        let c2 = self.medium.sound_speed.powi(2);
        let mut e = 0.0;
        for y in 0..self.grid {
            for x in 0..self.grid {
                let k = self.node(x, y);
                e += s.p[k].powi(2) / (2.0 * DENSITY * c2) + 0.5 * DENSITY * (s.ux[k].powi(2) + s.uy[k].powi(2));
            }
        }
        e * self.medium.dx * self.medium.dx
    }

    fn check_finite(s: &WaveState) -> Result<()> {
        if s.p.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { step: s.step })
        }
    }
}

/// Simulates propagation of the initial pressure `p0` and records the
/// pressure at each detector node for `medium.n_steps` samples starting at
/// `t = 0`.
pub fn simulate_forward(p0: &Image2D, medium: &Medium, sensors: &SensorGeometry) -> Result<SensorData> {
    check_image(p0, sensors)?;
    let mut solver = KSpaceSolver::new(medium, sensors.grid)?;
    let nodes: Vec<usize> = sensors.positions.iter().map(|&(x, y)| solver.node(x, y)).collect();
    let mut data = SensorData::zeros(nodes.len(), medium.n_steps, medium.dt);
    let mut state = solver.initial_state(p0)?;
    for t in 0..medium.n_steps {
        if t > 0 {
            solver.step(&mut state);
            KSpaceSolver::check_finite(&state)?;
        }
        for (i, &node) in nodes.iter().enumerate() {
            data.trace_mut(i)[t] = state.p[node];
        }
    }
    Ok(data)
}

/// Time-reversal reconstruction: starting from a quiescent field, the
/// recorded series are re-imposed backwards in time as pressure values at
/// the detector nodes; the field left after the `t = 0` sample is the image.
pub fn time_reverse(data: &SensorData, medium: &Medium, sensors: &SensorGeometry, grid: usize) -> Result<Image2D> {
    if data.n_sensors() != sensors.len() {
        return Err(Error::shape(
            "time_reverse",
            format!("{} traces for {} detectors", data.n_sensors(), sensors.len()),
        ));
    }
    if data.n_steps() != medium.n_steps {
        return Err(Error::shape(
            "time_reverse",
            format!(
                "{} samples per trace, medium expects {}",
                data.n_steps(),
                medium.n_steps
            ),
        ));
    }
    if grid != sensors.grid {
        return Err(Error::shape(
            "time_reverse",
            format!("grid {grid} does not match sensor grid {}", sensors.grid),
        ));
    }
    let mut solver = KSpaceSolver::new(medium, grid)?;
    let nodes: Vec<usize> = sensors.positions.iter().map(|&(x, y)| solver.node(x, y)).collect();
    let mut state = solver.zero_state();
    let t_len = medium.n_steps;
    for t in 0..t_len {
        solver.step(&mut state);
        for (i, &node) in nodes.iter().enumerate() {
            solver.set_pressure(&mut state, node, data.trace(i)[t_len - 1 - t]);
        }
        KSpaceSolver::check_finite(&state)?;
    }
    Ok(solver.interior_pressure(&state))
}
