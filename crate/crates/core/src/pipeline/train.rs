use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Pair;
use crate::error::{Error, Result};
use crate::image::Image2D;
use crate::networks::Model;
use crate::rng::{derive_seed, rng_from};
use crate::tensor::{Element, Mode, ParameterStore, Tape, Tensor};

pub const LOG_EVERY: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 10_000,
            learning_rate: 1e-4,
            batch_size: 3,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument(
                "learning rate and moment decays out of range".into(),
            ));
        }
        Ok(())
    }
}

/// Adaptive moment estimation with bias correction.
pub struct Adam<T> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Element> Adam<T> {
    pub fn new(cfg: &TrainConfig, store: &ParameterStore<T>) -> Self {
        let zeros = || store.params().iter().map(|p| vec![T::zero(); p.value.len()]).collect();
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, store: &mut ParameterStore<T>) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2) = (self.beta1, self.beta2);
        for ((p, m), v) in store.params_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            let grad = p.grad.data();
            let value = p.value.data_mut();
            for i in 0..value.len() {
                let g = grad[i].f64();
                let mi = b1 * m[i].f64() + (1.0 - b1) * g;
                let vi = b2 * v[i].f64() + (1.0 - b2) * g * g;
                m[i] = T::of(mi);
                v[i] = T::of(vi);
                let update = self.lr * (mi / c1) / ((vi / c2).sqrt() + self.epsilon);
                value[i] = T::of(value[i].f64() - update);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: f64,
    /// `10 log10(peak^2 / loss)` with the batch target peak.
    pub psnr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<LossRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss,psnr\n");
        for r in &self.records {
            out.push_str(&format!("{},{:e},{:.4}\n", r.iteration, r.loss, r.psnr));
        }
        out
    }
}

fn stack<T: Element>(images: &[&Image2D]) -> Tensor<T> {
    let n = images[0].size();
    let mut data = Vec::with_capacity(images.len() * n * n);
    for img in images {
        data.extend(img.values().iter().map(|&v| T::of(v)));
    }
    Tensor::new(vec![images.len(), 1, n, n], data).expect("stacked images share one size")
}

/// Mini-batch training: each iteration draws `batch_size` pairs uniformly
/// with replacement, takes one optimizer step on the mean squared error and
/// logs the loss every [`LOG_EVERY`] iterations.
pub fn train<T: Element>(model: &mut Model<T>, pairs: &[Pair], cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut adam = Adam::new(cfg, model.params());
    let mut rng = rng_from(derive_seed(cfg.seed, "batches", 0));
    let mut log = TrainLog::default();
    for it in 0..cfg.iterations {
        let picks: Vec<&Pair> = (0..cfg.batch_size)
            .map(|_| &pairs[rng.random_range(0..pairs.len())])
            .collect();
        let x = stack::<T>(&picks.iter().map(|p| &p.x).collect::<Vec<_>>());
        let y = stack::<T>(&picks.iter().map(|p| &p.y).collect::<Vec<_>>());
        let peak = picks.iter().map(|p| p.y.max()).fold(f64::MIN, f64::max);

        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let yv = tape.constant(y);
        let out = model.forward(&mut tape, xv, Mode::Train)?;
        let loss_var = tape.mse_loss(out, yv)?;
        let loss = tape.value(loss_var).data()[0].f64();
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                seed: cfg.seed,
                loss,
            });
        }
        if it % LOG_EVERY == 0 || it + 1 == cfg.iterations {
            let psnr = 10.0 * (peak * peak / loss).log10();
            log::info!("iteration {it}: loss {loss:.6e} ({psnr:.2} dB)");
            log.records.push(LossRecord {
                iteration: it,
                loss,
                psnr,
            });
        }
        model.params_mut().zero_grad();
        tape.backward(loss_var, model.params_mut())?;
        adam.step(model.params_mut());
    }
    Ok(log)
}

/// Continues training on a new set with fresh optimizer moments.
pub fn fine_tune<T: Element>(
    model: &mut Model<T>,
    pairs: &[Pair],
    cfg: &TrainConfig,
    iterations: usize,
) -> Result<TrainLog> {
    let cfg = TrainConfig {
        iterations,
        ..cfg.clone()
    };
    train(model, pairs, &cfg)
}

/// Eval-mode network output for each input image.
pub fn restore<T: Element>(model: &Model<T>, inputs: &[&Image2D]) -> Result<Vec<Image2D>> {
    inputs
        .iter()
        .map(|img| {
            let out = model.predict(&stack::<T>(&[img]))?;
            let values = out.data().iter().map(|v| v.f64()).collect();
            Ok(Image2D::from_values(img.size(), values)?.with_pixel_spacing(img.pixel_spacing()))
        })
        .collect()
}
