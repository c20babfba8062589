//! Finite-difference gradient checks and direct-formula oracles shared by
//! the property suites and the acceptance report.

#![allow(dead_code)]

use rand::Rng;
use rand_distr::StandardNormal;
use sparsepat::networks::{build_dense_block, build_model, ArchSpec, DenseBlockSpec, Model};
use sparsepat::rng::rng_from;
use sparsepat::tensor::{ops, Mode, RunningStats, Tape, Tensor, Var};
use sparsepat::Image2D;

pub const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
pub const EPS: f64 = 1e-6;
pub const TOL: f64 = 1e-4;

pub fn randn(seed: u64, shape: &[usize], scale: f64) -> Tensor<f64> {
    let mut rng = rng_from(seed);
    Tensor::from_fn(shape.to_vec(), |_| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Records `f(inputs)` projected onto fixed random weights. Every input is
/// a gradient-tracked leaf.
fn eval<F>(f: &F, inputs: &[Tensor<f64>], proj_seed: u64) -> (Tape<f64>, Vec<Var>, Var)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let w = randn(proj_seed + 1000, tape.value(out).shape(), 1.0);
    let loss = tape.weighted_sum(out, w).unwrap();
    (tape, vars, loss)
}

/// Largest relative error between tape gradients and central differences
/// over all inputs of `f`.
pub fn grad_error<F>(f: F, inputs: Vec<Tensor<f64>>, proj_seed: u64) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let (tape, vars, loss) = eval(&f, &inputs, proj_seed);
    let grads = tape.gradients(loss).unwrap();
    let mut worst = 0.0f64;
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        let mut numeric = vec![0.0; inputs[i].len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += EPS;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= EPS;
            let (tp, _, lp) = eval(&f, &plus, proj_seed);
            let (tm, _, lm) = eval(&f, &minus, proj_seed);
            *slot = (tp.value(lp).item().unwrap() - tm.value(lm).item().unwrap()) / (2.0 * EPS);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

pub fn conv2d_error(seed: u64) -> f64 {
    [(1, 1, 3), (1, 0, 1), (2, 1, 3)]
        .into_iter()
        .map(|(stride, pad, k)| {
            grad_error(
                |t, v| t.conv2d(v[0], v[1], v[2], stride, pad).unwrap(),
                vec![
                    randn(seed, &[2, 3, 6, 6], 1.0),
                    randn(seed + 100, &[4, 3, k, k], 0.5),
                    randn(seed + 200, &[4], 0.5),
                ],
                seed,
            )
        })
        .fold(0.0, f64::max)
}

pub fn up_conv_error(seed: u64) -> f64 {
    grad_error(
        |t, v| t.up_conv2(v[0], v[1], v[2]).unwrap(),
        vec![
            randn(seed, &[2, 3, 3, 4], 1.0),
            randn(seed + 100, &[3, 2, 2, 2], 0.5),
            randn(seed + 200, &[2], 0.5),
        ],
        seed,
    )
}

pub fn batch_norm_train_error(seed: u64) -> f64 {
    grad_error(
        |t, v| {
            let mut stats = RunningStats::empty(3);
            t.batch_norm(v[0], v[1], v[2], &mut stats, Mode::Train).unwrap()
        },
        vec![
            randn(seed, &[2, 3, 4, 3], 1.0),
            randn(seed + 100, &[3], 1.0),
            randn(seed + 200, &[3], 1.0),
        ],
        seed,
    )
}

pub fn batch_norm_eval_error(seed: u64) -> f64 {
    grad_error(
        |t, v| {
            let mut stats = RunningStats {
                mean: vec![0.2, -0.1, 0.4],
                var: vec![1.5, 0.7, 2.0],
                populated: true,
            };
            t.batch_norm(v[0], v[1], v[2], &mut stats, Mode::Eval).unwrap()
        },
        vec![
            randn(seed, &[2, 3, 3, 3], 1.0),
            randn(seed + 100, &[3], 1.0),
            randn(seed + 200, &[3], 1.0),
        ],
        seed,
    )
}

pub fn relu_error(seed: u64) -> f64 {
    grad_error(|t, v| t.relu(v[0]), vec![randn(seed, &[1, 2, 5, 5], 1.0)], seed)
}

pub fn max_pool_error(seed: u64) -> f64 {
    grad_error(
        |t, v| t.max_pool2(v[0]).unwrap(),
        vec![randn(seed, &[2, 2, 6, 4], 1.0)],
        seed,
    )
}

pub fn concat_error(seed: u64) -> f64 {
    grad_error(
        |t, v| t.concat_channels(v[0], v[1]).unwrap(),
        vec![randn(seed, &[2, 1, 3, 3], 1.0), randn(seed + 1, &[2, 3, 3, 3], 1.0)],
        seed,
    )
}

pub fn add_error(seed: u64) -> f64 {
    grad_error(
        |t, v| t.add(v[0], v[1]).unwrap(),
        vec![randn(seed, &[1, 2, 3, 3], 1.0), randn(seed + 1, &[1, 2, 3, 3], 1.0)],
        seed,
    )
}

pub fn mse_error(seed: u64) -> f64 {
    grad_error(
        |t, v| t.mse_loss(v[0], v[1]).unwrap(),
        vec![randn(seed, &[1, 1, 4, 4], 1.0), randn(seed + 1, &[1, 1, 4, 4], 1.0)],
        seed,
    )
}

pub fn reuse_error(seed: u64) -> f64 {
    grad_error(
        |t, v| {
            let r = t.relu(v[0]);
            let s = t.add(v[0], r).unwrap();
            t.concat_channels(s, v[0]).unwrap()
        },
        vec![randn(seed, &[1, 2, 4, 4], 1.0)],
        seed,
    )
}

fn projected_output(model: &Model<f64>, input: &Tensor<f64>, seed: u64) -> f64 {
    let mut m = model.clone();
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let out = m.forward(&mut tape, x, Mode::Train).unwrap();
    let w = randn(seed, tape.value(out).shape(), 1.0);
    let proj = tape.weighted_sum(out, w).unwrap();
    tape.value(proj).item().unwrap()
}

/// Parameter gradients of a whole model, sampled at up to seven
/// coordinates per tensor.
pub fn model_grad_error(base: Model<f64>, input: Tensor<f64>, seed: u64) -> f64 {
    let mut model = base.clone();
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let out = model.forward(&mut tape, x, Mode::Train).unwrap();
    let w = randn(seed + 9, tape.value(out).shape(), 1.0);
    let proj = tape.weighted_sum(out, w).unwrap();
    model.params_mut().zero_grad();
    tape.backward(proj, model.params_mut()).unwrap();

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (pi, p) in base.params().params().iter().enumerate() {
        let stride = (p.value.len() / 6).max(1);
        for j in (0..p.value.len()).step_by(stride) {
            let mut plus = base.clone();
            plus.params_mut().params_mut()[pi].value.data_mut()[j] += EPS;
            let mut minus = base.clone();
            minus.params_mut().params_mut()[pi].value.data_mut()[j] -= EPS;
            let d = projected_output(&plus, &input, seed + 9) - projected_output(&minus, &input, seed + 9);
            numeric.push(d / (2.0 * EPS));
            analytic.push(model.params().params()[pi].grad.data()[j]);
        }
    }
    rel_err(&analytic, &numeric)
}

pub fn perturbed(mut m: Model<f64>, seed: u64) -> Model<f64> {
    let mut rng = rng_from(seed ^ 0xabc);
    for p in m.params_mut().params_mut() {
        for v in p.value.data_mut() {
            *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    m
}

pub fn dense_block_error(seed: u64) -> f64 {
    let model = perturbed(build_dense_block(DenseBlockSpec::new(4, 2), seed).unwrap(), seed);
    model_grad_error(model, randn(seed, &[2, 4, 5, 5], 1.0), seed)
}

pub fn fd_unet_fragment_error(seed: u64) -> f64 {
    let arch = ArchSpec::fd_unet(8, 1).with_levels(2);
    let model = perturbed(build_model(&arch, seed).unwrap(), seed);
    model_grad_error(model, randn(seed, &[2, 1, 4, 4], 1.0), seed)
}

pub fn unet_fragment_error(seed: u64) -> f64 {
    let arch = ArchSpec::unet(2).with_levels(2);
    let model = perturbed(build_model(&arch, seed).unwrap(), seed);
    model_grad_error(model, randn(seed, &[2, 1, 4, 4], 1.0), seed)
}

/// Every gradient check by name, for one seed.
pub fn gradient_suite(seed: u64) -> Vec<(&'static str, f64)> {
    vec![
        ("conv2d", conv2d_error(seed)),
        ("up_conv2", up_conv_error(seed)),
        ("batch_norm/train", batch_norm_train_error(seed)),
        ("batch_norm/eval", batch_norm_eval_error(seed)),
        ("relu", relu_error(seed)),
        ("max_pool2", max_pool_error(seed)),
        ("concat", concat_error(seed)),
        ("add", add_error(seed)),
        ("mse", mse_error(seed)),
        ("reuse", reuse_error(seed)),
        ("dense_block", dense_block_error(seed)),
        ("fd_unet_fragment", fd_unet_fragment_error(seed)),
        ("unet_fragment", unet_fragment_error(seed)),
    ]
}

/// `|<Ax, y> - <x, A^T y>|` relative to `|<Ax, y>|`.
pub fn conv_adjoint_gap(seed: u64, stride: usize, pad: usize) -> f64 {
    let x = randn(seed, &[2, 3, 7, 6], 1.0);
    let w = randn(seed + 1, &[4, 3, 3, 3], 1.0);
    let ax = ops::conv2d(&x, &w, &[0.0; 4], stride, pad).unwrap();
    let y = randn(seed + 2, ax.shape(), 1.0);
    let aty = ops::conv2d_backward(&x, &w, stride, pad, &y, true)
        .unwrap()
        .input
        .unwrap();
    let (lhs, rhs) = (ax.dot(&y), x.dot(&aty));
    (lhs - rhs).abs() / lhs.abs().max(1.0)
}

pub fn up_conv_adjoint_gap(seed: u64, c: usize, h: usize, w: usize, o: usize) -> f64 {
    let x = randn(seed, &[2, c, h, w], 1.0);
    let wt = randn(seed + 1, &[c, o, 2, 2], 1.0);
    let ax = ops::up_conv2(&x, &wt, &vec![0.0; o]).unwrap();
    let y = randn(seed + 2, ax.shape(), 1.0);
    let aty = ops::up_conv2_backward(&x, &wt, &y).unwrap().input.unwrap();
    let (lhs, rhs) = (ax.dot(&y), x.dot(&aty));
    (lhs - rhs).abs() / lhs.abs().max(1.0)
}

pub fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
    let (n, c, h, wd) = x.dims4("oracle").unwrap();
    let (o, _, kh, kw) = w.dims4("oracle").unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    for bn in 0..n {
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[oc];
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.data()[((bn * c + ic) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((oc * c + ic) * kh + ky) * kw + kx];
                                }
                            }
                        }
                    }
                    out[((bn * o + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, o, oh, ow], out).unwrap()
}

pub fn up_conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64]) -> Tensor<f64> {
    let (n, c, h, wd) = x.dims4("oracle").unwrap();
    let o = w.shape()[1];
    let mut out = vec![0.0; n * o * 4 * h * wd];
    for bn in 0..n {
        for oc in 0..o {
            for y in 0..2 * h {
                for xx in 0..2 * wd {
                    let mut acc = b[oc];
                    for ic in 0..c {
                        acc += x.data()[((bn * c + ic) * h + y / 2) * wd + xx / 2]
                            * w.data()[((ic * o + oc) * 2 + y % 2) * 2 + xx % 2];
                    }
                    out[((bn * o + oc) * 2 * h + y) * 2 * wd + xx] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, o, 2 * h, 2 * wd], out).unwrap()
}

pub fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Largest deviation of `conv2d` from the nested-loop oracle for one shape.
pub fn conv_oracle_gap(seed: u64, shape: [usize; 4], out: usize, k: usize, stride: usize) -> f64 {
    let pad = k / 2;
    let x = randn(seed, &shape, 1.0);
    let w = randn(seed ^ 1, &[out, shape[1], k, k], 1.0);
    let b = randn(seed ^ 2, &[out], 1.0).into_data();
    let got = ops::conv2d(&x, &w, &b, stride, pad).unwrap();
    max_abs_diff(&got, &conv_oracle(&x, &w, &b, stride, pad))
}

pub fn psnr_oracle(test: &Image2D, reference: &Image2D) -> f64 {
    let n = test.values().len() as f64;
    let mut mse = 0.0;
    for (a, b) in test.values().iter().zip(reference.values()) {
        mse += (a - b) * (a - b);
    }
    mse /= n;
    let peak = reference.values().iter().cloned().fold(f64::MIN, f64::max);
    10.0 * (peak * peak / mse).log10()
}

/// Mean SSIM over every fully covered 11x11 window with a normalized 2D
/// Gaussian (sigma 1.5), dynamic range from the reference.
pub fn ssim_oracle(a: &Image2D, b: &Image2D) -> f64 {
    let n = a.size();
    let mut g = [[0.0; 11]; 11];
    let mut total = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let r2 = (i as f64 - 5.0).powi(2) + (j as f64 - 5.0).powi(2);
            *v = (-r2 / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let max = b.values().iter().cloned().fold(f64::MIN, f64::max);
    let min = b.values().iter().cloned().fold(f64::MAX, f64::min);
    let l = max - min;
    let (c1, c2) = ((0.01 * l).powi(2), (0.03 * l).powi(2));
    let mut sum = 0.0;
    let mut count = 0;
    for y0 in 0..=n - 11 {
        for x0 in 0..=n - 11 {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let w = g[i][j] / total;
                    ma += w * a.get(y0 + i, x0 + j);
                    mb += w * b.get(y0 + i, x0 + j);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let w = g[i][j] / total;
                    let (da, db) = (a.get(y0 + i, x0 + j) - ma, b.get(y0 + i, x0 + j) - mb);
                    va += w * da * da;
                    vb += w * db * db;
                    cov += w * da * db;
                }
            }
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    sum / count as f64
}

pub fn noise_image(size: usize, seed: u64) -> Image2D {
    Image2D::from_values(size, randn(seed, &[size * size], 1.0).into_data()).unwrap()
}
