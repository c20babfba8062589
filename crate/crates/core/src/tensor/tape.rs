use super::ops::{self, BnSaved, BN_MOMENTUM};
use super::{Element, ParameterId, ParameterStore, RunningStats, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Param(ParameterId),
    Conv {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    },
    UpConv {
        input: Var,
        weight: Var,
        bias: Var,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        saved: BnSaved<T>,
        batch_stats: bool,
    },
    Relu(Var),
    MaxPool {
        input: Var,
        argmax: Vec<u32>,
    },
    Concat(Var, Var),
    Add(Var, Var),
    Mse {
        prediction: Var,
        target: Var,
    },
    Sum(Var),
    WeightedSum {
        input: Var,
        weights: Tensor<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Linear record of executed operations. Nodes are appended in execution
/// order, so the vector is already topologically sorted.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Input that gradients are tracked for.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that needs no gradient (data, targets).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, store: &ParameterStore<T>, id: ParameterId) -> Var {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Param(id), p.trainable)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = ops::conv2d(
            self.value(input),
            self.value(weight),
            self.value(bias).data(),
            stride,
            pad,
        )?;
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(
            out,
            Op::Conv {
                input,
                weight,
                bias,
                stride,
                pad,
            },
            rg,
        ))
    }

    pub fn up_conv2(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = ops::up_conv2(self.value(input), self.value(weight), self.value(bias).data())?;
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(out, Op::UpConv { input, weight, bias }, rg))
    }

    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats,
        mode: Mode,
    ) -> Result<Var> {
        let channels = self.value(input).dims4("batch_norm")?.1;
        if stats.channels() != channels {
            return Err(Error::shape(
                "batch_norm",
                format!(
                    "running stats cover {} channels, input has {channels}",
                    stats.channels()
                ),
            ));
        }
        let (out, saved) = match mode {
            Mode::Train => {
                let (out, saved) = ops::batch_norm(
                    self.value(input),
                    self.value(gamma).data(),
                    self.value(beta).data(),
                    None,
                )?;
                stats.update(&saved.batch_mean, &saved.batch_var_unbiased, BN_MOMENTUM);
                (out, saved)
            }
            Mode::Eval => {
                if !stats.populated {
                    return Err(Error::EmptyRunningStats);
                }
                ops::batch_norm(
                    self.value(input),
                    self.value(gamma).data(),
                    self.value(beta).data(),
                    Some((&stats.mean, &stats.var)),
                )?
            }
        };
        let rg = self.rg(&[input, gamma, beta]);
        Ok(self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                saved,
                batch_stats: mode == Mode::Train,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = ops::relu(self.value(input));
        let rg = self.rg(&[input]);
        self.push(out, Op::Relu(input), rg)
    }

    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = ops::max_pool2(self.value(input))?;
        let rg = self.rg(&[input]);
        Ok(self.push(out, Op::MaxPool { input, argmax }, rg))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::concat_channels(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Concat(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::add(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mse_loss(&mut self, prediction: Var, target: Var) -> Result<Var> {
        let loss = ops::mse(self.value(prediction), self.value(target))?;
        let rg = self.rg(&[prediction, target]);
        Ok(self.push(Tensor::scalar(loss), Op::Mse { prediction, target }, rg))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).sum();
        let rg = self.rg(&[input]);
        self.push(Tensor::scalar(total), Op::Sum(input), rg)
    }

    /// `sum(input * weights)`; projects a tensor output onto a fixed direction.
    pub fn weighted_sum(&mut self, input: Var, weights: Tensor<T>) -> Result<Var> {
        if weights.shape() != self.value(input).shape() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{:?} vs {:?}", weights.shape(), self.value(input).shape()),
            ));
        }
        let total = self.value(input).dot(&weights);
        let rg = self.rg(&[input]);
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum { input, weights }, rg))
    }

    /// Reverse sweep from a scalar root. Gradients of parameter nodes are
    /// added into `store`; call [`ParameterStore::zero_grad`] between steps.
    pub fn backward(&self, root: Var, store: &mut ParameterStore<T>) -> Result<Gradients<T>> {
        let grads = self.gradients(root)?;
        for (node, g) in self.nodes.iter().zip(&grads.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                store.accumulate(*id, g)?;
            }
        }
        Ok(grads)
    }

    /// Reverse sweep without touching any parameter store.
    pub fn gradients(&self, root: Var) -> Result<Gradients<T>> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(root_value.shape().to_vec(), T::one()));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = None;
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            if matches!(node.op, Op::Leaf | Op::Param(_)) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let mut send = |v: Var, d: Tensor<T>| -> Result<()> {
            if !self.wants(v) {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(acc) => {
                    if acc.shape() != d.shape() {
                        return Err(Error::shape(
                            "backward",
                            format!("gradient {:?} into node of shape {:?}", d.shape(), acc.shape()),
                        ));
                    }
                    for (a, &b) in acc.data_mut().iter_mut().zip(d.data()) {
                        *a += b;
                    }
                }
                slot @ None => *slot = Some(d),
            }
            Ok(())
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv {
                input,
                weight,
                bias,
                stride,
                pad,
            } => {
                let cg = ops::conv2d_backward(
                    self.value(*input),
                    self.value(*weight),
                    *stride,
                    *pad,
                    g,
                    self.wants(*input),
                )?;
                if let Some(dx) = cg.input {
                    send(*input, dx)?;
                }
                send(*weight, cg.weight)?;
                let n = cg.bias.len();
                send(*bias, Tensor::new(vec![n], cg.bias)?)?;
            }
            Op::UpConv { input, weight, bias } => {
                let cg = ops::up_conv2_backward(self.value(*input), self.value(*weight), g)?;
                if let Some(dx) = cg.input {
                    send(*input, dx)?;
                }
                send(*weight, cg.weight)?;
                let n = cg.bias.len();
                send(*bias, Tensor::new(vec![n], cg.bias)?)?;
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                saved,
                batch_stats,
            } => {
                let (dx, dgamma, dbeta) = ops::batch_norm_backward(saved, self.value(*gamma).data(), g, *batch_stats)?;
                send(*input, dx)?;
                let c = dgamma.len();
                send(*gamma, Tensor::new(vec![c], dgamma)?)?;
                send(*beta, Tensor::new(vec![c], dbeta)?)?;
            }
            Op::Relu(input) => {
                let x = self.value(*input);
                let d = Tensor::new(
                    x.shape().to_vec(),
                    x.data()
                        .iter()
                        .zip(g.data())
                        .map(|(&xv, &gv)| if xv > T::zero() { gv } else { T::zero() })
                        .collect(),
                )?;
                send(*input, d)?;
            }
            Op::MaxPool { input, argmax } => {
                let d = ops::max_pool2_backward(self.value(*input).shape(), argmax, g)?;
                send(*input, d)?;
            }
            Op::Concat(a, b) => {
                let ca = self.value(*a).dims4("concat_channels")?.1;
                let total = g.dims4("concat_channels")?.1;
                send(*a, g.slice_channels(0, ca)?)?;
                send(*b, g.slice_channels(ca, total)?)?;
            }
            Op::Add(a, b) => {
                send(*a, g.clone())?;
                send(*b, g.clone())?;
            }
            Op::Mse { prediction, target } => {
                let p = self.value(*prediction);
                let t = self.value(*target);
                let scale = g.data()[0] * T::of(2.0 / p.len() as f64);
                let d: Vec<T> = p
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(&pv, &tv)| scale * (pv - tv))
                    .collect();
                send(
                    *target,
                    Tensor::new(p.shape().to_vec(), d.iter().map(|&v| -v).collect())?,
                )?;
                send(*prediction, Tensor::new(p.shape().to_vec(), d)?)?;
            }
            Op::Sum(input) => {
                let shape = self.value(*input).shape().to_vec();
                send(*input, Tensor::full(shape, g.data()[0]))?;
            }
            Op::WeightedSum { input, weights } => {
                let s = g.data()[0];
                send(*input, weights.map(|w| w * s))?;
            }
        }
        Ok(())
    }
}
