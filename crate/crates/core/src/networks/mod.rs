//! Declarative UNet / fully dense UNet graphs.
//!
//! A [`ModelSpec`] is a topologically ordered list of layer nodes referring to
//! parameters by name; a [`Model`] pairs it with a [`ParameterStore`]. Both
//! architectures end with a 1x1 convolution predicting a residual that is
//! added back onto the input image.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Mode, ParameterId, ParameterStore, RunningStats, Tape, Tensor, Var};

mod build;
mod store;

pub use build::{build_dense_block, build_fd_unet, build_model, build_unet};
pub use store::{load_model, save_model, CHECKSUM_FILE, SPEC_FILE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    Unet,
    FdUnet,
}

impl ArchKind {
    pub fn label(self) -> &'static str {
        match self {
            ArchKind::Unet => "UNet",
            ArchKind::FdUnet => "FD-UNet",
        }
    }
}

impl std::str::FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "unet" => Ok(ArchKind::Unet),
            "fd_unet" | "fdunet" => Ok(ArchKind::FdUnet),
            other => Err(Error::InvalidArgument(format!(
                "unknown architecture {other:?} (expected unet or fd_unet)"
            ))),
        }
    }
}

pub const DENSE_LAYERS: usize = 4;
pub const DEFAULT_LEVELS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub kind: ArchKind,
    /// Feature maps at the first level.
    pub f1: usize,
    /// Growth rate at the first level; fully dense variant only.
    pub k1: Option<usize>,
    pub levels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ArchSpec {
    pub fn unet(f1: usize) -> Self {
        ArchSpec {
            kind: ArchKind::Unet,
            f1,
            k1: None,
            levels: DEFAULT_LEVELS,
            in_channels: 1,
            out_channels: 1,
        }
    }

    pub fn fd_unet(f1: usize, k1: usize) -> Self {
        ArchSpec {
            kind: ArchKind::FdUnet,
            f1,
            k1: Some(k1),
            ..Self::unet(f1)
        }
    }

    pub fn with_levels(mut self, levels: usize) -> Self {
        self.levels = levels;
        self
    }

    /// Growth rate at 1-based level `i`: `k1 * 2^(i-1)`.
    pub fn growth_at(&self, level: usize) -> Option<usize> {
        self.k1.map(|k| k << (level - 1))
    }

    /// Side lengths must be divisible by this.
    pub fn spatial_multiple(&self) -> usize {
        1 << (self.levels - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::Architecture(format!(
                "need at least 2 levels, got {}",
                self.levels
            )));
        }
        if self.in_channels != 1 || self.out_channels != 1 {
            return Err(Error::Architecture(
                "residual learning needs single-channel input and output".into(),
            ));
        }
        match self.kind {
            ArchKind::Unet => {
                if self.f1 < 2 {
                    return Err(Error::Architecture(format!("f1 = {} is below 2", self.f1)));
                }
                if ![8, 16, 32, 64].contains(&self.f1) {
                    log::warn!("UNet f1 = {} is outside the usual 8/16/32/64 range", self.f1);
                }
            }
            ArchKind::FdUnet => {
                let k1 = self
                    .k1
                    .ok_or_else(|| Error::Architecture("fd_unet needs a growth rate k1".into()))?;
                if k1 == 0 || self.f1 != 8 * k1 {
                    return Err(Error::Architecture(format!(
                        "fd_unet requires f1 = 8 * k1, got f1 = {} and k1 = {k1}",
                        self.f1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Channel algebra of one dense block: four layers of 1x1 (to `in_channels`)
/// then 3x3 (to `growth`) convolutions, each followed by BN and ReLU.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseBlockSpec {
    pub in_channels: usize,
    pub growth: usize,
    pub layers: usize,
}

impl DenseBlockSpec {
    pub fn new(in_channels: usize, growth: usize) -> Self {
        DenseBlockSpec {
            in_channels,
            growth,
            layers: DENSE_LAYERS,
        }
    }

    /// Input channels of 1-based layer `l`: `F + k (l - 1)`.
    pub fn layer_input(&self, layer: usize) -> usize {
        self.in_channels + self.growth * (layer - 1)
    }

    pub fn out_channels(&self) -> usize {
        self.in_channels + self.layers * self.growth
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.in_channels
    }
}

/// Channel counts observed while a dense block was built.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseBlockAudit {
    pub name: String,
    pub spec: DenseBlockSpec,
    pub layer_inputs: Vec<usize>,
    pub output_channels: usize,
    pub pointwise_convs: usize,
    pub spatial_convs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LayerOp {
    Input,
    Conv {
        weight: String,
        bias: String,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        gamma: String,
        beta: String,
        stats: String,
    },
    Relu,
    MaxPool,
    UpConv {
        weight: String,
        bias: String,
    },
    Concat,
    Add,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    #[serde(flatten)]
    pub op: LayerOp,
    pub inputs: Vec<usize>,
    pub channels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Option<ArchSpec>,
    pub seed: u64,
    pub nodes: Vec<GraphNode>,
    pub output: usize,
    pub dense_blocks: Vec<DenseBlockAudit>,
}

impl ModelSpec {
    pub fn count_convs(&self, kernel: usize) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, LayerOp::Conv { kernel: k, .. } if k == kernel))
            .count()
    }
}

#[derive(Clone, Debug)]
enum Bound {
    None,
    Conv {
        weight: ParameterId,
        bias: ParameterId,
    },
    Bn {
        gamma: ParameterId,
        beta: ParameterId,
        stats: usize,
    },
}

/// A layer graph with its parameters.
#[derive(Clone, Debug)]
pub struct Model<T> {
    spec: ModelSpec,
    params: ParameterStore<T>,
    bound: Vec<Bound>,
}

impl<T: Element> Model<T> {
    pub fn new(spec: ModelSpec, params: ParameterStore<T>) -> Result<Self> {
        let stat_index: HashMap<&str, usize> = params
            .all_stats()
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.as_str(), i))
            .collect();
        let find = |name: &str| {
            params
                .find(name)
                .ok_or_else(|| Error::Architecture(format!("graph refers to missing parameter {name}")))
        };
        let mut bound = Vec::with_capacity(spec.nodes.len());
        for (i, node) in spec.nodes.iter().enumerate() {
            if node.inputs.iter().any(|&j| j >= i) {
                return Err(Error::Architecture(format!("node {i} is not topologically ordered")));
            }
            bound.push(match &node.op {
                LayerOp::Conv { weight, bias, .. } | LayerOp::UpConv { weight, bias } => Bound::Conv {
                    weight: find(weight)?,
                    bias: find(bias)?,
                },
                LayerOp::BatchNorm { gamma, beta, stats } => Bound::Bn {
                    gamma: find(gamma)?,
                    beta: find(beta)?,
                    stats: *stat_index
                        .get(stats.as_str())
                        .ok_or_else(|| Error::Architecture(format!("missing running stats {stats}")))?,
                },
                _ => Bound::None,
            });
        }
        if spec.output >= spec.nodes.len() {
            return Err(Error::Architecture("output node out of range".into()));
        }
        Ok(Model { spec, params, bound })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn arch(&self) -> Option<&ArchSpec> {
        self.spec.arch.as_ref()
    }

    pub fn params(&self) -> &ParameterStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore<T> {
        &mut self.params
    }

    /// Trainable element count: convolution weights and biases plus
    /// batch-norm scale and shift.
    pub fn param_count(&self) -> usize {
        self.params.trainable_count()
    }

    pub fn cast<U: Element>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            params: self.params.cast(),
            bound: self.bound.clone(),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = x.dims4("forward")?;
        let first = self.spec.nodes.first().map(|n| n.channels).unwrap_or(0);
        if c != first {
            return Err(Error::shape(
                "forward",
                format!("model expects {first} input channels, got {c}"),
            ));
        }
        if let Some(arch) = &self.spec.arch {
            let m = arch.spatial_multiple();
            if h % m != 0 || w % m != 0 {
                return Err(Error::shape(
                    "forward",
                    format!("spatial size {h}x{w} must be divisible by {m}"),
                ));
            }
        }
        Ok(())
    }

    /// Records the forward pass on `tape`. Train mode uses batch statistics
    /// and updates the running averages.
    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        let mut stats: Vec<RunningStats> = self.params.all_stats().iter().map(|(_, s)| s.clone()).collect();
        let out = self.run(tape, x, mode, &mut stats)?;
        if mode == Mode::Train {
            for ((_, dst), src) in self.params.all_stats_mut().iter_mut().zip(stats) {
                *dst = src;
            }
        }
        Ok(out)
    }

    /// Eval-mode inference without gradient tracking.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let input = tape.constant(x.clone());
        let mut stats: Vec<RunningStats> = self.params.all_stats().iter().map(|(_, s)| s.clone()).collect();
        let out = self.run(&mut tape, input, Mode::Eval, &mut stats)?;
        Ok(tape.value(out).clone())
    }

    fn run(&self, tape: &mut Tape<T>, x: Var, mode: Mode, stats: &mut [RunningStats]) -> Result<Var> {
        self.check_input(tape.value(x))?;
        let mut vars: Vec<Var> = Vec::with_capacity(self.spec.nodes.len());
        for (node, bound) in self.spec.nodes.iter().zip(&self.bound) {
            let inp = |k: usize| vars[node.inputs[k]];
            let v = match (&node.op, bound) {
                (LayerOp::Input, _) => x,
                (LayerOp::Conv { stride, pad, .. }, Bound::Conv { weight, bias }) => {
                    let w = tape.param(&self.params, *weight);
                    let b = tape.param(&self.params, *bias);
                    tape.conv2d(inp(0), w, b, *stride, *pad)?
                }
                (LayerOp::UpConv { .. }, Bound::Conv { weight, bias }) => {
                    let w = tape.param(&self.params, *weight);
                    let b = tape.param(&self.params, *bias);
                    tape.up_conv2(inp(0), w, b)?
                }
                (
                    LayerOp::BatchNorm { .. },
                    Bound::Bn {
                        gamma,
                        beta,
                        stats: idx,
                    },
                ) => {
                    let g = tape.param(&self.params, *gamma);
                    let b = tape.param(&self.params, *beta);
                    tape.batch_norm(inp(0), g, b, &mut stats[*idx], mode)?
                }
                (LayerOp::Relu, _) => tape.relu(inp(0)),
                (LayerOp::MaxPool, _) => tape.max_pool2(inp(0))?,
                (LayerOp::Concat, _) => tape.concat_channels(inp(0), inp(1))?,
                (LayerOp::Add, _) => tape.add(inp(0), inp(1))?,
                (op, _) => return Err(Error::Architecture(format!("unbound layer {op:?}"))),
            };
            vars.push(v);
        }
        Ok(vars[self.spec.output])
    }
}
