use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ArchKind, ArchSpec, DenseBlockAudit, DenseBlockSpec, GraphNode, LayerOp, Model, ModelSpec};
use crate::error::Result;
use crate::rng::rng_from;
use crate::tensor::{Element, Parameter, ParameterStore, RunningStats, Tensor};

enum Init {
    Kaiming { fan_in: usize },
    Zero,
}

struct Builder {
    nodes: Vec<GraphNode>,
    store: ParameterStore<f64>,
    rng: ChaCha8Rng,
    audits: Vec<DenseBlockAudit>,
}

impl Builder {
    fn new(in_channels: usize, seed: u64) -> Self {
        Builder {
            nodes: vec![GraphNode {
                op: LayerOp::Input,
                inputs: vec![],
                channels: in_channels,
            }],
            store: ParameterStore::new(),
            rng: rng_from(seed),
            audits: Vec::new(),
        }
    }

    fn push(&mut self, op: LayerOp, inputs: Vec<usize>, channels: usize) -> usize {
        self.nodes.push(GraphNode { op, inputs, channels });
        self.nodes.len() - 1
    }

    fn channels(&self, node: usize) -> usize {
        self.nodes[node].channels
    }

    fn tensor(&mut self, shape: Vec<usize>, init: Init) -> Tensor<f64> {
        match init {
            Init::Zero => Tensor::zeros(shape),
            Init::Kaiming { fan_in } => {
                let bound = (1.0 / fan_in as f64).sqrt();
                let rng = &mut self.rng;
                Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
            }
        }
    }

    fn conv_with(&mut self, name: &str, input: usize, out: usize, kernel: usize, init_zero: bool) -> usize {
        let cin = self.channels(input);
        let init = if init_zero {
            Init::Zero
        } else {
            Init::Kaiming {
                fan_in: cin * kernel * kernel,
            }
        };
        let w = self.tensor(vec![out, cin, kernel, kernel], init);
        let weight = format!("{name}.weight");
        let bias = format!("{name}.bias");
        self.store.add(Parameter::new(weight.clone(), w, true));
        self.store
            .add(Parameter::new(bias.clone(), Tensor::zeros(vec![out]), true));
        self.push(
            LayerOp::Conv {
                weight,
                bias,
                kernel,
                stride: 1,
                pad: kernel / 2,
            },
            vec![input],
            out,
        )
    }

    fn conv(&mut self, name: &str, input: usize, out: usize, kernel: usize) -> usize {
        self.conv_with(name, input, out, kernel, false)
    }

    fn bn(&mut self, name: &str, input: usize) -> usize {
        let c = self.channels(input);
        let gamma = format!("{name}.gamma");
        let beta = format!("{name}.beta");
        let stats = format!("{name}.running");
        self.store
            .add(Parameter::new(gamma.clone(), Tensor::full(vec![c], 1.0), true));
        self.store
            .add(Parameter::new(beta.clone(), Tensor::zeros(vec![c]), true));
        self.store.add_stats(stats.clone(), RunningStats::standard(c));
        self.push(LayerOp::BatchNorm { gamma, beta, stats }, vec![input], c)
    }

    fn relu(&mut self, input: usize) -> usize {
        let c = self.channels(input);
        self.push(LayerOp::Relu, vec![input], c)
    }

    fn conv_bn_relu(&mut self, name: &str, input: usize, out: usize, kernel: usize) -> usize {
        let c = self.conv(&format!("{name}.conv"), input, out, kernel);
        let b = self.bn(&format!("{name}.bn"), c);
        self.relu(b)
    }

    fn pool(&mut self, input: usize) -> usize {
        let c = self.channels(input);
        self.push(LayerOp::MaxPool, vec![input], c)
    }

    fn up(&mut self, name: &str, input: usize, out: usize) -> usize {
        let cin = self.channels(input);
        let w = self.tensor(vec![cin, out, 2, 2], Init::Kaiming { fan_in: cin });
        let weight = format!("{name}.weight");
        let bias = format!("{name}.bias");
        self.store.add(Parameter::new(weight.clone(), w, true));
        self.store
            .add(Parameter::new(bias.clone(), Tensor::zeros(vec![out]), true));
        self.push(LayerOp::UpConv { weight, bias }, vec![input], out)
    }

    fn concat(&mut self, a: usize, b: usize) -> usize {
        let c = self.channels(a) + self.channels(b);
        self.push(LayerOp::Concat, vec![a, b], c)
    }

    fn add(&mut self, a: usize, b: usize) -> usize {
        let c = self.channels(a);
        self.push(LayerOp::Add, vec![a, b], c)
    }

    fn dense_block(&mut self, name: &str, input: usize, spec: DenseBlockSpec) -> usize {
        let mut stack = input;
        let mut layer_inputs = Vec::with_capacity(spec.layers);
        for l in 1..=spec.layers {
            layer_inputs.push(self.channels(stack));
            let squeeze = self.conv_bn_relu(&format!("{name}.l{l}.pw"), stack, spec.bottleneck_channels(), 1);
            let grown = self.conv_bn_relu(&format!("{name}.l{l}.sp"), squeeze, spec.growth, 3);
            stack = self.concat(stack, grown);
        }
        self.audits.push(DenseBlockAudit {
            name: name.to_string(),
            spec,
            layer_inputs,
            output_channels: self.channels(stack),
            pointwise_convs: spec.layers,
            spatial_convs: spec.layers,
        });
        stack
    }

    fn finish<T: Element>(self, arch: Option<ArchSpec>, seed: u64, output: usize) -> Result<Model<T>> {
        let spec = ModelSpec {
            arch,
            seed,
            nodes: self.nodes,
            output,
            dense_blocks: self.audits,
        };
        Model::new(spec, self.store.cast())
    }
}

pub fn build_model<T: Element>(arch: &ArchSpec, seed: u64) -> Result<Model<T>> {
    arch.validate()?;
    match arch.kind {
        ArchKind::Unet => unet(arch, seed),
        ArchKind::FdUnet => fd_unet(arch, seed),
    }
}

pub fn build_unet<T: Element>(f1: usize, seed: u64) -> Result<Model<T>> {
    build_model(&ArchSpec::unet(f1), seed)
}

pub fn build_fd_unet<T: Element>(f1: usize, k1: usize, seed: u64) -> Result<Model<T>> {
    build_model(&ArchSpec::fd_unet(f1, k1), seed)
}

/// A lone dense block as a model: input of `spec.in_channels` channels,
/// output of `spec.out_channels()`.
pub fn build_dense_block<T: Element>(spec: DenseBlockSpec, seed: u64) -> Result<Model<T>> {
    let mut b = Builder::new(spec.in_channels, seed);
    let out = b.dense_block("block", 0, spec);
    b.finish(None, seed, out)
}

fn unet<T: Element>(arch: &ArchSpec, seed: u64) -> Result<Model<T>> {
    let mut b = Builder::new(arch.in_channels, seed);
    let mut skips = Vec::new();
    let mut x = 0;
    for level in 1..=arch.levels {
        let f = arch.f1 << (level - 1);
        x = b.conv_bn_relu(&format!("down{level}.a"), x, f, 3);
        x = b.conv_bn_relu(&format!("down{level}.b"), x, f, 3);
        if level < arch.levels {
            skips.push(x);
            x = b.pool(x);
        }
    }
    for level in (1..arch.levels).rev() {
        let f = arch.f1 << (level - 1);
        let up = b.up(&format!("up{level}.upconv"), x, f);
        let skip = skips.pop().expect("one skip per level");
        x = b.concat(skip, up);
        x = b.conv_bn_relu(&format!("up{level}.a"), x, f, 3);
        x = b.conv_bn_relu(&format!("up{level}.b"), x, f, 3);
    }
    let residual = b.conv_with("head", x, arch.out_channels, 1, true);
    let out = b.add(0, residual);
    b.finish(Some(*arch), seed, out)
}

fn fd_unet<T: Element>(arch: &ArchSpec, seed: u64) -> Result<Model<T>> {
    let k = |level: usize| arch.growth_at(level).expect("validated growth rate");
    let mut b = Builder::new(arch.in_channels, seed);
    let mut x = b.conv_bn_relu("stem", 0, arch.f1 / 2, 3);
    let mut skips = Vec::new();
    for level in 1..=arch.levels {
        let spec = DenseBlockSpec::new(4 * k(level), k(level));
        if b.channels(x) != spec.in_channels {
            return Err(crate::error::Error::Architecture(format!(
                "level {level} receives {} channels, dense block expects {}",
                b.channels(x),
                spec.in_channels
            )));
        }
        x = b.dense_block(&format!("down{level}.dense"), x, spec);
        if level < arch.levels {
            skips.push(x);
            x = b.pool(x);
        }
    }
    for level in (1..arch.levels).rev() {
        let up = b.up(&format!("up{level}.upconv"), x, 8 * k(level));
        let skip = skips.pop().expect("one skip per level");
        x = b.concat(skip, up);
        x = b.conv_bn_relu(&format!("up{level}.reduce"), x, 4 * k(level), 1);
        x = b.dense_block(
            &format!("up{level}.dense"),
            x,
            DenseBlockSpec::new(4 * k(level), k(level)),
        );
    }
    let residual = b.conv_with("head", x, arch.out_channels, 1, true);
    let out = b.add(0, residual);
    b.finish(Some(*arch), seed, out)
}
