use super::{Element, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParameterId(pub usize);

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub trainable: bool,
}

impl<T: Element> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>, trainable: bool) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Parameter {
            name: name.into(),
            value,
            grad,
            trainable,
        }
    }
}

/// Exponential-moving-average batch statistics for one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub populated: bool,
}

impl RunningStats {
    /// Statistics that must be filled by a training step before eval use.
    pub fn empty(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            populated: false,
        }
    }

    /// Zero mean, unit variance; usable in eval mode immediately.
    pub fn standard(channels: usize) -> Self {
        RunningStats {
            populated: true,
            ..Self::empty(channels)
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, batch_mean: &[f64], batch_var: &[f64], momentum: f64) {
        for (m, &b) in self.mean.iter_mut().zip(batch_mean) {
            *m = (1.0 - momentum) * *m + momentum * b;
        }
        for (v, &b) in self.var.iter_mut().zip(batch_var) {
            *v = (1.0 - momentum) * *v + momentum * b;
        }
        self.populated = true;
    }
}

/// Named trainable tensors plus batch-norm running statistics.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore<T> {
    params: Vec<Parameter<T>>,
    stats: Vec<(String, RunningStats)>,
}

impl<T: Element> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            params: Vec::new(),
            stats: Vec::new(),
        }
    }

    pub fn add(&mut self, param: Parameter<T>) -> ParameterId {
        self.params.push(param);
        ParameterId(self.params.len() - 1)
    }

    pub fn add_stats(&mut self, name: impl Into<String>, stats: RunningStats) -> usize {
        self.stats.push((name.into(), stats));
        self.stats.len() - 1
    }

    pub fn get(&self, id: ParameterId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParameterId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParameterId> {
        self.params.iter().position(|p| p.name == name).map(ParameterId)
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn stats(&self, idx: usize) -> &RunningStats {
        &self.stats[idx].1
    }

    pub fn stats_mut(&mut self, idx: usize) -> &mut RunningStats {
        &mut self.stats[idx].1
    }

    pub fn all_stats(&self) -> &[(String, RunningStats)] {
        &self.stats
    }

    pub fn all_stats_mut(&mut self) -> &mut [(String, RunningStats)] {
        &mut self.stats
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(T::zero());
        }
    }

    pub(crate) fn accumulate(&mut self, id: ParameterId, grad: &Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.grad.shape() != grad.shape() {
            return Err(Error::shape(
                "backward",
                format!(
                    "gradient {:?} for parameter {} of shape {:?}",
                    grad.shape(),
                    p.name,
                    p.value.shape()
                ),
            ));
        }
        for (g, &d) in p.grad.data_mut().iter_mut().zip(grad.data()) {
            *g += d;
        }
        Ok(())
    }

    /// Element type conversion, keeping names and statistics.
    pub fn cast<U: Element>(&self) -> ParameterStore<U> {
        ParameterStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                    trainable: p.trainable,
                })
                .collect(),
            stats: self.stats.clone(),
        }
    }
}
