//! Parameter groups and the forward session shared by all network layers.

use rand::{Rng, RngCore};

use crate::autodiff::{BatchMoments, Graph, Mode, Var};
use crate::error::{Error, Result};
use crate::params::{quantize_f32, ParamId, ParamStore};
use crate::tensor::{Shape, Tensor};

/// One forward pass: the graph being recorded, read-only parameters, and
/// batch-norm statistics to fold into the running estimates afterwards.
pub struct Session<'a> {
    pub graph: Graph,
    store: &'a ParamStore,
    mode: Mode,
    rng: Option<&'a mut dyn RngCore>,
    bn_updates: Vec<BnUpdate>,
}

/// Batch statistics observed by one batch-norm layer in training mode.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub moments: BatchMoments,
}

impl<'a> Session<'a> {
    /// Inference session; dropout is the identity and no RNG is needed.
    pub fn eval(store: &'a ParamStore) -> Self {
        Session { graph: Graph::new(), store, mode: Mode::Eval, rng: None, bn_updates: Vec::new() }
    }

    pub fn train(store: &'a ParamStore, rng: &'a mut dyn RngCore) -> Self {
        Session { graph: Graph::new(), store, mode: Mode::Train, rng: Some(rng), bn_updates: Vec::new() }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.graph.param(self.store, id)
    }

    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        match (self.mode, self.rng.as_deref_mut()) {
            (Mode::Eval, _) if (0.0..1.0).contains(&rate) => Ok(x),
            (Mode::Eval, _) => Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)"))),
            (Mode::Train, Some(rng)) => self.graph.dropout(x, rate, Mode::Train, rng),
            (Mode::Train, None) => Err(Error::InvalidArgument("training session without an RNG".into())),
        }
    }

    pub fn into_parts(self) -> (Graph, Vec<BnUpdate>) {
        (self.graph, self.bn_updates)
    }
}

/// Fold training-batch statistics into the stored running estimates.
pub fn apply_bn_updates(store: &mut ParamStore, updates: &[BnUpdate]) {
    for u in updates {
        let mut mean = store.get(u.running_mean).tensor.data().to_vec();
        let mut var = store.get(u.running_var).tensor.data().to_vec();
        u.moments.update_running(&mut mean, &mut var);
        quantize_f32(&mut mean);
        quantize_f32(&mut var);
        store.values_mut(u.running_mean).copy_from_slice(&mean);
        store.values_mut(u.running_var).copy_from_slice(&var);
    }
}

pub fn vector_shape(n: usize) -> Shape {
    Shape::new(1, 1, 1, n)
}

/// Kaiming-uniform weights, `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform<R: Rng + ?Sized>(shape: Shape, fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

/// Xavier-uniform weights, `b = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<R: Rng + ?Sized>(shape: Shape, fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

#[derive(Clone, Debug)]
pub struct ConvParams {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

impl ConvParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        c_out: usize,
        c_in: usize,
        kernel: usize,
        stride: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let shape = Shape::new(c_out, c_in, kernel, kernel);
        let weight = store.add(format!("{name}.weight"), kaiming_uniform(shape, c_in * kernel * kernel, rng), true)?;
        let bias = if with_bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(vector_shape(c_out)), true)?)
        } else {
            None
        };
        Ok(ConvParams { weight, bias, stride, padding: kernel / 2 })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = self.bias.map(|id| s.param(id));
        s.graph.conv2d(x, w, b, self.stride, self.padding)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNormParams {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let v = vector_shape(channels);
        Ok(BatchNormParams {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(v, 1.0), true)?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(v), true)?,
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(v), false)?,
            running_var: store.add(format!("{name}.running_var"), Tensor::full(v, 1.0), false)?,
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let gamma = s.param(self.gamma);
        let beta = s.param(self.beta);
        let store = s.store;
        let (y, moments) = s.graph.batch_norm(
            x,
            gamma,
            beta,
            store.get(self.running_mean).tensor.data(),
            store.get(self.running_var).tensor.data(),
            s.mode,
        )?;
        if let Some(moments) = moments {
            s.bn_updates.push(BnUpdate { running_mean: self.running_mean, running_var: self.running_var, moments });
        }
        Ok(y)
    }
}

#[derive(Clone, Debug)]
pub struct LinearParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LinearParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        outputs: usize,
        inputs: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(LinearParams {
            weight: store.add(
                format!("{name}.weight"),
                xavier_uniform(Shape::new(outputs, inputs, 1, 1), inputs, outputs, rng),
                true,
            )?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vector_shape(outputs)), true)?,
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = s.param(self.bias);
        s.graph.linear(x, w, b)
    }
}
