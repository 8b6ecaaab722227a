//! Parameterized layers bound to a `ParamStore`.

use parelab_numerics::init::{he_uniform, scaled_uniform};
use parelab_numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::error::Result;

/// Batch statistics from a training-mode forward pass, applied to the running
/// buffers once the step succeeds.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    mean_id: ParamId,
    var_id: ParamId,
    mean: Vec<f64>,
    var: Vec<f64>,
    count: usize,
}

pub const BN_MOMENTUM: f64 = 0.1;

impl BnUpdate {
    /// Exponential moving average; the variance buffer tracks the unbiased estimate.
    pub fn apply(&self, store: &mut ParamStore) {
        let unbias = if self.count > 1 { self.count as f64 / (self.count as f64 - 1.0) } else { 1.0 };
        let m = store.get_mut(self.mean_id).value.data_mut();
        for (r, b) in m.iter_mut().zip(&self.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
        let v = store.get_mut(self.var_id).value.data_mut();
        for (r, b) in v.iter_mut().zip(&self.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b * unbias;
        }
    }
}

/// Forward-pass mode plus collected batch-norm statistics.
#[derive(Debug, Default)]
pub struct Mode {
    pub train: bool,
    pub bn_updates: Vec<BnUpdate>,
}

impl Mode {
    pub fn train() -> Self {
        Self { train: true, bn_updates: Vec::new() }
    }

    pub fn eval() -> Self {
        Self { train: false, bn_updates: Vec::new() }
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = cin * k * k;
        let weight = store.add(format!("{name}.weight"), he_uniform([cout, cin, k, k], fan_in, rng), true)?;
        let bias = if bias { Some(store.add(format!("{name}.bias"), Tensor::zeros([cout]), true)?) } else { None };
        Ok(Self { weight, bias, stride, pad: k / 2 })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        Ok(tape.conv2d(x, w, b, self.stride, self.pad)?)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones([c]), true)?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros([c]), true)?,
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros([c]), false)?,
            running_var: store.add(format!("{name}.running_var"), Tensor::ones([c]), false)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: &mut Mode) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        if mode.train {
            let s = tape.shape(x);
            let count = s[0] * s[2] * s[3];
            let (y, mean, var) = tape.batchnorm2d_train(x, g, b)?;
            mode.bn_updates.push(BnUpdate {
                mean_id: self.running_mean,
                var_id: self.running_var,
                mean,
                var,
                count,
            });
            Ok(y)
        } else {
            let mean = store.get(self.running_mean).value.data().to_vec();
            let var = store.get(self.running_var).value.data().to_vec();
            Ok(tape.batchnorm2d_eval(x, g, b, &mean, &var)?)
        }
    }
}

/// 3×3 convolution, batch norm, ReLU.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv,
    pub bn: BatchNorm,
}

impl ConvBnRelu {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cin: usize, cout: usize, stride: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            conv: Conv::new(store, &format!("{name}.conv"), cin, cout, 3, stride, false, rng)?,
            bn: BatchNorm::new(store, &format!("{name}.bn"), cout)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: &mut Mode) -> Result<Var> {
        let y = self.conv.forward(tape, store, x)?;
        let y = self.bn.forward(tape, store, y, mode)?;
        Ok(tape.relu(y))
    }
}

/// `y = x · W + b` with `W` stored as [in, out].
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        gain: Option<f64>,
        bias: Tensor,
        rng: &mut R,
    ) -> Result<Self> {
        let w = match gain {
            None => he_uniform([fan_in, fan_out], fan_in, rng),
            Some(g) => scaled_uniform([fan_in, fan_out], fan_in, g, rng),
        };
        Ok(Self {
            weight: store.add(format!("{name}.weight"), w, true)?,
            bias: store.add(format!("{name}.bias"), bias, true)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(x, w)?;
        Ok(tape.add(y, b)?)
    }
}
