use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tape::{Bound, Tape, Var};
use crate::nn::tensor::{ParameterSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
            Activation::Identity => x,
        }
    }
}

/// Multi-layer perceptron with one or more affine output heads on a shared
/// torso. Hidden layer `i` is `affine -> [layer norm] -> activation`.
///
/// Parameter names: `l{i}.weight`, `l{i}.bias`, `l{i}.ln_gain`,
/// `l{i}.ln_bias` for the torso and `head{j}.weight`, `head{j}.bias` for
/// the heads. Weights are stored `[out, in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub layer_norm: bool,
    pub heads: Vec<usize>,
}

impl NetworkSpec {
    pub fn mlp(input_dim: usize, hidden: Vec<usize>, output_dim: usize, activation: Activation) -> Self {
        NetworkSpec {
            input_dim,
            hidden,
            activation,
            layer_norm: false,
            heads: vec![output_dim],
        }
    }

    pub fn with_layer_norm(mut self, on: bool) -> Self {
        self.layer_norm = on;
        self
    }

    pub fn output_dim(&self) -> usize {
        self.heads.iter().sum()
    }

    pub fn feature_dim(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("network input dimension is 0".into()));
        }
        if self.hidden.contains(&0) || self.heads.is_empty() || self.heads.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "network layer sizes must be positive: hidden {:?}, heads {:?}",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }

    /// Affine layers uniform in `±1/sqrt(fan_in)`; heads additionally scaled
    /// by `head_scale`. Layer-norm gains start at 1 and biases at 0.
    pub fn init<R: Rng + ?Sized>(&self, head_scale: f64, rng: &mut R) -> Result<ParameterSet> {
        self.validate()?;
        let mut p = ParameterSet::new();
        let mut fan_in = self.input_dim;
        for (i, &h) in self.hidden.iter().enumerate() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            p.insert(format!("l{i}.weight"), Tensor::uniform(vec![h, fan_in], bound, rng))?;
            p.insert(format!("l{i}.bias"), Tensor::uniform(vec![h], bound, rng))?;
            if self.layer_norm {
                p.insert(format!("l{i}.ln_gain"), Tensor::new(vec![h], vec![1.0; h])?)?;
                p.insert(format!("l{i}.ln_bias"), Tensor::zeros(vec![h]))?;
            }
            fan_in = h;
        }
        for (j, &out) in self.heads.iter().enumerate() {
            let bound = head_scale / (fan_in as f64).sqrt();
            p.insert(format!("head{j}.weight"), Tensor::uniform(vec![out, fan_in], bound, rng))?;
            p.insert(format!("head{j}.bias"), Tensor::uniform(vec![out], bound, rng))?;
        }
        Ok(p)
    }

    /// Checks that `params` has exactly the tensors this spec expects.
    pub fn check_params(&self, params: &ParameterSet) -> Result<()> {
        let mut expected = 0;
        let mut fan_in = self.input_dim;
        let check = |name: String, shape: Vec<usize>| -> Result<()> {
            let t = params.require(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(
                    format!("parameter `{name}`"),
                    format!("{shape:?}"),
                    format!("{:?}", t.shape()),
                ));
            }
            Ok(())
        };
        for (i, &h) in self.hidden.iter().enumerate() {
            check(format!("l{i}.weight"), vec![h, fan_in])?;
            check(format!("l{i}.bias"), vec![h])?;
            expected += 2;
            if self.layer_norm {
                check(format!("l{i}.ln_gain"), vec![h])?;
                check(format!("l{i}.ln_bias"), vec![h])?;
                expected += 2;
            }
            fan_in = h;
        }
        for (j, &out) in self.heads.iter().enumerate() {
            check(format!("head{j}.weight"), vec![out, fan_in])?;
            check(format!("head{j}.bias"), vec![out])?;
            expected += 2;
        }
        if params.len() != expected {
            return Err(Error::shape("parameter count", expected, params.len()));
        }
        Ok(())
    }

    /// Shared torso features for a `[B, input_dim]` input.
    pub fn torso(&self, tape: &mut Tape, params: &Bound, input: Var) -> Result<Var> {
        let (_, cols) = tape.dims(input);
        if cols != self.input_dim {
            return Err(Error::shape("network input", self.input_dim, cols));
        }
        let mut x = input;
        for i in 0..self.hidden.len() {
            let w = params.get(&format!("l{i}.weight"))?;
            let b = params.get(&format!("l{i}.bias"))?;
            x = tape
                .matmul_t(x, w)
                .and_then(|z| tape.add_row(z, b))
                .map_err(|e| layer_error(&format!("l{i}"), e))?;
            if self.layer_norm {
                let g = params.get(&format!("l{i}.ln_gain"))?;
                let beta = params.get(&format!("l{i}.ln_bias"))?;
                x = tape
                    .layer_norm(x, g, beta)
                    .map_err(|e| layer_error(&format!("l{i}.ln"), e))?;
            }
            x = self.activation.apply(tape, x);
        }
        Ok(x)
    }

    pub fn head(&self, tape: &mut Tape, params: &Bound, features: Var, j: usize) -> Result<Var> {
        let w = params.get(&format!("head{j}.weight"))?;
        let b = params.get(&format!("head{j}.bias"))?;
        tape.matmul_t(features, w)
            .and_then(|z| tape.add_row(z, b))
            .map_err(|e| layer_error(&format!("head{j}"), e))
    }

    /// Outputs of every head.
    pub fn forward_heads(&self, tape: &mut Tape, params: &Bound, input: Var) -> Result<Vec<Var>> {
        let f = self.torso(tape, params, input)?;
        (0..self.heads.len())
            .map(|j| self.head(tape, params, f, j))
            .collect()
    }

    /// Single-head output; multiple heads are concatenated column-wise.
    pub fn forward_tape(&self, tape: &mut Tape, params: &Bound, input: Var) -> Result<Var> {
        let heads = self.forward_heads(tape, params, input)?;
        let mut out = heads[0];
        for h in &heads[1..] {
            out = tape.concat_cols(out, *h)?;
        }
        Ok(out)
    }

    /// Value-level forward pass on a `[B, input_dim]` (or rank-1) tensor.
    pub fn forward(&self, params: &ParameterSet, input: &Tensor) -> Result<Tensor> {
        let (rows, cols) = input.as_matrix_dims();
        let mut tape = Tape::new();
        let bound = tape.bind(params, false)?;
        let x = tape.constant(input.data().to_vec(), rows, cols)?;
        let y = self.forward_tape(&mut tape, &bound, x)?;
        let (r, c) = tape.dims(y);
        let shape = if input.shape().len() == 1 { vec![c] } else { vec![r, c] };
        Tensor::new(shape, tape.value(y).to_vec())
    }
}

fn layer_error(layer: &str, e: Error) -> Error {
    match e {
        Error::Shape {
            context,
            expected,
            got,
        } => Error::Shape {
            context: format!("layer {layer} ({context})"),
            expected,
            got,
        },
        other => other,
    }
}
