use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Fusion, PogarsConfig};
use super::ModelError;
use crate::scalar::Scalar;
use crate::tensor::{Gradients, Tape, Tensor, Var};

/// Name, shape and fan-in of one learnable tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

fn push_linear(out: &mut Vec<ParamSpec>, prefix: &str, d_in: usize, d_out: usize) {
    out.push(ParamSpec {
        name: format!("{prefix}.weight"),
        shape: vec![d_out, d_in],
        fan_in: d_in,
    });
    out.push(ParamSpec {
        name: format!("{prefix}.bias"),
        shape: vec![d_out],
        fan_in: d_in,
    });
}

fn push_conv(out: &mut Vec<ParamSpec>, prefix: &str, c_in: usize, c_out: usize, k: usize) {
    out.push(ParamSpec {
        name: format!("{prefix}.weight"),
        shape: vec![c_out, c_in, k],
        fan_in: c_in * k,
    });
    out.push(ParamSpec {
        name: format!("{prefix}.bias"),
        shape: vec![c_out],
        fan_in: c_in * k,
    });
}

fn push_trunk(out: &mut Vec<ParamSpec>, prefix: &str, first_in: usize, cfg: &PogarsConfig) {
    for b in 0..cfg.blocks() {
        let c_in = if b == 0 { first_in } else { cfg.channels[b] };
        let c_out = cfg.channels[b + 1];
        let k = cfg.kernel_size;
        push_conv(out, &format!("{prefix}.block{b}.conv1"), c_in, c_out, k);
        push_conv(out, &format!("{prefix}.block{b}.conv2"), c_out, c_out, k);
        push_conv(out, &format!("{prefix}.block{b}.conv3"), c_out, c_out, k);
        if c_in != c_out {
            push_conv(out, &format!("{prefix}.block{b}.skip"), c_in, c_out, 1);
        }
    }
}

/// The full parameter list implied by a configuration.
pub fn param_specs(cfg: &PogarsConfig) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let d = cfg.feature_dim();
    push_linear(&mut specs, "pos_embed", 2, cfg.pos_embed_dim);
    push_linear(
        &mut specs,
        "temporal_attn.0",
        cfg.stream_dim(),
        cfg.phi_hidden,
    );
    push_linear(&mut specs, "temporal_attn.1", cfg.phi_hidden, 1);
    push_trunk(&mut specs, "trunk", cfg.stream_dim(), cfg);
    if cfg.fusion == Fusion::Late {
        push_linear(&mut specs, "spatial_attn.0", d, cfg.psi_hidden);
        push_linear(&mut specs, "spatial_attn.1", cfg.psi_hidden, 1);
    }
    push_linear(
        &mut specs,
        "group_head.0",
        cfg.group_rows() * d,
        cfg.head_hidden,
    );
    push_linear(
        &mut specs,
        "group_head.1",
        cfg.head_hidden,
        cfg.group_classes,
    );
    push_linear(&mut specs, "action_head.0", d, cfg.head_hidden);
    push_linear(
        &mut specs,
        "action_head.1",
        cfg.head_hidden,
        cfg.action_classes,
    );
    if cfg.ball_enabled {
        push_trunk(&mut specs, "ball.trunk", cfg.ball_encoding_dim, cfg);
    }
    specs
}

/// FNV-1a, so each tensor's init stream depends only on (seed, name).
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Named learnable tensors of one model instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PogarsParams<S> {
    tensors: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> PogarsParams<S> {
    /// Uniform(−a, a) with a = sqrt(1/fan_in) for weights and biases alike.
    pub fn init(cfg: &PogarsConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let tensors = param_specs(cfg)
            .into_iter()
            .map(|spec| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(&spec.name));
                let a = (1.0 / spec.fan_in as f64).sqrt();
                let n = spec.shape.iter().product();
                let values = (0..n)
                    .map(|_| S::from_f64_lossy(rng.gen_range(-a..a)))
                    .collect();
                let t = Tensor::new(spec.shape, values)
                    .expect("spec shape matches value count")
                    .requiring_grad();
                (spec.name, t)
            })
            .collect();
        Ok(PogarsParams { tensors })
    }

    /// Wraps an arbitrary set of tensors; use [`check`](Self::check) before
    /// pairing it with a configuration.
    pub fn from_tensors(tensors: BTreeMap<String, Tensor<S>>) -> Self {
        let tensors = tensors
            .into_iter()
            .map(|(k, mut t)| {
                t.set_requires_grad(true);
                (k, t)
            })
            .collect();
        PogarsParams { tensors }
    }

    /// Verifies the name set and every shape against `cfg`.
    pub fn check(&self, cfg: &PogarsConfig) -> Result<(), ModelError> {
        let specs = param_specs(cfg);
        if specs.len() != self.tensors.len() {
            return Err(ModelError::ConfigMismatch(format!(
                "config implies {} parameters, found {}",
                specs.len(),
                self.tensors.len()
            )));
        }
        for spec in specs {
            let t = self
                .tensors
                .get(&spec.name)
                .ok_or_else(|| ModelError::MissingParam(spec.name.clone()))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(ModelError::ConfigMismatch(format!(
                    "{} has shape {:?}, config implies {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<S>)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    pub fn cast<T: Scalar>(&self) -> PogarsParams<T> {
        PogarsParams {
            tensors: self
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), t.cast()))
                .collect(),
        }
    }

    /// Records every tensor as a borrowed leaf.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a, S>) -> BoundParams {
        BoundParams {
            vars: self
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), tape.leaf(t)))
                .collect(),
        }
    }

    /// Moves the gradients of bound parameters into their grad slots.
    pub fn accumulate_grads(
        &mut self,
        bound: &BoundParams,
        grads: &mut Gradients<S>,
    ) -> Result<(), ModelError> {
        for (name, &var) in &bound.vars {
            if let Some(g) = grads.take(var) {
                let t = self
                    .tensors
                    .get_mut(name)
                    .ok_or_else(|| ModelError::MissingParam(name.clone()))?;
                t.accumulate_grad(&g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.tensors.values_mut().for_each(Tensor::zero_grad);
    }
}

/// Tape handles of a bound parameter set, keyed by parameter name.
#[derive(Debug, Clone, Default)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    /// Binds parameters from explicit vars, in [`param_specs`] order.
    pub fn from_vars(names: impl IntoIterator<Item = String>, vars: &[Var]) -> Self {
        BoundParams {
            vars: names.into_iter().zip(vars.iter().copied()).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var, ModelError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}
