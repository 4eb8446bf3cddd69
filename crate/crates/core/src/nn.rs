//! Fully connected surrogate network with hand-written reverse mode.
//!
//! Hidden layers use SELU, the last layer is affine. Weights are stored
//! row-major (`out x in`); the flat parameter vector is every layer's
//! weights followed by its bias, in layer order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

pub const SELU_ALPHA: f64 = 1.6732632423543772;
pub const SELU_SCALE: f64 = 1.0507009873554805;

/// Factor applied to Xavier-normal samples.
pub const INIT_GAIN: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Selu,
    Linear,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Selu => {
                if z > 0.0 {
                    SELU_SCALE * z
                } else {
                    SELU_SCALE * SELU_ALPHA * z.exp_m1()
                }
            }
            Activation::Linear => z,
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Selu => {
                if z > 0.0 {
                    SELU_SCALE
                } else {
                    SELU_SCALE * SELU_ALPHA * z.exp()
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// Affine input normalization `x_net = (x - shift) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputMap {
    pub shift: f64,
    pub scale: f64,
}

impl InputMap {
    pub const IDENTITY: InputMap = InputMap { shift: 0.0, scale: 1.0 };

    /// Maps `[lo, hi]` onto `[-1, 1]`; degenerate ranges give the identity.
    pub fn to_unit_interval(lo: f64, hi: f64) -> Self {
        if hi > lo {
            InputMap {
                shift: 0.5 * (lo + hi),
                scale: 2.0 / (hi - lo),
            }
        } else {
            Self::IDENTITY
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub input_map: Vec<InputMap>,
    pub seed: u64,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Normalized input followed by each layer's output.
    activations: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("at least the input")
    }
}

/// Xavier-normal weights scaled by [`INIT_GAIN`], zero biases, SELU on all
/// but the last layer. `arch` lists layer widths including input and
/// output, so `[1, n]` is a single linear layer.
pub fn init_xavier_scaled(arch: &[usize], seed: u64) -> Result<MlpParams> {
    if arch.len() < 2 || arch.contains(&0) {
        return Err(Error::Config(format!("invalid architecture {arch:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_layers = arch.len() - 1;
    let layers = arch
        .windows(2)
        .enumerate()
        .map(|(l, w)| {
            let (n_in, n_out) = (w[0], w[1]);
            let std = INIT_GAIN * (2.0 / (n_in + n_out) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            Layer {
                n_in,
                n_out,
                weights: (0..n_in * n_out).map(|_| normal.sample(&mut rng)).collect(),
                bias: vec![0.0; n_out],
                activation: if l + 1 == n_layers {
                    Activation::Linear
                } else {
                    Activation::Selu
                },
            }
        })
        .collect();
    Ok(MlpParams {
        layers,
        input_map: vec![InputMap::IDENTITY; arch[0]],
        seed,
    })
}

impl MlpParams {
    pub fn arch(&self) -> Vec<usize> {
        let mut a = vec![self.input_dim()];
        a.extend(self.layers.iter().map(|l| l.n_out));
        a
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.n_in)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, theta: &[f64]) -> Result<()> {
        check_len("MlpParams::set_flat", self.num_params(), theta.len())?;
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&theta[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&theta[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Rebuilds parameters of the given shape from a flat vector.
    pub fn from_flat(
        arch: &[usize],
        activations: &[Activation],
        input_map: Vec<InputMap>,
        seed: u64,
        theta: &[f64],
    ) -> Result<Self> {
        if arch.len() < 2 || activations.len() + 1 != arch.len() || input_map.len() != arch[0] {
            return Err(Error::Config(format!(
                "inconsistent network description: arch {arch:?}, {} activations, {} input maps",
                activations.len(),
                input_map.len()
            )));
        }
        let mut p = MlpParams {
            layers: arch
                .windows(2)
                .zip(activations)
                .map(|(w, &activation)| Layer {
                    n_in: w[0],
                    n_out: w[1],
                    weights: vec![0.0; w[0] * w[1]],
                    bias: vec![0.0; w[1]],
                    activation,
                })
                .collect(),
            input_map,
            seed,
        };
        p.set_flat(theta)?;
        Ok(p)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        check_len("forward input", self.input_dim(), x.len())?;
        let input: Vec<f64> = x
            .iter()
            .zip(&self.input_map)
            .map(|(v, m)| (v - m.shift) * m.scale)
            .collect();
        let mut activations = vec![input];
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let a = activations.last().expect("nonempty");
            let z: Vec<f64> = (0..l.n_out)
                .map(|o| {
                    let row = &l.weights[o * l.n_in..(o + 1) * l.n_in];
                    l.bias[o] + row.iter().zip(a).map(|(w, v)| w * v).sum::<f64>()
                })
                .collect();
            activations.push(z.iter().map(|&v| l.activation.apply(v)).collect());
            pre_activations.push(z);
        }
        Ok(ForwardTrace {
            activations,
            pre_activations,
        })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x)?.activations.pop().expect("nonempty"))
    }

    /// Forward pass split into the first `n_u` outputs and the rest.
    pub fn forward_split(&self, x: &[f64], n_u: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut out = self.forward(x)?;
        if n_u > out.len() {
            return Err(Error::Dimension {
                context: "forward_split",
                expected: n_u,
                actual: out.len(),
            });
        }
        let p = out.split_off(n_u);
        Ok((out, p))
    }

    /// Gradients of `<cotangent, forward(x)>` with respect to the flat
    /// parameters and to the raw input `x`.
    pub fn backward(&self, x: &[f64], cotangent: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let trace = self.forward_trace(x)?;
        self.backward_from_trace(&trace, cotangent)
    }

    pub fn backward_from_trace(&self, trace: &ForwardTrace, cotangent: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len("backward cotangent", self.output_dim(), cotangent.len())?;
        let mut grad = vec![0.0; self.num_params()];
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.num_params();
        }
        let mut delta = cotangent.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            let z = &trace.pre_activations[li];
            let a = &trace.activations[li];
            for (d, &zi) in delta.iter_mut().zip(z) {
                *d *= l.activation.derivative(zi);
            }
            let (gw, gb) = grad[offsets[li]..offsets[li] + l.num_params()].split_at_mut(l.weights.len());
            let mut next = vec![0.0; l.n_in];
            for (o, &d) in delta.iter().enumerate() {
                gb[o] = d;
                if d == 0.0 {
                    continue;
                }
                let row = &l.weights[o * l.n_in..(o + 1) * l.n_in];
                let grow = &mut gw[o * l.n_in..(o + 1) * l.n_in];
                for i in 0..l.n_in {
                    grow[i] = d * a[i];
                    next[i] += d * row[i];
                }
            }
            delta = next;
        }
        let gx = delta.iter().zip(&self.input_map).map(|(d, m)| d * m.scale).collect();
        Ok((grad, gx))
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}
