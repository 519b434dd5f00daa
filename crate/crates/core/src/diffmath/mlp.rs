use std::io::{Read, Write};
use std::path::Path;

use super::tape::{Tape, Var};
use super::tensor::{matmul_into, sigmoid, Tensor};
use crate::error::{Error, Result};
use crate::rng::Stream;

const FORMAT_TAG: &str = "trecon-mlp";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
            Activation::Sigmoid => sigmoid(v),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(Activation::Identity),
            "relu" => Some(Activation::Relu),
            "sigmoid" => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

/// Fully connected network: weights `[n_in x n_out]` and biases `[n_out]` per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    hidden: Activation,
    output: Activation,
    /// Interleaved `w0, b0, w1, b1, ...`.
    tensors: Vec<Tensor>,
}

/// Tape handles produced by [`MlpParams::forward_tape`].
#[derive(Clone, Debug)]
pub struct MlpTrace {
    pub output: Var,
    /// One handle per parameter tensor, in [`MlpParams::tensors`] order.
    pub params: Vec<Var>,
}

impl MlpParams {
    pub fn zeros(layer_sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::invalid(format!("bad layer sizes {layer_sizes:?}")));
        }
        let tensors = layer_sizes
            .windows(2)
            .flat_map(|w| [Tensor::zeros(&[w[0], w[1]]), Tensor::zeros(&[w[1]])])
            .collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            hidden,
            output,
            tensors,
        })
    }

    /// Uniform fan-in initialisation: every weight and bias of a layer with
    /// `n_in` inputs is drawn from `U(-1/sqrt(n_in), 1/sqrt(n_in))`.
    pub fn init(
        layer_sizes: &[usize],
        hidden: Activation,
        output: Activation,
        seed: u64,
    ) -> Result<Self> {
        let mut params = Self::zeros(layer_sizes, hidden, output)?;
        let mut rng = Stream::derive(seed, 0x6d6c70);
        for (layer, pair) in params.tensors.chunks_mut(2).enumerate() {
            let bound = 1.0 / (layer_sizes[layer] as f64).sqrt();
            for t in pair {
                for v in t.data_mut() {
                    *v = rng.uniform_range(-bound, bound);
                }
            }
        }
        Ok(params)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.input_dim() {
            return Err(Error::shape(format!(
                "network expects {} input features, got {width}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 2 == self.layer_sizes.len() {
            self.output
        } else {
            self.hidden
        }
    }

    /// Record a forward pass of `x` (`[batch x d_in]`) on `tape`.
    pub fn forward_tape(&self, tape: &mut Tape, x: Var) -> Result<MlpTrace> {
        self.check_input(tape.value(x).dims2().1)?;
        let params: Vec<Var> = self.tensors.iter().map(|t| tape.param(t.clone())).collect();
        let mut h = x;
        for layer in 0..self.layer_sizes.len() - 1 {
            h = tape.matmul(h, params[2 * layer])?;
            h = tape.add_bias(h, params[2 * layer + 1])?;
            h = match self.activation(layer) {
                Activation::Identity => h,
                Activation::Relu => tape.relu(h),
                Activation::Sigmoid => tape.sigmoid(h),
            };
        }
        Ok(MlpTrace { output: h, params })
    }

    /// Tape-free forward pass with the same arithmetic as [`Self::forward_tape`].
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (rows, width) = x.dims2();
        self.check_input(width)?;
        let mut h = x.data().to_vec();
        for layer in 0..self.layer_sizes.len() - 1 {
            let (n_in, n_out) = (self.layer_sizes[layer], self.layer_sizes[layer + 1]);
            let mut out = vec![0.0; rows * n_out];
            matmul_into(
                &h,
                self.tensors[2 * layer].data(),
                &mut out,
                rows,
                n_in,
                n_out,
            );
            let bias = self.tensors[2 * layer + 1].data();
            let act = self.activation(layer);
            for row in out.chunks_mut(n_out) {
                for (o, &b) in row.iter_mut().zip(bias) {
                    *o = act.apply(*o + b);
                }
            }
            h = out;
        }
        Tensor::new(vec![rows, self.output_dim()], h)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let sizes = self
            .layer_sizes
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(",");
        let mut buf = format!(
            "{FORMAT_TAG} version={FORMAT_VERSION} layers={sizes} hidden={} output={}\n",
            self.hidden.name(),
            self.output.name()
        )
        .into_bytes();
        for t in &self.tensors {
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format(path, "missing header line"))?;
        let header = std::str::from_utf8(&bytes[..nl])
            .map_err(|_| Error::format(path, "header is not utf-8"))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some(FORMAT_TAG) {
            return Err(Error::format(path, "not a network parameter file"));
        }
        let mut version = None;
        let mut sizes = None;
        let mut hidden = None;
        let mut output = None;
        for f in fields {
            match f.split_once('=') {
                Some(("version", v)) => version = Some(v.to_string()),
                Some(("layers", v)) => {
                    sizes = v
                        .split(',')
                        .map(|s| s.parse::<usize>().ok())
                        .collect::<Option<Vec<_>>>()
                }
                Some(("hidden", v)) => hidden = Activation::parse(v),
                Some(("output", v)) => output = Activation::parse(v),
                _ => return Err(Error::format(path, format!("unknown header field `{f}`"))),
            }
        }
        let version = version.ok_or_else(|| Error::format(path, "missing version"))?;
        if version != FORMAT_VERSION.to_string() {
            return Err(Error::VersionMismatch {
                path: path.into(),
                expected: FORMAT_VERSION.to_string(),
                found: version,
            });
        }
        let (Some(sizes), Some(hidden), Some(output)) = (sizes, hidden, output) else {
            return Err(Error::format(path, "incomplete header"));
        };
        let mut params = Self::zeros(&sizes, hidden, output)?;
        let payload = &bytes[nl + 1..];
        if payload.len() != 8 * params.parameter_count() {
            return Err(Error::format(
                path,
                format!(
                    "payload has {} bytes, expected {}",
                    payload.len(),
                    8 * params.parameter_count()
                ),
            ));
        }
        let mut chunks = payload.chunks_exact(8);
        for t in params.tensors.iter_mut() {
            for v in t.data_mut() {
                *v = f64::from_le_bytes(chunks.next().unwrap().try_into().unwrap());
            }
        }
        Ok(params)
    }
}
