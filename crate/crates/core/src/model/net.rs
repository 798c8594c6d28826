//! The hybrid guided VAE: spiking conv encoder, Gaussian latent heads,
//! transposed-conv decoder and the two guidance classifiers.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;

use super::arch::{ArchConfig, Group, ParamSpec};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{shape_err, Error, Result};
use crate::eventio::Frames;
use crate::spiking::{lif_step, LifParams, LifState};

/// Samples per graph when running inference helpers.
const INFERENCE_CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Classifier {
    Excitation,
    Inhibition,
}

impl Classifier {
    fn prefix(self) -> &'static str {
        match self {
            Classifier::Excitation => "exc_classifier",
            Classifier::Inhibition => "inh_classifier",
        }
    }
}

/// Per-sample latent statistics and a sample drawn from them.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    pub z: Vec<f64>,
}

impl LatentCode {
    /// `z = mu + exp(logvar / 2) * eps`.
    pub fn sample(mu: Vec<f64>, logvar: Vec<f64>, eps: &[f64]) -> Self {
        let z = mu
            .iter()
            .zip(&logvar)
            .zip(eps)
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect();
        Self { mu, logvar, z }
    }

    pub fn excitation(&self, k: usize) -> &[f64] {
        &self.z[..k]
    }

    pub fn inhibition(&self, k: usize) -> &[f64] {
        &self.z[k..]
    }
}

/// Batched encoder output, `[N, latent_dim]` each.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub mu: Tensor,
    pub logvar: Tensor,
}

/// Graph handles for every parameter, in canonical order.
#[derive(Clone, Debug)]
pub struct Bound {
    pub vars: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct GuidedVae {
    arch: ArchConfig,
    lif: LifParams,
    specs: Vec<ParamSpec>,
    index: HashMap<String, usize>,
    params: Vec<Tensor>,
}

/// `[T]` tensors of shape `[N, C, H, W]` from a batch of frame stacks.
pub fn frames_to_inputs(frames: &[&Frames], arch: &ArchConfig) -> Result<Vec<Tensor>> {
    let want = [arch.timesteps, arch.in_channels, arch.input_size, arch.input_size];
    for f in frames {
        if f.shape() != want {
            return Err(shape_err("encode", format!("frames {:?}, model expects {want:?}", f.shape())));
        }
    }
    let per = arch.in_channels * arch.input_size * arch.input_size;
    (0..arch.timesteps)
        .map(|t| {
            let mut data = Vec::with_capacity(frames.len() * per);
            for f in frames {
                data.extend(f.data[t * per..(t + 1) * per].iter().map(|&v| v as f64));
            }
            Tensor::new(vec![frames.len(), arch.in_channels, arch.input_size, arch.input_size], data)
        })
        .collect()
}

impl GuidedVae {
    /// Kaiming-uniform weights, zero biases.
    pub fn new(arch: ArchConfig, lif: LifParams, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = arch
            .param_specs()
            .iter()
            .map(|s| {
                let n = s.shape.iter().product();
                let data = if s.fan_in == 0 {
                    vec![0.0; n]
                } else {
                    let bound = (6.0 / s.fan_in as f64).sqrt();
                    let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                    (0..n).map(|_| u.sample(&mut rng)).collect()
                };
                Tensor::new(s.shape.clone(), data)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_params(arch, lif, params)
    }

    /// Wraps existing tensors; every architecture-implied tensor must be
    /// present with its exact shape, in canonical order.
    pub fn from_params(arch: ArchConfig, lif: LifParams, params: Vec<Tensor>) -> Result<Self> {
        arch.validate()?;
        lif.validate()?;
        let specs = arch.param_specs();
        if specs.len() != params.len() {
            return Err(Error::Container(format!(
                "architecture needs {} tensors, got {}",
                specs.len(),
                params.len()
            )));
        }
        for (s, p) in specs.iter().zip(&params) {
            if p.shape() != s.shape.as_slice() {
                return Err(Error::Container(format!("{}: shape {:?}, expected {:?}", s.name, p.shape(), s.shape)));
            }
        }
        let index = specs.iter().enumerate().map(|(i, s)| (s.name.clone(), i)).collect();
        Ok(Self {
            arch,
            lif,
            specs,
            index,
            params,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn lif(&self) -> &LifParams {
        &self.lif
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    /// Indices of the parameters in `group`.
    pub fn group_indices(&self, group: Group) -> Vec<usize> {
        (0..self.specs.len()).filter(|&i| Group::of(&self.specs[i].name) == group).collect()
    }

    /// Places every parameter on `g`; groups rejected by `trainable` become
    /// constants.
    pub fn bind(&self, g: &mut Graph, trainable: impl Fn(Group) -> bool) -> Bound {
        let vars = self
            .specs
            .iter()
            .zip(&self.params)
            .map(|(s, p)| {
                if trainable(Group::of(&s.name)) {
                    g.param(p.clone())
                } else {
                    g.input(p.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    fn var(&self, b: &Bound, name: &str) -> Var {
        b.vars[self.index[name]]
    }

    /// Spiking encoder over per-timestep inputs; returns `(mu, logvar)`.
    pub fn encoder_forward(&self, g: &mut Graph, b: &Bound, inputs: &[Var]) -> Result<(Var, Var)> {
        let a = &self.arch;
        if inputs.len() != a.timesteps {
            return Err(shape_err(
                "encode",
                format!("{} timesteps, model expects {}", inputs.len(), a.timesteps),
            ));
        }
        let n = g.shape(inputs[0])[0];
        let sizes = a.spatial_sizes();
        let mut states: Vec<LifState> = a
            .channels
            .iter()
            .zip(&sizes[1..])
            .map(|(&c, &s)| LifState::zeros(g, &[n, c, s, s]))
            .collect();
        let last = *sizes.last().unwrap();
        let mut integ = g.input(Tensor::zeros(&[n, *a.channels.last().unwrap(), last, last]));
        for &x in inputs {
            let mut h = x;
            for (l, state) in states.iter_mut().enumerate() {
                let w = self.var(b, &format!("encoder.conv{l}.weight"));
                let bias = self.var(b, &format!("encoder.conv{l}.bias"));
                let cur = g.conv2d(h, w, bias, a.strides[l], a.padding())?;
                let (spikes, next) = lif_step(g, *state, cur, &self.lif)?;
                *state = next;
                h = spikes;
            }
            integ = g.axpby(integ, h, self.lif.decay, 1.0)?;
        }
        let flat = g.reshape(integ, &[n, a.feature_len()])?;
        let mu = g.linear(flat, self.var(b, "encoder.mu.weight"), self.var(b, "encoder.mu.bias"))?;
        let logvar = g.linear(flat, self.var(b, "encoder.logvar.weight"), self.var(b, "encoder.logvar.bias"))?;
        Ok((mu, logvar))
    }

    /// `z: [N, latent_dim]` to reconstructions `[N, C, H, W]` in `[0, 1]`.
    pub fn decoder_forward(&self, g: &mut Graph, b: &Bound, z: Var) -> Result<Var> {
        let a = &self.arch;
        let zs = g.shape(z).to_vec();
        if zs.len() != 2 || zs[1] != a.latent_dim {
            return Err(shape_err("decode", format!("latent {zs:?}, expected [N, {}]", a.latent_dim)));
        }
        let n = zs[0];
        let sizes = a.spatial_sizes();
        let last = *sizes.last().unwrap();
        let h = g.linear(z, self.var(b, "decoder.fc.weight"), self.var(b, "decoder.fc.bias"))?;
        let h = g.relu(h)?;
        let mut h = g.reshape(h, &[n, *a.channels.last().unwrap(), last, last])?;
        let layers = a.channels.len();
        for j in 0..layers {
            let i = layers - 1 - j;
            let w = self.var(b, &format!("decoder.deconv{j}.weight"));
            let bias = self.var(b, &format!("decoder.deconv{j}.bias"));
            h = g.conv_transpose2d(h, w, bias, a.strides[i], a.padding(), a.output_padding(i))?;
            h = if j + 1 == layers { g.sigmoid(h)? } else { g.relu(h)? };
        }
        Ok(h)
    }

    /// Class logits `[N, num_classes]` from the classifier's latent slice.
    pub fn classifier_forward(&self, g: &mut Graph, b: &Bound, which: Classifier, x: Var) -> Result<Var> {
        let want = match which {
            Classifier::Excitation => self.arch.excitation_dim,
            Classifier::Inhibition => self.arch.inhibition_dim(),
        };
        let xs = g.shape(x).to_vec();
        if xs.len() != 2 || xs[1] != want {
            return Err(shape_err(
                "classify",
                format!("{:?} input {xs:?}, expected [N, {want}]", which),
            ));
        }
        let layers = self.arch.classifier_hidden.len() + 1;
        let mut h = x;
        for l in 0..layers {
            let p = which.prefix();
            h = g.linear(h, self.var(b, &format!("{p}.fc{l}.weight")), self.var(b, &format!("{p}.fc{l}.bias")))?;
            if l + 1 < layers {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Latent statistics for a batch of samples.
    pub fn encode(&self, frames: &[&Frames]) -> Result<Encoded> {
        let chunks: Vec<(Vec<f64>, Vec<f64>)> = frames
            .par_chunks(INFERENCE_CHUNK)
            .map(|chunk| {
                let mut g = Graph::new();
                let b = self.bind(&mut g, |_| false);
                let inputs = frames_to_inputs(chunk, &self.arch)?
                    .into_iter()
                    .map(|t| g.input(t))
                    .collect::<Vec<_>>();
                let (mu, logvar) = self.encoder_forward(&mut g, &b, &inputs)?;
                Ok((g.value(mu).data().to_vec(), g.value(logvar).data().to_vec()))
            })
            .collect::<Result<_>>()?;
        let d = self.arch.latent_dim;
        let (mut mu, mut logvar) = (Vec::new(), Vec::new());
        for (m, l) in chunks {
            mu.extend(m);
            logvar.extend(l);
        }
        Ok(Encoded {
            mu: Tensor::new(vec![frames.len(), d], mu)?,
            logvar: Tensor::new(vec![frames.len(), d], logvar)?,
        })
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, |_| false);
        let z = g.input(z.clone());
        let out = self.decoder_forward(&mut g, &b, z)?;
        Ok(g.value(out).clone())
    }

    pub fn classify(&self, which: Classifier, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, |_| false);
        let x = g.input(x.clone());
        let out = self.classifier_forward(&mut g, &b, which, x)?;
        Ok(g.value(out).clone())
    }
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
