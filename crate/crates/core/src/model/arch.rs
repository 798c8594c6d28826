//! Architecture description, parameter layout and size accounting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    /// Event polarity channels.
    pub in_channels: usize,
    /// Input frames are `input_size` x `input_size`.
    pub input_size: usize,
    pub timesteps: usize,
    /// Output channels of each spiking conv layer.
    pub channels: Vec<usize>,
    /// Stride of each spiking conv layer.
    pub strides: Vec<usize>,
    pub kernel: usize,
    pub latent_dim: usize,
    /// Leading latent variables guided towards the cell label.
    pub excitation_dim: usize,
    /// Output classes of both classifiers (arena cells).
    pub num_classes: usize,
    /// Hidden widths of the classifier MLPs; empty means linear.
    pub classifier_hidden: Vec<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            in_channels: 2,
            input_size: 128,
            timesteps: 50,
            channels: vec![32, 64, 128, 128],
            strides: vec![2, 2, 2, 2],
            kernel: 3,
            latent_dim: 64,
            excitation_dim: 16,
            num_classes: 16,
            classifier_hidden: vec![64],
        }
    }
}

/// Which sub-network a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    Encoder,
    Decoder,
    ExcClassifier,
    InhClassifier,
}

impl Group {
    pub fn of(name: &str) -> Group {
        if name.starts_with("encoder.") {
            Group::Encoder
        } else if name.starts_with("decoder.") {
            Group::Decoder
        } else if name.starts_with("exc_classifier.") {
            Group::ExcClassifier
        } else {
            Group::InhClassifier
        }
    }
}

/// Name, shape and fan-in of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Zero for biases.
    pub fan_in: usize,
}

impl ArchConfig {
    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.in_channels == 0 || self.timesteps == 0 || self.latent_dim == 0 || self.num_classes < 2 {
            return bad(format!("degenerate architecture {self:?}"));
        }
        if self.channels.is_empty() || self.channels.len() != self.strides.len() {
            return bad(format!(
                "{} channel widths but {} strides",
                self.channels.len(),
                self.strides.len()
            ));
        }
        if self.channels.contains(&0) || self.strides.contains(&0) || self.classifier_hidden.contains(&0) {
            return bad("channel widths, strides and hidden sizes must be positive".into());
        }
        if self.kernel % 2 == 0 {
            return bad(format!("kernel {} must be odd", self.kernel));
        }
        if self.excitation_dim == 0 || self.excitation_dim >= self.latent_dim {
            return bad(format!(
                "excitation_dim {} must lie in 1..{}",
                self.excitation_dim, self.latent_dim
            ));
        }
        let sizes = self.spatial_sizes();
        if *sizes.last().unwrap() < 4 {
            return bad(format!("conv stack reduces {} to {:?}, below 4", self.input_size, sizes));
        }
        for (i, &s) in self.strides.iter().enumerate() {
            let op = self.output_padding(i);
            if op >= s.max(1) && !(s == 1 && op == 0) {
                return bad(format!("layer {i}: decoder cannot restore size {}", sizes[i]));
            }
        }
        Ok(())
    }

    /// Spatial side before each conv layer and after the last one.
    pub fn spatial_sizes(&self) -> Vec<usize> {
        let mut out = vec![self.input_size];
        let (k, p) = (self.kernel, self.padding());
        for &s in &self.strides {
            let prev = *out.last().unwrap();
            out.push(if prev + 2 * p >= k { (prev + 2 * p - k) / s + 1 } else { 0 });
        }
        out
    }

    /// Output padding of the transposed conv that undoes conv layer `i`.
    pub fn output_padding(&self, i: usize) -> usize {
        let sizes = self.spatial_sizes();
        let (k, p, s) = (self.kernel, self.padding(), self.strides[i]);
        let base = (sizes[i + 1].max(1) - 1) * s + k;
        (sizes[i] + 2 * p).saturating_sub(base)
    }

    /// Width of the flattened final feature map.
    pub fn feature_len(&self) -> usize {
        let s = *self.spatial_sizes().last().unwrap();
        self.channels.last().unwrap() * s * s
    }

    pub fn inhibition_dim(&self) -> usize {
        self.latent_dim - self.excitation_dim
    }

    /// Every parameter tensor in canonical order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, fan_in: usize| out.push(ParamSpec { name, shape, fan_in });
        let k = self.kernel;
        let mut cin = self.in_channels;
        for (i, &c) in self.channels.iter().enumerate() {
            push(format!("encoder.conv{i}.weight"), vec![c, cin, k, k], cin * k * k);
            push(format!("encoder.conv{i}.bias"), vec![c], 0);
            cin = c;
        }
        let f = self.feature_len();
        for head in ["mu", "logvar"] {
            push(format!("encoder.{head}.weight"), vec![self.latent_dim, f], f);
            push(format!("encoder.{head}.bias"), vec![self.latent_dim], 0);
        }
        push("decoder.fc.weight".into(), vec![f, self.latent_dim], self.latent_dim);
        push("decoder.fc.bias".into(), vec![f], 0);
        let n = self.channels.len();
        for j in 0..n {
            let i = n - 1 - j;
            let cin = self.channels[i];
            let cout = if i == 0 { self.in_channels } else { self.channels[i - 1] };
            push(format!("decoder.deconv{j}.weight"), vec![cin, cout, k, k], cin * k * k);
            push(format!("decoder.deconv{j}.bias"), vec![cout], 0);
        }
        for (prefix, input) in [("exc_classifier", self.excitation_dim), ("inh_classifier", self.inhibition_dim())] {
            let mut width = input;
            let layers = self.classifier_hidden.iter().chain(std::iter::once(&self.num_classes));
            for (l, &h) in layers.enumerate() {
                push(format!("{prefix}.fc{l}.weight"), vec![h, width], width);
                push(format!("{prefix}.fc{l}.bias"), vec![h], 0);
                width = h;
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_specs().iter().map(|p| p.shape.iter().product::<usize>()).sum()
    }

    /// LIF units across the conv stack, read-out integrator units, and
    /// decoder activation units.
    pub fn neuron_count(&self) -> usize {
        let sizes = self.spatial_sizes();
        let lif: usize = self.channels.iter().zip(&sizes[1..]).map(|(c, s)| c * s * s).sum();
        let integrator = self.feature_len();
        let decoder_convs: usize = (0..self.channels.len())
            .map(|i| {
                let c = if i == 0 { self.in_channels } else { self.channels[i - 1] };
                c * sizes[i] * sizes[i]
            })
            .sum();
        lif + integrator + self.feature_len() + decoder_convs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ArchConfig {
        ArchConfig {
            input_size: 32,
            timesteps: 10,
            channels: vec![8, 16, 32, 32],
            strides: vec![2, 2, 2, 1],
            excitation_dim: 4,
            num_classes: 4,
            ..Default::default()
        }
    }

    #[test]
    fn single_linear_layer_count() {
        // Linear excitation classifier 2 -> 3 with bias.
        let a = ArchConfig {
            in_channels: 1,
            input_size: 4,
            channels: vec![1],
            strides: vec![1],
            latent_dim: 4,
            excitation_dim: 2,
            num_classes: 3,
            classifier_hidden: vec![],
            ..Default::default()
        };
        let exc: usize = a
            .param_specs()
            .iter()
            .filter(|p| p.name.starts_with("exc_classifier."))
            .map(|p| p.shape.iter().product::<usize>())
            .sum();
        assert_eq!(exc, 9);
    }

    #[test]
    fn default_sizes() {
        let a = ArchConfig::default();
        a.validate().unwrap();
        assert_eq!(a.spatial_sizes(), vec![128, 64, 32, 16, 8]);
        assert_eq!((0..4).map(|i| a.output_padding(i)).collect::<Vec<_>>(), vec![1, 1, 1, 1]);
        let count = a.param_count();
        assert!((2_000_000..=6_000_000).contains(&count), "{count}");
    }

    #[test]
    fn tiny_profile_is_small() {
        let a = tiny();
        a.validate().unwrap();
        assert_eq!(a.spatial_sizes(), vec![32, 16, 8, 4, 4]);
        assert_eq!(a.output_padding(3), 0);
        assert!(a.param_count() < 1_000_000);
    }

    #[test]
    fn neuron_count_by_hand() {
        let a = tiny();
        // LIF: 8*256 + 16*64 + 32*16 + 32*16; integrator 512;
        // decoder fc 512, deconvs 32*16 + 16*64 + 8*256 + 2*1024.
        let lif = 2048 + 1024 + 512 + 512;
        let dec = 512 + 512 + 1024 + 2048 + 2048;
        assert_eq!(a.neuron_count(), lif + 512 + dec);
    }

    #[test]
    fn invalid_configs() {
        assert!(ArchConfig { excitation_dim: 64, ..Default::default() }.validate().is_err());
        assert!(ArchConfig { input_size: 32, ..Default::default() }.validate().is_err());
        assert!(ArchConfig { strides: vec![2, 2], ..Default::default() }.validate().is_err());
        assert!(ArchConfig { kernel: 4, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn groups_from_names() {
        for p in ArchConfig::default().param_specs() {
            let g = Group::of(&p.name);
            let prefix = p.name.split('.').next().unwrap();
            let expected = match prefix {
                "encoder" => Group::Encoder,
                "decoder" => Group::Decoder,
                "exc_classifier" => Group::ExcClassifier,
                "inh_classifier" => Group::InhClassifier,
                other => panic!("unexpected prefix {other}"),
            };
            assert_eq!(g, expected);
        }
    }
}
