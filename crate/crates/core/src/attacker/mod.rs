//! The attacker MLP family, its optimizer and the balanced training loop.

mod adam;
mod net;
mod train;

pub use adam::{adam_step, AdamState};
pub use net::{bce_with_logits, rmsnorm, Mlp, ParamKind, RMSNORM_EPS};
pub use train::{balanced_batches, save_history, train, EpochStats, History, TrainConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Default,
    /// Width `d` doubled (512 becomes 1024).
    Narrow,
    /// Width `d` halved (512 becomes 256).
    Wide,
    /// Layers 2 and 3 merged into one `d -> d/4` layer.
    Shallow,
    /// Extra `d/2 -> d/2` layer between layers 2 and 3.
    Deep,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Default,
        Variant::Narrow,
        Variant::Wide,
        Variant::Shallow,
        Variant::Deep,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    LeakyRelu,
    Silu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    #[default]
    None,
    Rmsnorm,
    Layernorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpSpec {
    pub in_dim: usize,
    /// Base width `d`.
    pub width: usize,
    pub variant: Variant,
    pub activation: Activation,
    pub norm: Norm,
    /// Shorthand for tanh activations with RMS normalization; overrides
    /// `activation` and `norm`.
    pub v2: bool,
}

impl Default for MlpSpec {
    fn default() -> Self {
        MlpSpec {
            in_dim: 256,
            width: 512,
            variant: Variant::Default,
            activation: Activation::Relu,
            norm: Norm::None,
            v2: false,
        }
    }
}

impl MlpSpec {
    pub fn with_in_dim(mut self, in_dim: usize) -> Self {
        self.in_dim = in_dim;
        self
    }

    pub fn effective_activation(&self) -> Activation {
        if self.v2 {
            Activation::Tanh
        } else {
            self.activation
        }
    }

    pub fn effective_norm(&self) -> Norm {
        if self.v2 {
            Norm::Rmsnorm
        } else {
            self.norm
        }
    }

    /// Width after the variant's substitution.
    pub fn effective_width(&self) -> usize {
        match self.variant {
            Variant::Narrow => self.width * 2,
            Variant::Wide => self.width / 2,
            _ => self.width,
        }
    }

    /// `(fan_in, fan_out)` of every linear layer, input to output.
    pub fn layer_dims(&self) -> Result<Vec<(usize, usize)>> {
        if self.in_dim == 0 {
            return Err(Error::Spec("in_dim must be at least 1".into()));
        }
        if self.width == 0 || self.width % 4 != 0 {
            return Err(Error::Spec(format!("width {} must be a positive multiple of 4", self.width)));
        }
        let d = self.effective_width();
        if d == 0 || d % 4 != 0 {
            return Err(Error::Spec(format!(
                "{:?} variant turns width {} into {d}, which is not a positive multiple of 4",
                self.variant, self.width
            )));
        }
        let hidden: Vec<usize> = match self.variant {
            Variant::Default | Variant::Narrow | Variant::Wide => vec![d, d / 2, d / 4],
            Variant::Shallow => vec![d, d / 4],
            Variant::Deep => vec![d, d / 2, d / 2, d / 4],
        };
        let mut dims = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = self.in_dim;
        for h in hidden {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims.push((fan_in, 1));
        Ok(dims)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(variant: Variant) -> Vec<(usize, usize)> {
        MlpSpec {
            variant,
            ..MlpSpec::default()
        }
        .layer_dims()
        .unwrap()
    }

    #[test]
    fn default_layout() {
        assert_eq!(dims(Variant::Default), [(256, 512), (512, 256), (256, 128), (128, 1)]);
    }

    #[test]
    fn variant_layouts() {
        assert_eq!(dims(Variant::Narrow), [(256, 1024), (1024, 512), (512, 256), (256, 1)]);
        assert_eq!(dims(Variant::Wide), [(256, 256), (256, 128), (128, 64), (64, 1)]);
        assert_eq!(dims(Variant::Shallow), [(256, 512), (512, 128), (128, 1)]);
        assert_eq!(dims(Variant::Deep), [(256, 512), (512, 256), (256, 256), (256, 128), (128, 1)]);
    }

    #[test]
    fn invalid_widths() {
        for (width, variant) in [(0, Variant::Default), (510, Variant::Default), (4, Variant::Wide)] {
            let spec = MlpSpec {
                width,
                variant,
                ..MlpSpec::default()
            };
            assert!(matches!(spec.layer_dims(), Err(Error::Spec(_))), "{width} {variant:?}");
        }
        assert!(MlpSpec::default().with_in_dim(0).layer_dims().is_err());
    }

    #[test]
    fn v2_overrides() {
        let spec = MlpSpec {
            v2: true,
            ..MlpSpec::default()
        };
        assert_eq!(spec.effective_activation(), Activation::Tanh);
        assert_eq!(spec.effective_norm(), Norm::Rmsnorm);
    }
}
