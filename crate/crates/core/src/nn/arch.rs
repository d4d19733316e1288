use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
    LeakyRelu(f32),
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s as f64 * x
                }
            }
        }
    }

    /// Derivative evaluated at the pre-activation `x` (0 at the ReLU kink).
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s as f64
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// One softmax classifier shared by all tasks; its weights live in the mask economy.
    SharedSoftmax,
    /// A private `linear -> sigmoid` head per task, outside the mask economy.
    PerTaskLinearSigmoid,
}

/// Layer widths and per-layer options of a fully connected supernet.
///
/// `layer_dims = [d_0, d_1, .., d_L]`: `d_0` inputs, `d_L` outputs and
/// `L - 1` hidden layers. Weight layer `l` (0-based) maps layer `l` to `l + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    /// One flag per hidden layer.
    pub batchnorm: Vec<bool>,
    pub head: HeadKind,
}

impl Architecture {
    pub fn new(
        layer_dims: Vec<usize>,
        activation: Activation,
        batchnorm: Vec<bool>,
        head: HeadKind,
    ) -> Result<Self> {
        let arch = Self {
            layer_dims,
            activation,
            batchnorm,
            head,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// `[784, 1024, 1024, 10]`, ReLU, batch norm on both hidden layers, shared softmax head.
    pub fn fc1024() -> Self {
        Self::mlp(&[784, 1024, 1024, 10])
    }

    /// ReLU MLP with batch norm on every hidden layer and a shared softmax head.
    pub fn mlp(dims: &[usize]) -> Self {
        let hidden = dims.len().saturating_sub(2);
        Self {
            layer_dims: dims.to_vec(),
            activation: Activation::Relu,
            batchnorm: vec![true; hidden],
            head: HeadKind::SharedSoftmax,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::InvalidArchitecture(
                "need at least an input and an output layer".into(),
            ));
        }
        if let Some(i) = self.layer_dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidArchitecture(format!("layer {i} has width 0")));
        }
        if self.batchnorm.len() != self.hidden_layers() {
            return Err(Error::InvalidArchitecture(format!(
                "{} batchnorm flags for {} hidden layers",
                self.batchnorm.len(),
                self.hidden_layers()
            )));
        }
        if let Activation::LeakyRelu(s) = self.activation {
            if !s.is_finite() {
                return Err(Error::InvalidArchitecture("leaky relu slope must be finite".into()));
            }
        }
        Ok(())
    }

    /// Number of weight layers `L`.
    #[inline]
    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    #[inline]
    pub fn hidden_layers(&self) -> usize {
        self.layer_dims.len().saturating_sub(2)
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// `(out, in)` shape of weight layer `l`.
    #[inline]
    pub fn weight_shape(&self, l: usize) -> (usize, usize) {
        (self.layer_dims[l + 1], self.layer_dims[l])
    }

    /// Whether hidden layer `h` (1-based position in `layer_dims`) has batch norm.
    #[inline]
    pub fn has_batchnorm(&self, h: usize) -> bool {
        h >= 1 && h <= self.hidden_layers() && self.batchnorm[h - 1]
    }

    /// Weight layers whose weights take part in masking, budgets and FLOP totals.
    pub fn maskable_layers(&self) -> usize {
        match self.head {
            HeadKind::SharedSoftmax => self.num_layers(),
            HeadKind::PerTaskLinearSigmoid => self.num_layers() - 1,
        }
    }

    /// Total maskable scalar weights `p` (biases excluded).
    pub fn maskable_weights(&self) -> u64 {
        (0..self.maskable_layers())
            .map(|l| {
                let (o, i) = self.weight_shape(l);
                (o * i) as u64
            })
            .sum()
    }
}
