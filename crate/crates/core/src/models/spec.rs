use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    Mlp,
    Cnn,
    Gru,
    /// Scalar-to-scalar network used as a learnable activation.
    ScalarNet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    None,
    Max,
    Mean,
    L2,
}

impl Pooling {
    pub const ALL: [Pooling; 4] = [Pooling::None, Pooling::Max, Pooling::Mean, Pooling::L2];

    pub fn name(self) -> &'static str {
        match self {
            Pooling::None => "none",
            Pooling::Max => "max",
            Pooling::Mean => "mean",
            Pooling::L2 => "l2",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Elu,
    Tanh,
    Swish,
    /// Elementwise application of a `scalar_net`.
    Learned(Box<ModelSpec>),
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Elu => "elu",
            Activation::Tanh => "tanh",
            Activation::Swish => "swish",
            Activation::Learned(_) => "learned",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub channels: Vec<usize>,
    pub kernel_size: usize,
    pub stride: usize,
}

impl ConvSpec {
    /// Zero padding on each side; keeps length `ceil(L / stride)` for odd kernels.
    pub fn padding(&self) -> usize {
        self.kernel_size / 2
    }
}

/// Window and stride of every pooling stage.
pub const POOL_WINDOW: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_len: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub hidden_sizes: Vec<usize>,
    #[serde(default)]
    pub conv: Option<ConvSpec>,
    #[serde(default = "no_pooling")]
    pub pooling: Pooling,
    #[serde(default = "relu")]
    pub activation: Activation,
    #[serde(default)]
    pub init_seed: u64,
}

fn no_pooling() -> Pooling {
    Pooling::None
}

fn relu() -> Activation {
    Activation::Relu
}

impl ModelSpec {
    pub fn logistic() -> Self {
        ModelSpec {
            kind: ModelKind::Logistic,
            input_len: 40,
            num_classes: 10,
            hidden_sizes: vec![],
            conv: None,
            pooling: Pooling::None,
            activation: Activation::Relu,
            init_seed: 0,
        }
    }

    pub fn mlp(hidden: &[usize]) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp,
            hidden_sizes: hidden.to_vec(),
            ..Self::logistic()
        }
    }

    /// Three stride-2 conv layers with 8/16/32 channels and kernel 5.
    pub fn cnn() -> Self {
        ModelSpec {
            kind: ModelKind::Cnn,
            conv: Some(ConvSpec {
                channels: vec![8, 16, 32],
                kernel_size: 5,
                stride: 2,
            }),
            ..Self::logistic()
        }
    }

    /// Conv stride 1 with a pooling stage after every conv layer.
    pub fn pooled_cnn(pooling: Pooling) -> Self {
        let mut s = Self::cnn();
        if let Some(c) = s.conv.as_mut() {
            c.stride = 1;
        }
        s.pooling = pooling;
        s
    }

    pub fn gru(hidden: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Gru,
            hidden_sizes: vec![hidden],
            ..Self::logistic()
        }
    }

    /// `x -> skip * x + head(tanh(fc0(x)))` with one hidden layer.
    pub fn scalar_net(hidden: usize) -> Self {
        ModelSpec {
            kind: ModelKind::ScalarNet,
            input_len: 1,
            num_classes: 1,
            hidden_sizes: vec![hidden],
            activation: Activation::Tanh,
            ..Self::logistic()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("{:?} spec: {m}", self.kind)));
        if self.input_len == 0 || self.num_classes == 0 {
            return bad("input_len and num_classes must be positive");
        }
        if self.hidden_sizes.contains(&0) {
            return bad("hidden sizes must be positive");
        }
        match self.kind {
            ModelKind::Logistic if !self.hidden_sizes.is_empty() => return bad("logistic has no hidden layers"),
            ModelKind::Mlp if self.hidden_sizes.is_empty() => return bad("mlp needs at least one hidden layer"),
            ModelKind::Gru if self.hidden_sizes.len() != 1 => return bad("gru takes exactly one hidden size"),
            ModelKind::ScalarNet => {
                if self.input_len != 1 || self.num_classes != 1 {
                    return bad("scalar_net has input and output width 1");
                }
                if self.hidden_sizes.is_empty() {
                    return bad("scalar_net needs a hidden layer");
                }
            }
            ModelKind::Cnn => {
                let Some(c) = &self.conv else {
                    return bad("cnn requires conv fields");
                };
                if c.channels.is_empty() || c.channels.contains(&0) || c.kernel_size == 0 || c.stride == 0 {
                    return bad("conv channels, kernel_size and stride must be positive");
                }
                if self.conv_lengths().is_none() {
                    return bad("input too short for the conv/pool stack");
                }
            }
            _ => {}
        }
        if self.kind != ModelKind::Cnn && (self.conv.is_some() || self.pooling != Pooling::None) {
            return bad("conv and pooling apply to cnn only");
        }
        if let Activation::Learned(phi) = &self.activation {
            if !matches!(self.kind, ModelKind::Mlp | ModelKind::Cnn) {
                return bad("learned activations apply to mlp and cnn");
            }
            if phi.kind != ModelKind::ScalarNet || matches!(phi.activation, Activation::Learned(_)) {
                return bad("a learned activation must be a scalar_net with a fixed activation");
            }
            phi.validate()?;
        }
        Ok(())
    }

    /// Sequence length after each conv(+pool) stage, or `None` if a stage
    /// would have no output.
    pub fn conv_lengths(&self) -> Option<Vec<usize>> {
        let c = self.conv.as_ref()?;
        let mut len = self.input_len;
        let mut out = Vec::with_capacity(c.channels.len());
        for _ in &c.channels {
            let padded = len + 2 * c.padding();
            if padded < c.kernel_size {
                return None;
            }
            len = (padded - c.kernel_size) / c.stride + 1;
            if self.pooling != Pooling::None {
                if len < POOL_WINDOW {
                    return None;
                }
                len = (len - POOL_WINDOW) / POOL_WINDOW + 1;
            }
            out.push(len);
        }
        Some(out)
    }
}

/// Number of trainable scalars, including biases.
pub fn param_count(spec: &ModelSpec) -> usize {
    let k = spec.num_classes;
    let dense = |widths: &[usize]| widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum::<usize>();
    match spec.kind {
        ModelKind::Logistic => spec.input_len * k + k,
        ModelKind::Mlp => {
            let mut widths = vec![spec.input_len];
            widths.extend(&spec.hidden_sizes);
            widths.push(k);
            dense(&widths)
        }
        ModelKind::ScalarNet => {
            let mut widths = vec![1];
            widths.extend(&spec.hidden_sizes);
            widths.push(1);
            1 + dense(&widths)
        }
        ModelKind::Gru => {
            let h = spec.hidden_sizes[0];
            3 * h + 3 * h * h + 6 * h + h * k + k
        }
        ModelKind::Cnn => {
            let c = spec.conv.as_ref().expect("validated cnn spec");
            let mut total = 0;
            let mut c_in = 1;
            for &c_out in &c.channels {
                total += c_out * c_in * c.kernel_size + c_out;
                c_in = c_out;
            }
            let flat = c_in * spec.conv_lengths().and_then(|l| l.last().copied()).unwrap_or(0);
            total + flat * k + k
        }
    }
}
