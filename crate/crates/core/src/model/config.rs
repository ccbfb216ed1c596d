use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel sizes of the three parallel branches in every multiscale block.
pub const BRANCH_KERNELS: [usize; 3] = [2, 3, 4];

/// Widths of the full five-submodule network.
pub const DEFAULT_ENCODER_WIDTHS: [usize; 5] = [72, 144, 288, 288, 576];
pub const DEFAULT_INTEGRATION_WIDTHS: [usize; 6] = [72, 144, 288, 288, 576, 576];
pub const DEFAULT_DECODER_WIDTHS: [usize; 5] = [576, 288, 288, 144, 72];

/// Encoder width multipliers used by [`ModelConfig::scaled`].
const WIDTH_PATTERN: [usize; 5] = [1, 2, 4, 4, 8];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnReluOrder {
    ReluThenBn,
    BnThenRelu,
}

/// Ablation variants: which of the two structural additions are present.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Neither the integration module nor the cross deconvolution.
    None,
    /// Integration module only.
    One,
    /// Cross deconvolution only.
    Two,
    Full,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::None, Strategy::One, Strategy::Two, Strategy::Full];

    pub fn flags(self) -> (bool, bool) {
        match self {
            Strategy::None => (false, false),
            Strategy::One => (true, false),
            Strategy::Two => (false, true),
            Strategy::Full => (true, true),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Strategy::None => "No-strategy",
            Strategy::One => "MC-Net-strategy1",
            Strategy::Two => "MC-Net-strategy2",
            Strategy::Full => "MC-Net",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Strategy::None),
            "1" | "one" => Ok(Strategy::One),
            "2" | "two" => Ok(Strategy::Two),
            "full" => Ok(Strategy::Full),
            other => Err(Error::Config(format!(
                "unknown strategy {other:?} (none|1|2|full)"
            ))),
        }
    }
}

/// Complete hyperparameter record of one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub depth: usize,
    pub encoder_widths: Vec<usize>,
    pub integration_widths: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    pub input_size: usize,
    pub in_channels: usize,
    /// Output channels: 1 for a sigmoid head, otherwise a channel softmax.
    pub n_classes: usize,
    pub bn_relu_order: BnReluOrder,
    pub use_integration_module: bool,
    pub use_cross_deconv: bool,
    /// `cross_mapping[i]` is the decoder branch that receives encoder branch `i`
    /// (branches indexed in [`BRANCH_KERNELS`] order).
    pub cross_mapping: [usize; 3],
    /// Learnable per-channel scale/shift after each normalisation.
    pub bn_affine: bool,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: 5,
            encoder_widths: DEFAULT_ENCODER_WIDTHS.to_vec(),
            integration_widths: DEFAULT_INTEGRATION_WIDTHS.to_vec(),
            decoder_widths: DEFAULT_DECODER_WIDTHS.to_vec(),
            input_size: 256,
            in_channels: 1,
            n_classes: 1,
            bn_relu_order: BnReluOrder::ReluThenBn,
            use_integration_module: true,
            use_cross_deconv: true,
            cross_mapping: [1, 2, 0],
            bn_affine: false,
            bn_eps: 1e-5,
            bn_momentum: 0.9,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Published widths truncated to `depth` submodules, keeping the deepest ones.
    pub fn published_depth(depth: usize) -> Result<Self> {
        if !(2..=5).contains(&depth) {
            return Err(Error::Config(format!("depth {depth} outside 2..=5")));
        }
        let drop = 5 - depth;
        let mut integration = DEFAULT_INTEGRATION_WIDTHS[drop..5].to_vec();
        integration.push(DEFAULT_INTEGRATION_WIDTHS[5]);
        Ok(Self {
            depth,
            encoder_widths: DEFAULT_ENCODER_WIDTHS[drop..].to_vec(),
            integration_widths: integration,
            decoder_widths: DEFAULT_DECODER_WIDTHS[..depth].to_vec(),
            ..Self::default()
        })
    }

    /// Reduced-width family: encoder widths `base·[1,2,4,4,8]` cut to `depth`,
    /// decoder widths mirrored, integration widths equal to the encoder's plus
    /// one raw-image branch as wide as the deepest stage.
    pub fn scaled(depth: usize, base: usize, input_size: usize) -> Result<Self> {
        if !(1..=5).contains(&depth) {
            return Err(Error::Config(format!("depth {depth} outside 1..=5")));
        }
        let encoder: Vec<usize> = WIDTH_PATTERN[..depth].iter().map(|m| m * base).collect();
        Ok(Self::with_encoder_widths(encoder, input_size))
    }

    pub fn with_encoder_widths(encoder: Vec<usize>, input_size: usize) -> Self {
        let mut integration = encoder.clone();
        integration.push(*encoder.last().expect("non-empty widths"));
        let decoder = encoder.iter().rev().copied().collect();
        Self {
            depth: encoder.len(),
            encoder_widths: encoder,
            integration_widths: integration,
            decoder_widths: decoder,
            input_size,
            ..Self::default()
        }
    }

    pub fn with_strategy(mut self, s: Strategy) -> Self {
        (self.use_integration_module, self.use_cross_deconv) = s.flags();
        self
    }

    pub fn strategy(&self) -> Strategy {
        match (self.use_integration_module, self.use_cross_deconv) {
            (false, false) => Strategy::None,
            (true, false) => Strategy::One,
            (false, true) => Strategy::Two,
            (true, true) => Strategy::Full,
        }
    }

    /// Spatial side at the deepest resolution.
    pub fn bottleneck(&self) -> usize {
        self.input_size >> self.depth
    }

    /// Pool sizes of the integration branches, encoder stages first, raw image last.
    pub fn integration_pools(&self) -> Vec<usize> {
        let b = self.bottleneck();
        let mut pools: Vec<usize> = (0..self.depth)
            .map(|i| self.input_size / ((1 << (i + 1)) * b))
            .collect();
        pools.push(self.input_size / b);
        pools
    }

    /// Channels entering the first decoder submodule.
    pub fn bottleneck_channels(&self) -> usize {
        if self.use_integration_module {
            self.integration_widths.iter().sum()
        } else {
            self.encoder_widths[self.depth - 1]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.depth;
        if d == 0 {
            return Err(Error::Config("depth must be positive".into()));
        }
        let lens = [
            ("encoder_widths", self.encoder_widths.len(), d),
            ("decoder_widths", self.decoder_widths.len(), d),
            ("integration_widths", self.integration_widths.len(), d + 1),
        ];
        for (name, got, want) in lens {
            if got != want {
                return Err(Error::Config(format!(
                    "{name} has {got} entries, depth {d} needs {want}"
                )));
            }
        }
        for (name, list) in [
            ("encoder_widths", &self.encoder_widths),
            ("decoder_widths", &self.decoder_widths),
        ] {
            if let Some(w) = list.iter().find(|&&w| w == 0 || w % 3 != 0) {
                return Err(Error::Config(format!(
                    "{name} entry {w} is not a positive multiple of 3"
                )));
            }
        }
        if self.integration_widths.contains(&0) {
            return Err(Error::Config("integration widths must be positive".into()));
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(1 << d) {
            return Err(Error::Config(format!(
                "input_size {} not divisible by 2^{d}",
                self.input_size
            )));
        }
        if self.in_channels == 0 || self.n_classes == 0 {
            return Err(Error::Config(
                "in_channels and n_classes must be positive".into(),
            ));
        }
        let mut seen = [false; 3];
        for &m in &self.cross_mapping {
            if m > 2 || seen[m] {
                return Err(Error::Config(format!(
                    "cross_mapping {:?} is not a permutation",
                    self.cross_mapping
                )));
            }
            seen[m] = true;
        }
        if self.use_cross_deconv {
            for j in 0..d {
                let enc = self.encoder_widths[d - 1 - j];
                if enc != self.decoder_widths[j] {
                    return Err(Error::Config(format!(
                        "decoder submodule {} width {} cannot be cross-fused with encoder submodule {} width {enc}",
                        j + 1,
                        self.decoder_widths[j],
                        d - j
                    )));
                }
            }
        }
        if !(self.bn_eps > 0.0) || !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::Config(
                "bn_eps must be positive and bn_momentum in [0,1)".into(),
            ));
        }
        Ok(())
    }
}
