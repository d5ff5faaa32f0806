use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::DEFAULT_BOX_SCALE;

/// How predicted hop logits become an attention weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelMode {
    /// Kernel averaged under the softmax over hop classes; differentiable.
    Soft,
    /// Kernel at the most likely hop class; carries no gradient.
    Argmax,
}

/// Which layers contribute hop supervision to the total loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    All,
    Last,
}

/// Global pooling applied after the fusion MLP.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Max,
    /// Max and mean, concatenated.
    MaxAvg,
}

macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $text:literal),+ }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($ty::$variant => $text),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($ty::$variant),)+
                    other => Err(Error::config(format!(
                        "unknown {} {other:?}", stringify!($ty)
                    ))),
                }
            }
        }
    };
}

text_enum!(KernelMode { Soft => "soft", Argmax => "argmax" });
text_enum!(LossMode { All => "all", Last => "last" });
text_enum!(PoolMode { Max => "max", MaxAvg => "maxavg" });

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    /// Feature width of every layer.
    pub channels: usize,
    /// Neighbors per point in the feature-space graph, self included.
    pub neighbors: usize,
    /// Grid cells per axis; the maximum hop class is `split + 1`.
    pub split: usize,
    pub heads: usize,
    pub sigma2: f64,
    /// Per-layer switch embedding predicted hop distance into attention.
    pub lambda: Vec<bool>,
    pub fusion_channels: usize,
    pub box_scale: f64,
    pub kernel: KernelMode,
    pub loss: LossMode,
    pub pool: PoolMode,
    /// Per-sample column normalization before the hidden activations of
    /// the point, part and hop maps.
    pub normalize: bool,
    /// Seeds parameter initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            channels: 64,
            neighbors: 16,
            split: 3,
            heads: 4,
            sigma2: 1.0,
            lambda: vec![false, true, true],
            fusion_channels: 256,
            box_scale: DEFAULT_BOX_SCALE,
            kernel: KernelMode::Soft,
            loss: LossMode::All,
            pool: PoolMode::Max,
            normalize: false,
            seed: 1,
        }
    }
}

impl ModelConfig {
    /// Small config for gradient checks and fast tests: 2 layers, 8 channels,
    /// 2 heads, 2×2×2 grid.
    pub fn tiny() -> Self {
        Self {
            layers: 2,
            channels: 8,
            neighbors: 8,
            split: 2,
            heads: 2,
            lambda: vec![false, true],
            fusion_channels: 16,
            ..Self::default()
        }
    }

    /// Largest hop class.
    pub fn delta(&self) -> usize {
        self.split + 1
    }

    pub fn hop_classes(&self) -> usize {
        self.delta() + 1
    }

    pub fn num_parts(&self) -> usize {
        self.split.pow(3)
    }

    pub fn head_width(&self) -> usize {
        self.channels / self.heads
    }

    pub fn descriptor_dim(&self) -> usize {
        match self.pool {
            PoolMode::Max => self.fusion_channels,
            PoolMode::MaxAvg => 2 * self.fusion_channels,
        }
    }

    /// Sets every layer's switch to `on`.
    pub fn with_uniform_lambda(mut self, on: bool) -> Self {
        self.lambda = vec![on; self.layers];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.layers == 0 || self.channels == 0 || self.heads == 0 || self.fusion_channels == 0 {
            return fail("layers, channels, heads and fusion_channels must be positive".into());
        }
        if !self.channels.is_multiple_of(self.heads) {
            return fail(format!(
                "channels {} not divisible by heads {}",
                self.channels, self.heads
            ));
        }
        if self.lambda.len() != self.layers {
            return fail(format!(
                "lambda has {} entries for {} layers",
                self.lambda.len(),
                self.layers
            ));
        }
        if self.neighbors == 0 {
            return fail("neighbors must be positive".into());
        }
        if self.split < 2 {
            return fail(format!("split must be at least 2, got {}", self.split));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return fail(format!("sigma2 must be positive, got {}", self.sigma2));
        }
        if !(self.box_scale >= 1.0 && self.box_scale.is_finite()) {
            return fail(format!("box_scale must be >= 1, got {}", self.box_scale));
        }
        Ok(())
    }

    /// `key=value` lines in a fixed order; floats use round-trip formatting.
    pub fn to_text(&self) -> String {
        let lambda: Vec<&str> = self
            .lambda
            .iter()
            .map(|&b| if b { "1" } else { "0" })
            .collect();
        [
            ("layers", self.layers.to_string()),
            ("channels", self.channels.to_string()),
            ("neighbors", self.neighbors.to_string()),
            ("split", self.split.to_string()),
            ("heads", self.heads.to_string()),
            ("sigma2", format!("{:?}", self.sigma2)),
            ("lambda", lambda.join(",")),
            ("fusion_channels", self.fusion_channels.to_string()),
            ("box_scale", format!("{:?}", self.box_scale)),
            ("kernel", self.kernel.to_string()),
            ("loss", self.loss.to_string()),
            ("pool", self.pool.to_string()),
            ("normalize", (self.normalize as u8).to_string()),
            ("seed", self.seed.to_string()),
        ]
        .iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect()
    }

    /// Parses [`ModelConfig::to_text`] output. Unknown keys are ignored so
    /// the text can carry extra metadata; missing keys are an error.
    pub fn from_text(text: &str) -> Result<Self> {
        let get = |key: &str| -> Result<&str> {
            text.lines()
                .filter_map(|l| l.split_once('='))
                .find(|(k, _)| k.trim() == key)
                .map(|(_, v)| v.trim())
                .ok_or_else(|| Error::config(format!("missing key {key:?}")))
        };
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::config(format!("bad value {v:?} for {key:?}")))
        }
        let lambda = get("lambda")?
            .split(',')
            .map(|f| parse_switch(f.trim()))
            .collect::<Result<Vec<_>>>()?;
        let config = Self {
            layers: num("layers", get("layers")?)?,
            channels: num("channels", get("channels")?)?,
            neighbors: num("neighbors", get("neighbors")?)?,
            split: num("split", get("split")?)?,
            heads: num("heads", get("heads")?)?,
            sigma2: num("sigma2", get("sigma2")?)?,
            lambda,
            fusion_channels: num("fusion_channels", get("fusion_channels")?)?,
            box_scale: num("box_scale", get("box_scale")?)?,
            kernel: get("kernel")?.parse()?,
            loss: get("loss")?.parse()?,
            pool: get("pool")?.parse()?,
            normalize: parse_switch(get("normalize")?)?,
            seed: num("seed", get("seed")?)?,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Parses a `0`/`1` switch.
pub fn parse_switch(text: &str) -> Result<bool> {
    match text {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::config(format!(
            "switches must be 0 or 1, got {other:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_consistent() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.delta(), 4);
        assert_eq!(c.hop_classes(), 5);
        assert_eq!(c.num_parts(), 27);
        ModelConfig::tiny().validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad_heads = ModelConfig {
            heads: 3,
            ..ModelConfig::default()
        };
        assert!(bad_heads.validate().is_err());
        let bad_lambda = ModelConfig {
            lambda: vec![true],
            ..ModelConfig::default()
        };
        assert!(bad_lambda.validate().is_err());
        let bad_sigma = ModelConfig {
            sigma2: 0.0,
            ..ModelConfig::default()
        };
        assert!(bad_sigma.validate().is_err());
    }

    #[test]
    fn text_round_trip() {
        let c = ModelConfig {
            sigma2: 0.2,
            kernel: KernelMode::Argmax,
            pool: PoolMode::MaxAvg,
            loss: LossMode::Last,
            normalize: true,
            seed: 77,
            ..ModelConfig::default()
        };
        let text = c.to_text();
        assert!(text.contains("lambda=0,1,1\n"));
        assert_eq!(ModelConfig::from_text(&text).unwrap(), c);
        assert!(ModelConfig::from_text("layers=3\n").is_err());
    }
}
