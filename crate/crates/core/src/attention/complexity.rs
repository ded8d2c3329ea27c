//! Leading-term cost model for the four layer families compared in the
//! architecture's complexity table.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerType {
    SelfAttention,
    Recurrent,
    Convolution,
    DepthwiseSeparableConvolution,
}

impl LayerType {
    pub const ALL: [LayerType; 4] = [
        LayerType::SelfAttention,
        LayerType::Recurrent,
        LayerType::Convolution,
        LayerType::DepthwiseSeparableConvolution,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerType::SelfAttention => "self_attention",
            LayerType::Recurrent => "recurrent",
            LayerType::Convolution => "convolution",
            LayerType::DepthwiseSeparableConvolution => "depthwise_separable_convolution",
        }
    }

    /// Exponents of `(n, d, f)` in the per-layer cost.
    pub fn exponents(self) -> (u32, u32, u32) {
        match self {
            LayerType::SelfAttention => (2, 1, 0),
            LayerType::Recurrent => (1, 2, 0),
            LayerType::Convolution => (1, 2, 1),
            LayerType::DepthwiseSeparableConvolution => (1, 1, 1),
        }
    }
}

impl fmt::Display for LayerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayerType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LayerType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::config(format!("unknown layer type {s}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Complexity {
    pub per_layer_ops: u64,
    pub sequential_ops: u64,
    pub max_path_length: u64,
}

/// Smallest `p` with `base^p ≥ n`.
fn ceil_log(n: u64, base: u64) -> u64 {
    let mut p = 0;
    let mut reach = 1u64;
    while reach < n {
        reach = reach.saturating_mul(base);
        p += 1;
    }
    p
}

pub fn complexity_estimate(layer: LayerType, n: u64, d: u64, f: u64) -> Result<Complexity> {
    if n == 0 || d == 0 || f == 0 {
        return Err(Error::config("n, d and f must all be at least 1"));
    }
    let c = match layer {
        LayerType::SelfAttention => Complexity {
            per_layer_ops: n * n * d,
            sequential_ops: 1,
            max_path_length: 1,
        },
        LayerType::Recurrent => Complexity {
            per_layer_ops: n * d * d,
            sequential_ops: n,
            max_path_length: n,
        },
        LayerType::Convolution | LayerType::DepthwiseSeparableConvolution => {
            if f < 2 {
                return Err(Error::config(format!(
                    "path length of a {layer} layer needs kernel size ≥ 2, got {f}"
                )));
            }
            let width = if layer == LayerType::Convolution { d * d } else { d };
            Complexity {
                per_layer_ops: f * n * width,
                sequential_ops: 1,
                max_path_length: ceil_log(n, f),
            }
        }
    };
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubling_ratios_follow_exponents() {
        for layer in LayerType::ALL {
            let (en, ed, ef) = layer.exponents();
            let base = complexity_estimate(layer, 16, 8, 3).unwrap().per_layer_ops;
            let n2 = complexity_estimate(layer, 32, 8, 3).unwrap().per_layer_ops;
            let d2 = complexity_estimate(layer, 16, 16, 3).unwrap().per_layer_ops;
            let f2 = complexity_estimate(layer, 16, 8, 6).unwrap().per_layer_ops;
            assert_eq!(n2, base << en, "{layer} n");
            assert_eq!(d2, base << ed, "{layer} d");
            assert_eq!(f2, base << ef, "{layer} f");
        }
    }

    #[test]
    fn path_lengths() {
        let c = complexity_estimate(LayerType::Convolution, 100, 4, 3).unwrap();
        assert_eq!(c.max_path_length, 5); // 3^5 = 243 ≥ 100 > 81
        assert_eq!(
            complexity_estimate(LayerType::Recurrent, 1, 4, 1)
                .unwrap()
                .sequential_ops,
            1
        );
        assert!(complexity_estimate(LayerType::DepthwiseSeparableConvolution, 8, 4, 1).is_err());
    }

    #[test]
    fn names_round_trip() {
        for layer in LayerType::ALL {
            assert_eq!(layer.name().parse::<LayerType>().unwrap(), layer);
        }
    }
}
