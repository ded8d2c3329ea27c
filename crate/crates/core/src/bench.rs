//! Plain-loop forward kernels for the four layer families of the
//! complexity table, each counting the multiply-adds it executes, plus a
//! harness that compares measured scaling with the predicted exponents.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{complexity_estimate, Complexity, LayerType};
use crate::error::{Error, Result};

/// A sequence layer instantiated for fixed `(n, d, f)`.
pub trait SequenceLayer {
    /// Runs the forward pass over `x[n, d]` into `out[n, d]` and returns the
    /// number of multiply-adds performed.
    fn forward(&self, x: &[f64], out: &mut [f64]) -> u64;
}

type Factory = fn(n: usize, d: usize, f: usize, rng: &mut ChaCha8Rng) -> Box<dyn SequenceLayer>;

fn random(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect()
}

/// Dot-product attention with `Q = K = V = x`.
struct SelfAttention {
    n: usize,
    d: usize,
}

impl SequenceLayer for SelfAttention {
    fn forward(&self, x: &[f64], out: &mut [f64]) -> u64 {
        let (n, d) = (self.n, self.d);
        let mut ops = 0;
        let mut w = vec![0.0; n];
        let scale = 1.0 / (d as f64).sqrt();
        for i in 0..n {
            for j in 0..n {
                w[j] = (0..d).map(|c| x[i * d + c] * x[j * d + c]).sum::<f64>() * scale;
            }
            ops += (n * d) as u64;
            let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = w
                .iter_mut()
                .map(|v| {
                    *v = (*v - max).exp();
                    *v
                })
                .sum();
            let row = &mut out[i * d..(i + 1) * d];
            row.fill(0.0);
            for j in 0..n {
                let a = w[j] / z;
                for c in 0..d {
                    row[c] += a * x[j * d + c];
                }
            }
            ops += (n * d) as u64;
        }
        ops
    }
}

/// `h_t = tanh(W·h_{t-1} + x_t)`.
struct Recurrent {
    n: usize,
    d: usize,
    w: Vec<f64>,
}

impl SequenceLayer for Recurrent {
    fn forward(&self, x: &[f64], out: &mut [f64]) -> u64 {
        let (n, d) = (self.n, self.d);
        let mut h = vec![0.0; d];
        let mut ops = 0;
        for t in 0..n {
            for o in 0..d {
                let acc: f64 = (0..d).map(|i| self.w[o * d + i] * h[i]).sum();
                out[t * d + o] = (acc + x[t * d + o]).tanh();
            }
            ops += (d * d) as u64;
            h.copy_from_slice(&out[t * d..(t + 1) * d]);
        }
        ops
    }
}

/// Causal convolution mixing all channels, `w[f, d_in, d_out]`.
struct Convolution {
    n: usize,
    d: usize,
    f: usize,
    w: Vec<f64>,
}

impl SequenceLayer for Convolution {
    fn forward(&self, x: &[f64], out: &mut [f64]) -> u64 {
        let (n, d, f) = (self.n, self.d, self.f);
        out.fill(0.0);
        let mut ops = 0;
        for t in 0..n {
            for j in 0..f.min(t + 1) {
                let src = &x[(t - j) * d..(t - j + 1) * d];
                for (i, &xi) in src.iter().enumerate() {
                    let wrow = &self.w[(j * d + i) * d..(j * d + i + 1) * d];
                    for (o, &wv) in wrow.iter().enumerate() {
                        out[t * d + o] += wv * xi;
                    }
                }
                ops += (d * d) as u64;
            }
        }
        ops
    }
}

/// Per-channel causal convolution, `w[f, d]`.
struct Depthwise {
    n: usize,
    d: usize,
    f: usize,
    w: Vec<f64>,
}

impl SequenceLayer for Depthwise {
    fn forward(&self, x: &[f64], out: &mut [f64]) -> u64 {
        let (n, d, f) = (self.n, self.d, self.f);
        out.fill(0.0);
        let mut ops = 0;
        for t in 0..n {
            for j in 0..f.min(t + 1) {
                for c in 0..d {
                    out[t * d + c] += self.w[j * d + c] * x[(t - j) * d + c];
                }
                ops += d as u64;
            }
        }
        ops
    }
}

/// Layer kernels by [`LayerType`].
pub struct LayerRegistry {
    factories: BTreeMap<&'static str, (LayerType, Factory)>,
}

impl Default for LayerRegistry {
    fn default() -> Self {
        let mut r = LayerRegistry {
            factories: BTreeMap::new(),
        };
        r.register(LayerType::SelfAttention, |n, d, _, _| Box::new(SelfAttention { n, d }));
        r.register(LayerType::Recurrent, |n, d, _, rng| {
            Box::new(Recurrent {
                n,
                d,
                w: random(d * d, rng),
            })
        });
        r.register(LayerType::Convolution, |n, d, f, rng| {
            Box::new(Convolution {
                n,
                d,
                f,
                w: random(f * d * d, rng),
            })
        });
        r.register(LayerType::DepthwiseSeparableConvolution, |n, d, f, rng| {
            Box::new(Depthwise {
                n,
                d,
                f,
                w: random(f * d, rng),
            })
        });
        r
    }
}

impl LayerRegistry {
    pub fn register(&mut self, layer: LayerType, factory: Factory) {
        self.factories.insert(layer.name(), (layer, factory));
    }

    pub fn layer_types(&self) -> Vec<LayerType> {
        self.factories.values().map(|(t, _)| *t).collect()
    }

    pub fn build(&self, layer: LayerType, n: usize, d: usize, f: usize, seed: u64) -> Result<Box<dyn SequenceLayer>> {
        let (_, factory) = self
            .factories
            .get(layer.name())
            .ok_or_else(|| Error::config(format!("no kernel registered for {layer}")))?;
        Ok(factory(n, d, f, &mut ChaCha8Rng::seed_from_u64(seed)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub layer: LayerType,
    pub n: usize,
    pub d: usize,
    pub f: usize,
    pub estimate: Complexity,
    pub measured_ops: u64,
    /// Fastest of the timed repetitions.
    pub seconds: f64,
}

/// Runs every registered layer on every `(n, d, f)` combination.
pub fn run_bench(
    registry: &LayerRegistry,
    ns: &[usize],
    ds: &[usize],
    fs: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    if ns.is_empty() || ds.is_empty() || fs.is_empty() {
        return Err(Error::config("bench needs non-empty n, d and f lists"));
    }
    let mut rows = Vec::new();
    for layer in registry.layer_types() {
        for &n in ns {
            for &d in ds {
                for &f in fs {
                    let estimate = complexity_estimate(layer, n as u64, d as u64, f as u64)?;
                    let kernel = registry.build(layer, n, d, f, seed)?;
                    let x = random(n * d, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
                    let mut out = vec![0.0; n * d];
                    let mut seconds = f64::INFINITY;
                    let mut measured_ops = 0;
                    for _ in 0..repeats.max(1) {
                        let t0 = Instant::now();
                        measured_ops = kernel.forward(&x, &mut out);
                        seconds = seconds.min(t0.elapsed().as_secs_f64());
                    }
                    rows.push(BenchRow {
                        layer,
                        n,
                        d,
                        f,
                        estimate,
                        measured_ops,
                        seconds,
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Measured versus predicted growth when one of `n`, `d`, `f` changes.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingCheck {
    pub layer: LayerType,
    /// `'n'`, `'d'` or `'f'`.
    pub variable: char,
    pub from: usize,
    pub to: usize,
    pub predicted_ratio: f64,
    pub op_ratio: f64,
    pub time_ratio: f64,
    /// `|op_ratio / predicted_ratio − 1| ≤ tolerance`.
    pub ops_within: bool,
    pub time_within: bool,
}

/// Compares every pair of rows that differ in exactly one variable, taking
/// consecutive values of that variable. Kernel size only affects the two
/// convolution layers, so `f` pairs are skipped for the others.
pub fn scaling_checks(rows: &[BenchRow], tolerance: f64) -> Vec<ScalingCheck> {
    let mut checks = Vec::new();
    for a in rows {
        for b in rows {
            if a.layer != b.layer {
                continue;
            }
            let (en, ed, ef) = a.layer.exponents();
            let candidates = [
                ('n', a.n, b.n, en, a.d == b.d && a.f == b.f),
                ('d', a.d, b.d, ed, a.n == b.n && a.f == b.f),
                ('f', a.f, b.f, ef, a.n == b.n && a.d == b.d && ef > 0),
            ];
            for (var, from, to, exp, others_equal) in candidates {
                let next = rows
                    .iter()
                    .filter(|r| r.layer == a.layer)
                    .map(|r| match var {
                        'n' => r.n,
                        'd' => r.d,
                        _ => r.f,
                    })
                    .filter(|&v| v > from)
                    .min();
                if !others_equal || next != Some(to) {
                    continue;
                }
                let predicted_ratio = (to as f64 / from as f64).powi(exp as i32);
                let op_ratio = b.measured_ops as f64 / a.measured_ops as f64;
                let time_ratio = b.seconds / a.seconds;
                checks.push(ScalingCheck {
                    layer: a.layer,
                    variable: var,
                    from,
                    to,
                    predicted_ratio,
                    op_ratio,
                    time_ratio,
                    ops_within: (op_ratio / predicted_ratio - 1.0).abs() <= tolerance,
                    time_within: (time_ratio / predicted_ratio - 1.0).abs() <= tolerance,
                });
            }
        }
    }
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_attention_counts_two_n_squared_d() {
        let r = LayerRegistry::default();
        let k = r.build(LayerType::SelfAttention, 6, 4, 3, 0).unwrap();
        let mut out = vec![0.0; 24];
        assert_eq!(k.forward(&[0.1; 24], &mut out), 2 * 36 * 4);
    }

    #[test]
    fn depthwise_counts_causal_taps() {
        let r = LayerRegistry::default();
        let k = r.build(LayerType::DepthwiseSeparableConvolution, 5, 2, 3, 0).unwrap();
        let mut out = vec![0.0; 10];
        // taps per position: 1, 2, 3, 3, 3
        assert_eq!(k.forward(&[1.0; 10], &mut out), 12 * 2);
    }
}
