//! Reference loop implementations of the attention equations, and runners
//! for the gradient, oracle, causality and normalisation suites. Each runner
//! returns per-check numbers so callers can either assert or report.

pub mod layers;
pub mod oracle;
pub mod scorers;
pub mod suites;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use ctxformer::tensor::Tensor;

/// Uniform `[-scale, scale)` tensor.
pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// Row-major `[rows][cols]` copy of a rank-2 tensor.
pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let s = t.shape();
    assert_eq!(s.len(), 2, "rows() needs a matrix, got {s:?}");
    (0..s[0]).map(|i| t.data()[i * s[1]..(i + 1) * s[1]].to_vec()).collect()
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}
