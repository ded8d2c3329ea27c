use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ctxformer::tensor::{finite_difference_check, Tape, Tensor};
use ctxformer::Error;
use ctxformer_testkit::{oracle, rand_tensor, rows};

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{x} vs {y} (tol {tol})");
    }
}

#[test]
fn matmul_identity_scalar_and_loop_oracle() {
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let b = rand_tensor(&mut rng, &[3, 2], 1.0);
    let (i3, bv) = (tape.constant(Tensor::eye(3)), tape.constant(b.clone()));
    let out = tape.matmul(i3, bv).unwrap();
    assert_eq!(tape.value(out), &b);

    let two = tape.constant(Tensor::new(&[1, 1], vec![2.0]).unwrap());
    let three = tape.constant(Tensor::new(&[1, 1], vec![3.0]).unwrap());
    let six = tape.matmul(two, three).unwrap();
    assert_eq!(tape.value(six).data(), &[6.0]);

    for _ in 0..20 {
        let a = rand_tensor(&mut rng, &[3, 4], 2.0);
        let b = rand_tensor(&mut rng, &[4, 2], 2.0);
        let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let got = tape.matmul(av, bv).unwrap();
        let want: Vec<f64> = oracle::matmul(&rows(&a), &rows(&b)).concat();
        close(tape.value(got).data(), &want, 1e-12);
    }
}

#[test]
fn matmul_mismatch_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[4, 2]));
    let msg = tape.matmul(a, b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
}

#[test]
fn softmax_cases() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
    let s = tape.softmax(x, 0).unwrap();
    close(tape.value(s).data(), &[1.0 / 3.0; 3], 1e-15);

    let x = tape.constant(Tensor::vector(vec![0.0, f64::NEG_INFINITY]));
    let s = tape.softmax(x, 0).unwrap();
    assert_eq!(tape.value(s).data(), &[1.0, 0.0]);

    let x = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let s = tape.softmax(x, 0).unwrap();
    let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
    let want: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp() / z).collect();
    close(tape.value(s).data(), &want, 1e-12);

    let shifted = tape.constant(Tensor::vector(vec![101.0, 102.0, 103.0]));
    let s2 = tape.softmax(shifted, 0).unwrap();
    close(tape.value(s2).data(), &want, 1e-12);
}

#[test]
fn depthwise_conv_identity_causality_and_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tape = Tape::new();
    let s = rand_tensor(&mut rng, &[5, 3], 1.0);
    let (sv, ones) = (tape.constant(s.clone()), tape.constant(Tensor::full(&[1, 3], 1.0)));
    let out = tape.depthwise_conv(sv, ones, 1).unwrap();
    assert_eq!(tape.value(out), &s);

    for t in 0..6 {
        let x = rand_tensor(&mut rng, &[7, 2], 1.0);
        let w = rand_tensor(&mut rng, &[3, 2], 1.0);
        let mut y = x.clone();
        y.data_mut()[(t + 1) * 2] += 1.0;
        let (xv, yv, wv) = (tape.constant(x), tape.constant(y), tape.constant(w));
        let a = tape.depthwise_conv(xv, wv, 2).unwrap();
        let b = tape.depthwise_conv(yv, wv, 2).unwrap();
        assert_eq!(
            &tape.value(a).data()[..(t + 1) * 2],
            &tape.value(b).data()[..(t + 1) * 2]
        );
    }

    for _ in 0..20 {
        let x = rand_tensor(&mut rng, &[7, 4], 1.0);
        let w = rand_tensor(&mut rng, &[3, 4], 1.0);
        let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
        let got = tape.depthwise_conv(xv, wv, 2).unwrap();
        let mut want = vec![0.0; 28];
        for t in 0..7 {
            for c in 0..4 {
                for j in 0..3 {
                    if t >= 2 * j {
                        want[t * 4 + c] += w.at(&[j, c]) * x.at(&[t - 2 * j, c]);
                    }
                }
            }
        }
        close(tape.value(got).data(), &want, 1e-12);
    }

    let bad = tape.constant(Tensor::zeros(&[3, 5]));
    let sv = tape.constant(s);
    assert!(matches!(tape.depthwise_conv(sv, bad, 1), Err(Error::Shape(_))));
}

#[test]
fn layer_norm_cases() {
    let mut tape = Tape::new();
    let (g1, b0) = (
        tape.constant(Tensor::full(&[4], 1.0)),
        tape.constant(Tensor::zeros(&[4])),
    );
    let x = tape.constant(Tensor::full(&[2, 4], 3.5));
    let y = tape.layer_norm(x, g1, b0, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|v| *v == 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let beta = rand_tensor(&mut rng, &[4], 1.0);
    let (g0, bv) = (tape.constant(Tensor::zeros(&[4])), tape.constant(beta.clone()));
    let x = tape.constant(rand_tensor(&mut rng, &[3, 4], 5.0));
    let y = tape.layer_norm(x, g0, bv, 1e-5).unwrap();
    for row in tape.value(y).data().chunks(4) {
        assert_eq!(row, beta.data());
    }

    let moments = |r: &[f64]| {
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / r.len() as f64;
        (mean, var)
    };
    for eps in [1e-5, 1e-12] {
        for _ in 0..20 {
            let raw = rand_tensor(&mut rng, &[1, 16], 4.0);
            let (_, var_in) = moments(raw.data());
            let x = tape.constant(raw);
            let (g, b) = (
                tape.constant(Tensor::full(&[16], 1.0)),
                tape.constant(Tensor::zeros(&[16])),
            );
            let y = tape.layer_norm(x, g, b, eps).unwrap();
            let (mean, var) = moments(tape.value(y).data());
            assert!(mean.abs() < 1e-6, "mean {mean}");
            assert!((var - var_in / (var_in + eps)).abs() < 1e-12, "var {var}");
            if eps < 1e-6 {
                assert!((var - 1.0).abs() < 1e-6, "var {var}");
            }
        }
    }
}

#[test]
fn cross_entropy_cases() {
    let mut tape = Tape::new();
    let sharp = tape.constant(Tensor::new(&[2, 3], vec![100.0, 0.0, 0.0, 0.0, 0.0, 100.0]).unwrap());
    let l = tape.cross_entropy(sharp, &[0, 2], None).unwrap();
    assert!(tape.value(l).item() < 1e-30);

    let uniform = tape.constant(Tensor::zeros(&[3, 4]));
    let l = tape.cross_entropy(uniform, &[0, 1, 3], None).unwrap();
    assert!((tape.value(l).item() - 4f64.ln()).abs() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let logits = rand_tensor(&mut rng, &[5, 6], 3.0);
        let targets: Vec<usize> = (0..5).map(|_| rng.gen_range(0..6)).collect();
        let lv = tape.constant(logits.clone());
        let got = tape.cross_entropy(lv, &targets, Some(targets[0])).unwrap();
        let kept: Vec<f64> = rows(&logits)
            .iter()
            .zip(&targets)
            .filter(|(_, &t)| t != targets[0])
            .map(|(r, &t)| -oracle::log_softmax(r)[t])
            .collect();
        if kept.is_empty() {
            continue;
        }
        let want = kept.iter().sum::<f64>() / kept.len() as f64;
        assert!((tape.value(got).item() - want).abs() < 1e-10);
    }
}

#[test]
fn dropout_and_drop_connect_statistics() {
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::full(&[100_000], 2.0);
    for drop_connect in [false, true] {
        let xv = tape.constant(x.clone());
        let mut apply = |tape: &mut Tape, p: f64, training: bool| {
            if drop_connect {
                tape.drop_connect(xv, p, &mut rng, training)
            } else {
                tape.dropout(xv, p, &mut rng, training)
            }
        };
        let same = apply(&mut tape, 0.0, true).unwrap();
        assert_eq!(same, xv);
        let same = apply(&mut tape, 0.7, false).unwrap();
        assert_eq!(same, xv);
        assert!(matches!(apply(&mut tape, 1.0, true), Err(Error::Config(_))));
        let y = apply(&mut tape, 0.5, true).unwrap();
        let data = tape.value(y).data();
        let kept = data.iter().filter(|v| **v != 0.0).count() as f64 / data.len() as f64;
        assert!((kept - 0.5).abs() < 0.01, "kept fraction {kept}");
        assert!(data.iter().all(|v| *v == 0.0 || *v == 4.0));
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        assert!((mean - 2.0).abs() < 0.02, "mean {mean}");
    }
}

#[test]
fn gradient_check_rejects_dropout_and_passes_softmax_pick() {
    let x = Tensor::vector(vec![0.3, -1.2, 0.8, 2.0]);
    let pick = finite_difference_check(
        |t, v| {
            let s = t.softmax(v, 0)?;
            let w = t.constant(Tensor::vector(vec![0.0, 0.0, 1.0, 0.0]));
            let p = t.mul(s, w)?;
            Ok(t.sum(p))
        },
        &x,
        1e-4,
        1e-4,
    )
    .unwrap();
    assert!(pick.passed, "{pick:?}");
    let noisy = finite_difference_check(
        |t, v| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let d = t.dropout(v, 0.5, &mut rng, true)?;
            Ok(t.sum(d))
        },
        &x,
        1e-4,
        1e-4,
    );
    assert!(noisy.is_err());
}

#[test]
fn backward_accumulates_across_calls() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, -2.0]), true);
    let sq = tape.mul(x, x).unwrap();
    let l = tape.sum(sq);
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[2.0, -4.0]);
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[4.0, -8.0]);
}
