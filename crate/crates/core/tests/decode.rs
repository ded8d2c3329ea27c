use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ctxformer::infer::{
    bleu, cosine_probe, length_penalty, translate, BeamSearch, DecodeConfig, DecodeStrategy, DecoderRegistry,
    Exhaustive, Greedy, ModelScorer, ProbeLayer, StepScorer,
};
use ctxformer::model::{sinusoidal_positions, Model, ModelConfig};
use ctxformer::Result;
use ctxformer_testkit::scorers::TableScorer;
use ctxformer_testkit::suites::{oracle_multi_head, tiny_config};
use ctxformer_testkit::{layers, oracle, rows};

fn cfg(beam: usize, alpha: f64, max_len: usize) -> DecodeConfig {
    DecodeConfig {
        beam_size: beam,
        alpha,
        max_decode_len: max_len,
    }
}

#[test]
fn beam_one_is_greedy() {
    for seed in 0..200 {
        let mut a = TableScorer::new(5, seed, 3.0);
        let mut b = TableScorer::new(5, seed, 3.0);
        let c = cfg(1, 0.6, 6);
        assert_eq!(
            BeamSearch.decode(&mut a, &c).unwrap(),
            Greedy.decode(&mut b, &c).unwrap()
        );
    }
}

#[test]
fn beam_matches_exhaustive_on_three_token_vocabulary() {
    let mut agree = 0;
    for seed in 0..300 {
        for alpha in [0.0, 0.5, 1.0] {
            let c = cfg(27, alpha, 3);
            let mut s = TableScorer::new(3, seed, 4.0);
            let beam = BeamSearch.decode(&mut s, &c).unwrap();
            let exhaustive = Exhaustive.decode(&mut s, &c).unwrap();
            assert_eq!(beam, exhaustive, "seed {seed} alpha {alpha}");

            let (done, open) = s.enumerate(3);
            let score = |(t, lp): &(Vec<usize>, f64)| lp / length_penalty(t.len(), alpha);
            let pool = if done.is_empty() { &open } else { &done };
            let best = pool.iter().map(score).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(exhaustive.best.score(alpha), best);
            let small = BeamSearch.decode(&mut s, &cfg(2, alpha, 3)).unwrap();
            agree += usize::from(small.best.tokens == exhaustive.best.tokens);
        }
    }
    assert!(agree > 0);
}

#[test]
fn zero_alpha_ranks_by_raw_log_probability() {
    assert_eq!(length_penalty(17, 0.0), 1.0);
    for seed in 0..100 {
        let mut s = TableScorer::new(4, seed, 2.0);
        let out = Exhaustive.decode(&mut s, &cfg(1, 0.0, 4)).unwrap();
        let (done, _) = s.enumerate(4);
        let best = done.iter().map(|d| d.1).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.best.log_prob, best);
        assert_eq!(out.best.score(0.0), out.best.log_prob);
    }
}

/// A wider beam can prune the prefix that the narrower beam finished from,
/// so the score is not monotone in beam size; violations are rare.
#[test]
fn beam_score_rarely_drops_with_a_wider_beam() {
    let mut violations = 0;
    let mut cases = 0;
    for seed in 0..200 {
        let mut s = TableScorer::new(6, seed, 2.5);
        let scores: Vec<f64> = [1, 2, 3, 4, 5, 8]
            .iter()
            .map(|&b| BeamSearch.decode(&mut s, &cfg(b, 0.5, 5)).unwrap().best.score(0.5))
            .collect();
        cases += scores.len() - 1;
        violations += scores.windows(2).filter(|w| w[1] < w[0]).count();
    }
    println!("beam score decreased with a larger beam in {violations} of {cases} comparisons");
    assert!(violations > 0 && violations * 50 < cases);
}

#[test]
fn unfinished_outcome_is_flagged() {
    struct NeverEnds;
    impl StepScorer for NeverEnds {
        fn vocab_size(&self) -> usize {
            4
        }
        fn next_log_probs(&mut self, p: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
            Ok(p.iter().map(|_| vec![-3.0, -3.0, f64::NEG_INFINITY, -0.2]).collect())
        }
    }
    for strategy in [&Greedy as &dyn DecodeStrategy, &BeamSearch, &Exhaustive] {
        let out = strategy.decode(&mut NeverEnds, &cfg(3, 0.5, 4)).unwrap();
        assert!(out.unfinished, "{}", strategy.name());
        assert_eq!(out.best.tokens, [3, 3, 3, 3]);
        assert_eq!(out.best.output(), [3, 3, 3, 3]);
    }
}

#[test]
fn registry_lookup() {
    let r = DecoderRegistry::default();
    assert_eq!(r.names(), ["beam", "exhaustive", "greedy"]);
    assert_eq!(r.get("beam").unwrap().name(), "beam");
    let err = r.get("sampling").err().unwrap().to_string();
    assert!(err.contains("greedy"), "{err}");
    assert!(cfg(0, 0.5, 3).validate().is_err());
    assert!(cfg(1, -1.0, 3).validate().is_err());
}

#[test]
fn model_scoring_is_batch_independent() {
    let model = Model::new(tiny_config(12)).unwrap();
    let mut scorer = ModelScorer::new(&model, &[4, 5, 6, 7]).unwrap();
    let prefixes = vec![vec![4, 5], vec![6, 6], vec![8, 3]];
    let together = scorer.next_log_probs(&prefixes).unwrap();
    for (p, row) in prefixes.iter().zip(&together) {
        let alone = scorer.next_log_probs(std::slice::from_ref(p)).unwrap();
        for (a, b) in alone[0].iter().zip(row) {
            assert!((a - b).abs() < 1e-12);
        }
        let mass: f64 = row.iter().map(|x| x.exp()).sum();
        assert!((mass - 1.0).abs() < 1e-12);
    }
    let c = cfg(3, 0.5, 6);
    let a = translate(&model, &[4, 5, 6, 7], &BeamSearch, &c).unwrap();
    let b = translate(&model, &[4, 5, 6, 7], &BeamSearch, &c).unwrap();
    assert_eq!(a, b);
    let g = translate(&model, &[4, 5, 6, 7], &Greedy, &c).unwrap();
    let b1 = translate(&model, &[4, 5, 6, 7], &BeamSearch, &cfg(1, 0.5, 6)).unwrap();
    assert_eq!(g, b1);
}

#[test]
fn bleu_two_sentence_hand_count() {
    let split = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
    let cands = vec![split("the cat sat on the mat"), split("a dog runs")];
    let refs = vec![split("the cat is on the mat"), split("a dog runs fast")];
    let stats = bleu(&cands, &refs).unwrap();
    assert_eq!(stats.matches, [8, 5, 2, 0]);
    assert_eq!(stats.totals, [9, 7, 5, 3]);
    let precisions: f64 = (8.0 / 9.0) * (5.0 / 7.0) * (2.0 / 5.0) * (1.0 / 4.0);
    let want = 100.0 * (1.0f64 - 10.0 / 9.0).exp() * precisions.powf(0.25);
    assert!((stats.bleu - want).abs() < 1e-6, "{} vs {want}", stats.bleu);

    let swapped = bleu(
        &[cands[1].clone(), cands[0].clone()],
        &[refs[1].clone(), refs[0].clone()],
    )
    .unwrap();
    assert_eq!(swapped.bleu, stats.bleu);
    assert!(bleu(&cands, &refs[..1]).is_err());
}

#[test]
fn bleu_bounds_and_permutation_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let n = rng.gen_range(1..8);
        let mut pairs: Vec<(Vec<u8>, Vec<u8>)> = (0..n)
            .map(|_| {
                let c = (0..rng.gen_range(0..9)).map(|_| rng.gen_range(0..4)).collect();
                let r = (0..rng.gen_range(1..9)).map(|_| rng.gen_range(0..4)).collect();
                (c, r)
            })
            .collect();
        let score = |p: &[(Vec<u8>, Vec<u8>)]| {
            let (c, r): (Vec<_>, Vec<_>) = p.iter().cloned().unzip();
            bleu(&c, &r).unwrap().bleu
        };
        let before = score(&pairs);
        assert!((0.0..=100.0).contains(&before));
        pairs.shuffle(&mut rng);
        assert_eq!(score(&pairs), before);
        let refs: Vec<Vec<u8>> = pairs.iter().map(|p| p.1.clone()).collect();
        assert!((bleu(&refs, &refs).unwrap().bleu - 100.0).abs() < 1e-9 || refs.iter().all(|r| r.len() < 4));
    }
}

fn scalar_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

#[test]
fn probe_matches_scalar_oracle() {
    let model = Model::new(ModelConfig {
        h: 4,
        ..tiny_config(13)
    })
    .unwrap();
    let (d, dh) = (8, 2);
    let sentence = [4, 9, 5, 7, 10, 6];
    let table = rows(model.store.get(model.src_embed));
    let pe = rows(&sinusoidal_positions(sentence.len(), d).unwrap());
    let x: Vec<Vec<f64>> = sentence
        .iter()
        .enumerate()
        .map(|(t, &id)| (0..d).map(|c| table[id][c] * (d as f64).sqrt() + pe[t][c]).collect())
        .collect();
    let (a, b) = (9, 7);
    let (ia, ib) = (1, 3);
    let got = cosine_probe(&model, &sentence, a, b, ProbeLayer::Embedding).unwrap();
    assert!((got - scalar_cosine(&x[ia], &x[ib])).abs() < 1e-10);

    let mh0 = oracle_multi_head(&model.store, &model.encoders[0].mha);
    for head in 0..2 {
        let ch = &mh0.conv_heads[head];
        let local = oracle::local_conv(&oracle::matmul(&x, &ch.w_in), &ch.w_a, ch.dilation);
        let got = cosine_probe(&model, &sentence, a, b, ProbeLayer::LocalConv { block: 0, head }).unwrap();
        assert!((got - scalar_cosine(&local[ia], &local[ib])).abs() < 1e-10);
    }

    let eps = model.config.layer_norm_eps;
    let h1 = layers::encoder_layer(&model.store, &model.encoders[0], &x, eps).0;
    let sh = &oracle_multi_head(&model.store, &model.encoders[1].mha).self_heads[1];
    let q = oracle::matmul(&h1, &sh.w_q);
    let k = oracle::matmul(&h1, &sh.w_k);
    let v = oracle::matmul(&h1, &sh.w_v);
    let head = oracle::attention(&q, &k, &v, &|_, _| true).0;
    assert_eq!(head[0].len(), dh);
    let got = cosine_probe(&model, &sentence, a, b, ProbeLayer::SelfHead { block: 1, head: 1 }).unwrap();
    assert!((got - scalar_cosine(&head[ia], &head[ib])).abs() < 1e-10);
}

#[test]
fn probe_self_pair_bounds_and_errors() {
    let model = Model::new(tiny_config(14)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let layers = [
        ProbeLayer::Embedding,
        ProbeLayer::SelfHead { block: 0, head: 0 },
        ProbeLayer::LocalConv { block: 1, head: 0 },
    ];
    for _ in 0..30 {
        let s: Vec<usize> = (0..rng.gen_range(2..10)).map(|_| rng.gen_range(4..11)).collect();
        for layer in layers {
            let same = cosine_probe(&model, &s, s[0], s[0], layer).unwrap();
            assert!((same - 1.0).abs() < 1e-12);
            let c = cosine_probe(&model, &s, s[0], s[s.len() - 1], layer).unwrap();
            assert!((-1.0..=1.0).contains(&c));
        }
    }
    assert!(cosine_probe(&model, &[4, 5], 4, 9, ProbeLayer::Embedding).is_err());
    assert!(cosine_probe(&model, &[4, 5], 4, 5, ProbeLayer::LocalConv { block: 3, head: 0 }).is_err());
    assert!(cosine_probe(&model, &[4, 5], 4, 5, ProbeLayer::LocalConv { block: 0, head: 1 }).is_err());
    let self_only = Model::new(ModelConfig {
        hybrid_standard_encoders: false,
        ..tiny_config(14)
    })
    .unwrap();
    assert!(cosine_probe(&self_only, &[4, 5], 4, 5, ProbeLayer::LocalConv { block: 1, head: 0 }).is_ok());
    assert!(cosine_probe(&self_only, &[4, 5], 4, 5, ProbeLayer::LocalConv { block: 2, head: 0 }).is_err());
    assert!(cosine_probe(&model, &[4, 5], 4, 5, ProbeLayer::SelfHead { block: 7, head: 0 }).is_err());
    assert_eq!(
        "local_conv:1:0".parse::<ProbeLayer>().unwrap(),
        ProbeLayer::LocalConv { block: 1, head: 0 }
    );
    assert_eq!(ProbeLayer::SelfHead { block: 0, head: 1 }.to_string(), "self_head:0:1");
    assert!("conv".parse::<ProbeLayer>().is_err());
}
