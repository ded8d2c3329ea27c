use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ctxformer::config::{Preset, RunConfig};
use ctxformer::data::{TaggedPair, BOS};
use ctxformer::model::{sinusoidal_positions, Model, ModelConfig};
use ctxformer::tensor::{Session, Tensor};
use ctxformer::training::{multi_task_loss, TrainConfig, Trainer};
use ctxformer::Error;
use ctxformer_testkit::suites::tiny_config;
use ctxformer_testkit::{layers, max_abs_diff, oracle, rand_tensor, rows};

fn mat(t: &Tensor) -> Vec<Vec<f64>> {
    let c = *t.shape().last().unwrap();
    t.data().chunks(c).map(<[f64]>::to_vec).collect()
}

fn pair(rng: &mut ChaCha8Rng, cfg: &ModelConfig, s: usize, t: usize) -> TaggedPair {
    TaggedPair {
        src: (0..s).map(|_| rng.gen_range(4..cfg.vocab_src)).collect(),
        tgt: (0..t).map(|_| rng.gen_range(4..cfg.vocab_tgt)).collect(),
        pos_tags: (0..s).map(|_| rng.gen_range(0..cfg.n_pos_tags)).collect(),
        ner_tags: (0..s).map(|_| rng.gen_range(0..cfg.n_ner_tags)).collect(),
    }
}

#[test]
fn positions_match_direct_evaluation() {
    let (t, d) = (9, 12);
    let pe = sinusoidal_positions(t, d).unwrap();
    for pos in [0, 3, 8] {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            assert!((pe.at(&[pos, 2 * i]) - angle.sin()).abs() < 1e-12);
            assert!((pe.at(&[pos, 2 * i + 1]) - angle.cos()).abs() < 1e-12);
        }
    }
    assert!(matches!(sinusoidal_positions(2, 7), Err(Error::Config(_))));
}

#[test]
fn embedding_rows_determinism_and_gradient() {
    let model = Model::new(tiny_config(3)).unwrap();
    let d = model.config.d_model;
    let mut sess = Session::inference(&model.store);
    let x = model.embed(&mut sess, model.src_embed, &[vec![6]]).unwrap();
    let table = model.store.get(model.src_embed);
    let pe = sinusoidal_positions(1, d).unwrap();
    for c in 0..d {
        let want = table.at(&[6, c]) * (d as f64).sqrt() + pe.at(&[0, c]);
        assert!((sess.value(x).data()[c] - want).abs() < 1e-12);
    }
    let tokens = vec![vec![4, 7, 4, 9, 4]];
    let a = model.embed(&mut sess, model.src_embed, &tokens).unwrap();
    let b = model.embed(&mut sess, model.src_embed, &tokens).unwrap();
    assert_eq!(sess.value(a), sess.value(b));

    let mut sess = Session::new(&model.store, false, 0);
    let x = model.embed(&mut sess, model.src_embed, &tokens).unwrap();
    let l = sess.tape.sum(x);
    sess.tape.backward(l).unwrap();
    let grad = sess
        .param_grads()
        .find(|(id, _)| *id == model.src_embed)
        .map(|(_, g)| g.clone())
        .unwrap();
    for row in 0..model.config.vocab_src {
        let count = tokens[0].iter().filter(|&&t| t == row).count() as f64;
        for c in 0..d {
            assert!((grad.at(&[row, c]) - (d as f64).sqrt() * count).abs() < 1e-12);
        }
    }

    let mut sess = Session::inference(&model.store);
    let err = model.embed(&mut sess, model.src_embed, &[vec![4, 99]]).unwrap_err();
    assert!(err.to_string().contains('1'), "{err}");
}

#[test]
fn degenerate_encoder_weights_reduce_to_double_layer_norm() {
    let mut model = Model::new(tiny_config(4)).unwrap();
    let layer = model.encoders[0].clone();
    let zero = |m: &mut Model, id| m.store.get_mut(id).data_mut().fill(0.0);
    zero(&mut model, layer.mha.w_o);
    for lin in [layer.ffn.inner, layer.ffn.outer] {
        zero(&mut model, lin.w);
        zero(&mut model, lin.b);
    }
    let (_, head) = layer.aux.unwrap();
    model.store.get_mut(head.w).data_mut().fill(0.0);
    let bias = vec![0.5, -1.0, 2.0, 0.25];
    model.store.get_mut(head.b).data_mut().copy_from_slice(&bias);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor(&mut rng, &[1, 5, 8], 2.0);
    let mut sess = Session::inference(&model.store);
    let xv = sess.tape.constant(x.clone());
    let (y, aux) = model.encoder_layer(&mut sess, &model.encoders[0], xv).unwrap();
    let ones = vec![1.0; 8];
    let zeros = vec![0.0; 8];
    let ln = |m: &Vec<Vec<f64>>| oracle::layer_norm(m, &ones, &zeros, 1e-5);
    let want = ln(&ln(&mat(&x)));
    assert!(max_abs_diff(&mat(sess.value(y)), &want) < 1e-12);
    for row in mat(sess.value(aux.unwrap())) {
        assert_eq!(row, bias);
    }
}

#[test]
fn encoder_and_decoder_layers_match_step_by_step_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for seed in 0..5 {
        let model = Model::new(tiny_config(seed)).unwrap();
        let eps = model.config.layer_norm_eps;
        let (ts, tt) = (rng.gen_range(1..7), rng.gen_range(1..7));
        let x = rand_tensor(&mut rng, &[1, ts, 8], 1.5);
        let y = rand_tensor(&mut rng, &[1, tt, 8], 1.5);
        let mut sess = Session::inference(&model.store);
        let xv = sess.tape.constant(x.clone());
        let yv = sess.tape.constant(y.clone());
        for layer in &model.encoders {
            let (got, aux) = model.encoder_layer(&mut sess, layer, xv).unwrap();
            let (want, want_aux) = layers::encoder_layer(&model.store, layer, &mat(&x), eps);
            assert!(max_abs_diff(&mat(sess.value(got)), &want) < 1e-8);
            assert_eq!(aux.is_some(), want_aux.is_some());
            if let (Some(a), Some(w)) = (aux, want_aux) {
                assert_eq!(sess.tape.shape(a), &[1, ts, w[0].len()]);
                assert!(max_abs_diff(&mat(sess.value(a)), &w) < 1e-8);
            }
        }
        for layer in &model.decoders {
            let got = model.decoder_layer(&mut sess, layer, yv, xv).unwrap();
            assert_eq!(sess.tape.shape(got), &[1, tt, 8]);
            let want = layers::decoder_layer(&model.store, layer, &mat(&y), &mat(&x), eps);
            assert!(max_abs_diff(&mat(sess.value(got)), &want) < 1e-8);
        }
    }
}

#[test]
fn encode_shapes_and_determinism() {
    let model = Model::new(tiny_config(5)).unwrap();
    let src = vec![vec![4, 5, 6, 7], vec![8, 9, 10, 4]];
    let run = || {
        let mut sess = Session::inference(&model.store);
        let enc = model.encode(&mut sess, &src).unwrap();
        assert_eq!(sess.tape.shape(enc.memory), &[2, 4, 8]);
        assert_eq!(sess.tape.shape(enc.pos_logits.unwrap()), &[2, 4, 4]);
        assert_eq!(sess.tape.shape(enc.ner_logits.unwrap()), &[2, 4, 3]);
        sess.value(enc.memory).clone()
    };
    assert_eq!(run(), run());
    let mut sess = Session::inference(&model.store);
    assert!(matches!(model.encode(&mut sess, &[vec![4; 13]]), Err(Error::Data(_))));
}

#[test]
fn forward_train_shapes_and_loss_composition() {
    let model = Model::new(tiny_config(6)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch: Vec<TaggedPair> = (0..3).map(|_| pair(&mut rng, &model.config, 4, 3)).collect();
    let mut sess = Session::inference(&model.store);
    let out = model.forward_train(&mut sess, &batch).unwrap();
    assert_eq!(sess.tape.shape(out.translation_logits), &[3, 4, 9]);
    assert_eq!(sess.tape.shape(out.pos_logits.unwrap()), &[3, 4, 4]);
    assert_eq!(sess.tape.shape(out.ner_logits.unwrap()), &[3, 4, 3]);
    let (lp, ln) = (0.3, 0.7);
    let parts = multi_task_loss(&mut sess.tape, &out, lp, ln).unwrap();

    let ce = |logits: &Tensor, targets: &[usize]| {
        let rs = mat(logits);
        rs.iter()
            .zip(targets)
            .map(|(r, &t)| -oracle::log_softmax(r)[t])
            .sum::<f64>()
            / targets.len() as f64
    };
    let tgt: Vec<usize> = batch.iter().flat_map(|p| p.tgt.iter().copied().chain([2])).collect();
    let pos: Vec<usize> = batch.iter().flat_map(|p| p.pos_tags.clone()).collect();
    let ner: Vec<usize> = batch.iter().flat_map(|p| p.ner_tags.clone()).collect();
    let want = ce(sess.value(out.translation_logits), &tgt)
        + lp * ce(sess.value(out.pos_logits.unwrap()), &pos)
        + ln * ce(sess.value(out.ner_logits.unwrap()), &ner);
    assert!((sess.value(parts.total).item() - want).abs() < 1e-10);

    let zero = multi_task_loss(&mut sess.tape, &out, 0.0, 0.0).unwrap();
    assert_eq!(sess.value(zero.total).item(), sess.value(zero.translation).item());

    let mut bad = batch.clone();
    bad[1].ner_tags.pop();
    let mut sess = Session::inference(&model.store);
    assert!(matches!(model.forward_train(&mut sess, &bad), Err(Error::Data(_))));
}

#[test]
fn decoder_logits_match_manual_shifted_decode() {
    let model = Model::new(tiny_config(7)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = pair(&mut rng, &model.config, 5, 4);
    let mut sess = Session::inference(&model.store);
    let out = model.forward_train(&mut sess, std::slice::from_ref(&p)).unwrap();
    let enc = model.encode(&mut sess, std::slice::from_ref(&p.src)).unwrap();
    let tgt_in: Vec<usize> = std::iter::once(BOS).chain(p.tgt.iter().copied()).collect();
    let l = model.decode(&mut sess, enc.memory, &[tgt_in]).unwrap();
    assert_eq!(sess.value(l), sess.value(out.translation_logits));
}

#[test]
fn aux_heads_do_not_touch_the_translation_path() {
    let with = Model::new(tiny_config(8)).unwrap();
    let without = Model::new(ModelConfig {
        aux_heads: false,
        ..tiny_config(8)
    })
    .unwrap();
    assert_eq!(with.store.len(), without.store.len() + 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch: Vec<TaggedPair> = (0..2).map(|_| pair(&mut rng, &with.config, 3, 5)).collect();
    let logits = |m: &Model| {
        let mut sess = Session::inference(&m.store);
        let out = m.forward_train(&mut sess, &batch).unwrap();
        sess.value(out.translation_logits).clone()
    };
    assert_eq!(logits(&with), logits(&without));
}

#[test]
fn single_target_token_task_loss_falls() {
    let cfg = ModelConfig {
        dropout: 0.0,
        residual_dropout: 0.0,
        embed_dropout: 0.0,
        dropconnect: 0.0,
        ..tiny_config(9)
    };
    let model = Model::new(cfg.clone()).unwrap();
    let train = TrainConfig {
        warmup_steps: 10,
        total_steps: 10,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model, train).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut batch: Vec<TaggedPair> = (0..4).map(|_| pair(&mut rng, &cfg, 4, 3)).collect();
    for p in &mut batch {
        p.tgt.fill(5);
        p.pos_tags.fill(0);
        p.ner_tags.fill(0);
    }
    let losses: Vec<f64> = (0..10)
        .map(|_| trainer.train_micro_batch(&batch).unwrap().unwrap().loss_total)
        .collect();
    assert!(losses.iter().all(|l| l.is_finite()));
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn three_blocks_have_one_standard_encoder_and_rows_helper_is_row_major() {
    let model = Model::new(tiny_config(10)).unwrap();
    let heads: Vec<bool> = model.encoders.iter().map(|l| l.aux.is_some()).collect();
    assert_eq!(heads, [true, true, false]);
    let t = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(rows(&t), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
}

#[test]
fn paper_preset_matches_published_hyperparameters() {
    let cfg = RunConfig::preset(Preset::Paper);
    let m = &cfg.model;
    assert_eq!((m.h, m.n_blocks), (16, 5));
    assert_eq!(m.kernel_sizes, [3, 5, 7, 11, 15]);
    assert_eq!((m.dropout, m.residual_dropout, m.embed_dropout), (0.25, 0.10, 0.10));
    assert!(m.aux_heads && m.hybrid_standard_encoders);
    assert_eq!(
        (cfg.train.accum_steps, cfg.train.total_steps, cfg.train.keep_last),
        (10, 320_000, 10)
    );
    assert_eq!((cfg.decode.beam_size, cfg.decode.alpha), (5, 0.5));
    assert_eq!(cfg.decode_strategy, "beam");
    m.validate().unwrap();
}
