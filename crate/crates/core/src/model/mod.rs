//! Full encoder-decoder: embeddings, tagging base encoders, standard
//! encoders, and the masked decoder.

mod config;

pub use config::ModelConfig;

use crate::attention::{multi_head_forward, multi_head_forward_traced, AttentionMask, AttentionTrace, MultiHeadParams};
use crate::data::{TaggedPair, BOS, EOS};
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Session, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    fn new(store: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize, seed: u64) -> Result<Self> {
        Ok(Linear {
            w: store.add_uniform(format!("{prefix}.w"), &[d_in, d_out], d_in, seed)?,
            b: store.add_const(format!("{prefix}.b"), &[d_out], 0.0)?,
        })
    }

    pub fn forward(&self, sess: &mut Session, x: Var) -> Result<Var> {
        let (w, b) = (sess.p(self.w), sess.p(self.b));
        let y = sess.tape.matmul(x, w)?;
        sess.tape.add(y, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormParams {
    fn new(store: &mut ParamStore, prefix: &str, d: usize) -> Result<Self> {
        Ok(LayerNormParams {
            gamma: store.add_const(format!("{prefix}.gamma"), &[d], 1.0)?,
            beta: store.add_const(format!("{prefix}.beta"), &[d], 0.0)?,
        })
    }

    pub fn forward(&self, sess: &mut Session, x: Var, eps: f64) -> Result<Var> {
        let (g, b) = (sess.p(self.gamma), sess.p(self.beta));
        sess.tape.layer_norm(x, g, b, eps)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    fn new(store: &mut ParamStore, prefix: &str, d: usize, d_ff: usize, seed: u64) -> Result<Self> {
        Ok(FeedForward {
            inner: Linear::new(store, &format!("{prefix}.inner"), d, d_ff, seed)?,
            outer: Linear::new(store, &format!("{prefix}.outer"), d_ff, d, seed)?,
        })
    }

    pub fn forward(&self, sess: &mut Session, x: Var, dropout: f64) -> Result<Var> {
        let h = self.inner.forward(sess, x)?;
        let h = sess.tape.relu(h);
        let training = sess.training();
        let h = sess.tape.dropout(h, dropout, &mut sess.rng, training)?;
        self.outer.forward(sess, h)
    }
}

/// Which tag set a base encoder is supervised on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuxTask {
    Pos,
    Ner,
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub mha: MultiHeadParams,
    pub ln_attn: LayerNormParams,
    pub ffn: FeedForward,
    pub ln_ffn: LayerNormParams,
    pub aux: Option<(AuxTask, Linear)>,
}

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_mha: MultiHeadParams,
    pub ln_self: LayerNormParams,
    pub cross_mha: MultiHeadParams,
    pub ln_cross: LayerNormParams,
    pub ffn: FeedForward,
    pub ln_ffn: LayerNormParams,
}

/// Encoder results of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    /// `[B, T, d]`
    pub memory: Var,
    /// `[B, T, n_pos]` from base encoder 1.
    pub pos_logits: Option<Var>,
    /// `[B, T, n_ner]` from base encoder 2.
    pub ner_logits: Option<Var>,
}

/// Teacher-forced outputs plus the targets they are scored against.
#[derive(Clone, Debug)]
pub struct TrainOutputs {
    /// `[B, T_tgt + 1, V_tgt]`
    pub translation_logits: Var,
    pub pos_logits: Option<Var>,
    pub ner_logits: Option<Var>,
    /// Flattened next-token targets (`tgt ++ [eos]` per pair).
    pub translation_targets: Vec<usize>,
    pub pos_targets: Vec<usize>,
    pub ner_targets: Vec<usize>,
}

pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub src_embed: ParamId,
    pub tgt_embed: ParamId,
    pub encoders: Vec<EncoderLayer>,
    pub decoders: Vec<DecoderLayer>,
    pub out_proj: Linear,
}

/// `pe[t, 2i] = sin(t / 10000^{2i/d})`, `pe[t, 2i+1] = cos(·)`.
pub fn sinusoidal_positions(t: usize, d: usize) -> Result<Tensor> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(Error::config(format!("positional width must be even, got {d}")));
    }
    if t == 0 {
        return Err(Error::shape("positional encodings for zero positions"));
    }
    let mut data = vec![0.0; t * d];
    for pos in 0..t {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            data[pos * d + 2 * i] = angle.sin();
            data[pos * d + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::new(&[t, d], data)
}

fn equal_lengths(batch: &[Vec<usize>], what: &str) -> Result<usize> {
    let t = batch
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::data(format!("empty {what} batch")))?;
    if t == 0 {
        return Err(Error::data(format!("empty {what} sequence")));
    }
    if let Some(i) = batch.iter().position(|s| s.len() != t) {
        return Err(Error::data(format!(
            "{what} sequence {i} has length {} but the batch length is {t}",
            batch[i].len()
        )));
    }
    Ok(t)
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.init_seed;
        let d = config.d_model;
        let mut store = ParamStore::new();
        let src_embed = store.add_uniform("src_embed", &[config.vocab_src, d], d, seed)?;
        let tgt_embed = store.add_uniform("tgt_embed", &[config.vocab_tgt, d], d, seed)?;
        let mut encoders = Vec::with_capacity(config.n_blocks);
        for i in 0..config.n_blocks {
            let p = format!("enc.{i}");
            let f = config.kernel_sizes[i];
            let mut mha = if i < 2 || config.hybrid_standard_encoders {
                MultiHeadParams::hybrid(
                    &mut store,
                    &format!("{p}.mha"),
                    d,
                    config.h,
                    f,
                    config.dilations[i],
                    seed,
                )?
            } else {
                MultiHeadParams::self_only(&mut store, &format!("{p}.mha"), d, config.h, seed)?
            };
            mha.dropconnect = config.dropconnect;
            let ln_attn = LayerNormParams::new(&mut store, &format!("{p}.ln_attn"), d)?;
            let ffn = FeedForward::new(&mut store, &format!("{p}.ffn"), d, config.d_ff(), seed)?;
            let ln_ffn = LayerNormParams::new(&mut store, &format!("{p}.ln_ffn"), d)?;
            let aux = match (config.aux_heads, i) {
                (true, 0) => Some((
                    AuxTask::Pos,
                    Linear::new(&mut store, "pos_head", d, config.n_pos_tags, seed)?,
                )),
                (true, 1) => Some((
                    AuxTask::Ner,
                    Linear::new(&mut store, "ner_head", d, config.n_ner_tags, seed)?,
                )),
                _ => None,
            };
            encoders.push(EncoderLayer {
                mha,
                ln_attn,
                ffn,
                ln_ffn,
                aux,
            });
        }
        let mut decoders = Vec::with_capacity(config.n_blocks);
        for i in 0..config.n_blocks {
            let p = format!("dec.{i}");
            let f = config.kernel_sizes[i];
            let dil = config.dilations[i];
            let mut self_mha = MultiHeadParams::hybrid(&mut store, &format!("{p}.mha"), d, config.h, f, dil, seed)?;
            self_mha.dropconnect = config.dropconnect;
            let mut cross_mha = if config.cross_conv {
                MultiHeadParams::hybrid(&mut store, &format!("{p}.cross"), d, config.h, f, dil, seed)?
            } else {
                MultiHeadParams::self_only(&mut store, &format!("{p}.cross"), d, config.h, seed)?
            };
            cross_mha.dropconnect = config.dropconnect;
            decoders.push(DecoderLayer {
                self_mha,
                ln_self: LayerNormParams::new(&mut store, &format!("{p}.ln_self"), d)?,
                cross_mha,
                ln_cross: LayerNormParams::new(&mut store, &format!("{p}.ln_cross"), d)?,
                ffn: FeedForward::new(&mut store, &format!("{p}.ffn"), d, config.d_ff(), seed)?,
                ln_ffn: LayerNormParams::new(&mut store, &format!("{p}.ln_ffn"), d)?,
            });
        }
        let out_proj = Linear::new(&mut store, "out_proj", d, config.vocab_tgt, seed)?;
        Ok(Model {
            config,
            store,
            src_embed,
            tgt_embed,
            encoders,
            decoders,
            out_proj,
        })
    }

    pub fn aux_head(&self, task: AuxTask) -> Option<&Linear> {
        self.encoders
            .iter()
            .filter_map(|l| l.aux.as_ref())
            .find(|(t, _)| *t == task)
            .map(|(_, lin)| lin)
    }

    /// `table[id]·√d + positions`, then embedding dropout. Returns `[B, T, d]`.
    pub fn embed(&self, sess: &mut Session, table: ParamId, tokens: &[Vec<usize>]) -> Result<Var> {
        let t = equal_lengths(tokens, "token")?;
        if t > self.config.max_len {
            return Err(Error::data(format!(
                "sequence length {t} exceeds max_len {}",
                self.config.max_len
            )));
        }
        let d = self.config.d_model;
        let flat: Vec<usize> = tokens.concat();
        let tv = sess.p(table);
        let rows = sess.tape.gather(tv, &flat)?;
        let rows = sess.tape.reshape(rows, &[tokens.len(), t, d])?;
        let rows = sess.tape.scale(rows, (d as f64).sqrt());
        let pe = sess.tape.constant(sinusoidal_positions(t, d)?);
        let x = sess.tape.add(rows, pe)?;
        let training = sess.training();
        sess.tape.dropout(x, self.config.embed_dropout, &mut sess.rng, training)
    }

    fn residual(&self, sess: &mut Session, x: Var, sub: Var, ln: &LayerNormParams) -> Result<Var> {
        let training = sess.training();
        let sub = sess
            .tape
            .dropout(sub, self.config.residual_dropout, &mut sess.rng, training)?;
        let sum = sess.tape.add(x, sub)?;
        ln.forward(sess, sum, self.config.layer_norm_eps)
    }

    /// One encoder block. Post-norm: `LN(x + MHA(x))`, then
    /// `LN(· + FFN(·))`; the tagging head, if any, reads the block output.
    pub fn encoder_layer(&self, sess: &mut Session, layer: &EncoderLayer, x: Var) -> Result<(Var, Option<Var>)> {
        self.encoder_layer_traced(sess, layer, x).map(|(y, aux, _)| (y, aux))
    }

    pub fn encoder_layer_traced(
        &self,
        sess: &mut Session,
        layer: &EncoderLayer,
        x: Var,
    ) -> Result<(Var, Option<Var>, AttentionTrace)> {
        let (a, trace) = multi_head_forward_traced(sess, &layer.mha, x, None, None, false)?;
        let h = self.residual(sess, x, a, &layer.ln_attn)?;
        let f = layer.ffn.forward(sess, h, self.config.dropout)?;
        let y = self.residual(sess, h, f, &layer.ln_ffn)?;
        let aux = match &layer.aux {
            Some((_, head)) => Some(head.forward(sess, y)?),
            None => None,
        };
        Ok((y, aux, trace))
    }

    /// Base encoder 1 (POS) → base encoder 2 (NER) → standard encoders.
    pub fn encode(&self, sess: &mut Session, src: &[Vec<usize>]) -> Result<EncoderOutput> {
        let mut x = self.embed(sess, self.src_embed, src)?;
        let mut out = EncoderOutput {
            memory: x,
            pos_logits: None,
            ner_logits: None,
        };
        for layer in &self.encoders {
            let (y, aux) = self.encoder_layer(sess, layer, x)?;
            match (&layer.aux, aux) {
                (Some((AuxTask::Pos, _)), Some(l)) => out.pos_logits = Some(l),
                (Some((AuxTask::Ner, _)), Some(l)) => out.ner_logits = Some(l),
                _ => {}
            }
            x = y;
        }
        out.memory = x;
        Ok(out)
    }

    /// Masked hybrid self-attention → encoder-decoder attention → FFN, each
    /// with residual and post-norm.
    pub fn decoder_layer(&self, sess: &mut Session, layer: &DecoderLayer, y: Var, memory: Var) -> Result<Var> {
        let t = sess.tape.shape(y)[1];
        let mask = AttentionMask::causal(t);
        let a = multi_head_forward(sess, &layer.self_mha, y, None, Some(&mask), true)?;
        let h1 = self.residual(sess, y, a, &layer.ln_self)?;
        let c = multi_head_forward(sess, &layer.cross_mha, h1, Some(memory), None, true)?;
        let h2 = self.residual(sess, h1, c, &layer.ln_cross)?;
        let f = layer.ffn.forward(sess, h2, self.config.dropout)?;
        self.residual(sess, h2, f, &layer.ln_ffn)
    }

    /// Decoder logits `[B, T, V_tgt]` for decoder inputs `tgt_in` (which
    /// start with `bos`).
    pub fn decode(&self, sess: &mut Session, memory: Var, tgt_in: &[Vec<usize>]) -> Result<Var> {
        if sess.tape.shape(memory)[0] != tgt_in.len() {
            return Err(Error::shape(format!(
                "memory batch {} for {} target sequences",
                sess.tape.shape(memory)[0],
                tgt_in.len()
            )));
        }
        let mut y = self.embed(sess, self.tgt_embed, tgt_in)?;
        for layer in &self.decoders {
            y = self.decoder_layer(sess, layer, y, memory)?;
        }
        self.out_proj.forward(sess, y)
    }

    /// Teacher-forced pass over a batch of equal-length pairs.
    pub fn forward_train(&self, sess: &mut Session, batch: &[TaggedPair]) -> Result<TrainOutputs> {
        if batch.is_empty() {
            return Err(Error::data("empty batch"));
        }
        for (i, p) in batch.iter().enumerate() {
            if p.pos_tags.len() != p.src.len() || p.ner_tags.len() != p.src.len() {
                return Err(Error::data(format!(
                    "pair {i}: {} source tokens but {} POS / {} NER tags",
                    p.src.len(),
                    p.pos_tags.len(),
                    p.ner_tags.len()
                )));
            }
        }
        let src: Vec<Vec<usize>> = batch.iter().map(|p| p.src.clone()).collect();
        let enc = self.encode(sess, &src)?;
        let tgt_in: Vec<Vec<usize>> = batch
            .iter()
            .map(|p| std::iter::once(BOS).chain(p.tgt.iter().copied()).collect())
            .collect();
        let logits = self.decode(sess, enc.memory, &tgt_in)?;
        Ok(TrainOutputs {
            translation_logits: logits,
            pos_logits: enc.pos_logits,
            ner_logits: enc.ner_logits,
            translation_targets: batch
                .iter()
                .flat_map(|p| p.tgt.iter().copied().chain(std::iter::once(EOS)))
                .collect(),
            pos_targets: batch.iter().flat_map(|p| p.pos_tags.iter().copied()).collect(),
            ner_targets: batch.iter().flat_map(|p| p.ner_tags.iter().copied()).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            h: 2,
            n_blocks: 3,
            kernel_sizes: vec![3, 3, 5],
            dilations: vec![1, 2, 1],
            vocab_src: 9,
            vocab_tgt: 7,
            n_pos_tags: 4,
            n_ner_tags: 3,
            max_len: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn positions_start_with_alternating_zero_one() {
        let pe = sinusoidal_positions(4, 6).unwrap();
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(sinusoidal_positions(3, 5).is_err());
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        for cfg in [
            tiny(),
            ModelConfig {
                cross_conv: false,
                ..tiny()
            },
            ModelConfig {
                aux_heads: false,
                hybrid_standard_encoders: false,
                ..tiny()
            },
        ] {
            let m = Model::new(cfg.clone()).unwrap();
            assert_eq!(m.store.numel(), cfg.param_count());
        }
    }

    #[test]
    fn three_blocks_give_one_standard_encoder() {
        let m = Model::new(tiny()).unwrap();
        assert_eq!(m.encoders.len(), 3);
        assert!(matches!(m.encoders[0].aux, Some((AuxTask::Pos, _))));
        assert!(matches!(m.encoders[1].aux, Some((AuxTask::Ner, _))));
        assert!(m.encoders[2].aux.is_none());
    }

    #[test]
    fn rejects_too_few_blocks_and_overlong_input() {
        let cfg = ModelConfig {
            n_blocks: 2,
            kernel_sizes: vec![3, 3],
            dilations: vec![1, 1],
            ..tiny()
        };
        assert!(matches!(Model::new(cfg), Err(Error::Config(_))));
        let m = Model::new(tiny()).unwrap();
        let mut sess = Session::inference(&m.store);
        assert!(m.encode(&mut sess, &[vec![4; 9]]).is_err());
    }

    #[test]
    fn mismatched_tags_are_data_errors() {
        let m = Model::new(tiny()).unwrap();
        let mut sess = Session::inference(&m.store);
        let pair = TaggedPair {
            src: vec![4, 5],
            tgt: vec![4],
            pos_tags: vec![0],
            ner_tags: vec![0, 0],
        };
        assert!(matches!(m.forward_train(&mut sess, &[pair]), Err(Error::Data(_))));
    }
}
