use crate::attention::MultiHeadParams;
use crate::error::{Error, Result};

/// Architecture and regularisation hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    /// Total heads per attention block; half scaled dot-product, half
    /// word-context.
    pub h: usize,
    /// Blocks per stack. The encoder's first two are the tagging base
    /// encoders.
    pub n_blocks: usize,
    /// Kernel size of the word-context heads in each block.
    pub kernel_sizes: Vec<usize>,
    /// Convolution dilation in each block.
    pub dilations: Vec<usize>,
    pub vocab_src: usize,
    pub vocab_tgt: usize,
    pub n_pos_tags: usize,
    pub n_ner_tags: usize,
    /// Dropout on the feed-forward hidden activation.
    pub dropout: f64,
    /// Dropout on every sub-layer output before the residual sum.
    pub residual_dropout: f64,
    pub embed_dropout: f64,
    /// DropConnect on the normalised convolution kernels.
    pub dropconnect: f64,
    pub max_len: usize,
    /// Feed-forward inner width as a multiple of `d_model`.
    pub ffn_mult: usize,
    /// Hybrid heads in the standard encoder blocks (otherwise self heads only).
    pub hybrid_standard_encoders: bool,
    /// Word-context heads in encoder-decoder attention.
    pub cross_conv: bool,
    /// POS/NER heads on the base encoders.
    pub aux_heads: bool,
    pub layer_norm_eps: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            h: 8,
            n_blocks: 3,
            kernel_sizes: vec![3, 5, 7],
            dilations: vec![1, 1, 1],
            vocab_src: 64,
            vocab_tgt: 64,
            n_pos_tags: 6,
            n_ner_tags: 3,
            dropout: 0.0,
            residual_dropout: 0.0,
            embed_dropout: 0.0,
            dropconnect: 0.0,
            max_len: 32,
            ffn_mult: 4,
            hybrid_standard_encoders: true,
            cross_conv: true,
            aux_heads: true,
            layer_norm_eps: 1e-5,
            init_seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn d_ff(&self) -> usize {
        self.ffn_mult * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.n_blocks < 3 {
            return bad(format!(
                "n_blocks must be at least 3 (two base encoders plus one standard), got {}",
                self.n_blocks
            ));
        }
        if self.kernel_sizes.len() != self.n_blocks {
            return bad(format!(
                "{} kernel sizes for {} blocks",
                self.kernel_sizes.len(),
                self.n_blocks
            ));
        }
        if self.dilations.len() != self.n_blocks {
            return bad(format!(
                "{} dilations for {} blocks",
                self.dilations.len(),
                self.n_blocks
            ));
        }
        if self.h == 0 || !self.h.is_multiple_of(2) {
            return bad(format!("h must be even and positive, got {}", self.h));
        }
        if self.d_model == 0 || !self.d_model.is_multiple_of(self.h) {
            return bad(format!("d_model {} not divisible by h {}", self.d_model, self.h));
        }
        if !self.d_model.is_multiple_of(2) {
            return bad("d_model must be even for sinusoidal positions".into());
        }
        if let Some(f) = self.kernel_sizes.iter().find(|&&f| f == 0 || f % 2 == 0) {
            return bad(format!("kernel sizes must be odd and positive, got {f}"));
        }
        if self.dilations.contains(&0) {
            return bad("dilations must be at least 1".into());
        }
        for (name, p) in [
            ("dropout", self.dropout),
            ("residual_dropout", self.residual_dropout),
            ("embed_dropout", self.embed_dropout),
            ("dropconnect", self.dropconnect),
        ] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} = {p} outside [0, 1)"));
            }
        }
        if self.vocab_src < 5 || self.vocab_tgt < 5 {
            return bad("vocabularies need the four reserved ids plus at least one token".into());
        }
        if self.aux_heads && (self.n_pos_tags == 0 || self.n_ner_tags == 0) {
            return bad("tag inventories must be non-empty".into());
        }
        if self.max_len == 0 || self.ffn_mult == 0 || self.layer_norm_eps <= 0.0 {
            return bad("max_len, ffn_mult and layer_norm_eps must be positive".into());
        }
        Ok(())
    }

    /// Closed-form parameter count:
    ///
    /// ```text
    /// embeddings    (V_src + V_tgt)·d
    /// per attention hybrid: (H/2)·3·d·d_h + (H/2)·(d·d_h + F·d_h + d_h² + d_h) + d²
    ///               self-only: 4·d²
    /// per FFN       2·d·d_ff + d_ff + d
    /// per LayerNorm 2·d            (2 per encoder block, 3 per decoder block)
    /// aux heads     (d + 1)·(n_pos + n_ner)
    /// output        (d + 1)·V_tgt
    /// ```
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let ffn = 2 * d * self.d_ff() + self.d_ff() + d;
        let hybrid = |f: usize| MultiHeadParams::hybrid_param_count(d, self.h, f);
        let self_only = MultiHeadParams::self_only_param_count(d);
        let mut total = (self.vocab_src + self.vocab_tgt) * d;
        for (i, &f) in self.kernel_sizes.iter().enumerate() {
            let enc_attn = if i < 2 || self.hybrid_standard_encoders {
                hybrid(f)
            } else {
                self_only
            };
            total += enc_attn + ffn + 2 * 2 * d;
            let cross = if self.cross_conv { hybrid(f) } else { self_only };
            total += hybrid(f) + cross + ffn + 3 * 2 * d;
        }
        if self.aux_heads {
            total += (d + 1) * (self.n_pos_tags + self.n_ner_tags);
        }
        total + (d + 1) * self.vocab_tgt
    }
}
