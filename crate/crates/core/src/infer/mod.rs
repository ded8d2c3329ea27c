//! Decoding strategies, translation metrics and the representation probe.

mod bleu;
mod decode;
mod metrics;
mod probe;
mod scorer;

pub use bleu::{bleu, BleuStats};
pub use decode::{
    length_penalty, BeamSearch, DecodeConfig, DecodeOutcome, DecodeStrategy, DecoderRegistry, Exhaustive, Greedy,
    Hypothesis, StepScorer,
};
pub use metrics::{exact_match, teacher_forced_report, TeacherForcedReport};
pub use probe::{cosine_probe, cosine_similarity, ProbeLayer};
pub use scorer::{translate, ModelScorer};
