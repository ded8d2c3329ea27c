mod bench;
mod eval;
mod gen;
mod probe;
mod train;
mod translate;

pub use bench::{cmd_bench, BenchReport};
pub use eval::{cmd_eval, EvalReport};
pub use gen::{cmd_gen, split_sizes, GenSummary};
pub use probe::{cmd_probe, ProbeReport};
pub use train::{cmd_train, TrainOptions, TrainReport};
pub use translate::{cmd_translate, translate_lines};
