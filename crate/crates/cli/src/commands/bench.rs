use std::fmt::Write as _;

use ctxformer::bench::{run_bench, scaling_checks, BenchRow, LayerRegistry, ScalingCheck};
use ctxformer::Result;

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub checks: Vec<ScalingCheck>,
}

impl BenchReport {
    pub fn render(&self) -> String {
        let mut s = String::from("layer\tn\td\tf\tpredicted_ops\tmeasured_ops\tseconds\tpath_length\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{}",
                r.layer, r.n, r.d, r.f, r.estimate.per_layer_ops, r.measured_ops, r.seconds, r.estimate.max_path_length
            );
        }
        s.push_str("\nlayer\tvary\tfrom\tto\tpredicted_ratio\top_ratio\ttime_ratio\tops\ttime\n");
        let flag = |ok: bool| if ok { "ok" } else { "DEVIATES" };
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{:.3}\t{:.3}\t{:.3}\t{}\t{}",
                c.layer,
                c.variable,
                c.from,
                c.to,
                c.predicted_ratio,
                c.op_ratio,
                c.time_ratio,
                flag(c.ops_within),
                flag(c.time_within)
            );
        }
        s
    }
}

pub fn cmd_bench(ns: &[usize], ds: &[usize], fs: &[usize], repeats: usize, tolerance: f64) -> Result<BenchReport> {
    let rows = run_bench(&LayerRegistry::default(), ns, ds, fs, repeats, 7)?;
    let checks = scaling_checks(&rows, tolerance);
    Ok(BenchReport { rows, checks })
}
