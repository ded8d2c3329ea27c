use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{read_tensor_file, write_tensor_file, Tensor, TensorFile};

const M_PREFIX: &str = "adam.m/";
const V_PREFIX: &str = "adam.v/";

/// Parameters plus optional Adam moments at an optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub params: Vec<(String, Tensor)>,
    /// Empty, or one entry per parameter with the same name and shape.
    pub m: Vec<(String, Tensor)>,
    pub v: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn validate(&self) -> Result<()> {
        if self.m.is_empty() && self.v.is_empty() {
            return Ok(());
        }
        for moments in [&self.m, &self.v] {
            if moments.len() != self.params.len() {
                return Err(Error::data(format!(
                    "{} moment tensors for {} parameters",
                    moments.len(),
                    self.params.len()
                )));
            }
            for ((pn, p), (mn, m)) in self.params.iter().zip(moments) {
                if pn != mn || p.shape() != m.shape() {
                    return Err(Error::data(format!(
                        "moment {mn} {:?} does not match parameter {pn} {:?}",
                        m.shape(),
                        p.shape()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut records = self.params.clone();
        for (prefix, list) in [(M_PREFIX, &self.m), (V_PREFIX, &self.v)] {
            records.extend(list.iter().map(|(n, t)| (format!("{prefix}{n}"), t.clone())));
        }
        write_tensor_file(
            path,
            &TensorFile {
                step: self.step,
                records,
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = read_tensor_file(path)?;
        let mut ck = Checkpoint {
            step: file.step,
            params: Vec::new(),
            m: Vec::new(),
            v: Vec::new(),
        };
        for (name, t) in file.records {
            if let Some(n) = name.strip_prefix(M_PREFIX) {
                ck.m.push((n.to_string(), t));
            } else if let Some(n) = name.strip_prefix(V_PREFIX) {
                ck.v.push((n.to_string(), t));
            } else {
                ck.params.push((name, t));
            }
        }
        ck.validate().map_err(|e| Error::Format {
            path: path.into(),
            msg: e.to_string(),
        })?;
        Ok(ck)
    }
}

/// Elementwise mean of the parameters. Moments are dropped and the step is
/// the largest input step. Each element is summed in sorted order, so the
/// result does not depend on the order of `checkpoints`.
pub fn average_checkpoints(checkpoints: &[Checkpoint]) -> Result<Checkpoint> {
    let first = checkpoints
        .first()
        .ok_or_else(|| Error::data("no checkpoints to average"))?;
    let lookups: Vec<HashMap<&str, &Tensor>> = checkpoints
        .iter()
        .map(|c| c.params.iter().map(|(n, t)| (n.as_str(), t)).collect())
        .collect();
    for (k, (c, table)) in checkpoints.iter().zip(&lookups).enumerate() {
        if c.params.len() != first.params.len() {
            return Err(Error::data(format!(
                "checkpoint {k} has {} parameters, checkpoint 0 has {}",
                c.params.len(),
                first.params.len()
            )));
        }
        for (name, t) in &first.params {
            match table.get(name.as_str()) {
                None => return Err(Error::data(format!("checkpoint {k} lacks parameter {name}"))),
                Some(o) if o.shape() != t.shape() => {
                    return Err(Error::data(format!(
                        "parameter {name}: shape {:?} in checkpoint {k}, {:?} in checkpoint 0",
                        o.shape(),
                        t.shape()
                    )))
                }
                Some(_) => {}
            }
        }
    }
    let n = checkpoints.len() as f64;
    let mut column = Vec::with_capacity(checkpoints.len());
    let params = first
        .params
        .iter()
        .map(|(name, t)| {
            let sources: Vec<&Tensor> = lookups.iter().map(|l| l[name.as_str()]).collect();
            let data = (0..t.numel())
                .map(|i| {
                    column.clear();
                    column.extend(sources.iter().map(|s| s.data()[i]));
                    column.sort_by(f64::total_cmp);
                    column.iter().sum::<f64>() / n
                })
                .collect();
            Ok((name.clone(), Tensor::new(t.shape(), data)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Checkpoint {
        step: checkpoints.iter().map(|c| c.step).max().unwrap_or(0),
        params,
        m: Vec::new(),
        v: Vec::new(),
    })
}
