use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

/// `d^-0.5 · min(step^-0.5, step · warmup^-1.5)`.
pub fn lr_schedule(step: u64, d_model: usize, warmup: u64) -> Result<f64> {
    if step == 0 {
        return Err(Error::config("learning-rate steps are numbered from 1"));
    }
    if warmup == 0 || d_model == 0 {
        return Err(Error::config("warmup and d_model must be positive"));
    }
    let s = step as f64;
    Ok((d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * (warmup as f64).powf(-1.5)))
}

/// First and second moments, one pair per parameter in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// Updates applied so far.
    pub step: u64,
}

impl AdamState {
    pub fn zeros(store: &ParamStore) -> Self {
        let z: Vec<Tensor> = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        AdamState {
            m: z.clone(),
            v: z,
            step: 0,
        }
    }
}

fn narrow(x: f64) -> f64 {
    f64::from(x as f32)
}

/// One bias-corrected Adam update. Parameters and moments are stored at
/// `f32` precision after the update, matching the checkpoint format, so a
/// run restored from disk continues bit for bit.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::shape(format!(
            "{} gradients and {} moments for {} parameters",
            grads.len(),
            state.m.len(),
            store.len()
        )));
    }
    for (id, g) in store.ids().zip(grads) {
        if g.shape() != store.get(id).shape() {
            return Err(Error::shape(format!(
                "gradient {:?} for parameter {} of shape {:?}",
                g.shape(),
                store.name(id),
                store.get(id).shape()
            )));
        }
        if let Some(i) = g.data().iter().position(|x| !x.is_finite()) {
            return Err(Error::numerical(format!(
                "non-finite gradient {} at element {i} of {} (update {})",
                g.data()[i],
                store.name(id),
                state.step + 1
            )));
        }
    }
    state.step += 1;
    let (b1, b2) = betas;
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (k, (id, g)) in store.ids().zip(grads).enumerate() {
        let p = store.get_mut(id).data_mut();
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g.data()[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g.data()[i] * g.data()[i];
            let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            p[i] = narrow(p[i] - update);
            m[i] = narrow(m[i]);
            v[i] = narrow(v[i]);
        }
    }
    Ok(())
}
