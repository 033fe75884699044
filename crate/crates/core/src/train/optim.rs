use crate::diff::ParamStore;
use crate::error::{Error, Result};

/// Scale `grads` in place so their joint L2 norm is at most `max_norm`.
/// Entries whose mask is `false` are ignored. Returns the norm before
/// clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], mask: &[bool], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .flat_map(|(g, _)| g.iter())
        .map(|v| v * v)
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let c = max_norm / norm;
        for (g, _) in grads.iter_mut().zip(mask).filter(|(_, &m)| m) {
            g.iter_mut().for_each(|v| *v *= c);
        }
    }
    norm
}

/// Adaptive-moment optimizer with per-parameter step counts, so a tensor
/// unfrozen late gets full bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: Vec<u64>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.get(id).numel()]).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: vec![0; store.len()],
        }
    }

    /// Apply one update. `grads[k]` belongs to the parameter with index `k`;
    /// parameters with `mask[k] == false` are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>], mask: &[bool]) -> Result<()> {
        if grads.len() != store.len() || mask.len() != store.len() {
            return Err(Error::dim("optimizer parameter count", store.len(), grads.len().min(mask.len())));
        }
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            if !mask[k] {
                continue;
            }
            let g = &grads[k];
            let p = store.get_mut(id).data_mut();
            if g.len() != p.len() {
                return Err(Error::dim(format!("gradient of parameter {k}"), p.len(), g.len()));
            }
            self.t[k] += 1;
            let bc1 = 1.0 - self.beta1.powi(self.t[k] as i32);
            let bc2 = 1.0 - self.beta2.powi(self.t[k] as i32);
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
