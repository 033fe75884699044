use super::graph::{Graph, Var};
use super::rng::RngStream;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Relaxed categorical sample `softmax((logits + g) / temperature)` over the
/// trailing axis, with `g` i.i.d. Gumbel(0, 1).
///
/// `noise = None` freezes the noise at zero. With `hard`, the forward value
/// is the one-hot argmax of the relaxed sample and gradients flow through the
/// relaxed sample (straight-through).
pub fn gumbel_softmax(
    g: &mut Graph,
    logits: Var,
    temperature: f64,
    noise: Option<&mut RngStream>,
    hard: bool,
) -> Result<Var> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Contract(format!(
            "gumbel_softmax temperature must be positive, got {temperature}"
        )));
    }
    let classes = g.value(logits).last_dim();
    if classes < 2 {
        return Err(Error::Contract(format!(
            "gumbel_softmax needs at least 2 classes, got {classes}"
        )));
    }
    let perturbed = match noise {
        Some(rng) => {
            let shape = g.shape(logits).to_vec();
            let n = g.value(logits).numel();
            let draws = (0..n).map(|_| rng.gumbel()).collect();
            let noise = g.constant(Tensor::from_parts(shape, draws));
            g.add(logits, noise)
        }
        None => logits,
    };
    let scaled = g.scale(perturbed, 1.0 / temperature);
    let soft = g.softmax(scaled);
    Ok(if hard { g.straight_through(soft) } else { soft })
}
