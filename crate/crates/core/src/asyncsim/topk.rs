use crate::error::{Error, Result};
use crate::params::ParamVector;

/// Top-k sparsification with a local accumulation buffer.
///
/// `accumulated = g + residual`; the `⌈ratio·dim⌉` largest-magnitude
/// coordinates (lowest index wins ties) are sent, the rest stay in the
/// buffer. `sent + new_residual == accumulated` holds exactly because each
/// coordinate lands in exactly one of the two outputs.
pub fn select_topk(
    g: &ParamVector,
    residual: &ParamVector,
    ratio: f64,
) -> Result<(ParamVector, ParamVector)> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::domain("sim.topk_ratio", "must lie in (0, 1]"));
    }
    let accumulated = g.add(residual)?;
    let dim = accumulated.len();
    let keep = ((ratio * dim as f64).ceil() as usize).min(dim);

    let mut order: Vec<usize> = (0..dim).collect();
    let vals = accumulated.values();
    order.sort_by(|&a, &b| vals[b].abs().total_cmp(&vals[a].abs()).then(a.cmp(&b)));

    let mut sent = accumulated.zeros_like();
    let mut rest = accumulated.clone();
    for &i in &order[..keep] {
        sent.values_mut()[i] = vals[i];
        rest.values_mut()[i] = 0.0;
    }
    Ok((sent, rest))
}
