use crate::engine::{EngineError, Graph, Tensor, Var};

/// Squared gap between the mean score of each group,
/// `(mean(s | z=0) - mean(s | z=1))^2`, as a differentiable scalar.
///
/// Returns `None` when the batch holds only one group; callers count those
/// batches.
pub fn parity_penalty(g: &mut Graph, scores: Var, groups: &[u8]) -> Result<Option<Var>, EngineError> {
    let shape = g.shape(scores).to_vec();
    let n: usize = shape.iter().product();
    if n != groups.len() {
        return Err(EngineError::ShapeMismatch { op: "parity_penalty", lhs: shape, rhs: vec![groups.len()] });
    }
    let n0 = groups.iter().filter(|&&z| z == 0).count();
    let n1 = n - n0;
    if n0 == 0 || n1 == 0 {
        return Ok(None);
    }
    // signed averaging weights: +1/n0 on z=0 rows, -1/n1 on z=1 rows
    let weights: Vec<f64> = groups.iter().map(|&z| if z == 0 { 1.0 / n0 as f64 } else { -1.0 / n1 as f64 }).collect();
    let w = g.constant(Tensor::new(shape, weights)?);
    let weighted = g.mul(scores, w)?;
    let gap = g.sum_all(weighted)?;
    Ok(Some(g.mul(gap, gap)?))
}
