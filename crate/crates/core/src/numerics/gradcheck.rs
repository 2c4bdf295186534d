//! Central finite-difference oracle for checking tape gradients.

use super::{Graph, Tensor, Var};
use crate::{Error, Result};

/// Outcome of [`check_gradients`]: norm-wise relative error per input,
/// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub per_input: Vec<f64>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.per_input.iter().copied().fold(0.0, f64::max)
    }
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).data()[0])
}

/// Compares the reverse-mode gradient of the scalar `f(inputs)` against central
/// differences with step `h`. The numeric side re-runs the forward pass only.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return Err(Error::Shape {
            op: "check_gradients (scalar output required)",
            lhs: g.value(out).shape().to_vec(),
            rhs: vec![1],
        });
    }
    let grads = g.backward(out)?;

    let mut per_input = Vec::with_capacity(inputs.len());
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; input.len()]);
        let mut numeric = vec![0.0; input.len()];
        for j in 0..input.len() {
            let orig = input.data()[j];
            probe[i].data_mut()[j] = orig + h;
            let plus = evaluate(&f, &probe)?;
            probe[i].data_mut()[j] = orig - h;
            let minus = evaluate(&f, &probe)?;
            probe[i].data_mut()[j] = orig;
            numeric[j] = (plus - minus) / (2.0 * h);
        }
        let diff = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n) * (a - n))
            .sum::<f64>()
            .sqrt();
        let norm_a = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let norm_n = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let denom = norm_a.max(norm_n);
        per_input.push(if denom < 1e-12 { diff } else { diff / denom });
    }
    Ok(GradCheck { per_input })
}
