use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::Result;

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GradCheckReport {
    pub op: String,
    /// Relative error per input, in input order: `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞)`.
    pub max_rel_err: Vec<f64>,
    /// Largest coordinate-wise `|a − n| / max(|a|, |n|, 1e-8)` per input.
    /// Diagnostic only: coordinates whose gradient is orders of magnitude
    /// below the tensor's scale are dominated by difference noise.
    pub max_elem_rel_err: Vec<f64>,
    /// `(analytic, numeric)` at the coordinate with the largest absolute gap.
    pub worst_pair: Vec<(f64, f64)>,
    pub h: f64,
    pub tol: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_err.iter().copied().fold(0.0, f64::max)
    }
}

/// Checks `f` (any output shape) by scalarizing it against fixed random
/// weights and comparing `(f(x+h) − f(x−h)) / 2h` per input coordinate with
/// the tape gradient.
pub fn grad_check<F>(op: &str, f: F, inputs: &[Tensor<f64>], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut weights = None;
    let mut eval = |inputs: &[Tensor<f64>], with_grad: bool| -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut tape = if with_grad { Tape::new() } else { Tape::no_grad() };
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let w = weights
            .get_or_insert_with(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
                Tensor::uniform(tape.shape(out), -1.0, 1.0, &mut rng)
            })
            .clone();
        let s = tape.weighted_sum(out, w)?;
        let value = tape.value(s).data()[0];
        if !with_grad {
            return Ok((value, Vec::new()));
        }
        let mut grads = tape.backward(s)?;
        let g = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros_like(t)))
            .collect();
        Ok((value, g))
    };

    let (_, analytic) = eval(inputs, true)?;
    let (mut worst, mut elem, mut pairs) = (Vec::new(), Vec::new(), Vec::new());
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let (mut gap, mut scale, mut elem_max) = (0.0f64, 0.0f64, 0.0f64);
        let mut pair = (0.0, 0.0);
        for j in 0..input.len() {
            let orig = input.data()[j];
            probe[i].data_mut()[j] = orig + h;
            let (plus, _) = eval(&probe, false)?;
            probe[i].data_mut()[j] = orig - h;
            let (minus, _) = eval(&probe, false)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[i].data()[j];
            let d = (a - numeric).abs();
            if d > gap {
                gap = d;
                pair = (a, numeric);
            }
            scale = scale.max(a.abs()).max(numeric.abs());
            elem_max = elem_max.max(d / a.abs().max(numeric.abs()).max(1e-8));
        }
        worst.push(if scale > 0.0 { gap / scale } else { 0.0 });
        elem.push(elem_max);
        pairs.push(pair);
    }
    let pass = worst.iter().all(|&e| e < tol);
    Ok(GradCheckReport { op: op.to_string(), max_rel_err: worst, max_elem_rel_err: elem, worst_pair: pairs, h, tol, pass })
}
