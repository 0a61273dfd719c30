use super::{Graph, Tensor, Var};
use crate::error::Result;
use crate::rng::Pcg32;

/// Compares reverse-mode gradients of `f` with central finite differences
/// over every coordinate of every input. Returns the largest relative error,
/// using `max(|a|, |b|, 1e-8)` as the denominator.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    check(f, inputs, &[eps], |t: &Tensor<f64>| (0..t.len()).collect()).map(worst)
}

/// Like [`grad_check`], but probes at most `per_input` randomly chosen
/// coordinates of each input (all of them when the input is smaller).
pub fn grad_check_sampled<F>(
    f: F,
    inputs: &[Tensor<f64>],
    eps: f64,
    per_input: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    grad_check_steps(f, inputs, &[eps], Some(per_input), seed).map(worst)
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).item())
}

/// Outcome for one checked coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordCheck {
    /// Which input tensor.
    pub input: usize,
    /// Flat index inside that tensor.
    pub index: usize,
    pub analytic: f64,
    /// Central difference at the step that agreed best.
    pub numeric: f64,
    pub step: f64,
    pub rel_error: f64,
}

/// Per-coordinate comparison over several step sizes, keeping for each
/// coordinate the step with the smallest relative error. A nonsmooth point
/// within one step of the input spoils only the wider steps, while a wrong
/// analytic gradient disagrees at every step. Samples at most `per_input`
/// coordinates of each input when given.
pub fn grad_check_steps<F>(
    f: F,
    inputs: &[Tensor<f64>],
    steps: &[f64],
    per_input: Option<usize>,
    seed: u64,
) -> Result<Vec<CoordCheck>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = Pcg32::new(seed);
    check(f, inputs, steps, |t: &Tensor<f64>| match per_input {
        Some(k) if t.len() > k => {
            let mut idx: Vec<usize> = (0..t.len()).collect();
            rng.shuffle(&mut idx);
            idx.truncate(k);
            idx.sort_unstable();
            idx
        }
        _ => (0..t.len()).collect(),
    })
}

fn worst(checks: Vec<CoordCheck>) -> f64 {
    checks.iter().map(|c| c.rel_error).fold(0.0, f64::max)
}

fn check<F, S>(f: F, inputs: &[Tensor<f64>], steps: &[f64], mut select: S) -> Result<Vec<CoordCheck>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    S: FnMut(&Tensor<f64>) -> Vec<usize>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let mut out = Vec::new();
    let mut probe = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("every input is a trainable leaf");
        for j in select(&inputs[i]) {
            let original = inputs[i].data()[j];
            let a = analytic.data()[j];
            let mut best: Option<CoordCheck> = None;
            for &eps in steps {
                probe[i] = with_coord(&inputs[i], j, original + eps);
                let plus = evaluate(&f, &probe)?;
                probe[i] = with_coord(&inputs[i], j, original - eps);
                let minus = evaluate(&f, &probe)?;
                let numeric = (plus - minus) / (2.0 * eps);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                if best.is_none_or(|b| rel < b.rel_error) {
                    best = Some(CoordCheck { input: i, index: j, analytic: a, numeric, step: eps, rel_error: rel });
                }
            }
            probe[i] = inputs[i].clone();
            out.extend(best);
        }
    }
    Ok(out)
}

fn with_coord(t: &Tensor<f64>, j: usize, v: f64) -> Tensor<f64> {
    let mut data = t.data().to_vec();
    data[j] = v;
    Tensor::from_parts(t.shape().to_vec(), data)
}
