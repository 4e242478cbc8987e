//! Central-difference gradient checking harness.
//!
//! Closures build a scalar loss from leaf tensors; the harness compares the
//! engine's reverse-mode gradients against central differences in double
//! precision and reports the worst relative error over sampled coordinates.

use super::{Graph, Tensor4, Var};

/// Default number of coordinates probed per input tensor.
const DEFAULT_SAMPLE_CAP: usize = 80;

/// Relative-error floor: coordinates where both gradients are below this are
/// compared against it instead of each other.
const REL_FLOOR: f64 = 1e-8;

/// Max over sampled coordinates of
/// `|analytic − central_difference| / max(|analytic|, |cd|, 1e-8)`.
pub fn finite_diff_check<F>(f: F, inputs: &[Tensor4<f64>], eps: f64) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    finite_diff_check_sampled(f, inputs, eps, DEFAULT_SAMPLE_CAP)
}

pub fn finite_diff_check_sampled<F>(
    f: F,
    inputs: &[Tensor4<f64>],
    eps: f64,
    max_coords_per_input: usize,
) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    // Analytic gradients.
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = f(&mut g, &vars);
    g.backward(loss).expect("finite_diff_check: backward failed");
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| {
            g.grad(v)
                .map(|t| t.data().to_vec())
                .unwrap_or_else(|| vec![0.0; g.value(v).shape().len()])
        })
        .collect();

    let eval = |perturbed: &[Tensor4<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let loss = f(&mut g, &vars);
        g.value(loss).scalar_value()
    };

    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let len = input.shape().len();
        let coords: Vec<usize> = if len <= max_coords_per_input {
            (0..len).collect()
        } else {
            let step = len / max_coords_per_input;
            (0..max_coords_per_input).map(|k| k * step).collect()
        };
        for j in coords {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += eps;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= eps;
            let cd = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let an = analytic[i][j];
            let denom = an.abs().max(cd.abs()).max(REL_FLOOR);
            worst = worst.max((an - cd).abs() / denom);
        }
    }
    worst
}
