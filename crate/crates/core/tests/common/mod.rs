//! Shared oracles for the integration tests.

#![allow(dead_code)]

use asrf::losses::{total_loss, LossConfig, LossTargets};
use asrf::{AsrfModel, Matrix};

/// Worst relative error between analytic and central-difference gradients
/// of the total loss over every model parameter.
///
/// Relative error is `|a - n| / max(|a|, |n|, floor)`; the floor keeps
/// parameters with near-zero gradient from dividing roundoff by zero.
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn gradcheck(
    model: &mut AsrfModel<f64>,
    features: &Matrix<f64>,
    targets: &LossTargets<'_, f64>,
    cfg: &LossConfig,
    h: f64,
    floor: f64,
) -> GradCheck {
    model.zero_grad();
    let out = model.forward(features, None).unwrap();
    let (_, grads) = total_loss(&out, targets, cfg).unwrap();
    model.backward(&grads).unwrap();
    let analytic = model.params().flat_grads();

    let names: Vec<(String, usize)> = model
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.len()))
        .collect();
    let loss_at = |m: &AsrfModel<f64>| {
        total_loss(&m.predict(features).unwrap(), targets, cfg)
            .unwrap()
            .0
            .total
    };

    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_param: String::new(),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut flat = 0;
    for (name, len) in names {
        for k in 0..len {
            let i = flat + k;
            let x = model.params().flat_value(i);
            model.params_mut().set_flat_value(i, x + h);
            let up = loss_at(model);
            model.params_mut().set_flat_value(i, x - h);
            let dn = loss_at(model);
            model.params_mut().set_flat_value(i, x);
            let numeric = (up - dn) / (2.0 * h);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if rel > worst.max_rel_error {
                worst.max_rel_error = rel;
                worst.worst_param = format!("{name}[{k}]");
                worst.analytic = a;
                worst.numeric = numeric;
            }
            worst.checked += 1;
        }
        flat += len;
    }
    worst
}

/// Brute-force recursive Levenshtein distance.
pub fn naive_levenshtein(a: &[usize], b: &[usize]) -> usize {
    match (a, b) {
        ([], _) => b.len(),
        (_, []) => a.len(),
        ([x, ra @ ..], [y, rb @ ..]) => {
            let sub = naive_levenshtein(ra, rb) + usize::from(x != y);
            sub.min(naive_levenshtein(ra, b) + 1)
                .min(naive_levenshtein(a, rb) + 1)
        }
    }
}
