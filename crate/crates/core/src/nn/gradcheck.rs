//! Central-difference verification of back-propagated gradients.

use super::{Loss, NnError, Sequential, Tensor};

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative discrepancy over every checked element.
    pub max_rel_error: f64,
    /// Parameter name (or `"input"`) where the worst discrepancy occurred.
    pub worst: String,
    pub checked: usize,
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`. The floor keeps
/// elements whose true gradient is ~0 from dominating through rounding.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    const FLOOR: f64 = 1e-6;
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Compares analytic gradients of `loss(net(input))` against central
/// differences with step `eps`, for every trainable parameter element
/// and every input element.
///
/// The network's random stream is rewound before each evaluation so that
/// dropout masks and injected noise are identical across perturbations.
pub fn grad_check<F>(
    net: &mut Sequential<f64>,
    input: &Tensor<f64>,
    training: bool,
    eps: f64,
    loss: F,
) -> Result<GradCheckReport, NnError>
where
    F: Fn(&Tensor<f64>) -> Result<Loss<f64>, NnError>,
{
    let rng = net.rng().clone();
    net.zero_grads();
    let out = net.forward(input, training)?;
    let l = loss(&out)?;
    let input_grad = net
        .backward(&l.grad, true)?
        .expect("input gradient requested");

    let eval = |net: &mut Sequential<f64>, x: &Tensor<f64>| -> Result<f64, NnError> {
        net.set_rng(rng.clone());
        let out = net.forward(x, training)?;
        Ok(loss(&out)?.value)
    };

    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    let names: Vec<(String, usize, bool)> = net
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.value.len(), p.trainable))
        .collect();
    for (pi, (name, len, trainable)) in names.into_iter().enumerate() {
        if !trainable {
            continue;
        }
        let analytic: Vec<f64> = net.params().iter().nth(pi).unwrap().grad.data().to_vec();
        for (i, &a) in analytic.iter().enumerate().take(len) {
            let orig = net.params().iter().nth(pi).unwrap().value.data()[i];
            set_param(net, pi, i, orig + eps);
            let plus = eval(net, input)?;
            set_param(net, pi, i, orig - eps);
            let minus = eval(net, input)?;
            set_param(net, pi, i, orig);
            let numeric = (plus - minus) / (2.0 * eps);
            let e = relative_error(a, numeric);
            checked += 1;
            if e > worst.0 {
                worst = (e, name.clone());
            }
        }
    }
    let mut x = input.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + eps;
        let plus = eval(net, &x)?;
        x.data_mut()[i] = orig - eps;
        let minus = eval(net, &x)?;
        x.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let e = relative_error(input_grad.data()[i], numeric);
        checked += 1;
        if e > worst.0 {
            worst = (e, "input".to_string());
        }
    }
    net.set_rng(rng);
    Ok(GradCheckReport {
        max_rel_error: worst.0,
        worst: worst.1,
        checked,
    })
}

fn set_param(net: &mut Sequential<f64>, pi: usize, i: usize, v: f64) {
    net.params_mut().iter_mut().nth(pi).unwrap().value.data_mut()[i] = v;
}
