//! Central finite-difference gradients, used as an oracle for the tape.

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn numerical_gradient(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Central difference of `f` along coordinate `i` only.
pub fn partial(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, i: usize, h: f64) -> f64 {
    let mut probe = x.clone();
    let orig = probe.data()[i];
    probe.data_mut()[i] = orig + h;
    let up = f(&probe);
    probe.data_mut()[i] = orig - h;
    let down = f(&probe);
    (up - down) / (2.0 * h)
}

/// `|a - b| / max(|a|, |b|, floor)`; the floor keeps near-zero entries from
/// dominating.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest [`relative_error`] over two equally shaped tensors.
pub fn max_relative_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| relative_error(x, y, floor))
        .fold(0.0, f64::max)
}

/// Largest relative error between reverse-mode and central-difference
/// gradients of the scalar `build(tape, inputs)` over every input. The
/// floor is `1e-3` times the largest numerical gradient component.
pub fn tape_gradient_error(
    inputs: &[Tensor],
    h: f64,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let root = build(&mut tape, &vars)?;
    let grads = tape.backward(root)?;
    let mut worst = 0.0f64;
    for (i, x) in inputs.iter().enumerate() {
        let f = |probe: &Tensor| {
            let mut t = Tape::new();
            let vs: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, v)| t.param(if j == i { probe.clone() } else { v.clone() }))
                .collect();
            match build(&mut t, &vs) {
                Ok(r) => t.value(r).item(),
                Err(_) => f64::NAN,
            }
        };
        let numeric = numerical_gradient(f, x, h);
        let analytic = grads.get_or_zeros(vars[i], x.shape());
        let scale = numeric.data().iter().fold(1e-3f64, |m, v| m.max(v.abs()));
        worst = worst.max(max_relative_error(&analytic, &numeric, 1e-3 * scale));
    }
    Ok(worst)
}
