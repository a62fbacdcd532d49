//! State-vector kernels for independent four-qubit registers.
//!
//! A batch of `groups` registers is stored as `[groups, 2, 16]`: the real
//! plane followed by the imaginary plane. Basis index bit `3 - q` holds qubit
//! `q`, so qubit 0 is the most significant bit (`|q0 q1 q2 q3>`).

pub const QUBITS: usize = 4;
pub const AMPLITUDES: usize = 1 << QUBITS;
/// Values per register (real and imaginary planes).
pub const REGISTER: usize = 2 * AMPLITUDES;

#[inline]
pub fn qubit_mask(q: usize) -> usize {
    1 << (QUBITS - 1 - q)
}

/// Parameterized gate families of the feature-extraction circuit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RotationKind {
    /// Single-qubit rotation about X.
    X,
    /// Single-qubit rotation about Y.
    Y,
    /// Two-qubit Ising XX coupling.
    Xx,
}

/// Every parameterized gate here has the form `cos(t/2) I + sin(t/2) K`
/// where `K` pairs each basis state with the one obtained by flipping `flip`.
/// For the X-type gates `K = -i P`; for R_Y, `K` is the real antisymmetric
/// generator with `+1` on the `|1>` side.
fn apply_generator(kind: RotationKind, flip: usize, c: f64, s: f64, input: &[f64], out: &mut [f64]) {
    let (re, im) = input.split_at(AMPLITUDES);
    let (ore, oim) = out.split_at_mut(AMPLITUDES);
    for k in 0..AMPLITUDES {
        let p = k ^ flip;
        match kind {
            RotationKind::X | RotationKind::Xx => {
                ore[k] = c * re[k] + s * im[p];
                oim[k] = c * im[k] - s * re[p];
            }
            RotationKind::Y => {
                let sign = if k & flip != 0 { 1.0 } else { -1.0 };
                ore[k] = c * re[k] + sign * s * re[p];
                oim[k] = c * im[k] + sign * s * im[p];
            }
        }
    }
}

fn flip_mask(kind: RotationKind, qubits: &[usize]) -> usize {
    match kind {
        RotationKind::X | RotationKind::Y => qubit_mask(qubits[0]),
        RotationKind::Xx => qubit_mask(qubits[0]) | qubit_mask(qubits[1]),
    }
}

pub fn rotation_forward(kind: RotationKind, qubits: &[usize], angle: f64, state: &[f64]) -> Vec<f64> {
    let flip = flip_mask(kind, qubits);
    let (s, c) = (angle / 2.0).sin_cos();
    let mut out = vec![0.0; state.len()];
    for (src, dst) in state.chunks_exact(REGISTER).zip(out.chunks_exact_mut(REGISTER)) {
        apply_generator(kind, flip, c, s, src, dst);
    }
    out
}

/// Returns `(grad_state, grad_angle)`.
pub fn rotation_backward(
    kind: RotationKind,
    qubits: &[usize],
    angle: f64,
    state: &[f64],
    g: &[f64],
) -> (Vec<f64>, f64) {
    let flip = flip_mask(kind, qubits);
    let (s, c) = (angle / 2.0).sin_cos();
    let mut grad_state = vec![0.0; state.len()];
    let mut scratch = [0.0; REGISTER];
    let mut grad_angle = 0.0;
    for ((src, gsrc), dst) in state
        .chunks_exact(REGISTER)
        .zip(g.chunks_exact(REGISTER))
        .zip(grad_state.chunks_exact_mut(REGISTER))
    {
        // The generator is antisymmetric in the real representation, so the
        // transpose of the gate is the gate at the negated angle.
        apply_generator(kind, flip, c, -s, gsrc, dst);
        apply_generator(kind, flip, -s / 2.0, c / 2.0, src, &mut scratch);
        grad_angle += scratch.iter().zip(gsrc).map(|(a, b)| a * b).sum::<f64>();
    }
    (grad_state, grad_angle)
}

/// Controlled NOT with one closed control (fires on `|1>`), one open control
/// (fires on `|0>`) and a target.
pub fn toffoli_partner(k: usize, closed: usize, open: usize, target: usize) -> usize {
    if k & qubit_mask(closed) != 0 && k & qubit_mask(open) == 0 {
        k ^ qubit_mask(target)
    } else {
        k
    }
}

/// Applies the Toffoli permutation. It is an involution, so the same routine
/// maps upstream gradients back.
pub fn toffoli_apply(closed: usize, open: usize, target: usize, state: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; state.len()];
    for (src, dst) in state.chunks_exact(AMPLITUDES).zip(out.chunks_exact_mut(AMPLITUDES)) {
        for k in 0..AMPLITUDES {
            dst[k] = src[toffoli_partner(k, closed, open, target)];
        }
    }
    out
}

/// Angle embedding: each register starts as `(x) R_Y(x_q)|0>` over its four
/// features. `features` is `[groups, 4]`.
pub fn embed_forward(features: &[f64]) -> Vec<f64> {
    let groups = features.len() / QUBITS;
    let mut out = vec![0.0; groups * REGISTER];
    for (x, reg) in features.chunks_exact(QUBITS).zip(out.chunks_exact_mut(REGISTER)) {
        let cs: Vec<(f64, f64)> = x.iter().map(|v| ((v / 2.0).cos(), (v / 2.0).sin())).collect();
        for k in 0..AMPLITUDES {
            reg[k] = (0..QUBITS)
                .map(|q| if k & qubit_mask(q) != 0 { cs[q].1 } else { cs[q].0 })
                .product();
        }
    }
    out
}

pub fn embed_backward(features: &[f64], g: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; features.len()];
    for ((x, gr), greg) in features
        .chunks_exact(QUBITS)
        .zip(grad.chunks_exact_mut(QUBITS))
        .zip(g.chunks_exact(REGISTER))
    {
        let cs: Vec<(f64, f64)> = x.iter().map(|v| ((v / 2.0).cos(), (v / 2.0).sin())).collect();
        for (q, gq) in gr.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in 0..AMPLITUDES {
                let mut term = 1.0;
                for (p, &(c, s)) in cs.iter().enumerate() {
                    let on = k & qubit_mask(p) != 0;
                    term *= match (p == q, on) {
                        (true, true) => c / 2.0,
                        (true, false) => -s / 2.0,
                        (false, true) => s,
                        (false, false) => c,
                    };
                }
                acc += term * greg[k];
            }
            *gq = acc;
        }
    }
    grad
}

/// Pauli-Z expectation of every qubit: `[groups, 2, 16] -> [groups, 4]`.
pub fn expect_z_forward(state: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(state.len() / REGISTER * QUBITS);
    for reg in state.chunks_exact(REGISTER) {
        let (re, im) = reg.split_at(AMPLITUDES);
        for q in 0..QUBITS {
            let m = qubit_mask(q);
            let z: f64 = (0..AMPLITUDES)
                .map(|k| {
                    let p = re[k] * re[k] + im[k] * im[k];
                    if k & m != 0 {
                        -p
                    } else {
                        p
                    }
                })
                .sum();
            out.push(z);
        }
    }
    out
}

pub fn expect_z_backward(state: &[f64], g: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; state.len()];
    for ((reg, greg), gz) in state
        .chunks_exact(REGISTER)
        .zip(grad.chunks_exact_mut(REGISTER))
        .zip(g.chunks_exact(QUBITS))
    {
        for k in 0..AMPLITUDES {
            let w: f64 = (0..QUBITS)
                .map(|q| if k & qubit_mask(q) != 0 { -gz[q] } else { gz[q] })
                .sum();
            greg[k] = 2.0 * reg[k] * w;
            greg[AMPLITUDES + k] = 2.0 * reg[AMPLITUDES + k] * w;
        }
    }
    grad
}

/// Squared norm of each register.
pub fn register_norms(state: &[f64]) -> Vec<f64> {
    state
        .chunks_exact(REGISTER)
        .map(|r| r.iter().map(|v| v * v).sum())
        .collect()
}
