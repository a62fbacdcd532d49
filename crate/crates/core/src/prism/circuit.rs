//! The feature-extraction circuit: angle embedding, five trainable layers,
//! Toffoli entanglement and a Pauli-Z readout reduced by pairwise max.

use super::gates::{apply_gate, GateKind, GateUnitary, QubitGroupState};
use crate::error::{Error, Result};
use crate::tensorops::qubit::{RotationKind, QUBITS};
use crate::tensorops::{Tape, Var};

/// Qubit pairs of the two Ising layers, with the `omega` index of each.
pub const XX_FIRST: [([usize; 2], usize); 2] = [([0, 1], 0), ([2, 3], 1)];
pub const XX_SECOND: [([usize; 2], usize); 2] = [([1, 2], 2), ([3, 0], 3)];
/// `(closed control, open control, target)` in application order.
pub const TOFFOLIS: [(usize, usize, usize); 4] = [(0, 1, 2), (1, 2, 3), (2, 3, 0), (3, 0, 1)];

/// The 16 trainable angles, four per family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircuitAngles {
    pub rho: [f64; 4],
    pub omega: [f64; 4],
    pub theta: [f64; 4],
    pub phi: [f64; 4],
}

/// Angle variables on a tape, each of shape `[4]`.
#[derive(Debug, Clone, Copy)]
pub struct AngleVars {
    pub rho: Var,
    pub omega: Var,
    pub theta: Var,
    pub phi: Var,
}

/// Records the circuit for every register: `[groups, 4] -> [groups, 2]`.
pub fn quantum_fe(tape: &mut Tape, features: Var, angles: AngleVars) -> Result<Var> {
    let mut s = tape.angle_embed(features)?;
    for q in 0..QUBITS {
        s = tape.rotation(s, angles.rho, q, RotationKind::Y, [q, 0])?;
    }
    for (pair, idx) in XX_FIRST {
        s = tape.rotation(s, angles.omega, idx, RotationKind::Xx, pair)?;
    }
    for q in 0..QUBITS {
        s = tape.rotation(s, angles.theta, q, RotationKind::X, [q, 0])?;
    }
    for (pair, idx) in XX_SECOND {
        s = tape.rotation(s, angles.omega, idx, RotationKind::Xx, pair)?;
    }
    for q in 0..QUBITS {
        s = tape.rotation(s, angles.phi, q, RotationKind::Y, [q, 0])?;
    }
    for (closed, open, target) in TOFFOLIS {
        s = tape.toffoli(s, closed, open, target)?;
    }
    let z = tape.expect_z(s)?;
    tape.pair_max(z)
}

/// Final register state for one group, by dense gate matrices.
pub fn circuit_state(features: &[f64; 4], angles: &CircuitAngles) -> Result<QubitGroupState> {
    let mut s = QubitGroupState::ground();
    let mut apply = |kind: GateKind, angle: f64, targets: &[usize]| -> Result<()> {
        s = apply_gate(&s, &GateUnitary::new(kind, angle, targets)?);
        Ok(())
    };
    for q in 0..QUBITS {
        apply(GateKind::Ry, features[q], &[q])?;
    }
    for q in 0..QUBITS {
        apply(GateKind::Ry, angles.rho[q], &[q])?;
    }
    for (pair, idx) in XX_FIRST {
        apply(GateKind::Xx, angles.omega[idx], &pair)?;
    }
    for q in 0..QUBITS {
        apply(GateKind::Rx, angles.theta[q], &[q])?;
    }
    for (pair, idx) in XX_SECOND {
        apply(GateKind::Xx, angles.omega[idx], &pair)?;
    }
    for q in 0..QUBITS {
        apply(GateKind::Ry, angles.phi[q], &[q])?;
    }
    for (closed, open, target) in TOFFOLIS {
        apply(GateKind::Toffoli, 0.0, &[closed, open, target])?;
    }
    Ok(s)
}

/// Circuit output for a batch of groups, by dense gate matrices.
pub fn quantum_fe_reference(features: &[[f64; 4]], angles: &CircuitAngles) -> Result<Vec<[f64; 2]>> {
    features
        .iter()
        .map(|x| {
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("circuit feature".into()));
            }
            let s = circuit_state(x, angles)?;
            let z: Vec<f64> = (0..QUBITS).map(|q| s.expect_z(q)).collect();
            Ok([z[0].max(z[1]), z[2].max(z[3])])
        })
        .collect()
}
