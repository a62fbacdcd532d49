//! Dense gate matrices and a matrix-product simulator for one 4-qubit
//! register. This is deliberately independent of the batched kernels used
//! during training, so the two can check each other.

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};
use crate::tensorops::qubit::{qubit_mask, AMPLITUDES, QUBITS};

pub type C64 = Complex<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateKind {
    Rx,
    Ry,
    /// Ising XX coupling on two qubits.
    Xx,
    PauliZ,
    Not,
    /// Three qubits: closed control, open control, target.
    Toffoli,
}

impl GateKind {
    pub fn arity(self) -> usize {
        match self {
            GateKind::Xx => 2,
            GateKind::Toffoli => 3,
            _ => 1,
        }
    }

    pub fn is_parameterized(self) -> bool {
        matches!(self, GateKind::Rx | GateKind::Ry | GateKind::Xx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateUnitary {
    pub kind: GateKind,
    /// Ignored by the fixed gates.
    pub angle: f64,
    /// Target qubits; the first is the most significant bit of the local
    /// matrix.
    pub targets: Vec<usize>,
}

impl GateUnitary {
    pub fn new(kind: GateKind, angle: f64, targets: &[usize]) -> Result<Self> {
        if targets.len() != kind.arity() {
            return Err(Error::InvalidArgument(format!(
                "{kind:?} acts on {} qubits, got {:?}",
                kind.arity(),
                targets
            )));
        }
        for (i, &q) in targets.iter().enumerate() {
            if q >= QUBITS || targets[..i].contains(&q) {
                return Err(Error::InvalidArgument(format!(
                    "invalid qubit targets {targets:?} for {kind:?}"
                )));
            }
        }
        Ok(Self {
            kind,
            angle,
            targets: targets.to_vec(),
        })
    }

    /// The gate's own `2^k x 2^k` matrix.
    pub fn local_matrix(&self) -> DMatrix<C64> {
        let (d, g) = ((self.angle / 2.0).cos(), (self.angle / 2.0).sin());
        let re = |v: f64| C64::new(v, 0.0);
        let mi = |v: f64| C64::new(0.0, -v);
        let z = re(0.0);
        match self.kind {
            GateKind::Rx => DMatrix::from_row_slice(2, 2, &[re(d), mi(g), mi(g), re(d)]),
            GateKind::Ry => DMatrix::from_row_slice(2, 2, &[re(d), re(-g), re(g), re(d)]),
            GateKind::Xx => DMatrix::from_row_slice(
                4,
                4,
                &[
                    re(d), z, z, mi(g), //
                    z, re(d), mi(g), z, //
                    z, mi(g), re(d), z, //
                    mi(g), z, z, re(d),
                ],
            ),
            GateKind::PauliZ => DMatrix::from_row_slice(2, 2, &[re(1.0), z, z, re(-1.0)]),
            GateKind::Not => DMatrix::from_row_slice(2, 2, &[z, re(1.0), re(1.0), z]),
            GateKind::Toffoli => {
                let mut m = DMatrix::identity(8, 8);
                m[(4, 4)] = z;
                m[(5, 5)] = z;
                m[(4, 5)] = re(1.0);
                m[(5, 4)] = re(1.0);
                m
            }
        }
    }

    /// The gate lifted to the full 16-dimensional register: identity on the
    /// other qubits, the local matrix on the targets.
    pub fn lifted(&self) -> DMatrix<C64> {
        let local = self.local_matrix();
        let k = self.targets.len();
        let target_mask: usize = self.targets.iter().map(|&q| qubit_mask(q)).sum();
        let local_index = |basis: usize| -> usize {
            self.targets
                .iter()
                .fold(0, |acc, &q| (acc << 1) | usize::from(basis & qubit_mask(q) != 0))
        };
        debug_assert_eq!(local.nrows(), 1 << k);
        DMatrix::from_fn(AMPLITUDES, AMPLITUDES, |r, c| {
            if r & !target_mask != c & !target_mask {
                C64::new(0.0, 0.0)
            } else {
                local[(local_index(r), local_index(c))]
            }
        })
    }
}

/// State of one 4-qubit register, amplitudes indexed `|q0 q1 q2 q3>`.
#[derive(Debug, Clone, PartialEq)]
pub struct QubitGroupState {
    pub re: [f64; AMPLITUDES],
    pub im: [f64; AMPLITUDES],
}

impl QubitGroupState {
    /// `|0000>`.
    pub fn ground() -> Self {
        Self::basis(0)
    }

    pub fn basis(k: usize) -> Self {
        let mut re = [0.0; AMPLITUDES];
        re[k] = 1.0;
        Self {
            re,
            im: [0.0; AMPLITUDES],
        }
    }

    pub fn amplitude(&self, k: usize) -> C64 {
        C64::new(self.re[k], self.im[k])
    }

    pub fn norm_sq(&self) -> f64 {
        self.re.iter().chain(&self.im).map(|v| v * v).sum()
    }

    /// `<Z>` of qubit `q`.
    pub fn expect_z(&self, q: usize) -> f64 {
        (0..AMPLITUDES)
            .map(|k| {
                let p = self.amplitude(k).norm_sqr();
                if k & qubit_mask(q) != 0 {
                    -p
                } else {
                    p
                }
            })
            .sum()
    }
}

pub fn apply_gate(state: &QubitGroupState, gate: &GateUnitary) -> QubitGroupState {
    let u = gate.lifted();
    let mut out = QubitGroupState {
        re: [0.0; AMPLITUDES],
        im: [0.0; AMPLITUDES],
    };
    for r in 0..AMPLITUDES {
        let mut acc = C64::new(0.0, 0.0);
        for c in 0..AMPLITUDES {
            acc += u[(r, c)] * state.amplitude(c);
        }
        out.re[r] = acc.re;
        out.im[r] = acc.im;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ry_pi_flips_ground_state() {
        let g = GateUnitary::new(GateKind::Ry, std::f64::consts::PI, &[3]).unwrap();
        let s = apply_gate(&QubitGroupState::ground(), &g);
        assert!((s.re[1] - 1.0).abs() < 1e-15);
        assert!(s.re[0].abs() < 1e-15);
    }

    #[test]
    fn ry_zero_is_identity() {
        let g = GateUnitary::new(GateKind::Ry, 0.0, &[1]).unwrap();
        let s = QubitGroupState::basis(5);
        assert_eq!(apply_gate(&s, &g), s);
    }

    #[test]
    fn xx_pi_maps_00_to_minus_i_11() {
        let g = GateUnitary::new(GateKind::Xx, std::f64::consts::PI, &[0, 1]).unwrap();
        let s = apply_gate(&QubitGroupState::ground(), &g);
        assert!((s.im[0b1100] + 1.0).abs() < 1e-15);
        assert!(s.norm_sq() - 1.0 < 1e-15);
    }

    #[test]
    fn toffoli_open_control() {
        // Local order (closed, open, target) = (q0, q1, q2); |100x> -> |101x>.
        let g = GateUnitary::new(GateKind::Toffoli, 0.0, &[0, 1, 2]).unwrap();
        for k in 0..AMPLITUDES {
            let s = apply_gate(&QubitGroupState::basis(k), &g);
            let expected = if k >> 2 == 0b10 { k ^ 0b0010 } else { k };
            assert_eq!(s.re[expected], 1.0, "basis {k:04b}");
        }
    }

    #[test]
    fn invalid_targets_rejected() {
        assert!(GateUnitary::new(GateKind::Xx, 0.1, &[1, 1]).is_err());
        assert!(GateUnitary::new(GateKind::Rx, 0.1, &[4]).is_err());
        assert!(GateUnitary::new(GateKind::Toffoli, 0.0, &[0, 1]).is_err());
    }
}
