//! The virtual prism: a network that maps an observed multispectral cube to
//! a cube with twice as many bands.

pub mod circuit;
pub mod gates;
mod layout;
mod network;
mod params;
mod train;

pub use circuit::{quantum_fe, quantum_fe_reference, AngleVars, CircuitAngles};
pub use gates::{apply_gate, GateKind, GateUnitary, QubitGroupState};
pub use layout::{LayoutMode, PrismLayout};
pub use network::{prism_forward, record_forward, PrismGraph, PrismOutput};
pub use params::PrismParams;
pub use train::{
    prism_loss, prism_loss_gradient, train_prism, tv_spa, tv_spe, PrismLossTerms, PrismTrainer,
    TrainConfig, TrainOutcome,
};
