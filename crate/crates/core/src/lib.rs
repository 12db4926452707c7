//! Exact few-photon simulation of heralded entanglement concentration for a
//! single photon shared between two spatial modes, with its polarization
//! qubit left intact.

pub mod error;
pub mod fock;
pub mod measurement;
pub mod optics;
pub mod analysis;
pub mod dsl;
pub mod protocols;
pub mod verify;

pub use error::{Error, Result};
pub use fock::{fidelity, tensor, ModeRef, OccupationPattern, PolLabel, StateVector};
pub use measurement::{DetectorMode, DetectorModel};
pub use protocols::{
    run, trace, vbs_schedule, Accounting, Engine, EntanglementParams, PolarizationParams, ProtocolReport,
    ProtocolSpec, RunConfig, VbsSchedule,
};
