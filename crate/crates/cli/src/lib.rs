//! Library surface of the harness: run building, sweeps, manifests, and
//! population scoring. The `agora` binary is a thin wrapper over these.

pub mod eas_cmd;
pub mod manifest;
pub mod runner;
pub mod sweep;
