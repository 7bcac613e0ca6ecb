//! Fair machine guidance.
//!
//! Per-participant student models, demographic-parity-constrained teacher
//! models, iterative machine-teaching sample selection and the event-sourced
//! experimental session protocol, with an HTTP service and a simulation
//! driver on top.

pub mod dataset;
pub mod fairness;
pub mod linmodel;
pub mod service;
pub mod session;
pub mod teaching;
