//! Assurance toolkit for an ML blood-glucose predictor: a virtual-patient
//! simulator, a small feed-forward network trainer, a property language with a
//! branch-and-bound verifier, a dataset auditor and an executable GSN case.

pub mod audit;
pub mod dataset;
pub mod evidence;
pub mod gsn;
pub mod nn;
pub mod property;
pub mod simulator;
pub mod verifier;
