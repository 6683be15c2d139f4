//! Hardware-free simulation of a staged fall-detection system.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`signal_io`] and [`preproc`] turn wearable IMU traces into normalised,
//!   labelled windows.
//! * [`nn`] is a small from-scratch training kernel (recurrent autoencoder,
//!   frozen-encoder classifier, dense nets) and [`fedsim`] runs the
//!   semi-supervised federated protocol on top of it.
//! * [`fingerprint`] builds RSSI fingerprint tables from robot logs and
//!   [`locmodel`] fits regressors that map RSSI vectors to positions.
//! * [`vision`] works on detector output records: IoU, AP@50, scene features
//!   and the fallen/not-fallen classifiers.
//! * [`mission`] plans robot paths, drives the fall-event state machine and
//!   composes per-stage failure rates.
//! * [`cli`] wires everything into the `fallchain` binary.

pub mod cli;
pub mod fedsim;
pub mod fingerprint;
pub mod locmodel;
pub mod mission;
pub mod nn;
pub mod preproc;
pub mod seeds;
pub mod signal_io;
pub mod tree;
pub mod vision;
