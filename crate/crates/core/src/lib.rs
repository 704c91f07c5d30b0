//! Structure-informed nested-function networks.
//!
//! * [`topology`]: feedforward network graphs and their JSON format.
//! * [`representability`]: ratio and derivative-counting tests for whether
//!   a fixed topology can represent a smoothness class.
//! * [`nodefuncs`]: cubic B-spline, linear and boosted-tree node functions.
//! * [`training`]: gradient training of smooth networks and block-coordinate
//!   boosting of nested tree ensembles.
//! * [`experiments`]: target expressions, datasets, the matched/mismatched
//!   structure experiment and the decomposability detector.
//! * [`cli`]: the `structkan` command line.

pub mod cli;
pub mod data;
pub mod experiments;
pub mod nodefuncs;
pub mod par;
pub mod representability;
pub mod topology;
pub mod training;
