//! Virtual prosthesis engine.
//!
//! A tracked hand (or a recorded/synthetic pose trace) drives a digital
//! object that replaces it on screen. The object's declared affordances
//! decide how it can play the two tasks: pushing a ball toward a goal and
//! drawing on a canvas.

// Negated float comparisons are deliberate throughout: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod gesture;
pub mod math;
pub mod pose;
pub mod protocol;
pub mod prosthesis;
pub mod retarget;
pub mod scan;
pub mod session;
pub mod synth;
pub mod tasks;
