//! Time-variant masking for masked language model pre-training.
//!
//! Two knobs change what a masked language model is asked to predict as
//! training progresses:
//!
//! * [`schedule`]: the masking ratio as a function of the step, decaying from
//!   twice a base ratio towards zero.
//! * [`ptw`] and [`masker`]: part-of-speech weighted selection, where
//!   categories the model currently finds hard are masked more often.
//!
//! [`trainer`] is a small transformer encoder trained on CPU that exercises
//! both, and [`cli`] wires everything into reproducible runs.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod masker;
pub mod ptw;
pub mod rng;
pub mod schedule;
pub mod trainer;

pub use error::{Error, Result};
