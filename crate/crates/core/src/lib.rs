//! Learning with noisy labels through relation modeling and relation-graph
//! distillation.
//!
//! A teacher encoder is pretrained without labels (SimSiam); a student
//! classifier is then trained on noisy labels with an extra loss that aligns
//! the Pearson relation graph of its representations with the teacher's.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod numerics;
pub mod optim;
pub mod relation;
pub mod ssl;
pub mod trainer;

pub use error::{Error, Result};
