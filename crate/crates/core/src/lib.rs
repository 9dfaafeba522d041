//! Evidential multi-view classification: opinions, fusion, training and evaluation.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregation;
pub mod cli;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod losses;
pub mod networks;
pub mod opinions;
pub mod pipeline;
