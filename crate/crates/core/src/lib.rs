//! Novel-object visual question answering at desk scale.

pub mod data;
pub mod embed;
mod error;
pub mod evalkit;
pub mod experiment;
pub mod nn;
pub mod pairs;
pub mod seqae;
pub mod splitgen;
pub mod synthworld;
pub mod text;
pub mod vqa;

pub use error::{CoreError, Result};
