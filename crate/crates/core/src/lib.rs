//! Stochastic flows of diffeomorphisms, transport of differential k-forms and
//! pathwise checks of the Kunita-Ito-Wentzell formula.

pub mod advect;
pub mod circulation;
pub mod config;
pub mod error;
pub mod exterior;
pub mod fields;
pub mod flow;
pub mod kiw;
pub mod linalg;
pub mod report;
pub mod runner;
pub mod stats;

pub use error::{Error, Result};
