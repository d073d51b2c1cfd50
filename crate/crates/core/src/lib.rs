pub mod engine;
pub mod error;
pub mod hydro;
pub mod kernels;
pub mod models;
pub mod nef;
pub mod ode;
pub mod poly;
pub mod quad;
pub mod rwalk;
pub mod special;
pub mod stats;
pub mod table;

pub use error::{Error, Result};
