//! Numerical laboratory for finite-time blow-up of
//! `u_tt - Δu = |u|^{p-1} u ln^a(ln(10 + u^2))`.

pub mod duhamel;
pub mod error;
pub mod nonlinearity;
pub mod quadrature;

pub use error::{Error, Result};
pub use nonlinearity::ModelParams;
pub mod interp;
pub mod io;
pub mod ode;
pub mod similarity;
pub mod rate;
pub mod wave;
