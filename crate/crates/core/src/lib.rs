//! Smooth parametrised transport maps pushing a fixed measure onto a family
//! of densities, with diagnostics for when such maps cannot exist.

pub mod cli;
pub mod collar;
pub mod config;
pub mod density;
pub mod diagnostics;
pub mod error;
pub mod expr;
pub mod fd;
pub mod geometry;
pub mod jet;
pub mod moser;
pub mod quadrature;
pub mod transport;

pub use error::{Error, Result, Stage};
