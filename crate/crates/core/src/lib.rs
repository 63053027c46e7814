pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod fields;
pub mod grid;
pub mod nonlinearity;
pub mod operator;
pub mod par;
pub mod random;

pub use error::{Error, Result};
pub use grid::{Grid, GridFunction, PotentialSpec, C64};
pub use operator::{FiniteRankOperator, RCKernel, Term};
