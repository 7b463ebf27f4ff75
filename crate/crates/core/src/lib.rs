pub mod algebra;
pub mod averages;
pub mod bau;
pub mod brunel;
pub mod certificate;
pub mod error;
pub mod limits;
pub mod linalg;
pub mod maps;
pub mod maximal;
pub mod runner;
pub mod sphere;

pub use error::{Error, Result};
