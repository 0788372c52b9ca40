pub mod clustering;
pub mod error;
pub mod extraction;
pub mod fdd;
pub mod factorization;
pub mod fft;
pub mod io;
pub mod metrics;
pub mod mlo;
pub mod pipeline;
pub mod scattering;

pub use error::{AsccError, Result};
