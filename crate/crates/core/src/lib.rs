//! Time-limited pulse design with minimum residual intersymbol interference for
//! faster-than-Nyquist signaling, plus a truncated-Viterbi link simulator used to
//! validate the designed pulses.

pub mod analysis;
pub mod equalizer;
pub mod error;
pub mod optimizer;
pub mod pswf;
pub mod pulse;
pub mod quadrature;
pub mod simulator;

pub use error::{FtnError, Result};
