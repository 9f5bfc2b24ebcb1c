//! Trace reconstruction over the deletion channel when the reconstructor only
//! sees noisy local statistics of a trace.

pub mod avg_case;
pub mod bits;
pub mod channel;
pub mod cli;
pub mod degrade;
pub mod error;
pub mod lower_bounds;
pub mod oracle;
pub mod poly;
pub mod rng;
pub mod scalar;
pub mod signature;
pub mod worst_case;

pub use bits::{BitString, Pattern};
pub use channel::{ChannelParams, Cylinder, Padding, Trace};
pub use error::{Error, Result};
pub use signature::SubwordSignature;
