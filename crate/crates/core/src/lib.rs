pub mod abr;
pub mod capacity;
pub mod decoder;
pub mod emulation;
pub mod error;
pub mod fusion;
pub mod io;
pub mod message;
pub mod pipeline;
pub mod phy;
pub mod sim;
pub mod tracker;

pub use error::{Error, Result};
pub use message::DciMessage;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
