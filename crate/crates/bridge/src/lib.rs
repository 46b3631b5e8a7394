//! WebSocket bridge between the simulator and operator consoles.

pub mod driver;
pub mod hub;
pub mod replay;
pub mod server;

pub use driver::{drive, Pace};
pub use hub::{Connection, Hub, Outgoing};
pub use server::{serve, ServerOptions};
