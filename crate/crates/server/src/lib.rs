//! Sync server: sequences ops per project, persists them, and fans them
//! out to every session of the project.

pub mod hub;
pub mod net;
pub mod protocol;

pub use hub::{Delivery, Hubs, ProjectHub};
pub use net::{bind, router, serve, AppState, ServerConfig, StartError};
pub use protocol::{ClientMsg, ErrorCode, PresenceEntry, Rejection, ServerMsg};
