//! The wire protocol that connects tools to a running VM, and the server
//! that speaks it.

pub mod protocol;
pub mod server;

pub use protocol::{decode_value, encode_value, Dispatcher, ErrorCode, ProtocolError, PROTOCOL_VERSION};
pub use server::{serve, ServeError, Server, ServerConfig};
