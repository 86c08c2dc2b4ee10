//! HTTP API, event stream and the live simulation that backs them.

pub mod bus;
pub mod client;
pub mod desk;
pub mod server;

pub use bus::{ApiEvent, EventBus, StreamError, Subscription, DEFAULT_RING};
pub use client::{Client, ClientError};
pub use desk::{desk_scenario, start, ChainView, DeskConfig, DeskError, DeskHandle, Snapshot};
pub use server::{router, serve, serve_on, ErrorBody, RemapRequest, ServeError};

/// Environment variable holding the bind / server address.
pub const ADDR_ENV: &str = "LEDGERNET_ADDR";
pub const DEFAULT_ADDR: &str = "127.0.0.1:8686";
