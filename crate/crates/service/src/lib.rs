//! Sessions, persistence, the streaming HTTP API and the command line for
//! the hypothesis engine.

pub mod api;
pub mod backends;
pub mod cli;
pub mod config;
pub mod error;
pub mod events;
pub mod runtime;
pub mod session;

pub use backends::{factory_for, BackendFactory, LiveFactory, OfflineFactory, ReplayFactory};
pub use config::AppConfig;
pub use error::ServiceError;
pub use events::{SessionEvent, SessionMode, SessionRequest, SessionSpec, SessionStatus};
pub use runtime::GraphData;
pub use session::{SessionHandle, SessionManager, SessionView};
