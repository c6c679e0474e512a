//! Screening service: game sessions, model predictions and the final
//! verdict over a JSON API.

pub mod clock;
pub mod config;
pub mod error;
pub mod flow;
pub mod http;
pub mod registry;
pub mod service;
pub mod store;

pub use clock::{Clock, ManualClock, SystemClock};
pub use config::ServiceConfig;
pub use error::ApiError;
pub use registry::ModelRegistry;
pub use service::ScreeningService;
