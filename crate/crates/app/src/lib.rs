//! Configuration and the service layer. The HTTP server and the CLI are
//! thin adapters over [`Service`].

mod config;
mod error;
mod service;
pub mod views;

pub use config::{
    AppConfig, ConfigOverrides, ServerConfig, CONFIG_FILE, ENV_AMBER_MIN, ENV_API_TOKEN, ENV_CAPABILITY_SECRET,
    ENV_CONFIG, ENV_DATABASE, ENV_GREEN_MIN, ENV_LISTEN, ENV_PARALLELISM, ENV_SEED, ENV_VARIANT,
};
pub use error::{AppError, ErrorKind};
pub use service::{Result, Service};
