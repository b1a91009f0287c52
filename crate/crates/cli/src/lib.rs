//! Pipeline commands and the audit review service behind the `radreg`
//! binary.

pub mod commands;
pub mod run;
pub mod service;
pub mod settings;

use serde_json::json;

/// A problem with the invocation itself: flags, config files or inputs.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

/// Exit status and machine-readable body for a failed command.
pub fn classify(err: &anyhow::Error) -> (i32, serde_json::Value) {
    let message = format!("{err:#}");
    let (status, code) = if let Some(e) = err.downcast_ref::<radreg_core::Error>() {
        (if e.is_user_error() { EXIT_USER } else { EXIT_INTERNAL }, e.code().to_string())
    } else if err.downcast_ref::<UsageError>().is_some() {
        (EXIT_USER, "usage".to_string())
    } else if let Some(e) = err.downcast_ref::<clap::Error>() {
        (EXIT_USER, format!("usage_{:?}", e.kind()).to_lowercase())
    } else {
        (EXIT_INTERNAL, "internal".to_string())
    };
    (status, json!({ "error": { "code": code, "message": message } }))
}
