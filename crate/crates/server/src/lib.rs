//! HTTP front end and admin command line for the banditry decision service.
//!
//! The protocol has two machine-facing calls, both plain GETs with
//! URL-encoded JSON parameters:
//!
//! ```text
//! GET /{id}/getaction.json?key=KEY&context={"weather":"sunny","userid":12}
//! GET /{id}/setreward.json?key=KEY&context={..}&action={..}&reward={"km":8}
//! ```
//!
//! plus θ and log retrieval and a management API guarded by `X-Admin-Token`.

pub mod api;
pub mod cli;
pub mod client;
pub mod error;
pub mod serve;

pub use api::{router, AppState};
pub use error::ApiError;
