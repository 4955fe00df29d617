//! Speculative tool calling for LM agents.
//!
//! The crate models an agent loop that overlaps tool execution with model
//! generation, either on the client ([`client`]) or inside a simulated
//! inference engine with a tool cache ([`engine`]). All timing runs on a
//! deterministic virtual clock ([`sim`]); closed-form expectations live in
//! [`analytic`] and serve as oracles for the simulator.

pub mod analytic;
pub mod client;
pub mod domain;
pub mod engine;
pub mod metrics;
pub mod mock;
pub mod par;
pub mod plot;
pub mod sim;
pub mod workload;
pub mod library;
pub mod world;

pub use domain::{canonical_key, extract_tool_call, CanonicalKey, Token, TokenKind, ToolCall, ToolSpec, Toolset};
