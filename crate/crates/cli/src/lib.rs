//! Networked side of the platform: the websocket session server, the
//! simulated teacher client, and the operator commands behind the `hitl`
//! binary.

pub mod commands;
pub mod server;
pub mod sim_client;

pub use server::{Registry, Server};
pub use sim_client::{run_demo_session, run_feedback_session, run_session, SessionReport, SimOptions, WireClient};
