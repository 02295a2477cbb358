//! Live driving sessions: a human-controlled vehicle and a planner-controlled
//! ego in simulated traffic, ticked at a fixed rate, with the human's
//! CMetric, risk parameter and cluster refreshed over a sliding window.
//! [`server`] exposes sessions over a JSON websocket protocol.

pub mod protocol;
pub mod server;
mod session;

pub use protocol::{parse_client, ClientMessage, ErrorCode, ProtocolError, ServerMessage, PROTOCOL_VERSION};
pub use server::{router, serve};
pub use session::{
    Action, ControlInput, LiveMetrics, Session, SessionConfig, SessionError, SessionExport, SessionManager, StateUpdate,
    VehicleView, HISTORY_CAPACITY, TICK_HZ,
};
