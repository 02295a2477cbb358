//! JSON text frames of protocol version 1. Every frame carries `"v": 1`.

use riskdrive_core::behavior::BehaviorProfile;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::session::{Action, ControlInput, SessionConfig, StateUpdate};

pub const PROTOCOL_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ClientMessage {
    Start { config: SessionConfig },
    Control { session: u64, input: ControlInput },
    Stop { session: u64 },
}

/// Machine-readable error codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    InvalidJson,
    UnsupportedVersion,
    UnknownType,
    InvalidMessage,
    InvalidControl,
    InvalidConfig,
    UnknownSession,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolError {
    pub code: ErrorCode,
    pub message: String,
}

impl ProtocolError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ProtocolError { code, message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Started {
        session: u64,
        human_id: u32,
        ego_id: u32,
        tick_dt: f64,
    },
    State(StateUpdate),
    Stopped {
        session: u64,
        ticks: u64,
        trajectory_csv: String,
        profile: Option<BehaviorProfile>,
        files: Option<Vec<String>>,
    },
    Error {
        code: ErrorCode,
        message: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        session: Option<u64>,
    },
}

impl ServerMessage {
    pub fn error(e: ProtocolError, session: Option<u64>) -> Self {
        ServerMessage::Error { code: e.code, message: e.message, session }
    }

    /// The frame text, with the version field.
    pub fn encode(&self) -> String {
        let mut v = serde_json::to_value(self).expect("message serializes");
        v.as_object_mut().expect("messages are objects").insert("v".into(), PROTOCOL_VERSION.into());
        v.to_string()
    }

    pub fn decode(text: &str) -> Result<Self, ProtocolError> {
        let mut v: Value = serde_json::from_str(text).map_err(|e| ProtocolError::new(ErrorCode::InvalidJson, e.to_string()))?;
        check_version(&mut v)?;
        serde_json::from_value(v).map_err(|e| ProtocolError::new(ErrorCode::InvalidMessage, e.to_string()))
    }
}

/// Removes `v`, accepting it when absent or equal to 1.
fn check_version(v: &mut Value) -> Result<(), ProtocolError> {
    let obj = v.as_object_mut().ok_or_else(|| ProtocolError::new(ErrorCode::InvalidMessage, "frame must be a JSON object"))?;
    match obj.remove("v") {
        None => Ok(()),
        Some(x) if x.as_u64() == Some(PROTOCOL_VERSION) => Ok(()),
        Some(x) => Err(ProtocolError::new(ErrorCode::UnsupportedVersion, format!("unsupported protocol version {x}"))),
    }
}

fn field<'a>(v: &'a Value, name: &str) -> Result<&'a Value, ProtocolError> {
    v.get(name).ok_or_else(|| ProtocolError::new(ErrorCode::InvalidMessage, format!("missing field {name:?}")))
}

fn uint(v: &Value, name: &str) -> Result<u64, ProtocolError> {
    field(v, name)?
        .as_u64()
        .ok_or_else(|| ProtocolError::new(ErrorCode::InvalidMessage, format!("{name:?} must be a non-negative integer")))
}

pub fn parse_client(text: &str) -> Result<ClientMessage, ProtocolError> {
    let mut v: Value = serde_json::from_str(text).map_err(|e| ProtocolError::new(ErrorCode::InvalidJson, e.to_string()))?;
    check_version(&mut v)?;
    let kind = field(&v, "type")?
        .as_str()
        .ok_or_else(|| ProtocolError::new(ErrorCode::InvalidMessage, "\"type\" must be a string"))?;
    match kind {
        "start" => {
            let config = match v.get("config") {
                None | Some(Value::Null) => SessionConfig::default(),
                Some(c) => serde_json::from_value(c.clone()).map_err(|e| ProtocolError::new(ErrorCode::InvalidConfig, e.to_string()))?,
            };
            Ok(ClientMessage::Start { config })
        }
        "control" => {
            let session = uint(&v, "session")?;
            let seq = uint(&v, "seq")?;
            let action = field(&v, "action")?
                .as_str()
                .and_then(Action::parse)
                .ok_or_else(|| ProtocolError::new(ErrorCode::InvalidControl, format!("invalid action {}", v["action"])))?;
            Ok(ClientMessage::Control { session, input: ControlInput { action, seq } })
        }
        "stop" => Ok(ClientMessage::Stop { session: uint(&v, "session")? }),
        other => Err(ProtocolError::new(ErrorCode::UnknownType, format!("unknown message type {other:?}"))),
    }
}
