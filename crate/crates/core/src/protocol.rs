//! JSON wire vocabulary between the session server and its clients.
//!
//! Every message is one JSON object with a `"type"` discriminator,
//! carried in a single websocket text frame. Decoding is strict: each failure
//! maps to one [`ErrorCode`] and never tears the session down.

use std::fmt;

use base64::Engine as _;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

use crate::agents::Feedback;
use crate::env::{ActionLabel, Frame};

pub const PROTOCOL_VERSION: u64 = 1;

/// Closed set of error codes that may appear on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    UnknownType,
    Malformed,
    InvalidValue,
    BudgetExhausted,
    IllegalTransition,
    UnknownProject,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 6] = [
        ErrorCode::UnknownType,
        ErrorCode::Malformed,
        ErrorCode::InvalidValue,
        ErrorCode::BudgetExhausted,
        ErrorCode::IllegalTransition,
        ErrorCode::UnknownProject,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::UnknownType => "unknown_type",
            ErrorCode::Malformed => "malformed",
            ErrorCode::InvalidValue => "invalid_value",
            ErrorCode::BudgetExhausted => "budget_exhausted",
            ErrorCode::IllegalTransition => "illegal_transition",
            ErrorCode::UnknownProject => "unknown_project",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{code}: {detail}")]
pub struct ProtocolError {
    pub code: ErrorCode,
    pub detail: String,
}

impl ProtocolError {
    pub fn new(code: ErrorCode, detail: impl Into<String>) -> Self {
        ProtocolError {
            code,
            detail: detail.into(),
        }
    }

    pub fn binary_frame() -> Self {
        Self::new(ErrorCode::Malformed, "binary frames are not accepted")
    }

    pub fn to_message(&self) -> ServerMessage {
        ServerMessage::Error {
            code: self.code,
            detail: self.detail.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ControlVerb {
    Start,
    Pause,
    Stop,
    Reset,
    SpeedUp,
    SpeedDown,
    TrainOffline,
    TrainOnline,
}

impl ControlVerb {
    pub const ALL: [ControlVerb; 8] = [
        ControlVerb::Start,
        ControlVerb::Pause,
        ControlVerb::Stop,
        ControlVerb::Reset,
        ControlVerb::SpeedUp,
        ControlVerb::SpeedDown,
        ControlVerb::TrainOffline,
        ControlVerb::TrainOnline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ControlVerb::Start => "start",
            ControlVerb::Pause => "pause",
            ControlVerb::Stop => "stop",
            ControlVerb::Reset => "reset",
            ControlVerb::SpeedUp => "speedUp",
            ControlVerb::SpeedDown => "speedDown",
            ControlVerb::TrainOffline => "trainOffline",
            ControlVerb::TrainOnline => "trainOnline",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|v| v.as_str() == s)
    }
}

fn serialize_feedback<S: Serializer>(f: &Feedback, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_i64(f.value() as i64)
}

/// Browser or simulated-teacher to server.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "camelCase", rename_all_fields = "camelCase")]
pub enum ClientMessage {
    Connect {
        project_id: String,
        user_id: String,
    },
    Command {
        action: ActionLabel,
        frame_id: u64,
    },
    Feedback {
        #[serde(serialize_with = "serialize_feedback")]
        value: Feedback,
        frame_id: u64,
    },
    Click {
        x: u32,
        y: u32,
        frame_id: u64,
    },
    Control {
        verb: ControlVerb,
    },
    Disconnect {},
    /// Free-form participant input such as questionnaire answers.
    Info {
        text: String,
    },
}

impl ClientMessage {
    pub const TYPES: [&'static str; 7] = [
        "connect",
        "command",
        "feedback",
        "click",
        "control",
        "disconnect",
        "info",
    ];

    pub fn type_name(&self) -> &'static str {
        match self {
            ClientMessage::Connect { .. } => "connect",
            ClientMessage::Command { .. } => "command",
            ClientMessage::Feedback { .. } => "feedback",
            ClientMessage::Click { .. } => "click",
            ClientMessage::Control { .. } => "control",
            ClientMessage::Disconnect {} => "disconnect",
            ClientMessage::Info { .. } => "info",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct UiConfig {
    pub v: u64,
    pub buttons: Vec<String>,
    pub show_budget: bool,
    pub budget_max: u64,
    pub frame_rate_hz: f64,
    pub mode: String,
    pub page: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FrameMessage {
    pub frame_id: u64,
    /// Base64 of a PNG image.
    pub image: String,
    pub episode: u64,
    pub step: u32,
    pub score: f64,
    /// Machine-readable state shown in this frame; only sent when the
    /// project exposes observations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obs: Option<Vec<f64>>,
    /// Action whose execution produced this frame; only sent with `obs`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<ActionLabel>,
}

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase", rename_all_fields = "camelCase")]
pub enum ServerMessage {
    UiConfig(UiConfig),
    Frame(FrameMessage),
    BudgetUpdate {
        used: u64,
        max: u64,
    },
    Info {
        text: String,
    },
    SessionEnd {
        reason: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        redirect: Option<String>,
    },
    Error {
        code: ErrorCode,
        detail: String,
    },
}

impl ServerMessage {
    pub const TYPES: [&'static str; 6] = ["uiConfig", "frame", "budgetUpdate", "info", "sessionEnd", "error"];

    pub fn error(code: ErrorCode, detail: impl Into<String>) -> Self {
        ServerMessage::Error {
            code,
            detail: detail.into(),
        }
    }
}

pub fn encode_png_base64(frame: &Frame) -> String {
    let png = frame.to_png().expect("in-memory png encoding of a valid raster");
    base64::engine::general_purpose::STANDARD.encode(png)
}

/// Decodes a frame message image back into a raster.
pub fn decode_png_base64(image: &str) -> Result<Frame, ProtocolError> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(image)
        .map_err(|e| ProtocolError::new(ErrorCode::Malformed, format!("image is not base64: {e}")))?;
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let bad = |e: png::DecodingError| ProtocolError::new(ErrorCode::Malformed, format!("image is not a png: {e}"));
    let mut reader = decoder.read_info().map_err(bad)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ProtocolError::new(ErrorCode::Malformed, "png too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(ProtocolError::new(ErrorCode::Malformed, "png is not 8-bit RGB"));
    }
    buf.truncate(info.buffer_size());
    Ok(Frame {
        width: info.width,
        height: info.height,
        pixels: buf,
    })
}

pub fn encode_client(msg: &ClientMessage) -> String {
    serde_json::to_string(msg).expect("client messages always serialize")
}

pub fn encode_server(msg: &ServerMessage) -> String {
    serde_json::to_string(msg).expect("server messages always serialize")
}

/// Wire shape before range validation.
#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "camelCase", rename_all_fields = "camelCase")]
enum RawClient {
    Connect { project_id: String, user_id: String },
    Command { action: String, frame_id: i64 },
    Feedback { value: i64, frame_id: i64 },
    Click { x: i64, y: i64, frame_id: i64 },
    Control { verb: String },
    Disconnect {},
    Info { text: String },
}

fn envelope<'a>(text: &str, known: &[&str], value: &'a mut Value) -> Result<&'a str, ProtocolError> {
    *value = serde_json::from_str(text)
        .map_err(|e| ProtocolError::new(ErrorCode::Malformed, format!("not json: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| ProtocolError::new(ErrorCode::Malformed, "message is not a json object"))?;
    if let Some(v) = obj.get("v") {
        if v.as_u64() != Some(PROTOCOL_VERSION) {
            return Err(ProtocolError::new(
                ErrorCode::InvalidValue,
                format!("protocol version {v} is not {PROTOCOL_VERSION}"),
            ));
        }
    }
    let ty = obj
        .get("type")
        .ok_or_else(|| ProtocolError::new(ErrorCode::Malformed, "missing \"type\""))?
        .as_str()
        .ok_or_else(|| ProtocolError::new(ErrorCode::Malformed, "\"type\" is not a string"))?;
    if !known.contains(&ty) {
        return Err(ProtocolError::new(ErrorCode::UnknownType, format!("unknown message type {ty:?}")));
    }
    Ok(ty)
}

fn frame_id(raw: i64) -> Result<u64, ProtocolError> {
    u64::try_from(raw).map_err(|_| ProtocolError::new(ErrorCode::InvalidValue, format!("frameId {raw} is negative")))
}

/// Decodes a client message without a frame-size check on clicks.
pub fn decode_client(text: &str) -> Result<ClientMessage, ProtocolError> {
    decode_client_within(text, None)
}

/// Decodes a client message; with `bounds = Some((w, h))` click coordinates
/// must fall inside a `w x h` frame.
pub fn decode_client_within(text: &str, bounds: Option<(u32, u32)>) -> Result<ClientMessage, ProtocolError> {
    let mut value = Value::Null;
    envelope(text, &ClientMessage::TYPES, &mut value)?;
    let raw: RawClient = serde_json::from_value(value)
        .map_err(|e| ProtocolError::new(ErrorCode::Malformed, e.to_string()))?;
    let invalid = |detail: String| ProtocolError::new(ErrorCode::InvalidValue, detail);
    Ok(match raw {
        RawClient::Connect { project_id, user_id } => {
            if project_id.is_empty() || user_id.is_empty() {
                return Err(invalid("projectId and userId must be non-empty".into()));
            }
            ClientMessage::Connect { project_id, user_id }
        }
        RawClient::Command { action, frame_id: f } => ClientMessage::Command {
            action: action.parse().map_err(invalid)?,
            frame_id: frame_id(f)?,
        },
        RawClient::Feedback { value, frame_id: f } => ClientMessage::Feedback {
            value: Feedback::from_sign(value).ok_or_else(|| invalid(format!("feedback value {value} is not +1 or -1")))?,
            frame_id: frame_id(f)?,
        },
        RawClient::Click { x, y, frame_id: f } => {
            let (w, h) = bounds.unwrap_or((u32::MAX, u32::MAX));
            let in_range = |c: i64, limit: u32| c >= 0 && c < limit as i64;
            if !in_range(x, w) || !in_range(y, h) {
                return Err(invalid(format!("click ({x}, {y}) outside the {w}x{h} frame")));
            }
            ClientMessage::Click {
                x: x as u32,
                y: y as u32,
                frame_id: frame_id(f)?,
            }
        }
        RawClient::Control { verb } => ClientMessage::Control {
            verb: ControlVerb::parse(&verb).ok_or_else(|| invalid(format!("unknown control verb {verb:?}")))?,
        },
        RawClient::Disconnect {} => ClientMessage::Disconnect {},
        RawClient::Info { text } => ClientMessage::Info { text },
    })
}

pub fn decode_server(text: &str) -> Result<ServerMessage, ProtocolError> {
    let mut value = Value::Null;
    envelope(text, &ServerMessage::TYPES, &mut value)?;
    let msg: ServerMessage = serde_json::from_value(value)
        .map_err(|e| ProtocolError::new(ErrorCode::Malformed, e.to_string()))?;
    if let ServerMessage::BudgetUpdate { used, max } = msg {
        if used > max {
            return Err(ProtocolError::new(ErrorCode::InvalidValue, "budget used exceeds max"));
        }
    }
    Ok(msg)
}
