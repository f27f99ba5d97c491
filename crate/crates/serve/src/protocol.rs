//! JSON messages exchanged over one session channel.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClientMessage {
    Hello {
        #[serde(default)]
        screen_mm: Option<[f64; 2]>,
    },
    Touch {
        x: f64,
        y: f64,
        #[serde(default)]
        t_ms: Option<f64>,
    },
    Reset,
    Bye,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    Ready {
        session_id: String,
        window: usize,
        dict_size: usize,
    },
    /// `text` is the decode of the current window. `revised_from` is the
    /// lowest position of the session transcript (committed symbols followed
    /// by the window) that differs from the previous reply.
    Decoded {
        text: String,
        revised_from: usize,
    },
    Ok,
    Error {
        code: ErrorCode,
        detail: String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorCode {
    /// A session message arrived before `hello`.
    NoSession,
    /// Not JSON, or a known type with missing or mistyped fields.
    Malformed,
    UnknownType,
    /// Touch coordinates outside [0, 1] or not finite.
    BadTouch,
    /// The model failed to decode.
    Internal,
}

impl ServerMessage {
    pub fn error(code: ErrorCode, detail: impl Into<String>) -> Self {
        ServerMessage::Error {
            code,
            detail: detail.into(),
        }
    }
}

const KNOWN: [&str; 4] = ["hello", "touch", "reset", "bye"];

/// Parses one text frame, mapping failures to the protocol's error replies.
pub fn parse(text: &str) -> Result<ClientMessage, ServerMessage> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ServerMessage::error(ErrorCode::Malformed, e.to_string()))?;
    let ty = match value.get("type") {
        Some(serde_json::Value::String(t)) => t.clone(),
        _ => return Err(ServerMessage::error(ErrorCode::Malformed, "missing string field \"type\"")),
    };
    if !KNOWN.contains(&ty.as_str()) {
        return Err(ServerMessage::error(ErrorCode::UnknownType, format!("unknown message type {ty:?}")));
    }
    serde_json::from_value(value).map_err(|e| ServerMessage::error(ErrorCode::Malformed, format!("{ty}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_names() {
        let m = parse(r#"{"type":"touch","x":0.5,"y":0.25,"t_ms":12}"#).unwrap();
        assert_eq!(
            m,
            ClientMessage::Touch {
                x: 0.5,
                y: 0.25,
                t_ms: Some(12.0)
            }
        );
        assert_eq!(
            parse(r#"{"type":"hello","screen_mm":[555,338]}"#).unwrap(),
            ClientMessage::Hello {
                screen_mm: Some([555.0, 338.0])
            }
        );
        let r = serde_json::to_string(&ServerMessage::Decoded {
            text: "hi".into(),
            revised_from: 1,
        })
        .unwrap();
        assert_eq!(r, r#"{"type":"decoded","text":"hi","revised_from":1}"#);
        let e = serde_json::to_string(&ServerMessage::error(ErrorCode::NoSession, "x")).unwrap();
        assert_eq!(e, r#"{"type":"error","code":"no-session","detail":"x"}"#);
    }

    #[test]
    fn parse_errors_carry_codes() {
        let code = |s: &str| match parse(s) {
            Err(ServerMessage::Error { code, .. }) => code,
            other => panic!("{other:?}"),
        };
        assert_eq!(code("not json"), ErrorCode::Malformed);
        assert_eq!(code(r#"{"x":1}"#), ErrorCode::Malformed);
        assert_eq!(code(r#"{"type":"touch","x":"a","y":0}"#), ErrorCode::Malformed);
        assert_eq!(code(r#"{"type":"swipe"}"#), ErrorCode::UnknownType);
    }
}
