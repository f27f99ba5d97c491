//! Per-channel protocol state machine.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use tapdecode::alphabet::DICT_SIZE;
use tapdecode::dataset::TouchPoint;
use tapdecode::dnd::{decode_stream, DecodeState, Decoder, Model};

use crate::protocol::{parse, ClientMessage, ErrorCode, ServerMessage};

#[derive(Clone, Debug)]
pub struct Session {
    pub id: String,
    pub state: DecodeState,
    pub screen_mm: Option<[f64; 2]>,
    pub created_at: Instant,
    /// Transcript sent with the previous reply.
    transcript: Vec<char>,
}

/// Shared, read-only serving context.
#[derive(Debug)]
pub struct ServeState {
    pub model: Model,
    next_id: AtomicU64,
}

impl ServeState {
    pub fn new(model: Model) -> Arc<Self> {
        Arc::new(Self {
            model,
            next_id: AtomicU64::new(1),
        })
    }

    fn session_id(&self) -> String {
        format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed))
    }
}

/// One reply plus whether the channel should close after sending it.
#[derive(Clone, Debug, PartialEq)]
pub struct Reply {
    pub message: ServerMessage,
    pub close: bool,
}

impl From<ServerMessage> for Reply {
    fn from(message: ServerMessage) -> Self {
        Reply { message, close: false }
    }
}

/// Handles the messages of one channel in order.
#[derive(Debug)]
pub struct Handler {
    shared: Arc<ServeState>,
    session: Option<Session>,
}

fn first_difference(a: &[char], b: &[char]) -> usize {
    a.iter().zip(b).position(|(x, y)| x != y).unwrap_or(a.len().min(b.len()))
}

impl Handler {
    pub fn new(shared: Arc<ServeState>) -> Self {
        Self { shared, session: None }
    }

    pub fn session(&self) -> Option<&Session> {
        self.session.as_ref()
    }

    pub fn handle(&mut self, text: &str) -> Reply {
        match parse(text) {
            Ok(m) => self.handle_message(m),
            Err(e) => e.into(),
        }
    }

    pub fn handle_message(&mut self, msg: ClientMessage) -> Reply {
        let model = &self.shared.model;
        match msg {
            ClientMessage::Hello { screen_mm } => {
                let session = Session {
                    id: self.shared.session_id(),
                    state: DecodeState::new(model.window()),
                    screen_mm,
                    created_at: Instant::now(),
                    transcript: Vec::new(),
                };
                let reply = ServerMessage::Ready {
                    session_id: session.id.clone(),
                    window: session.state.window(),
                    dict_size: DICT_SIZE,
                };
                tracing::debug!(session = %session.id, "session opened");
                self.session = Some(session);
                reply.into()
            }
            ClientMessage::Touch { x, y, t_ms } => {
                let Some(s) = self.session.as_mut() else {
                    return ServerMessage::error(ErrorCode::NoSession, "send hello first").into();
                };
                if !(x.is_finite() && y.is_finite() && (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y)) {
                    return ServerMessage::error(ErrorCode::BadTouch, format!("({x}, {y}) is outside [0, 1]")).into();
                }
                let p = match t_ms {
                    Some(t) => TouchPoint::at(x, y, t),
                    None => TouchPoint::new(x, y),
                };
                match decode_stream(model, &mut s.state, p) {
                    Ok(text) => {
                        let transcript: Vec<char> = s.state.text().chars().collect();
                        let revised_from = first_difference(&s.transcript, &transcript);
                        s.transcript = transcript;
                        ServerMessage::Decoded { text, revised_from }.into()
                    }
                    Err(e) => ServerMessage::error(ErrorCode::Internal, e.to_string()).into(),
                }
            }
            ClientMessage::Reset => match self.session.as_mut() {
                Some(s) => {
                    s.state.reset();
                    s.transcript.clear();
                    ServerMessage::Ok.into()
                }
                None => ServerMessage::error(ErrorCode::NoSession, "send hello first").into(),
            },
            ClientMessage::Bye => match self.session.take() {
                Some(s) => {
                    tracing::debug!(session = %s.id, "session closed");
                    Reply {
                        message: ServerMessage::Ok,
                        close: true,
                    }
                }
                None => ServerMessage::error(ErrorCode::NoSession, "send hello first").into(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tapdecode::dnd::{DndConfig, NeuralDecoder, Variant};

    fn shared() -> Arc<ServeState> {
        let cfg = DndConfig::new(Variant::Dnd, 1, 8);
        ServeState::new(Model::Neural(NeuralDecoder::new(&cfg, 3).unwrap()))
    }

    fn touch(x: f64, y: f64) -> String {
        format!(r#"{{"type":"touch","x":{x},"y":{y},"t_ms":0}}"#)
    }

    #[test]
    fn handshake_reports_window_and_dictionary() {
        let mut h = Handler::new(shared());
        let r = h.handle(r#"{"type":"hello","screen_mm":[555,338]}"#);
        assert_eq!(
            r.message,
            ServerMessage::Ready {
                session_id: "s1".into(),
                window: 64,
                dict_size: 31
            }
        );
        assert_eq!(h.session().unwrap().screen_mm, Some([555.0, 338.0]));
    }

    #[test]
    fn touch_before_hello_is_rejected() {
        let mut h = Handler::new(shared());
        for m in [touch(0.5, 0.5).as_str(), r#"{"type":"reset"}"#, r#"{"type":"bye"}"#] {
            assert!(matches!(
                h.handle(m).message,
                ServerMessage::Error {
                    code: ErrorCode::NoSession,
                    ..
                }
            ));
        }
    }

    #[test]
    fn errors_keep_the_session() {
        let mut h = Handler::new(shared());
        h.handle(r#"{"type":"hello"}"#);
        h.handle(&touch(0.2, 0.3));
        assert!(matches!(
            h.handle(&touch(1.5, 0.3)).message,
            ServerMessage::Error {
                code: ErrorCode::BadTouch,
                ..
            }
        ));
        assert!(matches!(
            h.handle("{").message,
            ServerMessage::Error {
                code: ErrorCode::Malformed,
                ..
            }
        ));
        assert_eq!(h.session().unwrap().state.buffered().len(), 1);
        let ServerMessage::Decoded { text, revised_from } = h.handle(&touch(0.7, 0.3)).message else {
            panic!("decoded reply expected");
        };
        assert_eq!(text.chars().count(), 2);
        assert!(revised_from <= 1);
    }

    #[test]
    fn reset_and_bye() {
        let mut h = Handler::new(shared());
        h.handle(r#"{"type":"hello"}"#);
        h.handle(&touch(0.2, 0.3));
        assert_eq!(h.handle(r#"{"type":"reset"}"#).message, ServerMessage::Ok);
        let ServerMessage::Decoded { text, revised_from } = h.handle(&touch(0.2, 0.3)).message else {
            panic!("decoded reply expected");
        };
        assert_eq!((text.chars().count(), revised_from), (1, 0));
        let r = h.handle(r#"{"type":"bye"}"#);
        assert_eq!(r, Reply { message: ServerMessage::Ok, close: true });
        assert!(h.session().is_none());
    }

    #[test]
    fn revision_of_the_first_symbol_reports_zero() {
        // Search for a pair of touches where the second one changes how the
        // bidirectional model reads the first.
        let grid: Vec<(f64, f64)> = (0..36).map(|i| ((i % 6) as f64 / 5.0, (i / 6) as f64 / 5.0)).collect();
        let mut found = false;
        'outer: for seed in 0..4 {
            let cfg = DndConfig::new(Variant::Dnd, 2, 16);
            let state = ServeState::new(Model::Neural(NeuralDecoder::new(&cfg, seed).unwrap()));
            for &(x1, y1) in &grid {
                for &(x2, y2) in &grid {
                    let mut h = Handler::new(state.clone());
                    h.handle(r#"{"type":"hello"}"#);
                    let ServerMessage::Decoded { text: first, .. } = h.handle(&touch(x1, y1)).message else {
                        panic!()
                    };
                    let ServerMessage::Decoded { text, revised_from } = h.handle(&touch(x2, y2)).message else {
                        panic!()
                    };
                    if first.chars().next() != text.chars().next() {
                        assert_eq!(revised_from, 0);
                        found = true;
                        break 'outer;
                    }
                    assert_eq!(revised_from, 1);
                }
            }
        }
        assert!(found, "no flipping pair on the grid");
    }

    #[test]
    fn replies_replay_offline() {
        let state = shared();
        let mut h = Handler::new(state.clone());
        h.handle(r#"{"type":"hello"}"#);
        let mut offline = DecodeState::new(state.model.window());
        for i in 0..80 {
            let (x, y) = ((i * 37 % 100) as f64 / 100.0, (i * 53 % 100) as f64 / 100.0);
            let ServerMessage::Decoded { text, .. } = h.handle(&touch(x, y)).message else {
                panic!()
            };
            let expected = decode_stream(&state.model, &mut offline, TouchPoint::at(x, y, 0.0)).unwrap();
            assert_eq!(text, expected);
        }
    }
}
