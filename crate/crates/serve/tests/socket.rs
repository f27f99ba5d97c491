use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio_tungstenite::tungstenite::Message;

use tapdecode::dnd::{Checkpoint, DndConfig, Model, NeuralDecoder, Variant};
use tapdecode_serve::{serve_on, ErrorCode, ServeState, ServerMessage};

fn model() -> Model {
    Model::Neural(NeuralDecoder::new(&DndConfig::new(Variant::Dnd, 1, 8), 11).unwrap())
}

async fn start() -> (String, std::sync::Arc<ServeState>) {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let state = ServeState::new(model());
    tokio::spawn(serve_on(listener, state.clone()));
    (format!("ws://{addr}/ws"), state)
}

async fn ask<S>(ws: &mut S, msg: &str) -> ServerMessage
where
    S: SinkExt<Message> + StreamExt<Item = Result<Message, tokio_tungstenite::tungstenite::Error>> + Unpin,
    <S as futures_util::Sink<Message>>::Error: std::fmt::Debug,
{
    ws.send(Message::Text(msg.into())).await.unwrap();
    loop {
        match ws.next().await.unwrap().unwrap() {
            Message::Text(t) => return serde_json::from_str(&t).unwrap(),
            _ => continue,
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn socket_round_trip() {
    let (url, _) = start().await;
    let (mut ws, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
    let r = ask(&mut ws, r#"{"type":"touch","x":0.5,"y":0.5,"t_ms":0}"#).await;
    assert!(matches!(r, ServerMessage::Error { code: ErrorCode::NoSession, .. }));
    let r = ask(&mut ws, r#"{"type":"hello","screen_mm":[555,338]}"#).await;
    assert!(matches!(r, ServerMessage::Ready { window: 64, dict_size: 31, .. }));
    for i in 0..5 {
        let msg = format!(r#"{{"type":"touch","x":0.{i},"y":0.5,"t_ms":{}}}"#, i * 100);
        let ServerMessage::Decoded { text, revised_from } = ask(&mut ws, &msg).await else {
            panic!("decoded reply expected");
        };
        assert_eq!(text.chars().count(), i + 1);
        assert!(revised_from <= i);
    }
    assert!(matches!(ask(&mut ws, r#"{"type":"nope"}"#).await, ServerMessage::Error { code: ErrorCode::UnknownType, .. }));
    assert_eq!(ask(&mut ws, r#"{"type":"reset"}"#).await, ServerMessage::Ok);
    assert_eq!(ask(&mut ws, r#"{"type":"bye"}"#).await, ServerMessage::Ok);
    loop {
        match ws.next().await {
            None | Some(Err(_)) | Some(Ok(Message::Close(_))) => break,
            Some(Ok(_)) => continue,
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_sessions_leave_the_model_untouched() {
    let (url, state) = start().await;
    let before = Checkpoint::new(state.model.clone(), 0, 0, Default::default()).to_bytes();
    let mut tasks = Vec::new();
    for s in 0..8 {
        let url = url.clone();
        tasks.push(tokio::spawn(async move {
            let (mut ws, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
            let ServerMessage::Ready { session_id, .. } = ask(&mut ws, r#"{"type":"hello"}"#).await else {
                panic!("ready expected");
            };
            for i in 0..30 {
                let x = ((s * 7 + i * 13) % 100) as f64 / 100.0;
                let r = ask(&mut ws, &format!(r#"{{"type":"touch","x":{x},"y":0.4}}"#)).await;
                let ServerMessage::Decoded { text, .. } = r else { panic!("{r:?}") };
                assert_eq!(text.chars().count(), i + 1);
            }
            ask(&mut ws, r#"{"type":"bye"}"#).await;
            session_id
        }));
    }
    let mut ids = Vec::new();
    for t in tasks {
        ids.push(t.await.unwrap());
    }
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 8);
    let after = Checkpoint::new(state.model.clone(), 0, 0, Default::default()).to_bytes();
    assert_eq!(before, after);
}
