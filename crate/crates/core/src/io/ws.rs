//! WebSocket telemetry and control server.
//!
//! The pipeline hands messages to [`WsServer::broadcast`], which never
//! blocks: each client has a bounded queue that drops its oldest entry on
//! overflow. Each connection runs on its own thread, which drains that queue
//! and forwards incoming `scaling` messages to the control channel.

use std::collections::VecDeque;
use std::io;
use std::net::{Ipv4Addr, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use tungstenite::{Message, WebSocket};

use super::protocol::{parse_client_message, ClientMessage, ServerMessage};

pub const DEFAULT_CLIENT_QUEUE: usize = 256;
const POLL: Duration = Duration::from_millis(5);

struct ClientQueue {
    messages: Mutex<VecDeque<Arc<str>>>,
    closed: AtomicBool,
}

struct Shared {
    clients: Mutex<Vec<Arc<ClientQueue>>>,
    greeting: Arc<str>,
    capacity: usize,
    dropped: AtomicU64,
    shutdown: AtomicBool,
}

pub struct WsServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    accept: Option<JoinHandle<()>>,
}

impl WsServer {
    /// Binds `port` on all interfaces (0 picks a free port). Every new client
    /// first receives `greeting`.
    pub fn bind(port: u16, greeting: &ServerMessage, capacity: usize) -> io::Result<(Self, Receiver<ClientMessage>)> {
        let listener = TcpListener::bind((Ipv4Addr::UNSPECIFIED, port))?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            clients: Mutex::new(Vec::new()),
            greeting: greeting.to_json().into(),
            capacity: capacity.max(1),
            dropped: AtomicU64::new(0),
            shutdown: AtomicBool::new(false),
        });
        let (tx, rx) = mpsc::channel();
        let accept_shared = Arc::clone(&shared);
        let accept = std::thread::Builder::new()
            .name("ws-accept".into())
            .spawn(move || accept_loop(listener, accept_shared, tx))?;
        Ok((
            Self {
                addr,
                shared,
                accept: Some(accept),
            },
            rx,
        ))
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn client_count(&self) -> usize {
        let mut clients = self.shared.clients.lock().expect("client list");
        clients.retain(|c| !c.closed.load(Ordering::Acquire));
        clients.len()
    }

    /// Messages discarded because a client fell behind.
    pub fn dropped(&self) -> u64 {
        self.shared.dropped.load(Ordering::Relaxed)
    }

    pub fn broadcast(&self, msg: &ServerMessage) {
        let text: Arc<str> = msg.to_json().into();
        let clients = self.shared.clients.lock().expect("client list");
        for client in clients.iter() {
            if client.closed.load(Ordering::Acquire) {
                continue;
            }
            let mut q = client.messages.lock().expect("client queue");
            if q.len() >= self.shared.capacity {
                q.pop_front();
                let n = self.shared.dropped.fetch_add(1, Ordering::Relaxed) + 1;
                if n.is_power_of_two() {
                    log::warn!("slow UI client: {n} messages dropped so far");
                }
            }
            q.push_back(Arc::clone(&text));
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shared.shutdown.store(true, Ordering::Release);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for WsServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>, control: Sender<ClientMessage>) {
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    while !shared.shutdown.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let queue = Arc::new(ClientQueue {
                    messages: Mutex::new(VecDeque::new()),
                    closed: AtomicBool::new(false),
                });
                shared.clients.lock().expect("client list").push(Arc::clone(&queue));
                let worker_shared = Arc::clone(&shared);
                let tx = control.clone();
                let spawned = std::thread::Builder::new()
                    .name(format!("ws-{peer}"))
                    .spawn(move || {
                        if let Err(e) = serve_client(stream, &queue, &worker_shared, &tx) {
                            log::debug!("client {peer} disconnected: {e}");
                        }
                        queue.closed.store(true, Ordering::Release);
                    });
                match spawned {
                    Ok(h) => workers.push(h),
                    Err(e) => log::error!("cannot spawn client thread: {e}"),
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => std::thread::sleep(POLL),
            Err(e) => {
                log::error!("accept failed: {e}");
                std::thread::sleep(POLL);
            }
        }
    }
    for h in workers {
        let _ = h.join();
    }
}

fn would_block(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut))
}

fn serve_client(
    stream: TcpStream,
    queue: &ClientQueue,
    shared: &Shared,
    control: &Sender<ClientMessage>,
) -> Result<(), tungstenite::Error> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut ws: WebSocket<TcpStream> = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(err) => err,
        tungstenite::HandshakeError::Interrupted(_) => tungstenite::Error::ConnectionClosed,
    })?;
    ws.get_ref().set_read_timeout(Some(POLL))?;
    ws.send(Message::Text(shared.greeting.to_string()))?;

    loop {
        if shared.shutdown.load(Ordering::Acquire) {
            let _ = ws.close(None);
            let _ = ws.flush();
            return Ok(());
        }
        let batch: Vec<Arc<str>> = queue.messages.lock().expect("client queue").drain(..).collect();
        for text in batch {
            ws.write(Message::Text(text.to_string()))?;
        }
        match ws.flush() {
            Ok(()) => {}
            Err(e) if would_block(&e) => {}
            Err(e) => return Err(e),
        }
        match ws.read() {
            Ok(Message::Text(text)) => {
                if let Some(msg) = parse_client_message(&text) {
                    // receiver gone means the session ended; keep serving telemetry
                    let _ = control.send(msg);
                }
            }
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(e) if would_block(&e) => {}
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Target;
    use crate::io::protocol::SoloStatus;

    fn connect(addr: SocketAddr) -> WebSocket<tungstenite::stream::MaybeTlsStream<TcpStream>> {
        let url = format!("ws://127.0.0.1:{}", addr.port());
        tungstenite::connect(url).expect("connect").0
    }

    fn read_json(ws: &mut WebSocket<tungstenite::stream::MaybeTlsStream<TcpStream>>) -> serde_json::Value {
        loop {
            if let Message::Text(t) = ws.read().expect("read") {
                return serde_json::from_str(&t).unwrap();
            }
        }
    }

    fn greeting() -> ServerMessage {
        ServerMessage::Piece {
            solo: vec![],
            accomp: vec![],
        }
    }

    #[test]
    fn greets_broadcasts_and_accepts_control() {
        let (server, control) = WsServer::bind(0, &greeting(), 16).unwrap();
        let mut ws = connect(server.local_addr());
        assert_eq!(read_json(&mut ws)["type"], "piece");
        while server.client_count() == 0 {
            std::thread::sleep(POLL);
        }
        server.broadcast(&ServerMessage::SoloNote {
            pitch: 60,
            velocity: 70,
            time: 0.0,
            status: SoloStatus::Match,
        });
        let v = read_json(&mut ws);
        assert_eq!(v["type"], "solo_note");
        assert_eq!(v["status"], "match");

        ws.send(Message::Text(r#"{"type":"bogus"}"#.into())).unwrap();
        ws.send(Message::Text(r#"{"type":"scaling","target":"bp","value":1.5}"#.into()))
            .unwrap();
        let msg = control.recv_timeout(Duration::from_secs(5)).unwrap();
        assert_eq!(
            msg,
            ClientMessage::Scaling {
                target: Target::BpRatio,
                value: 1.5
            }
        );
        drop(ws);
        server.shutdown();
    }

    #[test]
    fn slow_client_drops_oldest_without_blocking() {
        let (server, _control) = WsServer::bind(0, &greeting(), 4).unwrap();
        // a raw TCP client that never completes the handshake never drains its queue
        let _stalled = TcpStream::connect(server.local_addr()).unwrap();
        while server.client_count() == 0 {
            std::thread::sleep(POLL);
        }
        let t0 = std::time::Instant::now();
        for i in 0..1000 {
            server.broadcast(&ServerMessage::Tempo {
                beat_period: 0.5,
                score_beat: f64::from(i),
            });
        }
        assert!(t0.elapsed() < Duration::from_secs(1));
        assert_eq!(server.dropped(), 996);
    }

    #[test]
    fn busy_port_is_reported() {
        let (server, _rx) = WsServer::bind(0, &greeting(), 4).unwrap();
        let err = WsServer::bind(server.local_addr().port(), &greeting(), 4).err().unwrap();
        assert_eq!(err.kind(), io::ErrorKind::AddrInUse);
    }
}
