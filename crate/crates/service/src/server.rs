//! One listening port for every client kind: WebSocket, newline-delimited
//! JSON over raw TCP, and plain HTTP for the static UI assets.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, ErrorKind, Read, Write};
use std::net::{Ipv4Addr, SocketAddr, TcpListener, TcpStream};
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use thiserror::Error;
use tungstenite::Message;

use polyvm_core::VmHandle;

use crate::protocol::Dispatcher;

const INDEX_HTML: &str = include_str!("../assets/index.html");
const MAX_HEADER: usize = 16 * 1024;
const POLL: Duration = Duration::from_millis(10);

#[derive(Clone, Debug, Default)]
pub struct ServerConfig {
    /// 0 picks a free port.
    pub port: u16,
    /// Directory to serve instead of the built-in page.
    pub assets: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error(transparent)]
    Io(#[from] io::Error),
}

type Clients = Arc<Mutex<HashMap<u64, Sender<String>>>>;

#[derive(Clone)]
struct Shared {
    vm: VmHandle,
    dispatcher: Arc<Mutex<Dispatcher>>,
    clients: Clients,
    assets: Option<Arc<PathBuf>>,
    next_client: Arc<AtomicU64>,
}

impl Shared {
    fn register(&self) -> (u64, Sender<String>, Receiver<String>) {
        let (tx, rx) = mpsc::channel();
        let id = self.next_client.fetch_add(1, Ordering::Relaxed);
        self.clients.lock().unwrap().insert(id, tx.clone());
        (id, tx, rx)
    }

    fn unregister(&self, id: u64) {
        self.clients.lock().unwrap().remove(&id);
    }

    /// Queues `text` for the VM lane; the reply goes to `out`.
    fn dispatch(&self, text: String, out: &Sender<String>) -> bool {
        let dispatcher = Arc::clone(&self.dispatcher);
        let out = out.clone();
        self.vm
            .submit(move |vm| {
                let reply = dispatcher.lock().unwrap().handle_text(vm, &text);
                let _ = out.send(reply.to_string());
            })
            .is_ok()
    }
}

/// A running server. Dropping it leaves the server running; call
/// [`Server::shutdown`] to stop accepting.
pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl Server {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn port(&self) -> u16 {
        self.addr.port()
    }

    /// Blocks until the accept loop ends.
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

/// Listens on localhost and serves the VM behind `vm`.
pub fn serve(vm: VmHandle, config: ServerConfig) -> Result<Server, ServeError> {
    let listener = TcpListener::bind((Ipv4Addr::LOCALHOST, config.port)).map_err(|e| match e.kind() {
        ErrorKind::AddrInUse => ServeError::PortInUse(config.port),
        _ => ServeError::Io(e),
    })?;
    let addr = listener.local_addr()?;
    let events = vm.subscribe().map_err(|e| ServeError::Io(io::Error::new(ErrorKind::BrokenPipe, e)))?;
    let shared = Shared {
        vm,
        dispatcher: Arc::new(Mutex::new(Dispatcher::new())),
        clients: Arc::new(Mutex::new(HashMap::new())),
        assets: config.assets.map(Arc::new),
        next_client: Arc::new(AtomicU64::new(1)),
    };
    let relay = shared.clone();
    thread::Builder::new().name("polyvm-relay".into()).spawn(move || {
        for event in events {
            let dispatcher = Arc::clone(&relay.dispatcher);
            let clients = Arc::clone(&relay.clients);
            let sent = relay.vm.submit(move |vm| {
                let push = dispatcher.lock().unwrap().push_for(vm, &event).to_string();
                clients.lock().unwrap().retain(|_, c| c.send(push.clone()).is_ok());
            });
            if sent.is_err() {
                break;
            }
        }
    })?;
    let stop = Arc::new(AtomicBool::new(false));
    let stopping = Arc::clone(&stop);
    let accept = thread::Builder::new().name("polyvm-accept".into()).spawn(move || {
        for stream in listener.incoming() {
            if stopping.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let shared = shared.clone();
            let _ = thread::Builder::new().name("polyvm-conn".into()).spawn(move || {
                if let Err(e) = connection(stream, &shared) {
                    log::debug!("connection ended: {e}");
                }
            });
        }
    })?;
    log::info!("listening on {addr}");
    Ok(Server { addr, stop, accept: Some(accept) })
}

#[derive(Debug, PartialEq, Eq)]
enum Kind {
    Lines,
    Http(usize),
    WebSocket,
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

/// Looks at the first bytes without consuming them.
fn sniff(stream: &TcpStream) -> io::Result<Option<Kind>> {
    let mut buf = vec![0u8; MAX_HEADER];
    let mut last = usize::MAX;
    loop {
        let n = stream.peek(&mut buf)?;
        if n == 0 {
            return Ok(None);
        }
        let data = &buf[..n];
        let http = [&b"GET "[..], &b"HEAD "[..]];
        if http.iter().any(|m| m.starts_with(data) && data.len() < m.len()) {
            // Too short to tell yet.
        } else if !http.iter().any(|m| data.starts_with(m)) {
            return Ok(Some(Kind::Lines));
        } else if let Some(end) = find(data, b"\r\n\r\n") {
            let head = String::from_utf8_lossy(&data[..end]).to_ascii_lowercase();
            let upgrade = head.lines().any(|l| l.starts_with("upgrade:") && l.contains("websocket"));
            return Ok(Some(if upgrade { Kind::WebSocket } else { Kind::Http(end + 4) }));
        } else if n == buf.len() {
            return Ok(Some(Kind::Http(n)));
        }
        if n == last {
            thread::sleep(POLL);
        }
        last = n;
    }
}

fn connection(stream: TcpStream, shared: &Shared) -> io::Result<()> {
    match sniff(&stream)? {
        None => Ok(()),
        Some(Kind::Lines) => lines_client(stream, shared),
        Some(Kind::Http(len)) => http_client(stream, len, shared),
        Some(Kind::WebSocket) => websocket_client(stream, shared),
    }
}

fn lines_client(stream: TcpStream, shared: &Shared) -> io::Result<()> {
    let (id, tx, rx) = shared.register();
    let mut writer = stream.try_clone()?;
    let write_thread = thread::spawn(move || {
        for line in rx {
            if writer.write_all(line.as_bytes()).and_then(|_| writer.write_all(b"\n")).and_then(|_| writer.flush()).is_err() {
                break;
            }
        }
    });
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    let result = loop {
        buf.clear();
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) => break Ok(()),
            Ok(_) => {
                let text = String::from_utf8_lossy(&buf);
                if text.trim().is_empty() {
                    continue;
                }
                if !shared.dispatch(text.into_owned(), &tx) {
                    break Ok(());
                }
            }
            Err(e) => break Err(e),
        }
    };
    shared.unregister(id);
    drop(tx);
    let _ = write_thread.join();
    result
}

fn websocket_client(stream: TcpStream, shared: &Shared) -> io::Result<()> {
    let mut ws = tungstenite::accept(stream).map_err(|e| io::Error::new(ErrorKind::InvalidData, e.to_string()))?;
    ws.get_mut().set_read_timeout(Some(POLL))?;
    let (id, tx, rx) = shared.register();
    let result = loop {
        match ws.read() {
            Ok(Message::Text(text)) => {
                shared.dispatch(text, &tx);
            }
            Ok(Message::Binary(bytes)) => {
                shared.dispatch(String::from_utf8_lossy(&bytes).into_owned(), &tx);
            }
            Ok(Message::Close(_)) => break Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => break Ok(()),
            Err(e) => break Err(io::Error::other(e.to_string())),
        }
        let mut failed = None;
        while let Ok(out) = rx.try_recv() {
            if let Err(e) = ws.send(Message::text(out)) {
                failed = Some(e);
                break;
            }
        }
        if let Some(e) = failed {
            break Err(io::Error::other(e.to_string()));
        }
    };
    shared.unregister(id);
    let _ = ws.flush();
    result
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "html" | "htm" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript; charset=utf-8",
        "css" => "text/css; charset=utf-8",
        "json" => "application/json",
        "svg" => "image/svg+xml",
        "png" => "image/png",
        "ico" => "image/x-icon",
        "txt" => "text/plain; charset=utf-8",
        _ => "application/octet-stream",
    }
}

/// Maps a request path onto the asset directory, refusing anything that
/// would leave it.
fn asset_path(request: &str) -> Option<PathBuf> {
    let path = request.split(['?', '#']).next().unwrap_or("/");
    let relative = path.trim_start_matches('/');
    let relative = if relative.is_empty() || relative.ends_with('/') { format!("{relative}index.html") } else { relative.to_string() };
    let candidate = PathBuf::from(relative);
    candidate.components().all(|c| matches!(c, Component::Normal(_))).then_some(candidate)
}

fn lookup_asset(shared: &Shared, request: &str) -> Option<(Vec<u8>, &'static str)> {
    let relative = asset_path(request)?;
    match &shared.assets {
        Some(dir) => {
            let full = dir.join(&relative);
            std::fs::read(&full).ok().map(|bytes| (bytes, content_type(&full)))
        }
        None => (relative == Path::new("index.html")).then(|| (INDEX_HTML.as_bytes().to_vec(), content_type(&relative))),
    }
}

fn http_client(mut stream: TcpStream, header_len: usize, shared: &Shared) -> io::Result<()> {
    let mut head = vec![0u8; header_len];
    stream.read_exact(&mut head)?;
    let head = String::from_utf8_lossy(&head);
    let mut parts = head.lines().next().unwrap_or("").split_whitespace();
    let method = parts.next().unwrap_or("");
    let target = parts.next().unwrap_or("/");
    let (status, body, kind) = match lookup_asset(shared, target) {
        Some((body, kind)) => ("200 OK", body, kind),
        None => ("404 Not Found", b"not found\n".to_vec(), "text/plain; charset=utf-8"),
    };
    let header = format!(
        "HTTP/1.1 {status}\r\nContent-Type: {kind}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    );
    stream.write_all(header.as_bytes())?;
    if method != "HEAD" {
        stream.write_all(&body)?;
    }
    stream.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn asset_paths_stay_inside() {
        assert_eq!(asset_path("/"), Some(PathBuf::from("index.html")));
        assert_eq!(asset_path("/app.js?v=2"), Some(PathBuf::from("app.js")));
        assert_eq!(asset_path("/ui/"), Some(PathBuf::from("ui/index.html")));
        assert_eq!(asset_path("/../secret"), None);
        assert_eq!(asset_path("/a/../../b"), None);
    }

    #[test]
    fn content_types() {
        assert_eq!(content_type(Path::new("a.js")), "text/javascript; charset=utf-8");
        assert_eq!(content_type(Path::new("a.bin")), "application/octet-stream");
    }
}
