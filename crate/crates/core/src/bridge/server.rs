use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::protocol::{decode, encode, read_frame, write_frame, Message, Method, Outcome, Payload};
use super::Endpoint;
use crate::error::{Error, Result};
use crate::scorers::{ChannelScorer, DirectScorer, LanguageModel};

/// The models a server exposes. Methods whose model is absent answer with an
/// error response.
#[derive(Clone, Default)]
pub struct ScorerSet {
    pub direct: Option<Arc<dyn DirectScorer>>,
    pub channel: Option<Arc<dyn ChannelScorer>>,
    pub lm: Option<Arc<dyn LanguageModel>>,
}

impl ScorerSet {
    fn answer(&self, method: Method, batch: &[Payload]) -> Result<Vec<Outcome>> {
        let missing = || Error::Remote(format!("method {} is not served", method.name()));
        match method {
            Method::LmSeq => {
                let lm = self.lm.as_ref().ok_or_else(missing)?;
                let seqs: Vec<_> = batch
                    .iter()
                    .map(|p| match p {
                        Payload::Seq(s) => s.clone(),
                        _ => unreachable!("decoder checks item kinds"),
                    })
                    .collect();
                Ok(lm
                    .prefix_logprobs(&seqs)?
                    .into_iter()
                    .map(Outcome::Score)
                    .collect())
            }
            Method::Channel => {
                let channel = self.channel.as_ref().ok_or_else(missing)?;
                // Consecutive items with the same source go out as one batch.
                let mut out = Vec::with_capacity(batch.len());
                let mut i = 0;
                while i < batch.len() {
                    let Payload::Channel { source, .. } = &batch[i] else {
                        unreachable!()
                    };
                    let mut targets = Vec::new();
                    while let Some(Payload::Channel { source: s, target }) = batch.get(i) {
                        if s != source {
                            break;
                        }
                        targets.push(target.clone());
                        i += 1;
                    }
                    out.extend(
                        channel
                            .channel_scores(source, &targets)?
                            .into_iter()
                            .map(Outcome::Score),
                    );
                }
                Ok(out)
            }
            Method::DirectTopK => {
                let direct = self.direct.as_ref().ok_or_else(missing)?;
                batch
                    .iter()
                    .map(|p| match p {
                        Payload::TopK { k, source, prefix } => {
                            Ok(Outcome::TopK(direct.top_k(source, prefix, *k as usize)?))
                        }
                        _ => unreachable!("decoder checks item kinds"),
                    })
                    .collect()
            }
        }
    }
}

/// Serves one byte stream until it closes or a shutdown message arrives.
/// Requests run concurrently; responses are written as they complete, so
/// they may be out of order. Returns true if the peer asked for shutdown.
pub fn serve_connection<R, W>(scorers: Arc<ScorerSet>, reader: R, writer: W) -> Result<bool>
where
    R: Read,
    W: Write + Send + 'static,
{
    let (tx, rx) = mpsc::channel::<Vec<u8>>();
    let writer_thread = thread::spawn(move || -> std::io::Result<()> {
        let mut w = BufWriter::new(writer);
        for body in rx {
            write_frame(&mut w, &body)?;
        }
        Ok(())
    });

    // A private pool keeps server work off the global pool, where in-process
    // clients may be blocked waiting for these very responses.
    let pool = rayon::ThreadPoolBuilder::new()
        .thread_name(|i| format!("scorer-{i}"))
        .build()
        .map_err(|e| Error::Transport(format!("cannot start worker pool: {e}")))?;
    let mut reader = BufReader::new(reader);
    let mut shutdown = false;
    loop {
        let body = match read_frame(&mut reader) {
            Ok(Some(b)) => b,
            Ok(None) => break,
            Err(_) => break,
        };
        match decode(&body) {
            Ok(Message::Request { id, method, batch }) => {
                let tx = tx.clone();
                let scorers = Arc::clone(&scorers);
                pool.spawn(move || {
                    let msg = match scorers.answer(method, &batch) {
                        Ok(results) => Message::Response { id, results },
                        Err(e) => Message::Error {
                            id: Some(id),
                            message: e.to_string(),
                        },
                    };
                    let _ = tx.send(encode(&msg));
                });
            }
            Ok(Message::Shutdown) => {
                shutdown = true;
                break;
            }
            Ok(other) => {
                let id = match other {
                    Message::Response { id, .. } => Some(id),
                    Message::Error { id, .. } => id,
                    _ => None,
                };
                let _ = tx.send(encode(&Message::Error {
                    id,
                    message: "servers only accept requests".into(),
                }));
            }
            Err(e) if e.id.is_some() || e.message.contains("version") => {
                let _ = tx.send(encode(&Message::Error {
                    id: e.id,
                    message: e.message,
                }));
            }
            Err(_) => break,
        }
    }
    drop(tx);
    writer_thread
        .join()
        .map_err(|_| Error::Transport("writer thread panicked".into()))??;
    Ok(shutdown)
}

/// A TCP server running on background threads.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    connections: Arc<Mutex<Vec<TcpStream>>>,
    accept_thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> Endpoint {
        Endpoint::Tcp(self.addr.to_string())
    }

    /// Abruptly closes every open connection and stops accepting new ones,
    /// as if the server process had died.
    pub fn kill(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for c in self.connections.lock().unwrap().drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }

    /// Blocks until a client sends a shutdown message.
    pub fn wait(mut self) {
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.kill();
    }
}

/// Binds `addr` (use port 0 for an ephemeral port) and serves in the background.
pub fn spawn_tcp(scorers: Arc<ScorerSet>, addr: &str) -> Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let connections = Arc::new(Mutex::new(Vec::new()));
    let accept_thread = {
        let stop = Arc::clone(&stop);
        let connections = Arc::clone(&connections);
        thread::spawn(move || accept_loop(listener, scorers, stop, connections))
    };
    Ok(ServerHandle {
        addr: local,
        stop,
        connections,
        accept_thread: Some(accept_thread),
    })
}

fn accept_loop(
    listener: TcpListener,
    scorers: Arc<ScorerSet>,
    stop: Arc<AtomicBool>,
    connections: Arc<Mutex<Vec<TcpStream>>>,
) {
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let _ = stream.set_nonblocking(false);
                let _ = stream.set_nodelay(true);
                let (Ok(reader), Ok(keep), Ok(closer)) =
                    (stream.try_clone(), stream.try_clone(), stream.try_clone())
                else {
                    continue;
                };
                connections.lock().unwrap().push(keep);
                let scorers = Arc::clone(&scorers);
                let stop = Arc::clone(&stop);
                thread::spawn(move || {
                    if let Ok(true) = serve_connection(scorers, reader, stream) {
                        stop.store(true, Ordering::SeqCst);
                    }
                    // Other handles to this socket stay registered for kill(),
                    // so hang up explicitly.
                    let _ = closer.shutdown(Shutdown::Both);
                });
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(5))
            }
            Err(_) => thread::sleep(Duration::from_millis(5)),
        }
    }
}

/// Runs a server on `endpoint` in the foreground until a shutdown message.
pub fn serve(scorers: Arc<ScorerSet>, endpoint: &Endpoint) -> Result<()> {
    match endpoint {
        Endpoint::Stdio => {
            serve_connection(scorers, std::io::stdin(), std::io::stdout())?;
            Ok(())
        }
        Endpoint::Tcp(addr) => {
            spawn_tcp(scorers, addr)?.wait();
            Ok(())
        }
    }
}
