use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::TcpStream;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use super::protocol::{decode, encode, read_frame, write_frame, Message, Method, Outcome, Payload};
use super::Endpoint;
use crate::error::{Error, Result};
use crate::scorers::{ChannelScorer, DirectScorer, LanguageModel};
use crate::vocab::TokenId;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

type Reply = Result<Vec<Outcome>>;

struct Shared {
    writer: Mutex<Box<dyn Write + Send>>,
    pending: Mutex<Pending>,
    next_id: AtomicU64,
}

#[derive(Default)]
struct Pending {
    waiting: HashMap<u64, Sender<Reply>>,
    /// Set once the connection is gone; every later call fails with it.
    closed: Option<String>,
}

/// A client connection whose three roles implement the in-process scorer
/// traits. Safe to share between threads; concurrent calls are pipelined
/// over the one connection and matched by request id.
#[derive(Clone)]
pub struct RemoteScorer {
    shared: Arc<Shared>,
    vocab_size: usize,
    timeout: Duration,
}

impl RemoteScorer {
    /// Connects to a TCP endpoint. `vocab_size` is the target vocabulary
    /// size the remote direct model and LM were built with.
    pub fn connect(endpoint: &Endpoint, vocab_size: usize, timeout: Duration) -> Result<Self> {
        match endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr).map_err(|e| Error::Transport(format!("cannot connect to {addr}: {e}")))?;
                stream.set_nodelay(true)?;
                let reader = stream.try_clone()?;
                Ok(Self::from_streams(reader, stream, vocab_size, timeout))
            }
            Endpoint::Stdio => Err(Error::invalid(
                "a client cannot connect to `stdio`; wire a subprocess with RemoteScorer::from_streams",
            )),
        }
    }

    /// Runs the protocol over an arbitrary byte stream pair, e.g. the pipes
    /// of a scorer subprocess.
    pub fn from_streams<R, W>(reader: R, writer: W, vocab_size: usize, timeout: Duration) -> Self
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let shared = Arc::new(Shared {
            writer: Mutex::new(Box::new(BufWriter::new(writer))),
            pending: Mutex::new(Pending::default()),
            next_id: AtomicU64::new(1),
        });
        let weak = Arc::downgrade(&shared);
        thread::spawn(move || {
            let mut reader = BufReader::new(reader);
            let reason = loop {
                let body = match read_frame(&mut reader) {
                    Ok(Some(b)) => b,
                    Ok(None) => break "connection closed by server".to_string(),
                    Err(e) => break format!("connection lost: {e}"),
                };
                let Some(shared) = weak.upgrade() else { return };
                let (id, reply) = match decode(&body) {
                    Ok(Message::Response { id, results }) => (Some(id), Ok(results)),
                    Ok(Message::Error { id, message }) => (id, Err(Error::Remote(message))),
                    Ok(_) => (
                        None,
                        Err(Error::Transport("unexpected message from server".into())),
                    ),
                    Err(e) => (
                        e.id,
                        Err(Error::Transport(format!("malformed frame: {}", e.message))),
                    ),
                };
                let mut pending = shared.pending.lock().unwrap();
                match id.and_then(|id| pending.waiting.remove(&id)) {
                    Some(tx) => {
                        let _ = tx.send(reply);
                    }
                    None => {
                        // An answer nobody asked for means the stream can no
                        // longer be trusted to pair requests with responses.
                        let reason = match reply {
                            Err(e) => e.to_string(),
                            Ok(_) => format!("response for unknown request id {id:?}"),
                        };
                        fail_all(&mut pending, reason);
                        return;
                    }
                }
            };
            if let Some(shared) = weak.upgrade() {
                fail_all(&mut shared.pending.lock().unwrap(), reason);
            }
        });
        RemoteScorer {
            shared,
            vocab_size,
            timeout,
        }
    }

    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    /// Sends one batch and waits for its answer.
    pub fn call(&self, method: Method, batch: Vec<Payload>) -> Result<Vec<Outcome>> {
        let n = batch.len();
        let id = self.shared.next_id.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = mpsc::channel();
        {
            let mut pending = self.shared.pending.lock().unwrap();
            if let Some(reason) = &pending.closed {
                return Err(Error::Transport(reason.clone()));
            }
            pending.waiting.insert(id, tx);
        }
        let body = encode(&Message::Request { id, method, batch });
        let sent = {
            let mut w = self.shared.writer.lock().unwrap();
            write_frame(&mut *w, &body)
        };
        if let Err(e) = sent {
            self.shared.pending.lock().unwrap().waiting.remove(&id);
            return Err(Error::Transport(format!("send failed: {e}")));
        }
        let results = match rx.recv_timeout(self.timeout) {
            Ok(reply) => reply?,
            Err(RecvTimeoutError::Timeout) => {
                self.shared.pending.lock().unwrap().waiting.remove(&id);
                return Err(Error::Transport(format!(
                    "no response to {} request within {:?}",
                    method.name(),
                    self.timeout
                )));
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(Error::Transport("connection lost".into()))
            }
        };
        if results.len() != n {
            return Err(Error::Transport(format!(
                "expected {n} results, got {}",
                results.len()
            )));
        }
        Ok(results)
    }

    /// Asks the server to stop. The connection is unusable afterwards.
    pub fn shutdown_server(&self) -> Result<()> {
        let mut w = self.shared.writer.lock().unwrap();
        write_frame(&mut *w, &encode(&Message::Shutdown))
            .map_err(|e| Error::Transport(e.to_string()))
    }

    fn scores(&self, method: Method, batch: Vec<Payload>) -> Result<Vec<f64>> {
        self.call(method, batch)?
            .into_iter()
            .map(|o| match o {
                Outcome::Score(s) => Ok(s),
                Outcome::TopK(_) => {
                    Err(Error::Transport("expected scores, got a top-k list".into()))
                }
            })
            .collect()
    }

    /// Remote top-k, one request for all prefixes.
    pub fn top_k_batch(
        &self,
        source: &[TokenId],
        prefixes: &[Vec<TokenId>],
        k: usize,
    ) -> Result<Vec<Vec<(TokenId, f64)>>> {
        let k = u32::try_from(k).map_err(|_| Error::invalid("k does not fit the protocol"))?;
        let batch = prefixes
            .iter()
            .map(|p| Payload::TopK {
                k,
                source: source.to_vec(),
                prefix: p.clone(),
            })
            .collect();
        self.call(Method::DirectTopK, batch)?
            .into_iter()
            .map(|o| match o {
                Outcome::TopK(items) => Ok(items),
                Outcome::Score(_) => Err(Error::Transport(
                    "expected a top-k list, got a score".into(),
                )),
            })
            .collect()
    }
}

fn fail_all(pending: &mut Pending, reason: String) {
    for (_, tx) in pending.waiting.drain() {
        let _ = tx.send(Err(Error::Transport(reason.clone())));
    }
    pending.closed.get_or_insert(reason);
}

impl DirectScorer for RemoteScorer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_logprobs(&self, source: &[TokenId], prefix: &[TokenId]) -> Result<Vec<f64>> {
        Ok(self
            .next_logprobs_batch(source, &[prefix.to_vec()])?
            .remove(0))
    }

    /// A full top-k per prefix scattered back into dense vectors; ids the
    /// server leaves out are impossible (`-inf`).
    fn next_logprobs_batch(
        &self,
        source: &[TokenId],
        prefixes: &[Vec<TokenId>],
    ) -> Result<Vec<Vec<f64>>> {
        let lists = self.top_k_batch(source, prefixes, self.vocab_size)?;
        lists
            .into_iter()
            .map(|items| {
                let mut dense = vec![f64::NEG_INFINITY; self.vocab_size];
                for (tok, lp) in items {
                    let slot = dense.get_mut(tok as usize).ok_or_else(|| {
                        Error::VocabMismatch(format!("remote returned token id {tok}"))
                    })?;
                    *slot = lp;
                }
                Ok(dense)
            })
            .collect()
    }

    fn top_k(
        &self,
        source: &[TokenId],
        prefix: &[TokenId],
        k: usize,
    ) -> Result<Vec<(TokenId, f64)>> {
        Ok(self.top_k_batch(source, &[prefix.to_vec()], k)?.remove(0))
    }
}

impl ChannelScorer for RemoteScorer {
    fn channel_score(&self, source: &[TokenId], target_prefix: &[TokenId]) -> Result<f64> {
        Ok(self.channel_scores(source, &[target_prefix.to_vec()])?[0])
    }

    fn channel_scores(&self, source: &[TokenId], prefixes: &[Vec<TokenId>]) -> Result<Vec<f64>> {
        let batch = prefixes
            .iter()
            .map(|t| Payload::Channel {
                source: source.to_vec(),
                target: t.clone(),
            })
            .collect();
        self.scores(Method::Channel, batch)
    }
}

impl LanguageModel for RemoteScorer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn prefix_logprob(&self, tokens: &[TokenId]) -> Result<f64> {
        Ok(self.prefix_logprobs(&[tokens.to_vec()])?[0])
    }

    fn prefix_logprobs(&self, sequences: &[Vec<TokenId>]) -> Result<Vec<f64>> {
        self.scores(
            Method::LmSeq,
            sequences.iter().cloned().map(Payload::Seq).collect(),
        )
    }
}
