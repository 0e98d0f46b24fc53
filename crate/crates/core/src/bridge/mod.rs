//! Binary scorer protocol so that out-of-process models (for example neural
//! networks behind a socket) can act as direct, channel or language model.
//! See [`protocol`] for the frame layout.

mod client;
pub mod protocol;
mod server;

use std::fmt;
use std::str::FromStr;

pub use client::{RemoteScorer, DEFAULT_TIMEOUT};
pub use server::{serve, serve_connection, spawn_tcp, ScorerSet, ServerHandle};

use crate::error::Error;

/// Where a scorer server listens: `tcp:host:port` or `stdio`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    Stdio,
}

impl FromStr for Endpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        if s == "stdio" {
            return Ok(Endpoint::Stdio);
        }
        match s.strip_prefix("tcp:") {
            Some(addr)
                if addr
                    .rsplit_once(':')
                    .is_some_and(|(h, p)| !h.is_empty() && p.parse::<u16>().is_ok()) =>
            {
                Ok(Endpoint::Tcp(addr.to_string()))
            }
            _ => Err(Error::invalid(format!(
                "bad endpoint `{s}`; expected tcp:host:port or stdio"
            ))),
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Tcp(addr) => write!(f, "tcp:{addr}"),
            Endpoint::Stdio => f.write_str("stdio"),
        }
    }
}

/// Connects to `endpoint` with the default 30 s per-batch timeout.
pub fn remote_scorer(endpoint: &Endpoint, vocab_size: usize) -> crate::Result<RemoteScorer> {
    RemoteScorer::connect(endpoint, vocab_size, DEFAULT_TIMEOUT)
}
