//! Wire format.
//!
//! A frame is a 4-byte big-endian body length followed by the body. The body
//! starts with the protocol version byte and continues with tag-length-value
//! fields: a 1-byte tag, a 4-byte big-endian value length, then the value.
//! All integers are big-endian; scores are IEEE-754 binary64 bit patterns, so
//! they round-trip exactly.
//!
//! | tag    | field        | value                                                    |
//! |--------|--------------|----------------------------------------------------------|
//! | `0x01` | kind         | u8: 1 request, 2 response, 3 error, 4 shutdown           |
//! | `0x02` | id           | u64                                                      |
//! | `0x03` | method       | u8: 1 `lm_seq`, 2 `channel`, 3 `direct_topk`             |
//! | `0x10` | sequence     | u32 ids                                                  |
//! | `0x11` | channel item | u32 n, n source ids, u32 m, m target ids                 |
//! | `0x12` | top-k item   | u32 k, u32 n, n source ids, u32 m, m prefix ids          |
//! | `0x20` | score        | f64                                                      |
//! | `0x21` | top-k result | repeated (u32 id, f64)                                   |
//! | `0x30` | error        | UTF-8 message                                            |
//!
//! A request carries kind, id, method and one item field per batch element,
//! in batch order. A response carries kind, id and one `0x20` or `0x21`
//! field per element. An `lm_seq` request with id 7 scoring the single
//! sequence `[3, 4]`:
//!
//! ```text
//! 00 00 00 27                     body length 39
//! 01                              version
//! 01 00 00 00 01 01               kind = request
//! 02 00 00 00 08 00 00 00 00 00 00 00 07   id = 7
//! 03 00 00 00 01 01               method = lm_seq
//! 10 00 00 00 08 00 00 00 03 00 00 00 04   sequence [3, 4]
//! ```
//!
//! and a response scoring it -1.5:
//!
//! ```text
//! 00 00 00 21                     body length 33
//! 01                              version
//! 01 00 00 00 01 02               kind = response
//! 02 00 00 00 08 00 00 00 00 00 00 00 07   id = 7
//! 20 00 00 00 08 bf f8 00 00 00 00 00 00   score -1.5
//! ```

use std::io::{self, Read, Write};

use crate::vocab::TokenId;

pub const VERSION: u8 = 1;

/// Frames larger than this are rejected before allocation.
pub const MAX_FRAME: usize = 256 << 20;

const TAG_KIND: u8 = 0x01;
const TAG_ID: u8 = 0x02;
const TAG_METHOD: u8 = 0x03;
const TAG_SEQ: u8 = 0x10;
const TAG_CHANNEL_ITEM: u8 = 0x11;
const TAG_TOPK_ITEM: u8 = 0x12;
const TAG_SCORE: u8 = 0x20;
const TAG_TOPK_RESULT: u8 = 0x21;
const TAG_ERROR: u8 = 0x30;

const KIND_REQUEST: u8 = 1;
const KIND_RESPONSE: u8 = 2;
const KIND_ERROR: u8 = 3;
const KIND_SHUTDOWN: u8 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    LmSeq,
    Channel,
    DirectTopK,
}

impl Method {
    fn code(self) -> u8 {
        match self {
            Method::LmSeq => 1,
            Method::Channel => 2,
            Method::DirectTopK => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            1 => Some(Method::LmSeq),
            2 => Some(Method::Channel),
            3 => Some(Method::DirectTopK),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::LmSeq => "lm_seq",
            Method::Channel => "channel",
            Method::DirectTopK => "direct_topk",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Seq(Vec<TokenId>),
    Channel {
        source: Vec<TokenId>,
        target: Vec<TokenId>,
    },
    TopK {
        k: u32,
        source: Vec<TokenId>,
        prefix: Vec<TokenId>,
    },
}

impl Payload {
    fn method(&self) -> Method {
        match self {
            Payload::Seq(_) => Method::LmSeq,
            Payload::Channel { .. } => Method::Channel,
            Payload::TopK { .. } => Method::DirectTopK,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Score(f64),
    TopK(Vec<(TokenId, f64)>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Request {
        id: u64,
        method: Method,
        batch: Vec<Payload>,
    },
    Response {
        id: u64,
        results: Vec<Outcome>,
    },
    Error {
        id: Option<u64>,
        message: String,
    },
    Shutdown,
}

/// Why a body could not be decoded, with the request id when it was readable.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeError {
    pub id: Option<u64>,
    pub message: String,
}

fn field(out: &mut Vec<u8>, tag: u8, value: &[u8]) {
    out.push(tag);
    out.extend_from_slice(&(value.len() as u32).to_be_bytes());
    out.extend_from_slice(value);
}

fn put_ids(out: &mut Vec<u8>, ids: &[TokenId]) {
    for id in ids {
        out.extend_from_slice(&id.to_be_bytes());
    }
}

fn put_counted(out: &mut Vec<u8>, ids: &[TokenId]) {
    out.extend_from_slice(&(ids.len() as u32).to_be_bytes());
    put_ids(out, ids);
}

/// Serializes a message body (without the length prefix).
pub fn encode(msg: &Message) -> Vec<u8> {
    let mut out = vec![VERSION];
    match msg {
        Message::Request { id, method, batch } => {
            field(&mut out, TAG_KIND, &[KIND_REQUEST]);
            field(&mut out, TAG_ID, &id.to_be_bytes());
            field(&mut out, TAG_METHOD, &[method.code()]);
            for p in batch {
                let mut v = Vec::new();
                let tag = match p {
                    Payload::Seq(ids) => {
                        put_ids(&mut v, ids);
                        TAG_SEQ
                    }
                    Payload::Channel { source, target } => {
                        put_counted(&mut v, source);
                        put_counted(&mut v, target);
                        TAG_CHANNEL_ITEM
                    }
                    Payload::TopK { k, source, prefix } => {
                        v.extend_from_slice(&k.to_be_bytes());
                        put_counted(&mut v, source);
                        put_counted(&mut v, prefix);
                        TAG_TOPK_ITEM
                    }
                };
                field(&mut out, tag, &v);
            }
        }
        Message::Response { id, results } => {
            field(&mut out, TAG_KIND, &[KIND_RESPONSE]);
            field(&mut out, TAG_ID, &id.to_be_bytes());
            for r in results {
                match r {
                    Outcome::Score(s) => field(&mut out, TAG_SCORE, &s.to_bits().to_be_bytes()),
                    Outcome::TopK(items) => {
                        let mut v = Vec::with_capacity(items.len() * 12);
                        for (tok, lp) in items {
                            v.extend_from_slice(&tok.to_be_bytes());
                            v.extend_from_slice(&lp.to_bits().to_be_bytes());
                        }
                        field(&mut out, TAG_TOPK_RESULT, &v);
                    }
                }
            }
        }
        Message::Error { id, message } => {
            field(&mut out, TAG_KIND, &[KIND_ERROR]);
            if let Some(id) = id {
                field(&mut out, TAG_ID, &id.to_be_bytes());
            }
            field(&mut out, TAG_ERROR, message.as_bytes());
        }
        Message::Shutdown => field(&mut out, TAG_KIND, &[KIND_SHUTDOWN]),
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        if self.buf.len() < n {
            return Err("truncated field".into());
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn ids(&mut self, n: usize) -> Result<Vec<TokenId>, String> {
        if self.buf.len() / 4 < n {
            return Err("truncated id list".into());
        }
        (0..n).map(|_| self.u32()).collect()
    }

    fn counted(&mut self) -> Result<Vec<TokenId>, String> {
        let n = self.u32()? as usize;
        self.ids(n)
    }

    fn done(&self) -> Result<(), String> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err("trailing bytes in field".into())
        }
    }
}

/// Parses a message body. Errors carry the id if the id field was readable.
pub fn decode(body: &[u8]) -> Result<Message, DecodeError> {
    let mut id = None;
    decode_inner(body, &mut id).map_err(|message| DecodeError { id, message })
}

fn decode_inner(body: &[u8], id: &mut Option<u64>) -> Result<Message, String> {
    let (&version, rest) = body.split_first().ok_or("empty frame")?;
    let mut fields = Vec::new();
    let mut cur = Cursor { buf: rest };
    while !cur.buf.is_empty() {
        let tag = cur.take(1)?[0];
        let len = cur.u32()? as usize;
        let value = cur.take(len)?;
        if tag == TAG_ID && id.is_none() && len == 8 {
            *id = Some(u64::from_be_bytes(value.try_into().unwrap()));
        }
        fields.push((tag, value));
    }
    if version != VERSION {
        return Err(format!(
            "unsupported protocol version {version}, expected {VERSION}"
        ));
    }

    let mut it = fields.into_iter().peekable();
    let kind = match it.next() {
        Some((TAG_KIND, [k])) => *k,
        _ => return Err("frame must start with a kind field".into()),
    };
    let read_id = |it: &mut std::iter::Peekable<std::vec::IntoIter<(u8, &[u8])>>,
                   required: bool| {
        match it.peek() {
            Some(&(TAG_ID, v)) => {
                it.next();
                let v: [u8; 8] = v.try_into().map_err(|_| "id must be 8 bytes".to_string())?;
                Ok(Some(u64::from_be_bytes(v)))
            }
            _ if required => Err("missing id field".to_string()),
            _ => Ok(None),
        }
    };

    let msg = match kind {
        KIND_REQUEST => {
            let id = read_id(&mut it, true)?.unwrap();
            let method = match it.next() {
                Some((TAG_METHOD, [m])) => {
                    Method::from_code(*m).ok_or_else(|| format!("unknown method {m}"))?
                }
                _ => return Err("missing method field".into()),
            };
            let mut batch = Vec::new();
            for (tag, value) in it {
                let mut c = Cursor { buf: value };
                let p = match tag {
                    TAG_SEQ => {
                        if value.len() % 4 != 0 {
                            return Err("sequence length is not a multiple of 4".into());
                        }
                        Payload::Seq(c.ids(value.len() / 4)?)
                    }
                    TAG_CHANNEL_ITEM => Payload::Channel {
                        source: c.counted()?,
                        target: c.counted()?,
                    },
                    TAG_TOPK_ITEM => Payload::TopK {
                        k: c.u32()?,
                        source: c.counted()?,
                        prefix: c.counted()?,
                    },
                    other => return Err(format!("unexpected tag 0x{other:02x} in request")),
                };
                c.done()?;
                if p.method() != method {
                    return Err(format!(
                        "{} item in a {} request",
                        p.method().name(),
                        method.name()
                    ));
                }
                batch.push(p);
            }
            Message::Request { id, method, batch }
        }
        KIND_RESPONSE => {
            let id = read_id(&mut it, true)?.unwrap();
            let mut results = Vec::new();
            for (tag, value) in it {
                let mut c = Cursor { buf: value };
                let r = match tag {
                    TAG_SCORE => Outcome::Score(f64::from_bits(c.u64()?)),
                    TAG_TOPK_RESULT => {
                        if value.len() % 12 != 0 {
                            return Err("top-k result length is not a multiple of 12".into());
                        }
                        let mut items = Vec::with_capacity(value.len() / 12);
                        while !c.buf.is_empty() {
                            items.push((c.u32()?, f64::from_bits(c.u64()?)));
                        }
                        Outcome::TopK(items)
                    }
                    other => return Err(format!("unexpected tag 0x{other:02x} in response")),
                };
                c.done()?;
                results.push(r);
            }
            Message::Response { id, results }
        }
        KIND_ERROR => {
            let id = read_id(&mut it, false)?;
            let message = match it.next() {
                Some((TAG_ERROR, v)) => String::from_utf8(v.to_vec())
                    .map_err(|_| "error text is not UTF-8".to_string())?,
                _ => return Err("missing error text".into()),
            };
            if it.next().is_some() {
                return Err("unexpected field after error text".into());
            }
            Message::Error { id, message }
        }
        KIND_SHUTDOWN => {
            if it.next().is_some() {
                return Err("unexpected field in shutdown".into());
            }
            Message::Shutdown
        }
        other => return Err(format!("unknown message kind {other}")),
    };
    Ok(msg)
}

pub fn write_frame(w: &mut impl Write, body: &[u8]) -> io::Result<()> {
    if body.len() > MAX_FRAME {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "frame too large",
        ));
    }
    let mut buf = Vec::with_capacity(4 + body.len());
    buf.extend_from_slice(&(body.len() as u32).to_be_bytes());
    buf.extend_from_slice(body);
    w.write_all(&buf)?;
    w.flush()
}

/// Reads one frame body. `Ok(None)` on a clean end of stream before the
/// length prefix.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "frame too large",
        ));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}
