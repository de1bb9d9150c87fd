use std::io::{BufReader, BufWriter};
use std::net::TcpStream;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use super::broker::Broker;
use super::wire::{decode_frame, encode_frame, read_frame, write_frame, WireMessage};
use crate::error::{Error, Result};

/// Request/response channel to the database. Every request gets exactly
/// one reply; protocol-level refusals come back as `WireMessage::Error`.
pub trait Transport: Send {
    fn call(&mut self, msg: &WireMessage) -> Result<WireMessage>;
}

/// Same-process channel. Messages still pass through the frame codec, so
/// the bytes handled equal those on a socket.
pub struct InProcess {
    broker: Arc<Broker>,
    conn: u64,
}

impl InProcess {
    pub fn new(broker: Arc<Broker>) -> Self {
        let conn = broker.connect();
        InProcess { broker, conn }
    }
}

impl Transport for InProcess {
    fn call(&mut self, msg: &WireMessage) -> Result<WireMessage> {
        let request = decode_frame(&encode_frame(msg)?)?;
        let reply = self.broker.handle(self.conn, request);
        decode_frame(&encode_frame(&reply)?)
    }
}

impl Drop for InProcess {
    fn drop(&mut self) {
        self.broker.disconnect(self.conn);
    }
}

/// Exponential backoff between reconnect attempts.
#[derive(Clone, Copy, Debug)]
pub struct Backoff {
    pub initial: Duration,
    pub max: Duration,
    /// Give up after this long without a connection; `None` retries forever.
    pub give_up_after: Option<Duration>,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff {
            initial: Duration::from_millis(50),
            max: Duration::from_secs(2),
            give_up_after: None,
        }
    }
}

type Conn = (BufReader<TcpStream>, BufWriter<TcpStream>);

/// TCP client that reconnects with backoff and re-sends its hello after
/// every reconnect.
pub struct TcpTransport {
    addr: String,
    conn: Option<Conn>,
    hello: Option<WireMessage>,
    backoff: Backoff,
    stop: Option<Arc<AtomicBool>>,
    reconnects: u64,
}

fn open(addr: &str) -> Result<Conn> {
    let s = TcpStream::connect(addr)?;
    s.set_nodelay(true)?;
    Ok((BufReader::new(s.try_clone()?), BufWriter::new(s)))
}

fn exchange(conn: &mut Conn, msg: &WireMessage) -> Result<WireMessage> {
    write_frame(&mut conn.1, msg)?;
    read_frame(&mut conn.0)?.ok_or_else(|| Error::Protocol("connection closed by db".into()))
}

impl TcpTransport {
    /// Connects and introduces the node. A refused hello (an id already in
    /// use) is a startup error.
    pub fn connect(addr: &str, hello: Option<WireMessage>, backoff: Backoff, stop: Option<Arc<AtomicBool>>) -> Result<Self> {
        let mut t = TcpTransport {
            addr: addr.to_string(),
            conn: None,
            hello,
            backoff,
            stop,
            reconnects: 0,
        };
        t.reconnect(true)?;
        Ok(t)
    }

    pub fn reconnects(&self) -> u64 {
        self.reconnects
    }

    fn stopped(&self) -> bool {
        self.stop.as_ref().is_some_and(|s| s.load(Ordering::SeqCst))
    }

    fn reconnect(&mut self, first: bool) -> Result<()> {
        self.conn = None;
        let start = Instant::now();
        let mut delay = self.backoff.initial;
        loop {
            let attempt = open(&self.addr).and_then(|mut c| {
                if let Some(h) = &self.hello {
                    match exchange(&mut c, h)? {
                        WireMessage::Ack => {}
                        WireMessage::Error { message } => {
                            return Err(Error::Config {
                                key: "node id".into(),
                                message,
                            })
                        }
                        other => return Err(Error::Protocol(format!("unexpected hello reply type {}", other.type_byte()))),
                    }
                }
                Ok(c)
            });
            match attempt {
                Ok(c) => {
                    self.conn = Some(c);
                    if !first {
                        self.reconnects += 1;
                    }
                    return Ok(());
                }
                // the first hello decides whether our id is free
                Err(e @ Error::Config { .. }) if first => return Err(e),
                Err(e) => {
                    if self.stopped() {
                        return Err(Error::Protocol(format!("stopped while reconnecting: {e}")));
                    }
                    if self.backoff.give_up_after.is_some_and(|g| start.elapsed() >= g) {
                        return Err(e);
                    }
                    log::debug!("db at {} unreachable ({e}); retrying in {delay:?}", self.addr);
                    std::thread::sleep(delay);
                    delay = (delay * 2).min(self.backoff.max);
                }
            }
        }
    }
}

impl Transport for TcpTransport {
    fn call(&mut self, msg: &WireMessage) -> Result<WireMessage> {
        loop {
            if self.conn.is_none() {
                self.reconnect(false)?;
            }
            let conn = self.conn.as_mut().expect("connected");
            match exchange(conn, msg) {
                Ok(reply) => return Ok(reply),
                Err(e) => {
                    log::warn!("lost db connection ({e}); reconnecting");
                    self.conn = None;
                    if self.stopped() {
                        return Err(e);
                    }
                }
            }
        }
    }
}

/// Sends `Shutdown` to the db at `addr`.
pub fn shutdown_db(addr: &str) -> Result<()> {
    let mut c = open(addr)?;
    exchange(&mut c, &WireMessage::Shutdown)?;
    Ok(())
}
