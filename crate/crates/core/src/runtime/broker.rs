//! The database node: shared replay buffer, latest weights per trainer,
//! pull-based batch serving.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::{Mutex, RwLock};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::MetricsSink;
use super::wire::{read_frame, write_frame, DbStatus, WireMessage};
use crate::error::Result;
use crate::replay::ReplayBuffer;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Role {
    Sampler(u32),
    Trainer(u32),
}

pub struct Broker {
    buffer: RwLock<ReplayBuffer>,
    weights: Mutex<HashMap<u32, (u64, Arc<Vec<u8>>)>>,
    metrics: Mutex<Option<MetricsSink>>,
    /// Live node ids and the connection holding each.
    registry: Mutex<HashMap<Role, u64>>,
    streams: Mutex<HashMap<u64, TcpStream>>,
    next_conn: AtomicU64,
    shutdown: AtomicBool,
}

impl Broker {
    pub fn new(capacity: usize, metrics_dir: Option<&Path>) -> Result<Arc<Self>> {
        Ok(Arc::new(Broker {
            buffer: RwLock::new(ReplayBuffer::new(capacity)?),
            weights: Mutex::new(HashMap::new()),
            metrics: Mutex::new(metrics_dir.map(MetricsSink::new).transpose()?),
            registry: Mutex::new(HashMap::new()),
            streams: Mutex::new(HashMap::new()),
            next_conn: AtomicU64::new(1),
            shutdown: AtomicBool::new(false),
        }))
    }

    /// Identifier for a new client connection.
    pub fn connect(&self) -> u64 {
        self.next_conn.fetch_add(1, Ordering::Relaxed)
    }

    /// Releases the node ids held by `conn`.
    pub fn disconnect(&self, conn: u64) {
        self.registry.lock().retain(|_, c| *c != conn);
        self.streams.lock().remove(&conn);
    }

    pub fn is_shutdown(&self) -> bool {
        self.shutdown.load(Ordering::SeqCst)
    }

    pub fn request_shutdown(&self) {
        self.shutdown.store(true, Ordering::SeqCst);
        for s in self.streams.lock().values() {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
    }

    pub fn status(&self) -> DbStatus {
        let buf = self.buffer.read();
        let mut versions: Vec<(u32, u64)> = self.weights.lock().iter().map(|(k, (v, _))| (*k, *v)).collect();
        versions.sort_unstable();
        DbStatus {
            transitions: buf.len() as u64,
            valid_starts: buf.valid_starts(),
            episodes_pushed: buf.episodes_pushed(),
            versions,
        }
    }

    /// Read access to the shared buffer.
    pub fn with_buffer<T>(&self, f: impl FnOnce(&ReplayBuffer) -> T) -> T {
        f(&self.buffer.read())
    }

    fn register(&self, conn: u64, role: Role) -> WireMessage {
        let mut reg = self.registry.lock();
        match reg.get(&role) {
            Some(&c) if c != conn => WireMessage::Error {
                message: format!("{role:?} is already connected"),
            },
            _ => {
                reg.insert(role, conn);
                WireMessage::Ack
            }
        }
    }

    /// Request/response core shared by every transport.
    pub fn handle(&self, conn: u64, msg: WireMessage) -> WireMessage {
        let err = |message: String| WireMessage::Error { message };
        match msg {
            WireMessage::HelloSampler { sampler_id, .. } => self.register(conn, Role::Sampler(sampler_id)),
            WireMessage::HelloTrainer { trainer_id } => self.register(conn, Role::Trainer(trainer_id)),
            WireMessage::WeightsPublish { trainer_id, version, checkpoint } => {
                let mut w = self.weights.lock();
                if let Some((have, _)) = w.get(&trainer_id) {
                    if version <= *have {
                        return err(format!("trainer {trainer_id} published version {version} after {have}"));
                    }
                }
                w.insert(trainer_id, (version, Arc::new(checkpoint)));
                WireMessage::Ack
            }
            WireMessage::WeightsRequest { trainer_id, have_version } => match self.weights.lock().get(&trainer_id) {
                Some((v, blob)) if *v > have_version => WireMessage::WeightsPublish {
                    trainer_id,
                    version: *v,
                    checkpoint: blob.as_ref().clone(),
                },
                _ => WireMessage::NoUpdate,
            },
            WireMessage::EpisodePush { episode } => match self.buffer.write().push_episode(episode) {
                Ok(()) => WireMessage::Ack,
                Err(e) => err(e.to_string()),
            },
            WireMessage::BatchRequest {
                batch_size,
                n_step,
                history_len,
                rng_seed,
                ..
            } => {
                if batch_size == 0 || n_step == 0 || history_len == 0 {
                    return err("batch_size, n_step and history_len must be positive".into());
                }
                let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
                match self.buffer.read().sample_batch(batch_size as usize, n_step as usize, history_len as usize, &mut rng) {
                    Ok(batch) => WireMessage::BatchResponse { batch },
                    Err(e) => err(e.to_string()),
                }
            }
            WireMessage::MetricsPush { record } => {
                if let Some(sink) = self.metrics.lock().as_mut() {
                    if let Err(e) = sink.write(record) {
                        log::warn!("metrics write failed: {e}");
                    }
                }
                WireMessage::Ack
            }
            WireMessage::StatusRequest => WireMessage::Status(self.status()),
            WireMessage::Shutdown => {
                self.shutdown.store(true, Ordering::SeqCst);
                WireMessage::Ack
            }
            other => err(format!("unexpected message type {}", other.type_byte())),
        }
    }

    fn serve_connection(self: &Arc<Self>, stream: TcpStream) {
        let conn = self.connect();
        let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
        let _ = stream.set_nodelay(true);
        let (Ok(read_half), Ok(registry_copy)) = (stream.try_clone(), stream.try_clone()) else {
            return;
        };
        self.streams.lock().insert(conn, registry_copy);
        let mut reader = BufReader::new(read_half);
        let mut writer = BufWriter::new(stream);
        loop {
            match read_frame(&mut reader) {
                Ok(Some(msg)) => {
                    let shutdown = matches!(msg, WireMessage::Shutdown);
                    let reply = self.handle(conn, msg);
                    if let Err(e) = write_frame(&mut writer, &reply) {
                        log::debug!("connection {peer} write failed: {e}");
                        break;
                    }
                    if shutdown {
                        self.request_shutdown();
                        break;
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    if !self.is_shutdown() {
                        log::warn!("dropping connection {peer}: {e}");
                    }
                    break;
                }
            }
        }
        self.disconnect(conn);
    }

    /// Accepts connections until a shutdown is requested, one thread per
    /// client.
    pub fn serve(self: &Arc<Self>, listener: TcpListener) -> Result<()> {
        listener.set_nonblocking(true)?;
        let mut handlers = Vec::new();
        while !self.is_shutdown() {
            match listener.accept() {
                Ok((stream, _)) => {
                    stream.set_nonblocking(false)?;
                    let me = Arc::clone(self);
                    handlers.push(std::thread::spawn(move || me.serve_connection(stream)));
                    handlers.retain(|h: &JoinHandle<()>| !h.is_finished());
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(5)),
                Err(e) => log::warn!("accept failed: {e}"),
            }
        }
        self.request_shutdown();
        for h in handlers {
            let _ = h.join();
        }
        Ok(())
    }

    /// Binds `addr` and serves on a background thread.
    pub fn spawn_tcp(self: &Arc<Self>, addr: &str) -> Result<(SocketAddr, JoinHandle<Result<()>>)> {
        let listener = TcpListener::bind(addr)?;
        let local = listener.local_addr()?;
        let me = Arc::clone(self);
        Ok((local, std::thread::spawn(move || me.serve(listener))))
    }
}

/// Runs a database node on `bind_addr` until a client sends `Shutdown`.
pub fn serve_db(bind_addr: &str, capacity: usize, metrics_dir: Option<&Path>) -> Result<()> {
    let broker = Broker::new(capacity, metrics_dir)?;
    let listener = TcpListener::bind(bind_addr)?;
    log::info!("db listening on {}", listener.local_addr()?);
    broker.serve(listener)
}
