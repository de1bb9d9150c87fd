//! Framed binary protocol: `"CRL1"`, type byte, `u32` payload length,
//! payload, then a CRC32 of everything before it. Integers little-endian.

use std::io::{Read, Write};

use crate::codec::Reader;
use crate::error::{Error, Result};
use crate::replay::{Batch, Episode};

use super::metrics::MetricsRecord;

pub const MAGIC: &[u8; 4] = b"CRL1";
/// Frames above this payload size are rejected before allocating.
pub const MAX_PAYLOAD: usize = 1 << 30;
const HEADER: usize = 9;

/// Buffer and weights summary returned for a [`WireMessage::StatusRequest`].
#[derive(Clone, Debug, PartialEq, Default)]
pub struct DbStatus {
    /// Transitions stored.
    pub transitions: u64,
    /// Sampleable start indices.
    pub valid_starts: u64,
    pub episodes_pushed: u64,
    /// Latest published version per trainer id.
    pub versions: Vec<(u32, u64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum WireMessage {
    HelloSampler { sampler_id: u32, trainer_id: u32 },
    /// Checkpoint blob in the agent checkpoint format.
    WeightsPublish { trainer_id: u32, version: u64, checkpoint: Vec<u8> },
    WeightsRequest { trainer_id: u32, have_version: u64 },
    EpisodePush { episode: Episode },
    BatchRequest { trainer_id: u32, batch_size: u32, n_step: u32, history_len: u32, rng_seed: u64 },
    BatchResponse { batch: Batch },
    MetricsPush { record: MetricsRecord },
    Shutdown,
    HelloTrainer { trainer_id: u32 },
    Ack,
    StatusRequest,
    Status(DbStatus),
    Error { message: String },
    /// Reply to a weights request when nothing newer than `have_version` exists.
    NoUpdate,
}

impl WireMessage {
    pub fn type_byte(&self) -> u8 {
        match self {
            WireMessage::HelloSampler { .. } => 1,
            WireMessage::WeightsPublish { .. } => 2,
            WireMessage::WeightsRequest { .. } => 3,
            WireMessage::EpisodePush { .. } => 4,
            WireMessage::BatchRequest { .. } => 5,
            WireMessage::BatchResponse { .. } => 6,
            WireMessage::MetricsPush { .. } => 7,
            WireMessage::Shutdown => 8,
            WireMessage::HelloTrainer { .. } => 9,
            WireMessage::Ack => 10,
            WireMessage::StatusRequest => 11,
            WireMessage::Status(_) => 12,
            WireMessage::Error { .. } => 13,
            WireMessage::NoUpdate => 14,
        }
    }

    pub fn payload(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        match self {
            WireMessage::HelloSampler { sampler_id, trainer_id } => {
                out.extend_from_slice(&sampler_id.to_le_bytes());
                out.extend_from_slice(&trainer_id.to_le_bytes());
            }
            WireMessage::WeightsPublish { trainer_id, version, checkpoint } => {
                out.extend_from_slice(&trainer_id.to_le_bytes());
                out.extend_from_slice(&version.to_le_bytes());
                out.extend_from_slice(checkpoint);
            }
            WireMessage::WeightsRequest { trainer_id, have_version } => {
                out.extend_from_slice(&trainer_id.to_le_bytes());
                out.extend_from_slice(&have_version.to_le_bytes());
            }
            WireMessage::EpisodePush { episode } => {
                out.extend_from_slice(&episode.sampler_id.to_le_bytes());
                out.extend_from_slice(&episode.policy_version.to_le_bytes());
                out.extend_from_slice(&episode.env_seed.to_le_bytes());
                out.extend_from_slice(&episode.encode());
            }
            WireMessage::BatchRequest {
                trainer_id,
                batch_size,
                n_step,
                history_len,
                rng_seed,
            } => {
                for v in [trainer_id, batch_size, n_step, history_len] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(&rng_seed.to_le_bytes());
            }
            WireMessage::BatchResponse { batch } => out = batch.encode(),
            WireMessage::MetricsPush { record } => out = serde_json::to_vec(record)?,
            WireMessage::Shutdown | WireMessage::Ack | WireMessage::StatusRequest | WireMessage::NoUpdate => {}
            WireMessage::HelloTrainer { trainer_id } => out.extend_from_slice(&trainer_id.to_le_bytes()),
            WireMessage::Status(s) => {
                for v in [s.transitions, s.valid_starts, s.episodes_pushed] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(&(s.versions.len() as u32).to_le_bytes());
                for (id, v) in &s.versions {
                    out.extend_from_slice(&id.to_le_bytes());
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            WireMessage::Error { message } => out.extend_from_slice(message.as_bytes()),
        }
        Ok(out)
    }

    pub fn from_payload(kind: u8, payload: &[u8]) -> Result<Self> {
        let mut r = Reader::new(payload);
        let msg = match kind {
            1 => WireMessage::HelloSampler {
                sampler_id: r.u32()?,
                trainer_id: r.u32()?,
            },
            2 => {
                let trainer_id = r.u32()?;
                let version = r.u64()?;
                let checkpoint = r.bytes(r.remaining())?.to_vec();
                WireMessage::WeightsPublish { trainer_id, version, checkpoint }
            }
            3 => WireMessage::WeightsRequest {
                trainer_id: r.u32()?,
                have_version: r.u64()?,
            },
            4 => {
                let sampler_id = r.u32()?;
                let policy_version = r.u64()?;
                let env_seed = r.u64()?;
                let mut episode = Episode::read(&mut r)?;
                episode.sampler_id = sampler_id;
                episode.policy_version = policy_version;
                episode.env_seed = env_seed;
                WireMessage::EpisodePush { episode }
            }
            5 => WireMessage::BatchRequest {
                trainer_id: r.u32()?,
                batch_size: r.u32()?,
                n_step: r.u32()?,
                history_len: r.u32()?,
                rng_seed: r.u64()?,
            },
            6 => {
                let batch = Batch::decode(r.bytes(r.remaining())?)?;
                WireMessage::BatchResponse { batch }
            }
            7 => WireMessage::MetricsPush {
                record: serde_json::from_slice(r.bytes(r.remaining())?)?,
            },
            8 => WireMessage::Shutdown,
            9 => WireMessage::HelloTrainer { trainer_id: r.u32()? },
            10 => WireMessage::Ack,
            11 => WireMessage::StatusRequest,
            12 => {
                let transitions = r.u64()?;
                let valid_starts = r.u64()?;
                let episodes_pushed = r.u64()?;
                let n = r.u32()? as usize;
                if n > r.remaining() / 12 {
                    return Err(Error::Protocol("status version list exceeds payload".into()));
                }
                let versions = (0..n).map(|_| Ok((r.u32()?, r.u64()?))).collect::<Result<_>>()?;
                WireMessage::Status(DbStatus {
                    transitions,
                    valid_starts,
                    episodes_pushed,
                    versions,
                })
            }
            13 => WireMessage::Error {
                message: String::from_utf8_lossy(r.bytes(r.remaining())?).into_owned(),
            },
            14 => WireMessage::NoUpdate,
            other => return Err(Error::Protocol(format!("unknown message type {other}"))),
        };
        r.finish()?;
        Ok(msg)
    }
}

pub fn encode_frame(msg: &WireMessage) -> Result<Vec<u8>> {
    let payload = msg.payload()?;
    if payload.len() > MAX_PAYLOAD {
        return Err(Error::Protocol(format!("payload of {} bytes exceeds the frame limit", payload.len())));
    }
    let mut out = Vec::with_capacity(HEADER + payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.push(msg.type_byte());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn check_header(header: &[u8]) -> Result<(u8, usize)> {
    if &header[..4] != MAGIC {
        return Err(Error::Protocol("bad frame magic".into()));
    }
    let len = u32::from_le_bytes(header[5..9].try_into().expect("4 bytes")) as usize;
    if len > MAX_PAYLOAD {
        return Err(Error::Protocol(format!("frame payload of {len} bytes exceeds the limit")));
    }
    Ok((header[4], len))
}

fn check_crc(frame: &[u8], crc: [u8; 4]) -> Result<()> {
    if crc32fast::hash(frame) != u32::from_le_bytes(crc) {
        return Err(Error::Protocol("frame checksum mismatch".into()));
    }
    Ok(())
}

/// Parses one complete frame; the slice must hold exactly one frame.
pub fn decode_frame(bytes: &[u8]) -> Result<WireMessage> {
    if bytes.len() < HEADER + 4 {
        return Err(Error::Protocol("frame shorter than its header".into()));
    }
    let (kind, len) = check_header(&bytes[..HEADER])?;
    if bytes.len() != HEADER + len + 4 {
        return Err(Error::Protocol(format!("frame length {} does not match payload length {len}", bytes.len())));
    }
    check_crc(&bytes[..HEADER + len], bytes[HEADER + len..].try_into().expect("4 bytes"))?;
    WireMessage::from_payload(kind, &bytes[HEADER..HEADER + len])
}

pub fn write_frame<W: Write>(w: &mut W, msg: &WireMessage) -> Result<()> {
    w.write_all(&encode_frame(msg)?)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame. A clean end of stream before the first byte is
/// reported as `Ok(None)`.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<WireMessage>> {
    let mut header = [0u8; HEADER];
    let mut got = 0;
    while got < HEADER {
        let n = r.read(&mut header[got..])?;
        if n == 0 {
            if got == 0 {
                return Ok(None);
            }
            return Err(Error::Protocol("connection closed inside a frame header".into()));
        }
        got += n;
    }
    let (kind, len) = check_header(&header)?;
    let mut rest = vec![0u8; len + 4];
    r.read_exact(&mut rest)?;
    let mut frame = Vec::with_capacity(HEADER + len);
    frame.extend_from_slice(&header);
    frame.extend_from_slice(&rest[..len]);
    check_crc(&frame, rest[len..].try_into().expect("4 bytes"))?;
    WireMessage::from_payload(kind, &rest[..len]).map(Some)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use proptest::prelude::*;

    use super::*;
    use crate::replay::Transition;

    fn samples() -> Vec<WireMessage> {
        let mut ep = Episode::new(vec![
            Transition {
                obs: vec![0.5, -1.0],
                action: vec![0.1],
                reward: 2.0,
                done: false,
            },
            Transition {
                obs: vec![0.25, 3.0],
                action: vec![-0.9],
                reward: -1.0,
                done: true,
            },
        ]);
        ep.sampler_id = 3;
        ep.policy_version = 17;
        ep.env_seed = 99;
        let mut batch = Batch::empty(2, 1);
        batch.obs = vec![1.0, 2.0];
        batch.actions = vec![0.5];
        batch.next_obs = vec![3.0, 4.0];
        batch.rewards = vec![vec![1.0, 0.5]];
        batch.dones = vec![false];
        let mut values = BTreeMap::new();
        values.insert("episode_return".to_string(), 12.5);
        vec![
            WireMessage::HelloSampler { sampler_id: 1, trainer_id: 2 },
            WireMessage::WeightsPublish {
                trainer_id: 4,
                version: 9,
                checkpoint: vec![1, 2, 3],
            },
            WireMessage::WeightsRequest { trainer_id: 4, have_version: 8 },
            WireMessage::EpisodePush { episode: ep },
            WireMessage::BatchRequest {
                trainer_id: 1,
                batch_size: 64,
                n_step: 3,
                history_len: 4,
                rng_seed: u64::MAX,
            },
            WireMessage::BatchResponse { batch },
            WireMessage::MetricsPush {
                record: MetricsRecord {
                    time: 1.5,
                    node: "sampler-1".into(),
                    values,
                },
            },
            WireMessage::Shutdown,
            WireMessage::HelloTrainer { trainer_id: 7 },
            WireMessage::Ack,
            WireMessage::StatusRequest,
            WireMessage::Status(DbStatus {
                transitions: 10,
                valid_starts: 8,
                episodes_pushed: 2,
                versions: vec![(0, 3), (1, 5)],
            }),
            WireMessage::Error { message: "nope".into() },
            WireMessage::NoUpdate,
        ]
    }

    #[test]
    fn every_message_round_trips() {
        for m in samples() {
            let frame = encode_frame(&m).unwrap();
            assert_eq!(&frame[..4], b"CRL1");
            assert_eq!(frame[4], m.type_byte());
            assert_eq!(decode_frame(&frame).unwrap(), m);
            let mut cursor = std::io::Cursor::new(frame);
            assert_eq!(read_frame(&mut cursor).unwrap(), Some(m));
            assert_eq!(read_frame(&mut cursor).unwrap(), None);
        }
    }

    #[test]
    fn corruption_detected() {
        let frame = encode_frame(&samples()[3]).unwrap();
        for i in 0..frame.len() {
            let mut bad = frame.clone();
            bad[i] ^= 0x40;
            assert!(decode_frame(&bad).is_err(), "byte {i}");
        }
        assert!(decode_frame(&frame[..frame.len() - 1]).is_err());
        let mut cursor = std::io::Cursor::new(frame[..7].to_vec());
        assert!(read_frame(&mut cursor).is_err());
    }

    #[test]
    fn oversized_length_rejected_without_allocating() {
        let mut frame = b"CRL1\x08".to_vec();
        frame.extend_from_slice(&u32::MAX.to_le_bytes());
        let mut cursor = std::io::Cursor::new(frame);
        assert!(read_frame(&mut cursor).is_err());
    }

    proptest! {
        #[test]
        fn random_episodes_round_trip(
            len in 1usize..20,
            od in 1usize..5,
            ad in 1usize..3,
            seed in any::<u64>(),
            version in any::<u64>(),
            sampler in any::<u32>(),
            terminal in any::<bool>(),
            vals in proptest::collection::vec(-1e6f64..1e6, 200),
        ) {
            let transitions = (0..len).map(|i| Transition {
                obs: (0..od).map(|k| vals[(i * 7 + k) % 200]).collect(),
                action: (0..ad).map(|k| (vals[(i * 3 + k + 1) % 200] / 1e6).clamp(-1.0, 1.0)).collect(),
                reward: vals[(i * 11) % 200],
                done: terminal && i + 1 == len,
            }).collect();
            let mut episode = Episode::new(transitions);
            episode.env_seed = seed;
            episode.policy_version = version;
            episode.sampler_id = sampler;
            let m = WireMessage::EpisodePush { episode };
            prop_assert_eq!(decode_frame(&encode_frame(&m).unwrap()).unwrap(), m);
        }

        #[test]
        fn garbage_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..64), kind in 0u8..20) {
            let _ = WireMessage::from_payload(kind, &bytes);
            let _ = decode_frame(&bytes);
        }
    }
}
