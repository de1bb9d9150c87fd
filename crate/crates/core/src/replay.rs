//! Episode-structured replay with uniform sampling, n-step slices and
//! per-request observation history stacking.

use std::collections::VecDeque;
use std::fs::OpenOptions;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;

use crate::codec::{put_f64_vec, Reader};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Ordered transitions of one rollout. The next observation of transition
/// `t` is the observation of transition `t + 1`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    pub sampler_id: u32,
    pub policy_version: u64,
    pub env_seed: u64,
}

impl Episode {
    pub fn new(transitions: Vec<Transition>) -> Self {
        Episode {
            transitions,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Whether the rollout ended in a terminal state.
    pub fn terminal(&self) -> bool {
        self.transitions.last().is_some_and(|t| t.done)
    }

    pub fn total_reward(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }

    pub fn obs_dim(&self) -> usize {
        self.transitions.first().map_or(0, |t| t.obs.len())
    }

    pub fn action_dim(&self) -> usize {
        self.transitions.first().map_or(0, |t| t.action.len())
    }

    /// Number of indices usable as a sample start: every step of a
    /// terminal episode, all but the last step otherwise (its successor
    /// observation is unknown).
    pub fn valid_starts(&self) -> usize {
        if self.terminal() {
            self.len()
        } else {
            self.len().saturating_sub(1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::Empty("episode has no transitions".into()));
        }
        let (od, ad) = (self.obs_dim(), self.action_dim());
        if od == 0 || ad == 0 {
            return Err(Error::InvalidArgument("episode observations and actions must be non-empty".into()));
        }
        for (i, t) in self.transitions.iter().enumerate() {
            if t.done && i + 1 != n {
                return Err(Error::InvalidArgument(format!("done flag on step {i} of {n}")));
            }
            if t.obs.len() != od || t.action.len() != ad {
                return Err(Error::shape(format!("episode step {i}"), format!("obs {od}, action {ad}"), format!("obs {}, action {}", t.obs.len(), t.action.len())));
            }
            if !t.reward.is_finite() || t.obs.iter().chain(&t.action).any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite value in episode step {i}")));
            }
            if t.action.iter().any(|a| a.abs() > 1.0) {
                return Err(Error::InvalidArgument(format!("action out of bounds in episode step {i}")));
            }
        }
        Ok(())
    }

    /// `count u32`, then per transition `obs_len u32, obs f64s, act_len
    /// u32, act f64s, reward f64, done u8`, little-endian.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.len() * (17 + 8 * (self.obs_dim() + self.action_dim())));
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for t in &self.transitions {
            put_f64_vec(&mut out, &t.obs);
            put_f64_vec(&mut out, &t.action);
            out.extend_from_slice(&t.reward.to_le_bytes());
            out.push(t.done as u8);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let ep = Self::read(&mut r)?;
        r.finish()?;
        Ok(ep)
    }

    pub(crate) fn read(r: &mut Reader) -> Result<Self> {
        let n = r.u32()? as usize;
        let mut transitions = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let obs = r.f64_vec()?;
            let action = r.f64_vec()?;
            let reward = r.f64()?;
            let done = match r.u8()? {
                0 => false,
                1 => true,
                b => return Err(Error::Protocol(format!("invalid done byte {b}"))),
            };
            transitions.push(Transition { obs, action, reward, done });
        }
        Ok(Episode::new(transitions))
    }

    /// History of `len` observations ending at step `t`, oldest first,
    /// zero-padded before the episode start. `t == len()` (one past a
    /// terminal step) yields zeros for the missing observation.
    fn stacked_obs(&self, t: usize, len: usize, out: &mut Vec<f64>) {
        let od = self.obs_dim();
        for k in 0..len {
            let idx = t as isize - (len - 1 - k) as isize;
            if idx >= 0 && (idx as usize) < self.len() {
                out.extend_from_slice(&self.transitions[idx as usize].obs);
            } else {
                out.extend(std::iter::repeat_n(0.0, od));
            }
        }
    }
}

/// Rolling window of the last `len` observations, oldest first and
/// zero-padded before the first one, laid out like batch observations.
#[derive(Clone, Debug)]
pub struct HistoryStack {
    obs_dim: usize,
    len: usize,
    window: VecDeque<Vec<f64>>,
}

impl HistoryStack {
    pub fn new(obs_dim: usize, len: usize) -> Self {
        HistoryStack {
            obs_dim,
            len: len.max(1),
            window: VecDeque::new(),
        }
    }

    pub fn clear(&mut self) {
        self.window.clear();
    }

    pub fn push(&mut self, obs: &[f64]) {
        debug_assert_eq!(obs.len(), self.obs_dim);
        if self.window.len() == self.len {
            self.window.pop_front();
        }
        self.window.push_back(obs.to_vec());
    }

    pub fn stacked(&self) -> Vec<f64> {
        let mut out = vec![0.0; (self.len - self.window.len()) * self.obs_dim];
        for o in &self.window {
            out.extend_from_slice(o);
        }
        out
    }
}

/// Training batch assembled by [`ReplayBuffer::sample_batch`].
///
/// Element `b` holds the stacked observation at its start index, the action
/// taken, the raw rewards of its n-step slice (`1..=n` entries), the stacked
/// observation after the slice and whether the episode terminated within
/// the slice.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub rewards: Vec<Vec<f64>>,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn empty(obs_dim: usize, action_dim: usize) -> Self {
        Batch {
            obs_dim,
            action_dim,
            obs: Vec::new(),
            actions: Vec::new(),
            next_obs: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.dones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dones.is_empty()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [self.len(), self.obs_dim, self.action_dim] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for (r, d) in self.rewards.iter().zip(&self.dones) {
            put_f64_vec(&mut out, r);
            out.push(*d as u8);
        }
        crate::codec::put_f64s(&mut out, &self.obs);
        crate::codec::put_f64s(&mut out, &self.actions);
        crate::codec::put_f64s(&mut out, &self.next_obs);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let n = r.u32()? as usize;
        let od = r.u32()? as usize;
        let ad = r.u32()? as usize;
        let mut b = Batch::empty(od, ad);
        for _ in 0..n {
            b.rewards.push(r.f64_vec()?);
            b.dones.push(r.u8()? != 0);
        }
        b.obs = r.f64s(n * od)?;
        b.actions = r.f64s(n * ad)?;
        b.next_obs = r.f64s(n * od)?;
        r.finish()?;
        Ok(b)
    }
}

/// FIFO of whole episodes bounded by a transition count.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    /// `(cumulative valid starts before this episode, episode)`.
    episodes: VecDeque<(u64, Arc<Episode>)>,
    valid_total: u64,
    transitions: usize,
    dims: Option<(usize, usize)>,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("replay.capacity", "must be positive"));
        }
        Ok(ReplayBuffer {
            capacity,
            episodes: VecDeque::new(),
            valid_total: 0,
            transitions: 0,
            dims: None,
            pushed: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stored transitions.
    pub fn len(&self) -> usize {
        self.transitions
    }

    pub fn is_empty(&self) -> bool {
        self.transitions == 0
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    /// Episodes accepted since creation, including evicted ones.
    pub fn episodes_pushed(&self) -> u64 {
        self.pushed
    }

    /// Number of `(episode, index)` pairs a sample may start from.
    pub fn valid_starts(&self) -> u64 {
        self.valid_total - self.episodes.front().map_or(self.valid_total, |(s, _)| *s)
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.dims
    }

    /// Appends an episode, evicting the oldest episodes until the
    /// transition count fits the capacity.
    pub fn push_episode(&mut self, episode: Episode) -> Result<()> {
        episode.validate()?;
        if episode.len() > self.capacity {
            return Err(Error::InvalidArgument(format!(
                "episode of length {} exceeds replay capacity {}",
                episode.len(),
                self.capacity
            )));
        }
        let dims = (episode.obs_dim(), episode.action_dim());
        match self.dims {
            Some(d) if d != dims => {
                return Err(Error::shape("replay episode (obs, action) dims", format!("{d:?}"), format!("{dims:?}")));
            }
            _ => self.dims = Some(dims),
        }
        while self.transitions + episode.len() > self.capacity {
            let (_, old) = self.episodes.pop_front().expect("non-empty while over capacity");
            self.transitions -= old.len();
        }
        self.transitions += episode.len();
        let start = self.valid_total;
        self.valid_total += episode.valid_starts() as u64;
        self.episodes.push_back((start, Arc::new(episode)));
        self.pushed += 1;
        Ok(())
    }

    /// Uniform `(episode, index)` draw over valid starts.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(usize, usize)> {
        let n = self.valid_starts();
        if n == 0 {
            return Err(Error::Empty("replay buffer has no sampleable transitions".into()));
        }
        let base = self.episodes.front().expect("non-empty").0;
        let u = base + rng.random_range(0..n);
        let e = self.episodes.partition_point(|(s, _)| *s <= u) - 1;
        Ok((e, (u - self.episodes[e].0) as usize))
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, batch_size: usize, n_step: usize, history_len: usize, rng: &mut R) -> Result<Batch> {
        if n_step == 0 || history_len == 0 || batch_size == 0 {
            return Err(Error::InvalidArgument("batch size, n_step and history_len must be positive".into()));
        }
        let (od, ad) = self
            .dims
            .ok_or_else(|| Error::Empty("replay buffer is empty".into()))?;
        let mut b = Batch::empty(od * history_len, ad);
        for _ in 0..batch_size {
            let (e, t) = self.sample_index(rng)?;
            let ep = &self.episodes[e].1;
            let last = if ep.terminal() { ep.len() } else { ep.len() - 1 };
            let m = n_step.min(last - t);
            let slice = &ep.transitions[t..t + m];
            ep.stacked_obs(t, history_len, &mut b.obs);
            b.actions.extend_from_slice(&ep.transitions[t].action);
            b.rewards.push(slice.iter().map(|x| x.reward).collect());
            b.dones.push(slice.last().expect("m >= 1").done);
            ep.stacked_obs(t + m, history_len, &mut b.next_obs);
        }
        Ok(b)
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter().map(|(_, e)| e.as_ref())
    }
}

/// Appends one length-prefixed episode record to an on-disk log.
pub fn append_episode_log(path: &Path, episode: &Episode) -> Result<()> {
    let blob = episode.encode();
    let mut f = BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?);
    f.write_all(&(blob.len() as u32).to_le_bytes())?;
    f.write_all(&blob)?;
    f.flush()?;
    Ok(())
}

/// Reads every complete record of an episode log; a truncated final record
/// (interrupted writer) is ignored.
pub fn read_episode_log(path: &Path) -> Result<Vec<Episode>> {
    let mut bytes = Vec::new();
    BufReader::new(std::fs::File::open(path)?).read_to_end(&mut bytes)?;
    let mut out = Vec::new();
    let mut pos = 0;
    while pos + 4 <= bytes.len() {
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes")) as usize;
        if pos + 4 + len > bytes.len() {
            break;
        }
        out.push(Episode::decode(&bytes[pos + 4..pos + 4 + len])?);
        pos += 4 + len;
    }
    Ok(out)
}
