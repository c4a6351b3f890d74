//! Ring-buffer transition store with seeded uniform sampling.

use std::io::{Read, Write};

use ndarray::Array2;
use rand::Rng;

use crate::error::{check_dim, Error, Result};

/// One environment transition. Observations are stored normalized,
/// actions in physical units.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub reward: f64,
    /// True only for failure termination; time-limit truncation stores false.
    pub done: bool,
    pub reg_action: Vec<f64>,
}

/// Column-stacked minibatch, one row per sampled transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Vec<f64>,
    pub next_obs: Array2<f64>,
    pub dones: Vec<f64>,
    pub reg_actions: Array2<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn from_transitions(items: &[&Transition]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Config("cannot build an empty batch".into()))?;
        let (n, no, na) = (items.len(), first.obs.len(), first.action.len());
        let mut obs = Array2::zeros((n, no));
        let mut next_obs = Array2::zeros((n, no));
        let mut actions = Array2::zeros((n, na));
        let mut reg_actions = Array2::zeros((n, na));
        let mut rewards = Vec::with_capacity(n);
        let mut dones = Vec::with_capacity(n);
        for (row, t) in items.iter().enumerate() {
            check_dim("batch observation", no, t.obs.len())?;
            check_dim("batch next observation", no, t.next_obs.len())?;
            check_dim("batch action", na, t.action.len())?;
            check_dim("batch regularizer action", na, t.reg_action.len())?;
            for j in 0..no {
                obs[[row, j]] = t.obs[j];
                next_obs[[row, j]] = t.next_obs[j];
            }
            for j in 0..na {
                actions[[row, j]] = t.action[j];
                reg_actions[[row, j]] = t.reg_action[j];
            }
            rewards.push(t.reward);
            dones.push(if t.done { 1.0 } else { 0.0 });
        }
        Ok(Self {
            obs,
            actions,
            rewards,
            next_obs,
            dones,
            reg_actions,
        })
    }
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    /// Slot the next push overwrites once full.
    head: usize,
}

const DUMP_MAGIC: &[u8; 8] = b"RLARBUF\0";
const DUMP_VERSION: u32 = 1;

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: Vec::new(),
            head: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Stored transitions, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.items.split_at(self.head);
        older.iter().chain(newer.iter())
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        if batch_size == 0 || self.items.is_empty() {
            return Err(Error::Config(format!(
                "cannot sample {batch_size} transitions from a buffer of {}",
                self.items.len()
            )));
        }
        let picks: Vec<&Transition> = (0..batch_size)
            .map(|_| &self.items[rng.gen_range(0..self.items.len())])
            .collect();
        Batch::from_transitions(&picks)
    }

    /// Little-endian binary dump: magic, version, capacity, count, then records.
    pub fn dump<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&DUMP_VERSION.to_le_bytes())?;
        w.write_all(&(self.capacity as u64).to_le_bytes())?;
        w.write_all(&(self.items.len() as u64).to_le_bytes())?;
        for t in self.iter() {
            for v in [&t.obs, &t.action, &t.next_obs, &t.reg_action] {
                w.write_all(&(v.len() as u64).to_le_bytes())?;
                for x in v.iter() {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            w.write_all(&t.reward.to_le_bytes())?;
            w.write_all(&[t.done as u8])?;
        }
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::Checkpoint("not a replay buffer dump".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != DUMP_VERSION {
            return Err(Error::Checkpoint(format!("unsupported replay dump version {version}")));
        }
        let read_u64 = |r: &mut R| -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        };
        let capacity = read_u64(&mut r)? as usize;
        let count = read_u64(&mut r)? as usize;
        let mut buffer = Self::new(capacity)?;
        for _ in 0..count {
            let mut vecs = Vec::with_capacity(4);
            for _ in 0..4 {
                let len = read_u64(&mut r)? as usize;
                let v = (0..len)
                    .map(|_| read_u64(&mut r).map(f64::from_bits))
                    .collect::<Result<Vec<f64>>>()?;
                vecs.push(v);
            }
            let reward = f64::from_bits(read_u64(&mut r)?);
            let mut flag = [0u8; 1];
            r.read_exact(&mut flag)?;
            let reg_action = vecs.pop().expect("four vectors");
            let next_obs = vecs.pop().expect("four vectors");
            let action = vecs.pop().expect("four vectors");
            let obs = vecs.pop().expect("four vectors");
            buffer.push(Transition {
                obs,
                action,
                next_obs,
                reward,
                done: flag[0] != 0,
                reg_action,
            });
        }
        Ok(buffer)
    }
}
