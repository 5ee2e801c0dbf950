//! Latent replay memory.
//!
//! Every training batch offers its replay-layer activations to the buffer,
//! which keeps a uniform random subset of at most `sample_size` of them
//! while free capacity remains. In the default [`BufferMode::Fill`] mode a
//! full buffer stops accepting entries and never evicts.
//! [`BufferMode::Quota`] instead rebalances to `capacity / domains_seen`
//! entries per domain, evicting uniformly from domains above their share.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::codec::{decode_tensor, encode_tensor, Reader};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Replay-layer activations of both networks for the two views of one input.
/// Carries no input-space data and no label.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPair<T> {
    pub s_latent_a: Tensor<T>,
    pub s_latent_b: Tensor<T>,
    pub d_latent_a: Tensor<T>,
    pub d_latent_b: Tensor<T>,
    /// Diagnostics only; no loss reads it.
    pub domain_id: u32,
}

impl<T: Scalar> LatentPair<T> {
    pub fn new(
        s_latent_a: Tensor<T>,
        s_latent_b: Tensor<T>,
        d_latent_a: Tensor<T>,
        d_latent_b: Tensor<T>,
        domain_id: u32,
    ) -> Result<Self> {
        let shape = s_latent_a.shape().to_vec();
        if shape.len() != 1 {
            return Err(Error::dim("latent_pair", &shape, &[shape.iter().product()]));
        }
        for t in [&s_latent_b, &d_latent_a, &d_latent_b] {
            if t.shape() != shape.as_slice() {
                return Err(Error::dim("latent_pair", &shape, t.shape()));
            }
        }
        Ok(Self {
            s_latent_a,
            s_latent_b,
            d_latent_a,
            d_latent_b,
            domain_id,
        })
    }

    pub fn width(&self) -> usize {
        self.s_latent_a.len()
    }

    /// Splits batched replay-layer activations (`[n × width]` each) into pairs.
    pub fn from_batch(
        s_a: &Tensor<T>,
        s_b: &Tensor<T>,
        d_a: &Tensor<T>,
        d_b: &Tensor<T>,
        domain_id: u32,
    ) -> Result<Vec<Self>> {
        let (n, _) = s_a.dims2("latent_batch")?;
        for t in [s_b, d_a, d_b] {
            if t.shape() != s_a.shape() {
                return Err(Error::dim("latent_batch", s_a.shape(), t.shape()));
            }
        }
        let row = |t: &Tensor<T>, i: usize| Tensor::from_vec(t.row(i).to_vec());
        (0..n)
            .map(|i| {
                Self::new(
                    row(s_a, i)?,
                    row(s_b, i)?,
                    row(d_a, i)?,
                    row(d_b, i)?,
                    domain_id,
                )
            })
            .collect()
    }
}

/// Stacks view-a latents of `pairs` into `[n × width]` slow and fast batches.
pub fn stack_view_a<T: Scalar>(pairs: &[&LatentPair<T>]) -> Result<(Tensor<T>, Tensor<T>)> {
    let s = Tensor::stack_rows(pairs.iter().map(|p| p.s_latent_a.data()))?;
    let d = Tensor::stack_rows(pairs.iter().map(|p| p.d_latent_a.data()))?;
    Ok((s, d))
}

/// Stacks view-b latents of `pairs` into `[n × width]` slow and fast batches.
pub fn stack_view_b<T: Scalar>(pairs: &[&LatentPair<T>]) -> Result<(Tensor<T>, Tensor<T>)> {
    let s = Tensor::stack_rows(pairs.iter().map(|p| p.s_latent_b.data()))?;
    let d = Tensor::stack_rows(pairs.iter().map(|p| p.d_latent_b.data()))?;
    Ok((s, d))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferMode {
    #[default]
    Fill,
    Quota,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    entries: Vec<LatentPair<T>>,
    mode: BufferMode,
    domains_seen: BTreeSet<u32>,
    rng: Rng,
}

pub const BUFFER_MAGIC: &[u8; 4] = b"LLRB";
pub const BUFFER_VERSION: u16 = 1;

impl<T: Scalar> ReplayBuffer<T> {
    pub fn new(capacity: usize, mode: BufferMode, rng: Rng) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Parameter("buffer capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            entries: Vec::new(),
            mode,
            domains_seen: BTreeSet::new(),
            rng,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn mode(&self) -> BufferMode {
        self.mode
    }

    pub fn entries(&self) -> &[LatentPair<T>] {
        &self.entries
    }

    pub fn count_domain(&self, domain_id: u32) -> usize {
        self.entries
            .iter()
            .filter(|e| e.domain_id == domain_id)
            .count()
    }

    /// Offers one batch of latents; returns how many were stored.
    pub fn add_batch(&mut self, batch: Vec<LatentPair<T>>, sample_size: usize) -> Result<usize> {
        if sample_size == 0 {
            return Err(Error::Parameter("sample size must be at least 1".into()));
        }
        if let (Some(first), Some(stored)) = (batch.first(), self.entries.first()) {
            if first.width() != stored.width() {
                return Err(Error::dim("add_batch", &[stored.width()], &[first.width()]));
            }
        }
        let room = match self.mode {
            BufferMode::Fill => self.capacity - self.entries.len(),
            BufferMode::Quota => self.rebalance(&batch),
        };
        let take = sample_size.min(room).min(batch.len());
        if take == 0 {
            return Ok(0);
        }
        let mut picked = self.rng.sample_indices(batch.len(), take);
        picked.sort_unstable();
        let mut batch: Vec<Option<LatentPair<T>>> = batch.into_iter().map(Some).collect();
        self.entries.extend(
            picked
                .into_iter()
                .map(|i| batch[i].take().expect("distinct indices")),
        );
        debug_assert!(self.entries.len() <= self.capacity);
        Ok(take)
    }

    /// Quota mode: evicts over-quota domains and returns the room left for
    /// the incoming batch's domain.
    fn rebalance(&mut self, batch: &[LatentPair<T>]) -> usize {
        let Some(incoming) = batch.first().map(|p| p.domain_id) else {
            return 0;
        };
        self.domains_seen.insert(incoming);
        let quota = self.capacity / self.domains_seen.len();
        let domains: Vec<u32> = self.domains_seen.iter().copied().collect();
        for d in domains {
            let positions: Vec<usize> = self
                .entries
                .iter()
                .enumerate()
                .filter(|(_, e)| e.domain_id == d)
                .map(|(i, _)| i)
                .collect();
            if positions.len() <= quota {
                continue;
            }
            let excess = positions.len() - quota;
            let mut evict: Vec<usize> = self
                .rng
                .sample_indices(positions.len(), excess)
                .into_iter()
                .map(|k| positions[k])
                .collect();
            evict.sort_unstable();
            for i in evict.into_iter().rev() {
                self.entries.remove(i);
            }
        }
        let own = self.count_domain(incoming);
        quota
            .saturating_sub(own)
            .min(self.capacity - self.entries.len())
    }

    /// `n` entries drawn uniformly with replacement.
    pub fn sample(&mut self, n: usize) -> Result<Vec<&LatentPair<T>>> {
        if self.entries.is_empty() {
            return Err(Error::EmptyMemory);
        }
        let len = self.entries.len();
        let picks: Vec<usize> = (0..n).map(|_| self.rng.below(len)).collect();
        Ok(picks.into_iter().map(|i| &self.entries[i]).collect())
    }

    /// Encodes capacity, size and entries; the RNG state is not stored.
    pub fn save(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(BUFFER_MAGIC);
        out.extend_from_slice(&BUFFER_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.capacity as u64).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        let mut rec = Vec::new();
        for e in &self.entries {
            rec.clear();
            rec.extend_from_slice(&e.domain_id.to_le_bytes());
            for t in [&e.s_latent_a, &e.s_latent_b, &e.d_latent_a, &e.d_latent_b] {
                encode_tensor(t, &mut rec);
            }
            out.extend_from_slice(&(rec.len() as u64).to_le_bytes());
            out.extend_from_slice(&rec);
        }
        out
    }

    pub fn load(bytes: &[u8], mode: BufferMode, rng: Rng) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(BUFFER_MAGIC)?;
        let at = r.position();
        let version = r.u16("version")?;
        if version != BUFFER_VERSION {
            return Err(Error::format(at, format!("unsupported version {version}")));
        }
        let at = r.position();
        let capacity = r.u64("capacity")? as usize;
        if capacity == 0 {
            return Err(Error::format(at, "capacity must be positive"));
        }
        let at = r.position();
        let size = r.u64("size")? as usize;
        if size > capacity {
            return Err(Error::format(
                at,
                format!("size {size} exceeds capacity {capacity}"),
            ));
        }
        let mut buf = Self::new(capacity, mode, rng)?;
        for _ in 0..size {
            let len = r.u64("record length")? as usize;
            let start = r.position();
            let domain_id = r.u32("domain id")?;
            let s_a = decode_tensor(&mut r)?;
            let s_b = decode_tensor(&mut r)?;
            let d_a = decode_tensor(&mut r)?;
            let d_b = decode_tensor(&mut r)?;
            if r.position() - start != len {
                return Err(Error::format(start, "record length mismatch"));
            }
            let pair = LatentPair::new(s_a, s_b, d_a, d_b, domain_id)
                .map_err(|e| Error::format(start, e.to_string()))?;
            if let Some(first) = buf.entries.first() {
                if first.width() != pair.width() {
                    return Err(Error::format(start, "inconsistent latent width"));
                }
            }
            buf.domains_seen.insert(domain_id);
            buf.entries.push(pair);
        }
        if !r.is_empty() {
            return Err(Error::format(r.position(), "trailing bytes after buffer"));
        }
        Ok(buf)
    }
}
