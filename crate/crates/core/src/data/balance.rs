//! Class-balanced batch sampling.
//!
//! Every entry falls into one stratum: its first positive class, or the
//! "no finding" stratum when it has no positive label. Batch slots are split
//! as evenly as possible across strata, with the remainder rotating from
//! batch to batch, so each stratum gets `⌊B/S⌋` or `⌈B/S⌉` slots. The
//! largest stratum is walked as a shuffled permutation and its exhaustion
//! ends the epoch; smaller strata are drawn uniformly with replacement.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One batch slot: entry index and the epoch it was drawn in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Draw {
    pub index: usize,
    pub epoch: u64,
}

#[derive(Debug, Clone)]
pub struct BalancedSampler {
    strata: Vec<Vec<usize>>,
    batch_size: usize,
    majority: usize,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    batch_in_epoch: usize,
    rng: ChaCha8Rng,
}

impl BalancedSampler {
    /// `labels[i]` is the multi-hot vector of entry `i`; `classes` names the
    /// columns for error messages.
    pub fn new(labels: &[Vec<u8>], classes: &[String], batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be > 0".into()));
        }
        let mut strata = vec![Vec::new(); classes.len()];
        let mut none = Vec::new();
        for (i, l) in labels.iter().enumerate() {
            if l.len() != classes.len() {
                return Err(Error::Data(format!(
                    "entry {i} has {} labels for {} classes",
                    l.len(),
                    classes.len()
                )));
            }
            match l.iter().position(|&v| v == 1) {
                Some(c) => strata[c].push(i),
                None => none.push(i),
            }
        }
        for (c, name) in classes.iter().enumerate() {
            if !labels.iter().any(|l| l[c] == 1) {
                return Err(Error::Data(format!("class {name} has no positive samples")));
            }
        }
        // Classes that are only ever co-positive with an earlier class get
        // no stratum of their own.
        strata.retain(|s| !s.is_empty());
        if !none.is_empty() {
            strata.push(none);
        }
        let majority = (0..strata.len())
            .max_by_key(|&s| (strata[s].len(), std::cmp::Reverse(s)))
            .expect("at least one stratum");
        let mut sampler = Self {
            strata,
            batch_size,
            majority,
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
            batch_in_epoch: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        sampler.reshuffle();
        Ok(sampler)
    }

    pub fn num_strata(&self) -> usize {
        self.strata.len()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Slots per stratum for the `b`-th batch of an epoch.
    pub fn quota(&self, b: usize) -> Vec<usize> {
        let s = self.strata.len();
        let base = self.batch_size / s;
        let rem = self.batch_size % s;
        let mut q = vec![base; s];
        for j in 0..rem {
            q[(b * rem + j) % s] += 1;
        }
        q
    }

    fn reshuffle(&mut self) {
        self.order = self.strata[self.majority].clone();
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
        self.batch_in_epoch = 0;
    }

    pub fn next_batch(&mut self) -> Vec<Draw> {
        let mut quota = self.quota(self.batch_in_epoch);
        if self.cursor + quota[self.majority] > self.order.len() {
            self.epoch += 1;
            self.reshuffle();
            quota = self.quota(0);
        }
        let mut out = Vec::with_capacity(self.batch_size);
        for (s, &k) in quota.iter().enumerate() {
            for _ in 0..k {
                let index = if s == self.majority {
                    self.cursor += 1;
                    self.order[self.cursor - 1]
                } else {
                    let pool = &self.strata[s];
                    pool[self.rng.random_range(0..pool.len())]
                };
                out.push(Draw {
                    index,
                    epoch: self.epoch,
                });
            }
        }
        out.shuffle(&mut self.rng);
        self.batch_in_epoch += 1;
        out
    }
}

impl Iterator for BalancedSampler {
    type Item = Vec<Draw>;

    fn next(&mut self) -> Option<Vec<Draw>> {
        Some(self.next_batch())
    }
}
