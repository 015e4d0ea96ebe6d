use std::collections::VecDeque;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// FIFO replay buffer with uniform with-replacement sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    items: VecDeque<T>,
    capacity: usize,
    evicted: u64,
}

impl<T: Clone> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::contract("replay capacity must be positive"));
        }
        Ok(Self {
            items: VecDeque::new(),
            capacity,
            evicted: 0,
        })
    }

    /// Buffer seeded with an offline dataset (oldest first).
    pub fn from_offline(capacity: usize, data: impl IntoIterator<Item = T>) -> Result<Self> {
        let mut b = Self::new(capacity)?;
        for x in data {
            b.push(x);
        }
        Ok(b)
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
            self.evicted += 1;
        }
        self.items.push_back(item);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn evicted(&self) -> u64 {
        self.evicted
    }

    pub fn get(&self, i: usize) -> &T {
        &self.items[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    pub fn sample_indices(&self, m: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::Empty("replay buffer"));
        }
        let n = self.items.len();
        Ok((0..m).map(|_| rng.random_range(0..n)).collect())
    }

    pub fn sample_minibatch(&self, m: usize, rng: &mut Rng) -> Result<Vec<T>> {
        Ok(self.sample_indices(m, rng)?.into_iter().map(|i| self.items[i].clone()).collect())
    }
}
