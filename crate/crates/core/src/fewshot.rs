//! Shots-per-class partitioning of a training set across clients.
//!
//! Each class keeps a shuffled pool of its indices. Clients are served in id
//! order and take `s` indices off the pool without replacement while the pool
//! still holds at least `s`; once it runs short, a client draws its `s`
//! indices uniformly with replacement from the full class instead.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// One client's few-shot sample set, stored as indices into the training set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    pub client_id: usize,
    /// Class-major: the `s` indices of class 0, then class 1, ...
    pub sample_indices: Vec<usize>,
    pub per_class_counts: Vec<usize>,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.sample_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_indices.is_empty()
    }
}

pub fn partition(train: &Dataset, num_clients: usize, shots_per_class: usize, seed: u64) -> Result<Vec<Shard>> {
    if num_clients == 0 {
        return Err(Error::Param("num_clients must be >= 1".into()));
    }
    if shots_per_class == 0 {
        return Err(Error::Param("shots_per_class must be >= 1".into()));
    }
    let classes = train.class_indices();
    if let Some(c) = classes.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass(c));
    }
    let num_classes = classes.len();
    let mut shards: Vec<Shard> = (0..num_clients)
        .map(|k| Shard {
            client_id: k,
            sample_indices: Vec::with_capacity(num_classes * shots_per_class),
            per_class_counts: vec![shots_per_class; num_classes],
        })
        .collect();

    for (c, members) in classes.iter().enumerate() {
        let mut pool = members.clone();
        pool.shuffle(&mut rng::stream(seed, Purpose::Partition, 0, c as u64));
        let mut fallback = rng::stream(seed, Purpose::Partition, 1, c as u64);
        let mut cursor = 0;
        for shard in shards.iter_mut() {
            if pool.len() - cursor >= shots_per_class {
                shard
                    .sample_indices
                    .extend_from_slice(&pool[cursor..cursor + shots_per_class]);
                cursor += shots_per_class;
            } else {
                shard
                    .sample_indices
                    .extend((0..shots_per_class).map(|_| members[fallback.random_range(0..members.len())]));
            }
        }
    }
    Ok(shards)
}
