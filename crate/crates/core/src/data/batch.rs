//! One-epoch minibatch iteration over same-scale sample pairs.

use std::collections::BTreeMap;
use std::marker::PhantomData;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::degrade::SamplePair;
use crate::data::normalize;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// A normalized minibatch: corrupted inputs `s` and clean targets `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub s: Tensor<T>,
    pub t: Tensor<T>,
    pub scale_index: usize,
    /// Positions of the batch members in the source list.
    pub indices: Vec<usize>,
}

/// Iterator over one epoch. Pairs are grouped by spatial size and shuffled
/// within each group; every batch draws from a group picked uniformly among
/// those with samples left.
pub struct BatchIter<'a, T> {
    pairs: &'a [SamplePair],
    groups: Vec<Vec<usize>>,
    batch_size: usize,
    rng: ChaCha8Rng,
    _marker: PhantomData<T>,
}

pub fn batch_iter<T: Real>(pairs: &[SamplePair], batch_size: usize, seed: u64) -> Result<BatchIter<'_, T>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("cannot batch an empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_size: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate() {
        if p.clean.shape() != p.corrupted.shape() {
            return Err(Error::ShapeMismatch {
                op: "batch_iter",
                left: p.clean.shape(),
                right: p.corrupted.shape(),
            });
        }
        let s = p.clean.shape();
        by_size.entry((s.h(), s.w())).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = by_size.into_values().collect();
    for g in &mut groups {
        g.shuffle(&mut rng);
        // Popped from the back below.
        g.reverse();
    }
    Ok(BatchIter {
        pairs,
        groups,
        batch_size,
        rng,
        _marker: PhantomData,
    })
}

impl<T: Real> Iterator for BatchIter<'_, T> {
    type Item = Result<Batch<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        let live: Vec<usize> = (0..self.groups.len())
            .filter(|&g| !self.groups[g].is_empty())
            .collect();
        if live.is_empty() {
            return None;
        }
        let g = live[self.rng.random_range(0..live.len())];
        let group = &mut self.groups[g];
        let take = self.batch_size.min(group.len());
        let indices: Vec<usize> = (0..take).filter_map(|_| group.pop()).collect();
        let build = || -> Result<Batch<T>> {
            let s: Vec<Tensor<T>> = indices
                .iter()
                .map(|&i| normalize(&self.pairs[i].corrupted))
                .collect();
            let t: Vec<Tensor<T>> = indices
                .iter()
                .map(|&i| normalize(&self.pairs[i].clean))
                .collect();
            Ok(Batch {
                s: Tensor::stack(&s.iter().collect::<Vec<_>>())?,
                t: Tensor::stack(&t.iter().collect::<Vec<_>>())?,
                scale_index: self.pairs[indices[0]].scale_index,
                indices: indices.clone(),
            })
        };
        Some(build())
    }
}
