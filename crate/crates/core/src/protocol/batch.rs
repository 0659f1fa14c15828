use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

/// Mini-batch order shared by every party: one seeded permutation of the rows,
/// cut into contiguous batches that are cycled through. A batch size of at
/// least `m` gives a single full batch in row order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchSchedule {
    batches: Vec<Vec<usize>>,
}

impl BatchSchedule {
    pub fn new(m: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if m == 0 || batch_size == 0 {
            return Err(Error::Empty);
        }
        if batch_size >= m {
            return Ok(BatchSchedule {
                batches: vec![(0..m).collect()],
            });
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
        Ok(BatchSchedule {
            batches: order.chunks(batch_size).map(<[usize]>::to_vec).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn is_full_batch(&self) -> bool {
        self.batches.len() == 1
    }

    /// Batch index used in 1-based `iteration`.
    pub fn index_for(&self, iteration: u32) -> usize {
        (iteration.max(1) as usize - 1) % self.batches.len()
    }

    pub fn rows(&self, batch: usize) -> &[usize] {
        &self.batches[batch]
    }
}
