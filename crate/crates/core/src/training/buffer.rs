use candle_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::masks::ImageBatch;

/// What the buffer does with one incoming image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BufferDecision {
    /// Not full yet: keep a copy and return the fresh image.
    Store,
    /// Full: return the fresh image, leave storage alone.
    ReturnFresh,
    /// Full: return the stored image at this slot and store the fresh one there.
    Swap(usize),
}

/// History of generated images fed to the discriminators.
#[derive(Debug, Clone)]
pub struct ImageBuffer {
    capacity: usize,
    storage: Vec<Tensor>,
    rng: ChaCha8Rng,
    full_queries: u64,
    swaps: u64,
}

impl ImageBuffer {
    pub const DEFAULT_CAPACITY: usize = 50;

    pub fn new(capacity: usize, seed: u64) -> Self {
        Self::with_rng(capacity, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(capacity: usize, rng: ChaCha8Rng) -> Self {
        Self {
            capacity,
            storage: Vec::with_capacity(capacity),
            rng,
            full_queries: 0,
            swaps: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.storage.len() >= self.capacity
    }

    /// Stored images, each of shape `(1, 3, H, W)`.
    pub fn storage(&self) -> &[Tensor] {
        &self.storage
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    /// `(queries made while full, swaps among them)`.
    pub fn swap_stats(&self) -> (u64, u64) {
        (self.full_queries, self.swaps)
    }

    /// Rebuilds a buffer from saved parts.
    pub fn restore(capacity: usize, storage: Vec<Tensor>, rng: ChaCha8Rng, stats: (u64, u64)) -> Self {
        Self {
            capacity,
            storage,
            rng,
            full_queries: stats.0,
            swaps: stats.1,
        }
    }

    /// Draws the decision for the next image. A zero-capacity buffer always
    /// passes images through.
    pub fn decide(&mut self) -> BufferDecision {
        if self.capacity == 0 {
            BufferDecision::ReturnFresh
        } else if self.storage.len() < self.capacity {
            BufferDecision::Store
        } else if self.rng.random_bool(0.5) {
            BufferDecision::Swap(self.rng.random_range(0..self.storage.len()))
        } else {
            BufferDecision::ReturnFresh
        }
    }

    /// Carries out `decision` for one `(1, 3, H, W)` image.
    pub fn apply(&mut self, image: Tensor, decision: BufferDecision) -> Tensor {
        let image = image.detach();
        match decision {
            BufferDecision::Store => {
                self.storage.push(image.clone());
                image
            }
            BufferDecision::ReturnFresh => {
                if self.capacity > 0 {
                    self.full_queries += 1;
                }
                image
            }
            BufferDecision::Swap(slot) => {
                self.full_queries += 1;
                self.swaps += 1;
                std::mem::replace(&mut self.storage[slot], image)
            }
        }
    }

    /// Routes each image of `fresh` through the buffer, in batch order.
    pub fn query(&mut self, fresh: &ImageBatch) -> Result<ImageBatch> {
        let mut out = Vec::with_capacity(fresh.batch_size());
        for i in 0..fresh.batch_size() {
            let image = fresh.tensor().narrow(0, i, 1)?;
            let decision = self.decide();
            out.push(self.apply(image, decision));
        }
        ImageBatch::new(Tensor::cat(&out, 0)?)
    }
}
