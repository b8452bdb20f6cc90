use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// History of generated images shown to a discriminator.
///
/// Until full, every image is stored and returned. Afterwards each push
/// returns, with probability 1/2, a stored image chosen uniformly (which the
/// new image replaces), and otherwise the new image itself.
#[derive(Debug, Clone)]
pub struct ImagePool {
    capacity: usize,
    images: Vec<Tensor>,
    rng: ChaCha8Rng,
}

impl ImagePool {
    pub fn new(capacity: usize, rng: ChaCha8Rng) -> Self {
        ImagePool {
            capacity,
            images: Vec::with_capacity(capacity),
            rng,
        }
    }

    pub fn with_seed(capacity: usize, seed: u64) -> Self {
        Self::new(capacity, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Returns the image the discriminator should see. Stored images are
    /// detached.
    pub fn push(&mut self, image: &Tensor) -> Tensor {
        let image = image.detach();
        if self.capacity == 0 {
            return image;
        }
        if self.images.len() < self.capacity {
            self.images.push(image.clone());
            return image;
        }
        if self.rng.gen_bool(0.5) {
            let i = self.rng.gen_range(0..self.capacity);
            std::mem::replace(&mut self.images[i], image)
        } else {
            image
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(v: f64) -> Tensor {
        Tensor::full(&[1, 1, 1, 1], v)
    }

    #[test]
    fn zero_capacity_passes_through() {
        let mut pool = ImagePool::with_seed(0, 1);
        for i in 0..10 {
            assert_eq!(pool.push(&img(i as f64)).item(), i as f64);
        }
        assert!(pool.is_empty());
    }

    #[test]
    fn filling_returns_input() {
        let mut pool = ImagePool::with_seed(50, 1);
        for i in 0..50 {
            assert_eq!(pool.push(&img(i as f64)).item(), i as f64);
        }
        assert_eq!(pool.len(), 50);
    }

    #[test]
    fn historical_fraction_is_half() {
        let mut pool = ImagePool::with_seed(50, 9);
        for i in 0..50 {
            pool.push(&img(i as f64));
        }
        let n = 10_000;
        let historical = (0..n)
            .filter(|&i| {
                let v = (1000 + i) as f64;
                pool.push(&img(v)).item() != v
            })
            .count();
        let frac = historical as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }
}
