//! In-memory labelled image sets and the batch streams drawn from them.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::supernet::Tensor;

/// Images stored as a flat `[n, c, h, w]` buffer with one label each.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    image_shape: [usize; 3],
    num_classes: usize,
    images: Vec<f32>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(image_shape: [usize; 3], num_classes: usize, images: Vec<f32>, labels: Vec<usize>) -> Result<Self> {
        let per = image_shape.iter().product::<usize>();
        if per == 0 {
            return Err(Error::Shape(format!("image shape {image_shape:?} has no pixels")));
        }
        if images.len() != per * labels.len() {
            return Err(Error::Shape(format!(
                "{} labels need {} pixel values, got {}",
                labels.len(),
                per * labels.len(),
                images.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Shape(format!("label {bad} out of range for {num_classes} classes")));
        }
        Ok(Self {
            image_shape,
            num_classes,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        self.image_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let per = self.pixels_per_image();
        &self.images[i * per..(i + 1) * per]
    }

    fn pixels_per_image(&self) -> usize {
        self.image_shape.iter().product()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Gathers the given examples into a `[len, c, h, w]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let per = self.pixels_per_image();
        let mut data = Vec::with_capacity(per * indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Shape(format!("example {i} out of range for {} examples", self.len())));
            }
            data.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        let [c, h, w] = self.image_shape;
        Ok((Tensor::new(vec![indices.len(), c, h, w], data)?, labels))
    }

    /// Consecutive batches in storage order; the last may be short.
    pub fn sequential_batches(&self, batch_size: usize) -> impl Iterator<Item = Vec<usize>> + '_ {
        let size = batch_size.max(1);
        (0..self.len())
            .step_by(size)
            .map(move |s| (s..(s + size).min(self.len())).collect())
    }
}

/// Endless stream of training batches: a fresh seeded shuffle each epoch.
#[derive(Debug)]
pub struct BatchStream<'a> {
    data: &'a Dataset,
    batch_size: usize,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl<'a> BatchStream<'a> {
    pub fn new(data: &'a Dataset, batch_size: usize, seed: u64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyData("training stream has no examples".into()));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(Self {
            data,
            batch_size,
            order: (0..data.len()).collect(),
            pos: data.len(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch_size);
        while out.len() < self.batch_size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            let take = (self.batch_size - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }

    pub fn next_batch(&mut self) -> Result<(Tensor, Vec<usize>)> {
        let idx = self.next_indices();
        self.data.batch(&idx)
    }
}
