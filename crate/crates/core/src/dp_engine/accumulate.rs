use super::gradient::{Extent, FlatGradient};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Running sum of exactly `expected` per-example contributions, divided by
/// `expected` at the end. Contributions are summed in the order they are
/// added; callers add them replica-major, then by accumulation step.
#[derive(Debug, Clone)]
pub struct Accumulator<T> {
    sum: Vec<T>,
    layer_extents: Vec<Extent>,
    stage_partition: Option<Vec<Extent>>,
    expected: usize,
    count: usize,
}

impl<T: Scalar> Accumulator<T> {
    pub fn new(dim: usize, expected: usize) -> Self {
        Self {
            sum: vec![T::zero(); dim],
            layer_extents: vec![Extent::new(0, dim)],
            stage_partition: None,
            expected,
            count: 0,
        }
    }

    pub fn add(&mut self, g: &FlatGradient<T>) -> Result<()> {
        if self.count == 0 {
            self.layer_extents = g.layer_extents.clone();
            self.stage_partition = g.stage_partition.clone();
        }
        self.add_values(&g.values)
    }

    pub fn add_values(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.sum.len() {
            return Err(Error::Dimension {
                op: "accumulate",
                lhs: vec![self.sum.len()],
                rhs: vec![values.len()],
            });
        }
        if self.count == self.expected {
            return Err(Error::Protocol(format!(
                "more than {} contributions accumulated into one step",
                self.expected
            )));
        }
        for (s, &v) in self.sum.iter_mut().zip(values) {
            *s = *s + v;
        }
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Undivided running sum.
    pub fn sum(&self) -> &[T] {
        &self.sum
    }

    /// Adds `values` to the running sum without counting a contribution.
    pub(crate) fn add_to_sum(&mut self, values: &[T]) {
        for (s, &v) in self.sum.iter_mut().zip(values) {
            *s = *s + v;
        }
    }

    pub fn finish(self) -> Result<FlatGradient<T>> {
        if self.count != self.expected {
            return Err(Error::Protocol(format!(
                "step closed after {} of {} contributions",
                self.count, self.expected
            )));
        }
        let n = T::of(self.expected as f64);
        Ok(FlatGradient {
            values: self.sum.into_iter().map(|s| s / n).collect(),
            layer_extents: self.layer_extents,
            stage_partition: self.stage_partition,
        })
    }
}

/// `(1/|B|) Σ g̃_j` over a stream that must hold exactly `batch` gradients.
pub fn accumulate<T: Scalar>(stream: impl IntoIterator<Item = FlatGradient<T>>, batch: usize) -> Result<FlatGradient<T>> {
    let mut stream = stream.into_iter().peekable();
    let dim = stream.peek().map_or(0, |g| g.dim());
    let mut acc = Accumulator::new(dim, batch);
    for g in stream {
        acc.add(&g)?;
    }
    acc.finish()
}
