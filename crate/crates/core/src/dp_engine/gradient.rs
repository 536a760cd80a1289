use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Contiguous `[offset, offset + len)` slice of a flattened parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Extent {
    pub offset: usize,
    pub len: usize,
}

impl Extent {
    pub fn new(offset: usize, len: usize) -> Self {
        Self { offset, len }
    }

    pub fn end(&self) -> usize {
        self.offset + self.len
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.end()
    }
}

/// Checks that `extents` tile `[0, dim)` in order with no gaps or overlaps.
pub fn check_tiling(extents: &[Extent], dim: usize, what: &str) -> Result<()> {
    let mut cursor = 0;
    for e in extents {
        if e.offset != cursor {
            return Err(Error::config(
                what,
                format!("extent at offset {} does not continue from {cursor}", e.offset),
            ));
        }
        cursor = e.end();
    }
    if cursor != dim {
        return Err(Error::config(
            what,
            format!("extents cover {cursor} of {dim} coordinates"),
        ));
    }
    Ok(())
}

/// Splits `[0, dim)` into `parts` contiguous extents whose lengths differ by
/// at most one (earlier parts take the remainder).
pub fn uniform_extents(dim: usize, parts: usize) -> Vec<Extent> {
    let base = dim / parts;
    let extra = dim % parts;
    let mut offset = 0;
    (0..parts)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let e = Extent::new(offset, len);
            offset += len;
            e
        })
        .collect()
}

/// One example's gradient flattened in parameter order, together with the
/// per-layer extents and (for pipelined clipping) the per-stage partition.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatGradient<T> {
    pub values: Vec<T>,
    pub layer_extents: Vec<Extent>,
    pub stage_partition: Option<Vec<Extent>>,
}

impl<T: Scalar> FlatGradient<T> {
    /// Gradient with a single layer spanning all coordinates.
    pub fn from_values(values: Vec<T>) -> Self {
        let d = values.len();
        Self {
            values,
            layer_extents: vec![Extent::new(0, d)],
            stage_partition: None,
        }
    }

    pub fn with_layers(values: Vec<T>, layer_extents: Vec<Extent>) -> Result<Self> {
        check_tiling(&layer_extents, values.len(), "layer_extents")?;
        Ok(Self {
            values,
            layer_extents,
            stage_partition: None,
        })
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self {
            values: vec![T::zero(); other.values.len()],
            layer_extents: other.layer_extents.clone(),
            stage_partition: other.stage_partition.clone(),
        }
    }

    pub fn with_stages(mut self, stages: Vec<Extent>) -> Result<Self> {
        check_tiling(&stages, self.values.len(), "stage_partition")?;
        self.stage_partition = Some(stages);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// L2 norm accumulated in `f64`, left to right.
    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    /// Index of the layer that owns coordinate `index`.
    pub fn layer_of(&self, index: usize) -> usize {
        self.layer_extents
            .iter()
            .position(|e| e.range().contains(&index))
            .unwrap_or(0)
    }
}

pub fn l2_norm<T: Scalar>(values: &[T]) -> f64 {
    values
        .iter()
        .fold(0.0f64, |acc, &v| {
            let v = v.as_f64();
            acc + v * v
        })
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_extents_tile() {
        let e = uniform_extents(10, 3);
        assert_eq!(e, vec![Extent::new(0, 4), Extent::new(4, 3), Extent::new(7, 3)]);
        check_tiling(&e, 10, "t").unwrap();
    }

    #[test]
    fn tiling_rejects_gaps_and_short_cover() {
        assert!(check_tiling(&[Extent::new(0, 2), Extent::new(3, 2)], 5, "t").is_err());
        assert!(check_tiling(&[Extent::new(0, 2)], 5, "t").is_err());
    }
}
