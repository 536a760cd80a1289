use super::gradient::Extent;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClipMode {
    /// One bound `C` on the whole gradient.
    Global,
    /// `C / √L` on each of the `L` parameterized layers.
    PerLayer,
    /// `C / √M` on each pipeline stage. `boundaries` lists the parameterized
    /// layer indices at which stages 2..M begin; when absent the layers are
    /// split into `M` contiguous runs of near-equal count.
    PerStage {
        stages: usize,
        boundaries: Option<Vec<usize>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoisePlacement {
    /// N(0, σ²C²/|B|) on each clipped example before accumulation.
    PerExample,
    /// N(0, σ²C²) once on the accumulated sum.
    PerBatch,
}

/// Privacy and batch-composition settings for one training run.
///
/// The effective batch is `replicas × 1 × grad_acc`: each replica processes
/// single examples (micro-batch 1) and accumulates `grad_acc` of them.
#[derive(Debug, Clone, PartialEq)]
pub struct DpConfig {
    /// When false, clipping and noising are skipped and the loop is plain
    /// mini-batch SGD over the same batches.
    pub private: bool,
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    pub mode: ClipMode,
    pub noise_placement: NoisePlacement,
    pub replicas: usize,
    pub grad_acc: usize,
    pub seed: u64,
}

impl DpConfig {
    pub fn new(clip_norm: f64, noise_multiplier: f64, mode: ClipMode) -> Self {
        Self {
            private: true,
            clip_norm,
            noise_multiplier,
            mode,
            noise_placement: NoisePlacement::PerExample,
            replicas: 1,
            grad_acc: 1,
            seed: 0,
        }
    }

    pub fn non_private() -> Self {
        Self {
            private: false,
            ..Self::new(f64::INFINITY, 0.0, ClipMode::Global)
        }
    }

    pub fn with_batch(mut self, replicas: usize, grad_acc: usize) -> Self {
        self.replicas = replicas;
        self.grad_acc = grad_acc;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn effective_batch(&self) -> usize {
        self.replicas * self.grad_acc
    }

    /// Standard deviation of the noise added to one clipped example.
    pub fn per_example_noise_std(&self) -> f64 {
        self.noise_multiplier * self.clip_norm / (self.effective_batch() as f64).sqrt()
    }

    /// Standard deviation of the noise on the accumulated sum.
    pub fn batch_noise_std(&self) -> f64 {
        self.noise_multiplier * self.clip_norm
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicas == 0 {
            return Err(Error::config("dp.replicas", "must be >= 1"));
        }
        if self.grad_acc == 0 {
            return Err(Error::config("dp.grad_acc", "must be >= 1"));
        }
        if !self.private {
            return Ok(());
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("dp.clip_norm", "must be > 0"));
        }
        if !(self.noise_multiplier >= 0.0) || !self.noise_multiplier.is_finite() {
            return Err(Error::config("dp.noise_multiplier", "must be finite and >= 0"));
        }
        if let ClipMode::PerStage { stages, .. } = self.mode {
            if stages == 0 {
                return Err(Error::config("dp.stages", "must be >= 1"));
            }
        }
        Ok(())
    }
}

/// Groups per-layer extents into pipeline-stage extents.
pub fn stage_partition(layers: &[Extent], stages: usize, boundaries: Option<&[usize]>) -> Result<Vec<Extent>> {
    if stages == 0 || stages > layers.len() {
        return Err(Error::config(
            "dp.stages",
            format!("cannot split {} parameterized layers into {stages} stages", layers.len()),
        ));
    }
    let starts: Vec<usize> = match boundaries {
        Some(b) => {
            if b.len() + 1 != stages {
                return Err(Error::config(
                    "dp.stage_boundaries",
                    format!("{} boundaries define {} stages, expected {stages}", b.len(), b.len() + 1),
                ));
            }
            let mut starts = vec![0];
            starts.extend_from_slice(b);
            if starts.windows(2).any(|w| w[0] >= w[1]) || *starts.last().unwrap() >= layers.len() {
                return Err(Error::config(
                    "dp.stage_boundaries",
                    "must be strictly increasing layer indices inside the model",
                ));
            }
            starts
        }
        None => super::gradient::uniform_extents(layers.len(), stages)
            .iter()
            .map(|e| e.offset)
            .collect(),
    };
    Ok((0..stages)
        .map(|s| {
            let first = layers[starts[s]];
            let last = layers[starts.get(s + 1).map_or(layers.len(), |&n| n) - 1];
            Extent::new(first.offset, last.end() - first.offset)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layers() -> Vec<Extent> {
        vec![Extent::new(0, 5), Extent::new(5, 3), Extent::new(8, 10), Extent::new(18, 2)]
    }

    #[test]
    fn uniform_stage_split() {
        let s = stage_partition(&layers(), 2, None).unwrap();
        assert_eq!(s, vec![Extent::new(0, 8), Extent::new(8, 12)]);
        let s = stage_partition(&layers(), 3, None).unwrap();
        assert_eq!(s, vec![Extent::new(0, 8), Extent::new(8, 10), Extent::new(18, 2)]);
    }

    #[test]
    fn explicit_boundaries() {
        let s = stage_partition(&layers(), 2, Some(&[3])).unwrap();
        assert_eq!(s, vec![Extent::new(0, 18), Extent::new(18, 2)]);
        assert!(stage_partition(&layers(), 3, Some(&[3])).is_err());
        assert!(stage_partition(&layers(), 3, Some(&[2, 2])).is_err());
        assert!(stage_partition(&layers(), 5, None).is_err());
    }

    #[test]
    fn validation() {
        assert!(DpConfig::new(0.0, 1.0, ClipMode::Global).validate().is_err());
        assert!(DpConfig::new(1.0, -1.0, ClipMode::Global).validate().is_err());
        assert!(DpConfig::new(1.0, 1.0, ClipMode::Global).with_batch(1, 0).validate().is_err());
        assert!(DpConfig::non_private().validate().is_ok());
        assert_eq!(DpConfig::new(1.0, 1.0, ClipMode::Global).with_batch(4, 8).effective_batch(), 32);
    }
}
