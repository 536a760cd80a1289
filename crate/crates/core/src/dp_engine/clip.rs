//! L2 clipping of flattened gradients: whole-vector, per-layer, and per
//! pipeline stage.
//!
//! Slices whose norm is already within the bound are returned bitwise
//! unchanged. Saturated slices are scaled by `bound / norm` shrunk by a few
//! ulps of the element type, so that rounding in the rescale cannot push the
//! result above the bound. This makes clipping exactly idempotent.

use super::gradient::{Extent, FlatGradient};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[inline]
fn shrink<T: Scalar>() -> f64 {
    1.0 - (T::epsilon().as_f64() + 1e-11)
}

/// Clips `values` to L2 norm `bound` in place. Returns the norm before
/// clipping.
pub(crate) fn clip_slice<T: Scalar>(values: &mut [T], bound: f64) -> f64 {
    let norm = super::gradient::l2_norm(values);
    if norm > bound {
        let scale = bound / norm * shrink::<T>();
        for v in values.iter_mut() {
            *v = T::of(v.as_f64() * scale);
        }
    }
    norm
}

/// `g · min(1, C / ‖g‖₂)`.
pub fn clip_global<T: Scalar>(mut g: FlatGradient<T>, clip_norm: f64) -> FlatGradient<T> {
    clip_slice(&mut g.values, clip_norm);
    g
}

fn clip_partition<T: Scalar>(values: &mut [T], parts: &[Extent], bound: f64) {
    for e in parts {
        clip_slice(&mut values[e.range()], bound);
    }
}

/// Clips every layer slice independently to `C / √L`, so the whole vector
/// stays within `C`.
pub fn clip_per_layer<T: Scalar>(mut g: FlatGradient<T>, clip_norm: f64) -> Result<FlatGradient<T>> {
    let layers = g.layer_extents.len();
    if layers == 0 {
        return Err(Error::config("dp.mode", "per-layer clipping needs layer extents"));
    }
    let bound = clip_norm / (layers as f64).sqrt();
    let parts = std::mem::take(&mut g.layer_extents);
    clip_partition(&mut g.values, &parts, bound);
    g.layer_extents = parts;
    Ok(g)
}

/// Clips each of the `M` stage slices independently to `C / √M`. No stage
/// needs another stage's norm.
pub fn clip_per_stage<T: Scalar>(mut g: FlatGradient<T>, clip_norm: f64, stages: usize) -> Result<FlatGradient<T>> {
    let parts = g
        .stage_partition
        .take()
        .ok_or_else(|| Error::config("dp.stages", "per-stage clipping needs a stage partition"))?;
    if parts.len() != stages || stages == 0 {
        return Err(Error::config(
            "dp.stages",
            format!("stage partition has {} parts, expected {stages}", parts.len()),
        ));
    }
    let bound = clip_norm / (stages as f64).sqrt();
    clip_partition(&mut g.values, &parts, bound);
    g.stage_partition = Some(parts);
    Ok(g)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::super::gradient::uniform_extents;
    use super::*;

    fn fg(v: Vec<f64>) -> FlatGradient<f64> {
        FlatGradient::from_values(v)
    }

    #[test]
    fn three_four_five() {
        let out = clip_global(fg(vec![3.0, 4.0]), 1.0);
        assert!((out.values[0] - 0.6).abs() < 1e-10);
        assert!((out.values[1] - 0.8).abs() < 1e-10);
    }

    #[test]
    fn under_bound_and_zero_unchanged() {
        let g = fg(vec![0.1, 0.1]);
        assert_eq!(clip_global(g.clone(), 1.0), g);
        let z = fg(vec![0.0; 5]);
        assert_eq!(clip_global(z.clone(), 0.5), z);
    }

    #[test]
    fn per_layer_bound_is_c_over_sqrt_l() {
        let values: Vec<f64> = (0..40).map(|i| (i as f64 - 17.0) * 0.7).collect();
        let g = FlatGradient::with_layers(values, uniform_extents(40, 4)).unwrap();
        let out = clip_per_layer(g, 2.0).unwrap();
        for e in &out.layer_extents {
            let n = super::super::gradient::l2_norm(&out.values[e.range()]);
            assert!(n <= 1.0);
        }
    }

    #[test]
    fn per_stage_needs_matching_partition() {
        let g = fg(vec![1.0; 8]);
        assert!(clip_per_stage(g.clone(), 1.0, 2).is_err());
        let g = g.with_stages(uniform_extents(8, 4)).unwrap();
        assert!(clip_per_stage(g.clone(), 1.0, 2).is_err());
        assert!(clip_per_stage(g, 1.0, 4).is_ok());
    }

    #[test]
    fn per_stage_m4_c2_bounds_each_stage_by_one() {
        let g = fg((0..16).map(|i| i as f64).collect())
            .with_stages(uniform_extents(16, 4))
            .unwrap();
        let out = clip_per_stage(g, 2.0, 4).unwrap();
        for e in out.stage_partition.as_ref().unwrap() {
            let n = super::super::gradient::l2_norm(&out.values[e.range()]);
            assert!(n <= 1.0 && n > 1.0 - 1e-9);
        }
    }

    #[test]
    fn degenerate_partitions_equal_global() {
        let v: Vec<f64> = (0..9).map(|i| (i as f64).sin() * 5.0).collect();
        let global = clip_global(fg(v.clone()), 1.5);
        let layer = clip_per_layer(fg(v.clone()), 1.5).unwrap();
        let stage = clip_per_stage(fg(v).with_stages(vec![Extent::new(0, 9)]).unwrap(), 1.5, 1).unwrap();
        assert_eq!(global.values, layer.values);
        assert_eq!(global.values, stage.values);
    }

    #[test]
    fn f32_saturated_output_stays_within_bound() {
        let g = FlatGradient::from_values((0..1000).map(|i| ((i * 7919) % 113) as f32 - 56.0).collect());
        let out = clip_global(g, 0.3);
        assert!(out.norm() <= 0.3);
        assert_eq!(clip_global(out.clone(), 0.3), out);
    }

    proptest! {
        #[test]
        fn clip_bounded_and_idempotent(
            v in prop::collection::vec(-1e3f64..1e3, 1..200),
            c in 1e-3f64..1e3,
        ) {
            let once = clip_global(fg(v), c);
            prop_assert!(once.norm() <= c * (1.0 + 1e-6));
            prop_assert_eq!(clip_global(once.clone(), c), once);
        }

        #[test]
        fn saturated_clip_invariant_to_upscaling(
            v in prop::collection::vec(-10f64..10.0, 1..50),
            s in 1.0f64..100.0,
        ) {
            let g = fg(v);
            let c = 0.5 * g.norm();
            prop_assume!(c > 1e-6);
            let a = clip_global(g.clone(), c);
            let b = clip_global(fg(g.values.iter().map(|x| x * s).collect()), c);
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() <= 1e-12 * c.max(1.0));
            }
        }

        #[test]
        fn partitioned_clip_never_grows_a_slice(
            v in prop::collection::vec(-5f64..5.0, 8..64),
            m in 1usize..8,
            c in 0.01f64..10.0,
        ) {
            let parts = uniform_extents(v.len(), m);
            let g = FlatGradient::with_layers(v.clone(), parts.clone()).unwrap()
                .with_stages(parts.clone()).unwrap();
            let by_stage = clip_per_stage(g.clone(), c, m).unwrap();
            let by_layer = clip_per_layer(g, c).unwrap();
            for out in [&by_stage, &by_layer] {
                prop_assert!(out.norm() <= c * (1.0 + 1e-6));
                for e in &parts {
                    let before = super::super::gradient::l2_norm(&v[e.range()]);
                    let after = super::super::gradient::l2_norm(&out.values[e.range()]);
                    prop_assert!(after <= before);
                    prop_assert!(after <= c / (m as f64).sqrt() * (1.0 + 1e-6));
                }
            }
        }
    }
}
