//! Attack quality metrics: rig accuracy, relative accuracy drop, and the
//! mean-absolute texel change.

use thiserror::Error;

use crate::classifier::{predict, ClassifierError, ClassifierModel};
use crate::render::Image;
use crate::scene::Scene;
use crate::target::{render_rig, RendererKind};
use crate::texture::Texture;

/// Components whose absolute difference exceeds this count as "changed" for
/// the diagnostic changed-fraction metric.
pub const CHANGED_COMPONENT_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("accuracy drop is undefined when the clean accuracy is 0")]
    NotApplicable,
    #[error("texture shapes differ: {a_w}x{a_h} vs {b_w}x{b_h}")]
    ShapeMismatch { a_w: u32, a_h: u32, b_w: u32, b_h: u32 },
}

pub fn predictions_over_views(
    model: &ClassifierModel,
    images: &[Image],
) -> Result<Vec<u32>, ClassifierError> {
    images.iter().map(|img| Ok(predict(&model.forward(img)?))).collect()
}

pub(crate) fn fraction_correct(predictions: &[u32], label: u32) -> f64 {
    let correct = predictions.iter().filter(|&&p| p == label).count();
    correct as f64 / predictions.len() as f64
}

pub fn accuracy_over_views(
    model: &ClassifierModel,
    images: &[Image],
    label: u32,
) -> Result<f64, ClassifierError> {
    Ok(fraction_correct(&predictions_over_views(model, images)?, label))
}

/// Renders the scene's rig with the given texture under the chosen renderer
/// and returns the per-view predictions.
pub fn rig_predictions(
    scene: &Scene,
    texture: &Texture,
    model: &ClassifierModel,
    kind: RendererKind,
) -> Result<Vec<u32>, ClassifierError> {
    let images = render_rig(&scene.mesh, texture, &scene.rig, kind, &scene.target);
    predictions_over_views(model, &images)
}

/// Fraction of rig views classified as the scene's ground-truth label.
pub fn accuracy_over_rig(
    scene: &Scene,
    texture: &Texture,
    model: &ClassifierModel,
    kind: RendererKind,
) -> Result<f64, ClassifierError> {
    Ok(fraction_correct(&rig_predictions(scene, texture, model, kind)?, scene.label))
}

/// Relative accuracy drop (a_before - a_after) / a_before. Undefined when
/// the object was never recognized to begin with; negative values are legal
/// (the attack can accidentally help).
pub fn accuracy_drop(a_before: f64, a_after: f64) -> Result<f64, MetricsError> {
    if a_before == 0.0 {
        return Err(MetricsError::NotApplicable);
    }
    Ok((a_before - a_after) / a_before)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TexelChange {
    /// Mean absolute componentwise change: l1 norm / component count.
    pub n_pct: f64,
    /// Diagnostic companion: fraction of components whose change exceeds
    /// `CHANGED_COMPONENT_THRESHOLD`.
    pub changed_fraction: f64,
}

pub fn texel_change(before: &Texture, after: &Texture) -> Result<TexelChange, MetricsError> {
    if before.width() != after.width() || before.height() != after.height() {
        return Err(MetricsError::ShapeMismatch {
            a_w: before.width(),
            a_h: before.height(),
            b_w: after.width(),
            b_h: after.height(),
        });
    }
    let a = before.data();
    let b = after.data();
    let mut l1 = 0.0;
    let mut changed = 0usize;
    for (x, y) in a.iter().zip(b) {
        let d = (x - y).abs();
        l1 += d;
        if d > CHANGED_COMPONENT_THRESHOLD {
            changed += 1;
        }
    }
    Ok(TexelChange {
        n_pct: l1 / a.len() as f64,
        changed_fraction: changed as f64 / a.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fraction_correct_counts_matches() {
        assert_eq!(fraction_correct(&[2, 2, 2, 2], 2), 1.0);
        assert_eq!(fraction_correct(&[0, 0, 1, 1], 0), 0.5);
        assert_eq!(fraction_correct(&[1, 2, 3], 0), 0.0);
    }

    #[test]
    fn accuracy_drop_formula() {
        assert_eq!(accuracy_drop(1.0, 0.0).unwrap(), 1.0);
        assert_eq!(accuracy_drop(0.5, 0.25).unwrap(), 0.5);
        // The attack can make recognition better; the drop is then negative.
        assert_eq!(accuracy_drop(0.5, 0.75).unwrap(), -0.5);
        assert!(matches!(accuracy_drop(0.0, 0.5), Err(MetricsError::NotApplicable)));
        for a in [0.05, 0.3, 1.0] {
            assert_eq!(accuracy_drop(a, a).unwrap(), 0.0);
        }
    }

    #[test]
    fn texel_change_on_identical_and_shifted() {
        let t = Texture::constant(8, 8, [0.5, 0.5, 0.5]).unwrap();
        let same = texel_change(&t, &t).unwrap();
        assert_eq!(same.n_pct, 0.0);
        assert_eq!(same.changed_fraction, 0.0);

        let shifted_data: Vec<f64> = t.data().iter().map(|v| v + 0.05).collect();
        let shifted = Texture::from_data(8, 8, shifted_data).unwrap();
        let change = texel_change(&t, &shifted).unwrap();
        assert!((change.n_pct - 0.05).abs() < 1e-12);
        assert_eq!(change.changed_fraction, 1.0);
    }

    #[test]
    fn texel_change_counts_only_meaningful_components() {
        let t = Texture::constant(4, 4, [0.5, 0.5, 0.5]).unwrap();
        let mut data = t.data().to_vec();
        data[0] += 0.25; // one component well above threshold
        data[1] += 1e-12; // below threshold: ignored by the count
        let other = Texture::from_data(4, 4, data).unwrap();
        let change = texel_change(&t, &other).unwrap();
        let n = (4 * 4 * 3) as f64;
        assert_eq!(change.changed_fraction, 1.0 / n);
        assert!((change.n_pct - (0.25 + 1e-12) / n).abs() < 1e-15);
    }

    #[test]
    fn texel_change_rejects_mismatched_shapes() {
        let a = Texture::constant(8, 8, [0.0; 3]).unwrap();
        let b = Texture::constant(8, 4, [0.0; 3]).unwrap();
        assert!(matches!(texel_change(&a, &b), Err(MetricsError::ShapeMismatch { .. })));
    }

    proptest! {
        /// n_pct is a scaled l1 metric: symmetric and triangle-inequality.
        #[test]
        fn texel_change_is_a_metric(
            a in proptest::collection::vec(0.0f64..1.0, 48),
            b in proptest::collection::vec(0.0f64..1.0, 48),
            c in proptest::collection::vec(0.0f64..1.0, 48),
        ) {
            let ta = Texture::from_data(4, 4, a).unwrap();
            let tb = Texture::from_data(4, 4, b).unwrap();
            let tc = Texture::from_data(4, 4, c).unwrap();
            let dab = texel_change(&ta, &tb).unwrap().n_pct;
            let dba = texel_change(&tb, &ta).unwrap().n_pct;
            let dac = texel_change(&ta, &tc).unwrap().n_pct;
            let dcb = texel_change(&tc, &tb).unwrap().n_pct;
            prop_assert_eq!(dab, dba);
            prop_assert!(dab <= dac + dcb + 1e-12);
        }
    }
}
