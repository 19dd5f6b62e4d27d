//! Minibatch SGD with momentum. The whole loop is sequential and seeded, so
//! two runs with the same corpus and config produce bitwise-identical
//! weights.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cross_entropy, predict, ClassifierError, ClassifierModel};
use crate::render::Image;
use crate::target::RendererKind;

/// One rendered training example.
#[derive(Debug, Clone)]
pub struct LabeledView {
    pub image: Image,
    pub label: u32,
    pub view_id: u32,
    pub renderer: RendererKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Abort when the running loss exceeds this bound (or goes non-finite).
    pub divergence_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 4,
            batch_size: 16,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
            divergence_threshold: 50.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss per epoch, in epoch order.
    pub epoch_losses: Vec<f64>,
    /// Fraction of the corpus predicted correctly after the final update.
    pub train_accuracy: f64,
    pub n_examples: usize,
    pub n_classes: u32,
}

/// Trains a fresh model on the given views. Labels must cover every class in
/// `0..n_classes` where `n_classes` is one past the largest label.
pub fn train_classifier(
    views: &[LabeledView],
    config: &TrainConfig,
) -> Result<(ClassifierModel, TrainReport), ClassifierError> {
    if views.is_empty() {
        return Err(ClassifierError::InvalidCorpus("no training views".into()));
    }
    let n_classes = views.iter().map(|v| v.label).max().unwrap() + 1;
    if n_classes < 2 {
        return Err(ClassifierError::TooFewClasses(n_classes));
    }
    let mut seen = vec![false; n_classes as usize];
    for v in views {
        seen[v.label as usize] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(ClassifierError::InvalidCorpus(format!(
            "no views labelled {missing} (labels must cover 0..{n_classes})"
        )));
    }
    let resolution = views[0].image.width;
    for v in views {
        if v.image.width != resolution || v.image.height != resolution {
            return Err(ClassifierError::InvalidCorpus(format!(
                "view sizes are mixed: {}x{} vs {resolution}x{resolution}",
                v.image.width, v.image.height
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = ClassifierModel::new_random(n_classes, resolution, config.seed)?;
    let mut velocity = vec![0.0f64; model.weight_count()];
    let mut batch_grad = vec![0.0f64; model.weight_count()];

    let mut order: Vec<usize> = (0..views.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            batch_grad.fill(0.0);
            let mut batch_loss = 0.0;
            for &idx in batch {
                let v = &views[idx];
                let (loss, _) = model.accumulate_param_grads(&v.image, v.label, &mut batch_grad)?;
                batch_loss += loss;
            }
            let scale = 1.0 / batch.len() as f64;
            batch_loss *= scale;
            epoch_loss += batch_loss * batch.len() as f64;
            if !batch_loss.is_finite() || batch_loss > config.divergence_threshold {
                return Err(ClassifierError::DivergedLoss { step, loss: batch_loss });
            }
            let weights = model.weights_mut();
            for ((w, v), &g) in weights.iter_mut().zip(&mut velocity).zip(&batch_grad) {
                *v = config.momentum * *v - config.learning_rate * g * scale;
                *w = (*w as f64 + *v) as f32;
            }
            step += 1;
        }
        epoch_losses.push(epoch_loss / views.len() as f64);
        log::info!(
            "epoch {}/{}: mean loss {:.4}",
            epoch_losses.len(),
            config.epochs,
            epoch_losses.last().unwrap()
        );
    }

    let mut correct = 0;
    for v in views {
        let logits = model.forward(&v.image)?;
        if predict(&logits) == v.label {
            correct += 1;
        }
    }
    let report = TrainReport {
        epoch_losses,
        train_accuracy: correct as f64 / views.len() as f64,
        n_examples: views.len(),
        n_classes,
    };
    Ok((model, report))
}

/// Mean cross-entropy of a model over labelled views; handy for tests and
/// evaluation output.
pub fn mean_loss(model: &ClassifierModel, views: &[LabeledView]) -> Result<f64, ClassifierError> {
    let mut total = 0.0;
    for v in views {
        let logits = model.forward(&v.image)?;
        total += cross_entropy(&logits, v.label);
    }
    Ok(total / views.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Two-class toy set: class 0 is bright on the left half, class 1 on the
    /// right, plus per-image noise.
    fn separable_views(n_per_class: usize, seed: u64) -> Vec<LabeledView> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let res = 16u32;
        let mut views = Vec::new();
        for label in 0..2u32 {
            for k in 0..n_per_class {
                let mut image = Image::filled(res, res, [0.1; 3]);
                for y in 0..res {
                    for x in 0..res {
                        let bright = if label == 0 { x < res / 2 } else { x >= res / 2 };
                        let base: f64 = if bright { 0.9 } else { 0.1 };
                        let px = image.pixel_mut(x, y);
                        for ch in px.iter_mut() {
                            *ch = (base + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0);
                        }
                    }
                }
                views.push(LabeledView {
                    image,
                    label,
                    view_id: k as u32,
                    renderer: RendererKind::Surrogate,
                });
            }
        }
        views
    }

    #[test]
    fn learns_a_linearly_separable_toy_problem() {
        let views = separable_views(16, 42);
        let config = TrainConfig {
            epochs: 12,
            batch_size: 8,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 3,
            ..TrainConfig::default()
        };
        let (_, report) = train_classifier(&views, &config).unwrap();
        assert_eq!(report.train_accuracy, 1.0, "losses: {:?}", report.epoch_losses);
        let (first, last) = (report.epoch_losses[0], *report.epoch_losses.last().unwrap());
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let views = separable_views(6, 9);
        let config = TrainConfig { epochs: 2, batch_size: 4, ..TrainConfig::default() };
        let (m1, r1) = train_classifier(&views, &config).unwrap();
        let (m2, r2) = train_classifier(&views, &config).unwrap();
        assert_eq!(m1.weights(), m2.weights());
        assert_eq!(r1.epoch_losses, r2.epoch_losses);
    }

    #[test]
    fn seed_changes_the_outcome() {
        let views = separable_views(6, 9);
        let base = TrainConfig { epochs: 1, batch_size: 4, ..TrainConfig::default() };
        let other = TrainConfig { seed: 1, ..base.clone() };
        let (m1, _) = train_classifier(&views, &base).unwrap();
        let (m2, _) = train_classifier(&views, &other).unwrap();
        assert_ne!(m1.weights(), m2.weights());
    }

    #[test]
    fn rejects_gapped_labels_and_empty_corpora() {
        assert!(matches!(
            train_classifier(&[], &TrainConfig::default()),
            Err(ClassifierError::InvalidCorpus(_))
        ));
        let mut views = separable_views(2, 1);
        for v in &mut views {
            if v.label == 1 {
                v.label = 2; // now label 1 is missing
            }
        }
        let err = train_classifier(&views, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, ClassifierError::InvalidCorpus(_)), "{err}");
    }

    #[test]
    fn rejects_mixed_resolutions() {
        let mut views = separable_views(2, 1);
        views[0].image = Image::filled(32, 32, [0.5; 3]);
        let err = train_classifier(&views, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, ClassifierError::InvalidCorpus(_)));
    }

    #[test]
    fn diverged_loss_is_reported() {
        // An untrained 2-class model starts near ln 2 ~ 0.69, so a bound
        // below that must trip on the very first batch.
        let views = separable_views(4, 2);
        let config = TrainConfig {
            epochs: 3,
            divergence_threshold: 0.25,
            ..TrainConfig::default()
        };
        match train_classifier(&views, &config) {
            Err(ClassifierError::DivergedLoss { step: 0, loss }) => {
                assert!(loss > 0.25, "reported loss {loss} is under the bound")
            }
            other => panic!("expected DivergedLoss at step 0, got {other:?}"),
        }
    }
}
