//! The EOT-PGD texture attack.
//!
//! Gradient ascent on the classifier's loss, averaged over the view rig
//! (expectation over transformation), with each step projected back into the
//! l-inf ball around the base texture and into [0,1]. Rasterization is
//! texture-independent, so fragment buffers are computed once per view and
//! reused across all steps; only shading, the classifier passes, and the
//! texel backprojection run per step.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::classifier::{ClassifierError, ClassifierModel};
use crate::metrics::{accuracy_drop, texel_change, MetricsError};
use crate::raster::{rasterize, FragmentBuffer};
use crate::render::{backprop_texture, shade, RenderError};
use crate::report::{AttackReport, ViewPrediction};
use crate::saliency::{build_saliency_mask, SaliencyError, SaliencyMap};
use crate::scene::Scene;
use crate::texture::Texture;

/// Slack for the per-step l-inf ball assertion; covers float rounding in the
/// projection arithmetic, nothing more.
pub const BALL_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("gradient has {got} components, texture has {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Saliency(#[from] SaliencyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    /// l-inf radius in texture space, in (0,1].
    pub epsilon: f64,
    /// Step length; at most epsilon.
    pub alpha: f64,
    pub n_steps: usize,
    /// Views per gradient estimate; `None` uses the full rig every step.
    pub view_batch: Option<usize>,
    /// When set, restrict the attack to the saliency mask at this threshold.
    pub saliency_threshold: Option<f64>,
    pub seed: u64,
    /// Start from a uniform random point inside the ball instead of t0.
    pub random_start: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: 0.05,
            alpha: 0.01,
            n_steps: 100,
            view_batch: None,
            saliency_threshold: None,
            seed: 0,
            random_start: false,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self, rig_size: usize) -> Result<(), AttackError> {
        let bad = |field: &'static str, reason: String| Err(AttackError::InvalidConfig { field, reason });
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return bad("epsilon", format!("{} is outside (0,1]", self.epsilon));
        }
        if !(self.alpha > 0.0) {
            return bad("alpha", format!("{} must be positive", self.alpha));
        }
        if self.alpha > self.epsilon {
            return bad("alpha", format!("{} exceeds epsilon {}", self.alpha, self.epsilon));
        }
        if let Some(k) = self.view_batch {
            if k == 0 || k > rig_size {
                return bad("view_batch", format!("{k} is outside 1..={rig_size}"));
            }
        }
        if let Some(tau) = self.saliency_threshold {
            if !(tau > 0.0 && tau < 1.0) {
                return bad("saliency_threshold", format!("{tau} is outside (0,1)"));
            }
        }
        Ok(())
    }
}

/// The attack's mutable state: base texture, current iterate, and bookkeeping.
#[derive(Debug, Clone)]
pub struct AttackState {
    pub base: Texture,
    pub current: Texture,
    pub step: usize,
    /// Mean batch loss measured at the iterate *before* each step.
    pub loss_trajectory: Vec<f64>,
    pub mask: Option<SaliencyMap>,
}

impl AttackState {
    pub fn new(base: Texture, mask: Option<SaliencyMap>) -> Self {
        AttackState {
            current: base.clone(),
            base,
            step: 0,
            loss_trajectory: Vec::new(),
            mask,
        }
    }

    #[inline]
    fn component_allowed(&self, idx: usize) -> bool {
        match &self.mask {
            Some(mask) => mask.allows_component(idx),
            None => true,
        }
    }

    /// Jitters unmasked components by uniform(-epsilon, epsilon), clipped to
    /// [0,1]. Masked components stay exactly at t0.
    pub fn random_start(&mut self, epsilon: f64, rng: &mut ChaCha8Rng) {
        let data = self.current.data_mut();
        for i in 0..data.len() {
            if self.mask.as_ref().map_or(true, |m| m.allows_component(i)) {
                let noise = rng.gen_range(-epsilon..epsilon);
                data[i] = (data[i] + noise).clamp(0.0, 1.0);
            }
        }
    }

    /// Verifies the per-step contract: iterate inside the l-inf ball (with
    /// float slack) and [0,1], masked components bitwise untouched.
    pub fn check_invariants(&self, epsilon: f64) -> Result<(), String> {
        for (i, (&t, &t0)) in self.current.data().iter().zip(self.base.data()).enumerate() {
            if (t - t0).abs() > epsilon + BALL_TOLERANCE {
                return Err(format!(
                    "component {i} escaped the ball: |{t} - {t0}| > {epsilon}"
                ));
            }
            if !(0.0..=1.0).contains(&t) {
                return Err(format!("component {i} left [0,1]: {t}"));
            }
            if !self.component_allowed(i) && t.to_bits() != t0.to_bits() {
                return Err(format!("masked component {i} changed: {t0} -> {t}"));
            }
        }
        Ok(())
    }
}

/// One projected sign-gradient step:
/// t <- clip_[0,1]( clip_{t0 +- eps}( t + alpha * sign(g) (*) mask ) ),
/// with sign(0) = 0 so untouched texels stay untouched.
pub fn pgd_step(
    state: &mut AttackState,
    gradient: &[f64],
    config: &AttackConfig,
) -> Result<(), AttackError> {
    let n = state.current.data().len();
    if gradient.len() != n {
        return Err(AttackError::ShapeMismatch { expected: n, got: gradient.len() });
    }
    let base = state.base.data().to_vec();
    let data = state.current.data_mut();
    for i in 0..n {
        if !match &state.mask {
            Some(mask) => mask.allows_component(i),
            None => true,
        } {
            continue;
        }
        let g = gradient[i];
        let s = if g > 0.0 {
            1.0
        } else if g < 0.0 {
            -1.0
        } else {
            0.0
        };
        let moved = data[i] + config.alpha * s;
        let lo = (base[i] - config.epsilon).max(0.0);
        let hi = (base[i] + config.epsilon).min(1.0);
        data[i] = moved.clamp(lo, hi);
    }
    state.step += 1;
    Ok(())
}

/// Mean texture gradient and mean loss over the listed views, accumulated in
/// ascending view order. Fragment buffers must cover the whole rig.
fn eot_gradient_cached(
    buffers: &[FragmentBuffer],
    scene: &Scene,
    model: &ClassifierModel,
    texture: &Texture,
    views: &[usize],
) -> Result<(Vec<f64>, f64), AttackError> {
    let mut acc = vec![0.0f64; texture.data().len()];
    let mut loss_sum = 0.0;
    for &v in views {
        let image = shade(&buffers[v], texture, scene.rig.background);
        let ig = model.grad_input(&image, scene.label)?;
        let tex_grad = backprop_texture(&buffers[v], &ig.grad)?;
        for (a, g) in acc.iter_mut().zip(&tex_grad) {
            *a += g;
        }
        loss_sum += ig.loss;
    }
    let inv = 1.0 / views.len() as f64;
    for a in &mut acc {
        *a *= inv;
    }
    Ok((acc, loss_sum * inv))
}

/// Stand-alone EOT gradient for the given rig views (rasterizes on the fly;
/// the attack loop itself reuses cached fragment buffers).
pub fn eot_gradient(
    scene: &Scene,
    model: &ClassifierModel,
    texture: &Texture,
    views: &[usize],
) -> Result<(Vec<f64>, f64), AttackError> {
    let buffers = rasterize_rig(scene, texture);
    let mut sorted = views.to_vec();
    sorted.sort_unstable();
    eot_gradient_cached(&buffers, scene, model, texture, &sorted)
}

fn rasterize_rig(scene: &Scene, texture: &Texture) -> Vec<FragmentBuffer> {
    scene
        .rig
        .views
        .par_iter()
        .enumerate()
        .map(|(i, camera)| {
            rasterize(
                &scene.mesh,
                camera,
                scene.rig.light_for_view(i),
                texture.width(),
                texture.height(),
            )
        })
        .collect()
}

/// Deterministic batch selection: a seeded pass order over the rig, cycled;
/// each batch is re-sorted ascending so gradient accumulation stays in
/// view-index order. `view_batch = None` yields the full rig every step.
struct BatchSchedule {
    order: Vec<usize>,
    cursor: usize,
    k: usize,
}

impl BatchSchedule {
    fn new(n_views: usize, view_batch: Option<usize>, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n_views).collect();
        let k = match view_batch {
            Some(k) if k < n_views => {
                order.shuffle(rng);
                k
            }
            _ => n_views,
        };
        BatchSchedule { order, cursor: 0, k }
    }

    fn next(&mut self) -> Vec<usize> {
        let mut batch = Vec::with_capacity(self.k);
        for _ in 0..self.k {
            batch.push(self.order[self.cursor]);
            self.cursor = (self.cursor + 1) % self.order.len();
        }
        batch.sort_unstable();
        batch
    }
}

/// Rounds to the 8-bit texture grid without leaving the l-inf ball: byte
/// levels step toward the base value until the constraint holds again.
fn quantize_into_ball(current: &Texture, base: &Texture, epsilon: f64) -> Texture {
    let data: Vec<f64> = current
        .data()
        .iter()
        .zip(base.data())
        .map(|(&v, &b)| {
            let mut k = (v * 255.0).round() as i32;
            let mut guard = 0;
            while (k as f64 / 255.0 - b).abs() > epsilon && guard < 256 {
                k -= if k as f64 / 255.0 > b { 1 } else { -1 };
                guard += 1;
            }
            (k.clamp(0, 255)) as f64 / 255.0
        })
        .collect();
    Texture::from_data(current.width(), current.height(), data)
        .expect("quantized texture stays in range")
}

/// Runs the full attack against the scene's rig and returns the quantized
/// adversarial texture plus a filled report (white-box: accuracies are
/// measured through the surrogate renderer).
pub fn run_attack(
    scene: &Scene,
    model: &ClassifierModel,
    classifier_id: &str,
    config: &AttackConfig,
) -> Result<(Texture, AttackReport), AttackError> {
    config.validate(scene.rig.views.len())?;
    let started = Instant::now();

    let buffers = rasterize_rig(scene, &scene.base_texture);
    let clean_images: Vec<_> = buffers
        .iter()
        .map(|b| shade(b, &scene.base_texture, scene.rig.background))
        .collect();
    let clean_preds: Vec<u32> = clean_images
        .iter()
        .map(|img| Ok(crate::classifier::predict(&model.forward(img)?)))
        .collect::<Result<_, ClassifierError>>()?;
    let a_before = clean_preds.iter().filter(|&&p| p == scene.label).count() as f64
        / clean_preds.len() as f64;
    if a_before < 0.5 {
        log::warn!(
            "{}: clean accuracy {a_before:.2} is below 0.5; the drop metric will be noisy",
            scene.name
        );
    }

    let mask = config
        .saliency_threshold
        .map(|tau| build_saliency_mask(scene, model, tau))
        .transpose()?;

    // One RNG drives everything, consumed in a fixed order: first the batch
    // schedule's pass order, then the optional random start.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut schedule = BatchSchedule::new(scene.rig.views.len(), config.view_batch, &mut rng);
    let mut state = AttackState::new(scene.base_texture.clone(), mask);
    if config.random_start {
        state.random_start(config.epsilon, &mut rng);
    }

    for _ in 0..config.n_steps {
        let batch = schedule.next();
        let (grad, loss) = eot_gradient_cached(&buffers, scene, model, &state.current, &batch)?;
        state.loss_trajectory.push(loss);
        pgd_step(&mut state, &grad, config)?;
        if let Err(violation) = state.check_invariants(config.epsilon) {
            panic!("PGD invariant broken at step {}: {violation}", state.step);
        }
    }

    let adversarial = quantize_into_ball(&state.current, &state.base, config.epsilon);
    let adv_images: Vec<_> = buffers
        .iter()
        .map(|b| shade(b, &adversarial, scene.rig.background))
        .collect();
    // The view-space constraint the texture ball is supposed to guarantee:
    // shading is linear in the texture with coefficients summing to <= 1.
    for (i, (clean, adv)) in clean_images.iter().zip(&adv_images).enumerate() {
        let diff = clean.max_abs_diff(adv);
        assert!(
            diff <= config.epsilon * (1.0 + 1e-12) + 1e-15,
            "view {i}: image deviation {diff} exceeds epsilon {}",
            config.epsilon
        );
    }
    let adv_preds: Vec<u32> = adv_images
        .iter()
        .map(|img| Ok(crate::classifier::predict(&model.forward(img)?)))
        .collect::<Result<_, ClassifierError>>()?;
    let a_after =
        adv_preds.iter().filter(|&&p| p == scene.label).count() as f64 / adv_preds.len() as f64;

    let change = texel_change(&scene.base_texture, &adversarial)?;
    let report = AttackReport {
        object: scene.name.clone(),
        label: scene.label,
        renderer: crate::target::RendererKind::Surrogate,
        classifier_id: classifier_id.to_string(),
        epsilon: config.epsilon,
        alpha: config.alpha,
        n_steps: config.n_steps,
        view_batch: config.view_batch,
        saliency_threshold: config.saliency_threshold,
        random_start: config.random_start,
        seed: config.seed,
        a_before,
        a_after,
        a_drop: accuracy_drop(a_before, a_after).ok(),
        n_pct: change.n_pct,
        changed_texel_fraction: change.changed_fraction,
        per_view: clean_preds
            .iter()
            .zip(&adv_preds)
            .enumerate()
            .map(|(view, (&clean, &adversarial))| ViewPrediction {
                view: view as u32,
                clean,
                adversarial,
            })
            .collect(),
        loss_trajectory: state.loss_trajectory.clone(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((adversarial, report))
}
