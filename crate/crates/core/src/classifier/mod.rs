//! A small convolutional classifier over rendered views.
//!
//! Four 3x3/stride-2 conv+ReLU blocks (widths 16/32/64/128) feed a global
//! average pool and a linear head. Everything is computed in f64 on the CPU
//! with exact analytic gradients — both for training and for the input
//! gradients the attack consumes. Weights are stored as f32 so the on-disk
//! format round-trips bitwise.

mod kernels;
mod train;
mod weights;

pub use train::{mean_loss, train_classifier, LabeledView, TrainConfig, TrainReport};

use kernels::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::render::Image;

/// Channel widths of the four conv blocks.
pub const CHANNELS: [usize; 4] = [16, 32, 64, 128];
/// Default input resolution (square).
pub const DEFAULT_INPUT_RESOLUTION: u32 = 128;
/// Smallest usable input: four stride-2 blocks must leave spatial extent >= 1.
pub const MIN_INPUT_RESOLUTION: u32 = 16;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("input is {got_w}x{got_h} but the model expects {expected}x{expected}")]
    ResolutionMismatch { expected: u32, got_w: u32, got_h: u32 },
    #[error("model must have at least 2 classes, got {0}")]
    TooFewClasses(u32),
    #[error("input resolution {0} is below the minimum {MIN_INPUT_RESOLUTION}")]
    ResolutionTooSmall(u32),
    #[error("training loss became non-finite at step {step} (loss {loss})")]
    DivergedLoss { step: usize, loss: f64 },
    #[error("training corpus is unusable: {0}")]
    InvalidCorpus(String),
    #[error("weight file is corrupt: stored checksum does not match contents")]
    ChecksumMismatch,
    #[error("weight file was written for a different architecture (hash {got} vs {expected})")]
    SpecMismatch { expected: String, got: String },
    #[error("weight file is malformed: {0}")]
    MalformedWeights(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Offsets of one layer's weights and biases inside the flat store.
#[derive(Debug, Clone, Copy)]
struct LayerSlot {
    w_off: usize,
    w_len: usize,
    b_off: usize,
    b_len: usize,
}

impl LayerSlot {
    fn end(&self) -> usize {
        self.b_off + self.b_len
    }
}

/// The fixed four-block architecture for a given input resolution.
#[derive(Debug, Clone)]
struct Architecture {
    convs: [ConvShape; 4],
    slots: [LayerSlot; 5],
    n_classes: usize,
}

impl Architecture {
    fn new(input_resolution: u32, n_classes: u32) -> Self {
        let res = input_resolution as usize;
        let mut convs = [ConvShape { in_h: 0, in_w: 0, c_in: 0, c_out: 0 }; 4];
        let (mut h, mut w, mut c) = (res, res, 3);
        for (i, &width) in CHANNELS.iter().enumerate() {
            convs[i] = ConvShape { in_h: h, in_w: w, c_in: c, c_out: width };
            h = convs[i].out_h();
            w = convs[i].out_w();
            c = width;
        }
        let mut slots = [LayerSlot { w_off: 0, w_len: 0, b_off: 0, b_len: 0 }; 5];
        let mut off = 0;
        for (i, conv) in convs.iter().enumerate() {
            slots[i] = LayerSlot {
                w_off: off,
                w_len: conv.weight_len(),
                b_off: off + conv.weight_len(),
                b_len: conv.c_out,
            };
            off = slots[i].end();
        }
        let head_in = CHANNELS[3];
        slots[4] = LayerSlot {
            w_off: off,
            w_len: head_in * n_classes as usize,
            b_off: off + head_in * n_classes as usize,
            b_len: n_classes as usize,
        };
        Architecture { convs, slots, n_classes: n_classes as usize }
    }

    fn weight_count(&self) -> usize {
        self.slots[4].end()
    }
}

/// CNN classifier with a flat f32 weight store.
#[derive(Debug, Clone)]
pub struct ClassifierModel {
    n_classes: u32,
    input_resolution: u32,
    weights: Vec<f32>,
    arch: Architecture,
}

/// Input gradient plus the forward quantities it was derived from.
pub struct InputGradient {
    /// d cross_entropy / d input, same shape as the input image.
    pub grad: Image,
    pub logits: Vec<f64>,
    pub loss: f64,
}

/// Per-layer activations kept for the backward pass. `post[i]` is the
/// post-ReLU output of conv block i; `gap` and `logits` follow.
struct Activations {
    post: [Vec<f64>; 4],
    gap: Vec<f64>,
    logits: Vec<f64>,
}

impl ClassifierModel {
    /// He-uniform initialised model (biases zero), deterministic in `seed`.
    pub fn new_random(n_classes: u32, input_resolution: u32, seed: u64) -> Result<Self, ClassifierError> {
        let mut model = Self::zeroed(n_classes, input_resolution)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, conv) in model.arch.convs.iter().enumerate() {
            let bound = (6.0 / (9 * conv.c_in) as f64).sqrt();
            let slot = model.arch.slots[i];
            for w in &mut model.weights[slot.w_off..slot.w_off + slot.w_len] {
                *w = rng.gen_range(-bound..bound) as f32;
            }
        }
        let head = model.arch.slots[4];
        let bound = (6.0 / (CHANNELS[3] + n_classes as usize) as f64).sqrt();
        for w in &mut model.weights[head.w_off..head.w_off + head.w_len] {
            *w = rng.gen_range(-bound..bound) as f32;
        }
        Ok(model)
    }

    /// All-zero weights; mostly useful as a fixture and for loading.
    pub fn zeroed(n_classes: u32, input_resolution: u32) -> Result<Self, ClassifierError> {
        if n_classes < 2 {
            return Err(ClassifierError::TooFewClasses(n_classes));
        }
        if input_resolution < MIN_INPUT_RESOLUTION {
            return Err(ClassifierError::ResolutionTooSmall(input_resolution));
        }
        let arch = Architecture::new(input_resolution, n_classes);
        let weights = vec![0.0f32; arch.weight_count()];
        Ok(ClassifierModel { n_classes, input_resolution, weights, arch })
    }

    pub fn n_classes(&self) -> u32 {
        self.n_classes
    }

    pub fn input_resolution(&self) -> u32 {
        self.input_resolution
    }

    pub fn weight_count(&self) -> usize {
        self.weights.len()
    }

    pub(crate) fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f32] {
        &mut self.weights
    }

    pub(crate) fn from_weights(
        n_classes: u32,
        input_resolution: u32,
        weights: Vec<f32>,
    ) -> Result<Self, ClassifierError> {
        let mut model = Self::zeroed(n_classes, input_resolution)?;
        if weights.len() != model.weights.len() {
            return Err(ClassifierError::MalformedWeights(format!(
                "expected {} weights, file holds {}",
                model.weights.len(),
                weights.len()
            )));
        }
        model.weights = weights;
        Ok(model)
    }

    /// Canonical architecture description; its SHA-256 is embedded in weight
    /// files so a file cannot be loaded into a different model shape.
    pub fn spec_string(&self) -> String {
        spec_string(self.n_classes, self.input_resolution)
    }

    pub fn spec_hash(&self) -> [u8; 32] {
        let digest = Sha256::digest(self.spec_string().as_bytes());
        digest.into()
    }

    /// Save to / load from the binary weight format (see `weights.rs`).
    pub fn save(&self, path: &std::path::Path) -> Result<(), ClassifierError> {
        weights::save(self, path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ClassifierError> {
        weights::load(path)
    }

    fn check_input(&self, image: &Image) -> Result<(), ClassifierError> {
        if image.width != self.input_resolution || image.height != self.input_resolution {
            return Err(ClassifierError::ResolutionMismatch {
                expected: self.input_resolution,
                got_w: image.width,
                got_h: image.height,
            });
        }
        Ok(())
    }

    /// Widen one layer's f32 weights to f64 scratch.
    fn widen(&self, slot: LayerSlot) -> (Vec<f64>, Vec<f64>) {
        let w = self.weights[slot.w_off..slot.w_off + slot.w_len]
            .iter()
            .map(|&v| v as f64)
            .collect();
        let b = self.weights[slot.b_off..slot.b_off + slot.b_len]
            .iter()
            .map(|&v| v as f64)
            .collect();
        (w, b)
    }

    fn forward_acts(&self, image: &Image) -> Activations {
        let mut post: [Vec<f64>; 4] = Default::default();
        let mut current: &[f64] = &image.data;
        for i in 0..4 {
            let conv = &self.arch.convs[i];
            let (w, b) = self.widen(self.arch.slots[i]);
            let mut out = vec![0.0; conv.output_len()];
            conv_forward(conv, current, &w, &b, &mut out);
            relu_inplace(&mut out);
            post[i] = out;
            current = &post[i];
        }
        let last = &self.arch.convs[3];
        let mut gap = vec![0.0; CHANNELS[3]];
        gap_forward(last.out_h(), last.out_w(), CHANNELS[3], &post[3], &mut gap);
        let (hw, hb) = self.widen(self.arch.slots[4]);
        let mut logits = vec![0.0; self.arch.n_classes];
        linear_forward(&gap, &hw, &hb, &mut logits);
        Activations { post, gap, logits }
    }

    /// Class logits for one image.
    pub fn forward(&self, image: &Image) -> Result<Vec<f64>, ClassifierError> {
        self.check_input(image)?;
        Ok(self.forward_acts(image).logits)
    }

    /// Cross-entropy loss and the gradient of that loss w.r.t. the input
    /// pixels, for true class `label`.
    pub fn grad_input(&self, image: &Image, label: u32) -> Result<InputGradient, ClassifierError> {
        self.check_input(image)?;
        let acts = self.forward_acts(image);
        let loss = cross_entropy(&acts.logits, label);
        let mut grad_logits = softmax(&acts.logits);
        grad_logits[label as usize] -= 1.0;

        let (hw, _) = self.widen(self.arch.slots[4]);
        let mut grad_gap = vec![0.0; CHANNELS[3]];
        linear_backward_input(&grad_logits, &hw, &mut grad_gap);

        let last = &self.arch.convs[3];
        let mut grad = vec![0.0; last.output_len()];
        gap_backward(last.out_h(), last.out_w(), CHANNELS[3], &grad_gap, &mut grad);

        for i in (0..4).rev() {
            let conv = &self.arch.convs[i];
            relu_backward(&acts.post[i], &mut grad);
            let (w, _) = self.widen(self.arch.slots[i]);
            let mut grad_in = vec![0.0; conv.input_len()];
            conv_backward_input(conv, &grad, &w, &mut grad_in);
            grad = grad_in;
        }

        let grad_image = Image {
            width: self.input_resolution,
            height: self.input_resolution,
            data: grad,
        };
        Ok(InputGradient { grad: grad_image, logits: acts.logits, loss })
    }

    /// Accumulates d cross_entropy / d weights into `grad_buf` (aligned with
    /// the flat weight store) and returns (loss, predicted class).
    pub(crate) fn accumulate_param_grads(
        &self,
        image: &Image,
        label: u32,
        grad_buf: &mut [f64],
    ) -> Result<(f64, u32), ClassifierError> {
        self.check_input(image)?;
        debug_assert_eq!(grad_buf.len(), self.weights.len());
        let acts = self.forward_acts(image);
        let loss = cross_entropy(&acts.logits, label);
        let predicted = predict(&acts.logits);
        let mut grad_logits = softmax(&acts.logits);
        grad_logits[label as usize] -= 1.0;

        let head = self.arch.slots[4];
        {
            let (gw, rest) = grad_buf[head.w_off..].split_at_mut(head.w_len);
            linear_backward_weights(&acts.gap, &grad_logits, gw, &mut rest[..head.b_len]);
        }
        let (hw, _) = self.widen(head);
        let mut grad_gap = vec![0.0; CHANNELS[3]];
        linear_backward_input(&grad_logits, &hw, &mut grad_gap);

        let last = &self.arch.convs[3];
        let mut grad = vec![0.0; last.output_len()];
        gap_backward(last.out_h(), last.out_w(), CHANNELS[3], &grad_gap, &mut grad);

        for i in (0..4).rev() {
            let conv = &self.arch.convs[i];
            relu_backward(&acts.post[i], &mut grad);
            let layer_input: &[f64] = if i == 0 { &image.data } else { &acts.post[i - 1] };
            let slot = self.arch.slots[i];
            {
                let (gw, rest) = grad_buf[slot.w_off..].split_at_mut(slot.w_len);
                conv_backward_weights(conv, layer_input, &grad, gw, &mut rest[..slot.b_len]);
            }
            if i > 0 {
                // The image gradient is not needed when only training weights.
                let (w, _) = self.widen(slot);
                let mut grad_in = vec![0.0; conv.input_len()];
                conv_backward_input(conv, &grad, &w, &mut grad_in);
                grad = grad_in;
            }
        }
        Ok((loss, predicted))
    }
}

fn spec_string(n_classes: u32, input_resolution: u32) -> String {
    let mut s = format!("cnn-v1 input:{input_resolution}x{input_resolution}x3");
    let mut c_in = 3;
    for &c_out in &CHANNELS {
        s.push_str(&format!(" conv3x3s2p1:{c_in}->{c_out}+relu"));
        c_in = c_out;
    }
    s.push_str(&format!(" gap linear:{}->{n_classes} f32", CHANNELS[3]));
    s
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of `logits` against true class `label`, computed with the
/// usual max-subtraction so large logits cannot overflow.
pub fn cross_entropy(logits: &[f64], label: u32) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    log_sum - (logits[label as usize] - max)
}

/// Argmax with ties resolved to the lowest class index.
pub fn predict(logits: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate().skip(1) {
        if l > logits[best] {
            best = i;
        }
    }
    best as u32
}
