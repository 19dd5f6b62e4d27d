//! Dense f64 kernels for the classifier: 3x3/stride-2/pad-1 convolution
//! (forward, input-gradient, weight-gradient), ReLU, global average pool,
//! and the linear head.
//!
//! Layout is HWC with channels contiguous, and convolution weights are
//! stored [ky][kx][c_in][c_out] with c_out innermost, so every inner loop
//! is a contiguous axpy or dot that the compiler can vectorize. That is
//! what keeps the whole pipeline usable on one core.

/// Shape of one 3x3, stride-2, pad-1 convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_h: usize,
    pub in_w: usize,
    pub c_in: usize,
    pub c_out: usize,
}

impl ConvShape {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 - 3) / 2 + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 - 3) / 2 + 1
    }

    pub fn weight_len(&self) -> usize {
        9 * self.c_in * self.c_out
    }

    pub fn input_len(&self) -> usize {
        self.in_h * self.in_w * self.c_in
    }

    pub fn output_len(&self) -> usize {
        self.out_h() * self.out_w() * self.c_out
    }
}

/// Iterates the valid (ky, kx, iy, ix) taps for one output pixel.
#[inline]
fn taps(s: &ConvShape, oy: usize, ox: usize, mut f: impl FnMut(usize, usize, usize)) {
    for ky in 0..3 {
        let iy = (oy * 2 + ky) as isize - 1;
        if iy < 0 || iy >= s.in_h as isize {
            continue;
        }
        for kx in 0..3 {
            let ix = (ox * 2 + kx) as isize - 1;
            if ix < 0 || ix >= s.in_w as isize {
                continue;
            }
            f(ky * 3 + kx, iy as usize, ix as usize);
        }
    }
}

pub fn conv_forward(s: &ConvShape, input: &[f64], weights: &[f64], bias: &[f64], output: &mut [f64]) {
    debug_assert_eq!(input.len(), s.input_len());
    debug_assert_eq!(weights.len(), s.weight_len());
    debug_assert_eq!(bias.len(), s.c_out);
    debug_assert_eq!(output.len(), s.output_len());
    let (ow, ci, co) = (s.out_w(), s.c_in, s.c_out);
    for oy in 0..s.out_h() {
        for ox in 0..ow {
            let out_px = &mut output[(oy * ow + ox) * co..][..co];
            out_px.copy_from_slice(bias);
            taps(s, oy, ox, |k, iy, ix| {
                let in_px = &input[(iy * s.in_w + ix) * ci..][..ci];
                let w_tap = &weights[k * ci * co..][..ci * co];
                for (c, &a) in in_px.iter().enumerate() {
                    let w_row = &w_tap[c * co..][..co];
                    for (o, &w) in out_px.iter_mut().zip(w_row) {
                        *o += a * w;
                    }
                }
            });
        }
    }
}

/// Accumulates d loss / d input (does not zero `grad_in` first).
pub fn conv_backward_input(
    s: &ConvShape,
    grad_out: &[f64],
    weights: &[f64],
    grad_in: &mut [f64],
) {
    debug_assert_eq!(grad_out.len(), s.output_len());
    debug_assert_eq!(grad_in.len(), s.input_len());
    let (ow, ci, co) = (s.out_w(), s.c_in, s.c_out);
    for oy in 0..s.out_h() {
        for ox in 0..ow {
            let g_px = &grad_out[(oy * ow + ox) * co..][..co];
            taps(s, oy, ox, |k, iy, ix| {
                let gi_px = &mut grad_in[(iy * s.in_w + ix) * ci..][..ci];
                let w_tap = &weights[k * ci * co..][..ci * co];
                for (c, gi) in gi_px.iter_mut().enumerate() {
                    let w_row = &w_tap[c * co..][..co];
                    let mut acc = 0.0;
                    for (&g, &w) in g_px.iter().zip(w_row) {
                        acc += g * w;
                    }
                    *gi += acc;
                }
            });
        }
    }
}

/// Accumulates d loss / d weights and d loss / d bias.
pub fn conv_backward_weights(
    s: &ConvShape,
    input: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) {
    debug_assert_eq!(grad_w.len(), s.weight_len());
    debug_assert_eq!(grad_b.len(), s.c_out);
    let (ow, ci, co) = (s.out_w(), s.c_in, s.c_out);
    for oy in 0..s.out_h() {
        for ox in 0..ow {
            let g_px = &grad_out[(oy * ow + ox) * co..][..co];
            for (gb, &g) in grad_b.iter_mut().zip(g_px) {
                *gb += g;
            }
            taps(s, oy, ox, |k, iy, ix| {
                let in_px = &input[(iy * s.in_w + ix) * ci..][..ci];
                let gw_tap = &mut grad_w[k * ci * co..][..ci * co];
                for (c, &a) in in_px.iter().enumerate() {
                    let gw_row = &mut gw_tap[c * co..][..co];
                    for (gw, &g) in gw_row.iter_mut().zip(g_px) {
                        *gw += a * g;
                    }
                }
            });
        }
    }
}

pub fn relu_inplace(values: &mut [f64]) {
    for v in values {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries where the (post-ReLU) activation is 0; the
/// subgradient at exactly 0 is taken as 0.
pub fn relu_backward(activations: &[f64], grad: &mut [f64]) {
    debug_assert_eq!(activations.len(), grad.len());
    for (g, &a) in grad.iter_mut().zip(activations) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn gap_forward(h: usize, w: usize, c: usize, input: &[f64], output: &mut [f64]) {
    debug_assert_eq!(input.len(), h * w * c);
    debug_assert_eq!(output.len(), c);
    output.fill(0.0);
    for px in input.chunks_exact(c) {
        for (o, &v) in output.iter_mut().zip(px) {
            *o += v;
        }
    }
    let inv = 1.0 / (h * w) as f64;
    for o in output {
        *o *= inv;
    }
}

pub fn gap_backward(h: usize, w: usize, c: usize, grad_gap: &[f64], grad_input: &mut [f64]) {
    debug_assert_eq!(grad_input.len(), h * w * c);
    let inv = 1.0 / (h * w) as f64;
    for px in grad_input.chunks_exact_mut(c) {
        for (g, &gg) in px.iter_mut().zip(grad_gap) {
            *g = gg * inv;
        }
    }
}

/// weights layout: [c_in][c_out], c_out innermost (matches conv).
pub fn linear_forward(input: &[f64], weights: &[f64], bias: &[f64], output: &mut [f64]) {
    let co = output.len();
    debug_assert_eq!(weights.len(), input.len() * co);
    output.copy_from_slice(bias);
    for (c, &a) in input.iter().enumerate() {
        let w_row = &weights[c * co..][..co];
        for (o, &w) in output.iter_mut().zip(w_row) {
            *o += a * w;
        }
    }
}

pub fn linear_backward_input(grad_out: &[f64], weights: &[f64], grad_in: &mut [f64]) {
    let co = grad_out.len();
    for (c, gi) in grad_in.iter_mut().enumerate() {
        let w_row = &weights[c * co..][..co];
        let mut acc = 0.0;
        for (&g, &w) in grad_out.iter().zip(w_row) {
            acc += g * w;
        }
        *gi = acc;
    }
}

pub fn linear_backward_weights(
    input: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) {
    let co = grad_out.len();
    for (gb, &g) in grad_b.iter_mut().zip(grad_out) {
        *gb += g;
    }
    for (c, &a) in input.iter().enumerate() {
        let gw_row = &mut grad_w[c * co..][..co];
        for (gw, &g) in gw_row.iter_mut().zip(grad_out) {
            *gw += a * g;
        }
    }
}
