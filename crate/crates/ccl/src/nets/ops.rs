//! Differentiable primitives: 2-D convolution via im2col + GEMM, ReLU
//! variants, nearest-neighbor upsampling, and channel softmax. All in f64
//! with hand-written backward passes.

use ndarray::{Array2, Array3, ArrayView2, Axis};

/// One convolution layer: `cout` filters of shape `cin` x `k` x `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn new(cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Self {
        Self { cin, cout, k, stride, pad }
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + self.cout
    }

    pub fn out_dim(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn init_bound(&self) -> f64 {
        let fan_in = (self.cin * self.k * self.k) as f64;
        (6.0 / fan_in).sqrt()
    }
}

/// Valid output-x range for a kernel column, so inner loops skip bounds
/// checks: ix = ox*stride + kx - pad must land in [0, w).
fn ox_range(w: usize, wo: usize, stride: usize, kx: usize, pad: usize) -> (usize, usize) {
    let lo = if kx >= pad { 0 } else { (pad - kx).div_ceil(stride) };
    let hi_num = w + pad;
    let hi = if hi_num > kx {
        (((hi_num - kx - 1) / stride) + 1).min(wo)
    } else {
        0
    };
    (lo.min(wo), hi)
}

fn im2col(x: &Array3<f64>, spec: &ConvSpec) -> Array2<f64> {
    let (cin, h, w) = x.dim();
    debug_assert_eq!(cin, spec.cin);
    let (ho, wo) = spec.out_dim(h, w);
    let k = spec.k;
    let mut col = Array2::<f64>::zeros((cin * k * k, ho * wo));
    let xs = x.as_slice().expect("contiguous");
    let cs = col.as_slice_mut().expect("contiguous");
    for c in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let (ox_lo, ox_hi) = ox_range(w, wo, spec.stride, kx, spec.pad);
                if ox_lo >= ox_hi {
                    continue;
                }
                for oy in 0..ho {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_base = (c * h + iy as usize) * w;
                    let dst_base = row * (ho * wo) + oy * wo;
                    if spec.stride == 1 {
                        let ix0 = ox_lo + kx - spec.pad;
                        let n = ox_hi - ox_lo;
                        cs[dst_base + ox_lo..dst_base + ox_lo + n]
                            .copy_from_slice(&xs[src_base + ix0..src_base + ix0 + n]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            let ix = ox * spec.stride + kx - spec.pad;
                            cs[dst_base + ox] = xs[src_base + ix];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im(dcol: &Array2<f64>, spec: &ConvSpec, h: usize, w: usize) -> Array3<f64> {
    let (ho, wo) = spec.out_dim(h, w);
    let k = spec.k;
    let mut dx = Array3::<f64>::zeros((spec.cin, h, w));
    let ds = dcol.as_slice().expect("contiguous");
    let xs = dx.as_slice_mut().expect("contiguous");
    for c in 0..spec.cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let (ox_lo, ox_hi) = ox_range(w, wo, spec.stride, kx, spec.pad);
                if ox_lo >= ox_hi {
                    continue;
                }
                for oy in 0..ho {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_base = (c * h + iy as usize) * w;
                    let src_base = row * (ho * wo) + oy * wo;
                    for ox in ox_lo..ox_hi {
                        let ix = ox * spec.stride + kx - spec.pad;
                        xs[dst_base + ix] += ds[src_base + ox];
                    }
                }
            }
        }
    }
    dx
}

/// Weight and bias views into a flat parameter slice at `offset`.
pub fn conv_views<'a>(
    params: &'a [f64],
    offset: usize,
    spec: &ConvSpec,
) -> (ArrayView2<'a, f64>, &'a [f64]) {
    let wlen = spec.weight_len();
    let w = ArrayView2::from_shape(
        (spec.cout, spec.cin * spec.k * spec.k),
        &params[offset..offset + wlen],
    )
    .expect("weight view");
    let b = &params[offset + wlen..offset + wlen + spec.cout];
    (w, b)
}

pub fn conv_forward(x: &Array3<f64>, params: &[f64], offset: usize, spec: &ConvSpec) -> Array3<f64> {
    let (_, h, w) = x.dim();
    let (ho, wo) = spec.out_dim(h, w);
    let (wmat, bias) = conv_views(params, offset, spec);
    let col = im2col(x, spec);
    let mut y = wmat.dot(&col);
    for (mut row, b) in y.axis_iter_mut(Axis(0)).zip(bias.iter()) {
        row += *b;
    }
    y.into_shape_with_order((spec.cout, ho, wo)).expect("reshape")
}

/// Backward through a conv layer. Accumulates dW and db into `grad` at
/// `offset` and returns dX.
pub fn conv_backward(
    x: &Array3<f64>,
    params: &[f64],
    grad: &mut [f64],
    offset: usize,
    spec: &ConvSpec,
    dy: &Array3<f64>,
) -> Array3<f64> {
    let (_, h, w) = x.dim();
    let (ho, wo) = spec.out_dim(h, w);
    let dy2 = dy
        .view()
        .into_shape_with_order((spec.cout, ho * wo))
        .expect("dy reshape");
    let col = im2col(x, spec);

    let dw = dy2.dot(&col.t());
    let wlen = spec.weight_len();
    for (g, d) in grad[offset..offset + wlen].iter_mut().zip(dw.iter()) {
        *g += *d;
    }
    for (co, g) in grad[offset + wlen..offset + wlen + spec.cout].iter_mut().enumerate() {
        *g += dy2.row(co).sum();
    }

    let (wmat, _) = conv_views(params, offset, spec);
    let dcol = wmat.t().dot(&dy2);
    col2im(&dcol, spec, h, w)
}

pub fn relu(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| if v > 0.0 { v } else { 0.0 })
}

/// ReLU backward using the forward output as the mask.
pub fn relu_backward(y: &Array3<f64>, dy: &Array3<f64>) -> Array3<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &v| {
        if v <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

pub fn leaky_relu(x: &Array3<f64>, slope: f64) -> Array3<f64> {
    x.mapv(|v| if v > 0.0 { v } else { slope * v })
}

pub fn leaky_relu_backward(y: &Array3<f64>, dy: &Array3<f64>, slope: f64) -> Array3<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &v| {
        if v <= 0.0 {
            *d *= slope;
        }
    });
    dx
}

pub fn upsample2(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let mut y = Array3::<f64>::zeros((c, 2 * h, 2 * w));
    for ci in 0..c {
        for yi in 0..h {
            for xi in 0..w {
                let v = x[(ci, yi, xi)];
                y[(ci, 2 * yi, 2 * xi)] = v;
                y[(ci, 2 * yi, 2 * xi + 1)] = v;
                y[(ci, 2 * yi + 1, 2 * xi)] = v;
                y[(ci, 2 * yi + 1, 2 * xi + 1)] = v;
            }
        }
    }
    y
}

pub fn upsample2_backward(dy: &Array3<f64>) -> Array3<f64> {
    let (c, h2, w2) = dy.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Array3::<f64>::zeros((c, h, w));
    for ci in 0..c {
        for yi in 0..h {
            for xi in 0..w {
                dx[(ci, yi, xi)] = dy[(ci, 2 * yi, 2 * xi)]
                    + dy[(ci, 2 * yi, 2 * xi + 1)]
                    + dy[(ci, 2 * yi + 1, 2 * xi)]
                    + dy[(ci, 2 * yi + 1, 2 * xi + 1)];
            }
        }
    }
    dx
}

/// Numerically stable per-pixel softmax over the channel axis of a
/// (C, H, W) array.
pub fn softmax_chw(logits: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = logits.dim();
    let mut out = Array3::<f64>::zeros((c, h, w));
    for y in 0..h {
        for x in 0..w {
            let mut maxv = f64::NEG_INFINITY;
            for ci in 0..c {
                maxv = maxv.max(logits[(ci, y, x)]);
            }
            let mut sum = 0.0;
            for ci in 0..c {
                let e = (logits[(ci, y, x)] - maxv).exp();
                out[(ci, y, x)] = e;
                sum += e;
            }
            for ci in 0..c {
                out[(ci, y, x)] /= sum;
            }
        }
    }
    out
}

/// Given softmax output `prob` and dL/dprob, return dL/dlogits:
/// p .* (dprob - sum_c dprob_c p_c) per pixel.
pub fn softmax_backward_chw(prob: &Array3<f64>, dprob: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = prob.dim();
    let mut out = Array3::<f64>::zeros((c, h, w));
    for y in 0..h {
        for x in 0..w {
            let mut dot = 0.0;
            for ci in 0..c {
                dot += dprob[(ci, y, x)] * prob[(ci, y, x)];
            }
            for ci in 0..c {
                out[(ci, y, x)] = prob[(ci, y, x)] * (dprob[(ci, y, x)] - dot);
            }
        }
    }
    out
}

/// (H, W, C) -> (C, H, W)
pub fn hwc_to_chw(x: &Array3<f64>) -> Array3<f64> {
    let (h, w, c) = x.dim();
    let mut out = Array3::<f64>::zeros((c, h, w));
    for y in 0..h {
        for xi in 0..w {
            for ci in 0..c {
                out[(ci, y, xi)] = x[(y, xi, ci)];
            }
        }
    }
    out
}

/// (C, H, W) -> (H, W, C)
pub fn chw_to_hwc(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let mut out = Array3::<f64>::zeros((h, w, c));
    for ci in 0..c {
        for y in 0..h {
            for xi in 0..w {
                out[(y, xi, ci)] = x[(ci, y, xi)];
            }
        }
    }
    out
}
