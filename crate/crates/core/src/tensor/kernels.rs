//! Slice-level forward and backward kernels.
//!
//! All arrays are row-major. Spatial maps are `(channel, y, x)`; attention
//! operands are `(channel, location)` with `location = y * width + x`.

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Valid output range along one axis for a kernel tap at offset `d - pad`.
#[inline]
fn tap_range(d: usize, pad: usize, len: usize) -> (usize, usize) {
    // output o reads input o + d - pad; need 0 <= o + d - pad < len
    let lo = pad.saturating_sub(d);
    let hi = (len + pad).saturating_sub(d).min(len);
    (lo, hi.max(lo))
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward(
    input: &[f64],
    in_ch: usize,
    h: usize,
    w: usize,
    kernel: &[f64],
    bias: &[f64],
    out_ch: usize,
    k: usize,
    out: &mut [f64],
) {
    let pad = k / 2;
    let plane = h * w;
    for o in 0..out_ch {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.fill(bias[o]);
        for c in 0..in_ch {
            let src = &input[c * plane..(c + 1) * plane];
            for ky in 0..k {
                let (y0, y1) = tap_range(ky, pad, h);
                for kx in 0..k {
                    let wv = kernel[((o * in_ch + c) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (x0, x1) = tap_range(kx, pad, w);
                    for y in y0..y1 {
                        let sy = y + ky - pad;
                        let drow = &mut dst[y * w + x0..y * w + x1];
                        let srow = &src[sy * w + x0 + kx - pad..sy * w + x1 + kx - pad];
                        for (d, s) in drow.iter_mut().zip(srow) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates input, kernel and bias gradients of a convolution.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    input: &[f64],
    in_ch: usize,
    h: usize,
    w: usize,
    kernel: &[f64],
    out_ch: usize,
    k: usize,
    grad_out: &[f64],
    grad_input: &mut [f64],
    grad_kernel: &mut [f64],
    grad_bias: &mut [f64],
) {
    let pad = k / 2;
    let plane = h * w;
    for o in 0..out_ch {
        let g = &grad_out[o * plane..(o + 1) * plane];
        grad_bias[o] += g.iter().sum::<f64>();
        for c in 0..in_ch {
            let src = &input[c * plane..(c + 1) * plane];
            for ky in 0..k {
                let (y0, y1) = tap_range(ky, pad, h);
                for kx in 0..k {
                    let idx = ((o * in_ch + c) * k + ky) * k + kx;
                    let wv = kernel[idx];
                    let (x0, x1) = tap_range(kx, pad, w);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = y + ky - pad;
                        let grow = &g[y * w + x0..y * w + x1];
                        let s0 = sy * w + x0 + kx - pad;
                        let srow = &src[s0..s0 + (x1 - x0)];
                        let gin = &mut grad_input[c * plane + s0..c * plane + s0 + (x1 - x0)];
                        for ((gi, go), s) in gin.iter_mut().zip(grow).zip(srow) {
                            acc += go * s;
                            *gi += wv * go;
                        }
                    }
                    grad_kernel[idx] += acc;
                }
            }
        }
    }
}

/// Softmax-normalised non-local attention.
///
/// `query`, `key`, `value` are `channels × n`. Row `i` of the returned
/// probability matrix (`n × n`) is the softmax over `j` of
/// `⟨query[:, i], key[:, j]⟩`; the output column `i` is `Σ_j p[i, j] value[:, j]`.
pub fn attend_forward(
    query: &[f64],
    key: &[f64],
    value: &[f64],
    channels: usize,
    n: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut probs = vec![0.0; n * n];
    for c in 0..channels {
        let q = &query[c * n..(c + 1) * n];
        let kk = &key[c * n..(c + 1) * n];
        for i in 0..n {
            let qi = q[i];
            let row = &mut probs[i * n..(i + 1) * n];
            for (r, kj) in row.iter_mut().zip(kk) {
                *r += qi * kj;
            }
        }
    }
    for i in 0..n {
        let row = &mut probs[i * n..(i + 1) * n];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for r in row.iter_mut() {
            *r = (*r - max).exp();
            total += *r;
        }
        for r in row.iter_mut() {
            *r /= total;
        }
    }
    let mut out = vec![0.0; channels * n];
    for c in 0..channels {
        let v = &value[c * n..(c + 1) * n];
        for i in 0..n {
            let row = &probs[i * n..(i + 1) * n];
            out[c * n + i] = row.iter().zip(v).map(|(p, vj)| p * vj).sum();
        }
    }
    (out, probs)
}

#[allow(clippy::too_many_arguments)]
pub fn attend_backward(
    query: &[f64],
    key: &[f64],
    value: &[f64],
    probs: &[f64],
    channels: usize,
    n: usize,
    grad_out: &[f64],
    grad_query: &mut [f64],
    grad_key: &mut [f64],
    grad_value: &mut [f64],
) {
    // dP[i, j] = Σ_c dOut[c, i] value[c, j]
    let mut dp = vec![0.0; n * n];
    for c in 0..channels {
        let v = &value[c * n..(c + 1) * n];
        let g = &grad_out[c * n..(c + 1) * n];
        let gv = &mut grad_value[c * n..(c + 1) * n];
        for i in 0..n {
            let gi = g[i];
            let prow = &probs[i * n..(i + 1) * n];
            let drow = &mut dp[i * n..(i + 1) * n];
            for j in 0..n {
                drow[j] += gi * v[j];
                gv[j] += prow[j] * gi;
            }
        }
    }
    // dS = P ⊙ (dP - rowsum(P ⊙ dP))
    for i in 0..n {
        let prow = &probs[i * n..(i + 1) * n];
        let drow = &mut dp[i * n..(i + 1) * n];
        let dot: f64 = prow.iter().zip(drow.iter()).map(|(p, d)| p * d).sum();
        for (d, p) in drow.iter_mut().zip(prow) {
            *d = p * (*d - dot);
        }
    }
    for c in 0..channels {
        let q = &query[c * n..(c + 1) * n];
        let kk = &key[c * n..(c + 1) * n];
        for i in 0..n {
            let srow = &dp[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += srow[j] * kk[j];
                grad_key[c * n + j] += srow[j] * q[i];
            }
            grad_query[c * n + i] += acc;
        }
    }
}
