//! Numeric kernels behind the tape operations.
//!
//! Convolution kernels parallelize over disjoint output chunks (batch items
//! forward, output channels for weight gradients) with a fixed inner
//! summation order, so results are bit-identical for any thread count and
//! equal to the sequential fallback.
//!
//! Convolutions run over per-image column panels (`im2col`): row `k = (i, r,
//! c)` of a panel holds that tap's input value for every output position,
//! with padded taps stored as zeros. A channel-mask run `(i0, i1)` is then a
//! contiguous span of panel rows, so masked kernels skip blocked channels in
//! whole spans and the hot loops stay long and contiguous.

use crate::mask::ChannelMask;
use crate::par;
use crate::tensor::Element;

/// Batch-norm variance stabilizer.
pub const BN_EPS: f64 = 1e-5;

pub fn sigmoid<T: Element>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// Channel mask compiled for kernel consumption: per-output-channel runs of
/// allowed input channels plus the flat boolean matrix.
#[derive(Debug)]
pub struct MaskPlan {
    pub out_channels: usize,
    pub in_channels: usize,
    runs: Vec<Vec<(usize, usize)>>,
    allowed: Vec<bool>,
}

impl MaskPlan {
    pub fn new(mask: &ChannelMask) -> MaskPlan {
        let (co, ci) = (mask.out_channels as usize, mask.in_channels as usize);
        let runs = (0..mask.out_channels)
            .map(|o| {
                mask.in_runs(o).into_iter().map(|(a, b)| (a as usize, b as usize)).collect()
            })
            .collect();
        let mut allowed = Vec::with_capacity(co * ci);
        for o in 0..co {
            for i in 0..ci {
                allowed.push(mask.get(o as u32, i as u32));
            }
        }
        MaskPlan { out_channels: co, in_channels: ci, runs, allowed }
    }

    pub fn runs_for(&self, o: usize) -> &[(usize, usize)] {
        &self.runs[o]
    }

    pub fn allowed(&self, o: usize, i: usize) -> bool {
        self.allowed[o * self.in_channels + i]
    }

    /// Allowed input channels per output channel; the masked fan-in.
    pub fn in_count(&self, o: usize) -> usize {
        self.runs[o].iter().map(|&(a, b)| b - a).sum()
    }
}

#[derive(Debug, Clone)]
pub struct ConvDims {
    pub n: usize,
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Output positions whose tap `k` lands inside the unpadded input:
/// `0 <= o*stride + k - padding < in_size`, intersected with `[0, out_size)`.
fn valid_range(in_size: usize, k: usize, padding: usize, stride: usize, out_size: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo_num = padding as isize - k as isize;
    let lo = if lo_num > 0 { ((lo_num + s - 1) / s) as usize } else { 0 };
    let hi_num = in_size as isize - 1 + padding as isize - k as isize;
    if hi_num < 0 {
        return (0, 0);
    }
    let hi = ((hi_num / s) + 1).min(out_size as isize) as usize;
    (lo.min(hi), hi)
}

/// Valid output ranges for every tap position along one axis, computed once
/// per kernel call so the per-channel loops stay division-free.
fn tap_ranges(in_size: usize, k: usize, padding: usize, stride: usize, out_size: usize) -> Vec<(usize, usize)> {
    (0..k).map(|t| valid_range(in_size, t, padding, stride, out_size)).collect()
}

/// Fills one image's column panel: row `k = (i*kh + r)*kw + c` holds
/// `x[i, oh*stride + r - padding, ow*stride + c - padding]` for every output
/// position `(oh, ow)`, and zero where the tap falls into the padding.
fn im2col<T: Element>(
    x_n: &[T],
    d: &ConvDims,
    oh_ranges: &[(usize, usize)],
    ow_ranges: &[(usize, usize)],
    cols: &mut [T],
) {
    let (in_plane, out_plane) = (d.h * d.w, d.oh * d.ow);
    cols.fill(T::zero());
    let mut k = 0;
    for i in 0..d.ci {
        let x_p = &x_n[i * in_plane..(i + 1) * in_plane];
        for r in 0..d.kh {
            let (oh0, oh1) = oh_ranges[r];
            for c in 0..d.kw {
                let (ow0, ow1) = ow_ranges[c];
                let row = &mut cols[k * out_plane..(k + 1) * out_plane];
                k += 1;
                if ow0 >= ow1 {
                    continue;
                }
                for oh in oh0..oh1 {
                    let ih = oh * d.stride + r - d.padding;
                    let x_row = &x_p[ih * d.w..(ih + 1) * d.w];
                    let dst = &mut row[oh * d.ow + ow0..oh * d.ow + ow1];
                    if d.stride == 1 {
                        dst.copy_from_slice(&x_row[ow0 + c - d.padding..ow1 + c - d.padding]);
                    } else {
                        for (j, v) in dst.iter_mut().enumerate() {
                            *v = x_row[(ow0 + j) * d.stride + c - d.padding];
                        }
                    }
                }
            }
        }
    }
}

/// Dot product with an eight-lane accumulator interleave. The lane order is
/// a fixed function of the slice length, so results are reproducible, while
/// the independent lanes let the compiler vectorize the reduction.
fn dot_lanes<T: Element>(a: &[T], b: &[T]) -> T {
    const LANES: usize = 8;
    let n = a.len().min(b.len());
    let mut acc = [T::zero(); LANES];
    let mut j = 0;
    while j + LANES <= n {
        for l in 0..LANES {
            acc[l] = acc[l] + a[j + l] * b[j + l];
        }
        j += LANES;
    }
    let mut s = T::zero();
    for l in 0..LANES {
        s = s + acc[l];
    }
    while j < n {
        s = s + a[j] * b[j];
        j += 1;
    }
    s
}

pub fn conv2d_forward<T: Element>(
    x: &[T],
    w: &[T],
    b: &[T],
    d: &ConvDims,
    mask: Option<&MaskPlan>,
    out: &mut [T],
) {
    let (in_plane, out_plane) = (d.h * d.w, d.oh * d.ow);
    let kk = d.kh * d.kw;
    let kdim = d.ci * kk;
    let full = [(0, d.ci)];
    let oh_ranges = tap_ranges(d.h, d.kh, d.padding, d.stride, d.oh);
    let ow_ranges = tap_ranges(d.w, d.kw, d.padding, d.stride, d.ow);
    par::for_each_chunk(out, d.co * out_plane, |n, out_n| {
        let x_n = &x[n * d.ci * in_plane..(n + 1) * d.ci * in_plane];
        let mut cols = vec![T::zero(); kdim * out_plane];
        im2col(x_n, d, &oh_ranges, &ow_ranges, &mut cols);
        for o in 0..d.co {
            let runs: &[(usize, usize)] = match mask {
                Some(m) => m.runs_for(o),
                None => &full,
            };
            let w_o = &w[o * kdim..(o + 1) * kdim];
            if out_plane == 1 {
                let mut acc = b[o];
                for &(i0, i1) in runs {
                    acc = acc + dot_lanes(&w_o[i0 * kk..i1 * kk], &cols[i0 * kk..i1 * kk]);
                }
                out_n[o] = acc;
                continue;
            }
            let out_p = &mut out_n[o * out_plane..(o + 1) * out_plane];
            out_p.fill(b[o]);
            for &(i0, i1) in runs {
                for k in i0 * kk..i1 * kk {
                    let wv = w_o[k];
                    let col = &cols[k * out_plane..(k + 1) * out_plane];
                    for (dst, &s) in out_p.iter_mut().zip(col) {
                        *dst += wv * s;
                    }
                }
            }
        }
    });
}

/// Accumulates the input gradient: dx[n,i,ih,iw] += Σ dout·w over the taps
/// that read that input position.
pub fn conv2d_backward_x<T: Element>(
    dout: &[T],
    w: &[T],
    d: &ConvDims,
    mask: Option<&MaskPlan>,
    dx: &mut [T],
) {
    let (in_plane, out_plane) = (d.h * d.w, d.oh * d.ow);
    let kk = d.kh * d.kw;
    let kdim = d.ci * kk;
    let full = [(0, d.ci)];
    let oh_ranges = tap_ranges(d.h, d.kh, d.padding, d.stride, d.oh);
    let ow_ranges = tap_ranges(d.w, d.kw, d.padding, d.stride, d.ow);
    par::for_each_chunk(dx, d.ci * in_plane, |n, dx_n| {
        let dout_n = &dout[n * d.co * out_plane..(n + 1) * d.co * out_plane];
        // Gradient panel in column layout; blocked spans stay zero so the
        // scatter below adds nothing for them.
        let mut dcols = vec![T::zero(); kdim * out_plane];
        for o in 0..d.co {
            let dout_p = &dout_n[o * out_plane..(o + 1) * out_plane];
            let runs: &[(usize, usize)] = match mask {
                Some(m) => m.runs_for(o),
                None => &full,
            };
            let w_o = &w[o * kdim..(o + 1) * kdim];
            if out_plane == 1 {
                let g = dout_p[0];
                for &(i0, i1) in runs {
                    let span = i0 * kk..i1 * kk;
                    for (dv, &wv) in dcols[span.clone()].iter_mut().zip(&w_o[span]) {
                        *dv += wv * g;
                    }
                }
                continue;
            }
            for &(i0, i1) in runs {
                for k in i0 * kk..i1 * kk {
                    let wv = w_o[k];
                    let row = &mut dcols[k * out_plane..(k + 1) * out_plane];
                    for (dv, &g) in row.iter_mut().zip(dout_p) {
                        *dv += wv * g;
                    }
                }
            }
        }
        // col2im: fold the panel back onto input positions, adding where
        // taps overlap.
        let mut k = 0;
        for i in 0..d.ci {
            let dx_p = &mut dx_n[i * in_plane..(i + 1) * in_plane];
            for r in 0..d.kh {
                let (oh0, oh1) = oh_ranges[r];
                for c in 0..d.kw {
                    let (ow0, ow1) = ow_ranges[c];
                    let row = &dcols[k * out_plane..(k + 1) * out_plane];
                    k += 1;
                    if ow0 >= ow1 {
                        continue;
                    }
                    for oh in oh0..oh1 {
                        let ih = oh * d.stride + r - d.padding;
                        let dx_row = &mut dx_p[ih * d.w..(ih + 1) * d.w];
                        let src = &row[oh * d.ow + ow0..oh * d.ow + ow1];
                        if d.stride == 1 {
                            let dst = &mut dx_row[ow0 + c - d.padding..ow1 + c - d.padding];
                            for (dv, &g) in dst.iter_mut().zip(src) {
                                *dv += g;
                            }
                        } else {
                            for (j, &g) in src.iter().enumerate() {
                                dx_row[(ow0 + j) * d.stride + c - d.padding] += g;
                            }
                        }
                    }
                }
            }
        }
    });
}

/// Accumulates the weight gradient. Masked-out (o, i) entries are never
/// touched, so their gradients stay identically zero.
pub fn conv2d_backward_w<T: Element>(
    dout: &[T],
    x: &[T],
    d: &ConvDims,
    mask: Option<&MaskPlan>,
    dw: &mut [T],
) {
    let (in_plane, out_plane) = (d.h * d.w, d.oh * d.ow);
    let kk = d.kh * d.kw;
    let kdim = d.ci * kk;
    let full = [(0, d.ci)];
    let oh_ranges = tap_ranges(d.h, d.kh, d.padding, d.stride, d.oh);
    let ow_ranges = tap_ranges(d.w, d.kw, d.padding, d.stride, d.ow);
    let mut cols_all = vec![T::zero(); d.n * kdim * out_plane];
    par::for_each_chunk(&mut cols_all, kdim * out_plane, |n, cols_n| {
        im2col(&x[n * d.ci * in_plane..(n + 1) * d.ci * in_plane], d, &oh_ranges, &ow_ranges, cols_n);
    });
    par::for_each_chunk(dw, d.ci * kk, |o, dw_o| {
        let runs: &[(usize, usize)] = match mask {
            Some(m) => m.runs_for(o),
            None => &full,
        };
        for n in 0..d.n {
            let cols_n = &cols_all[n * kdim * out_plane..(n + 1) * kdim * out_plane];
            let dout_p = &dout[(n * d.co + o) * out_plane..(n * d.co + o + 1) * out_plane];
            if out_plane == 1 {
                let g = dout_p[0];
                for &(i0, i1) in runs {
                    let span = i0 * kk..i1 * kk;
                    for (dv, &cv) in dw_o[span.clone()].iter_mut().zip(&cols_n[span]) {
                        *dv += cv * g;
                    }
                }
                continue;
            }
            for &(i0, i1) in runs {
                for k in i0 * kk..i1 * kk {
                    let col = &cols_n[k * out_plane..(k + 1) * out_plane];
                    dw_o[k] += dot_lanes(dout_p, col);
                }
            }
        }
    });
}

pub fn conv2d_backward_b<T: Element>(dout: &[T], d: &ConvDims, db: &mut [T]) {
    let out_plane = d.oh * d.ow;
    for o in 0..d.co {
        let mut acc = T::zero();
        for n in 0..d.n {
            for &g in &dout[(n * d.co + o) * out_plane..(n * d.co + o + 1) * out_plane] {
                acc += g;
            }
        }
        db[o] += acc;
    }
}

/// Train-mode batch norm. Statistics accumulate in f64 for stability and are
/// returned as `(mean, invstd, running_var)`, where `running_var` is the
/// unbiased variance when more than one element contributed per channel.
pub fn bn_train_forward<T: Element>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    n: usize,
    c: usize,
    hw: usize,
    out: &mut [T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let m = (n * hw) as f64;
    let mut mean = Vec::with_capacity(c);
    let mut invstd = Vec::with_capacity(c);
    let mut var_running = Vec::with_capacity(c);
    for ch in 0..c {
        let mut acc = 0.0f64;
        for b in 0..n {
            for &v in &x[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                acc += v.to_f64();
            }
        }
        let mu = acc / m;
        let mut sq = 0.0f64;
        for b in 0..n {
            for &v in &x[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                let dv = v.to_f64() - mu;
                sq += dv * dv;
            }
        }
        let var = sq / m;
        mean.push(T::from_f64(mu));
        invstd.push(T::from_f64(1.0 / (var + BN_EPS).sqrt()));
        var_running.push(T::from_f64(if m > 1.0 { sq / (m - 1.0) } else { var }));
    }
    for b in 0..n {
        for ch in 0..c {
            let (mu, ivs) = (mean[ch], invstd[ch]);
            let (g, be) = (gamma[ch], beta[ch]);
            let base = (b * c + ch) * hw;
            for i in 0..hw {
                out[base + i] = g * (x[base + i] - mu) * ivs + be;
            }
        }
    }
    (mean, invstd, var_running)
}

pub fn bn_eval_forward<T: Element>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    invstd: &[T],
    n: usize,
    c: usize,
    hw: usize,
    out: &mut [T],
) {
    for b in 0..n {
        for ch in 0..c {
            let scale = gamma[ch] * invstd[ch];
            let shift = beta[ch] - scale * mean[ch];
            let base = (b * c + ch) * hw;
            for i in 0..hw {
                out[base + i] = scale * x[base + i] + shift;
            }
        }
    }
}

/// Train-mode backward: the batch statistics are functions of x, so the
/// gradient couples all positions in a channel.
#[allow(clippy::too_many_arguments)]
pub fn bn_train_backward<T: Element>(
    dout: &[T],
    x: &[T],
    gamma: &[T],
    mean: &[T],
    invstd: &[T],
    n: usize,
    c: usize,
    hw: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let m = (n * hw) as f64;
    let mut dx = vec![T::zero(); x.len()];
    let mut dgamma = Vec::with_capacity(c);
    let mut dbeta = Vec::with_capacity(c);
    for ch in 0..c {
        let (mu, ivs) = (mean[ch], invstd[ch]);
        let mut s1 = 0.0f64;
        let mut s2 = 0.0f64;
        for b in 0..n {
            let base = (b * c + ch) * hw;
            for i in 0..hw {
                let g = dout[base + i].to_f64();
                let xhat = ((x[base + i] - mu) * ivs).to_f64();
                s1 += g;
                s2 += g * xhat;
            }
        }
        dgamma.push(T::from_f64(s2));
        dbeta.push(T::from_f64(s1));
        let a1 = T::from_f64(s1 / m);
        let a2 = T::from_f64(s2 / m);
        let scale = gamma[ch] * ivs;
        for b in 0..n {
            let base = (b * c + ch) * hw;
            for i in 0..hw {
                let xhat = (x[base + i] - mu) * ivs;
                dx[base + i] = scale * (dout[base + i] - a1 - xhat * a2);
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Eval-mode backward: mean and invstd are constants.
#[allow(clippy::too_many_arguments)]
pub fn bn_eval_backward<T: Element>(
    dout: &[T],
    x: &[T],
    gamma: &[T],
    mean: &[T],
    invstd: &[T],
    n: usize,
    c: usize,
    hw: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); x.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let (mu, ivs) = (mean[ch], invstd[ch]);
        let scale = gamma[ch] * ivs;
        let mut s1 = 0.0f64;
        let mut s2 = 0.0f64;
        for b in 0..n {
            let base = (b * c + ch) * hw;
            for i in 0..hw {
                let g = dout[base + i];
                dx[base + i] = scale * g;
                s1 += g.to_f64();
                s2 += (g * (x[base + i] - mu) * ivs).to_f64();
            }
        }
        dgamma[ch] = T::from_f64(s2);
        dbeta[ch] = T::from_f64(s1);
    }
    (dx, dgamma, dbeta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::mask::{build_channel_mask, relational_bipartite, ChannelMask};
    use crate::rng::Seed;
    use rand::Rng;

    fn dims(n: usize, ci: usize, h: usize, w: usize, co: usize, k: usize, stride: usize, padding: usize) -> ConvDims {
        ConvDims {
            n,
            ci,
            h,
            w,
            co,
            kh: k,
            kw: k,
            oh: (h + 2 * padding - k) / stride + 1,
            ow: (w + 2 * padding - k) / stride + 1,
            stride,
            padding,
        }
    }

    /// Literal translation of the cross-correlation definition, used as the
    /// oracle for the tuned kernel.
    fn conv_naive(x: &[f64], w: &[f64], b: &[f64], d: &ConvDims, allowed: impl Fn(usize, usize) -> bool) -> Vec<f64> {
        let mut out = vec![0.0; d.n * d.co * d.oh * d.ow];
        for n in 0..d.n {
            for o in 0..d.co {
                for oh in 0..d.oh {
                    for ow in 0..d.ow {
                        let mut acc = b[o];
                        for i in 0..d.ci {
                            if !allowed(o, i) {
                                continue;
                            }
                            for r in 0..d.kh {
                                for c in 0..d.kw {
                                    let ih = (oh * d.stride + r) as isize - d.padding as isize;
                                    let iw = (ow * d.stride + c) as isize - d.padding as isize;
                                    if ih < 0 || iw < 0 || ih >= d.h as isize || iw >= d.w as isize
                                    {
                                        continue;
                                    }
                                    acc += w[((o * d.ci + i) * d.kh + r) * d.kw + c]
                                        * x[((n * d.ci + i) * d.h + ih as usize) * d.w
                                            + iw as usize];
                                }
                            }
                        }
                        out[((n * d.co + o) * d.oh + oh) * d.ow + ow] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn ones_kernel_counts_overlap() {
        let d = dims(1, 1, 3, 3, 1, 3, 1, 1);
        let x = vec![1.0f64; 9];
        let w = vec![1.0f64; 9];
        let mut out = vec![0.0; 9];
        conv2d_forward(&x, &w, &[0.0], &d, None, &mut out);
        assert_eq!(out, vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn kernel_matches_naive_reference_on_random_shapes() {
        let mut rng = Seed(31).rng();
        for trial in 0..30 {
            let n = rng.gen_range(1..3);
            let ci = rng.gen_range(1..5);
            let co = rng.gen_range(1..5);
            let h = rng.gen_range(1..7);
            let w = rng.gen_range(1..7);
            let k = *[1, 3].iter().filter(|&&k| k <= h + 2 && k <= w + 2).last().unwrap();
            let stride = rng.gen_range(1..3);
            let padding = 1;
            let d = dims(n, ci, h, w, co, k, stride, padding);
            let x: Vec<f64> = (0..n * ci * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let wt: Vec<f64> = (0..co * ci * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..co).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut out = vec![0.0; n * co * d.oh * d.ow];
            conv2d_forward(&x, &wt, &b, &d, None, &mut out);
            let want = conv_naive(&x, &wt, &b, &d, |_, _| true);
            for (a, e) in out.iter().zip(&want) {
                assert!((a - e).abs() < 1e-12, "trial {trial}");
            }
        }
    }

    #[test]
    fn all_true_mask_is_bit_exact_with_unmasked() {
        let mut rng = Seed(77).rng();
        let d = dims(2, 8, 5, 5, 8, 3, 1, 1);
        let x: Vec<f64> = (0..2 * 8 * 25).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..8 * 8 * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let plan = MaskPlan::new(&ChannelMask::all_true(8, 8));
        let mut masked = vec![0.0; 2 * 8 * 25];
        let mut plain = vec![0.0; 2 * 8 * 25];
        conv2d_forward(&x, &w, &b, &d, Some(&plan), &mut masked);
        conv2d_forward(&x, &w, &b, &d, None, &mut plain);
        assert_eq!(masked, plain);
    }

    #[test]
    fn masked_conv_matches_naive_with_block_mask() {
        let g = Graph::new(4, 0, vec![(0, 1), (2, 3)]).unwrap();
        let mask = build_channel_mask(&relational_bipartite(&g), 8, 8).unwrap();
        let plan = MaskPlan::new(&mask);
        let mut rng = Seed(5).rng();
        let d = dims(2, 8, 5, 5, 8, 3, 1, 1);
        let x: Vec<f64> = (0..2 * 8 * 25).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..8 * 8 * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut out = vec![0.0; 2 * 8 * 25];
        conv2d_forward(&x, &w, &b, &d, Some(&plan), &mut out);
        let want = conv_naive(&x, &w, &b, &d, |o, i| mask.get(o as u32, i as u32));
        for (a, e) in out.iter().zip(&want) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_gradients_respect_the_mask() {
        let g = Graph::new(4, 0, vec![]).unwrap();
        let mask = build_channel_mask(&relational_bipartite(&g), 8, 8).unwrap();
        let plan = MaskPlan::new(&mask);
        let mut rng = Seed(6).rng();
        let d = dims(2, 8, 4, 4, 8, 3, 1, 1);
        let x: Vec<f64> = (0..2 * 8 * 16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dout: Vec<f64> = (0..2 * 8 * 16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut dw = vec![0.0; 8 * 8 * 9];
        conv2d_backward_w(&dout, &x, &d, Some(&plan), &mut dw);
        for o in 0..8 {
            for i in 0..8 {
                let blocked = !mask.get(o as u32, i as u32);
                let slot = &dw[(o * 8 + i) * 9..(o * 8 + i + 1) * 9];
                if blocked {
                    assert!(slot.iter().all(|&v| v == 0.0), "({o},{i}) leaked gradient");
                } else {
                    assert!(slot.iter().any(|&v| v != 0.0), "({o},{i}) unexpectedly zero");
                }
            }
        }
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn thread_count_does_not_change_results() {
        let mut rng = Seed(91).rng();
        let d = dims(4, 6, 8, 8, 6, 3, 1, 1);
        let x: Vec<f32> = (0..4 * 6 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f32> = (0..6 * 6 * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mut out = vec![0.0f32; 4 * 6 * 64];
                conv2d_forward(&x, &w, &b, &d, None, &mut out);
                let mut dw = vec![0.0f32; 6 * 6 * 9];
                conv2d_backward_w(&out, &x, &d, None, &mut dw);
                (out, dw)
            })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn single_pixel_outputs_match_naive_reference() {
        let mut rng = Seed(113).rng();
        for trial in 0..12 {
            // h = k - 2*padding collapses the output to one pixel per
            // channel for any stride.
            let k = [1usize, 3, 5][trial % 3];
            let padding = rng.gen_range(0..=(k - 1) / 2);
            let h = k - 2 * padding;
            let stride = rng.gen_range(1..4);
            let d = dims(2, 3, h, h, 4, k, stride, padding);
            assert_eq!(d.oh * d.ow, 1);
            let x: Vec<f64> = (0..2 * 3 * h * h).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let wt: Vec<f64> = (0..4 * 3 * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut out = vec![0.0; 2 * 4];
            conv2d_forward(&x, &wt, &b, &d, None, &mut out);
            let want = conv_naive(&x, &wt, &b, &d, |_, _| true);
            for (a, e) in out.iter().zip(&want) {
                assert!((a - e).abs() < 1e-12, "trial {trial} k {k} pad {padding}");
            }

            // Central-difference check of both gradient kernels at the
            // same collapsed geometry.
            let dout: Vec<f64> = (0..2 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut dw = vec![0.0; wt.len()];
            conv2d_backward_w(&dout, &x, &d, None, &mut dw);
            let mut dx = vec![0.0; x.len()];
            conv2d_backward_x(&dout, &wt, &d, None, &mut dx);
            let loss = |xv: &[f64], wv: &[f64]| -> f64 {
                let mut o = vec![0.0; 2 * 4];
                conv2d_forward(xv, wv, &b, &d, None, &mut o);
                o.iter().zip(&dout).map(|(a, g)| a * g).sum()
            };
            let eps = 1e-6;
            for j in 0..wt.len() {
                let mut wp = wt.clone();
                let mut wm = wt.clone();
                wp[j] += eps;
                wm[j] -= eps;
                let fd = (loss(&x, &wp) - loss(&x, &wm)) / (2.0 * eps);
                assert!((fd - dw[j]).abs() < 1e-6, "dw[{j}] fd {fd} got {}", dw[j]);
            }
            for j in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += eps;
                xm[j] -= eps;
                let fd = (loss(&xp, &wt) - loss(&xm, &wt)) / (2.0 * eps);
                assert!((fd - dx[j]).abs() < 1e-6, "dx[{j}] fd {fd} got {}", dx[j]);
            }
        }
    }

    #[test]
    fn valid_range_limits_are_tight() {
        // 3x3 kernel, padding 1, stride 1, size 5: tap 0 misses output 0.
        assert_eq!(valid_range(5, 0, 1, 1, 5), (1, 5));
        assert_eq!(valid_range(5, 1, 1, 1, 5), (0, 5));
        assert_eq!(valid_range(5, 2, 1, 1, 5), (0, 4));
        // Stride 2 on 1x1 input, padding 1: only the center tap survives.
        assert_eq!(valid_range(1, 0, 1, 2, 1), (1, 1));
        assert_eq!(valid_range(1, 1, 1, 2, 1), (0, 1));
        assert_eq!(valid_range(1, 2, 1, 2, 1), (0, 0));
    }
}
