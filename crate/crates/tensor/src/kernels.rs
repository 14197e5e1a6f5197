//! Raw slice kernels shared by the tape and by tape-free inference.

/// Geometry of a single-example 2-D cross-correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    /// Output spatial dims, or `None` when the kernel exceeds the padded input.
    pub fn output_dims(&self) -> Option<(usize, usize)> {
        let ph = self.h + 2 * self.padding;
        let pw = self.w + 2 * self.padding;
        if self.kh > ph || self.kw > pw || self.stride == 0 {
            return None;
        }
        Some(((ph - self.kh) / self.stride + 1, (pw - self.kw) / self.stride + 1))
    }

    pub fn input_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    pub fn kernel_len(&self) -> usize {
        self.c_out * self.c_in * self.kh * self.kw
    }

    pub fn output_len(&self) -> usize {
        let (oh, ow) = self.output_dims().expect("valid geometry");
        self.c_out * oh * ow
    }

    /// Range of output indices `o` such that `o*stride + k - padding` lands in `[0, n)`.
    fn valid_range(&self, k: usize, n: usize, out_n: usize) -> (usize, usize) {
        let s = self.stride;
        let p = self.padding;
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
        // o*s + k - p <= n - 1  =>  o <= (n - 1 + p - k) / s
        let hi = if n + p > k {
            ((n - 1 + p - k) / s + 1).min(out_n)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

/// `c[m×n] = a[m×k] · b[k×n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            c_row.iter_mut().zip(b_row).for_each(|(cv, bv)| *cv += av * bv);
        }
    }
    c
}

/// `c[m×n] = a[m×k] · b[n×k]ᵀ`.
pub fn matmul_transpose_b(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            c[i * n + j] = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// `c[k×n] = a[m×k]ᵀ · b[m×n]`.
pub fn matmul_transpose_a(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            c_row.iter_mut().zip(b_row).for_each(|(cv, bv)| *cv += av * bv);
        }
    }
    c
}

/// Single-example cross-correlation; `out` must be zeroed and `output_len()` long.
pub fn conv2d_forward(
    g: &ConvGeometry,
    input: &[f64],
    kernel: &[f64],
    bias: Option<&[f64]>,
    out: &mut [f64],
) {
    let (oh, ow) = g.output_dims().expect("valid geometry");
    for oc in 0..g.c_out {
        let out_c = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        if let Some(b) = bias {
            out_c.iter_mut().for_each(|v| *v = b[oc]);
        }
        for ic in 0..g.c_in {
            let in_c = &input[ic * g.h * g.w..(ic + 1) * g.h * g.w];
            for ki in 0..g.kh {
                let (oy_lo, oy_hi) = g.valid_range(ki, g.h, oh);
                for kj in 0..g.kw {
                    let wv = kernel[((oc * g.c_in + ic) * g.kh + ki) * g.kw + kj];
                    let (ox_lo, ox_hi) = g.valid_range(kj, g.w, ow);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ki - g.padding;
                        let in_row = &in_c[iy * g.w..(iy + 1) * g.w];
                        let out_row = &mut out_c[oy * ow..(oy + 1) * ow];
                        let ix0 = ox_lo * g.stride + kj - g.padding;
                        if g.stride == 1 {
                            let n = ox_hi - ox_lo;
                            out_row[ox_lo..ox_hi]
                                .iter_mut()
                                .zip(&in_row[ix0..ix0 + n])
                                .for_each(|(o, x)| *o += wv * x);
                        } else {
                            for (t, ox) in (ox_lo..ox_hi).enumerate() {
                                out_row[ox] += wv * in_row[ix0 + t * g.stride];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates input, kernel and bias adjoints for one example.
pub fn conv2d_backward(
    g: &ConvGeometry,
    input: &[f64],
    kernel: &[f64],
    d_out: &[f64],
    d_input: Option<&mut [f64]>,
    d_kernel: Option<&mut [f64]>,
    d_bias: Option<&mut [f64]>,
) {
    let (oh, ow) = g.output_dims().expect("valid geometry");
    if let Some(db) = d_bias {
        for oc in 0..g.c_out {
            db[oc] += d_out[oc * oh * ow..(oc + 1) * oh * ow].iter().sum::<f64>();
        }
    }
    let mut d_input = d_input;
    let mut d_kernel = d_kernel;
    for oc in 0..g.c_out {
        let dout_c = &d_out[oc * oh * ow..(oc + 1) * oh * ow];
        for ic in 0..g.c_in {
            let in_off = ic * g.h * g.w;
            for ki in 0..g.kh {
                let (oy_lo, oy_hi) = g.valid_range(ki, g.h, oh);
                for kj in 0..g.kw {
                    let k_idx = ((oc * g.c_in + ic) * g.kh + ki) * g.kw + kj;
                    let wv = kernel[k_idx];
                    let (ox_lo, ox_hi) = g.valid_range(kj, g.w, ow);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let mut acc = 0.0;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ki - g.padding;
                        let row_off = in_off + iy * g.w;
                        let dout_row = &dout_c[oy * ow..(oy + 1) * ow];
                        let ix0 = ox_lo * g.stride + kj - g.padding;
                        if g.stride == 1 {
                            let n = ox_hi - ox_lo;
                            let in_row = &input[row_off + ix0..row_off + ix0 + n];
                            let dr = &dout_row[ox_lo..ox_hi];
                            if d_kernel.is_some() {
                                acc += in_row.iter().zip(dr).map(|(x, d)| x * d).sum::<f64>();
                            }
                            if let Some(di) = d_input.as_deref_mut() {
                                di[row_off + ix0..row_off + ix0 + n]
                                    .iter_mut()
                                    .zip(dr)
                                    .for_each(|(v, d)| *v += wv * d);
                            }
                        } else {
                            for (t, ox) in (ox_lo..ox_hi).enumerate() {
                                let ix = row_off + ix0 + t * g.stride;
                                acc += input[ix] * dout_row[ox];
                                if let Some(di) = d_input.as_deref_mut() {
                                    di[ix] += wv * dout_row[ox];
                                }
                            }
                        }
                    }
                    if let Some(dk) = d_kernel.as_deref_mut() {
                        dk[k_idx] += acc;
                    }
                }
            }
        }
    }
}

/// Non-overlapping max-pool (window = stride = `size`); trailing rows/cols that
/// do not fill a window are dropped. Returns values and flat argmax indices.
pub fn maxpool2d_forward(
    input: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    size: usize,
) -> (Vec<f64>, Vec<usize>) {
    let oh = h / size;
    let ow = w / size;
    let mut out = Vec::with_capacity(channels * oh * ow);
    let mut idx = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        let base = c * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = base + oy * size * w + ox * size;
                for dy in 0..size {
                    for dx in 0..size {
                        let i = base + (oy * size + dy) * w + ox * size + dx;
                        if input[i] > best {
                            best = input[i];
                            best_i = i;
                        }
                    }
                }
                out.push(input[best_i]);
                idx.push(best_i);
            }
        }
    }
    (out, idx)
}

/// Numerically stable softmax of one row.
pub fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_dims_follow_floor_rule() {
        let g = ConvGeometry {
            c_in: 1,
            h: 5,
            w: 7,
            c_out: 1,
            kh: 3,
            kw: 2,
            stride: 2,
            padding: 1,
        };
        assert_eq!(g.output_dims(), Some(((5 + 2 - 3) / 2 + 1, (7 + 2 - 2) / 2 + 1)));
    }

    #[test]
    fn kernel_larger_than_padded_input_has_no_output() {
        let g = ConvGeometry {
            c_in: 1,
            h: 2,
            w: 2,
            c_out: 1,
            kh: 5,
            kw: 1,
            stride: 1,
            padding: 1,
        };
        assert_eq!(g.output_dims(), None);
    }

    /// Direct definition with explicit bounds checks, used to cross-check the
    /// hoisted-range kernel on padded and strided shapes.
    fn naive_conv(g: &ConvGeometry, x: &[f64], k: &[f64]) -> Vec<f64> {
        let (oh, ow) = g.output_dims().unwrap();
        let mut out = vec![0.0; g.c_out * oh * ow];
        for oc in 0..g.c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = 0.0;
                    for ic in 0..g.c_in {
                        for ki in 0..g.kh {
                            for kj in 0..g.kw {
                                let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                                let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                s += x[(ic * g.h + iy as usize) * g.w + ix as usize]
                                    * k[((oc * g.c_in + ic) * g.kh + ki) * g.kw + kj];
                            }
                        }
                    }
                    out[(oc * oh + oy) * ow + ox] = s;
                }
            }
        }
        out
    }

    #[test]
    fn hoisted_ranges_match_naive_definition() {
        for &(stride, padding, kh, kw) in &[(1, 0, 3, 3), (1, 1, 3, 3), (2, 1, 3, 2), (3, 2, 2, 4)] {
            let g = ConvGeometry {
                c_in: 2,
                h: 7,
                w: 6,
                c_out: 3,
                kh,
                kw,
                stride,
                padding,
            };
            let x: Vec<f64> = (0..g.input_len()).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
            let k: Vec<f64> = (0..g.kernel_len()).map(|i| ((i * 13 % 7) as f64) * 0.5 - 1.0).collect();
            let mut out = vec![0.0; g.output_len()];
            conv2d_forward(&g, &x, &k, None, &mut out);
            assert_eq!(out, naive_conv(&g, &x, &k), "stride {stride} pad {padding}");
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
