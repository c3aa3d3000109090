//! Raw slice kernels behind the differentiable operations.
//!
//! Every kernel accumulates in a fixed order so repeated runs are
//! bit-identical.

/// Geometry of a 2-D convolution over a `[C_in, H, W]` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Rows of the unfolded input matrix, `C_in * k * k`.
    pub fn patch_len(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    pub fn out_positions(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// `c = a * b (+ c if accumulate)` with `a: [m, k]`, `b: [k, n]`, all row-major.
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slice lengths were checked against the row-major strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c = a^T * b (+ c)` with `a: [k, m]`, `b: [k, n]`.
pub fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool) {
    assert_eq!(a.len(), k * m);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: strides describe the transposed view of a `[k, m]` buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c = a * b^T (+ c)` with `a: [m, k]`, `b: [n, k]`.
pub fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), n * k);
    assert_eq!(c.len(), m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: strides describe the transposed view of an `[n, k]` buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfold the input into a `[C_in*k*k, H'*W']` patch matrix; padding reads as zero.
pub fn im2col(input: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let positions = oh * ow;
    let mut cols = vec![0.0; g.patch_len() * positions];
    for c in 0..g.in_ch {
        let plane = &input[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let dst = &mut cols[row * positions..(row + 1) * positions];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            dst[oy * ow + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back onto the input.
pub fn col2im(cols: &[f64], g: &ConvGeom, out: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let positions = oh * ow;
    for c in 0..g.in_ch {
        let plane = &mut out[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let src = &cols[row * positions..(row + 1) * positions];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let base = iy as usize * g.in_w;
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            plane[base + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(input: &[f64], weight: &[f64], bias: &[f64], g: &ConvGeom) -> Vec<f64> {
    let positions = g.out_positions();
    let mut out = vec![0.0; g.out_ch * positions];
    for (oc, row) in out.chunks_mut(positions).enumerate() {
        row.fill(bias[oc]);
    }
    if g.kernel == 1 && g.stride == 1 && g.pad == 0 {
        gemm(g.out_ch, g.in_ch, positions, weight, input, &mut out, true);
    } else {
        let cols = im2col(input, g);
        gemm(g.out_ch, g.patch_len(), positions, weight, &cols, &mut out, true);
    }
    out
}

/// Accumulates input, weight and bias gradients for a convolution.
pub fn conv2d_backward(
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    g: &ConvGeom,
    grad_input: Option<&mut [f64]>,
    grad_weight: Option<&mut [f64]>,
    grad_bias: Option<&mut [f64]>,
) {
    let positions = g.out_positions();
    let k = g.patch_len();
    let pointwise = g.kernel == 1 && g.stride == 1 && g.pad == 0;
    if let Some(gb) = grad_bias {
        for (oc, row) in grad_out.chunks(positions).enumerate() {
            gb[oc] += row.iter().sum::<f64>();
        }
    }
    if pointwise {
        if let Some(gw) = grad_weight {
            gemm_nt(g.out_ch, positions, k, grad_out, input, gw, true);
        }
        if let Some(gi) = grad_input {
            gemm_tn(k, g.out_ch, positions, weight, grad_out, gi, true);
        }
        return;
    }
    if let Some(gw) = grad_weight {
        let cols = im2col(input, g);
        gemm_nt(g.out_ch, positions, k, grad_out, &cols, gw, true);
    }
    if let Some(gi) = grad_input {
        let mut dcols = vec![0.0; k * positions];
        gemm_tn(k, g.out_ch, positions, weight, grad_out, &mut dcols, false);
        col2im(&dcols, g, gi);
    }
}

/// Per-channel valid cross-correlation of `template: [C,h,w]` over `search: [C,H,W]`.
pub fn xcorr_forward(
    template: &[f64],
    search: &[f64],
    c: usize,
    (th, tw): (usize, usize),
    (sh, sw): (usize, usize),
) -> Vec<f64> {
    let (oh, ow) = (sh - th + 1, sw - tw + 1);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let t = &template[ch * th * tw..(ch + 1) * th * tw];
        let s = &search[ch * sh * sw..(ch + 1) * sh * sw];
        let o = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for ty in 0..th {
            for tx in 0..tw {
                let wv = t[ty * tw + tx];
                for oy in 0..oh {
                    let srow = &s[(oy + ty) * sw + tx..(oy + ty) * sw + tx + ow];
                    let orow = &mut o[oy * ow..(oy + 1) * ow];
                    for (ov, sv) in orow.iter_mut().zip(srow) {
                        *ov += wv * sv;
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn xcorr_backward(
    template: &[f64],
    search: &[f64],
    grad_out: &[f64],
    c: usize,
    (th, tw): (usize, usize),
    (sh, sw): (usize, usize),
    mut grad_template: Option<&mut [f64]>,
    mut grad_search: Option<&mut [f64]>,
) {
    let (oh, ow) = (sh - th + 1, sw - tw + 1);
    for ch in 0..c {
        let t = &template[ch * th * tw..(ch + 1) * th * tw];
        let s = &search[ch * sh * sw..(ch + 1) * sh * sw];
        let d = &grad_out[ch * oh * ow..(ch + 1) * oh * ow];
        for ty in 0..th {
            for tx in 0..tw {
                if let Some(gt) = grad_template.as_deref_mut() {
                    let mut acc = 0.0;
                    for oy in 0..oh {
                        let srow = &s[(oy + ty) * sw + tx..(oy + ty) * sw + tx + ow];
                        let drow = &d[oy * ow..(oy + 1) * ow];
                        acc += srow.iter().zip(drow).map(|(a, b)| a * b).sum::<f64>();
                    }
                    gt[ch * th * tw + ty * tw + tx] += acc;
                }
                if let Some(gs) = grad_search.as_deref_mut() {
                    let wv = t[ty * tw + tx];
                    let gplane = &mut gs[ch * sh * sw..(ch + 1) * sh * sw];
                    for oy in 0..oh {
                        let grow = &mut gplane[(oy + ty) * sw + tx..(oy + ty) * sw + tx + ow];
                        let drow = &d[oy * ow..(oy + 1) * ow];
                        for (gv, dv) in grow.iter_mut().zip(drow) {
                            *gv += wv * dv;
                        }
                    }
                }
            }
        }
    }
}

/// Overflow-safe `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
