//! Raw forward/backward loops over flat row-major buffers.
//!
//! Shapes are checked by the caller in `Graph`; these functions only index.

/// `c[m, n] = a[m, k] * b[k, n]`
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `c[m, n] = a[m, k] * b[n, k]^T`
pub fn matmul_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
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

/// `c[k, n] = a[m, k]^T * b[m, n]`
pub fn matmul_at(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let c_row = &mut c[p * n..(p + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
}

impl ConvDims {
    fn pad(&self) -> isize {
        (self.kernel / 2) as isize
    }

    /// For kernel tap offset `d`, the output range whose input index `o + d` is in bounds.
    fn valid(len: usize, d: isize) -> (usize, usize) {
        let lo = (-d).max(0) as usize;
        let hi = (len as isize - d).min(len as isize).max(0) as usize;
        (lo, hi.max(lo))
    }
}

/// Stride 1, zero padding `kernel / 2` (size preserving for odd kernels).
/// `x: [B, Ci, H, W]`, `w: [Co, Ci, K, K]` -> `[B, Co, H, W]`.
pub fn conv2d(x: &[f64], w: &[f64], d: ConvDims) -> Vec<f64> {
    let ConvDims {
        batch,
        c_in,
        c_out,
        height,
        width,
        kernel,
    } = d;
    let plane = height * width;
    let mut y = vec![0.0; batch * c_out * plane];
    let pad = d.pad();
    for b in 0..batch {
        for co in 0..c_out {
            let y_plane = &mut y[(b * c_out + co) * plane..(b * c_out + co + 1) * plane];
            for ci in 0..c_in {
                let x_plane = &x[(b * c_in + ci) * plane..(b * c_in + ci + 1) * plane];
                for ky in 0..kernel {
                    let dy = ky as isize - pad;
                    let (oy_lo, oy_hi) = ConvDims::valid(height, dy);
                    for kx in 0..kernel {
                        let dx = kx as isize - pad;
                        let (ox_lo, ox_hi) = ConvDims::valid(width, dx);
                        let wv = w[((co * c_in + ci) * kernel + ky) * kernel + kx];
                        for oy in oy_lo..oy_hi {
                            let iy = (oy as isize + dy) as usize;
                            let ix0 = (ox_lo as isize + dx) as usize;
                            let n = ox_hi - ox_lo;
                            let out = &mut y_plane[oy * width + ox_lo..oy * width + ox_lo + n];
                            let inp = &x_plane[iy * width + ix0..iy * width + ix0 + n];
                            for (o, i) in out.iter_mut().zip(inp) {
                                *o += wv * i;
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Gradient of [`conv2d`] with respect to its input.
pub fn conv2d_grad_input(dy_all: &[f64], w: &[f64], d: ConvDims) -> Vec<f64> {
    let ConvDims {
        batch,
        c_in,
        c_out,
        height,
        width,
        kernel,
    } = d;
    let plane = height * width;
    let mut dx_all = vec![0.0; batch * c_in * plane];
    let pad = d.pad();
    for b in 0..batch {
        for ci in 0..c_in {
            let dx_plane = &mut dx_all[(b * c_in + ci) * plane..(b * c_in + ci + 1) * plane];
            for co in 0..c_out {
                let dy_plane = &dy_all[(b * c_out + co) * plane..(b * c_out + co + 1) * plane];
                for ky in 0..kernel {
                    let oy_d = ky as isize - pad;
                    let (oy_lo, oy_hi) = ConvDims::valid(height, oy_d);
                    for kx in 0..kernel {
                        let ox_d = kx as isize - pad;
                        let (ox_lo, ox_hi) = ConvDims::valid(width, ox_d);
                        let wv = w[((co * c_in + ci) * kernel + ky) * kernel + kx];
                        for oy in oy_lo..oy_hi {
                            let iy = (oy as isize + oy_d) as usize;
                            let ix0 = (ox_lo as isize + ox_d) as usize;
                            let n = ox_hi - ox_lo;
                            let src = &dy_plane[oy * width + ox_lo..oy * width + ox_lo + n];
                            let dst = &mut dx_plane[iy * width + ix0..iy * width + ix0 + n];
                            for (o, g) in dst.iter_mut().zip(src) {
                                *o += wv * g;
                            }
                        }
                    }
                }
            }
        }
    }
    dx_all
}

/// Gradient of [`conv2d`] with respect to its kernel.
pub fn conv2d_grad_kernel(x: &[f64], dy_all: &[f64], d: ConvDims) -> Vec<f64> {
    let ConvDims {
        batch,
        c_in,
        c_out,
        height,
        width,
        kernel,
    } = d;
    let plane = height * width;
    let mut dw = vec![0.0; c_out * c_in * kernel * kernel];
    let pad = d.pad();
    for b in 0..batch {
        for co in 0..c_out {
            let dy_plane = &dy_all[(b * c_out + co) * plane..(b * c_out + co + 1) * plane];
            for ci in 0..c_in {
                let x_plane = &x[(b * c_in + ci) * plane..(b * c_in + ci + 1) * plane];
                for ky in 0..kernel {
                    let oy_d = ky as isize - pad;
                    let (oy_lo, oy_hi) = ConvDims::valid(height, oy_d);
                    for kx in 0..kernel {
                        let ox_d = kx as isize - pad;
                        let (ox_lo, ox_hi) = ConvDims::valid(width, ox_d);
                        let mut acc = 0.0;
                        for oy in oy_lo..oy_hi {
                            let iy = (oy as isize + oy_d) as usize;
                            let ix0 = (ox_lo as isize + ox_d) as usize;
                            let n = ox_hi - ox_lo;
                            let g = &dy_plane[oy * width + ox_lo..oy * width + ox_lo + n];
                            let xi = &x_plane[iy * width + ix0..iy * width + ix0 + n];
                            acc += g.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
                        }
                        dw[((co * c_in + ci) * kernel + ky) * kernel + kx] += acc;
                    }
                }
            }
        }
    }
    dw
}

/// Row-wise softmax of a `[rows, cols]` buffer.
pub fn softmax_rows(z: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    for (src, dst) in z.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (d, s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    out
}

/// Backward of a row softmax: `ds = a * (da - sum(da * a))`.
pub fn softmax_rows_backward(a: &[f64], da: &[f64], cols: usize) -> Vec<f64> {
    let mut ds = vec![0.0; a.len()];
    for ((a_row, da_row), ds_row) in a.chunks(cols).zip(da.chunks(cols)).zip(ds.chunks_mut(cols)) {
        let dot: f64 = a_row.iter().zip(da_row).map(|(x, y)| x * y).sum();
        for ((d, av), gv) in ds_row.iter_mut().zip(a_row).zip(da_row) {
            *d = av * (gv - dot);
        }
    }
    ds
}
