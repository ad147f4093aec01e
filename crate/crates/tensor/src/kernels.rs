//! Raw loops behind the tape ops. Reductions accumulate in `f64`.

/// `out[m×n] += a[m×k] · b[k×n]`, one 64-bit row accumulator at a time.
pub(crate) fn matmul_acc(
    a: &[f32],
    b: &[f32],
    out: &mut [f32],
    m: usize,
    k: usize,
    n: usize,
    acc: &mut Vec<f64>,
) {
    acc.clear();
    acc.resize(n, 0.0);
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let av = av as f64;
            let brow = &b[p * n..(p + 1) * n];
            for (s, &bv) in acc.iter_mut().zip(brow) {
                *s += av * bv as f64;
            }
        }
        for (o, &s) in out[i * n..(i + 1) * n].iter_mut().zip(acc.iter()) {
            *o += s as f32;
        }
    }
}

/// Transpose of a row-major `rows×cols` matrix into `out`.
pub(crate) fn transpose_into(x: &[f32], rows: usize, cols: usize, out: &mut Vec<f32>) {
    out.clear();
    out.resize(rows * cols, 0.0);
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
}

/// Dot product accumulated in `f64` with four independent partial sums.
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut s = [0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            s[l] += x[l] as f64 * y[l] as f64;
        }
    }
    let mut tail = 0f64;
    for (x, y) in ra.iter().zip(rb) {
        tail += *x as f64 * *y as f64;
    }
    (s[0] + s[1]) + (s[2] + s[3]) + tail
}

/// Geometry of a non-overlapping patch convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct PatchGeom {
    pub batch: usize,
    /// Channels on the full-resolution side.
    pub fine_channels: usize,
    /// Channels on the patch-grid side.
    pub coarse_channels: usize,
    pub patch: usize,
    /// Patch-grid rows and columns.
    pub rows: usize,
    pub cols: usize,
}

impl PatchGeom {
    fn patch_len(&self) -> usize {
        self.fine_channels * self.patch * self.patch
    }

    fn fine_h(&self) -> usize {
        self.rows * self.patch
    }

    fn fine_w(&self) -> usize {
        self.cols * self.patch
    }

    /// Copies the patch at (b, i, j) of a fine field into `buf` in (c, u, v) order.
    fn gather_patch(&self, fine: &[f32], b: usize, i: usize, j: usize, buf: &mut [f32]) {
        let (h, w, p) = (self.fine_h(), self.fine_w(), self.patch);
        let mut q = 0;
        for c in 0..self.fine_channels {
            let plane = (b * self.fine_channels + c) * h * w;
            for u in 0..p {
                let row = plane + (i * p + u) * w + j * p;
                buf[q..q + p].copy_from_slice(&fine[row..row + p]);
                q += p;
            }
        }
    }

    fn scatter_patch_add(&self, fine: &mut [f32], b: usize, i: usize, j: usize, buf: &[f32]) {
        let (h, w, p) = (self.fine_h(), self.fine_w(), self.patch);
        let mut q = 0;
        for c in 0..self.fine_channels {
            let plane = (b * self.fine_channels + c) * h * w;
            for u in 0..p {
                let row = plane + (i * p + u) * w + j * p;
                for (dst, &src) in fine[row..row + p].iter_mut().zip(&buf[q..q + p]) {
                    *dst += src;
                }
                q += p;
            }
        }
    }

    fn coarse_index(&self, b: usize, d: usize, i: usize, j: usize) -> usize {
        ((b * self.coarse_channels + d) * self.rows + i) * self.cols + j
    }
}

/// Fine `[B,C,H,W]` → coarse `[B,D,H/P,W/P]` with kernel `[D,C,P,P]`.
pub(crate) fn patch_conv(x: &[f32], kernel: &[f32], g: PatchGeom) -> Vec<f32> {
    let len = g.patch_len();
    let mut out = vec![0f32; g.batch * g.coarse_channels * g.rows * g.cols];
    let mut buf = vec![0f32; len];
    for b in 0..g.batch {
        for i in 0..g.rows {
            for j in 0..g.cols {
                g.gather_patch(x, b, i, j, &mut buf);
                for d in 0..g.coarse_channels {
                    let krow = &kernel[d * len..(d + 1) * len];
                    let s = dot(krow, &buf);
                    out[g.coarse_index(b, d, i, j)] = s as f32;
                }
            }
        }
    }
    out
}

pub(crate) fn patch_conv_grad(
    x: &[f32],
    kernel: &[f32],
    gout: &[f32],
    g: PatchGeom,
    dx: Option<&mut [f32]>,
    dk: Option<&mut [f32]>,
) {
    let len = g.patch_len();
    let mut buf = vec![0f32; len];
    if let Some(dx) = dx {
        let mut acc = vec![0f64; len];
        for b in 0..g.batch {
            for i in 0..g.rows {
                for j in 0..g.cols {
                    acc.iter_mut().for_each(|v| *v = 0.0);
                    for d in 0..g.coarse_channels {
                        let gv = gout[g.coarse_index(b, d, i, j)] as f64;
                        for (s, &k) in acc.iter_mut().zip(&kernel[d * len..(d + 1) * len]) {
                            *s += gv * k as f64;
                        }
                    }
                    for (o, &s) in buf.iter_mut().zip(&acc) {
                        *o = s as f32;
                    }
                    g.scatter_patch_add(dx, b, i, j, &buf);
                }
            }
        }
    }
    if let Some(dk) = dk {
        let mut acc = vec![0f64; g.coarse_channels * len];
        for b in 0..g.batch {
            for i in 0..g.rows {
                for j in 0..g.cols {
                    g.gather_patch(x, b, i, j, &mut buf);
                    for d in 0..g.coarse_channels {
                        let gv = gout[g.coarse_index(b, d, i, j)] as f64;
                        for (s, &v) in acc[d * len..(d + 1) * len].iter_mut().zip(&buf) {
                            *s += gv * v as f64;
                        }
                    }
                }
            }
        }
        for (o, s) in dk.iter_mut().zip(acc) {
            *o += s as f32;
        }
    }
}

/// Coarse `[B,D,h,w]` → fine `[B,C,hP,wP]` with kernel `[D,C,P,P]`.
pub(crate) fn patch_deconv(x: &[f32], kernel: &[f32], g: PatchGeom) -> Vec<f32> {
    let len = g.patch_len();
    let mut out = vec![0f32; g.batch * g.fine_channels * g.fine_h() * g.fine_w()];
    let mut acc = vec![0f64; len];
    let mut buf = vec![0f32; len];
    for b in 0..g.batch {
        for i in 0..g.rows {
            for j in 0..g.cols {
                acc.iter_mut().for_each(|v| *v = 0.0);
                for d in 0..g.coarse_channels {
                    let xv = x[g.coarse_index(b, d, i, j)] as f64;
                    for (s, &k) in acc.iter_mut().zip(&kernel[d * len..(d + 1) * len]) {
                        *s += xv * k as f64;
                    }
                }
                for (o, &s) in buf.iter_mut().zip(&acc) {
                    *o = s as f32;
                }
                g.scatter_patch_add(&mut out, b, i, j, &buf);
            }
        }
    }
    out
}

pub(crate) fn patch_deconv_grad(
    x: &[f32],
    kernel: &[f32],
    gout: &[f32],
    g: PatchGeom,
    dx: Option<&mut [f32]>,
    dk: Option<&mut [f32]>,
) {
    let len = g.patch_len();
    let mut buf = vec![0f32; len];
    if let Some(dx) = dx {
        for b in 0..g.batch {
            for i in 0..g.rows {
                for j in 0..g.cols {
                    g.gather_patch(gout, b, i, j, &mut buf);
                    for d in 0..g.coarse_channels {
                        let s = dot(&kernel[d * len..(d + 1) * len], &buf);
                        dx[g.coarse_index(b, d, i, j)] += s as f32;
                    }
                }
            }
        }
    }
    if let Some(dk) = dk {
        let mut acc = vec![0f64; g.coarse_channels * len];
        for b in 0..g.batch {
            for i in 0..g.rows {
                for j in 0..g.cols {
                    g.gather_patch(gout, b, i, j, &mut buf);
                    for d in 0..g.coarse_channels {
                        let xv = x[g.coarse_index(b, d, i, j)] as f64;
                        for (s, &v) in acc[d * len..(d + 1) * len].iter_mut().zip(&buf) {
                            *s += xv * v as f64;
                        }
                    }
                }
            }
        }
        for (o, s) in dk.iter_mut().zip(acc) {
            *o += s as f32;
        }
    }
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)

fn tanh_fast(u: f32) -> f32 {
    if u.abs() > 15.0 {
        return u.signum();
    }
    let e = (2.0 * u).exp();
    (e - 1.0) / (e + 1.0)
}

/// Tanh approximation of GELU.
pub(crate) fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + tanh_fast(GELU_C * (x + 0.044715 * x * x * x)))
}

pub(crate) fn gelu_grad(x: f32) -> f32 {
    let t = tanh_fast(GELU_C * (x + 0.044715 * x * x * x));
    let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}
