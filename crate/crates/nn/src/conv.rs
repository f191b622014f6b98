//! Convolution kernels on NCHW buffers via im2col and GEMM.
//!
//! A convolution with weight `(O, C, k, k)` is `W · cols(x)` where
//! `cols(x)` has one row per `(c, ki, kj)` and one column per output pixel of
//! every image in the batch. The transposed convolution uses the same
//! weight layout read as `(C_in, C_out, k, k)` and is the exact adjoint:
//! `y = col2im(W^T · x)`.

use facemap_core::{Error, Result};

use crate::tensor::Tensor;

/// Kernel size, stride and zero padding `[top, bottom, left, right]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub kernel: usize,
    pub stride: usize,
    pub pad: [usize; 4],
}

impl Conv2dSpec {
    pub fn new(kernel: usize, stride: usize, pad: [usize; 4]) -> Self {
        Conv2dSpec { kernel, stride, pad }
    }

    /// Padding that maps `H` to `H / stride` (and back when transposed) for
    /// `H` divisible by the stride; odd totals put the extra row last.
    pub fn same(kernel: usize, stride: usize) -> Self {
        let total = kernel.saturating_sub(stride);
        let lo = total / 2;
        Conv2dSpec {
            kernel,
            stride,
            pad: [lo, total - lo, lo, total - lo],
        }
    }

    /// Output `(H, W)` of the forward convolution.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let ph = h + self.pad[0] + self.pad[1];
        let pw = w + self.pad[2] + self.pad[3];
        if self.stride == 0 || self.kernel == 0 || ph < self.kernel || pw < self.kernel {
            return Err(Error::ShapeMismatch(format!("{h}x{w} input too small for {self:?}")));
        }
        Ok(((ph - self.kernel) / self.stride + 1, (pw - self.kernel) / self.stride + 1))
    }

    /// Output `(H, W)` of the transposed convolution.
    pub fn transposed_output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let grow = |n: usize, pad: usize| {
            if n == 0 || self.stride == 0 {
                return None;
            }
            ((n - 1) * self.stride + self.kernel).checked_sub(pad).filter(|&v| v > 0)
        };
        match (grow(h, self.pad[0] + self.pad[1]), grow(w, self.pad[2] + self.pad[3])) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::ShapeMismatch(format!("{h}x{w} input invalid for transposed {self:?}"))),
        }
    }
}

/// `C = op(A) · op(B) + beta * C` for row-major buffers, `C` is `m x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_trans { (1, k) } else { (n, 1) };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry shared by the kernels: input `(N, C, H, W)` on the "image"
/// side, `(Ho, Wo)` on the "column" side.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    spec: Conv2dSpec,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.spec.kernel * self.spec.kernel
    }

    fn cols(&self) -> usize {
        self.n * self.ho * self.wo
    }

    /// Input coordinate read by output `(o, kk)` along one axis.
    #[inline]
    fn src(o: usize, kk: usize, stride: usize, pad: usize, limit: usize) -> Option<usize> {
        (o * stride + kk).checked_sub(pad).filter(|&v| v < limit)
    }
}

fn im2col(x: &[f64], g: &Geometry) -> Vec<f64> {
    let k = g.spec.kernel;
    let ncols = g.cols();
    let p = g.ho * g.wo;
    let mut cols = vec![0.0; g.rows() * ncols];
    for c in 0..g.c {
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut cols[((c * k + ki) * k + kj) * ncols..][..ncols];
                for n in 0..g.n {
                    let img = &x[(n * g.c + c) * g.h * g.w..][..g.h * g.w];
                    for oh in 0..g.ho {
                        let Some(ih) = Geometry::src(oh, ki, g.spec.stride, g.spec.pad[0], g.h) else {
                            continue;
                        };
                        let out = &mut row[n * p + oh * g.wo..][..g.wo];
                        for (ow, v) in out.iter_mut().enumerate() {
                            if let Some(iw) = Geometry::src(ow, kj, g.spec.stride, g.spec.pad[2], g.w) {
                                *v = img[ih * g.w + iw];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &Geometry) -> Vec<f64> {
    let k = g.spec.kernel;
    let ncols = g.cols();
    let p = g.ho * g.wo;
    let mut x = vec![0.0; g.n * g.c * g.h * g.w];
    for c in 0..g.c {
        for ki in 0..k {
            for kj in 0..k {
                let row = &cols[((c * k + ki) * k + kj) * ncols..][..ncols];
                for n in 0..g.n {
                    let img = &mut x[(n * g.c + c) * g.h * g.w..][..g.h * g.w];
                    for oh in 0..g.ho {
                        let Some(ih) = Geometry::src(oh, ki, g.spec.stride, g.spec.pad[0], g.h) else {
                            continue;
                        };
                        let src = &row[n * p + oh * g.wo..][..g.wo];
                        for (ow, v) in src.iter().enumerate() {
                            if let Some(iw) = Geometry::src(ow, kj, g.spec.stride, g.spec.pad[2], g.w) {
                                img[ih * g.w + iw] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `(N, C, P)` to `(C, N * P)`.
fn batch_to_channel_major(x: &[f64], n: usize, c: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..n {
        for j in 0..c {
            out[j * n * p + i * p..][..p].copy_from_slice(&x[(i * c + j) * p..][..p]);
        }
    }
    out
}

/// `(C, N * P)` to `(N, C, P)`, adding `bias[c]` when given.
fn channel_major_to_batch(x: &[f64], n: usize, c: usize, p: usize, bias: Option<&[f64]>) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..n {
        for j in 0..c {
            let dst = &mut out[(i * c + j) * p..][..p];
            dst.copy_from_slice(&x[j * n * p + i * p..][..p]);
            if let Some(b) = bias {
                dst.iter_mut().for_each(|v| *v += b[j]);
            }
        }
    }
    out
}

/// Per-channel sum over batch and pixels of an `(N, C, H, W)` tensor.
fn channel_sums(t: &[f64], n: usize, c: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; c];
    for i in 0..n {
        for (j, o) in out.iter_mut().enumerate() {
            *o += t[(i * c + j) * p..][..p].iter().sum::<f64>();
        }
    }
    out
}

fn check_weight(w: &Tensor, lead: usize, spec: &Conv2dSpec, what: &str) -> Result<[usize; 4]> {
    let d = w.dims4()?;
    if d[0] != lead || d[2] != spec.kernel || d[3] != spec.kernel {
        return Err(Error::ShapeMismatch(format!(
            "{what} weight {:?} does not fit {lead} channels with kernel {}",
            w.shape(),
            spec.kernel
        )));
    }
    Ok(d)
}

fn check_bias(b: Option<&Tensor>, ch: usize) -> Result<()> {
    match b {
        Some(b) if b.shape() != [ch] => Err(Error::ShapeMismatch(format!("bias {:?} for {ch} channels", b.shape()))),
        _ => Ok(()),
    }
}

/// Cross-correlation: `x (N, C, H, W)`, `w (O, C, k, k)`, `b (O)`.
pub fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: &Conv2dSpec) -> Result<Tensor> {
    let [n, c, h, wd] = x.dims4()?;
    let wdims = w.dims4()?;
    check_weight(w, wdims[0], spec, "conv")?;
    if wdims[1] != c {
        return Err(Error::ShapeMismatch(format!("conv weight {:?} on {c}-channel input", w.shape())));
    }
    let o = wdims[0];
    check_bias(b, o)?;
    let (ho, wo) = spec.output_size(h, wd)?;
    let g = Geometry { n, c, h, w: wd, ho, wo, spec: *spec };
    let cols = im2col(x.data(), &g);
    let mut out = vec![0.0; o * g.cols()];
    gemm(o, g.rows(), g.cols(), w.data(), false, &cols, false, 0.0, &mut out);
    let y = channel_major_to_batch(&out, n, o, ho * wo, b.map(|t| t.data()));
    Tensor::new(vec![n, o, ho, wo], y)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    spec: &Conv2dSpec,
    gy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let [n, c, h, wd] = x.dims4()?;
    let o = w.dims4()?[0];
    let [_, _, ho, wo] = gy.dims4()?;
    let g = Geometry { n, c, h, w: wd, ho, wo, spec: *spec };
    let gy_cm = batch_to_channel_major(gy.data(), n, o, ho * wo);
    let cols = im2col(x.data(), &g);
    let mut gw = vec![0.0; w.len()];
    gemm(o, g.cols(), g.rows(), &gy_cm, false, &cols, true, 0.0, &mut gw);
    let mut gcols = cols;
    gemm(g.rows(), o, g.cols(), w.data(), true, &gy_cm, false, 0.0, &mut gcols);
    let gx = col2im(&gcols, &g);
    Ok((
        Tensor::new(x.shape().to_vec(), gx)?,
        Tensor::new(w.shape().to_vec(), gw)?,
        Tensor::new(vec![o], channel_sums(gy.data(), n, o, ho * wo))?,
    ))
}

/// Transposed convolution: `x (N, Cin, H, W)`, `w (Cin, Cout, k, k)`,
/// `b (Cout)`; the adjoint of [`conv2d`] with the same weight and spec.
pub fn conv_transpose2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: &Conv2dSpec) -> Result<Tensor> {
    let [n, cin, hi, wi] = x.dims4()?;
    let [_, cout, _, _] = check_weight(w, cin, spec, "transposed conv")?;
    check_bias(b, cout)?;
    let (ho, wo) = spec.transposed_output_size(hi, wi)?;
    let g = Geometry { n, c: cout, h: ho, w: wo, ho: hi, wo: wi, spec: *spec };
    let x_cm = batch_to_channel_major(x.data(), n, cin, hi * wi);
    let mut cols = vec![0.0; g.rows() * g.cols()];
    gemm(g.rows(), cin, g.cols(), w.data(), true, &x_cm, false, 0.0, &mut cols);
    let mut y = col2im(&cols, &g);
    if let Some(b) = b {
        let p = ho * wo;
        for i in 0..n {
            for j in 0..cout {
                y[(i * cout + j) * p..][..p].iter_mut().for_each(|v| *v += b.data()[j]);
            }
        }
    }
    Tensor::new(vec![n, cout, ho, wo], y)
}

/// Gradients of [`conv_transpose2d`] with respect to input, weight and bias.
pub fn conv_transpose2d_backward(
    x: &Tensor,
    w: &Tensor,
    spec: &Conv2dSpec,
    gy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let [n, cin, hi, wi] = x.dims4()?;
    let [_, cout, ho, wo] = gy.dims4()?;
    let g = Geometry { n, c: cout, h: ho, w: wo, ho: hi, wo: wi, spec: *spec };
    let gcols = im2col(gy.data(), &g);
    let x_cm = batch_to_channel_major(x.data(), n, cin, hi * wi);
    let mut gx_cm = vec![0.0; cin * g.cols()];
    gemm(cin, g.rows(), g.cols(), w.data(), false, &gcols, false, 0.0, &mut gx_cm);
    let mut gw = vec![0.0; w.len()];
    gemm(cin, g.cols(), g.rows(), &x_cm, false, &gcols, true, 0.0, &mut gw);
    Ok((
        Tensor::new(x.shape().to_vec(), channel_major_to_batch(&gx_cm, n, cin, hi * wi, None))?,
        Tensor::new(w.shape().to_vec(), gw)?,
        Tensor::new(vec![cout], channel_sums(gy.data(), n, cout, ho * wo))?,
    ))
}
