//! Dense row-major tensors and the numeric kernels the network is built from.
//!
//! Feature maps are `[channels, height, width]`; convolution kernels are
//! `[out, in, k, k]` with odd `k`, stride 1 and zero padding `k / 2`.
//! Convolution lowers to a GEMM over an im2col buffer.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating-point element type: `f32` for training, `f64` for gradient checks.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + MulAssign
    + 'static
{
    /// `c = alpha * a * b + beta * c` with explicit row/column strides.
    ///
    /// # Safety
    /// Strides and dimensions must describe memory inside the given slices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite float")
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major matrix operand for [`gemm`], optionally transposed.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, T> MatRef<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        MatRef {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        MatRef {
            transposed: !self.transposed,
            ..self
        }
    }

    fn logical(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out = a * b + beta * out`, `out` row-major `[m, n]`.
pub(crate) fn gemm<T: Real>(a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, out: &mut [T]) {
    let (m, k) = a.logical();
    let (k2, n) = b.logical();
    assert_eq!(k, k2, "gemm inner dimension");
    assert_eq!(out.len(), m * n, "gemm output size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in out.iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: dimensions and strides are derived from slices whose lengths
    // were checked above (debug) and by MatRef construction.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data[..8]", &preview)
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, other.shape, "zip_map shape");
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_inplace(&mut self, s: T) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.data.len()).unwrap()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.as_f64()).unwrap())
                .collect(),
        }
    }

    /// `(channels, height, width)` of a rank-3 feature map.
    pub fn chw(&self) -> (usize, usize, usize) {
        assert_eq!(self.shape.len(), 3, "expected [C,H,W], got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2])
    }
}

/// Lower `[C,H,W]` into `[C*k*k, H*W]` patches (zero padded).
pub(crate) fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, k: usize, cols: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    debug_assert_eq!(cols.len(), c * k * k * hw);
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let line = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    // valid x range: 0 <= x + dx < w
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                    line[..x0.min(w)].fill(T::zero());
                    if x1 > x0 {
                        let s0 = (x0 as isize + dx) as usize;
                        line[x0..x1].copy_from_slice(&src[s0..s0 + (x1 - x0)]);
                    }
                    if x1 < w {
                        line[x1.max(x0)..].fill(T::zero());
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add patches back into `[C,H,W]`.
pub(crate) fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, k: usize, x: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                    if x1 <= x0 {
                        continue;
                    }
                    let s0 = (x0 as isize + dx) as usize;
                    let dst = &mut plane[sy as usize * w + s0..sy as usize * w + s0 + (x1 - x0)];
                    for (d, &v) in dst.iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                        *d += v;
                    }
                }
            }
        }
    }
}

fn conv_dims<T: Real>(x: &Tensor<T>, w: &Tensor<T>) -> Result<(usize, usize, usize, usize, usize)> {
    if x.shape().len() != 3 || w.shape().len() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "conv2d expects x [C,H,W] and w [O,C,k,k], got {:?} and {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let (c, h, wd) = x.chw();
    let (o, ci, k, k2) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    if ci != c || k != k2 || k % 2 == 0 {
        return Err(Error::ShapeMismatch(format!(
            "conv2d kernel {:?} incompatible with input {:?}",
            w.shape(),
            x.shape()
        )));
    }
    Ok((c, h, wd, o, k))
}

/// Same-size 2-D convolution (cross-correlation), stride 1.
pub fn conv2d<T: Real>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (c, h, wd, o, k) = conv_dims(x, w)?;
    let hw = h * wd;
    let mut out = vec![T::zero(); o * hw];
    if let Some(b) = bias {
        if b.len() != o {
            return Err(Error::ShapeMismatch(format!(
                "conv2d bias has {} values for {o} output channels",
                b.len()
            )));
        }
        for (oc, &bv) in b.data().iter().enumerate() {
            out[oc * hw..(oc + 1) * hw].fill(bv);
        }
    }
    let beta = if bias.is_some() { T::one() } else { T::zero() };
    if k == 1 {
        gemm(MatRef::new(w.data(), o, c), MatRef::new(x.data(), c, hw), beta, &mut out);
    } else {
        let mut cols = vec![T::zero(); c * k * k * hw];
        im2col(x.data(), c, h, wd, k, &mut cols);
        gemm(
            MatRef::new(w.data(), o, c * k * k),
            MatRef::new(&cols, c * k * k, hw),
            beta,
            &mut out,
        );
    }
    Tensor::new(vec![o, h, wd], out)
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Option<Tensor<T>>,
    pub db: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dout: &Tensor<T>,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> Result<ConvGrads<T>> {
    let (c, h, wd, o, k) = conv_dims(x, w)?;
    let hw = h * wd;
    let ck = c * k * k;
    let mut grads = ConvGrads {
        dx: None,
        dw: None,
        db: None,
    };
    if need_db {
        let db: Vec<T> = (0..o)
            .map(|oc| dout.data()[oc * hw..(oc + 1) * hw].iter().copied().sum())
            .collect();
        grads.db = Some(Tensor::new(vec![o], db)?);
    }
    let dmat = MatRef::new(dout.data(), o, hw);
    if need_dw {
        let mut dw = vec![T::zero(); o * ck];
        if k == 1 {
            gemm(dmat, MatRef::new(x.data(), c, hw).t(), T::zero(), &mut dw);
        } else {
            let mut cols = vec![T::zero(); ck * hw];
            im2col(x.data(), c, h, wd, k, &mut cols);
            gemm(dmat, MatRef::new(&cols, ck, hw).t(), T::zero(), &mut dw);
        }
        grads.dw = Some(Tensor::new(w.shape().to_vec(), dw)?);
    }
    if need_dx {
        let mut dx = vec![T::zero(); c * hw];
        if k == 1 {
            gemm(MatRef::new(w.data(), o, c).t(), dmat, T::zero(), &mut dx);
        } else {
            let mut dcols = vec![T::zero(); ck * hw];
            gemm(MatRef::new(w.data(), o, ck).t(), dmat, T::zero(), &mut dcols);
            col2im(&dcols, c, h, wd, k, &mut dx);
        }
        grads.dx = Some(Tensor::new(vec![c, h, wd], dx)?);
    }
    Ok(grads)
}

/// 2×2 max pooling, stride 2, ceil mode (partial windows at odd edges).
///
/// Returns the pooled map and, per output cell, the flat input index that
/// won (first maximum in row-major window order).
pub fn maxpool2x2<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let (c, h, w) = x.chw();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    let d = x.data();
    for ci in 0..c {
        let base = ci * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = base + (2 * oy) * w + 2 * ox;
                let mut best = d[best_idx];
                for y in 2 * oy..(2 * oy + 2).min(h) {
                    for xx in 2 * ox..(2 * ox + 2).min(w) {
                        let idx = base + y * w + xx;
                        if d[idx] > best {
                            best = d[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx as u32);
            }
        }
    }
    (Tensor { shape: vec![c, oh, ow], data: out }, arg)
}

/// Nearest-neighbour ×2 upsampling cropped to `(out_h, out_w)`.
pub fn upsample2x<T: Real>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw();
    if out_h > 2 * h || out_w > 2 * w || out_h.div_ceil(2) != h || out_w.div_ceil(2) != w {
        return Err(Error::ShapeMismatch(format!(
            "cannot upsample {h}x{w} to {out_h}x{out_w}"
        )));
    }
    let mut out = Vec::with_capacity(c * out_h * out_w);
    let d = x.data();
    for ci in 0..c {
        for y in 0..out_h {
            let row = &d[ci * h * w + (y / 2) * w..ci * h * w + (y / 2 + 1) * w];
            out.extend((0..out_w).map(|xx| row[xx / 2]));
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// Adjoint of [`upsample2x`].
pub(crate) fn upsample2x_backward<T: Real>(dout: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let (c, oh, ow) = dout.chw();
    let mut dx = Tensor::zeros(&[c, h, w]);
    let g = dout.data();
    let dd = dx.data_mut();
    for ci in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                dd[ci * h * w + (y / 2) * w + xx / 2] += g[(ci * oh + y) * ow + xx];
            }
        }
    }
    dx
}
