//! Low-level numeric kernels shared by the graph executor.
//!
//! Every kernel is generic over [`Scalar`] so the same code path can run in
//! f32 for training and in f64 when gradients are being verified against
//! finite differences. Kernels are plain functions over slices; shape
//! bookkeeping lives in the executor.

use std::cell::RefCell;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use rayon::prelude::*;

/// Smallest step below 1.0 that f32 can represent, used to keep activations
/// strictly inside their open intervals in both precisions.
const UNIT_EPS: f64 = 5.960_464_477_539_063e-8; // 2^-24

/// Probability floor/ceiling inside the cross-entropy logs.
const BCE_EPS: f64 = 1e-7;

/// Floor for sigmoid outputs so downstream logs stay finite.
const SIGMOID_FLOOR: f64 = 1e-30;

pub trait Scalar:
    Copy
    + PartialOrd
    + std::fmt::Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f32(v: f32) -> Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;
    /// Runs `f` on a thread-local scratch buffer of at least `len` elements.
    /// The buffer's previous contents are arbitrary; callers overwrite what
    /// they read. Keeping it thread-local means the convolution workers never
    /// allocate in steady state.
    fn with_scratch<R>(len: usize, f: impl FnOnce(&mut [Self]) -> R) -> R;
    /// C = alpha * A * B + beta * C over arbitrary strides.
    /// A is m-by-k, B is k-by-n, C is m-by-n.
    ///
    /// # Safety
    /// Every (row, col) index reached through the given strides must be in
    /// bounds for the corresponding allocation.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
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
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f32(v: f32) -> Self {
        v
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn tanh(self) -> Self {
        self.tanh()
    }
    fn exp(self) -> Self {
        self.exp()
    }
    fn ln(self) -> Self {
        self.ln()
    }
    fn sqrt(self) -> Self {
        self.sqrt()
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    fn with_scratch<R>(len: usize, f: impl FnOnce(&mut [Self]) -> R) -> R {
        SCRATCH_F32.with_borrow_mut(|buf| {
            if buf.len() < len {
                buf.resize(len, 0.0);
            }
            f(&mut buf[..len])
        })
    }
    unsafe fn gemm(
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
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn tanh(self) -> Self {
        self.tanh()
    }
    fn exp(self) -> Self {
        self.exp()
    }
    fn ln(self) -> Self {
        self.ln()
    }
    fn sqrt(self) -> Self {
        self.sqrt()
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn with_scratch<R>(len: usize, f: impl FnOnce(&mut [Self]) -> R) -> R {
        SCRATCH_F64.with_borrow_mut(|buf| {
            if buf.len() < len {
                buf.resize(len, 0.0);
            }
            f(&mut buf[..len])
        })
    }
    unsafe fn gemm(
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
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

thread_local! {
    static SCRATCH_F32: RefCell<Vec<f32>> = const { RefCell::new(Vec::new()) };
    static SCRATCH_F64: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
}

fn clamp<T: Scalar>(v: T, lo: T, hi: T) -> T {
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}

// ---------------------------------------------------------------------------
// Dense matmul
// ---------------------------------------------------------------------------

/// y[m,n] = x[m,k] * w[k,n]
pub fn matmul_fwd<T: Scalar>(x: &[T], w: &[T], y: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(x.len(), m * k);
    debug_assert_eq!(w.len(), k * n);
    debug_assert_eq!(y.len(), m * n);
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::ONE,
            x.as_ptr(),
            k as isize,
            1,
            w.as_ptr(),
            n as isize,
            1,
            T::ZERO,
            y.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// gx[m,k] += gy[m,n] * w^T; gw[k,n] += x^T * gy. Either output may be absent.
pub fn matmul_bwd<T: Scalar>(
    x: &[T],
    w: &[T],
    gy: &[T],
    gx: Option<&mut [T]>,
    gw: Option<&mut [T]>,
    m: usize,
    k: usize,
    n: usize,
) {
    debug_assert_eq!(gy.len(), m * n);
    if let Some(gx) = gx {
        debug_assert_eq!(gx.len(), m * k);
        // gx = gy * w^T: treat w as its transpose by swapping strides.
        unsafe {
            T::gemm(
                m,
                n,
                k,
                T::ONE,
                gy.as_ptr(),
                n as isize,
                1,
                w.as_ptr(),
                1,
                n as isize,
                T::ONE,
                gx.as_mut_ptr(),
                k as isize,
                1,
            );
        }
    }
    if let Some(gw) = gw {
        debug_assert_eq!(gw.len(), k * n);
        // gw = x^T * gy
        unsafe {
            T::gemm(
                k,
                m,
                n,
                T::ONE,
                x.as_ptr(),
                1,
                k as isize,
                gy.as_ptr(),
                n as isize,
                1,
                T::ONE,
                gw.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Bias broadcast
// ---------------------------------------------------------------------------

/// y = x + bias, with bias broadcast over `outer` and `inner`:
/// x is laid out [outer, ch, inner], bias is [ch].
fn bias_add_rows<T: Scalar>(x: &[T], bias: &[T], y: &mut [T], first_row: usize, inner: usize) {
    let ch = bias.len();
    for (r, (yr, xr)) in y.chunks_mut(inner).zip(x.chunks(inner)).enumerate() {
        let b = bias[(first_row + r) % ch];
        for (o, v) in yr.iter_mut().zip(xr.iter()) {
            *o = *v + b;
        }
    }
}

pub fn bias_add_fwd<T: Scalar>(
    x: &[T],
    bias: &[T],
    y: &mut [T],
    outer: usize,
    ch: usize,
    inner: usize,
) {
    debug_assert_eq!(x.len(), outer * ch * inner);
    debug_assert_eq!(bias.len(), ch);
    debug_assert_eq!(y.len(), x.len());
    // Tasks are whole (outer, channel) rows so each chunk knows its channel
    // from the chunk index alone.
    let rows_per = (PAR_CHUNK / inner.max(1)).max(1);
    let chunk = rows_per * inner;
    if y.len() <= chunk {
        bias_add_rows(x, bias, y, 0, inner);
    } else {
        y.par_chunks_mut(chunk)
            .zip(x.par_chunks(chunk))
            .enumerate()
            .for_each(|(ci, (yc, xc))| bias_add_rows(xc, bias, yc, ci * rows_per, inner));
    }
}

pub fn bias_add_bwd<T: Scalar>(
    gy: &[T],
    gx: Option<&mut [T]>,
    gbias: Option<&mut [T]>,
    outer: usize,
    ch: usize,
    inner: usize,
) {
    if let Some(gx) = gx {
        par_map2(gy, gx, |gyc, gxc| {
            for (o, g) in gxc.iter_mut().zip(gyc.iter()) {
                *o += *g;
            }
        });
    }
    if let Some(gbias) = gbias {
        debug_assert_eq!(gbias.len(), ch);
        // One task per channel; the summation order inside a channel is the
        // same whether or not the channels run concurrently.
        let per_channel = |c: usize, gb: &mut T| {
            let mut s = T::ZERO;
            for o in 0..outer {
                let base = (o * ch + c) * inner;
                for g in &gy[base..base + inner] {
                    s += *g;
                }
            }
            *gb += s;
        };
        if gy.len() <= PAR_CHUNK {
            for (c, gb) in gbias.iter_mut().enumerate() {
                per_channel(c, gb);
            }
        } else {
            gbias.par_iter_mut().enumerate().for_each(|(c, gb)| per_channel(c, gb));
        }
    }
}

// ---------------------------------------------------------------------------
// Convolution (square kernel, symmetric zero padding)
// ---------------------------------------------------------------------------

/// Static geometry of one conv node. Kernel tensors are laid out
/// [out_ch, in_ch, k, k]; images are [batch, ch, h, w].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub batch: usize,
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub ksize: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.ksize) / self.stride + 1
    }
    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.ksize) / self.stride + 1
    }
    /// Length of one unrolled receptive field.
    pub fn patch_len(&self) -> usize {
        self.in_ch * self.ksize * self.ksize
    }
    pub fn in_image_len(&self) -> usize {
        self.in_ch * self.in_h * self.in_w
    }
    pub fn out_image_len(&self) -> usize {
        self.out_ch * self.out_h() * self.out_w()
    }

    /// For a fixed kernel column offset, the output-column range whose input
    /// column lands inside the frame.
    fn valid_ow(&self, kw: usize) -> (usize, usize) {
        let lo = if self.pad > kw { (self.pad - kw).div_ceil(self.stride) } else { 0 };
        let last = (self.in_w - 1 + self.pad).saturating_sub(kw) / self.stride;
        (lo.min(self.out_w()), (last + 1).min(self.out_w()))
    }
}

/// Images processed per im2col/GEMM round. Fixed regardless of thread count
/// so chunk boundaries, and therefore floating-point results, never depend
/// on available parallelism.
const CONV_CHUNK: usize = 8;

/// Unrolls a chunk of images into a transposed patch matrix:
/// `patch[p][j*m + oh*ow_n + ow] = x[j][ic, oh*stride+kh-pad, ow*stride+kw-pad]`
/// with `p = ic*k*k + kh*k + kw`, zero outside the frame. The transposed
/// layout makes every patch row contiguous, so unit-stride convolutions
/// reduce to shifted row copies.
fn im2col_chunk<T: Scalar>(x: &[T], patch: &mut [T], s: &ConvSpec, imgs: usize) {
    let (oh_n, ow_n, k) = (s.out_h(), s.out_w(), s.ksize);
    let m = oh_n * ow_n;
    let cm = imgs * m;
    debug_assert_eq!(x.len(), imgs * s.in_image_len());
    debug_assert_eq!(patch.len(), s.patch_len() * cm);
    for (p, prow) in patch.chunks_mut(cm).enumerate() {
        let ic = p / (k * k);
        let kh = p / k % k;
        let kw = p % k;
        let (lo, hi) = s.valid_ow(kw);
        for (j, dst_img) in prow.chunks_mut(m).enumerate() {
            let xim = &x[j * s.in_image_len() + ic * s.in_h * s.in_w..];
            for (oh, dst) in dst_img.chunks_mut(ow_n).enumerate() {
                let ih = (oh * s.stride + kh) as isize - s.pad as isize;
                if ih < 0 || ih >= s.in_h as isize || lo >= hi {
                    dst.fill(T::ZERO);
                    continue;
                }
                let xrow = &xim[ih as usize * s.in_w..];
                dst[..lo].fill(T::ZERO);
                if s.stride == 1 {
                    let shift = lo + kw - s.pad;
                    dst[lo..hi].copy_from_slice(&xrow[shift..shift + hi - lo]);
                } else {
                    for (ow, d) in dst[lo..hi].iter_mut().enumerate() {
                        *d = xrow[(lo + ow) * s.stride + kw - s.pad];
                    }
                }
                dst[hi..].fill(T::ZERO);
            }
        }
    }
}

/// Adjoint of [`im2col_chunk`]: accumulates patch rows back onto the image
/// grid.
fn col2im_add_chunk<T: Scalar>(patch: &[T], gx: &mut [T], s: &ConvSpec, imgs: usize) {
    let (oh_n, ow_n, k) = (s.out_h(), s.out_w(), s.ksize);
    let m = oh_n * ow_n;
    let cm = imgs * m;
    for (p, prow) in patch.chunks(cm).enumerate() {
        let ic = p / (k * k);
        let kh = p / k % k;
        let kw = p % k;
        let (lo, hi) = s.valid_ow(kw);
        if lo >= hi {
            continue;
        }
        for (j, src_img) in prow.chunks(m).enumerate() {
            let gim = &mut gx[j * s.in_image_len() + ic * s.in_h * s.in_w..];
            for (oh, src) in src_img.chunks(ow_n).enumerate() {
                let ih = (oh * s.stride + kh) as isize - s.pad as isize;
                if ih < 0 || ih >= s.in_h as isize {
                    continue;
                }
                let grow = &mut gim[ih as usize * s.in_w..];
                if s.stride == 1 {
                    let shift = lo + kw - s.pad;
                    for (g, v) in grow[shift..shift + hi - lo].iter_mut().zip(&src[lo..hi]) {
                        *g += *v;
                    }
                } else {
                    for (ow, v) in src[lo..hi].iter().enumerate() {
                        grow[(lo + ow) * s.stride + kw - s.pad] += *v;
                    }
                }
            }
        }
    }
}

/// `cbuf[oc][j*m..] = y[j][oc]` gathered across a chunk, or the reverse.
fn gather_oc_major<T: Scalar>(per_image: &[T], cbuf: &mut [T], oc: usize, m: usize, imgs: usize) {
    for j in 0..imgs {
        for c in 0..oc {
            cbuf[c * imgs * m + j * m..][..m].copy_from_slice(&per_image[(j * oc + c) * m..][..m]);
        }
    }
}

fn scatter_oc_major<T: Scalar>(cbuf: &[T], per_image: &mut [T], oc: usize, m: usize, imgs: usize) {
    for j in 0..imgs {
        for c in 0..oc {
            per_image[(j * oc + c) * m..][..m].copy_from_slice(&cbuf[c * imgs * m + j * m..][..m]);
        }
    }
}

/// y[b, oc, oh, ow] = sum over the receptive field of x * kernel.
/// Images are processed in fixed chunks, in parallel when a thread pool is
/// available; results are identical either way.
pub fn conv2d_fwd<T: Scalar>(x: &[T], kernel: &[T], y: &mut [T], spec: &ConvSpec) {
    let m = spec.out_h() * spec.out_w();
    let plen = spec.patch_len();
    let oc = spec.out_ch;
    debug_assert_eq!(kernel.len(), oc * plen);
    x.par_chunks(CONV_CHUNK * spec.in_image_len())
        .zip(y.par_chunks_mut(CONV_CHUNK * spec.out_image_len()))
        .for_each(|(xc, yc)| {
            let imgs = xc.len() / spec.in_image_len();
            let cm = imgs * m;
            T::with_scratch((plen + oc) * cm, |scratch| {
                let (patch, cbuf) = scratch.split_at_mut(plen * cm);
                let cbuf = &mut cbuf[..oc * cm];
                im2col_chunk(xc, patch, spec, imgs);
                if oc == 1 {
                    // One output channel starves the GEMM microkernel; a
                    // row-accumulation loop vectorizes better.
                    cbuf.fill(T::ZERO);
                    for (p, prow) in patch.chunks(cm).enumerate() {
                        let kv = kernel[p];
                        for (o, v) in cbuf.iter_mut().zip(prow) {
                            *o += kv * *v;
                        }
                    }
                } else {
                    // cbuf[oc, cm] = kernel[oc, plen] * patch[plen, cm]
                    unsafe {
                        T::gemm(
                            oc,
                            plen,
                            cm,
                            T::ONE,
                            kernel.as_ptr(),
                            plen as isize,
                            1,
                            patch.as_ptr(),
                            cm as isize,
                            1,
                            T::ZERO,
                            cbuf.as_mut_ptr(),
                            cm as isize,
                            1,
                        );
                    }
                }
                scatter_oc_major(cbuf, yc, oc, m, imgs);
            });
        });
}

/// Accumulates gx and gkernel from gy. Either output may be absent.
pub fn conv2d_bwd<T: Scalar>(
    x: &[T],
    kernel: &[T],
    gy: &[T],
    gx: Option<&mut [T]>,
    gkernel: Option<&mut [T]>,
    spec: &ConvSpec,
) {
    let want_gk = gkernel.is_some();
    let in_chunk = CONV_CHUNK * spec.in_image_len();
    let out_chunk = CONV_CHUNK * spec.out_image_len();

    // Each chunk returns its kernel-gradient contribution; those are summed
    // in chunk order afterwards so the result never depends on scheduling.
    let partials: Vec<Option<Vec<T>>> = match gx {
        Some(gx) => x
            .par_chunks(in_chunk)
            .zip(gy.par_chunks(out_chunk))
            .zip(gx.par_chunks_mut(in_chunk))
            .map(|((xc, gyc), gxc)| conv_bwd_chunk(xc, kernel, gyc, Some(gxc), want_gk, spec))
            .collect(),
        None => x
            .par_chunks(in_chunk)
            .zip(gy.par_chunks(out_chunk))
            .map(|(xc, gyc)| conv_bwd_chunk(xc, kernel, gyc, None, want_gk, spec))
            .collect(),
    };
    if let Some(gk) = gkernel {
        for partial in partials.into_iter().flatten() {
            for (g, p) in gk.iter_mut().zip(partial) {
                *g += p;
            }
        }
    }
}

fn conv_bwd_chunk<T: Scalar>(
    xc: &[T],
    kernel: &[T],
    gyc: &[T],
    gxc: Option<&mut [T]>,
    want_gk: bool,
    spec: &ConvSpec,
) -> Option<Vec<T>> {
    let m = spec.out_h() * spec.out_w();
    let plen = spec.patch_len();
    let oc = spec.out_ch;
    let imgs = xc.len() / spec.in_image_len();
    let cm = imgs * m;
    T::with_scratch((plen + oc) * cm, |scratch| {
        let (patch, cbuf) = scratch.split_at_mut(plen * cm);
        let cbuf = &mut cbuf[..oc * cm];
        gather_oc_major(gyc, cbuf, oc, m, imgs);
        let partial = if want_gk {
            im2col_chunk(xc, patch, spec, imgs);
            let mut gk = vec![T::ZERO; oc * plen];
            if oc == 1 {
                for (g, prow) in gk.iter_mut().zip(patch.chunks(cm)) {
                    let mut s = T::ZERO;
                    for (a, b) in cbuf.iter().zip(prow) {
                        s += *a * *b;
                    }
                    *g = s;
                }
            } else {
                // gk[oc, plen] = cbuf[oc, cm] * patch^T[cm, plen]
                unsafe {
                    T::gemm(
                        oc,
                        cm,
                        plen,
                        T::ONE,
                        cbuf.as_ptr(),
                        cm as isize,
                        1,
                        patch.as_ptr(),
                        1,
                        cm as isize,
                        T::ZERO,
                        gk.as_mut_ptr(),
                        plen as isize,
                        1,
                    );
                }
            }
            Some(gk)
        } else {
            None
        };
        if let Some(gxc) = gxc {
            // gpatch[plen, cm] = kernel^T[plen, oc] * cbuf[oc, cm], written
            // over the patch scratch; the kernel-gradient GEMM above is done
            // with it by now.
            if oc == 1 {
                for (prow, &kv) in patch.chunks_mut(cm).zip(kernel.iter()) {
                    for (o, v) in prow.iter_mut().zip(cbuf.iter()) {
                        *o = kv * *v;
                    }
                }
            } else {
                unsafe {
                    T::gemm(
                        plen,
                        oc,
                        cm,
                        T::ONE,
                        kernel.as_ptr(),
                        1,
                        plen as isize,
                        cbuf.as_ptr(),
                        cm as isize,
                        1,
                        T::ZERO,
                        patch.as_mut_ptr(),
                        cm as isize,
                        1,
                    );
                }
            }
            col2im_add_chunk(patch, gxc, spec, imgs);
        }
        partial
    })
}

// ---------------------------------------------------------------------------
// Nearest-neighbour upsampling
// ---------------------------------------------------------------------------

/// Doubles height and width by pixel replication. x is [n_images*ch, h, w].
fn upsample2x_planes<T: Scalar>(x: &[T], y: &mut [T], h: usize, w: usize) {
    let (h2, w2) = (2 * h, 2 * w);
    for (yp, xp) in y.chunks_mut(h2 * w2).zip(x.chunks(h * w)) {
        for i in 0..h {
            for j in 0..w {
                let v = xp[i * w + j];
                let base = 2 * i * w2 + 2 * j;
                yp[base] = v;
                yp[base + 1] = v;
                yp[base + w2] = v;
                yp[base + w2 + 1] = v;
            }
        }
    }
}

pub fn upsample2x_fwd<T: Scalar>(x: &[T], y: &mut [T], planes: usize, h: usize, w: usize) {
    debug_assert_eq!(x.len(), planes * h * w);
    debug_assert_eq!(y.len(), planes * 4 * h * w);
    let per = (PAR_CHUNK / (4 * h * w)).max(1);
    if planes <= per {
        upsample2x_planes(x, y, h, w);
    } else {
        y.par_chunks_mut(per * 4 * h * w)
            .zip(x.par_chunks(per * h * w))
            .for_each(|(yc, xc)| upsample2x_planes(xc, yc, h, w));
    }
}

fn upsample2x_planes_bwd<T: Scalar>(gy: &[T], gx: &mut [T], h: usize, w: usize) {
    let (h2, w2) = (2 * h, 2 * w);
    for (gxp, gyp) in gx.chunks_mut(h * w).zip(gy.chunks(h2 * w2)) {
        for i in 0..h {
            for j in 0..w {
                let base = 2 * i * w2 + 2 * j;
                gxp[i * w + j] += gyp[base] + gyp[base + 1] + gyp[base + w2] + gyp[base + w2 + 1];
            }
        }
    }
}

pub fn upsample2x_bwd<T: Scalar>(gy: &[T], gx: &mut [T], planes: usize, h: usize, w: usize) {
    let per = (PAR_CHUNK / (4 * h * w)).max(1);
    if planes <= per {
        upsample2x_planes_bwd(gy, gx, h, w);
    } else {
        gx.par_chunks_mut(per * h * w)
            .zip(gy.par_chunks(per * 4 * h * w))
            .for_each(|(gxc, gyc)| upsample2x_planes_bwd(gyc, gxc, h, w));
    }
}

// ---------------------------------------------------------------------------
// Elementwise activations
// ---------------------------------------------------------------------------

/// Fixed task size for parallel elementwise work. Chunk boundaries depend
/// only on the buffer length, never on the worker count, so runs stay
/// bit-identical however many threads rayon uses.
const PAR_CHUNK: usize = 1 << 15;

fn par_map2<T: Scalar>(x: &[T], y: &mut [T], f: impl Fn(&[T], &mut [T]) + Send + Sync) {
    debug_assert_eq!(x.len(), y.len());
    if y.len() <= PAR_CHUNK {
        f(x, y);
    } else {
        y.par_chunks_mut(PAR_CHUNK)
            .zip(x.par_chunks(PAR_CHUNK))
            .for_each(|(yc, xc)| f(xc, yc));
    }
}

fn par_map3<T: Scalar>(a: &[T], b: &[T], y: &mut [T], f: impl Fn(&[T], &[T], &mut [T]) + Send + Sync) {
    debug_assert!(a.len() == y.len() && b.len() == y.len());
    if y.len() <= PAR_CHUNK {
        f(a, b, y);
    } else {
        y.par_chunks_mut(PAR_CHUNK)
            .zip(a.par_chunks(PAR_CHUNK).zip(b.par_chunks(PAR_CHUNK)))
            .for_each(|(yc, (ac, bc))| f(ac, bc, yc));
    }
}

/// tanh clamped a hair inside (-1, 1) so the output interval stays open even
/// after rounding to f32.
pub fn tanh_fwd<T: Scalar>(x: &[T], y: &mut [T]) {
    let hi = T::from_f64(1.0 - UNIT_EPS);
    let lo = -hi;
    par_map2(x, y, |xc, yc| {
        for (o, v) in yc.iter_mut().zip(xc.iter()) {
            *o = clamp(v.tanh(), lo, hi);
        }
    });
}

pub fn tanh_bwd<T: Scalar>(y: &[T], gy: &[T], gx: &mut [T]) {
    par_map3(y, gy, gx, |yc, gyc, gxc| {
        for i in 0..yc.len() {
            gxc[i] += gyc[i] * (T::ONE - yc[i] * yc[i]);
        }
    });
}

/// Numerically stable logistic, clamped inside (0, 1).
pub fn sigmoid_fwd<T: Scalar>(x: &[T], y: &mut [T]) {
    let lo = T::from_f64(SIGMOID_FLOOR);
    let hi = T::from_f64(1.0 - UNIT_EPS);
    par_map2(x, y, |xc, yc| {
        for (o, v) in yc.iter_mut().zip(xc.iter()) {
            let s = if *v >= T::ZERO {
                T::ONE / (T::ONE + (-*v).exp())
            } else {
                let e = v.exp();
                e / (T::ONE + e)
            };
            *o = clamp(s, lo, hi);
        }
    });
}

pub fn sigmoid_bwd<T: Scalar>(y: &[T], gy: &[T], gx: &mut [T]) {
    par_map3(y, gy, gx, |yc, gyc, gxc| {
        for i in 0..yc.len() {
            gxc[i] += gyc[i] * yc[i] * (T::ONE - yc[i]);
        }
    });
}

pub fn leaky_relu_fwd<T: Scalar>(x: &[T], y: &mut [T], slope: T) {
    par_map2(x, y, |xc, yc| {
        for (o, v) in yc.iter_mut().zip(xc.iter()) {
            *o = if *v >= T::ZERO { *v } else { slope * *v };
        }
    });
}

pub fn leaky_relu_bwd<T: Scalar>(x: &[T], gy: &[T], gx: &mut [T], slope: T) {
    par_map3(x, gy, gx, |xc, gyc, gxc| {
        for i in 0..xc.len() {
            gxc[i] += if xc[i] >= T::ZERO { gyc[i] } else { slope * gyc[i] };
        }
    });
}

pub fn sub_fwd<T: Scalar>(a: &[T], b: &[T], y: &mut [T]) {
    for i in 0..y.len() {
        y[i] = a[i] - b[i];
    }
}

/// Guard inside the row-norm square root; keeps the backward pass finite on
/// all-zero rows (identical-image pairs) without visibly shifting the norm.
const NORM_EPS: f64 = 1e-12;

pub fn row_norm_fwd<T: Scalar>(x: &[T], y: &mut [T], cols: usize) {
    let eps = T::from_f64(NORM_EPS);
    for (r, row) in x.chunks(cols).enumerate() {
        let mut s = T::ZERO;
        for v in row {
            s += *v * *v;
        }
        y[r] = (s + eps).sqrt();
    }
}

/// d ||x||/dx = x/||x||; each component has magnitude at most 1.
pub fn row_norm_bwd<T: Scalar>(x: &[T], y: &[T], gy: &[T], gx: &mut [T], cols: usize) {
    for (r, (row, grow)) in x.chunks(cols).zip(gx.chunks_mut(cols)).enumerate() {
        let scale = gy[r] / y[r];
        for (g, v) in grow.iter_mut().zip(row.iter()) {
            *g += scale * *v;
        }
    }
}

pub fn square_fwd<T: Scalar>(x: &[T], y: &mut [T]) {
    for (o, v) in y.iter_mut().zip(x.iter()) {
        *o = *v * *v;
    }
}

pub fn square_bwd<T: Scalar>(x: &[T], gy: &[T], gx: &mut [T]) {
    let two = T::from_f32(2.0);
    for i in 0..x.len() {
        gx[i] += two * x[i] * gy[i];
    }
}

pub fn reduce_sum_fwd<T: Scalar>(x: &[T]) -> T {
    let mut s = T::ZERO;
    for v in x {
        s += *v;
    }
    s
}

// ---------------------------------------------------------------------------
// Binary cross-entropy (mean reduction)
// ---------------------------------------------------------------------------

/// -mean(t*ln(p) + (1-t)*ln(1-p)) with p clamped into [eps, 1-eps].
pub fn bce_fwd<T: Scalar>(pred: &[T], target: &[T]) -> T {
    debug_assert_eq!(pred.len(), target.len());
    let eps = T::from_f64(BCE_EPS);
    let cap = T::ONE - eps;
    let mut s = T::ZERO;
    for i in 0..pred.len() {
        let p = clamp(pred[i], eps, cap);
        let t = target[i];
        s += t * p.ln() + (T::ONE - t) * (T::ONE - p).ln();
    }
    -s / T::from_f32(pred.len() as f32)
}

/// Gradient with respect to the prediction only; the clamp is treated as
/// pass-through so confidently wrong predictions keep a training signal.
pub fn bce_bwd<T: Scalar>(pred: &[T], target: &[T], gloss: T, gpred: &mut [T]) {
    let eps = T::from_f64(BCE_EPS);
    let cap = T::ONE - eps;
    let inv_n = T::ONE / T::from_f32(pred.len() as f32);
    for i in 0..pred.len() {
        let p = clamp(pred[i], eps, cap);
        gpred[i] += gloss * inv_n * (p - target[i]) / (p * (T::ONE - p));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], kernel: &[f64], s: &ConvSpec) -> Vec<f64> {
        let (oh_n, ow_n) = (s.out_h(), s.out_w());
        let mut y = vec![0.0; s.batch * s.out_image_len()];
        for b in 0..s.batch {
            for oc in 0..s.out_ch {
                for oh in 0..oh_n {
                    for ow in 0..ow_n {
                        let mut acc = 0.0;
                        for ic in 0..s.in_ch {
                            for kh in 0..s.ksize {
                                for kw in 0..s.ksize {
                                    let ih = (oh * s.stride + kh) as isize - s.pad as isize;
                                    let iw = (ow * s.stride + kw) as isize - s.pad as isize;
                                    if ih < 0
                                        || iw < 0
                                        || ih >= s.in_h as isize
                                        || iw >= s.in_w as isize
                                    {
                                        continue;
                                    }
                                    let xi = ((b * s.in_ch + ic) * s.in_h + ih as usize) * s.in_w
                                        + iw as usize;
                                    let ki = ((oc * s.in_ch + ic) * s.ksize + kh) * s.ksize + kw;
                                    acc += x[xi] * kernel[ki];
                                }
                            }
                        }
                        y[((b * s.out_ch + oc) * oh_n + oh) * ow_n + ow] = acc;
                    }
                }
            }
        }
        y
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut seed = 7u64;
        // Batches straddle the chunk size on purpose: partial chunk, chunk
        // boundary plus remainder, and an exact multiple. out_ch 1 takes the
        // AXPY path instead of the GEMM.
        let cases = [
            (2usize, 3usize, 4usize, 1usize, 9usize),
            (CONV_CHUNK + 1, 3, 4, 2, 10),
            (3, 2, 1, 1, 7),
            (CONV_CHUNK, 1, 4, 2, 7),
        ];
        for &(batch, in_ch, out_ch, stride, h) in &cases {
            let spec = ConvSpec {
                batch,
                in_ch,
                in_h: h,
                in_w: h,
                out_ch,
                ksize: 5,
                stride,
                pad: 2,
            };
            let x: Vec<f64> = (0..spec.batch * spec.in_image_len())
                .map(|_| lcg(&mut seed))
                .collect();
            let k: Vec<f64> = (0..spec.out_ch * spec.patch_len())
                .map(|_| lcg(&mut seed))
                .collect();
            let mut y = vec![0.0; spec.batch * spec.out_image_len()];
            conv2d_fwd(&x, &k, &mut y, &spec);
            let want = naive_conv(&x, &k, &spec);
            for (a, b) in y.iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-12, "batch {batch} stride {stride}: {a} vs {b}");
            }
        }
    }

    /// The output is linear in both x and the kernel, so <conv(x), u> must
    /// equal <x, gx> and <kernel, gk> when backprop runs with adjoint u.
    #[test]
    fn conv_grads_are_adjoints() {
        let spec = ConvSpec {
            batch: CONV_CHUNK + 3,
            in_ch: 2,
            in_h: 8,
            in_w: 8,
            out_ch: 3,
            ksize: 5,
            stride: 2,
            pad: 2,
        };
        let mut seed = 99u64;
        let x: Vec<f64> = (0..spec.batch * spec.in_image_len())
            .map(|_| lcg(&mut seed))
            .collect();
        let k: Vec<f64> = (0..spec.out_ch * spec.patch_len())
            .map(|_| lcg(&mut seed))
            .collect();
        let u: Vec<f64> = (0..spec.batch * spec.out_image_len())
            .map(|_| lcg(&mut seed))
            .collect();
        let mut y = vec![0.0; u.len()];
        conv2d_fwd(&x, &k, &mut y, &spec);
        let mut gx = vec![0.0; x.len()];
        let mut gk = vec![0.0; k.len()];
        conv2d_bwd(&x, &k, &u, Some(&mut gx), Some(&mut gk), &spec);
        let yu: f64 = y.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
        let xg: f64 = x.iter().zip(gx.iter()).map(|(a, b)| a * b).sum();
        let kg: f64 = k.iter().zip(gk.iter()).map(|(a, b)| a * b).sum();
        assert!((yu - xg).abs() < 1e-10 * yu.abs().max(1.0));
        assert!((yu - kg).abs() < 1e-10 * yu.abs().max(1.0));
    }

    #[test]
    fn matmul_matches_naive() {
        let (m, k, n) = (4, 5, 3);
        let mut seed = 3u64;
        let x: Vec<f64> = (0..m * k).map(|_| lcg(&mut seed)).collect();
        let w: Vec<f64> = (0..k * n).map(|_| lcg(&mut seed)).collect();
        let mut y = vec![0.0; m * n];
        matmul_fwd(&x, &w, &mut y, m, k, n);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| x[i * k + p] * w[p * n + j]).sum();
                assert!((y[i * n + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn upsample_roundtrip_shapes() {
        let x: Vec<f32> = (0..2 * 3 * 3).map(|v| v as f32).collect();
        let mut y = vec![0.0f32; 2 * 6 * 6];
        upsample2x_fwd(&x, &mut y, 2, 3, 3);
        assert_eq!(y[0], x[0]);
        assert_eq!(y[1], x[0]);
        assert_eq!(y[6], x[0]);
        assert_eq!(y[7], x[0]);
        assert_eq!(y[2], x[1]);
        // Each input pixel contributes to exactly four outputs.
        let mut gx = vec![0.0f32; x.len()];
        upsample2x_bwd(&vec![1.0f32; y.len()], &mut gx, 2, 3, 3);
        assert!(gx.iter().all(|&v| v == 4.0));
    }

    #[test]
    fn activations_stay_inside_open_intervals() {
        let x = [-1e9f32, -30.0, 0.0, 30.0, 1e9];
        let mut y = [0.0f32; 5];
        tanh_fwd(&x, &mut y);
        assert!(y.iter().all(|&v| v > -1.0 && v < 1.0));
        sigmoid_fwd(&x, &mut y);
        assert!(y.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn bce_on_known_values() {
        // -[ln(0.8) + ln(0.6)] / 2 with targets (1, 0) and preds (0.8, 0.4).
        let p = [0.8f64, 0.4];
        let t = [1.0f64, 0.0];
        let want = -(0.8f64.ln() + 0.6f64.ln()) / 2.0;
        assert!((bce_fwd(&p, &t) - want).abs() < 1e-12);
    }
}
