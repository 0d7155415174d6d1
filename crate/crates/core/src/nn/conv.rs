//! 2-D convolution and its adjoint (transposed convolution) via im2col + GEMM.

use serde::{Deserialize, Serialize};

use crate::tensor::{gemm, gemm_ldc, BackwardRule, MatRef, Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

/// Geometry of a cross-correlation layer with weights `[out, in, kh, kw]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl Conv2dSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: 1,
            dilation: 1,
            padding: 0,
        }
    }

    /// Padding that preserves spatial size at stride 1.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self::new(in_channels, out_channels, kernel).with_padding((kernel - 1) / 2)
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel.0, self.kernel.1]
    }

    /// Spatial extent covered by one application of the dilated kernel.
    pub fn extent(&self) -> (usize, usize) {
        (
            self.dilation * (self.kernel.0 - 1) + 1,
            self.dilation * (self.kernel.1 - 1) + 1,
        )
    }

    pub fn parameter_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel.0 * self.kernel.1 + self.out_channels
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.stride == 0 || self.dilation == 0 || self.kernel.0 == 0 || self.kernel.1 == 0 {
            return Err(Error::shape("conv2d", format!("degenerate spec {self:?}")));
        }
        let (eh, ew) = self.extent();
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < eh || pw < ew {
            return Err(Error::shape(
                "conv2d",
                format!("input {h}x{w} (padded {ph}x{pw}) smaller than kernel extent {eh}x{ew}"),
            ));
        }
        Ok(((ph - eh) / self.stride + 1, (pw - ew) / self.stride + 1))
    }

    fn geom(&self) -> Geom {
        Geom {
            kh: self.kernel.0,
            kw: self.kernel.1,
            stride: self.stride,
            pad: self.padding,
            dil: self.dilation,
        }
    }
}

/// Geometry of a transposed convolution with weights `[in, out, kh, kw]`.
///
/// It is the adjoint of the [`Conv2dSpec`] that maps `out` channels back to
/// `in` channels with the same kernel, stride, padding and dilation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransposedConv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl TransposedConv2dSpec {
    /// Kernel 2, stride 2, no padding: exact 2x upsampling.
    pub fn upsample2(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (2, 2),
            stride: 2,
            dilation: 1,
            padding: 0,
            output_padding: 0,
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.in_channels, self.out_channels, self.kernel.0, self.kernel.1]
    }

    pub fn parameter_count(&self) -> usize {
        self.in_channels * self.out_channels * self.kernel.0 * self.kernel.1 + self.out_channels
    }

    /// The forward convolution this layer is the adjoint of.
    pub fn adjoint(&self) -> Conv2dSpec {
        Conv2dSpec {
            in_channels: self.out_channels,
            out_channels: self.in_channels,
            kernel: self.kernel,
            stride: self.stride,
            dilation: self.dilation,
            padding: self.padding,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let bad = |detail: String| Error::shape("transposed_conv2d", detail);
        if self.stride == 0 || self.dilation == 0 || h == 0 || w == 0 {
            return Err(bad(format!("degenerate geometry {self:?} for input {h}x{w}")));
        }
        if self.output_padding >= self.stride.max(self.dilation) {
            return Err(bad(format!(
                "output_padding {} must be smaller than stride or dilation",
                self.output_padding
            )));
        }
        let size = |n: usize, k: usize| -> Result<usize> {
            let full = (n - 1) * self.stride + self.dilation * (k - 1) + 1 + self.output_padding;
            full.checked_sub(2 * self.padding)
                .filter(|&s| s > 0)
                .ok_or_else(|| bad(format!("padding {} consumes the whole output", self.padding)))
        };
        let out = (size(h, self.kernel.0)?, size(w, self.kernel.1)?);
        // The adjoint convolution must map the output back to the input size.
        if self.adjoint().output_size(out.0, out.1)? != (h, w) {
            return Err(bad(format!("output {out:?} is not consistent with input {h}x{w}")));
        }
        Ok(out)
    }

    fn geom(&self) -> Geom {
        self.adjoint().geom()
    }
}

#[derive(Clone, Copy, Debug)]
struct Geom {
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    dil: usize,
}

impl Geom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output rows per im2col chunk, sized so the column buffer stays cache resident.
fn chunk_rows(ckk: usize, ho: usize, wo: usize) -> usize {
    const TARGET: usize = 1 << 21;
    (TARGET / (ckk * wo).max(1)).clamp(1, ho.max(1))
}

/// Strided view of columns `off..off + len` of a `[rows, ld]` row-major block.
fn col_block<T>(data: &[T], rows: usize, ld: usize, off: usize, len: usize) -> MatRef<'_, T> {
    MatRef {
        data: &data[off..],
        rows,
        cols: len,
        rs: ld,
        cs: 1,
    }
}

/// Unfold output rows `r0..r1` of one `[c, h, w]` image into
/// `[c·kh·kw, (r1−r0)·wo]` columns.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, g: Geom, wo: usize, r0: usize, r1: usize, cols: &mut [T]) {
    let len = (r1 - r0) * wo;
    for ci in 0..c {
        let img = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * len..(row + 1) * len];
                let col_off = (kj * g.dil) as isize - g.pad as isize;
                for oh in r0..r1 {
                    let ih = (oh * g.stride + ki * g.dil) as isize - g.pad as isize;
                    let out_row = &mut dst[(oh - r0) * wo..(oh - r0 + 1) * wo];
                    if ih < 0 || ih >= h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &img[ih as usize * w..(ih as usize + 1) * w];
                    if g.stride == 1 {
                        // Contiguous interior with zero margins.
                        let lo = (-col_off).clamp(0, wo as isize) as usize;
                        let hi = (w as isize - col_off).clamp(lo as isize, wo as isize) as usize;
                        out_row[..lo].fill(T::zero());
                        let s0 = (lo as isize + col_off) as usize;
                        out_row[lo..hi].copy_from_slice(&src[s0..s0 + hi - lo]);
                        out_row[hi..].fill(T::zero());
                        continue;
                    }
                    for (ow, o) in out_row.iter_mut().enumerate() {
                        let iw = (ow * g.stride) as isize + col_off;
                        *o = if iw >= 0 && iw < w as isize {
                            src[iw as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into an image.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, g: Geom, wo: usize, r0: usize, r1: usize, x: &mut [T]) {
    let len = (r1 - r0) * wo;
    for ci in 0..c {
        let img = &mut x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * len..(row + 1) * len];
                let col_off = (kj * g.dil) as isize - g.pad as isize;
                for oh in r0..r1 {
                    let ih = (oh * g.stride + ki * g.dil) as isize - g.pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let dst = &mut img[ih as usize * w..(ih as usize + 1) * w];
                    let srow = &src[(oh - r0) * wo..(oh - r0 + 1) * wo];
                    if g.stride == 1 {
                        let lo = (-col_off).clamp(0, wo as isize) as usize;
                        let hi = (w as isize - col_off).clamp(lo as isize, wo as isize) as usize;
                        let d0 = (lo as isize + col_off) as usize;
                        for (d, &v) in dst[d0..d0 + hi - lo].iter_mut().zip(&srow[lo..hi]) {
                            *d += v;
                        }
                        continue;
                    }
                    for (ow, &v) in srow.iter().enumerate() {
                        let iw = (ow * g.stride) as isize + col_off;
                        if iw >= 0 && iw < w as isize {
                            dst[iw as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Batched cross-correlation producing `[n, out, ho, wo]`.
fn conv_forward<T: Scalar>(
    xd: &[T],
    [n, c, h, wd]: [usize; 4],
    wd_: &[T],
    spec: Conv2dSpec,
    (ho, wo): (usize, usize),
) -> Vec<T> {
    let g = spec.geom();
    let o = spec.out_channels;
    let ckk = c * g.kh * g.kw;
    let plane = ho * wo;
    let wmat = MatRef::row_major(wd_, o, ckk);
    let mut out = vec![T::zero(); n * o * plane];
    let rows = chunk_rows(ckk, ho, wo);
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { ckk * rows * wo }];
    for s in 0..n {
        let xs = &xd[s * c * h * wd..(s + 1) * c * h * wd];
        let os = &mut out[s * o * plane..(s + 1) * o * plane];
        if g.is_pointwise() {
            gemm(T::one(), wmat, MatRef::row_major(xs, ckk, plane), T::zero(), os);
            continue;
        }
        for r0 in (0..ho).step_by(rows) {
            let r1 = (r0 + rows).min(ho);
            let len = (r1 - r0) * wo;
            im2col(xs, c, h, wd, g, wo, r0, r1, &mut cols);
            let cm = MatRef::row_major(&cols[..ckk * len], ckk, len);
            gemm_ldc(T::one(), wmat, cm, T::zero(), &mut os[r0 * wo..], plane);
        }
    }
    out
}

/// Input gradient of a stride-1 convolution as a convolution of the output
/// gradient with the spatially flipped, channel-swapped kernel.
fn conv_input_grad_stride1<T: Scalar>(
    grad: &[T],
    [n, o, ho, wo]: [usize; 4],
    w: &[T],
    spec: Conv2dSpec,
    (h, wd): (usize, usize),
) -> Option<Vec<T>> {
    let (kh, kw) = spec.kernel;
    let reach = spec.dilation * (kh.max(kw) - 1);
    if spec.stride != 1 || kh != kw || spec.padding > reach {
        return None;
    }
    let c = spec.in_channels;
    let mut flipped = vec![T::zero(); w.len()];
    for oi in 0..o {
        for ci in 0..c {
            for ki in 0..kh {
                for kj in 0..kw {
                    flipped[((ci * o + oi) * kh + kh - 1 - ki) * kw + kw - 1 - kj] =
                        w[((oi * c + ci) * kh + ki) * kw + kj];
                }
            }
        }
    }
    let adj = Conv2dSpec::new(o, c, kh)
        .with_dilation(spec.dilation)
        .with_padding(reach - spec.padding);
    (adj.output_size(ho, wo).ok()? == (h, wd)).then(|| conv_forward(grad, [n, o, ho, wo], &flipped, adj, (h, wd)))
}

/// Transpose of a row-major `[rows, cols]` matrix into `out`, eight source
/// rows at a time so every write is a contiguous run.
fn transpose_into<T: Scalar>(m: &[T], rows: usize, cols: usize, out: &mut [T]) {
    const B: usize = 8;
    let full = rows / B * B;
    for r0 in (0..full).step_by(B) {
        let src: [&[T]; B] = std::array::from_fn(|i| &m[(r0 + i) * cols..(r0 + i + 1) * cols]);
        for (c, dst) in out.chunks_exact_mut(rows).enumerate().take(cols) {
            let dst: &mut [T; B] = (&mut dst[r0..r0 + B]).try_into().expect("block");
            for i in 0..B {
                dst[i] = src[i][c];
            }
        }
    }
    for r in full..rows {
        for c in 0..cols {
            out[c * rows + r] = m[r * cols + c];
        }
    }
}

/// Pixel-major unfolding of output rows `r0..r1` from a channels-last image:
/// row `j` holds the `(ki, kj, ci)` receptive field of output pixel `j`.
#[allow(clippy::too_many_arguments)]
fn im2row<T: Scalar>(hwc: &[T], c: usize, h: usize, w: usize, g: Geom, wo: usize, r0: usize, r1: usize, out: &mut [T]) {
    let kkc = g.kh * g.kw * c;
    for oh in r0..r1 {
        for ow in 0..wo {
            let row = &mut out[((oh - r0) * wo + ow) * kkc..((oh - r0) * wo + ow + 1) * kkc];
            for ki in 0..g.kh {
                let ih = (oh * g.stride + ki * g.dil) as isize - g.pad as isize;
                for kj in 0..g.kw {
                    let iw = (ow * g.stride + kj * g.dil) as isize - g.pad as isize;
                    let dst = &mut row[(ki * g.kw + kj) * c..(ki * g.kw + kj + 1) * c];
                    if ih < 0 || ih >= h as isize || iw < 0 || iw >= w as isize {
                        dst.fill(T::zero());
                    } else {
                        let at = (ih as usize * w + iw as usize) * c;
                        dst.copy_from_slice(&hwc[at..at + c]);
                    }
                }
            }
        }
    }
}

/// Gradient of `Σ other · im2col(img)` with respect to a `[m, c, kh, kw]`
/// kernel, summed over the batch. `other` is `[n, m, ho·wo]`.
fn weight_grad<T: Scalar>(
    img: &[T],
    [n, c, h, w]: [usize; 4],
    g: Geom,
    (ho, wo): (usize, usize),
    other: &[T],
    m: usize,
) -> Vec<T> {
    let kk = g.kh * g.kw;
    let plane = ho * wo;
    let rows = chunk_rows(kk * c, ho, wo);
    let mut hwc = vec![T::zero(); c * h * w];
    let mut unfolded = vec![T::zero(); kk * c * rows * wo];
    // Accumulated in [m, kh, kw, c] order, permuted once at the end.
    let mut acc = vec![T::zero(); m * kk * c];
    let pointwise = g.is_pointwise();
    for s in 0..n {
        let src = &img[s * c * h * w..(s + 1) * c * h * w];
        if !pointwise {
            transpose_into(src, c, h * w, &mut hwc);
        }
        let os = &other[s * m * plane..(s + 1) * m * plane];
        for r0 in (0..ho).step_by(rows) {
            let r1 = (r0 + rows).min(ho);
            let len = (r1 - r0) * wo;
            let b = if pointwise {
                col_block(src, c, plane, r0 * wo, len).t()
            } else {
                im2row(&hwc, c, h, w, g, wo, r0, r1, &mut unfolded);
                MatRef::row_major(&unfolded[..len * kk * c], len, kk * c)
            };
            gemm(T::one(), col_block(os, m, plane, r0 * wo, len), b, T::one(), &mut acc);
        }
    }
    let mut out = vec![T::zero(); acc.len()];
    for mi in 0..m {
        for k in 0..kk {
            for ci in 0..c {
                out[(mi * c + ci) * kk + k] = acc[(mi * kk + k) * c + ci];
            }
        }
    }
    out
}

fn check_rank4(op: &'static str, shape: &[usize]) -> Result<[usize; 4]> {
    match *shape {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::shape(op, format!("expected [N, C, H, W], got {shape:?}"))),
    }
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias.iter().cycle()) {
        for v in chunk {
            *v += b;
        }
    }
}

fn bias_grad<T: Scalar>(grad: &[T], channels: usize, plane: usize) -> Vec<T> {
    let mut gb = vec![T::zero(); channels];
    for (i, chunk) in grad.chunks(plane).enumerate() {
        gb[i % channels] += chunk.iter().fold(T::zero(), |a, &b| a + b);
    }
    gb
}

struct ConvRule {
    x: Var,
    w: Var,
    b: Option<Var>,
    spec: Conv2dSpec,
}

impl<T: Scalar> BackwardRule<T> for ConvRule {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn inputs(&self) -> Vec<Var> {
        let mut v = vec![self.x, self.w];
        v.extend(self.b);
        v
    }

    fn backward(
        &self,
        tape: &Tape<T>,
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let x = tape.value(self.x);
        let w = tape.value(self.w);
        let [n, c, h, wd] = check_rank4("conv2d", x.shape())?;
        let [_, o, ho, wo] = check_rank4("conv2d", output.shape())?;
        let g = self.spec.geom();
        let ckk = c * g.kh * g.kw;
        let plane = ho * wo;
        let pointwise = g.is_pointwise();
        let dw = needs[1].then(|| weight_grad(x.data(), [n, c, h, wd], g, (ho, wo), grad.data(), o));
        let mut dx = None;
        if needs[0] && !pointwise {
            dx = conv_input_grad_stride1(grad.data(), [n, o, ho, wo], w.data(), self.spec, (h, wd));
        }
        if needs[0] && dx.is_none() {
            let wmat = MatRef::row_major(w.data(), o, ckk);
            let mut d = vec![T::zero(); x.numel()];
            let rows = chunk_rows(ckk, ho, wo);
            let mut dcols = vec![T::zero(); if pointwise { 0 } else { ckk * rows * wo }];
            for s in 0..n {
                let gd = &grad.data()[s * o * plane..(s + 1) * o * plane];
                let dxs = &mut d[s * c * h * wd..(s + 1) * c * h * wd];
                if pointwise {
                    gemm(T::one(), wmat.t(), MatRef::row_major(gd, o, plane), T::zero(), dxs);
                    continue;
                }
                for r0 in (0..ho).step_by(rows) {
                    let r1 = (r0 + rows).min(ho);
                    let len = (r1 - r0) * wo;
                    let gs = col_block(gd, o, plane, r0 * wo, len);
                    gemm(T::one(), wmat.t(), gs, T::zero(), &mut dcols[..ckk * len]);
                    col2im(&dcols, c, h, wd, g, wo, r0, r1, dxs);
                }
            }
            dx = Some(d);
        }
        let mut res = vec![
            dx.map(|d| Tensor::new(x.shape().to_vec(), d)).transpose()?,
            dw.map(|d| Tensor::new(w.shape().to_vec(), d)).transpose()?,
        ];
        if let Some(b) = self.b {
            res.push(if needs[2] {
                Some(Tensor::new(tape.shape(b).to_vec(), bias_grad(grad.data(), o, plane))?)
            } else {
                None
            });
        }
        Ok(res)
    }
}

struct TransposedConvRule {
    x: Var,
    w: Var,
    b: Option<Var>,
    spec: TransposedConv2dSpec,
}

impl<T: Scalar> BackwardRule<T> for TransposedConvRule {
    fn name(&self) -> &'static str {
        "transposed_conv2d"
    }

    fn inputs(&self) -> Vec<Var> {
        let mut v = vec![self.x, self.w];
        v.extend(self.b);
        v
    }

    fn backward(
        &self,
        tape: &Tape<T>,
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let x = tape.value(self.x);
        let w = tape.value(self.w);
        let [n, ci, h, wd] = check_rank4("transposed_conv2d", x.shape())?;
        let [_, co, ho, wo] = check_rank4("transposed_conv2d", output.shape())?;
        let g = self.spec.geom();
        let ckk = co * g.kh * g.kw;
        let plane = h * wd;
        let mut dx = needs[0].then(|| vec![T::zero(); x.numel()]);
        // The unfolded operand of the adjoint convolution is the output gradient.
        let dw = needs[1].then(|| weight_grad(grad.data(), [n, co, ho, wo], g, (h, wd), x.data(), ci));
        // Weight viewed as the adjoint convolution's [ci, co·kh·kw] matrix.
        let wmat = MatRef::row_major(w.data(), ci, ckk);
        if let Some(dx) = dx.as_mut() {
            let rows = chunk_rows(ckk, h, wd);
            let mut cols = vec![T::zero(); ckk * rows * wd];
            for s in 0..n {
                let gs = &grad.data()[s * co * ho * wo..(s + 1) * co * ho * wo];
                for r0 in (0..h).step_by(rows) {
                    let r1 = (r0 + rows).min(h);
                    let len = (r1 - r0) * wd;
                    im2col(gs, co, ho, wo, g, wd, r0, r1, &mut cols);
                    let cm = MatRef::row_major(&cols[..ckk * len], ckk, len);
                    let dxs = &mut dx[s * ci * plane + r0 * wd..(s + 1) * ci * plane];
                    gemm_ldc(T::one(), wmat, cm, T::zero(), dxs, plane);
                }
            }
        }
        let mut res = vec![
            dx.map(|d| Tensor::new(x.shape().to_vec(), d)).transpose()?,
            dw.map(|d| Tensor::new(w.shape().to_vec(), d)).transpose()?,
        ];
        if let Some(b) = self.b {
            res.push(if needs[2] {
                Some(Tensor::new(
                    tape.shape(b).to_vec(),
                    bias_grad(grad.data(), co, ho * wo),
                )?)
            } else {
                None
            });
        }
        Ok(res)
    }
}

fn check_bias(op: &'static str, bias: Option<&[usize]>, channels: usize) -> Result<()> {
    match bias {
        Some(s) if s != [channels] => Err(Error::ShapeMismatch {
            op,
            lhs: vec![channels],
            rhs: s.to_vec(),
        }),
        _ => Ok(()),
    }
}

impl<T: Scalar> Tape<T> {
    /// Cross-correlation (no kernel flip) of `x: [N, C, H, W]` with
    /// `w: [out, C, kh, kw]` plus optional bias `[out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let [n, c, h, wd] = check_rank4("conv2d", self.shape(x))?;
        if c != spec.in_channels {
            return Err(Error::ShapeMismatch {
                op: "conv2d channels",
                lhs: vec![spec.in_channels],
                rhs: vec![c],
            });
        }
        if self.shape(w) != spec.weight_shape() {
            return Err(Error::ShapeMismatch {
                op: "conv2d weight",
                lhs: spec.weight_shape().to_vec(),
                rhs: self.shape(w).to_vec(),
            });
        }
        check_bias("conv2d bias", b.map(|b| self.shape(b)), spec.out_channels)?;
        let (ho, wo) = spec.output_size(h, wd)?;
        let o = spec.out_channels;
        let plane = ho * wo;
        let mut out = conv_forward(
            self.value(x).data(),
            [n, c, h, wd],
            self.value(w).data(),
            spec,
            (ho, wo),
        );
        if let Some(b) = b {
            add_bias(&mut out, self.value(b).data(), plane);
        }
        let value = Tensor::new(vec![n, o, ho, wo], out)?;
        Ok(self.push(value, Box::new(ConvRule { x, w, b, spec })))
    }

    /// Transposed convolution of `x: [N, in, H, W]` with `w: [in, out, kh, kw]`.
    pub fn transposed_conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: TransposedConv2dSpec) -> Result<Var> {
        let [n, ci, h, wd] = check_rank4("transposed_conv2d", self.shape(x))?;
        if ci != spec.in_channels {
            return Err(Error::ShapeMismatch {
                op: "transposed_conv2d channels",
                lhs: vec![spec.in_channels],
                rhs: vec![ci],
            });
        }
        if self.shape(w) != spec.weight_shape() {
            return Err(Error::ShapeMismatch {
                op: "transposed_conv2d weight",
                lhs: spec.weight_shape().to_vec(),
                rhs: self.shape(w).to_vec(),
            });
        }
        check_bias("transposed_conv2d bias", b.map(|b| self.shape(b)), spec.out_channels)?;
        let (ho, wo) = spec.output_size(h, wd)?;
        let g = spec.geom();
        let co = spec.out_channels;
        let ckk = co * g.kh * g.kw;
        let plane = h * wd;
        let xd = self.value(x).data();
        let wmat = MatRef::row_major(self.value(w).data(), ci, ckk);
        let rows = chunk_rows(ckk, h, wd);
        let mut cols = vec![T::zero(); ckk * rows * wd];
        let mut out = vec![T::zero(); n * co * ho * wo];
        for s in 0..n {
            let xs = &xd[s * ci * plane..(s + 1) * ci * plane];
            let os = &mut out[s * co * ho * wo..(s + 1) * co * ho * wo];
            for r0 in (0..h).step_by(rows) {
                let r1 = (r0 + rows).min(h);
                let len = (r1 - r0) * wd;
                gemm(
                    T::one(),
                    wmat.t(),
                    col_block(xs, ci, plane, r0 * wd, len),
                    T::zero(),
                    &mut cols[..ckk * len],
                );
                col2im(&cols, co, ho, wo, g, wd, r0, r1, os);
            }
        }
        if let Some(b) = b {
            add_bias(&mut out, self.value(b).data(), ho * wo);
        }
        let value = Tensor::new(vec![n, co, ho, wo], out)?;
        Ok(self.push(value, Box::new(TransposedConvRule { x, w, b, spec })))
    }
}
