use crate::element::{matmul, Element};
use crate::tensor::{Backward, BackwardCtx, Tensor};

/// Geometry of a (depth, height, width) convolution over one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub out: [usize; 3],
}

impl ConvGeom {
    pub fn new(
        channels: usize,
        input: [usize; 3],
        kernel: [usize; 3],
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Self {
        let mut out = [0; 3];
        for d in 0..3 {
            assert!(stride[d] > 0, "stride must be positive");
            let padded = input[d] + 2 * pad[d];
            assert!(
                padded >= kernel[d],
                "kernel {:?} larger than padded input {:?}",
                kernel,
                input
            );
            out[d] = (padded - kernel[d]) / stride[d] + 1;
        }
        ConvGeom {
            channels,
            input,
            kernel,
            stride,
            pad,
            out,
        }
    }

    /// Rows of the column matrix.
    pub fn k_len(&self) -> usize {
        self.channels * self.kernel.iter().product::<usize>()
    }

    /// Columns of the column matrix (output positions).
    pub fn p_len(&self) -> usize {
        self.out.iter().product()
    }

    pub fn in_len(&self) -> usize {
        self.channels * self.input.iter().product::<usize>()
    }

    /// Visits every (column-matrix index, input index) pair that lands inside
    /// the input; padding taps are skipped.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let [id, ih, iw] = self.input;
        let [kd, kh, kw] = self.kernel;
        let [sd, sh, sw] = self.stride;
        let [pd, ph, pw] = self.pad;
        let [od, oh, ow] = self.out;
        let p_len = self.p_len();
        for c in 0..self.channels {
            for a in 0..kd {
                for b in 0..kh {
                    for e in 0..kw {
                        let row = ((c * kd + a) * kh + b) * kw + e;
                        let row_base = row * p_len;
                        // valid output columns for this width tap
                        let lo = pw.saturating_sub(e).div_ceil(sw);
                        let hi = if iw + pw > e {
                            ((iw + pw - e - 1) / sw + 1).min(ow)
                        } else {
                            0
                        };
                        for z in 0..od {
                            let zi = (z * sd + a) as isize - pd as isize;
                            if zi < 0 || zi as usize >= id {
                                continue;
                            }
                            for y in 0..oh {
                                let yi = (y * sh + b) as isize - ph as isize;
                                if yi < 0 || yi as usize >= ih {
                                    continue;
                                }
                                let in_base = ((c * id + zi as usize) * ih + yi as usize) * iw;
                                let col_base = row_base + (z * oh + y) * ow;
                                for x in lo..hi {
                                    let xi = x * sw + e - pw;
                                    f(col_base + x, in_base + xi);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn im2col<T: Element>(&self, input: &[T], col: &mut [T]) {
        debug_assert_eq!(input.len(), self.in_len());
        debug_assert_eq!(col.len(), self.k_len() * self.p_len());
        col.fill(T::zero());
        self.for_each_tap(|ci, ii| col[ci] = input[ii]);
    }

    pub fn col2im_add<T: Element>(&self, col: &[T], input: &mut [T]) {
        debug_assert_eq!(input.len(), self.in_len());
        self.for_each_tap(|ci, ii| input[ii] += col[ci]);
    }
}

struct ConvOp {
    geom: ConvGeom,
    batch: usize,
    out_channels: usize,
}

impl<T: Element> Backward<T> for ConvOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let g = &self.geom;
        let (k, p, o) = (g.k_len(), g.p_len(), self.out_channels);
        let x = ctx.inputs[0].data();
        let w = ctx.inputs[1].data();
        let has_bias = ctx.inputs.len() > 2;
        let need_x = ctx.needs(0);
        let need_w = ctx.needs(1);
        let need_b = has_bias && ctx.needs(2);
        let mut gx = need_x.then(|| vec![T::zero(); x.len()]);
        let mut gw = need_w.then(|| vec![T::zero(); w.len()]);
        let mut gb = need_b.then(|| vec![T::zero(); o]);
        let mut col = vec![T::zero(); k * p];
        for n in 0..self.batch {
            let gout = &ctx.grad[n * o * p..(n + 1) * o * p];
            if let Some(gw) = gw.as_mut() {
                g.im2col(&x[n * g.in_len()..(n + 1) * g.in_len()], &mut col);
                matmul(o, p, k, gout, false, &col, true, gw, T::one());
            }
            if let Some(gb) = gb.as_mut() {
                for (oc, acc) in gb.iter_mut().enumerate() {
                    *acc += gout[oc * p..(oc + 1) * p].iter().copied().sum();
                }
            }
            if let Some(gx) = gx.as_mut() {
                matmul(k, o, p, w, true, gout, false, &mut col, T::zero());
                g.col2im_add(&col, &mut gx[n * g.in_len()..(n + 1) * g.in_len()]);
            }
        }
        let mut out = vec![gx, gw];
        if has_bias {
            out.push(gb);
        }
        out
    }
}

struct ConvTransposeOp {
    /// Geometry of the adjoint convolution (output grid -> input grid).
    geom: ConvGeom,
    batch: usize,
    in_channels: usize,
}

impl<T: Element> Backward<T> for ConvTransposeOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let g = &self.geom;
        let (k, p, ci) = (g.k_len(), g.p_len(), self.in_channels);
        let x = ctx.inputs[0].data();
        let w = ctx.inputs[1].data();
        let has_bias = ctx.inputs.len() > 2;
        let need_x = ctx.needs(0);
        let need_w = ctx.needs(1);
        let need_b = has_bias && ctx.needs(2);
        let mut gx = need_x.then(|| vec![T::zero(); x.len()]);
        let mut gw = need_w.then(|| vec![T::zero(); w.len()]);
        let mut gb = need_b.then(|| vec![T::zero(); g.channels]);
        let mut gcol = vec![T::zero(); k * p];
        let out_len = g.in_len();
        let plane: usize = g.input.iter().product();
        for n in 0..self.batch {
            let gout = &ctx.grad[n * out_len..(n + 1) * out_len];
            if let Some(gb) = gb.as_mut() {
                for (oc, acc) in gb.iter_mut().enumerate() {
                    *acc += gout[oc * plane..(oc + 1) * plane].iter().copied().sum();
                }
            }
            if !need_x && !need_w {
                continue;
            }
            g.im2col(gout, &mut gcol);
            if let Some(gx) = gx.as_mut() {
                matmul(ci, k, p, w, false, &gcol, false, &mut gx[n * ci * p..(n + 1) * ci * p], T::zero());
            }
            if let Some(gw) = gw.as_mut() {
                matmul(ci, p, k, &x[n * ci * p..(n + 1) * ci * p], false, &gcol, true, gw, T::one());
            }
        }
        let mut out = vec![gx, gw];
        if has_bias {
            out.push(gb);
        }
        out
    }
}

impl<T: Element> Tensor<T> {
    fn conv_impl(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        geom: ConvGeom,
        batch: usize,
        out_channels: usize,
        out_shape: Vec<usize>,
    ) -> Tensor<T> {
        let (k, p) = (geom.k_len(), geom.p_len());
        assert_eq!(weight.numel(), out_channels * k, "conv weight size");
        if let Some(b) = bias {
            assert_eq!(b.numel(), out_channels, "conv bias size");
        }
        let mut out = vec![T::zero(); batch * out_channels * p];
        let mut col = vec![T::zero(); k * p];
        let x = self.data();
        for n in 0..batch {
            geom.im2col(&x[n * geom.in_len()..(n + 1) * geom.in_len()], &mut col);
            let dst = &mut out[n * out_channels * p..(n + 1) * out_channels * p];
            matmul(out_channels, k, p, weight.data(), false, &col, false, dst, T::zero());
            if let Some(b) = bias {
                for (oc, &bv) in b.data().iter().enumerate() {
                    for v in &mut dst[oc * p..(oc + 1) * p] {
                        *v += bv;
                    }
                }
            }
        }
        let mut inputs = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            inputs.push(b.clone());
        }
        Tensor::from_op(
            out,
            out_shape,
            inputs,
            ConvOp {
                geom,
                batch,
                out_channels,
            },
        )
    }

    /// 3-D convolution. `self`: `(B, C, D, H, W)`, `weight`: `(O, C, kd, kh, kw)`.
    pub fn conv3d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Tensor<T> {
        let s = self.shape();
        let ws = weight.shape();
        assert_eq!(s.len(), 5, "conv3d input must be (B, C, D, H, W), got {s:?}");
        assert_eq!(ws.len(), 5, "conv3d weight must be 5-D, got {ws:?}");
        assert_eq!(ws[1], s[1], "conv3d channel mismatch {s:?} vs weight {ws:?}");
        let geom = ConvGeom::new(s[1], [s[2], s[3], s[4]], [ws[2], ws[3], ws[4]], stride, pad);
        let out_shape = vec![s[0], ws[0], geom.out[0], geom.out[1], geom.out[2]];
        self.conv_impl(weight, bias, geom, s[0], ws[0], out_shape)
    }

    /// 2-D convolution. `self`: `(B, C, H, W)`, `weight`: `(O, C, kh, kw)`.
    pub fn conv2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: [usize; 2],
        pad: [usize; 2],
    ) -> Tensor<T> {
        let s = self.shape();
        let ws = weight.shape();
        assert_eq!(s.len(), 4, "conv2d input must be (B, C, H, W), got {s:?}");
        assert_eq!(ws.len(), 4, "conv2d weight must be 4-D, got {ws:?}");
        assert_eq!(ws[1], s[1], "conv2d channel mismatch {s:?} vs weight {ws:?}");
        let geom = ConvGeom::new(
            s[1],
            [1, s[2], s[3]],
            [1, ws[2], ws[3]],
            [1, stride[0], stride[1]],
            [0, pad[0], pad[1]],
        );
        let out_shape = vec![s[0], ws[0], geom.out[1], geom.out[2]];
        self.conv_impl(weight, bias, geom, s[0], ws[0], out_shape)
    }

    /// 1-D convolution. `self`: `(B, C, L)`, `weight`: `(O, C, k)`.
    pub fn conv1d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        pad: usize,
    ) -> Tensor<T> {
        let s = self.shape();
        let ws = weight.shape();
        assert_eq!(s.len(), 3, "conv1d input must be (B, C, L), got {s:?}");
        assert_eq!(ws.len(), 3, "conv1d weight must be 3-D, got {ws:?}");
        assert_eq!(ws[1], s[1], "conv1d channel mismatch {s:?} vs weight {ws:?}");
        let geom = ConvGeom::new(s[1], [1, 1, s[2]], [1, 1, ws[2]], [1, 1, stride], [0, 0, pad]);
        let out_shape = vec![s[0], ws[0], geom.out[2]];
        self.conv_impl(weight, bias, geom, s[0], ws[0], out_shape)
    }

    /// Transposed 2-D convolution. `self`: `(B, Cin, H, W)`,
    /// `weight`: `(Cin, Cout, kh, kw)`. Output extent per axis is
    /// `(in - 1) * stride - 2 * pad + k + output_pad`.
    pub fn conv_transpose2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: [usize; 2],
        pad: [usize; 2],
        output_pad: [usize; 2],
    ) -> Tensor<T> {
        let s = self.shape();
        let ws = weight.shape();
        assert_eq!(s.len(), 4, "conv_transpose2d input must be 4-D, got {s:?}");
        assert_eq!(ws.len(), 4, "conv_transpose2d weight must be 4-D, got {ws:?}");
        assert_eq!(ws[0], s[1], "conv_transpose2d channel mismatch");
        let (batch, cin, h, w) = (s[0], s[1], s[2], s[3]);
        let cout = ws[1];
        for d in 0..2 {
            assert!(output_pad[d] < stride[d], "output padding must be below stride");
        }
        let ho = ((h - 1) * stride[0] + ws[2] + output_pad[0])
            .checked_sub(2 * pad[0])
            .expect("conv_transpose2d output extent");
        let wo = ((w - 1) * stride[1] + ws[3] + output_pad[1])
            .checked_sub(2 * pad[1])
            .expect("conv_transpose2d output extent");
        let geom = ConvGeom::new(
            cout,
            [1, ho, wo],
            [1, ws[2], ws[3]],
            [1, stride[0], stride[1]],
            [0, pad[0], pad[1]],
        );
        assert_eq!(geom.out, [1, h, w], "conv_transpose2d adjoint geometry");
        if let Some(b) = bias {
            assert_eq!(b.numel(), cout, "conv_transpose2d bias size");
        }
        let (k, p) = (geom.k_len(), geom.p_len());
        let plane = ho * wo;
        let mut out = vec![T::zero(); batch * cout * plane];
        let mut col = vec![T::zero(); k * p];
        for n in 0..batch {
            let xb = &self.data()[n * cin * p..(n + 1) * cin * p];
            matmul(k, cin, p, weight.data(), true, xb, false, &mut col, T::zero());
            let dst = &mut out[n * cout * plane..(n + 1) * cout * plane];
            geom.col2im_add(&col, dst);
            if let Some(b) = bias {
                for (oc, &bv) in b.data().iter().enumerate() {
                    for v in &mut dst[oc * plane..(oc + 1) * plane] {
                        *v += bv;
                    }
                }
            }
        }
        let mut inputs = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            inputs.push(b.clone());
        }
        Tensor::from_op(
            out,
            vec![batch, cout, ho, wo],
            inputs,
            ConvTransposeOp {
                geom,
                batch,
                in_channels: cin,
            },
        )
    }
}
