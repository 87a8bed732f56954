use crate::element::Element;
use crate::tensor::{numel, Backward, BackwardCtx, Tensor};

/// Leading axes collapsed into planes over the two trailing axes.
fn planes(shape: &[usize]) -> (usize, usize, usize) {
    assert!(shape.len() >= 2, "pooling needs at least 2 axes");
    let n = shape.len();
    (shape[..n - 2].iter().product(), shape[n - 2], shape[n - 1])
}

fn with_plane(shape: &[usize], h: usize, w: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    let n = s.len();
    s[n - 2] = h;
    s[n - 1] = w;
    s
}

struct AvgPoolOp {
    kernel: [usize; 2],
}
impl<T: Element> Backward<T> for AvgPoolOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let src = ctx.inputs[0].shape();
        let (np, h, w) = planes(src);
        let [kh, kw] = self.kernel;
        let (oh, ow) = (h / kh, w / kw);
        let norm = T::one() / T::from_usize(kh * kw).expect("fits");
        let mut g = vec![T::zero(); numel(src)];
        for p in 0..np {
            for y in 0..oh {
                for x in 0..ow {
                    let v = ctx.grad[(p * oh + y) * ow + x] * norm;
                    for a in 0..kh {
                        for b in 0..kw {
                            g[(p * h + y * kh + a) * w + x * kw + b] = v;
                        }
                    }
                }
            }
        }
        vec![Some(g)]
    }
}

struct MaxPoolOp {
    argmax: Vec<usize>,
}
impl<T: Element> Backward<T> for MaxPoolOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let mut g = vec![T::zero(); ctx.inputs[0].numel()];
        for (&src, &gv) in self.argmax.iter().zip(ctx.grad) {
            g[src] += gv;
        }
        vec![Some(g)]
    }
}

struct UpsampleOp {
    factor: [usize; 2],
}
impl<T: Element> Backward<T> for UpsampleOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let src = ctx.inputs[0].shape();
        let (np, h, w) = planes(src);
        let [fh, fw] = self.factor;
        let (oh, ow) = (h * fh, w * fw);
        let mut g = vec![T::zero(); numel(src)];
        for p in 0..np {
            for y in 0..oh {
                for x in 0..ow {
                    g[(p * h + y / fh) * w + x / fw] += ctx.grad[(p * oh + y) * ow + x];
                }
            }
        }
        vec![Some(g)]
    }
}

impl<T: Element> Tensor<T> {
    /// Non-overlapping average pooling over the two trailing axes; trailing
    /// remainders are dropped.
    pub fn avg_pool2d(&self, kernel: [usize; 2]) -> Tensor<T> {
        let (np, h, w) = planes(self.shape());
        let [kh, kw] = kernel;
        let (oh, ow) = (h / kh, w / kw);
        assert!(oh > 0 && ow > 0, "avg_pool2d kernel {kernel:?} exceeds {h}x{w}");
        let norm = T::one() / T::from_usize(kh * kw).expect("fits");
        let x = self.data();
        let mut out = vec![T::zero(); np * oh * ow];
        for p in 0..np {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = T::zero();
                    for a in 0..kh {
                        let row = (p * h + y * kh + a) * w + xo * kw;
                        for b in 0..kw {
                            acc += x[row + b];
                        }
                    }
                    out[(p * oh + y) * ow + xo] = acc * norm;
                }
            }
        }
        Tensor::from_op(
            out,
            with_plane(self.shape(), oh, ow),
            vec![self.clone()],
            AvgPoolOp { kernel },
        )
    }

    /// Max pooling over the two trailing axes with implicit `-inf` padding.
    pub fn max_pool2d(&self, kernel: [usize; 2], stride: [usize; 2], pad: [usize; 2]) -> Tensor<T> {
        let (np, h, w) = planes(self.shape());
        let oh = (h + 2 * pad[0] - kernel[0]) / stride[0] + 1;
        let ow = (w + 2 * pad[1] - kernel[1]) / stride[1] + 1;
        let x = self.data();
        let mut out = Vec::with_capacity(np * oh * ow);
        let mut argmax = Vec::with_capacity(np * oh * ow);
        for p in 0..np {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_idx = usize::MAX;
                    for a in 0..kernel[0] {
                        let yi = (y * stride[0] + a) as isize - pad[0] as isize;
                        if yi < 0 || yi as usize >= h {
                            continue;
                        }
                        for b in 0..kernel[1] {
                            let xi = (xo * stride[1] + b) as isize - pad[1] as isize;
                            if xi < 0 || xi as usize >= w {
                                continue;
                            }
                            let idx = (p * h + yi as usize) * w + xi as usize;
                            // first maximum wins on ties
                            if x[idx] > best || best_idx == usize::MAX {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
        Tensor::from_op(
            out,
            with_plane(self.shape(), oh, ow),
            vec![self.clone()],
            MaxPoolOp { argmax },
        )
    }

    /// Nearest-neighbour upsampling of the two trailing axes.
    pub fn upsample_nearest2d(&self, factor: [usize; 2]) -> Tensor<T> {
        let (np, h, w) = planes(self.shape());
        let [fh, fw] = factor;
        let (oh, ow) = (h * fh, w * fw);
        let x = self.data();
        let mut out = Vec::with_capacity(np * oh * ow);
        for p in 0..np {
            for y in 0..oh {
                let row = (p * h + y / fh) * w;
                for xo in 0..ow {
                    out.push(x[row + xo / fw]);
                }
            }
        }
        Tensor::from_op(
            out,
            with_plane(self.shape(), oh, ow),
            vec![self.clone()],
            UpsampleOp { factor },
        )
    }
}
