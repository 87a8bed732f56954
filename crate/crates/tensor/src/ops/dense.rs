use crate::element::{matmul, Element};
use crate::tensor::{Backward, BackwardCtx, Tensor};

struct LinearOp {
    batch: usize,
    input: usize,
    output: usize,
}
impl<T: Element> Backward<T> for LinearOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let (b, i, o) = (self.batch, self.input, self.output);
        let x = ctx.inputs[0].data();
        let w = ctx.inputs[1].data();
        let gx = ctx.needs(0).then(|| {
            let mut gx = vec![T::zero(); b * i];
            matmul(b, o, i, ctx.grad, false, w, false, &mut gx, T::zero());
            gx
        });
        let gw = ctx.needs(1).then(|| {
            let mut gw = vec![T::zero(); o * i];
            matmul(o, b, i, ctx.grad, true, x, false, &mut gw, T::zero());
            gw
        });
        let mut out = vec![gx, gw];
        if ctx.inputs.len() > 2 {
            out.push(ctx.needs(2).then(|| {
                let mut gb = vec![T::zero(); o];
                for row in ctx.grad.chunks(o) {
                    for (acc, &v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                gb
            }));
        }
        out
    }
}

struct L2NormalizeOp<T> {
    norms: Vec<T>,
    eps: T,
}
impl<T: Element> Backward<T> for L2NormalizeOp<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let d = ctx.output.len() / self.norms.len();
        let mut g = vec![T::zero(); ctx.output.len()];
        for (r, &norm) in self.norms.iter().enumerate() {
            let y = &ctx.output[r * d..(r + 1) * d];
            let gy = &ctx.grad[r * d..(r + 1) * d];
            let dst = &mut g[r * d..(r + 1) * d];
            if norm > self.eps {
                let dot: T = y.iter().zip(gy).map(|(&a, &b)| a * b).sum();
                for k in 0..d {
                    dst[k] = (gy[k] - y[k] * dot) / norm;
                }
            } else {
                for k in 0..d {
                    dst[k] = gy[k] / self.eps;
                }
            }
        }
        vec![Some(g)]
    }
}

struct GroupNormOp<T> {
    normalized: Vec<T>,
    inv_std: Vec<T>,
    groups: usize,
    channels: usize,
}
impl<T: Element> Backward<T> for GroupNormOp<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let shape = ctx.inputs[0].shape();
        let batch = shape[0];
        let spatial: usize = shape[2..].iter().product();
        let per_group = self.channels / self.groups;
        let m = per_group * spatial;
        let gamma = ctx.inputs[1].data();
        let mut gx = vec![T::zero(); ctx.grad.len()];
        let mut ggamma = vec![T::zero(); self.channels];
        let mut gbeta = vec![T::zero(); self.channels];
        let mf = T::from_usize(m).expect("fits");
        for b in 0..batch {
            for grp in 0..self.groups {
                let base = (b * self.channels + grp * per_group) * spatial;
                let mut mean_g = T::zero();
                let mut mean_gx = T::zero();
                for c in 0..per_group {
                    let ch = grp * per_group + c;
                    for s in 0..spatial {
                        let idx = base + c * spatial + s;
                        let g = ctx.grad[idx];
                        let xh = self.normalized[idx];
                        ggamma[ch] += g * xh;
                        gbeta[ch] += g;
                        let gxh = g * gamma[ch];
                        mean_g += gxh;
                        mean_gx += gxh * xh;
                    }
                }
                mean_g = mean_g / mf;
                mean_gx = mean_gx / mf;
                let inv = self.inv_std[b * self.groups + grp];
                for c in 0..per_group {
                    let ch = grp * per_group + c;
                    for s in 0..spatial {
                        let idx = base + c * spatial + s;
                        let gxh = ctx.grad[idx] * gamma[ch];
                        gx[idx] = inv * (gxh - mean_g - self.normalized[idx] * mean_gx);
                    }
                }
            }
        }
        vec![
            ctx.needs(0).then_some(gx),
            ctx.needs(1).then_some(ggamma),
            ctx.needs(2).then_some(gbeta),
        ]
    }
}

struct ComplexMulOp;
impl<T: Element> Backward<T> for ComplexMulOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let x = ctx.inputs[0].data();
        let m = ctx.inputs[1].data();
        let shape = ctx.inputs[0].shape();
        let batch = shape[0];
        let plane: usize = shape[2..].iter().product();
        let mut gx = ctx.needs(0).then(|| vec![T::zero(); x.len()]);
        let mut gm = ctx.needs(1).then(|| vec![T::zero(); m.len()]);
        for b in 0..batch {
            let re = b * 2 * plane;
            let im = re + plane;
            for k in 0..plane {
                let (gr, gi) = (ctx.grad[re + k], ctx.grad[im + k]);
                if let Some(gx) = gx.as_mut() {
                    let (mr, mi) = (m[re + k], m[im + k]);
                    gx[re + k] = gr * mr + gi * mi;
                    gx[im + k] = gi * mr - gr * mi;
                }
                if let Some(gm) = gm.as_mut() {
                    let (xr, xi) = (x[re + k], x[im + k]);
                    gm[re + k] = gr * xr + gi * xi;
                    gm[im + k] = gi * xr - gr * xi;
                }
            }
        }
        vec![gx, gm]
    }
}

impl<T: Element> Tensor<T> {
    /// `(B, I) · (O, I)ᵀ + bias`.
    pub fn linear(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Tensor<T> {
        assert_eq!(self.dims(), 2, "linear input must be (B, I)");
        assert_eq!(weight.dims(), 2, "linear weight must be (O, I)");
        let (b, i) = (self.dim(0), self.dim(1));
        let o = weight.dim(0);
        assert_eq!(weight.dim(1), i, "linear feature mismatch");
        let mut out = vec![T::zero(); b * o];
        matmul(b, i, o, self.data(), false, weight.data(), true, &mut out, T::zero());
        let mut inputs = vec![self.clone(), weight.clone()];
        if let Some(bias) = bias {
            assert_eq!(bias.numel(), o, "linear bias size");
            for row in out.chunks_mut(o) {
                for (v, &bv) in row.iter_mut().zip(bias.data()) {
                    *v += bv;
                }
            }
            inputs.push(bias.clone());
        }
        Tensor::from_op(
            out,
            vec![b, o],
            inputs,
            LinearOp {
                batch: b,
                input: i,
                output: o,
            },
        )
    }

    /// Divides each row of a `(B, D)` tensor by `max(‖row‖₂, eps)`.
    pub fn l2_normalize(&self, eps: T) -> Tensor<T> {
        assert_eq!(self.dims(), 2, "l2_normalize expects (B, D)");
        let d = self.dim(1);
        let mut norms = Vec::with_capacity(self.dim(0));
        let mut out = Vec::with_capacity(self.numel());
        for row in self.data().chunks(d) {
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            let denom = if norm > eps { norm } else { eps };
            out.extend(row.iter().map(|&v| v / denom));
            norms.push(norm);
        }
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            L2NormalizeOp { norms, eps },
        )
    }

    /// Group normalization over `(B, C, ...)` with per-channel affine terms.
    pub fn group_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, groups: usize, eps: T) -> Tensor<T> {
        let shape = self.shape();
        assert!(shape.len() >= 2, "group_norm expects (B, C, ...)");
        let (batch, channels) = (shape[0], shape[1]);
        assert!(groups > 0 && channels % groups == 0, "groups must divide channels");
        assert_eq!(gamma.numel(), channels);
        assert_eq!(beta.numel(), channels);
        let spatial: usize = shape[2..].iter().product();
        let per_group = channels / groups;
        let m = per_group * spatial;
        let mf = T::from_usize(m).expect("fits");
        let x = self.data();
        let mut normalized = vec![T::zero(); x.len()];
        let mut inv_std = Vec::with_capacity(batch * groups);
        let mut out = vec![T::zero(); x.len()];
        for b in 0..batch {
            for grp in 0..groups {
                let base = (b * channels + grp * per_group) * spatial;
                let seg = &x[base..base + m];
                let mean = seg.iter().copied().sum::<T>() / mf;
                let var = seg.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / mf;
                let inv = T::one() / (var + eps).sqrt();
                inv_std.push(inv);
                for c in 0..per_group {
                    let ch = grp * per_group + c;
                    for s in 0..spatial {
                        let idx = base + c * spatial + s;
                        let xh = (x[idx] - mean) * inv;
                        normalized[idx] = xh;
                        out[idx] = xh * gamma.data()[ch] + beta.data()[ch];
                    }
                }
            }
        }
        Tensor::from_op(
            out,
            shape.to_vec(),
            vec![self.clone(), gamma.clone(), beta.clone()],
            GroupNormOp {
                normalized,
                inv_std,
                groups,
                channels,
            },
        )
    }

    /// Complex product of two `(B, 2, ...)` tensors whose channel pair holds
    /// (real, imaginary) parts.
    pub fn complex_mul(&self, other: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.shape(), other.shape(), "complex_mul shape mismatch");
        assert!(self.dims() >= 2 && self.dim(1) == 2, "complex_mul expects (B, 2, ...)");
        let batch = self.dim(0);
        let plane: usize = self.shape()[2..].iter().product();
        let (x, m) = (self.data(), other.data());
        let mut out = vec![T::zero(); x.len()];
        for b in 0..batch {
            let re = b * 2 * plane;
            let im = re + plane;
            for k in 0..plane {
                let (xr, xi, mr, mi) = (x[re + k], x[im + k], m[re + k], m[im + k]);
                out[re + k] = xr * mr - xi * mi;
                out[im + k] = xr * mi + xi * mr;
            }
        }
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            ComplexMulOp,
        )
    }
}
