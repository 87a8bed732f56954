use crate::element::Element;
use crate::tensor::{numel, Backward, BackwardCtx, Tensor};

/// Splits `shape` around `axis` into (outer, axis length, inner).
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

struct ReshapeOp;
impl<T: Element> Backward<T> for ReshapeOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        vec![Some(ctx.grad.to_vec())]
    }
}

struct ConcatOp {
    axis: usize,
    sizes: Vec<usize>,
}
impl<T: Element> Backward<T> for ConcatOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let first = ctx.inputs[0].shape();
        let (outer, _, inner) = split_at_axis(first, self.axis);
        let total: usize = self.sizes.iter().sum();
        let mut offset = 0;
        let mut out = Vec::with_capacity(self.sizes.len());
        for (i, &len) in self.sizes.iter().enumerate() {
            if !ctx.needs(i) {
                out.push(None);
                offset += len;
                continue;
            }
            let mut g = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let start = (o * total + offset) * inner;
                g.extend_from_slice(&ctx.grad[start..start + len * inner]);
            }
            out.push(Some(g));
            offset += len;
        }
        out
    }
}

struct NarrowOp {
    axis: usize,
    start: usize,
}
impl<T: Element> Backward<T> for NarrowOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let src = ctx.inputs[0].shape();
        let (outer, full, inner) = split_at_axis(src, self.axis);
        let len = ctx.grad.len() / (outer * inner).max(1);
        let mut g = vec![T::zero(); numel(src)];
        for o in 0..outer {
            let dst = (o * full + self.start) * inner;
            let srcp = o * len * inner;
            g[dst..dst + len * inner].copy_from_slice(&ctx.grad[srcp..srcp + len * inner]);
        }
        vec![Some(g)]
    }
}

struct RepeatOp {
    axis: usize,
    times: usize,
}
impl<T: Element> Backward<T> for RepeatOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let src = ctx.inputs[0].shape();
        let (outer, _, inner) = split_at_axis(src, self.axis);
        let mut g = vec![T::zero(); numel(src)];
        for o in 0..outer {
            for r in 0..self.times {
                let from = (o * self.times + r) * inner;
                for i in 0..inner {
                    g[o * inner + i] += ctx.grad[from + i];
                }
            }
        }
        vec![Some(g)]
    }
}

struct PermuteOp {
    perm: Vec<usize>,
}
impl<T: Element> Backward<T> for PermuteOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let src = ctx.inputs[0].shape();
        let mut g = vec![T::zero(); numel(src)];
        permute_into(src, &self.perm, ctx.grad, &mut g, true);
        vec![Some(g)]
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

/// Moves data between `src`-shaped storage and its permuted layout. With
/// `reverse`, `a` is in permuted layout and is scattered back into `b`.
fn permute_into<T: Element>(src: &[usize], perm: &[usize], a: &[T], b: &mut [T], reverse: bool) {
    let src_strides = strides(src);
    let out_shape: Vec<usize> = perm.iter().map(|&p| src[p]).collect();
    let n = out_shape.len();
    let mut idx = vec![0usize; n];
    for o in 0..numel(&out_shape) {
        let s: usize = (0..n).map(|d| idx[d] * src_strides[perm[d]]).sum();
        if reverse {
            b[s] = a[o];
        } else {
            b[o] = a[s];
        }
        for d in (0..n).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

struct SelectOp {
    indices: Vec<usize>,
}
impl<T: Element> Backward<T> for SelectOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let src = ctx.inputs[0].shape();
        let row: usize = src[1..].iter().product();
        let mut g = vec![T::zero(); numel(src)];
        for (k, &idx) in self.indices.iter().enumerate() {
            let dst = &mut g[idx * row..(idx + 1) * row];
            for (d, &v) in dst.iter_mut().zip(&ctx.grad[k * row..(k + 1) * row]) {
                *d += v;
            }
        }
        vec![Some(g)]
    }
}

impl<T: Element> Tensor<T> {
    pub fn reshape(&self, shape: &[usize]) -> Tensor<T> {
        assert_eq!(
            numel(shape),
            self.numel(),
            "reshape {:?} -> {:?}",
            self.shape(),
            shape
        );
        Tensor::from_op(self.to_vec(), shape.to_vec(), vec![self.clone()], ReshapeOp)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Tensor<T> {
        assert!(!parts.is_empty(), "concat of nothing");
        let first = parts[0].shape();
        for p in parts {
            assert_eq!(p.dims(), first.len(), "concat rank mismatch");
            for (d, (&a, &b)) in p.shape().iter().zip(first).enumerate() {
                assert!(
                    d == axis || a == b,
                    "concat: extent mismatch on axis {d}: {:?} vs {:?}",
                    p.shape(),
                    first
                );
            }
        }
        let sizes: Vec<usize> = parts.iter().map(|p| p.dim(axis)).collect();
        let total: usize = sizes.iter().sum();
        let (outer, _, inner) = split_at_axis(first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &len) in parts.iter().zip(&sizes) {
                let start = o * len * inner;
                data.extend_from_slice(&p.data()[start..start + len * inner]);
            }
        }
        let mut shape = first.to_vec();
        shape[axis] = total;
        Tensor::from_op(data, shape, parts.to_vec(), ConcatOp { axis, sizes })
    }

    /// Sub-range `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor<T> {
        let (outer, full, inner) = split_at_axis(self.shape(), axis);
        assert!(
            start + len <= full,
            "narrow {start}+{len} beyond extent {full}"
        );
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * full + start) * inner;
            data.extend_from_slice(&self.data()[s..s + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Tensor::from_op(data, shape, vec![self.clone()], NarrowOp { axis, start })
    }

    /// Tiles a unit-extent `axis` `times` times.
    pub fn repeat_axis(&self, axis: usize, times: usize) -> Tensor<T> {
        assert_eq!(self.dim(axis), 1, "repeat_axis needs a unit axis");
        let (outer, _, inner) = split_at_axis(self.shape(), axis);
        let mut data = Vec::with_capacity(outer * times * inner);
        for o in 0..outer {
            let row = &self.data()[o * inner..(o + 1) * inner];
            for _ in 0..times {
                data.extend_from_slice(row);
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = times;
        Tensor::from_op(data, shape, vec![self.clone()], RepeatOp { axis, times })
    }

    /// Reorders axes: output axis `d` is input axis `perm[d]`.
    pub fn permute(&self, perm: &[usize]) -> Tensor<T> {
        let src = self.shape();
        assert_eq!(perm.len(), src.len(), "permute rank mismatch");
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            assert!(p < perm.len() && !seen[p], "invalid permutation {perm:?}");
            seen[p] = true;
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| src[p]).collect();
        let mut data = vec![T::zero(); self.numel()];
        permute_into(src, perm, self.data(), &mut data, false);
        Tensor::from_op(
            data,
            out_shape,
            vec![self.clone()],
            PermuteOp {
                perm: perm.to_vec(),
            },
        )
    }

    /// Gathers entries of the leading axis; indices may repeat.
    pub fn select(&self, indices: &[usize]) -> Tensor<T> {
        let rows = self.dim(0);
        let row: usize = self.shape()[1..].iter().product();
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            assert!(i < rows, "select index {i} out of {rows}");
            data.extend_from_slice(&self.data()[i * row..(i + 1) * row]);
        }
        let mut shape = self.shape().to_vec();
        shape[0] = indices.len();
        Tensor::from_op(
            data,
            shape,
            vec![self.clone()],
            SelectOp {
                indices: indices.to_vec(),
            },
        )
    }
}
