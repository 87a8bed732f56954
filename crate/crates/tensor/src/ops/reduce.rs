use crate::element::Element;
use crate::tensor::{numel, Backward, BackwardCtx, Tensor};

struct SumAllOp;
impl<T: Element> Backward<T> for SumAllOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        vec![Some(vec![ctx.grad[0]; ctx.inputs[0].numel()])]
    }
}

struct SumAxisOp {
    axis: usize,
}
impl<T: Element> Backward<T> for SumAxisOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let src = ctx.inputs[0].shape();
        let outer: usize = src[..self.axis].iter().product();
        let len = src[self.axis];
        let inner: usize = src[self.axis + 1..].iter().product();
        let mut g = vec![T::zero(); numel(src)];
        for o in 0..outer {
            for k in 0..len {
                let dst = (o * len + k) * inner;
                g[dst..dst + inner].copy_from_slice(&ctx.grad[o * inner..(o + 1) * inner]);
            }
        }
        vec![Some(g)]
    }
}

impl<T: Element> Tensor<T> {
    pub fn sum_all(&self) -> Tensor<T> {
        let s = self.data().iter().copied().sum();
        Tensor::from_op(vec![s], vec![], vec![self.clone()], SumAllOp)
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = T::from_usize(self.numel().max(1)).expect("count fits");
        self.sum_all().scale(T::one() / n)
    }

    /// Sums out `axis` (the axis is removed from the shape).
    pub fn sum_axis(&self, axis: usize) -> Tensor<T> {
        let shape = self.shape();
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let src = &self.data()[(o * len + k) * inner..(o * len + k + 1) * inner];
                for (d, &v) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += v;
                }
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        Tensor::from_op(data, out_shape, vec![self.clone()], SumAxisOp { axis })
    }

    /// Mean over the two trailing (spatial) axes: `(B, C, H, W) -> (B, C)`.
    pub fn mean_spatial(&self) -> Tensor<T> {
        let s = self.shape();
        assert!(s.len() >= 3, "mean_spatial needs at least 3 axes");
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let mut flat = s[..s.len() - 2].to_vec();
        flat.push(h * w);
        let n = T::from_usize(h * w).expect("count fits");
        self.reshape(&flat).sum_axis(flat.len() - 1).scale(T::one() / n)
    }
}
