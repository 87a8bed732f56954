use crate::element::Element;
use crate::tensor::{Backward, BackwardCtx, Tensor};

fn same_shape<T: Element>(op: &str, a: &Tensor<T>, b: &Tensor<T>) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{op}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
}

struct AddOp;
impl<T: Element> Backward<T> for AddOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        vec![
            ctx.needs(0).then(|| ctx.grad.to_vec()),
            ctx.needs(1).then(|| ctx.grad.to_vec()),
        ]
    }
}

struct SubOp;
impl<T: Element> Backward<T> for SubOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        vec![
            ctx.needs(0).then(|| ctx.grad.to_vec()),
            ctx.needs(1).then(|| ctx.grad.iter().map(|&g| -g).collect()),
        ]
    }
}

struct MulOp;
impl<T: Element> Backward<T> for MulOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let a = ctx.inputs[0].data();
        let b = ctx.inputs[1].data();
        vec![
            ctx.needs(0)
                .then(|| ctx.grad.iter().zip(b).map(|(&g, &y)| g * y).collect()),
            ctx.needs(1)
                .then(|| ctx.grad.iter().zip(a).map(|(&g, &x)| g * x).collect()),
        ]
    }
}

struct AffineOp<T> {
    scale: T,
}
impl<T: Element> Backward<T> for AffineOp<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        vec![Some(ctx.grad.iter().map(|&g| g * self.scale).collect())]
    }
}

struct TanhOp;
impl<T: Element> Backward<T> for TanhOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let g = ctx
            .grad
            .iter()
            .zip(ctx.output)
            .map(|(&g, &y)| g * (T::one() - y * y))
            .collect();
        vec![Some(g)]
    }
}

struct LeakyReluOp<T> {
    slope: T,
}
impl<T: Element> Backward<T> for LeakyReluOp<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        // Subgradient at exactly zero is the inactive side.
        let x = ctx.inputs[0].data();
        let g = ctx
            .grad
            .iter()
            .zip(x)
            .map(|(&g, &v)| if v > T::zero() { g } else { g * self.slope })
            .collect();
        vec![Some(g)]
    }
}

impl<T: Element> Tensor<T> {
    fn zip_map(&self, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Vec<T> {
        self.data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| f(a, b))
            .collect()
    }

    pub fn add(&self, other: &Tensor<T>) -> Tensor<T> {
        same_shape("add", self, other);
        let data = self.zip_map(other, |a, b| a + b);
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            AddOp,
        )
    }

    pub fn sub(&self, other: &Tensor<T>) -> Tensor<T> {
        same_shape("sub", self, other);
        let data = self.zip_map(other, |a, b| a - b);
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            SubOp,
        )
    }

    pub fn mul(&self, other: &Tensor<T>) -> Tensor<T> {
        same_shape("mul", self, other);
        let data = self.zip_map(other, |a, b| a * b);
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            MulOp,
        )
    }

    /// `scale * x + shift`.
    pub fn affine(&self, scale: T, shift: T) -> Tensor<T> {
        let data = self.data().iter().map(|&v| v * scale + shift).collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            AffineOp { scale },
        )
    }

    pub fn scale(&self, s: T) -> Tensor<T> {
        self.affine(s, T::zero())
    }

    pub fn add_scalar(&self, s: T) -> Tensor<T> {
        self.affine(T::one(), s)
    }

    pub fn neg(&self) -> Tensor<T> {
        self.affine(-T::one(), T::zero())
    }

    pub fn tanh(&self) -> Tensor<T> {
        let data = self.data().iter().map(|v| v.tanh()).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], TanhOp)
    }

    pub fn leaky_relu(&self, slope: T) -> Tensor<T> {
        let data = self
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { v * slope })
            .collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            LeakyReluOp { slope },
        )
    }

    /// `max(0, x)`; the gradient at 0 is 0.
    pub fn relu(&self) -> Tensor<T> {
        self.leaky_relu(T::zero())
    }

    pub fn square(&self) -> Tensor<T> {
        self.mul(self)
    }
}
