//! Pointwise and broadcasting arithmetic, plus full reductions.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::{broadcast_shape, broadcast_strides, for_each_broadcast, Tensor};

pub(crate) fn broadcast_binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.shape().to_vec(), data);
    }
    let out_shape = broadcast_shape(a.shape(), b.shape())?;
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let mut data = vec![0.0; out_shape.iter().product()];
    let (ad, bd) = (a.data(), b.data());
    for_each_broadcast(&out_shape, &[&sa, &sb], |i, o| data[i] = f(ad[o[0]], bd[o[1]]));
    Tensor::new(out_shape, data)
}

impl Tape {
    fn unary(
        &mut self,
        a: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        let out = self.value(a).map(f);
        self.custom(&[a], out, move |g, y, xs| {
            let x = xs[0];
            let data = g
                .data()
                .iter()
                .zip(x.data())
                .zip(y.data())
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect();
            vec![Some(Tensor::new(x.shape().to_vec(), data).unwrap())]
        })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, |x, _| 2.0 * x)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, |_, y| y)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, |x, _| 1.0 / x)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, |_, _| -1.0)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, move |x| c * x, move |_, _| c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, move |x| x + c, |_, _| 1.0)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| x.max(0.0) + (-x.abs()).exp().ln_1p(),
            |x, _| 1.0 / (1.0 + (-x).exp()),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast_binary(self.value(a), self.value(b), |x, y| x + y)?;
        Ok(self.custom(&[a, b], out, |g, _, xs| {
            vec![
                Some(g.sum_to_shape(xs[0].shape()).unwrap()),
                Some(g.sum_to_shape(xs[1].shape()).unwrap()),
            ]
        }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast_binary(self.value(a), self.value(b), |x, y| x - y)?;
        Ok(self.custom(&[a, b], out, |g, _, xs| {
            vec![
                Some(g.sum_to_shape(xs[0].shape()).unwrap()),
                Some(g.map(|x| -x).sum_to_shape(xs[1].shape()).unwrap()),
            ]
        }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast_binary(self.value(a), self.value(b), |x, y| x * y)?;
        Ok(self.custom(&[a, b], out, |g, _, xs| {
            let ga = broadcast_binary(g, xs[1], |g, y| g * y).unwrap();
            let gb = broadcast_binary(g, xs[0], |g, x| g * x).unwrap();
            vec![
                Some(ga.sum_to_shape(xs[0].shape()).unwrap()),
                Some(gb.sum_to_shape(xs[1].shape()).unwrap()),
            ]
        }))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast_binary(self.value(a), self.value(b), |x, y| x / y)?;
        Ok(self.custom(&[a, b], out, |g, y, xs| {
            let ga = broadcast_binary(g, xs[1], |g, b| g / b).unwrap();
            // d(a/b)/db = -(a/b)/b
            let gy = broadcast_binary(g, y, |g, y| -g * y).unwrap();
            let gb = broadcast_binary(&gy, xs[1], |t, b| t / b).unwrap();
            vec![
                Some(ga.sum_to_shape(xs[0].shape()).unwrap()),
                Some(gb.sum_to_shape(xs[1].shape()).unwrap()),
            ]
        }))
    }

    /// Sum of all elements, as a 0-d tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.custom(&[a], out, |g, _, xs| {
            vec![Some(Tensor::full(xs[0].shape().to_vec(), g.item()))]
        })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }
}
