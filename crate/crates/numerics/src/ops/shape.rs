//! Layout and linear-algebra operations: reshape, permute, slicing,
//! concatenation, axis reductions and (batched) matrix products.

use crate::error::{shape_err, Result};
use crate::gemm::{gemm, MatRef};
use crate::tape::{Tape, Var};
use crate::tensor::{row_major_strides, Tensor};

pub(crate) fn permute_tensor(x: &Tensor, axes: &[usize]) -> Tensor {
    let shape = x.shape();
    let in_strides = row_major_strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut data = vec![0.0; x.numel()];
    let src = x.data();
    crate::tensor::for_each_broadcast(&out_shape, &[&strides], |i, o| data[i] = src[o[0]]);
    Tensor::new(out_shape, data).unwrap()
}

/// `(outer, len, inner)` split of a shape around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return shape_err(op, format!("axis {axis} out of range for shape {shape:?}"));
    }
    Ok(())
}

impl Tape {
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let n: usize = shape.iter().product();
        if n != x.numel() {
            return shape_err("reshape", format!("{:?} -> {shape:?}", x.shape()));
        }
        let out = Tensor::new(shape.to_vec(), x.data().to_vec())?;
        Ok(self.custom(&[a], out, |g, _, xs| {
            vec![Some(g.clone().reshape(xs[0].shape().to_vec()).unwrap())]
        }))
    }

    /// Collapses all axes from `start` onwards into one.
    pub fn flatten(&mut self, a: Var, start: usize) -> Result<Var> {
        let shape = self.shape(a);
        if start >= shape.len() {
            return shape_err("flatten", format!("start axis {start} for shape {shape:?}"));
        }
        let mut new_shape = shape[..start].to_vec();
        new_shape.push(shape[start..].iter().product());
        self.reshape(a, &new_shape)
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let nd = self.shape(a).len();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&x| x >= nd || std::mem::replace(&mut seen[x], true)) {
            return shape_err("permute", format!("axes {axes:?} for rank {nd}"));
        }
        let out = permute_tensor(self.value(a), axes);
        let mut inverse = vec![0; nd];
        for (i, &ax) in axes.iter().enumerate() {
            inverse[ax] = i;
        }
        Ok(self.custom(&[a], out, move |g, _, _| vec![Some(permute_tensor(g, &inverse))]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let nd = self.shape(a).len();
        if nd < 2 {
            return shape_err("transpose", format!("rank {nd} < 2"));
        }
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(nd - 2, nd - 1);
        self.permute(a, &axes)
    }

    /// Elements `start..start+len` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        check_axis("narrow", &shape, axis)?;
        if start + len > shape[axis] {
            return shape_err(
                "narrow",
                format!("range {start}..{} exceeds axis {axis} of size {}", start + len, shape[axis]),
            );
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let out = Tensor::new(out_shape, data)?;
        Ok(self.custom(&[a], out, move |g, _, _| {
            let mut full = Tensor::zeros(shape.clone());
            let gd = g.data();
            let fd = full.data_mut();
            for o in 0..outer {
                let base = (o * n + start) * inner;
                fd[base..base + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(full)]
        }))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return shape_err("concat", "no inputs");
        }
        let first = self.shape(parts[0]).to_vec();
        check_axis("concat", &first, axis)?;
        let mut sizes = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return shape_err("concat", format!("{s:?} vs {first:?} along axis {axis}"));
            }
            sizes.push(s[axis]);
        }
        let total: usize = sizes.iter().sum();
        let (outer, _, inner) = axis_split(&first, axis);
        let mut data = vec![0.0; outer * total * inner];
        let mut offset = 0;
        for (&p, &len) in parts.iter().zip(&sizes) {
            let src = self.value(p).data();
            for o in 0..outer {
                let dst = (o * total + offset) * inner;
                data[dst..dst + len * inner].copy_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
            offset += len;
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let out = Tensor::new(out_shape, data)?;
        Ok(self.custom(parts, out, move |g, _, xs| {
            let gd = g.data();
            let mut offset = 0;
            xs.iter()
                .zip(&sizes)
                .map(|(x, &len)| {
                    let mut part = Vec::with_capacity(x.numel());
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        part.extend_from_slice(&gd[src..src + len * inner]);
                    }
                    offset += len;
                    Some(Tensor::new(x.shape().to_vec(), part).unwrap())
                })
                .collect()
        }))
    }

    /// Sum along one axis; `keepdim` leaves a size-1 axis in place.
    pub fn sum_axis(&mut self, a: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        check_axis("sum_axis", &shape, axis)?;
        let (outer, n, inner) = axis_split(&shape, axis);
        let src = self.value(a).data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let row = &src[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (d, s) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *d += s;
                }
            }
        }
        let mut out_shape = shape.clone();
        if keepdim {
            out_shape[axis] = 1;
        } else {
            out_shape.remove(axis);
        }
        let out = Tensor::new(out_shape, data)?;
        Ok(self.custom(&[a], out, move |g, _, _| {
            let gd = g.data();
            let mut full = Vec::with_capacity(outer * n * inner);
            for o in 0..outer {
                for _ in 0..n {
                    full.extend_from_slice(&gd[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(Tensor::new(shape.clone(), full).unwrap())]
        }))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let n = *self.shape(a).get(axis).unwrap_or(&1) as f64;
        let s = self.sum_axis(a, axis, keepdim)?;
        Ok(self.scale(s, 1.0 / n))
    }

    /// 2-D matrix product `[m,k] x [k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err("matmul", format!("{sa:?} x {sb:?} (need [m,k] x [k,n])"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            MatRef::row_major(self.value(a).data(), m, k),
            MatRef::row_major(self.value(b).data(), k, n),
            0.0,
            &mut out,
        );
        let out = Tensor::new([m, n], out)?;
        Ok(self.custom(&[a, b], out, move |g, _, xs| {
            let gm = MatRef::row_major(g.data(), m, n);
            let mut ga = vec![0.0; m * k];
            gemm(gm, MatRef::row_major(xs[1].data(), k, n).t(), 0.0, &mut ga);
            let mut gb = vec![0.0; k * n];
            gemm(MatRef::row_major(xs[0].data(), m, k).t(), gm, 0.0, &mut gb);
            vec![
                Some(Tensor::new([m, k], ga).unwrap()),
                Some(Tensor::new([k, n], gb).unwrap()),
            ]
        }))
    }

    /// Batched product `[b,m,k] x [b,k,n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return shape_err("bmm", format!("{sa:?} x {sb:?} (need [b,m,k] x [b,k,n])"));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bs * m * n];
        {
            let (ad, bd) = (self.value(a).data(), self.value(b).data());
            for i in 0..bs {
                gemm(
                    MatRef::row_major(&ad[i * m * k..(i + 1) * m * k], m, k),
                    MatRef::row_major(&bd[i * k * n..(i + 1) * k * n], k, n),
                    0.0,
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
        }
        let out = Tensor::new([bs, m, n], out)?;
        Ok(self.custom(&[a, b], out, move |g, _, xs| {
            let (ad, bd, gd) = (xs[0].data(), xs[1].data(), g.data());
            let mut ga = vec![0.0; bs * m * k];
            let mut gb = vec![0.0; bs * k * n];
            for i in 0..bs {
                let gm = MatRef::row_major(&gd[i * m * n..(i + 1) * m * n], m, n);
                gemm(
                    gm,
                    MatRef::row_major(&bd[i * k * n..(i + 1) * k * n], k, n).t(),
                    0.0,
                    &mut ga[i * m * k..(i + 1) * m * k],
                );
                gemm(
                    MatRef::row_major(&ad[i * m * k..(i + 1) * m * k], m, k).t(),
                    gm,
                    0.0,
                    &mut gb[i * k * n..(i + 1) * k * n],
                );
            }
            vec![
                Some(Tensor::new([bs, m, k], ga).unwrap()),
                Some(Tensor::new([bs, k, n], gb).unwrap()),
            ]
        }))
    }
}
