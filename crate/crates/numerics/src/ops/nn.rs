//! Neural-network primitives on NCHW tensors.

use crate::error::{shape_err, Result};
use crate::gemm::{gemm, MatRef};
use crate::ops::shape::axis_split;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Batch-norm epsilon shared by training and inference.
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn hw_out(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col(x: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let hw = g.hw_out();
    for c in 0..g.cin {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], g: &ConvGeom, x: &mut [f64]) {
    let hw = g.hw_out();
    for c in 0..g.cin {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &col[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + iy as usize) * g.w;
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            x[base + ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

impl Tape {
    /// 2-D cross-correlation of `x: [N,Cin,H,W]` with `weight: [Cout,Cin,kh,kw]`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 4 {
            return shape_err("conv2d", format!("input must be [N,C,H,W], got {xs:?}"));
        }
        if ws.len() != 4 {
            return shape_err("conv2d", format!("kernel must be [Cout,Cin,kh,kw], got {ws:?}"));
        }
        if xs[1] != ws[1] {
            return shape_err("conv2d", format!("input channels (axis 1) {} vs kernel Cin (axis 1) {}", xs[1], ws[1]));
        }
        if stride == 0 {
            return shape_err("conv2d", "stride must be >= 1");
        }
        let (n, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return shape_err(
                "conv2d",
                format!("kernel {kh}x{kw} (axes 2,3) exceeds padded input {}x{}", h + 2 * pad, w + 2 * pad),
            );
        }
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return shape_err("conv2d", format!("bias {:?} vs Cout {cout}", self.shape(b)));
            }
        }
        let g = ConvGeom {
            cin,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        };
        let (k, hw) = (g.k(), g.hw_out());
        let xd = self.value(x).data();
        let wd = self.value(weight).data();
        let mut out = vec![0.0; n * cout * hw];
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for i in 0..n {
            let xi = &xd[i * cin * h * w..(i + 1) * cin * h * w];
            let oi = &mut out[i * cout * hw..(i + 1) * cout * hw];
            if g.is_pointwise() {
                gemm(MatRef::row_major(wd, cout, k), MatRef::row_major(xi, k, hw), 0.0, oi);
            } else {
                let mut col = vec![0.0; k * hw];
                im2col(xi, &g, &mut col);
                gemm(MatRef::row_major(wd, cout, k), MatRef::row_major(&col, k, hw), 0.0, oi);
                cols.push(col);
            }
        }
        if let Some(b) = bias {
            let bd = self.value(b).data();
            for (j, chunk) in out.chunks_mut(hw).enumerate() {
                let bj = bd[j % cout];
                chunk.iter_mut().for_each(|v| *v += bj);
            }
        }
        let out = Tensor::new([n, cout, g.ho, g.wo], out)?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        let has_bias = bias.is_some();
        Ok(self.custom(&inputs, out, move |grad, _, ins| {
            let gd = grad.data();
            let (xd, wd) = (ins[0].data(), ins[1].data());
            let mut gx = vec![0.0; n * cin * h * w];
            let mut gw = vec![0.0; cout * k];
            let mut dcol = vec![0.0; k * hw];
            for i in 0..n {
                let gi = MatRef::row_major(&gd[i * cout * hw..(i + 1) * cout * hw], cout, hw);
                let gxi = &mut gx[i * cin * h * w..(i + 1) * cin * h * w];
                if g.is_pointwise() {
                    let xi = &xd[i * cin * h * w..(i + 1) * cin * h * w];
                    gemm(gi, MatRef::row_major(xi, k, hw).t(), 1.0, &mut gw);
                    gemm(MatRef::row_major(wd, cout, k).t(), gi, 0.0, gxi);
                } else {
                    gemm(gi, MatRef::row_major(&cols[i], k, hw).t(), 1.0, &mut gw);
                    gemm(MatRef::row_major(wd, cout, k).t(), gi, 0.0, &mut dcol);
                    col2im(&dcol, &g, gxi);
                }
            }
            let mut grads = vec![
                Some(Tensor::new([n, cin, h, w], gx).unwrap()),
                Some(Tensor::new([cout, cin, kh, kw], gw).unwrap()),
            ];
            if has_bias {
                let mut gb = vec![0.0; cout];
                for (j, chunk) in gd.chunks(hw).enumerate() {
                    gb[j % cout] += chunk.iter().sum::<f64>();
                }
                grads.push(Some(Tensor::new([cout], gb).unwrap()));
            }
            grads
        }))
    }

    /// Nearest-neighbour 2x upsampling of an NCHW tensor.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return shape_err("upsample2x", format!("input must be 4-D, got {s:?}"));
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let src = self.value(x).data();
        let mut out = vec![0.0; planes * 4 * h * w];
        for p in 0..planes {
            for y in 0..h {
                let row = &src[(p * h + y) * w..(p * h + y + 1) * w];
                for dy in 0..2 {
                    let dst = &mut out[((p * 2 * h) + 2 * y + dy) * 2 * w..((p * 2 * h) + 2 * y + dy + 1) * 2 * w];
                    for (xx, &v) in row.iter().enumerate() {
                        dst[2 * xx] = v;
                        dst[2 * xx + 1] = v;
                    }
                }
            }
        }
        let out = Tensor::new([s[0], s[1], 2 * h, 2 * w], out)?;
        Ok(self.custom(&[x], out, move |g, _, xs| {
            let gd = g.data();
            let mut gx = vec![0.0; planes * h * w];
            for p in 0..planes {
                for y in 0..h {
                    for xx in 0..w {
                        let base = (p * 2 * h + 2 * y) * 2 * w + 2 * xx;
                        gx[(p * h + y) * w + xx] = gd[base] + gd[base + 1] + gd[base + 2 * w] + gd[base + 2 * w + 1];
                    }
                }
            }
            vec![Some(Tensor::new(xs[0].shape().to_vec(), gx).unwrap())]
        }))
    }

    /// Training-mode batch norm over (N,H,W) per channel. Returns the output
    /// and the batch mean and biased variance so callers can update running stats.
    pub fn batchnorm2d_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let s = self.shape(x).to_vec();
        check_bn_shapes(&s, self.shape(gamma), self.shape(beta))?;
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let m = n * hw;
        if m < 2 {
            return shape_err("batchnorm2d", format!("training needs batch*H*W >= 2 per channel, got {m}"));
        }
        let xd = self.value(x).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for i in 0..n {
            for ch in 0..c {
                let plane = &xd[(i * c + ch) * hw..(i * c + ch + 1) * hw];
                mean[ch] += plane.iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        for i in 0..n {
            for ch in 0..c {
                let plane = &xd[(i * c + ch) * hw..(i * c + ch + 1) * hw];
                var[ch] += plane.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= m as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; xd.len()];
        for i in 0..n {
            for ch in 0..c {
                let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                for (o, v) in xhat[r.clone()].iter_mut().zip(&xd[r]) {
                    *o = (v - mean[ch]) * inv_std[ch];
                }
            }
        }
        let out = affine_channels(&xhat, self.value(gamma).data(), self.value(beta).data(), n, c, hw);
        let out = Tensor::new(s.clone(), out)?;
        let var_out = self.custom(&[x, gamma, beta], out, move |g, _, ins| {
            let gd = g.data();
            let gamma = ins[1].data();
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            for i in 0..n {
                for ch in 0..c {
                    let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                    for (gv, xh) in gd[r.clone()].iter().zip(&xhat[r]) {
                        dgamma[ch] += gv * xh;
                        dbeta[ch] += gv;
                    }
                }
            }
            // dx = gamma/(m*sigma) * (m*dy - sum(dy) - xhat*sum(dy*xhat))
            let mut dx = vec![0.0; gd.len()];
            for i in 0..n {
                for ch in 0..c {
                    let k = gamma[ch] * inv_std[ch] / m as f64;
                    let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                    for ((o, gv), xh) in dx[r.clone()].iter_mut().zip(&gd[r.clone()]).zip(&xhat[r]) {
                        *o = k * (m as f64 * gv - dbeta[ch] - xh * dgamma[ch]);
                    }
                }
            }
            vec![
                Some(Tensor::new(s.clone(), dx).unwrap()),
                Some(Tensor::new([c], dgamma).unwrap()),
                Some(Tensor::new([c], dbeta).unwrap()),
            ]
        });
        Ok((var_out, mean, var))
    }

    /// Inference-mode batch norm using fixed statistics.
    pub fn batchnorm2d_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        check_bn_shapes(&s, self.shape(gamma), self.shape(beta))?;
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        if mean.len() != c || var.len() != c {
            return shape_err("batchnorm2d", format!("running stats of length {} for {c} channels", mean.len()));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mean = mean.to_vec();
        let xd = self.value(x).data();
        let mut xhat = vec![0.0; xd.len()];
        for i in 0..n {
            for ch in 0..c {
                let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                for (o, v) in xhat[r.clone()].iter_mut().zip(&xd[r]) {
                    *o = (v - mean[ch]) * inv_std[ch];
                }
            }
        }
        let out = affine_channels(&xhat, self.value(gamma).data(), self.value(beta).data(), n, c, hw);
        let out = Tensor::new(s.clone(), out)?;
        Ok(self.custom(&[x, gamma, beta], out, move |g, _, ins| {
            let gd = g.data();
            let gamma = ins[1].data();
            let mut dx = vec![0.0; gd.len()];
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            for i in 0..n {
                for ch in 0..c {
                    let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                    for ((o, gv), xh) in dx[r.clone()].iter_mut().zip(&gd[r.clone()]).zip(&xhat[r]) {
                        *o = gv * gamma[ch] * inv_std[ch];
                        dgamma[ch] += gv * xh;
                        dbeta[ch] += gv;
                    }
                }
            }
            vec![
                Some(Tensor::new(s.clone(), dx).unwrap()),
                Some(Tensor::new([c], dgamma).unwrap()),
                Some(Tensor::new([c], dbeta).unwrap()),
            ]
        }))
    }

    /// Softmax along `axis`, with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return shape_err("softmax", format!("axis {axis} out of range for {s:?}"));
        }
        let (outer, len, inner) = axis_split(&s, axis);
        let mut out = self.value(x).data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| out[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..len {
                    let e = (out[idx(k)] - max).exp();
                    out[idx(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    out[idx(k)] /= total;
                }
            }
        }
        let out = Tensor::new(s, out)?;
        Ok(self.custom(&[x], out, move |g, y, _| {
            let (gd, yd) = (g.data(), y.data());
            let mut dx = vec![0.0; gd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| (o * len + k) * inner + i;
                    let dot: f64 = (0..len).map(|k| gd[idx(k)] * yd[idx(k)]).sum();
                    for k in 0..len {
                        dx[idx(k)] = yd[idx(k)] * (gd[idx(k)] - dot);
                    }
                }
            }
            vec![Some(Tensor::new(y.shape().to_vec(), dx).unwrap())]
        }))
    }

    /// `log(softmax(x))` along `axis`.
    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return shape_err("log_softmax", format!("axis {axis} out of range for {s:?}"));
        }
        let (outer, len, inner) = axis_split(&s, axis);
        let mut out = self.value(x).data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| out[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = max + (0..len).map(|k| (out[idx(k)] - max).exp()).sum::<f64>().ln();
                for k in 0..len {
                    out[idx(k)] -= lse;
                }
            }
        }
        let out = Tensor::new(s, out)?;
        Ok(self.custom(&[x], out, move |g, y, _| {
            let (gd, yd) = (g.data(), y.data());
            let mut dx = vec![0.0; gd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| (o * len + k) * inner + i;
                    let total: f64 = (0..len).map(|k| gd[idx(k)]).sum();
                    for k in 0..len {
                        dx[idx(k)] = gd[idx(k)] - yd[idx(k)].exp() * total;
                    }
                }
            }
            vec![Some(Tensor::new(y.shape().to_vec(), dx).unwrap())]
        }))
    }

    /// Bilinearly samples `features: [N,C,H,W]` at `points: [N,J,2]` given as
    /// `(x, y)` pixel coordinates (pixel centres at integers). Coordinates are
    /// clamped to the grid; clamped coordinates receive no gradient.
    pub fn bilinear_sample(&mut self, features: Var, points: Var) -> Result<Var> {
        let fs = self.shape(features).to_vec();
        let ps = self.shape(points).to_vec();
        if fs.len() != 4 || ps.len() != 3 || ps[2] != 2 || ps[0] != fs[0] {
            return shape_err("bilinear_sample", format!("features {fs:?}, points {ps:?} (need [N,C,H,W], [N,J,2])"));
        }
        let (n, c, h, w) = (fs[0], fs[1], fs[2], fs[3]);
        let j = ps[1];
        let taps: Vec<Tap> = self
            .value(points)
            .data()
            .chunks(2)
            .map(|p| Tap::new(p[0], p[1], w, h))
            .collect();
        let fd = self.value(features).data();
        let mut out = vec![0.0; n * j * c];
        for b in 0..n {
            for jj in 0..j {
                let t = &taps[b * j + jj];
                for ch in 0..c {
                    let plane = &fd[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
                    out[(b * j + jj) * c + ch] = t.sample(plane, w);
                }
            }
        }
        let out = Tensor::new([n, j, c], out)?;
        Ok(self.custom(&[features, points], out, move |g, _, ins| {
            let gd = g.data();
            let fd = ins[0].data();
            let mut gf = vec![0.0; fd.len()];
            let mut gp = vec![0.0; n * j * 2];
            for b in 0..n {
                for jj in 0..j {
                    let t = &taps[b * j + jj];
                    for ch in 0..c {
                        let gv = gd[(b * j + jj) * c + ch];
                        let off = (b * c + ch) * h * w;
                        t.scatter(&mut gf[off..off + h * w], w, gv);
                        let (dx, dy) = t.coord_grad(&fd[off..off + h * w], w);
                        gp[(b * j + jj) * 2] += gv * dx;
                        gp[(b * j + jj) * 2 + 1] += gv * dy;
                    }
                }
            }
            vec![
                Some(Tensor::new(fs.clone(), gf).unwrap()),
                Some(Tensor::new(ps.clone(), gp).unwrap()),
            ]
        }))
    }
}

fn check_bn_shapes(x: &[usize], gamma: &[usize], beta: &[usize]) -> Result<()> {
    if x.len() != 4 {
        return shape_err("batchnorm2d", format!("input must be [N,C,H,W], got {x:?}"));
    }
    if gamma != [x[1]] || beta != [x[1]] {
        return shape_err("batchnorm2d", format!("gamma {gamma:?} / beta {beta:?} vs channels (axis 1) {}", x[1]));
    }
    Ok(())
}

fn affine_channels(xhat: &[f64], gamma: &[f64], beta: &[f64], n: usize, c: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; xhat.len()];
    for i in 0..n {
        for ch in 0..c {
            let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
            for (o, xh) in out[r.clone()].iter_mut().zip(&xhat[r]) {
                *o = gamma[ch] * xh + beta[ch];
            }
        }
    }
    out
}

/// Precomputed bilinear stencil for one sample point.
struct Tap {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: f64,
    fy: f64,
    x_free: bool,
    y_free: bool,
}

impl Tap {
    fn new(x: f64, y: f64, w: usize, h: usize) -> Self {
        let (x0, x1, fx, x_free) = axis_tap(x, w);
        let (y0, y1, fy, y_free) = axis_tap(y, h);
        Self { x0, x1, y0, y1, fx, fy, x_free, y_free }
    }

    fn sample(&self, plane: &[f64], w: usize) -> f64 {
        let at = |y: usize, x: usize| plane[y * w + x];
        let top = at(self.y0, self.x0) * (1.0 - self.fx) + at(self.y0, self.x1) * self.fx;
        let bot = at(self.y1, self.x0) * (1.0 - self.fx) + at(self.y1, self.x1) * self.fx;
        top * (1.0 - self.fy) + bot * self.fy
    }

    fn scatter(&self, plane: &mut [f64], w: usize, g: f64) {
        plane[self.y0 * w + self.x0] += g * (1.0 - self.fx) * (1.0 - self.fy);
        plane[self.y0 * w + self.x1] += g * self.fx * (1.0 - self.fy);
        plane[self.y1 * w + self.x0] += g * (1.0 - self.fx) * self.fy;
        plane[self.y1 * w + self.x1] += g * self.fx * self.fy;
    }

    fn coord_grad(&self, plane: &[f64], w: usize) -> (f64, f64) {
        let at = |y: usize, x: usize| plane[y * w + x];
        let dx = if self.x_free {
            (at(self.y0, self.x1) - at(self.y0, self.x0)) * (1.0 - self.fy)
                + (at(self.y1, self.x1) - at(self.y1, self.x0)) * self.fy
        } else {
            0.0
        };
        let dy = if self.y_free {
            (at(self.y1, self.x0) - at(self.y0, self.x0)) * (1.0 - self.fx)
                + (at(self.y1, self.x1) - at(self.y0, self.x1)) * self.fx
        } else {
            0.0
        };
        (dx, dy)
    }
}

/// `(lo, hi, frac, differentiable)` along one axis of length `size`.
fn axis_tap(v: f64, size: usize) -> (usize, usize, f64, bool) {
    if size == 1 {
        return (0, 0, 0.0, false);
    }
    let max = (size - 1) as f64;
    let free = v > 0.0 && v < max;
    let c = v.clamp(0.0, max);
    let lo = (c.floor() as usize).min(size - 2);
    (lo, lo + 1, c - lo as f64, free)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_1x1_conv() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_fn([1, 1, 3, 4], |i| i as f64 - 5.0));
        let w = t.constant(Tensor::ones([1, 1, 1, 1]));
        let y = t.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(t.value(y), t.value(x));
    }

    #[test]
    fn all_ones_3x3_sums_to_nine() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::ones([1, 1, 3, 3]));
        let w = t.constant(Tensor::ones([1, 1, 3, 3]));
        let y = t.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(t.shape(y), &[1, 1, 1, 1]);
        assert_eq!(t.value(y).item(), 9.0);
    }

    #[test]
    fn conv_shape_errors_name_axes() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros([1, 2, 3, 3]));
        let w = t.constant(Tensor::zeros([1, 3, 3, 3]));
        let err = t.conv2d(x, w, None, 1, 0).unwrap_err().to_string();
        assert!(err.contains("axis 1"), "{err}");
        let big = t.constant(Tensor::zeros([1, 2, 5, 5]));
        let err = t.conv2d(x, big, None, 1, 0).unwrap_err().to_string();
        assert!(err.contains("axes 2,3"), "{err}");
    }

    #[test]
    fn upsample_blocks() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = t.upsample2x(x).unwrap();
        assert_eq!(
            t.value(y).data(),
            &[1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
        );
        let one = t.constant(Tensor::new([1, 1, 1, 1], vec![7.0]).unwrap());
        let y1 = t.upsample2x(one).unwrap();
        assert_eq!(t.value(y1).data(), &[7.0; 4]);
        let flat = t.constant(Tensor::zeros([2, 2]));
        assert!(t.upsample2x(flat).is_err());
    }

    #[test]
    fn upsample_then_pick_top_left_round_trips() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_fn([2, 3, 3, 5], |i| (i * 37 % 11) as f64));
        let y = t.upsample2x(x).unwrap();
        let yv = t.value(y);
        let xv = t.value(x);
        let (h, w) = (3, 5);
        for p in 0..6 {
            for r in 0..h {
                for c in 0..w {
                    assert_eq!(yv.data()[(p * 2 * h + 2 * r) * 2 * w + 2 * c], xv.data()[(p * h + r) * w + c]);
                }
            }
        }
    }

    #[test]
    fn batchnorm_constant_input_returns_beta() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::full([2, 2, 3, 3], 4.5));
        let gamma = t.constant(Tensor::new([2], vec![2.0, -1.0]).unwrap());
        let beta = t.constant(Tensor::new([2], vec![0.25, 3.0]).unwrap());
        let (y, mean, var) = t.batchnorm2d_train(x, gamma, beta).unwrap();
        assert_eq!(mean, vec![4.5, 4.5]);
        assert_eq!(var, vec![0.0, 0.0]);
        for (i, v) in t.value(y).data().iter().enumerate() {
            let expected = if (i / 9) % 2 == 0 { 0.25 } else { 3.0 };
            assert_eq!(*v, expected);
        }
    }

    #[test]
    fn batchnorm_needs_two_values_per_channel() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros([1, 1, 1, 1]));
        let g = t.constant(Tensor::ones([1]));
        let b = t.constant(Tensor::zeros([1]));
        assert!(t.batchnorm2d_train(x, g, b).is_err());
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros([4]));
        let y = t.softmax(x, 0).unwrap();
        assert_eq!(t.value(y).data(), &[0.25; 4]);
        let big = t.constant(Tensor::new([2], vec![0.0, 1000.0]).unwrap());
        let y = t.softmax(big, 0).unwrap();
        let v = t.value(y).data();
        assert!(v[0] < 1e-300 && (v[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bilinear_sample_at_node_and_between() {
        let mut t = Tape::new();
        // one channel 2x3 grid: value = 10*y + x
        let f = t.constant(Tensor::from_fn([1, 1, 2, 3], |i| (10 * (i / 3) + i % 3) as f64));
        let p = t.constant(Tensor::new([1, 3, 2], vec![2.0, 1.0, 0.5, 0.0, 1.25, 0.5]).unwrap());
        let s = t.bilinear_sample(f, p).unwrap();
        assert_eq!(t.value(s).data(), &[12.0, 0.5, 6.25]);
    }
}
