//! Neural-network primitives with hand-written backward passes.

use rand::Rng;

use super::linalg::gemm;
use super::var::Var;
use crate::error::{Result, SeldError};

/// Batch statistics produced by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BatchMoments {
    pub mean: Vec<f64>,
    /// Biased variance.
    pub var: Vec<f64>,
    /// Number of values each channel statistic was computed from.
    pub count: usize,
}

/// Sinusoidal absolute position table, `[len × dim]` row-major.
pub fn sinusoidal_table(len: usize, dim: usize) -> Vec<f64> {
    let mut pe = vec![0.0; len * dim];
    for t in 0..len {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let freq = (-(10000f64).ln() * 2.0 * pair / dim as f64).exp();
            let angle = t as f64 * freq;
            pe[t * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

impl Var {
    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Var> {
        let d = *self
            .shape()
            .last()
            .ok_or_else(|| SeldError::shape("softmax", "scalar input"))?;
        let mut out = self.to_vec();
        for row in out.chunks_mut(d.max(1)) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        Ok(Var::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, y, parents| {
                let mut gx = vec![0.0; g.len()];
                for ((gr, yr), dst) in g.chunks(d).zip(y.chunks(d)).zip(gx.chunks_mut(d)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for i in 0..d {
                        dst[i] = yr[i] * (gr[i] - dot);
                    }
                }
                parents[0].accumulate(&gx);
            }),
        ))
    }

    /// Layer normalisation over the last axis with affine `gamma`/`beta` of
    /// shape `[D]`.
    pub fn layer_norm(&self, gamma: &Var, beta: &Var, eps: f64) -> Result<Var> {
        let d = *self
            .shape()
            .last()
            .ok_or_else(|| SeldError::shape("layer_norm", "scalar input"))?;
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(SeldError::shape(
                "layer_norm",
                format!("affine params must be [{d}], got {:?}/{:?}", gamma.shape(), beta.shape()),
            ));
        }
        let rows = self.numel() / d.max(1);
        let mut xhat = self.to_vec();
        let mut inv_std = vec![0.0; rows];
        for (r, row) in xhat.chunks_mut(d).enumerate() {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for v in row.iter_mut() {
                *v = (*v - mean) * is;
            }
        }
        let out = {
            let gv = gamma.value();
            let bv = beta.value();
            xhat.chunks(d)
                .flat_map(|row| row.iter().enumerate().map(|(i, &x)| x * gv[i] + bv[i]).collect::<Vec<_>>())
                .collect()
        };
        Ok(Var::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, _, parents| {
                let gv = parents[1].value().clone();
                let mut ggamma = vec![0.0; d];
                let mut gbeta = vec![0.0; d];
                let mut gx = vec![0.0; g.len()];
                for r in 0..rows {
                    let gr = &g[r * d..(r + 1) * d];
                    let xr = &xhat[r * d..(r + 1) * d];
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for i in 0..d {
                        ggamma[i] += gr[i] * xr[i];
                        gbeta[i] += gr[i];
                        let dxh = gr[i] * gv[i];
                        m1 += dxh;
                        m2 += dxh * xr[i];
                    }
                    m1 /= d as f64;
                    m2 /= d as f64;
                    for i in 0..d {
                        gx[r * d + i] = inv_std[r] * (gr[i] * gv[i] - m1 - xr[i] * m2);
                    }
                }
                parents[0].accumulate(&gx);
                parents[1].accumulate(&ggamma);
                parents[2].accumulate(&gbeta);
            }),
        ))
    }

    /// Batch normalisation along `axis` using statistics of the current batch.
    /// Returns the output and the batch moments for running-average updates.
    pub fn batch_norm_train(&self, gamma: &Var, beta: &Var, axis: usize, eps: f64) -> Result<(Var, BatchMoments)> {
        let (outer, c, inner) = self.split_axis("batch_norm", axis, gamma, beta)?;
        let count = outer * inner;
        if count == 0 {
            return Err(SeldError::shape("batch_norm", "empty batch"));
        }
        let x = self.value();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for o in 0..outer {
            for ch in 0..c {
                let base = (o * c + ch) * inner;
                mean[ch] += x[base..base + inner].iter().sum::<f64>();
            }
        }
        for m in mean.iter_mut() {
            *m /= count as f64;
        }
        for o in 0..outer {
            for ch in 0..c {
                let base = (o * c + ch) * inner;
                var[ch] += x[base..base + inner].iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        for v in var.iter_mut() {
            *v /= count as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; x.len()];
        for o in 0..outer {
            for ch in 0..c {
                let base = (o * c + ch) * inner;
                for i in base..base + inner {
                    xhat[i] = (x[i] - mean[ch]) * inv_std[ch];
                }
            }
        }
        drop(x);
        let out = affine_channels(&xhat, &gamma.value(), &beta.value(), outer, c, inner);
        let moments = BatchMoments {
            mean,
            var,
            count,
        };
        let y = Var::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, _, parents| {
                let gv = parents[1].value().clone();
                let mut ggamma = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                for o in 0..outer {
                    for ch in 0..c {
                        let base = (o * c + ch) * inner;
                        for i in base..base + inner {
                            ggamma[ch] += g[i] * xhat[i];
                            gbeta[ch] += g[i];
                        }
                    }
                }
                let n = count as f64;
                let mut gx = vec![0.0; g.len()];
                for o in 0..outer {
                    for ch in 0..c {
                        let base = (o * c + ch) * inner;
                        let m1 = gbeta[ch] / n;
                        let m2 = ggamma[ch] / n;
                        for i in base..base + inner {
                            gx[i] = gv[ch] * inv_std[ch] * (g[i] - m1 - xhat[i] * m2);
                        }
                    }
                }
                parents[0].accumulate(&gx);
                parents[1].accumulate(&ggamma);
                parents[2].accumulate(&gbeta);
            }),
        );
        Ok((y, moments))
    }

    /// Batch normalisation along `axis` with fixed (running) statistics.
    pub fn batch_norm_eval(
        &self,
        gamma: &Var,
        beta: &Var,
        axis: usize,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let (outer, c, inner) = self.split_axis("batch_norm", axis, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(SeldError::shape("batch_norm", "running statistics length differs from channels"));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = self.to_vec();
        for o in 0..outer {
            for ch in 0..c {
                let base = (o * c + ch) * inner;
                for v in &mut xhat[base..base + inner] {
                    *v = (*v - mean[ch]) * inv_std[ch];
                }
            }
        }
        let out = affine_channels(&xhat, &gamma.value(), &beta.value(), outer, c, inner);
        Ok(Var::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, _, parents| {
                let gv = parents[1].value().clone();
                let mut ggamma = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                let mut gx = vec![0.0; g.len()];
                for o in 0..outer {
                    for ch in 0..c {
                        let base = (o * c + ch) * inner;
                        for i in base..base + inner {
                            ggamma[ch] += g[i] * xhat[i];
                            gbeta[ch] += g[i];
                            gx[i] = g[i] * gv[ch] * inv_std[ch];
                        }
                    }
                }
                parents[0].accumulate(&gx);
                parents[1].accumulate(&ggamma);
                parents[2].accumulate(&gbeta);
            }),
        ))
    }

    fn split_axis(&self, op: &'static str, axis: usize, gamma: &Var, beta: &Var) -> Result<(usize, usize, usize)> {
        let s = self.shape();
        if axis >= s.len() {
            return Err(SeldError::shape(op, format!("axis {axis} out of range for {s:?}")));
        }
        let c = s[axis];
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(SeldError::shape(op, format!("affine params must be [{c}]")));
        }
        Ok((s[..axis].iter().product(), c, s[axis + 1..].iter().product()))
    }

    /// Gated linear unit: first half of `axis` times sigmoid of the second half.
    pub fn glu(&self, axis: usize) -> Result<Var> {
        let len = *self
            .shape()
            .get(axis)
            .ok_or_else(|| SeldError::shape("glu", format!("axis {axis} out of range")))?;
        if len % 2 != 0 {
            return Err(SeldError::shape("glu", format!("axis length {len} is odd")));
        }
        let a = self.slice(axis, 0, len / 2)?;
        let b = self.slice(axis, len / 2, len)?;
        a.mul(&b.sigmoid())
    }

    /// Inverted dropout. Identity when `p == 0`.
    pub fn dropout(&self, p: f64, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(SeldError::Config(format!("dropout probability {p} not in [0, 1)")));
        }
        if p == 0.0 {
            return Ok(self.clone());
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.numel())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.mul(&Var::constant(mask, self.shape())?)
    }

    /// 2-D convolution on `[B, C, H, W]` with weights `[O, C, KH, KW]`.
    pub fn conv2d(&self, weight: &Var, bias: Option<&Var>, stride: (usize, usize), padding: (usize, usize)) -> Result<Var> {
        let xs = self.shape().to_vec();
        let ws = weight.shape().to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(SeldError::shape("conv2d", format!("input {xs:?} vs weight {ws:?}")));
        }
        if let Some(b) = bias {
            if b.shape() != [ws[0]] {
                return Err(SeldError::shape("conv2d", format!("bias {:?} vs {} filters", b.shape(), ws[0])));
            }
        }
        let geo = ConvGeometry {
            batch: xs[0],
            cin: xs[1],
            h: xs[2],
            w: xs[3],
            cout: ws[0],
            kh: ws[2],
            kw: ws[3],
            sh: stride.0,
            sw: stride.1,
            ph: padding.0,
            pw: padding.1,
        };
        if stride.0 == 0 || stride.1 == 0 || geo.h + 2 * geo.ph < geo.kh || geo.w + 2 * geo.pw < geo.kw {
            return Err(SeldError::shape("conv2d", "kernel larger than padded input or zero stride"));
        }
        let (ho, wo) = geo.out_hw();
        let out = {
            let xv = self.value();
            let wv = weight.value();
            let mut out = vec![0.0; geo.batch * geo.cout * ho * wo];
            geo.forward(&xv, &wv, &mut out);
            if let Some(b) = bias {
                let bv = b.value();
                for (i, chunk) in out.chunks_mut(ho * wo).enumerate() {
                    let v = bv[i % geo.cout];
                    chunk.iter_mut().for_each(|x| *x += v);
                }
            }
            out
        };
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Var::from_op(
            out,
            vec![geo.batch, geo.cout, ho, wo],
            parents,
            Box::new(move |g, _, parents| {
                let xv = parents[0].value();
                let wv = parents[1].value();
                let want_x = parents[0].requires_grad();
                let mut gx = if want_x { vec![0.0; xv.len()] } else { Vec::new() };
                let mut gw = vec![0.0; wv.len()];
                geo.backward(&xv, &wv, g, want_x.then_some(gx.as_mut_slice()), &mut gw);
                drop(xv);
                drop(wv);
                if want_x {
                    parents[0].accumulate(&gx);
                }
                parents[1].accumulate(&gw);
                if let Some(pb) = parents.get(2) {
                    let mut gb = vec![0.0; geo.cout];
                    for (i, chunk) in g.chunks(ho * wo).enumerate() {
                        gb[i % geo.cout] += chunk.iter().sum::<f64>();
                    }
                    pb.accumulate(&gb);
                }
            }),
        ))
    }

    /// Average pooling on `[B, C, H, W]` with square window and stride.
    pub fn avg_pool2d(&self, k: usize, stride: usize) -> Result<Var> {
        let s = self.shape().to_vec();
        if s.len() != 4 || k == 0 || stride == 0 || s[2] < k || s[3] < k {
            return Err(SeldError::shape("avg_pool2d", format!("input {s:?} with window {k}")));
        }
        let (bc, h, w) = (s[0] * s[1], s[2], s[3]);
        let ho = (h - k) / stride + 1;
        let wo = (w - k) / stride + 1;
        let norm = 1.0 / (k * k) as f64;
        let mut out = vec![0.0; bc * ho * wo];
        {
            let x = self.value();
            for p in 0..bc {
                let src = &x[p * h * w..(p + 1) * h * w];
                for i in 0..ho {
                    for j in 0..wo {
                        let mut acc = 0.0;
                        for di in 0..k {
                            let row = (i * stride + di) * w + j * stride;
                            acc += src[row..row + k].iter().sum::<f64>();
                        }
                        out[p * ho * wo + i * wo + j] = acc * norm;
                    }
                }
            }
        }
        Ok(Var::from_op(
            out,
            vec![s[0], s[1], ho, wo],
            vec![self.clone()],
            Box::new(move |g, _, parents| {
                parents[0].with_grad_mut(|gx| {
                    for p in 0..bc {
                        for i in 0..ho {
                            for j in 0..wo {
                                let gv = g[p * ho * wo + i * wo + j] * norm;
                                for di in 0..k {
                                    let row = p * h * w + (i * stride + di) * w + j * stride;
                                    gx[row..row + k].iter_mut().for_each(|v| *v += gv);
                                }
                            }
                        }
                    }
                });
            }),
        ))
    }

    /// Depthwise 1-D convolution over time on channel-last `[B, T, C]`
    /// input, weights `[C, K]` (K odd), "same" zero padding.
    pub fn depthwise_conv1d(&self, weight: &Var, bias: &Var) -> Result<Var> {
        let s = self.shape().to_vec();
        let ws = weight.shape().to_vec();
        if s.len() != 3 || ws.len() != 2 || ws[0] != s[2] || bias.shape() != [s[2]] || ws[1] % 2 == 0 {
            return Err(SeldError::shape(
                "depthwise_conv1d",
                format!("input {s:?}, weight {ws:?}, bias {:?}", bias.shape()),
            ));
        }
        let (b, t, c, k) = (s[0], s[1], s[2], ws[1]);
        let pad = k / 2;
        let mut out = vec![0.0; b * t * c];
        {
            let x = self.value();
            let w = weight.value();
            let bv = bias.value();
            for bi in 0..b {
                for ti in 0..t {
                    let dst = &mut out[(bi * t + ti) * c..(bi * t + ti + 1) * c];
                    dst.copy_from_slice(&bv);
                    for kk in 0..k {
                        let src_t = ti as isize + kk as isize - pad as isize;
                        if src_t < 0 || src_t >= t as isize {
                            continue;
                        }
                        let src = &x[(bi * t + src_t as usize) * c..][..c];
                        for ch in 0..c {
                            dst[ch] += w[ch * k + kk] * src[ch];
                        }
                    }
                }
            }
        }
        Ok(Var::from_op(
            out,
            s.clone(),
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |g, _, parents| {
                let x = parents[0].value();
                let w = parents[1].value();
                let mut gx = vec![0.0; x.len()];
                let mut gw = vec![0.0; w.len()];
                let mut gb = vec![0.0; c];
                for bi in 0..b {
                    for ti in 0..t {
                        let go = &g[(bi * t + ti) * c..][..c];
                        for ch in 0..c {
                            gb[ch] += go[ch];
                        }
                        for kk in 0..k {
                            let src_t = ti as isize + kk as isize - pad as isize;
                            if src_t < 0 || src_t >= t as isize {
                                continue;
                            }
                            let base = (bi * t + src_t as usize) * c;
                            for ch in 0..c {
                                gw[ch * k + kk] += go[ch] * x[base + ch];
                                gx[base + ch] += go[ch] * w[ch * k + kk];
                            }
                        }
                    }
                }
                drop(x);
                drop(w);
                parents[0].accumulate(&gx);
                parents[1].accumulate(&gw);
                parents[2].accumulate(&gb);
            }),
        ))
    }
}

fn affine_channels(xhat: &[f64], gamma: &[f64], beta: &[f64], outer: usize, c: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; xhat.len()];
    for o in 0..outer {
        for ch in 0..c {
            let base = (o * c + ch) * inner;
            for i in base..base + inner {
                out[i] = xhat[i] * gamma[ch] + beta[ch];
            }
        }
    }
    out
}

/// Upper bound on the im2col buffer, in elements.
const COL_BUDGET: usize = 1 << 22;

#[derive(Clone, Copy)]
struct ConvGeometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
}

impl ConvGeometry {
    fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.ph - self.kh) / self.sh + 1,
            (self.w + 2 * self.pw - self.kw) / self.sw + 1,
        )
    }

    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    /// Output rows per im2col chunk.
    fn rows_per_chunk(&self) -> usize {
        let (ho, wo) = self.out_hw();
        (COL_BUDGET / (self.patch() * wo).max(1)).clamp(1, ho)
    }

    /// Fills `cols[patch, rows*wo]` for output rows `r0..r0+rows`.
    fn im2col(&self, x: &[f64], r0: usize, rows: usize, cols: &mut [f64]) {
        let (_, wo) = self.out_hw();
        let n = rows * wo;
        for c in 0..self.cin {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let prow = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[prow * n..(prow + 1) * n];
                    for r in 0..rows {
                        let hi = ((r0 + r) * self.sh + ki) as isize - self.ph as isize;
                        let drow = &mut dst[r * wo..(r + 1) * wo];
                        if hi < 0 || hi >= self.h as isize {
                            drow.fill(0.0);
                            continue;
                        }
                        let src = &plane[hi as usize * self.w..(hi as usize + 1) * self.w];
                        for (j, d) in drow.iter_mut().enumerate() {
                            let wi = (j * self.sw + kj) as isize - self.pw as isize;
                            *d = if wi < 0 || wi >= self.w as isize { 0.0 } else { src[wi as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], r0: usize, rows: usize, gx: &mut [f64]) {
        let (_, wo) = self.out_hw();
        let n = rows * wo;
        for c in 0..self.cin {
            let plane = &mut gx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let prow = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[prow * n..(prow + 1) * n];
                    for r in 0..rows {
                        let hi = ((r0 + r) * self.sh + ki) as isize - self.ph as isize;
                        if hi < 0 || hi >= self.h as isize {
                            continue;
                        }
                        let drow = &mut plane[hi as usize * self.w..(hi as usize + 1) * self.w];
                        for j in 0..wo {
                            let wi = (j * self.sw + kj) as isize - self.pw as isize;
                            if wi >= 0 && wi < self.w as isize {
                                drow[wi as usize] += src[r * wo + j];
                            }
                        }
                    }
                }
            }
        }
    }

    fn forward(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        let (ho, wo) = self.out_hw();
        let chunk = self.rows_per_chunk();
        let patch = self.patch();
        let mut cols = vec![0.0; patch * chunk * wo];
        let mut tmp = vec![0.0; self.cout * chunk * wo];
        for b in 0..self.batch {
            let xb = &x[b * self.cin * self.h * self.w..];
            let ob = &mut out[b * self.cout * ho * wo..(b + 1) * self.cout * ho * wo];
            let mut r0 = 0;
            while r0 < ho {
                let rows = chunk.min(ho - r0);
                let n = rows * wo;
                self.im2col(xb, r0, rows, &mut cols);
                gemm(self.cout, patch, n, w, false, &cols, false, &mut tmp, 0.0);
                for o in 0..self.cout {
                    ob[o * ho * wo + r0 * wo..][..n].copy_from_slice(&tmp[o * n..(o + 1) * n]);
                }
                r0 += rows;
            }
        }
    }

    fn backward(&self, x: &[f64], w: &[f64], g: &[f64], mut gx: Option<&mut [f64]>, gw: &mut [f64]) {
        let (ho, wo) = self.out_hw();
        let chunk = self.rows_per_chunk();
        let patch = self.patch();
        let mut cols = vec![0.0; patch * chunk * wo];
        let mut gchunk = vec![0.0; self.cout * chunk * wo];
        let mut dcols = vec![0.0; patch * chunk * wo];
        let plane_in = self.cin * self.h * self.w;
        for b in 0..self.batch {
            let xb = &x[b * plane_in..(b + 1) * plane_in];
            let gb = &g[b * self.cout * ho * wo..];
            let mut r0 = 0;
            while r0 < ho {
                let rows = chunk.min(ho - r0);
                let n = rows * wo;
                for o in 0..self.cout {
                    gchunk[o * n..(o + 1) * n].copy_from_slice(&gb[o * ho * wo + r0 * wo..][..n]);
                }
                self.im2col(xb, r0, rows, &mut cols);
                gemm(self.cout, n, patch, &gchunk, false, &cols, true, gw, 1.0);
                if let Some(gx) = gx.as_deref_mut() {
                    gemm(patch, self.cout, n, w, true, &gchunk, false, &mut dcols, 0.0);
                    self.col2im(&dcols, r0, rows, &mut gx[b * plane_in..(b + 1) * plane_in]);
                }
                r0 += rows;
            }
        }
    }
}
