//! Elementwise, reduction and shape operations.

use super::var::{numel, Var};
use crate::error::{Result, SeldError};

/// Row-major strides.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `src` aligned to `out`, zero along broadcast axes.
fn aligned_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let s = strides(src);
    let off = out.len() - src.len();
    (0..out.len())
        .map(|i| {
            if i < off || src[i - off] == 1 {
                0
            } else {
                s[i - off]
            }
        })
        .collect()
}

/// Visits every output index together with the matching input offsets.
fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total = numel(out);
    if total == 0 {
        return;
    }
    let nd = out.len();
    let mut idx = vec![0usize; nd];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..total {
        f(o, ia, ib);
        for d in (0..nd).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

#[derive(Clone, Copy)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinKind {
    fn name(self) -> &'static str {
        match self {
            BinKind::Add => "add",
            BinKind::Sub => "sub",
            BinKind::Mul => "mul",
            BinKind::Div => "div",
        }
    }

    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinKind::Add => a + b,
            BinKind::Sub => a - b,
            BinKind::Mul => a * b,
            BinKind::Div => a / b,
        }
    }

    /// Partial derivatives with respect to (a, b).
    #[inline]
    fn partials(self, a: f64, b: f64) -> (f64, f64) {
        match self {
            BinKind::Add => (1.0, 1.0),
            BinKind::Sub => (1.0, -1.0),
            BinKind::Mul => (b, a),
            BinKind::Div => (1.0 / b, -a / (b * b)),
        }
    }
}

fn binary(a: &Var, b: &Var, kind: BinKind) -> Result<Var> {
    let out_shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| {
        SeldError::shape(
            kind.name(),
            format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape()),
        )
    })?;
    let same = a.shape() == b.shape();
    let values = {
        let av = a.value();
        let bv = b.value();
        if same {
            av.iter().zip(bv.iter()).map(|(&x, &y)| kind.apply(x, y)).collect()
        } else {
            let sa = aligned_strides(a.shape(), &out_shape);
            let sb = aligned_strides(b.shape(), &out_shape);
            let mut out = vec![0.0; numel(&out_shape)];
            for_each_broadcast(&out_shape, &sa, &sb, |o, i, j| out[o] = kind.apply(av[i], bv[j]));
            out
        }
    };
    let oshape = out_shape.clone();
    Ok(Var::from_op(
        values,
        out_shape,
        vec![a.clone(), b.clone()],
        Box::new(move |g, _out, parents| {
            let (pa, pb) = (&parents[0], &parents[1]);
            let av = pa.value();
            let bv = pb.value();
            let mut ga = vec![0.0; av.len()];
            let mut gb = vec![0.0; bv.len()];
            if same {
                for i in 0..g.len() {
                    let (da, db) = kind.partials(av[i], bv[i]);
                    ga[i] = g[i] * da;
                    gb[i] = g[i] * db;
                }
            } else {
                let sa = aligned_strides(pa.shape(), &oshape);
                let sb = aligned_strides(pb.shape(), &oshape);
                for_each_broadcast(&oshape, &sa, &sb, |o, i, j| {
                    let (da, db) = kind.partials(av[i], bv[j]);
                    ga[i] += g[o] * da;
                    gb[j] += g[o] * db;
                });
            }
            drop(av);
            drop(bv);
            pa.accumulate(&ga);
            pb.accumulate(&gb);
        }),
    ))
}

/// Elementwise map with a derivative expressed through input and output.
fn unary(x: &Var, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Var {
    let values: Vec<f64> = x.value().iter().map(|&v| f(v)).collect();
    Var::from_op(
        values,
        x.shape().to_vec(),
        vec![x.clone()],
        Box::new(move |g, out, parents| {
            let xv = parents[0].value();
            let gx: Vec<f64> = g
                .iter()
                .zip(xv.iter().zip(out))
                .map(|(&gi, (&xi, &yi))| gi * df(xi, yi))
                .collect();
            drop(xv);
            parents[0].accumulate(&gx);
        }),
    )
}

fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Var {
    pub fn add(&self, other: &Var) -> Result<Var> {
        binary(self, other, BinKind::Add)
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        binary(self, other, BinKind::Sub)
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        binary(self, other, BinKind::Mul)
    }

    pub fn div(&self, other: &Var) -> Result<Var> {
        binary(self, other, BinKind::Div)
    }

    pub fn scale(&self, c: f64) -> Var {
        unary(self, move |v| v * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        unary(self, move |v| v + c, |_, _| 1.0)
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    pub fn square(&self) -> Var {
        unary(self, |v| v * v, |x, _| 2.0 * x)
    }

    pub fn exp(&self) -> Var {
        unary(self, f64::exp, |_, y| y)
    }

    pub fn relu(&self) -> Var {
        unary(self, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Var {
        unary(self, sigmoid_scalar, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self) -> Var {
        unary(self, f64::tanh, |_, y| 1.0 - y * y)
    }

    /// x · sigmoid(x)
    pub fn swish(&self) -> Var {
        unary(
            self,
            |v| v * sigmoid_scalar(v),
            |x, _| {
                let s = sigmoid_scalar(x);
                s + x * s * (1.0 - s)
            },
        )
    }

    pub fn sum_all(&self) -> Var {
        let s: f64 = self.value().iter().sum();
        let n = self.numel();
        Var::from_op(
            vec![s],
            Vec::new(),
            vec![self.clone()],
            Box::new(move |g, _, parents| parents[0].accumulate(&vec![g[0]; n])),
        )
    }

    pub fn mean_all(&self) -> Var {
        let n = self.numel().max(1);
        self.sum_all().scale(1.0 / n as f64)
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&self, axis: usize) -> Result<Var> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(SeldError::shape("sum_axis", format!("axis {axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        {
            let v = self.value();
            for o in 0..outer {
                for k in 0..len {
                    let base = (o * len + k) * inner;
                    let dst = &mut out[o * inner..(o + 1) * inner];
                    for (d, s) in dst.iter_mut().zip(&v[base..base + inner]) {
                        *d += s;
                    }
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        Ok(Var::from_op(
            out,
            out_shape,
            vec![self.clone()],
            Box::new(move |g, _, parents| {
                parents[0].with_grad_mut(|gx| {
                    for o in 0..outer {
                        for k in 0..len {
                            let base = (o * len + k) * inner;
                            for (d, s) in gx[base..base + inner].iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                                *d += s;
                            }
                        }
                    }
                });
            }),
        ))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var> {
        let len = *self
            .shape()
            .get(axis)
            .ok_or_else(|| SeldError::shape("mean_axis", format!("axis {axis} out of range")))?;
        Ok(self.sum_axis(axis)?.scale(1.0 / len.max(1) as f64))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.numel() {
            return Err(SeldError::shape(
                "reshape",
                format!("{:?} -> {:?} changes element count", self.shape(), shape),
            ));
        }
        Ok(Var::from_op(
            self.to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            Box::new(|g, _, parents| parents[0].accumulate(g)),
        ))
    }

    /// Reorders axes; `axes[i]` is the source axis placed at position `i`.
    pub fn permute(&self, axes: &[usize]) -> Result<Var> {
        let shape = self.shape().to_vec();
        let nd = shape.len();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true)) {
            return Err(SeldError::shape("permute", format!("invalid axes {axes:?} for {shape:?}")));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let src_strides = strides(&shape);
        // strides into the source, in output axis order
        let walk: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
        let zero = vec![0; nd];
        let mut gather = vec![0usize; self.numel()];
        for_each_broadcast(&out_shape, &walk, &zero, |o, i, _| gather[o] = i);
        let values = {
            let v = self.value();
            gather.iter().map(|&i| v[i]).collect()
        };
        Ok(Var::from_op(
            values,
            out_shape,
            vec![self.clone()],
            Box::new(move |g, _, parents| {
                parents[0].with_grad_mut(|gx| {
                    for (o, &i) in gather.iter().enumerate() {
                        gx[i] += g[o];
                    }
                });
            }),
        ))
    }

    pub fn transpose(&self, a: usize, b: usize) -> Result<Var> {
        let mut axes: Vec<usize> = (0..self.ndim()).collect();
        if a >= axes.len() || b >= axes.len() {
            return Err(SeldError::shape("transpose", format!("axes ({a},{b}) out of range")));
        }
        axes.swap(a, b);
        self.permute(&axes)
    }

    /// Contiguous sub-range `[start, end)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(SeldError::shape(
                "slice",
                format!("range {start}..{end} on axis {axis} of {shape:?}"),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let width = (end - start) * inner;
        let mut out = Vec::with_capacity(outer * width);
        {
            let v = self.value();
            for o in 0..outer {
                let base = (o * len + start) * inner;
                out.extend_from_slice(&v[base..base + width]);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = end - start;
        Ok(Var::from_op(
            out,
            out_shape,
            vec![self.clone()],
            Box::new(move |g, _, parents| {
                parents[0].with_grad_mut(|gx| {
                    for o in 0..outer {
                        let base = (o * len + start) * inner;
                        for (d, s) in gx[base..base + width].iter_mut().zip(&g[o * width..(o + 1) * width]) {
                            *d += s;
                        }
                    }
                });
            }),
        ))
    }

    /// Reverses the order along `axis`.
    pub fn flip(&self, axis: usize) -> Result<Var> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(SeldError::shape("flip", format!("axis {axis} out of range")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let map = move |o: usize, k: usize| (o * len + (len - 1 - k)) * inner;
        let mut out = vec![0.0; self.numel()];
        {
            let v = self.value();
            for o in 0..outer {
                for k in 0..len {
                    let dst = (o * len + k) * inner;
                    out[dst..dst + inner].copy_from_slice(&v[map(o, k)..map(o, k) + inner]);
                }
            }
        }
        Ok(Var::from_op(
            out,
            shape,
            vec![self.clone()],
            Box::new(move |g, _, parents| {
                parents[0].with_grad_mut(|gx| {
                    for o in 0..outer {
                        for k in 0..len {
                            let src = (o * len + k) * inner;
                            let dst = map(o, k);
                            for i in 0..inner {
                                gx[dst + i] += g[src + i];
                            }
                        }
                    }
                });
            }),
        ))
    }

    /// Inserts a unit axis at `axis`.
    pub fn unsqueeze(&self, axis: usize) -> Result<Var> {
        let mut shape = self.shape().to_vec();
        if axis > shape.len() {
            return Err(SeldError::shape("unsqueeze", format!("axis {axis} out of range")));
        }
        shape.insert(axis, 1);
        self.reshape(&shape)
    }
}

/// Joins tensors along `axis`; all other extents must agree.
pub fn concat(parts: &[Var], axis: usize) -> Result<Var> {
    let first = parts
        .first()
        .ok_or_else(|| SeldError::shape("concat", "no inputs"))?;
    let base = first.shape().to_vec();
    if axis >= base.len() {
        return Err(SeldError::shape("concat", format!("axis {axis} out of range for {base:?}")));
    }
    for p in parts {
        let s = p.shape();
        if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(i, (x, y))| i != axis && x != y) {
            return Err(SeldError::shape(
                "concat",
                format!("incompatible shapes {:?} and {:?} on axis {axis}", base, s),
            ));
        }
    }
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
    let total: usize = lens.iter().sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (p, &l) in parts.iter().zip(&lens) {
            let v = p.value();
            out.extend_from_slice(&v[o * l * inner..(o + 1) * l * inner]);
        }
    }
    let mut out_shape = base;
    out_shape[axis] = total;
    Ok(Var::from_op(
        out,
        out_shape,
        parts.to_vec(),
        Box::new(move |g, _, parents| {
            let mut offset = 0;
            for (p, &l) in parents.iter().zip(&lens) {
                let w = l * inner;
                if p.requires_grad() {
                    p.with_grad_mut(|gx| {
                        for o in 0..outer {
                            let src = o * total * inner + offset;
                            for (d, s) in gx[o * w..(o + 1) * w].iter_mut().zip(&g[src..src + w]) {
                                *d += s;
                            }
                        }
                    });
                }
                offset += w;
            }
        }),
    ))
}

/// Stacks equally shaped tensors along a new leading-position `axis`.
pub fn stack(parts: &[Var], axis: usize) -> Result<Var> {
    let expanded = parts
        .iter()
        .map(|p| p.unsqueeze(axis))
        .collect::<Result<Vec<_>>>()?;
    concat(&expanded, axis)
}
