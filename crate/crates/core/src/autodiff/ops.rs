//! Forward definitions of the primitive operations.

use crate::error::{invalid, Result};
use crate::scalar::{sigmoid, softplus, Real};

use super::graph::{numel, shape_err, CustomBackward, Graph, Op, Sample4, Var};

/// Splits `shape` around `axis` into `(outer, dim, inner)` extents.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Real> Graph<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, node: Op<T>) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, shape, node, rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, node: Op<T>) -> Var {
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.any_grad(&[a]);
        self.push(value, shape, node, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let n = self.neg(a);
        self.add_scalar(n, T::one())
    }

    /// Adds a length-`n` row (shape `[n]` or `[1, n]`) to every row of `x: [m, n]`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let rs = self.shape(row).to_vec();
        let n = *xs.last().unwrap_or(&0);
        if xs.len() != 2 || numel(&rs) != n || rs.len() > 2 || (rs.len() == 2 && rs[0] != 1) {
            return Err(shape_err("add_row", &xs, &rs));
        }
        let r = self.value(row).to_vec();
        let value = self.value(x).chunks(n).flat_map(|c| c.iter().zip(&r).map(|(&a, &b)| a + b)).collect();
        let rg = self.any_grad(&[x, row]);
        Ok(self.push(value, xs, Op::AddRow(x, row), rg))
    }

    /// Multiplies row `i` of `x: [m, n]` by `col[i]`, `col: [m, 1]`.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let cs = self.shape(col).to_vec();
        if xs.len() != 2 || cs != [xs[0], 1] {
            return Err(shape_err("mul_col", &xs, &cs));
        }
        let n = xs[1];
        let c = self.value(col).to_vec();
        let value = self
            .value(x)
            .chunks(n.max(1))
            .zip(&c)
            .flat_map(|(row, &s)| row.iter().map(move |&v| v * s))
            .collect();
        let rg = self.any_grad(&[x, col]);
        Ok(self.push(value, xs, Op::MulCol(x, col), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", &sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        matmul_into(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, vec![m, n], Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(shape_err("transpose", &s, &[]));
        }
        let (m, n) = (s[0], s[1]);
        let v = self.value(a);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = v[i * n + j];
            }
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, vec![n, m], Op::Transpose(a), rg))
    }

    /// 2-D convolution, `x: [N, C, H, W]`, `w: [O, C, k, k]`, `b: [O]`, zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] || bs != [ws[0]] {
            return Err(shape_err("conv2d", &xs, &ws));
        }
        if stride == 0 {
            return Err(invalid("conv2d stride must be positive"));
        }
        let k = ws[2];
        if xs[2] + 2 * pad < k || xs[3] + 2 * pad < k {
            return Err(shape_err("conv2d", &xs, &ws));
        }
        let geom = ConvGeom::new(&xs, &ws, stride, pad);
        let mut out = vec![T::zero(); geom.out_len()];
        conv_forward(&geom, self.value(x), self.value(w), self.value(b), &mut out);
        let shape = vec![geom.n, geom.o, geom.oh, geom.ow];
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(out, shape, Op::Conv2d { x, w, b, stride, pad }, rg))
    }

    /// Nearest-neighbour 2× upsampling of `[N, C, H, W]`.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(shape_err("upsample2x", &s, &[]));
        }
        let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
        let v = self.value(x);
        let mut out = vec![T::zero(); nc * 4 * h * w];
        for p in 0..nc {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out[(p * 2 * h + y) * 2 * w + xx] = v[(p * h + y / 2) * w + xx / 2];
                }
            }
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, vec![s[0], s[1], 2 * h, 2 * w], Op::Upsample2x(x), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.ln(), Op::Log(a))
    }

    /// Clamps to `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        self.unary(a, |x| x.max(lo).min(hi), Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().fold(T::zero(), |acc, &x| acc + x);
        let rg = self.any_grad(&[a]);
        self.push(vec![s], vec![1], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::of(self.value(a).len() as f64);
        let s = self.value(a).iter().fold(T::zero(), |acc, &x| acc + x) / n;
        let rg = self.any_grad(&[a]);
        self.push(vec![s], vec![1], Op::Mean(a), rg)
    }

    /// Sums over `axis`, removing it from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(shape_err("sum_axis", &s, &[axis]));
        }
        let (outer, dim, inner) = split_axis(&s, axis);
        let v = self.value(x);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for d in 0..dim {
                let src = &v[(o * dim + d) * inner..(o * dim + d + 1) * inner];
                for (acc, &val) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc = *acc + val;
                }
            }
        }
        let mut shape = s.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, shape, Op::SumAxis { x, axis }, rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or_else(|| invalid("concat of nothing"))?).to_vec();
        if axis >= first.len() {
            return Err(shape_err("concat", &first, &[axis]));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", &first, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let d = self.shape(p)[axis];
                out.extend_from_slice(&self.value(p)[o * d * inner..(o + 1) * d * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = self.any_grad(parts);
        Ok(self.push(out, shape, Op::Concat { parts: parts.to_vec(), axis }, rg))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(shape_err("slice", &s, &[axis, start, len]));
        }
        let (outer, dim, inner) = split_axis(&s, axis);
        let v = self.value(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&v[(o * dim + start) * inner..(o * dim + start + len) * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, shape, Op::Slice { x, axis, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != numel(self.shape(x)) {
            return Err(shape_err("reshape", self.shape(x), shape));
        }
        let v = self.value(x).to_vec();
        let rg = self.any_grad(&[x]);
        Ok(self.push(v, shape.to_vec(), Op::Reshape(x), rg))
    }

    /// Rows of a 2-D tensor picked by index (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || rows.iter().any(|&r| r >= s[0]) {
            return Err(shape_err("gather_rows", &s, &[rows.len()]));
        }
        let n = s[1];
        let v = self.value(x);
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in &rows {
            out.extend_from_slice(&v[r * n..(r + 1) * n]);
        }
        let shape = vec![rows.len(), n];
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, shape, Op::GatherRows { x, rows }, rg))
    }

    /// Repeats a `[1, n]` (or `[n]`) row `m` times.
    pub fn broadcast_rows(&mut self, x: Var, m: usize) -> Result<Var> {
        let n = numel(self.shape(x));
        let row = self.reshape(x, &[1, n])?;
        self.gather_rows(row, vec![0; m])
    }

    /// Bilinear lookup in `map: [C, H, W]` (or `[1, C, H, W]`) at `(x, y)` positions in
    /// cell units, where integer positions are cell centers. Positions are clamped to
    /// `[0, W-1] × [0, H-1]`. Returns `[N, C]`. Differentiable in `map` only.
    pub fn bilinear_sample(&mut self, map: Var, coords: &[(T, T)]) -> Result<Var> {
        let s = self.shape(map).to_vec();
        let (c, h, w) = match s.as_slice() {
            [c, h, w] | [1, c, h, w] => (*c, *h, *w),
            _ => return Err(shape_err("bilinear_sample", &s, &[])),
        };
        if h == 0 || w == 0 {
            return Err(shape_err("bilinear_sample", &s, &[]));
        }
        let hw = h * w;
        let samples: Vec<Sample4<T>> = coords.iter().map(|&(x, y)| bilinear_taps(x, y, w, h)).collect();
        let v = self.value(map);
        let mut out = Vec::with_capacity(coords.len() * c);
        for sm in &samples {
            for ch in 0..c {
                let base = ch * hw;
                let mut acc = T::zero();
                for k in 0..4 {
                    acc = acc + sm.w[k] * v[base + sm.idx[k]];
                }
                out.push(acc);
            }
        }
        let rg = self.any_grad(&[map]);
        Ok(self.push(out, vec![coords.len(), c], Op::Bilinear { map, samples }, rg))
    }

    /// `y[..., i] = Σ_{j<i} x[..., j]` along the last axis.
    pub fn cumsum_exclusive(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let n = *s.last().ok_or_else(|| shape_err("cumsum_exclusive", &s, &[]))?;
        let v = self.value(x);
        let mut out = vec![T::zero(); v.len()];
        for (src, dst) in v.chunks(n.max(1)).zip(out.chunks_mut(n.max(1))) {
            let mut acc = T::zero();
            for (d, &x) in dst.iter_mut().zip(src) {
                *d = acc;
                acc = acc + x;
            }
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, s, Op::CumsumExclusive(x), rg))
    }

    /// Node with caller-supplied forward value and backward rule.
    pub fn custom(&mut self, parents: &[Var], value: Vec<T>, shape: &[usize], backward: CustomBackward<T>) -> Result<Var> {
        if value.len() != numel(shape) {
            return Err(invalid(format!("custom op: {} values for shape {shape:?}", value.len())));
        }
        let rg = self.any_grad(parents);
        Ok(self.push(value, shape.to_vec(), Op::Custom { parents: parents.to_vec(), backward }, rg))
    }
}

pub(crate) fn bilinear_taps<T: Real>(x: T, y: T, w: usize, h: usize) -> Sample4<T> {
    let xm = T::of((w - 1) as f64);
    let ym = T::of((h - 1) as f64);
    let x = if x.is_nan() { T::zero() } else { x.max(T::zero()).min(xm) };
    let y = if y.is_nan() { T::zero() } else { y.max(T::zero()).min(ym) };
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let x0 = x0.to_usize().unwrap_or(0).min(w - 1);
    let y0 = y0.to_usize().unwrap_or(0).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let one = T::one();
    Sample4 {
        idx: [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1],
        w: [(one - fx) * (one - fy), fx * (one - fy), (one - fx) * fy, fx * fy],
    }
}

/// `out[m×n] = a[m×k] · b[k×n]`, overwriting `out`.
pub(crate) fn matmul_into<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for v in out.iter_mut() {
        *v = T::zero();
    }
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(xs: &[usize], ws: &[usize], stride: usize, pad: usize) -> Self {
        let k = ws[2];
        let oh = (xs[2] + 2 * pad - k) / stride + 1;
        let ow = (xs[3] + 2 * pad - k) / stride + 1;
        ConvGeom { n: xs[0], c: xs[1], h: xs[2], w: xs[3], o: ws[0], k, stride, pad, oh, ow }
    }

    pub fn out_len(&self) -> usize {
        self.n * self.o * self.oh * self.ow
    }

    /// Output index range along one axis for which `out*stride + tap - pad` lies in `[0, len)`.
    pub fn valid(&self, tap: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = tap as isize - self.pad as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= len-1
        let hi_num = len as isize - 1 - off;
        let hi = if hi_num < 0 { -1 } else { hi_num / s };
        let lo = lo.max(0) as usize;
        let hi = (hi + 1).clamp(0, out_len as isize) as usize;
        (lo.min(hi), hi)
    }
}

pub(crate) fn conv_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], b: &[T], out: &mut [T]) {
    let (k, s) = (g.k, g.stride);
    for n in 0..g.n {
        for o in 0..g.o {
            let obase = (n * g.o + o) * g.oh * g.ow;
            for v in &mut out[obase..obase + g.oh * g.ow] {
                *v = b[o];
            }
            for c in 0..g.c {
                let xbase = (n * g.c + c) * g.h * g.w;
                for ky in 0..k {
                    let (y0, y1) = g.valid(ky, g.h, g.oh);
                    for kx in 0..k {
                        let wv = w[((o * g.c + c) * k + ky) * k + kx];
                        let (x0, x1) = g.valid(kx, g.w, g.ow);
                        for oy in y0..y1 {
                            let iy = oy * s + ky - g.pad;
                            let orow = &mut out[obase + oy * g.ow..obase + (oy + 1) * g.ow];
                            let xrow = &x[xbase + iy * g.w..xbase + (iy + 1) * g.w];
                            for ox in x0..x1 {
                                orow[ox] = orow[ox] + wv * xrow[ox * s + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
}
