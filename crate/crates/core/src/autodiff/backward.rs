//! Reverse-mode rules for every primitive.

use crate::scalar::{sigmoid, Real};

use super::graph::{Graph, Op};
use super::ops::{split_axis, ConvGeom};

impl<T: Real> Graph<T> {
    pub(crate) fn backprop_node(&self, i: usize, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gy.to_vec());
                self.accumulate(grads, *b, gy.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gy.to_vec());
                self.accumulate(grads, *b, gy.iter().map(|&g| -g).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, gy.iter().zip(vb).map(|(&g, &x)| g * x).collect());
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, gy.iter().zip(va).map(|(&g, &x)| g * x).collect());
                }
            }
            Op::Div(a, b) => {
                let vb = self.value(*b);
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, gy.iter().zip(vb).map(|(&g, &d)| g / d).collect());
                }
                if self.requires_grad(*b) {
                    // d(a/b)/db = -y/b
                    let gb = gy.iter().zip(y).zip(vb).map(|((&g, &q), &d)| -g * q / d).collect();
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, gy.iter().map(|&g| g * *c).collect()),
            Op::AddScalar(a) => self.accumulate(grads, *a, gy.to_vec()),
            Op::AddRow(x, row) => {
                self.accumulate(grads, *x, gy.to_vec());
                let n = self.value(*row).len();
                self.accumulate_with(grads, *row, |g| {
                    for chunk in gy.chunks(n) {
                        for (a, &b) in g.iter_mut().zip(chunk) {
                            *a = *a + b;
                        }
                    }
                });
            }
            Op::MulCol(x, col) => {
                let n = self.shape(*x)[1];
                let c = self.value(*col);
                if self.requires_grad(*x) {
                    let gx = gy
                        .chunks(n.max(1))
                        .zip(c)
                        .flat_map(|(row, &s)| row.iter().map(move |&g| g * s))
                        .collect();
                    self.accumulate(grads, *x, gx);
                }
                if self.requires_grad(*col) {
                    let xv = self.value(*x);
                    let gc = gy
                        .chunks(n.max(1))
                        .zip(xv.chunks(n.max(1)))
                        .map(|(g, xr)| g.iter().zip(xr).fold(T::zero(), |acc, (&a, &b)| acc + a * b))
                        .collect();
                    self.accumulate(grads, *col, gc);
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    // dA = dY · Bᵀ
                    self.accumulate_with(grads, *a, |ga| {
                        for i in 0..m {
                            let grow = &gy[i * n..(i + 1) * n];
                            for p in 0..k {
                                let brow = &vb[p * n..(p + 1) * n];
                                let s = grow.iter().zip(brow).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
                                ga[i * k + p] = ga[i * k + p] + s;
                            }
                        }
                    });
                }
                if self.requires_grad(*b) {
                    // dB = Aᵀ · dY
                    self.accumulate_with(grads, *b, |gb| {
                        for i in 0..m {
                            let grow = &gy[i * n..(i + 1) * n];
                            for p in 0..k {
                                let aip = va[i * k + p];
                                if aip == T::zero() {
                                    continue;
                                }
                                let brow = &mut gb[p * n..(p + 1) * n];
                                for (o, &g) in brow.iter_mut().zip(grow) {
                                    *o = *o + aip * g;
                                }
                            }
                        }
                    });
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                self.accumulate_with(grads, *a, |ga| {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] = ga[i * n + j] + gy[j * m + i];
                        }
                    }
                });
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let geom = ConvGeom::new(self.shape(*x), self.shape(*w), *stride, *pad);
                self.conv_backward(&geom, *x, *w, *b, gy, grads);
            }
            Op::Upsample2x(x) => {
                let s = self.shape(*x);
                let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
                self.accumulate_with(grads, *x, |gx| {
                    for p in 0..nc {
                        for yy in 0..2 * h {
                            for xx in 0..2 * w {
                                let src = (p * h + yy / 2) * w + xx / 2;
                                gx[src] = gx[src] + gy[(p * 2 * h + yy) * 2 * w + xx];
                            }
                        }
                    }
                });
            }
            Op::Relu(a) => {
                let g = gy.iter().zip(y).map(|(&g, &v)| if v > T::zero() { g } else { T::zero() }).collect();
                self.accumulate(grads, *a, g);
            }
            Op::Sigmoid(a) => {
                let g = gy.iter().zip(y).map(|(&g, &s)| g * s * (T::one() - s)).collect();
                self.accumulate(grads, *a, g);
            }
            Op::Softplus(a) => {
                let x = self.value(*a);
                let g = gy.iter().zip(x).map(|(&g, &v)| g * sigmoid(v)).collect();
                self.accumulate(grads, *a, g);
            }
            Op::Tanh(a) => {
                let g = gy.iter().zip(y).map(|(&g, &t)| g * (T::one() - t * t)).collect();
                self.accumulate(grads, *a, g);
            }
            Op::Exp(a) => {
                let g = gy.iter().zip(y).map(|(&g, &e)| g * e).collect();
                self.accumulate(grads, *a, g);
            }
            Op::Log(a) => {
                let x = self.value(*a);
                let g = gy.iter().zip(x).map(|(&g, &v)| g / v).collect();
                self.accumulate(grads, *a, g);
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a);
                let g = gy
                    .iter()
                    .zip(x)
                    .map(|(&g, &v)| if v >= *lo && v <= *hi { g } else { T::zero() })
                    .collect();
                self.accumulate(grads, *a, g);
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![gy[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![gy[0] / T::of(n as f64); n]);
            }
            Op::SumAxis { x, axis } => {
                let (outer, dim, inner) = split_axis(self.shape(*x), *axis);
                self.accumulate_with(grads, *x, |gx| {
                    for o in 0..outer {
                        for d in 0..dim {
                            let dst = &mut gx[(o * dim + d) * inner..(o * dim + d + 1) * inner];
                            for (a, &b) in dst.iter_mut().zip(&gy[o * inner..(o + 1) * inner]) {
                                *a = *a + b;
                            }
                        }
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(&node.shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let d = self.shape(p)[*axis];
                    self.accumulate_with(grads, p, |gp| {
                        for o in 0..outer {
                            let src = &gy[(o * total + offset) * inner..(o * total + offset + d) * inner];
                            for (a, &b) in gp[o * d * inner..(o + 1) * d * inner].iter_mut().zip(src) {
                                *a = *a + b;
                            }
                        }
                    });
                    offset += d;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, dim, inner) = split_axis(self.shape(*x), *axis);
                let len = node.shape[*axis];
                self.accumulate_with(grads, *x, |gx| {
                    for o in 0..outer {
                        let dst = &mut gx[(o * dim + start) * inner..(o * dim + start + len) * inner];
                        for (a, &b) in dst.iter_mut().zip(&gy[o * len * inner..(o + 1) * len * inner]) {
                            *a = *a + b;
                        }
                    }
                });
            }
            Op::Reshape(x) => self.accumulate(grads, *x, gy.to_vec()),
            Op::GatherRows { x, rows } => {
                let n = self.shape(*x)[1];
                self.accumulate_with(grads, *x, |gx| {
                    for (k, &r) in rows.iter().enumerate() {
                        for j in 0..n {
                            gx[r * n + j] = gx[r * n + j] + gy[k * n + j];
                        }
                    }
                });
            }
            Op::Bilinear { map, samples } => {
                let s = self.shape(*map);
                let (c, hw) = if s.len() == 4 { (s[1], s[2] * s[3]) } else { (s[0], s[1] * s[2]) };
                self.accumulate_with(grads, *map, |gm| {
                    for (n, sm) in samples.iter().enumerate() {
                        for ch in 0..c {
                            let g = gy[n * c + ch];
                            for k in 0..4 {
                                let idx = ch * hw + sm.idx[k];
                                gm[idx] = gm[idx] + sm.w[k] * g;
                            }
                        }
                    }
                });
            }
            Op::CumsumExclusive(x) => {
                let n = *node.shape.last().unwrap();
                // dx_j = Σ_{i>j} dy_i
                let mut gx = vec![T::zero(); gy.len()];
                for (src, dst) in gy.chunks(n.max(1)).zip(gx.chunks_mut(n.max(1))) {
                    let mut acc = T::zero();
                    for j in (0..src.len()).rev() {
                        dst[j] = acc;
                        acc = acc + src[j];
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Custom { parents, backward } => {
                let vals: Vec<&[T]> = parents.iter().map(|p| self.value(*p)).collect();
                let gs = backward(gy, &vals, y);
                for (p, g) in parents.iter().zip(gs) {
                    if let Some(g) = g {
                        self.accumulate(grads, *p, g);
                    }
                }
            }
        }
    }

    fn conv_backward(
        &self,
        g: &ConvGeom,
        x: super::Var,
        w: super::Var,
        b: super::Var,
        gy: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let (k, s) = (g.k, g.stride);
        let xv = self.value(x);
        let wv = self.value(w);
        if self.requires_grad(b) {
            self.accumulate_with(grads, b, |gb| {
                for n in 0..g.n {
                    for o in 0..g.o {
                        let base = (n * g.o + o) * g.oh * g.ow;
                        gb[o] = gy[base..base + g.oh * g.ow].iter().fold(gb[o], |acc, &v| acc + v);
                    }
                }
            });
        }
        if self.requires_grad(w) {
            self.accumulate_with(grads, w, |gw| {
                for n in 0..g.n {
                    for o in 0..g.o {
                        let obase = (n * g.o + o) * g.oh * g.ow;
                        for c in 0..g.c {
                            let xbase = (n * g.c + c) * g.h * g.w;
                            for ky in 0..k {
                                let (y0, y1) = g.valid(ky, g.h, g.oh);
                                for kx in 0..k {
                                    let (x0, x1) = g.valid(kx, g.w, g.ow);
                                    let mut acc = T::zero();
                                    for oy in y0..y1 {
                                        let iy = oy * s + ky - g.pad;
                                        let grow = &gy[obase + oy * g.ow..obase + (oy + 1) * g.ow];
                                        let xrow = &xv[xbase + iy * g.w..xbase + (iy + 1) * g.w];
                                        for ox in x0..x1 {
                                            acc = acc + grow[ox] * xrow[ox * s + kx - g.pad];
                                        }
                                    }
                                    let wi = ((o * g.c + c) * k + ky) * k + kx;
                                    gw[wi] = gw[wi] + acc;
                                }
                            }
                        }
                    }
                }
            });
        }
        if self.requires_grad(x) {
            self.accumulate_with(grads, x, |gx| {
                for n in 0..g.n {
                    for o in 0..g.o {
                        let obase = (n * g.o + o) * g.oh * g.ow;
                        for c in 0..g.c {
                            let xbase = (n * g.c + c) * g.h * g.w;
                            for ky in 0..k {
                                let (y0, y1) = g.valid(ky, g.h, g.oh);
                                for kx in 0..k {
                                    let wval = wv[((o * g.c + c) * k + ky) * k + kx];
                                    let (x0, x1) = g.valid(kx, g.w, g.ow);
                                    for oy in y0..y1 {
                                        let iy = oy * s + ky - g.pad;
                                        let grow = &gy[obase + oy * g.ow..obase + (oy + 1) * g.ow];
                                        let xrow = &mut gx[xbase + iy * g.w..xbase + (iy + 1) * g.w];
                                        for ox in x0..x1 {
                                            let ix = ox * s + kx - g.pad;
                                            xrow[ix] = xrow[ix] + wval * grow[ox];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            });
        }
    }
}
