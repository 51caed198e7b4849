//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records every operation as it is evaluated. Parameters live in a
//! [`ParamStore`] outside the tape and are bound per pass with [`Graph::param`];
//! a store can be frozen on a tape so its parameters behave as constants while
//! gradients still flow through them to upstream inputs.
//!
//! ```
//! use vanf::autodiff::Graph;
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.input(vec![1.0, 2.0, 3.0], &[3]).unwrap();
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap(), &[2.0, 4.0, 6.0]);
//! ```

mod backward;
pub mod gradcheck;
mod graph;
mod ops;
pub mod params;

pub use gradcheck::{grad_check, grad_check_params, GradCheckReport};
pub use graph::{CustomBackward, Gradients, Graph, Var};
pub use params::{Param, ParamId, ParamStore};

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::error::Error;

    const H: f64 = 1e-5;
    const TOL: f64 = 1e-4;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(lo..hi)).collect()
    }

    /// Weighted sum with fixed random weights so every output element matters.
    fn probe(g: &mut Graph<f64>, y: Var, seed: u64) -> crate::Result<Var> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = g.value(y).len();
        let shape = g.shape(y).to_vec();
        let w = g.constant(rand_vec(&mut rng, n, -1.0, 1.0), &shape)?;
        let p = g.mul(y, w)?;
        Ok(g.sum(p))
    }

    fn check(name: &str, x: &[f64], shape: &[usize], f: impl Fn(&mut Graph<f64>, Var) -> crate::Result<Var>) {
        let r = grad_check(name, |g, v| {
            let y = f(g, v)?;
            probe(g, y, 99)
        }, x, shape, H, TOL)
        .unwrap();
        assert!(r.passed, "{name}: {r:?}");
    }

    #[test]
    fn closed_forms() {
        let mut g = Graph::<f64>::new();
        let x = g.input(vec![0.0], &[1]).unwrap();
        let s = g.sigmoid(x);
        assert_eq!(g.scalar(s), 0.5);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[0.25]);

        let mut g = Graph::<f64>::new();
        let x = g.input(vec![0.0], &[1]).unwrap();
        let s = g.sigmoid(x);
        let l = g.log(s);
        let grads = g.backward(l).unwrap();
        assert!((grads.get(x).unwrap()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn quadratic_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.input(vec![1.0, 2.0, 3.0], &[3]).unwrap();
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.input(vec![1.0], &[1]).unwrap();
        let y = g.exp(x);
        g.backward(y).unwrap();
        assert!(matches!(g.backward(y), Err(Error::Validation(_))));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.input(vec![1.0, 2.0], &[2]).unwrap();
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(vec![0.0; 6], &[2, 3]).unwrap();
        let b = g.constant(vec![0.0; 6], &[3, 2]).unwrap();
        let msg = g.add(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
        let c = g.constant(vec![0.0; 4], &[2, 2]).unwrap();
        assert!(g.matmul(a, c).is_err());
    }

    #[test]
    fn bilinear_center_of_2x2() {
        let mut g = Graph::<f64>::new();
        let m = g.constant(vec![1.0, 2.0, 3.0, 4.0], &[1, 2, 2]).unwrap();
        let s = g.bilinear_sample(m, &[(0.5, 0.5), (-3.0, 0.0), (9.0, 9.0)]).unwrap();
        assert_eq!(g.value(s), &[2.5, 1.0, 4.0]);
    }

    #[test]
    fn identity_conv_kernel() {
        let mut g = Graph::<f64>::new();
        let vals: Vec<f64> = (0..16).map(|i| i as f64 * 0.5 - 3.0).collect();
        let x = g.constant(vals.clone(), &[1, 1, 4, 4]).unwrap();
        let w = g.constant(vec![1.0], &[1, 1, 1, 1]).unwrap();
        let b = g.constant(vec![0.0], &[1]).unwrap();
        let y = g.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 4, 4]);
        assert_eq!(g.value(y), vals.as_slice());
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (c, h, w, o, k) = (2, 5, 6, 3, 3);
        let xv = rand_vec(&mut rng, c * h * w, -1.0, 1.0);
        let wv = rand_vec(&mut rng, o * c * k * k, -1.0, 1.0);
        let bv = rand_vec(&mut rng, o, -1.0, 1.0);
        for (stride, pad) in [(1, 1), (2, 1), (2, 0), (1, 0)] {
            let mut g = Graph::<f64>::new();
            let x = g.constant(xv.clone(), &[1, c, h, w]).unwrap();
            let wt = g.constant(wv.clone(), &[o, c, k, k]).unwrap();
            let b = g.constant(bv.clone(), &[o]).unwrap();
            let y = g.conv2d(x, wt, b, stride, pad).unwrap();
            let s = g.shape(y).to_vec();
            for oc in 0..o {
                for oy in 0..s[2] {
                    for ox in 0..s[3] {
                        let mut acc = bv[oc];
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        acc += wv[((oc * c + ci) * k + ky) * k + kx]
                                            * xv[(ci * h + iy as usize) * w + ix as usize];
                                    }
                                }
                            }
                        }
                        let got = g.value(y)[(oc * s[2] + oy) * s[3] + ox];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn inputs_are_not_mutated() {
        let mut g = Graph::<f64>::new();
        let x = g.input(vec![0.3, -0.7], &[2]).unwrap();
        let before = g.value(x).to_vec();
        let e = g.exp(x);
        let t = g.tanh(e);
        let s = g.sum(t);
        g.backward(s).unwrap();
        assert_eq!(g.value(x), before.as_slice());
    }

    #[test]
    fn frozen_store_passes_gradient_through() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", &[1], vec![3.0]);
        let mut g = Graph::new();
        g.freeze(&store);
        let x = g.input(vec![2.0], &[1]).unwrap();
        let wv = g.param(&store, w);
        let y = g.mul(x, wv).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[3.0]);
        assert!(grads.for_store(&store)[0].is_none());
    }

    #[test]
    fn sabotaged_backward_is_caught() {
        let r = grad_check(
            "bad",
            |g, x| {
                let v: Vec<f64> = g.value(x).iter().map(|a| a * a).collect();
                let shape = g.shape(x).to_vec();
                // d(x²)/dx is 2x; claim 3x
                let y = g.custom(&[x], v, &shape, Box::new(|gy, vals, _| {
                    vec![Some(gy.iter().zip(vals[0]).map(|(g, x)| 3.0 * g * x).collect())]
                }))?;
                Ok(g.sum(y))
            },
            &[0.5, -1.0],
            &[2],
            H,
            TOL,
        )
        .unwrap();
        assert!(!r.passed);
    }

    fn primitive_suite(seed: u64, m: usize, n: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_vec(&mut rng, m * n, -1.5, 1.5);
        let pos = rand_vec(&mut rng, m * n, 0.2, 2.0);
        let b = rand_vec(&mut rng, m * n, -1.5, 1.5);
        let row = rand_vec(&mut rng, n, -1.0, 1.0);
        let col = rand_vec(&mut rng, m, -1.0, 1.0);
        let rhs = rand_vec(&mut rng, n * 3, -1.0, 1.0);
        let sh = [m, n];
        let cst = |g: &mut Graph<f64>, v: &[f64], s: &[usize]| g.constant(v.to_vec(), s).unwrap();

        check("add", &a, &sh, |g, x| { let c = cst(g, &b, &sh); g.add(x, c) });
        check("sub", &a, &sh, |g, x| { let c = cst(g, &b, &sh); g.sub(c, x) });
        check("mul", &a, &sh, |g, x| { let c = cst(g, &b, &sh); g.mul(x, c) });
        check("mul_self", &a, &sh, |g, x| g.mul(x, x));
        check("div_num", &a, &sh, |g, x| { let c = cst(g, &pos, &sh); g.div(x, c) });
        check("div_den", &pos, &sh, |g, x| { let c = cst(g, &b, &sh); g.div(c, x) });
        check("scale", &a, &sh, |g, x| Ok(g.scale(x, -1.7)));
        check("add_scalar", &a, &sh, |g, x| Ok(g.add_scalar(x, 0.3)));
        check("add_row_x", &a, &sh, |g, x| { let r = cst(g, &row, &[n]); g.add_row(x, r) });
        check("add_row_row", &row, &[1, n], |g, r| { let x = cst(g, &a, &sh); g.add_row(x, r) });
        check("mul_col_x", &a, &sh, |g, x| { let c = cst(g, &col, &[m, 1]); g.mul_col(x, c) });
        check("mul_col_col", &col, &[m, 1], |g, c| { let x = cst(g, &a, &sh); g.mul_col(x, c) });
        check("matmul_lhs", &a, &sh, |g, x| { let r = cst(g, &rhs, &[n, 3]); g.matmul(x, r) });
        check("matmul_rhs", &rhs, &[n, 3], |g, r| { let x = cst(g, &a, &sh); g.matmul(x, r) });
        check("transpose", &a, &sh, |g, x| g.transpose(x));
        check("relu", &a, &sh, |g, x| Ok(g.relu(x)));
        check("sigmoid", &a, &sh, |g, x| Ok(g.sigmoid(x)));
        check("softplus", &a, &sh, |g, x| Ok(g.softplus(x)));
        check("tanh", &a, &sh, |g, x| Ok(g.tanh(x)));
        check("exp", &a, &sh, |g, x| Ok(g.exp(x)));
        check("log", &pos, &sh, |g, x| Ok(g.log(x)));
        check("clamp", &a, &sh, |g, x| Ok(g.clamp(x, -1.0, 1.0)));
        check("sum", &a, &sh, |g, x| Ok(g.sum(x)));
        check("mean", &a, &sh, |g, x| Ok(g.mean(x)));
        check("sum_axis0", &a, &sh, |g, x| g.sum_axis(x, 0));
        check("sum_axis1", &a, &sh, |g, x| g.sum_axis(x, 1));
        check("concat0", &a, &sh, |g, x| { let c = cst(g, &b, &sh); g.concat(&[x, c, x], 0) });
        check("concat1", &a, &sh, |g, x| { let c = cst(g, &col, &[m, 1]); g.concat(&[c, x], 1) });
        check("slice", &a, &sh, |g, x| g.slice(x, 1, n / 3, n - n / 3));
        check("reshape", &a, &sh, |g, x| g.reshape(x, &[n, m]));
        check("gather", &a, &sh, |g, x| g.gather_rows(x, vec![m - 1, 0, m - 1]));
        check("cumsum", &a, &sh, |g, x| g.cumsum_exclusive(x));
        let coords: Vec<(f64, f64)> =
            (0..7).map(|_| (rng.gen_range(-0.5..n as f64), rng.gen_range(-0.5..m as f64))).collect();
        check("bilinear", &a, &[1, m, n], |g, x| g.bilinear_sample(x, &coords));
    }

    #[test]
    fn primitives_match_finite_differences() {
        primitive_suite(7, 4, 5);
        primitive_suite(8, 1, 3);
    }

    #[test]
    fn conv_and_upsample_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (c, h, w, o, k) = (2, 6, 5, 3, 3);
        let xv = rand_vec(&mut rng, c * h * w, -1.0, 1.0);
        let wv = rand_vec(&mut rng, o * c * k * k, -1.0, 1.0);
        let bv = rand_vec(&mut rng, o, -1.0, 1.0);
        for (stride, pad) in [(1, 1), (2, 1)] {
            check("conv_x", &xv, &[1, c, h, w], |g, x| {
                let wt = g.constant(wv.clone(), &[o, c, k, k])?;
                let b = g.constant(bv.clone(), &[o])?;
                g.conv2d(x, wt, b, stride, pad)
            });
            check("conv_w", &wv, &[o, c, k, k], |g, wt| {
                let x = g.constant(xv.clone(), &[1, c, h, w])?;
                let b = g.constant(bv.clone(), &[o])?;
                g.conv2d(x, wt, b, stride, pad)
            });
            check("conv_b", &bv, &[o], |g, b| {
                let x = g.constant(xv.clone(), &[1, c, h, w])?;
                let wt = g.constant(wv.clone(), &[o, c, k, k])?;
                g.conv2d(x, wt, b, stride, pad)
            });
        }
        check("upsample", &xv, &[1, c, h, w], |g, x| g.upsample2x(x));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn primitives_on_random_shapes(seed in 0u64..1000, m in 1usize..5, n in 3usize..7) {
            primitive_suite(seed, m, n);
        }

        #[test]
        fn gradients_are_deterministic(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = rand_vec(&mut rng, 12, -1.0, 1.0);
            let run = || {
                let mut g = Graph::<f64>::new();
                let x = g.input(a.clone(), &[3, 4]).unwrap();
                let t = g.tanh(x);
                let tt = g.transpose(t).unwrap();
                let y = g.matmul(t, tt).unwrap();
                let s = g.sum(y);
                g.backward(s).unwrap().get(x).unwrap().to_vec()
            };
            prop_assert_eq!(run(), run());
        }
    }
}
