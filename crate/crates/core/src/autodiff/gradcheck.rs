//! Central-difference gradient checks.

use serde::Serialize;

use crate::error::{invalid, Result};

use super::graph::Graph;
use super::params::ParamStore;
use super::Var;

/// Denominator floor for the relative error, so exact zeros compare absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub tol: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn report(name: &str, pairs: &[(f64, f64)], tol: f64) -> GradCheckReport {
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut finite = true;
    for &(a, n) in pairs {
        finite &= a.is_finite() && n.is_finite();
        max_rel = max_rel.max(relative_error(a, n));
        max_abs = max_abs.max((a - n).abs());
    }
    GradCheckReport {
        name: name.to_string(),
        checked: pairs.len(),
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        tol,
        passed: finite && max_rel < tol,
    }
}

fn scalar_of(g: &Graph<f64>, v: Var) -> Result<f64> {
    let val = g.value(v);
    if val.len() != 1 {
        return Err(invalid(format!("grad_check needs a scalar function, got shape {:?}", g.shape(v))));
    }
    Ok(val[0])
}

/// Compares `d f / d x` from the tape with central differences at step `h`.
pub fn grad_check<F>(name: &str, f: F, x: &[f64], shape: &[usize], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.input(x.to_vec(), shape)?;
    let y = f(&mut g, xv)?;
    scalar_of(&g, y)?;
    let grads = g.backward(y)?;
    let analytic = grads.get_or_zero(&g, xv);
    let eval = |xs: Vec<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(xs, shape)?;
        let y = f(&mut g, v)?;
        scalar_of(&g, y)
    };
    let mut pairs = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut plus = x.to_vec();
        plus[i] += h;
        let mut minus = x.to_vec();
        minus[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        pairs.push((analytic[i], numeric));
    }
    Ok(report(name, &pairs, tol))
}

/// Same check over parameters of `store`. `entries` selects `(param index, element)`
/// pairs; `None` checks every scalar.
pub fn grad_check_params<F>(
    name: &str,
    f: F,
    store: &ParamStore<f64>,
    entries: Option<&[(usize, usize)]>,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let y = f(&mut g, store)?;
    scalar_of(&g, y)?;
    let grads = g.backward(y)?;
    let analytic = grads.for_store(store);
    let all: Vec<(usize, usize)>;
    let entries = match entries {
        Some(e) => e,
        None => {
            all = store
                .iter()
                .flat_map(|(id, p)| (0..p.values.len()).map(move |k| (id.0, k)))
                .collect();
            &all
        }
    };
    let mut work = store.clone();
    let mut pairs = Vec::with_capacity(entries.len());
    for &(pi, k) in entries {
        let id = super::ParamId(pi);
        let x0 = work.get(id).values[k];
        work.get_mut(id).values[k] = x0 + h;
        let mut gp = Graph::new();
        let yp = f(&mut gp, &work)?;
        let fp = scalar_of(&gp, yp)?;
        work.get_mut(id).values[k] = x0 - h;
        let mut gm = Graph::new();
        let ym = f(&mut gm, &work)?;
        let fm = scalar_of(&gm, ym)?;
        work.get_mut(id).values[k] = x0;
        let a = analytic[pi].as_ref().map_or(0.0, |g| g[k]);
        pairs.push((a, (fp - fm) / (2.0 * h)));
    }
    Ok(report(name, &pairs, tol))
}
