use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{invalid, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Fractions of the total step count at which the rate halves.
    pub milestones: Vec<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, milestones: vec![0.1, 0.25, 0.5, 0.75] }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(invalid("optimizer needs lr > 0, betas in [0, 1) and eps > 0"));
        }
        if self.milestones.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(invalid("milestones are fractions of the run in [0, 1]"));
        }
        Ok(())
    }

    /// Rate for 0-based `step` of a `total`-step run: halved once per milestone reached.
    pub fn lr_at(&self, step: u64, total: u64) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| step >= (m * total as f64).round() as u64).count();
        self.lr * 0.5f64.powi(passed as i32)
    }
}

/// Adam moments for one parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    /// Updates applied so far.
    pub t: u64,
    /// Updates skipped because of non-finite gradients.
    pub skipped: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|(_, p)| vec![T::zero(); p.values.len()]).collect::<Vec<_>>();
        Adam { m: zeros(), v: zeros(), t: 0, skipped: 0 }
    }

    /// Applies one update; parameters without a gradient are treated as having zero
    /// gradient. Returns `false` (and changes nothing but the skip counter) when any
    /// gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Vec<T>>], lr: f64, cfg: &OptimConfig) -> bool {
        assert_eq!(grads.len(), self.m.len(), "gradient list does not match the store");
        if grads.iter().flatten().flatten().any(|g| !g.is_finite()) {
            self.skipped += 1;
            return false;
        }
        self.t += 1;
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        let one = T::one();
        let c1 = T::of(1.0 - cfg.beta1.powi(self.t as i32));
        let c2 = T::of(1.0 - cfg.beta2.powi(self.t as i32));
        let (lr, eps) = (T::of(lr), T::of(cfg.eps));
        for (i, p) in store.iter_mut().enumerate() {
            let g = grads[i].as_deref();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..p.values.len() {
                let gk = g.map_or(T::zero(), |g| g[k]);
                m[k] = b1 * m[k] + (one - b1) * gk;
                v[k] = b2 * v[k] + (one - b2) * gk * gk;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                p.values[k] = p.values[k] - lr * mh / (vh.sqrt() + eps);
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamId;

    fn store() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("a", &[2], vec![1.0, -1.0]);
        s.add("b", &[1], vec![0.5]);
        s
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut s = store();
        let mut opt = Adam::new(&s);
        let cfg = OptimConfig::default();
        assert!(opt.step(&mut s, &[Some(vec![3.0, -0.01]), None], 0.1, &cfg));
        let a = &s.get(ParamId(0)).values;
        assert!((a[0] - 0.9).abs() < 1e-6 && (a[1] + 0.9).abs() < 1e-5);
        assert_eq!(s.get(ParamId(1)).values, vec![0.5]);
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn matches_reference_recurrence() {
        let cfg = OptimConfig::default();
        let mut s = store();
        let mut opt = Adam::new(&s);
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=5 {
            let g = 2.0 * x;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.01 * mh / (vh.sqrt() + 1e-8);
            let cur = s.get(ParamId(0)).values[0];
            opt.step(&mut s, &[Some(vec![2.0 * cur, 0.0]), None], 0.01, &cfg);
            assert!((s.get(ParamId(0)).values[0] - x).abs() < 1e-14);
        }
    }

    #[test]
    fn non_finite_gradient_skips() {
        let mut s = store();
        let before = s.clone();
        let mut opt = Adam::new(&s);
        assert!(!opt.step(&mut s, &[Some(vec![f64::NAN, 0.0]), None], 0.1, &OptimConfig::default()));
        assert_eq!(s, before);
        assert_eq!((opt.t, opt.skipped), (0, 1));
        assert!(opt.m.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn rate_halves_at_milestones() {
        let cfg = OptimConfig::default();
        let lrs: Vec<f64> = [0, 9, 10, 24, 25, 49, 50, 74, 75, 99].iter().map(|&s| cfg.lr_at(s, 100)).collect();
        let want = [1.0, 1.0, 0.5, 0.5, 0.25, 0.25, 0.125, 0.125, 0.0625, 0.0625];
        for (l, w) in lrs.iter().zip(want) {
            assert!((l - w * 1e-3).abs() < 1e-18);
        }
        assert!(OptimConfig { lr: 0.0, ..cfg.clone() }.validate().is_err());
        assert!(OptimConfig { milestones: vec![1.5], ..cfg }.validate().is_err());
    }
}
