use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{invalid, Error, Result};
use crate::networks::layers::Conv;
use crate::scalar::Real;

/// BCE inputs are clipped to `[VIS_CLIP, 1 − VIS_CLIP]` before the logs.
pub const VIS_CLIP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub rgb: f64,
    pub vgg: f64,
    pub adv: f64,
    pub vis: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { rgb: 10.0, vgg: 1.0, adv: 0.1, vis: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.rgb, self.vgg, self.adv, self.vis].iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(invalid("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

fn same_shape<T: Real>(g: &Graph<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::Shape { op, lhs: g.shape(a).to_vec(), rhs: g.shape(b).to_vec() });
    }
    Ok(())
}

/// Mean absolute error over all elements.
pub fn loss_rgb<T: Real>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    same_shape(g, "loss_rgb", pred, target)?;
    let d = g.sub(pred, target)?;
    let pos = g.relu(d);
    let nd = g.neg(d);
    let neg = g.relu(nd);
    let abs = g.add(pos, neg)?;
    Ok(g.mean(abs))
}

/// Mean pixel-wise binary cross entropy of prediction `v` against binary `target`.
pub fn loss_vis<T: Real>(g: &mut Graph<T>, v: Var, target: &[f64]) -> Result<Var> {
    let shape = g.shape(v).to_vec();
    if shape.iter().product::<usize>() != target.len() {
        return Err(Error::Shape { op: "loss_vis", lhs: shape, rhs: vec![target.len()] });
    }
    let t = g.constant_f64(target, &shape)?;
    let vc = g.clamp(v, T::of(VIS_CLIP), T::of(1.0 - VIS_CLIP));
    let lv = g.log(vc);
    let om = g.one_minus(vc);
    let lom = g.log(om);
    let a = g.mul(t, lv)?;
    let omt = g.one_minus(t);
    let b = g.mul(omt, lom)?;
    let s = g.add(a, b)?;
    let m = g.mean(s);
    Ok(g.neg(m))
}

/// Non-saturating generator loss `softplus(−logit)`, averaged.
pub fn loss_adv_generator<T: Real>(g: &mut Graph<T>, logit_fake: Var) -> Var {
    let n = g.neg(logit_fake);
    let s = g.softplus(n);
    g.mean(s)
}

/// `softplus(−logit_real) + softplus(logit_fake)`, averaged.
pub fn loss_adv_discriminator<T: Real>(g: &mut Graph<T>, logit_real: Var, logit_fake: Var) -> Result<Var> {
    let n = g.neg(logit_real);
    let a = g.softplus(n);
    let a = g.mean(a);
    let b = g.softplus(logit_fake);
    let b = g.mean(b);
    g.add(a, b)
}

/// Frozen, randomly initialized conv features standing in for a pretrained
/// perceptual network: `3→8 (s1) → 16 (s2) → 16 (s2)`, compared after layers 1 and 3.
pub struct Perceptual<T> {
    convs: [Conv; 3],
    pub store: ParamStore<T>,
}

impl<T: Real> Perceptual<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let convs = [
            Conv::new(&mut store, "perc.0", 3, 8, 3, 1, &mut rng),
            Conv::new(&mut store, "perc.1", 8, 16, 3, 2, &mut rng),
            Conv::new(&mut store, "perc.2", 16, 16, 3, 2, &mut rng),
        ];
        Perceptual { convs, store }
    }

    fn features(&self, g: &mut Graph<T>, x: Var) -> Result<[Var; 2]> {
        let a = self.convs[0].forward(g, &self.store, x)?;
        let a = g.relu(a);
        let b = self.convs[1].forward(g, &self.store, a)?;
        let b = g.relu(b);
        let c = self.convs[2].forward(g, &self.store, b)?;
        let c = g.relu(c);
        Ok([a, c])
    }

    /// Sum over both depths of the feature mean squared error; inputs `[1, 3, H, W]`.
    pub fn loss(&self, g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
        same_shape(g, "loss_perc", pred, target)?;
        g.freeze(&self.store);
        let fp = self.features(g, pred)?;
        let ft = self.features(g, target)?;
        let mut total = None;
        for (p, t) in fp.into_iter().zip(ft) {
            let d = g.sub(p, t)?;
            let sq = g.mul(d, d)?;
            let m = g.mean(sq);
            total = Some(match total {
                None => m,
                Some(acc) => g.add(acc, m)?,
            });
        }
        Ok(total.expect("two depths"))
    }
}
