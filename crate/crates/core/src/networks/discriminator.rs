use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Conv, Linear};
use super::NetConfig;
use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::{invalid, Result};
use crate::scalar::Real;

/// Input channels: input-view crop, target crop, and two 3-channel correspondence maps.
pub const DISC_INPUT_CHANNELS: usize = 12;

/// Conditional discriminator with a realness logit and a per-pixel visibility map.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub trunk: [Conv; 4],
    pub logit: Linear,
    /// Four upsample+conv stages back to the patch size; empty without the
    /// visibility head.
    pub decoder: Vec<Conv>,
}

#[derive(Clone, Copy, Debug)]
pub struct DiscOutput {
    /// `[1]`
    pub logit: Var,
    /// `[1, 1, P, P]` in (0, 1).
    pub vis_map: Option<Var>,
}

impl Discriminator {
    pub fn new<T: Real>(config: &NetConfig, seed: u64) -> (Discriminator, ParamStore<T>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let c = config.disc_channels;
        let trunk = [
            Conv::new(&mut s, "disc.0", DISC_INPUT_CHANNELS, c, 3, 2, &mut rng),
            Conv::new(&mut s, "disc.1", c, c, 3, 2, &mut rng),
            Conv::new(&mut s, "disc.2", c, c, 3, 2, &mut rng),
            Conv::new(&mut s, "disc.3", c, c, 3, 2, &mut rng),
        ];
        let logit = Linear::new(&mut s, "disc.logit", c, 1, &mut rng);
        let decoder = if config.disc_visibility_head {
            (0..4)
                .map(|i| Conv::new(&mut s, &format!("disc.vis.{i}"), c, if i == 3 { 1 } else { c }, 3, 1, &mut rng))
                .collect()
        } else {
            Vec::new()
        };
        (Discriminator { trunk, logit, decoder }, s)
    }

    pub fn has_visibility_head(&self) -> bool {
        !self.decoder.is_empty()
    }

    /// Scores `target` as a view of the scene in `input`. All three tensors are
    /// `[1, C, P, P]` with `P` a multiple of 16 and channel counts 3, 3, 6.
    pub fn discriminate<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        input: Var,
        target: Var,
        correspondence: Var,
    ) -> Result<DiscOutput> {
        let si = g.shape(input).to_vec();
        let p = match si.as_slice() {
            [1, 3, h, w] if h == w && h % 16 == 0 && *h > 0 => *h,
            _ => return Err(invalid(format!("discriminator input must be [1, 3, P, P] with P a multiple of 16, got {si:?}"))),
        };
        let st = g.shape(target).to_vec();
        if st != [1, 3, p, p] {
            return Err(crate::Error::Shape { op: "discriminate", lhs: si, rhs: st });
        }
        let sc = g.shape(correspondence).to_vec();
        if sc != [1, 6, p, p] {
            return Err(crate::Error::Shape { op: "discriminate", lhs: si, rhs: sc });
        }
        let mut x = g.concat(&[input, target, correspondence], 1)?;
        for conv in &self.trunk {
            x = conv.forward(g, store, x)?;
            x = g.relu(x);
        }
        let s = g.shape(x).to_vec();
        let (c, cells) = (s[1], s[2] * s[3]);
        let flat = g.reshape(x, &[c, cells])?;
        let pooled = g.sum_axis(flat, 1)?;
        let pooled = g.scale(pooled, T::of(1.0 / cells as f64));
        let pooled = g.reshape(pooled, &[1, c])?;
        let logit = self.logit.forward(g, store, pooled)?;
        let logit = g.reshape(logit, &[1])?;

        let vis_map = if self.has_visibility_head() {
            let mut y = x;
            let last = self.decoder.len() - 1;
            for (i, conv) in self.decoder.iter().enumerate() {
                y = g.upsample2x(y)?;
                y = conv.forward(g, store, y)?;
                if i < last {
                    y = g.relu(y);
                }
            }
            Some(g.sigmoid(y))
        } else {
            None
        };
        Ok(DiscOutput { logit, vis_map })
    }

    pub fn groups(&self) -> Vec<(&'static str, Vec<ParamId>)> {
        let mut out = vec![
            ("disc_trunk", self.trunk.iter().flat_map(|c| [c.w, c.b]).collect()),
            ("disc_logit", vec![self.logit.w, self.logit.b]),
        ];
        if self.has_visibility_head() {
            out.push(("disc_visibility", self.decoder.iter().flat_map(|c| [c.w, c.b]).collect()));
        }
        out
    }
}
