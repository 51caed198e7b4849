//! Planar RGB images, PPM I/O and image-quality metrics.

use std::path::Path;

use crate::error::{invalid, io_err, Error, Result};
use crate::visibility::{parse_netpbm, VisibilityMap};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// Planar `[3, H, W]` image with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<RgbImage> {
        if data.len() != 3 * width * height {
            return Err(invalid(format!("{}x{} image needs {} values, got {}", width, height, 3 * width * height, data.len())));
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> RgbImage {
        RgbImage { width, height, data: vec![0.0; 3 * width * height] }
    }

    pub fn pixel(&self, col: usize, row: usize) -> [f64; 3] {
        let n = self.width * self.height;
        let i = row * self.width + col;
        [self.data[i], self.data[n + i], self.data[2 * n + i]]
    }

    /// Rounds every value to the nearest 8-bit level.
    pub fn quantized(&self) -> RgbImage {
        let data = self.data.iter().map(|&v| to_byte(v) as f64 / 255.0).collect();
        RgbImage { data, ..*self }
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let n = self.width * self.height;
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for i in 0..n {
            for c in 0..3 {
                out.push(to_byte(self.data[c * n + i]));
            }
        }
        out
    }

    pub fn from_ppm(bytes: &[u8], path: &Path) -> Result<RgbImage> {
        let (w, h, payload) = parse_netpbm(bytes, b"P6", path)?;
        if payload.len() != 3 * w * h {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                reason: format!("expected {} bytes of pixel data, found {}", 3 * w * h, payload.len()),
            });
        }
        let n = w * h;
        let mut data = vec![0.0; 3 * n];
        for i in 0..n {
            for c in 0..3 {
                data[c * n + i] = payload[3 * i + c] as f64 / 255.0;
            }
        }
        Ok(RgbImage { width: w, height: h, data })
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_ppm()).map_err(io_err(path))
    }

    pub fn read_ppm(path: &Path) -> Result<RgbImage> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        RgbImage::from_ppm(&bytes, path)
    }

    /// Pixels with any non-zero channel.
    pub fn foreground(&self) -> VisibilityMap {
        VisibilityMap::from_fn(self.width, self.height, |c, r| {
            if self.pixel(c, r).iter().any(|&v| v > 0.0) {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Copy with a centered black square of side `round(ratio · min(W, H))`.
    pub fn occluded_center(&self, ratio: f64) -> RgbImage {
        let side = (ratio * self.width.min(self.height) as f64).round() as usize;
        let (c0, r0) = ((self.width - side) / 2, (self.height - side) / 2);
        let n = self.width * self.height;
        let mut out = self.clone();
        for r in r0..r0 + side {
            for c in c0..c0 + side {
                for ch in 0..3 {
                    out.data[ch * n + r * self.width + c] = 0.0;
                }
            }
        }
        out
    }

    fn check_same(&self, other: &RgbImage) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(invalid(format!(
                "images differ in size: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn mse(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    a.check_same(b)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64)
}

/// Mean of |a − b| over all values.
pub fn l1(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    a.check_same(b)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data.len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// PSNR restricted to pixels where `mask` is set; `None` for an empty mask.
pub fn masked_psnr(a: &RgbImage, b: &RgbImage, mask: &VisibilityMap) -> Result<Option<f64>> {
    a.check_same(b)?;
    if mask.width != a.width || mask.height != a.height {
        return Err(invalid("mask and image sizes differ"));
    }
    let n = a.width * a.height;
    let (mut sum, mut count) = (0.0, 0usize);
    for i in (0..n).filter(|&i| mask.data[i] > 0.5) {
        for c in 0..3 {
            let d = a.data[c * n + i] - b.data[c * n + i];
            sum += d * d;
        }
        count += 3;
    }
    Ok((count > 0).then(|| psnr_from_mse(sum / count as f64)))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM over channels and every window position fully inside the image.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    a.check_same(b)?;
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(invalid(format!("SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")));
    }
    let g = gaussian_window();
    let (c1, c2) = ((SSIM_K1).powi(2), (SSIM_K2).powi(2));
    let n = w * h;
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for ch in 0..3 {
        let x = &a.data[ch * n..(ch + 1) * n];
        let y = &b.data[ch * n..(ch + 1) * n];
        for r0 in 0..oh {
            for c0 in 0..ow {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (i, gi) in g.iter().enumerate() {
                    for (j, gj) in g.iter().enumerate() {
                        let k = (r0 + i) * w + c0 + j;
                        let wt = gi * gj;
                        mx += wt * x[k];
                        my += wt * y[k];
                        sxx += wt * x[k] * x[k];
                        syy += wt * y[k] * y[k];
                        sxy += wt * x[k] * y[k];
                    }
                }
                let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
    }
    Ok(total / (3 * ow * oh) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> RgbImage {
        let data = (0..3 * w * h).map(|i| ((i * 31) % 97) as f64 / 96.0).collect();
        RgbImage::new(w, h, data).unwrap()
    }

    #[test]
    fn psnr_closed_forms() {
        let a = ramp(12, 12);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let z = RgbImage::new(4, 4, vec![0.3; 48]).unwrap();
        let o = RgbImage::new(4, 4, vec![0.4; 48]).unwrap();
        assert!((psnr(&z, &o).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&z, &ramp(5, 4)).is_err());
    }

    #[test]
    fn ssim_identity_and_bounds() {
        let a = ramp(16, 14);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let b = RgbImage::new(16, 14, a.data.iter().map(|v| 1.0 - v).collect()).unwrap();
        let s = ssim(&a, &b).unwrap();
        assert!(s < 0.5 && s >= -1.0);
        assert!(ssim(&ramp(8, 8), &ramp(8, 8)).is_err());
    }

    #[test]
    fn ppm_round_trip_is_exact_on_quantized_images() {
        let a = ramp(5, 3).quantized();
        let b = RgbImage::from_ppm(&a.to_ppm(), Path::new("x.ppm")).unwrap();
        assert_eq!(a, b);
        assert!(RgbImage::from_ppm(b"P6\n2 2\n255\n\x01", Path::new("x.ppm")).is_err());
    }

    #[test]
    fn center_occlusion_side() {
        let a = RgbImage::new(10, 10, vec![1.0; 300]).unwrap();
        let o = a.occluded_center(0.2);
        assert_eq!(o.foreground().count_ones(), 96);
        assert_eq!(o.pixel(4, 4), [0.0; 3]);
        assert_eq!(o.pixel(3, 4), [1.0; 3]);
        assert_eq!(a.occluded_center(0.0), a);
    }

    #[test]
    fn masked_psnr_ignores_background() {
        let a = RgbImage::new(2, 1, vec![0.5, 0.0, 0.5, 0.0, 0.5, 0.0]).unwrap();
        let b = RgbImage::new(2, 1, vec![0.6, 1.0, 0.6, 1.0, 0.6, 1.0]).unwrap();
        let m = VisibilityMap { width: 2, height: 1, data: vec![1.0, 0.0] };
        assert!((masked_psnr(&a, &b, &m).unwrap().unwrap() - 20.0).abs() < 1e-9);
        let empty = VisibilityMap::zeros(2, 1);
        assert_eq!(masked_psnr(&a, &b, &empty).unwrap(), None);
    }
}
