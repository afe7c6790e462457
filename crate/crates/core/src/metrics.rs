//! Image quality metrics on linear intensities.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::types::Image;

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    let n = a.len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / n as f64)
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable Gaussian filter keeping only fully covered ("valid") windows.
fn filter_valid(img: &Image, g: &[f64; SSIM_WINDOW]) -> Image {
    let (h, w) = img.dim();
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let rows = Image::from_shape_fn((h, ow), |(y, x)| (0..SSIM_WINDOW).map(|k| g[k] * img[[y, x + k]]).sum());
    Image::from_shape_fn((oh, ow), |(y, x)| (0..SSIM_WINDOW).map(|k| g[k] * rows[[y + k, x]]).sum())
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5) and
/// dynamic range 1, averaged over fully covered windows.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    let (h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            window: SSIM_WINDOW,
        });
    }
    let g = gaussian_taps();
    let c1 = (K1 * 1.0f64).powi(2);
    let c2 = (K2 * 1.0f64).powi(2);
    let mu_a = filter_valid(a, &g);
    let mu_b = filter_valid(b, &g);
    let aa = filter_valid(&(a * a), &g);
    let bb = filter_valid(&(b * b), &g);
    let ab = filter_valid(&(a * b), &g);
    let mut total = 0.0;
    for (((&ma, &mb), (&saa, &sbb)), &sab) in mu_a
        .iter()
        .zip(mu_b.iter())
        .zip(aa.iter().zip(bb.iter()))
        .zip(ab.iter())
    {
        let va = saa - ma * ma;
        let vb = sbb - mb * mb;
        let cov = sab - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// Linear intensity `max(exp(L) - I0, 0)` of a log image.
pub fn log_to_intensity(log: &Image, i0: f64) -> Image {
    log.mapv(|l| (l.exp() - i0).max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub names: Vec<String>,
    pub mse: Vec<f64>,
    pub ssim: Vec<f64>,
}

impl MetricReport {
    pub fn evaluate(pairs: &[(String, Image, Image)]) -> Result<Self> {
        let mut r = MetricReport {
            names: Vec::new(),
            mse: Vec::new(),
            ssim: Vec::new(),
        };
        for (name, a, b) in pairs {
            r.names.push(name.clone());
            r.mse.push(mse(a, b)?);
            r.ssim.push(ssim(a, b)?);
        }
        Ok(r)
    }

    pub fn count(&self) -> usize {
        self.mse.len()
    }

    fn mean(v: &[f64]) -> f64 {
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }

    pub fn mean_mse(&self) -> f64 {
        Self::mean(&self.mse)
    }

    pub fn mean_ssim(&self) -> f64 {
        Self::mean(&self.ssim)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame,mse,ssim\n");
        for ((n, m), q) in self.names.iter().zip(&self.mse).zip(&self.ssim) {
            let _ = writeln!(s, "{n},{m:.9e},{q:.9}");
        }
        s
    }

    pub fn summary(&self) -> String {
        format!(
            "frames={} mean_mse={:.6e} mean_ssim={:.6}",
            self.count(),
            self.mean_mse(),
            self.mean_ssim()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64, h: usize, w: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_shape_fn((h, w), |_| rng.random::<f64>())
    }

    #[test]
    fn mse_examples() {
        let a = random(1, 8, 9);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let b = &a + 0.1;
        assert!((mse(&a, &b).unwrap() - 0.01).abs() < 1e-15);
        assert!(mse(&a, &random(2, 9, 8)).is_err());
        let c = random(3, 8, 9);
        assert_eq!(mse(&a, &c).unwrap(), mse(&c, &a).unwrap());
    }

    #[test]
    fn ssim_examples() {
        let a = random(4, 32, 24);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let grad = Image::from_shape_fn((32, 32), |(y, x)| ((x as f64 / 4.0).sin() * (y as f64 / 5.0).cos() + 1.0) / 2.0);
        let inv = grad.mapv(|v| 1.0 - v);
        assert!(ssim(&grad, &inv).unwrap() < 0.5);
        let b = random(5, 32, 24);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-15);
        assert!(matches!(ssim(&random(1, 5, 20), &random(2, 5, 20)), Err(Error::ImageTooSmall { .. })));
    }

    #[test]
    fn report_format() {
        let a = random(6, 12, 12);
        let r = MetricReport::evaluate(&[("f0".into(), a.clone(), a)]).unwrap();
        assert!(r.to_csv().starts_with("frame,mse,ssim\nf0,"));
        assert!(r.summary().contains("frames=1"));
    }
}
