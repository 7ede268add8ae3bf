//! Fidelity metrics for restored signals and images.

use ndarray::{Array1, ArrayView2};

use crate::{Error, Result};

/// Metrics of a reconstruction against a reference.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub mse: f64,
    /// `10 log10(peak^2 / mse)`; infinity flags exact equality.
    pub psnr_db: f64,
    /// Mean SSIM; only computed for image-shaped data.
    pub ssim: Option<f64>,
}

impl MetricReport {
    /// Computes MSE and PSNR, plus SSIM when `image_shape` is given and the
    /// 7-pixel window fits.
    pub fn compute(
        x: &Array1<f64>,
        reference: &Array1<f64>,
        peak: f64,
        image_shape: Option<(usize, usize)>,
    ) -> Result<Self> {
        let mse_v = mse(x, reference)?;
        let psnr_db = psnr(x, reference, peak)?;
        let ssim_v = match image_shape {
            Some((h, w)) if h >= 7 && w >= 7 && h * w == x.len() => {
                let a = ndarray::ArrayView2::from_shape((h, w), x.as_slice().unwrap())
                    .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
                let b = ndarray::ArrayView2::from_shape((h, w), reference.as_slice().unwrap())
                    .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
                Some(ssim(a, b, 7, peak)?)
            }
            _ => None,
        };
        Ok(Self {
            mse: mse_v,
            psnr_db,
            ssim: ssim_v,
        })
    }
}

/// Peak signal-to-noise ratio in dB for the declared peak value.
pub fn psnr(x: &Array1<f64>, reference: &Array1<f64>, peak: f64) -> Result<f64> {
    if x.len() != reference.len() {
        return Err(Error::DimensionMismatch(format!(
            "psnr: {} vs {} entries",
            x.len(),
            reference.len()
        )));
    }
    if !(peak > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "peak must be positive, got {peak}"
        )));
    }
    let mse = mse(x, reference)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub fn mse(x: &Array1<f64>, reference: &Array1<f64>) -> Result<f64> {
    if x.len() != reference.len() {
        return Err(Error::DimensionMismatch(format!(
            "mse: {} vs {} entries",
            x.len(),
            reference.len()
        )));
    }
    let d = x - reference;
    Ok(d.dot(&d) / x.len() as f64)
}

/// Mean SSIM over all sliding `window x window` patches (uniform window,
/// population statistics), with `C1 = (0.01 peak)^2`, `C2 = (0.03 peak)^2`.
pub fn ssim(
    x: ArrayView2<f64>,
    reference: ArrayView2<f64>,
    window: usize,
    peak: f64,
) -> Result<f64> {
    if x.dim() != reference.dim() {
        return Err(Error::DimensionMismatch(format!(
            "ssim: {:?} vs {:?}",
            x.dim(),
            reference.dim()
        )));
    }
    let (h, w) = x.dim();
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "ssim window must be odd, got {window}"
        )));
    }
    if window > h || window > w {
        return Err(Error::InvalidParameter(format!(
            "ssim window {window} larger than image {h}x{w}"
        )));
    }
    if !(peak > 0.0) {
        return Err(Error::InvalidParameter("peak must be positive".into()));
    }
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    let n = (window * window) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=h - window {
        for j in 0..=w - window {
            let mut sx = 0.0;
            let mut sy = 0.0;
            let mut sxx = 0.0;
            let mut syy = 0.0;
            let mut sxy = 0.0;
            for di in 0..window {
                for dj in 0..window {
                    let a = x[(i + di, j + dj)];
                    let b = reference[(i + di, j + dj)];
                    sx += a;
                    sy += b;
                    sxx += a * a;
                    syy += b * b;
                    sxy += a * b;
                }
            }
            let mx = sx / n;
            let my = sy / n;
            let vx = sxx / n - mx * mx;
            let vy = syy / n - my * my;
            let cov = sxy / n - mx * my;
            let s = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}
