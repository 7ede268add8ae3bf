//! Measurement operators `f` with observation noise level `sigma_v`.
//!
//! Each operator provides the forward map, the adjoint of its linearization
//! (vector-Jacobian product), and a pseudo-inverse-like initial estimate from
//! observations. Linear operators satisfy the adjoint test
//! `<f(x), u> = <x, vjp(x, u)>` to near machine precision; nonlinear ones
//! match finite differences of `x -> <u, f(x)>` at differentiable points.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::{Error, Result};

/// Operators are immutable once constructed; `apply`/`vjp` are pure, so any
/// number of runs may share one concurrently.
pub trait ForwardOperator: Send + Sync {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    /// Observation noise standard deviation.
    fn sigma_v(&self) -> f64;
    fn apply(&self, x: &Array1<f64>) -> Array1<f64>;
    /// Returns `J_f(x)^T u`.
    fn vjp(&self, x: &Array1<f64>, u: &Array1<f64>) -> Array1<f64>;
    fn initial_estimate(&self, y: &Array1<f64>) -> Array1<f64>;
}

/// An observation paired with the operator that produced it.
pub struct Measurement<'a> {
    y: Array1<f64>,
    operator: &'a dyn ForwardOperator,
}

impl<'a> Measurement<'a> {
    pub fn new(y: Array1<f64>, operator: &'a dyn ForwardOperator) -> Result<Self> {
        if y.len() != operator.out_dim() {
            return Err(Error::DimensionMismatch(format!(
                "observation has {} entries, operator produces {}",
                y.len(),
                operator.out_dim()
            )));
        }
        Ok(Self { y, operator })
    }

    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    pub fn operator(&self) -> &dyn ForwardOperator {
        self.operator
    }
}

fn check_sigma_v(sigma_v: f64) -> Result<f64> {
    if !(sigma_v >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma_v must be nonnegative, got {sigma_v}"
        )));
    }
    Ok(sigma_v)
}

/// Keeps the entries where `mask` is true; the rest are unobserved.
pub struct InpaintingMask {
    mask: Vec<bool>,
    kept: Vec<usize>,
    sigma_v: f64,
}

impl InpaintingMask {
    pub fn new(mask: Vec<bool>, sigma_v: f64) -> Result<Self> {
        let kept: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        if kept.is_empty() {
            return Err(Error::InvalidParameter(
                "inpainting mask keeps no entries".into(),
            ));
        }
        Ok(Self {
            mask,
            kept,
            sigma_v: check_sigma_v(sigma_v)?,
        })
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }
}

impl ForwardOperator for InpaintingMask {
    fn in_dim(&self) -> usize {
        self.mask.len()
    }

    fn out_dim(&self) -> usize {
        self.kept.len()
    }

    fn sigma_v(&self) -> f64 {
        self.sigma_v
    }

    fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        assert_eq!(x.len(), self.in_dim());
        Array1::from_iter(self.kept.iter().map(|&i| x[i]))
    }

    fn vjp(&self, _x: &Array1<f64>, u: &Array1<f64>) -> Array1<f64> {
        assert_eq!(u.len(), self.out_dim());
        let mut g = Array1::zeros(self.in_dim());
        for (j, &i) in self.kept.iter().enumerate() {
            g[i] = u[j];
        }
        g
    }

    fn initial_estimate(&self, y: &Array1<f64>) -> Array1<f64> {
        // degraded image: observed entries scattered into zeros
        self.vjp(&Array1::zeros(self.in_dim()), y)
    }
}

/// Block-average downsampling of an `height x width` image by `factor`.
pub struct BlockAverageDownsample {
    height: usize,
    width: usize,
    factor: usize,
    sigma_v: f64,
}

impl BlockAverageDownsample {
    pub fn new(height: usize, width: usize, factor: usize, sigma_v: f64) -> Result<Self> {
        if factor == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidParameter(
                "downsample needs positive dimensions and factor".into(),
            ));
        }
        if !height.is_multiple_of(factor) || !width.is_multiple_of(factor) {
            return Err(Error::InvalidParameter(format!(
                "image {height}x{width} not divisible by factor {factor}"
            )));
        }
        Ok(Self {
            height,
            width,
            factor,
            sigma_v: check_sigma_v(sigma_v)?,
        })
    }

    fn out_shape(&self) -> (usize, usize) {
        (self.height / self.factor, self.width / self.factor)
    }
}

impl ForwardOperator for BlockAverageDownsample {
    fn in_dim(&self) -> usize {
        self.height * self.width
    }

    fn out_dim(&self) -> usize {
        let (h, w) = self.out_shape();
        h * w
    }

    fn sigma_v(&self) -> f64 {
        self.sigma_v
    }

    fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        assert_eq!(x.len(), self.in_dim());
        let (oh, ow) = self.out_shape();
        let f = self.factor;
        let inv = 1.0 / (f * f) as f64;
        let mut y = Array1::zeros(oh * ow);
        for bi in 0..oh {
            for bj in 0..ow {
                let mut acc = 0.0;
                for di in 0..f {
                    for dj in 0..f {
                        acc += x[(bi * f + di) * self.width + bj * f + dj];
                    }
                }
                y[bi * ow + bj] = acc * inv;
            }
        }
        y
    }

    fn vjp(&self, _x: &Array1<f64>, u: &Array1<f64>) -> Array1<f64> {
        assert_eq!(u.len(), self.out_dim());
        let (oh, ow) = self.out_shape();
        let f = self.factor;
        let inv = 1.0 / (f * f) as f64;
        let mut g = Array1::zeros(self.in_dim());
        for bi in 0..oh {
            for bj in 0..ow {
                let v = u[bi * ow + bj] * inv;
                for di in 0..f {
                    for dj in 0..f {
                        g[(bi * f + di) * self.width + bj * f + dj] = v;
                    }
                }
            }
        }
        g
    }

    fn initial_estimate(&self, y: &Array1<f64>) -> Array1<f64> {
        // nearest-neighbor upsampling
        let (oh, ow) = self.out_shape();
        let f = self.factor;
        let mut x = Array1::zeros(self.in_dim());
        for bi in 0..oh {
            for bj in 0..ow {
                let v = y[bi * ow + bj];
                for di in 0..f {
                    for dj in 0..f {
                        x[(bi * f + di) * self.width + bj * f + dj] = v;
                    }
                }
            }
        }
        x
    }
}

/// 2-D Gaussian blur with reflected-boundary padding.
///
/// The kernel is normalized to sum 1, so constant images are fixed points.
/// The VJP is the exact adjoint of pad-then-convolve: correlate and fold the
/// boundary contributions back through the reflection map.
pub struct GaussianBlur {
    height: usize,
    width: usize,
    kernel: Array2<f64>,
    sigma_v: f64,
}

impl GaussianBlur {
    pub fn new(
        height: usize,
        width: usize,
        kernel_std: f64,
        kernel_size: usize,
        sigma_v: f64,
    ) -> Result<Self> {
        if kernel_size.is_multiple_of(2) || kernel_size == 0 {
            return Err(Error::InvalidParameter(format!(
                "kernel_size must be odd, got {kernel_size}"
            )));
        }
        if kernel_size > 1 && !(kernel_std > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kernel_std must be positive, got {kernel_std}"
            )));
        }
        let half = kernel_size / 2;
        if half >= height.min(width) {
            return Err(Error::InvalidParameter(format!(
                "kernel_size {kernel_size} too large for {height}x{width} image"
            )));
        }
        let mut kernel = Array2::zeros((kernel_size, kernel_size));
        let c = half as f64;
        for i in 0..kernel_size {
            for j in 0..kernel_size {
                let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
                kernel[(i, j)] = if kernel_size == 1 {
                    1.0
                } else {
                    (-d2 / (2.0 * kernel_std * kernel_std)).exp()
                };
            }
        }
        let total = kernel.sum();
        kernel.mapv_inplace(|v| v / total);
        Ok(Self {
            height,
            width,
            kernel,
            sigma_v: check_sigma_v(sigma_v)?,
        })
    }

    /// Reflect an out-of-range index back into `[0, n)` (edge repeated).
    fn reflect(q: isize, n: usize) -> usize {
        let n = n as isize;
        let r = if q < 0 {
            -q - 1
        } else if q >= n {
            2 * n - 1 - q
        } else {
            q
        };
        r as usize
    }
}

impl ForwardOperator for GaussianBlur {
    fn in_dim(&self) -> usize {
        self.height * self.width
    }

    fn out_dim(&self) -> usize {
        self.height * self.width
    }

    fn sigma_v(&self) -> f64 {
        self.sigma_v
    }

    fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        assert_eq!(x.len(), self.in_dim());
        let k = self.kernel.nrows();
        let half = (k / 2) as isize;
        let mut y = Array1::zeros(self.in_dim());
        for i in 0..self.height {
            for j in 0..self.width {
                let mut acc = 0.0;
                for u in 0..k {
                    let si = Self::reflect(i as isize + u as isize - half, self.height);
                    for v in 0..k {
                        let sj = Self::reflect(j as isize + v as isize - half, self.width);
                        acc += self.kernel[(u, v)] * x[si * self.width + sj];
                    }
                }
                y[i * self.width + j] = acc;
            }
        }
        y
    }

    fn vjp(&self, _x: &Array1<f64>, u: &Array1<f64>) -> Array1<f64> {
        assert_eq!(u.len(), self.out_dim());
        let k = self.kernel.nrows();
        let half = (k / 2) as isize;
        let mut g = Array1::zeros(self.in_dim());
        for i in 0..self.height {
            for j in 0..self.width {
                let w = u[i * self.width + j];
                for p in 0..k {
                    let si = Self::reflect(i as isize + p as isize - half, self.height);
                    for q in 0..k {
                        let sj = Self::reflect(j as isize + q as isize - half, self.width);
                        g[si * self.width + sj] += self.kernel[(p, q)] * w;
                    }
                }
            }
        }
        g
    }

    fn initial_estimate(&self, y: &Array1<f64>) -> Array1<f64> {
        y.clone()
    }
}

/// High-dynamic-range clipping: `f(x)_i = clip(2 x_i, -1, 1)`.
pub struct HdrClip {
    dim: usize,
    sigma_v: f64,
}

impl HdrClip {
    pub fn new(dim: usize, sigma_v: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("hdr needs dim >= 1".into()));
        }
        Ok(Self {
            dim,
            sigma_v: check_sigma_v(sigma_v)?,
        })
    }
}

impl ForwardOperator for HdrClip {
    fn in_dim(&self) -> usize {
        self.dim
    }

    fn out_dim(&self) -> usize {
        self.dim
    }

    fn sigma_v(&self) -> f64 {
        self.sigma_v
    }

    fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        assert_eq!(x.len(), self.dim);
        x.mapv(|v| (2.0 * v).clamp(-1.0, 1.0))
    }

    fn vjp(&self, x: &Array1<f64>, u: &Array1<f64>) -> Array1<f64> {
        assert_eq!(x.len(), self.dim);
        assert_eq!(u.len(), self.dim);
        // local derivative is 2 strictly inside the clip, 0 in saturation
        Array1::from_iter(x.iter().zip(u.iter()).map(|(&xi, &ui)| {
            if (2.0 * xi).abs() < 1.0 {
                2.0 * ui
            } else {
                0.0
            }
        }))
    }

    fn initial_estimate(&self, y: &Array1<f64>) -> Array1<f64> {
        y / 2.0
    }
}

/// Fourier-magnitude measurement for phase retrieval.
///
/// The signal is zero-padded to `oversample * n` and `apply` returns the
/// modulus of every DFT bin (direct summation; sizes here are desk scale).
/// At bins with zero modulus the subgradient 0 is used.
pub struct DftMagnitude {
    n: usize,
    m: usize,
    sigma_v: f64,
}

impl DftMagnitude {
    pub fn new(n: usize, oversample: usize, sigma_v: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("signal length must be >= 1".into()));
        }
        if oversample < 1 {
            return Err(Error::InvalidParameter(format!(
                "oversample must be >= 1, got {oversample}"
            )));
        }
        Ok(Self {
            n,
            m: n * oversample,
            sigma_v: check_sigma_v(sigma_v)?,
        })
    }

    fn dft(&self, x: &Array1<f64>) -> Vec<Complex64> {
        let m = self.m;
        let mut z = vec![Complex64::new(0.0, 0.0); m];
        for (j, zj) in z.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..self.n {
                let phase = -2.0 * std::f64::consts::PI * (j * k % m) as f64 / m as f64;
                acc += x[k] * Complex64::new(phase.cos(), phase.sin());
            }
            *zj = acc;
        }
        z
    }
}

impl ForwardOperator for DftMagnitude {
    fn in_dim(&self) -> usize {
        self.n
    }

    fn out_dim(&self) -> usize {
        self.m
    }

    fn sigma_v(&self) -> f64 {
        self.sigma_v
    }

    fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        assert_eq!(x.len(), self.n);
        Array1::from_iter(self.dft(x).iter().map(|z| z.norm()))
    }

    fn vjp(&self, x: &Array1<f64>, u: &Array1<f64>) -> Array1<f64> {
        assert_eq!(x.len(), self.n);
        assert_eq!(u.len(), self.m);
        let z = self.dft(x);
        let m = self.m;
        // w_j = u_j * z_j / |z_j|; gradient = Re(sum_j w_j e^{+2 pi i jk / m})
        let w: Vec<Complex64> = z
            .iter()
            .zip(u.iter())
            .map(|(zj, &uj)| {
                let r = zj.norm();
                if r == 0.0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    uj * zj / r
                }
            })
            .collect();
        let mut g = Array1::zeros(self.n);
        for k in 0..self.n {
            let mut acc = 0.0;
            for (j, wj) in w.iter().enumerate() {
                let phase = 2.0 * std::f64::consts::PI * (j * k % m) as f64 / m as f64;
                acc += wj.re * phase.cos() - wj.im * phase.sin();
            }
            g[k] = acc;
        }
        g
    }

    fn initial_estimate(&self, _y: &Array1<f64>) -> Array1<f64> {
        Array1::zeros(self.n)
    }
}

/// Dense linear operator `A x`.
pub struct DenseLinear {
    a: Array2<f64>,
    sigma_v: f64,
}

impl DenseLinear {
    pub fn new(a: Array2<f64>, sigma_v: f64) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::InvalidParameter("matrix must be nonempty".into()));
        }
        Ok(Self {
            a,
            sigma_v: check_sigma_v(sigma_v)?,
        })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.a
    }
}

impl ForwardOperator for DenseLinear {
    fn in_dim(&self) -> usize {
        self.a.ncols()
    }

    fn out_dim(&self) -> usize {
        self.a.nrows()
    }

    fn sigma_v(&self) -> f64 {
        self.sigma_v
    }

    fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        assert_eq!(x.len(), self.in_dim());
        self.a.dot(x)
    }

    fn vjp(&self, _x: &Array1<f64>, u: &Array1<f64>) -> Array1<f64> {
        assert_eq!(u.len(), self.out_dim());
        self.a.t().dot(u)
    }

    fn initial_estimate(&self, y: &Array1<f64>) -> Array1<f64> {
        self.a.t().dot(y)
    }
}
