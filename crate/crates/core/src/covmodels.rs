//! Parametric stationary covariance families (spherical, Matérn,
//! Gaussian), the modified Bessel function of the second kind, effective
//! ranges, and Gaussian-process sampling.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CovError, Result};
use crate::rng::{domain, substream};

/// Covariance family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovFamily {
    Spherical,
    Matern,
    Gaussian,
}

/// A parametric stationary covariance model `C(h; sill, range[, nu])`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovModelSpec {
    pub family: CovFamily,
    /// Sill `sigma_s^2 > 0`, the variance at lag zero.
    pub sill: f64,
    /// Range parameter `theta_s > 0`, in lag units.
    pub range: f64,
    /// Smoothness `nu > 0`; present exactly for the Matérn family.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smoothness: Option<f64>,
}

impl CovModelSpec {
    pub fn spherical(sill: f64, range: f64) -> Result<Self> {
        Self::build(CovFamily::Spherical, sill, range, None)
    }

    pub fn matern(sill: f64, range: f64, nu: f64) -> Result<Self> {
        Self::build(CovFamily::Matern, sill, range, Some(nu))
    }

    pub fn gaussian(sill: f64, range: f64) -> Result<Self> {
        Self::build(CovFamily::Gaussian, sill, range, None)
    }

    fn build(family: CovFamily, sill: f64, range: f64, smoothness: Option<f64>) -> Result<Self> {
        if !(sill > 0.0) || !sill.is_finite() {
            return Err(CovError::InvalidModelSpec(format!(
                "sill must be positive, got {sill}"
            )));
        }
        if !(range > 0.0) || !range.is_finite() {
            return Err(CovError::InvalidModelSpec(format!(
                "range must be positive, got {range}"
            )));
        }
        match (family, smoothness) {
            (CovFamily::Matern, Some(nu)) if nu > 0.0 && nu.is_finite() => {}
            (CovFamily::Matern, Some(nu)) => {
                return Err(CovError::InvalidModelSpec(format!(
                    "smoothness must be positive, got {nu}"
                )))
            }
            (CovFamily::Matern, None) => {
                return Err(CovError::InvalidModelSpec(
                    "matern requires a smoothness parameter nu".into(),
                ))
            }
            (_, Some(_)) => {
                return Err(CovError::InvalidModelSpec(
                    "smoothness is only meaningful for the matern family".into(),
                ))
            }
            (_, None) => {}
        }
        Ok(Self {
            family,
            sill,
            range,
            smoothness,
        })
    }

    /// Re-check the parameter invariants (useful after deserializing).
    pub fn validate(&self) -> Result<()> {
        Self::build(self.family, self.sill, self.range, self.smoothness).map(|_| ())
    }

    /// Evaluate `C(h)` at a nonnegative lag in the model's own units.
    pub fn eval(&self, h: f64) -> Result<f64> {
        if h < 0.0 || !h.is_finite() {
            return Err(CovError::InvalidLag(h));
        }
        Ok(match self.family {
            CovFamily::Spherical => {
                let u = h / self.range;
                if u <= 1.0 {
                    self.sill * (1.0 - 1.5 * u + 0.5 * u * u * u)
                } else {
                    0.0
                }
            }
            CovFamily::Matern => {
                // sigma^2 Gamma(nu)^{-1} 2^{1-nu} (2 sqrt(nu) h / theta)^nu
                //   K_nu(2 sqrt(nu) h / theta), with C(0) = sigma^2 by limit.
                if h == 0.0 {
                    return Ok(self.sill);
                }
                let nu = self.smoothness.expect("validated at construction");
                let z = 2.0 * nu.sqrt() * h / self.range;
                self.sill * (2.0f64).powf(1.0 - nu) / gamma(nu)
                    * z.powf(nu)
                    * bessel_k(nu, z)?
            }
            CovFamily::Gaussian => {
                let u = h / self.range;
                self.sill * (-u * u).exp()
            }
        })
    }

    /// Correlation `rho(h) = C(h) / C(0)`.
    pub fn correlation(&self, h: f64) -> Result<f64> {
        Ok(self.eval(h)? / self.sill)
    }
}

impl fmt::Display for CovModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            CovFamily::Spherical => {
                write!(f, "spherical:sill={},range={}", self.sill, self.range)
            }
            CovFamily::Matern => write!(
                f,
                "matern:sill={},range={},nu={}",
                self.sill,
                self.range,
                self.smoothness.unwrap_or(f64::NAN)
            ),
            CovFamily::Gaussian => {
                write!(f, "gaussian:sill={},range={}", self.sill, self.range)
            }
        }
    }
}

/// Parse specs like `spherical:sill=2,range=1` or
/// `matern:sill=2,range=1,nu=3`.
impl FromStr for CovModelSpec {
    type Err = CovError;

    fn from_str(s: &str) -> Result<Self> {
        let (family_str, params) = s
            .split_once(':')
            .ok_or_else(|| CovError::InvalidModelSpec(format!("missing ':' in '{s}'")))?;
        let family = match family_str {
            "spherical" => CovFamily::Spherical,
            "matern" => CovFamily::Matern,
            "gaussian" => CovFamily::Gaussian,
            other => {
                return Err(CovError::InvalidModelSpec(format!(
                    "unknown family '{other}' (expected spherical, matern, or gaussian)"
                )))
            }
        };
        let mut sill = None;
        let mut range = None;
        let mut nu = None;
        for token in params.split(',') {
            let (key, value) = token.split_once('=').ok_or_else(|| {
                CovError::InvalidModelSpec(format!("bad parameter token '{token}'"))
            })?;
            let parsed: f64 = value.trim().parse().map_err(|_| {
                CovError::InvalidModelSpec(format!("non-numeric value in '{token}'"))
            })?;
            match key.trim() {
                "sill" => sill = Some(parsed),
                "range" => range = Some(parsed),
                "nu" => nu = Some(parsed),
                other => {
                    return Err(CovError::InvalidModelSpec(format!(
                        "unknown parameter '{other}'"
                    )))
                }
            }
        }
        let sill =
            sill.ok_or_else(|| CovError::InvalidModelSpec("missing 'sill' parameter".into()))?;
        let range =
            range.ok_or_else(|| CovError::InvalidModelSpec("missing 'range' parameter".into()))?;
        Self::build(family, sill, range, nu)
    }
}

// --- Gamma and Bessel machinery ------------------------------------------

/// Lanczos g = 7, n = 9 coefficients.
const LANCZOS: [f64; 9] = [
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
];

/// Natural log of the gamma function for positive arguments.
fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x).
        let pi = std::f64::consts::PI;
        (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let mut acc = LANCZOS[0];
        for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
            acc += c / (x + i as f64);
        }
        let t = x + 7.5;
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
    }
}

fn gamma(x: f64) -> f64 {
    if x < 0.5 {
        std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma(1.0 - x))
    } else {
        ln_gamma(x).exp()
    }
}

/// `(1/Gamma(1-mu) - 1/Gamma(1+mu)) / (2 mu)` with its `mu -> 0` limit
/// `-euler_gamma`, stable for small `mu` via the Taylor expansion of
/// `1/Gamma(1+z)`.
fn gamma_ratio_diff(mu: f64) -> f64 {
    const EULER: f64 = 0.5772156649015329;
    // z^3 coefficient of 1/Gamma(1+z).
    const C3: f64 = -0.042_002_635_034_095_24;
    if mu.abs() < 1e-3 {
        -(EULER + C3 * mu * mu)
    } else {
        (1.0 / gamma(1.0 - mu) - 1.0 / gamma(1.0 + mu)) / (2.0 * mu)
    }
}

const BESSEL_EPS: f64 = 1e-16;
const BESSEL_MAX_ITER: usize = 10_000;

/// Modified Bessel function of the second kind `K_nu(x)` for `nu > 0`,
/// `x > 0`.
///
/// Temme's series below `x = 2` and Steed's continued fraction above,
/// evaluated at the fractional order `mu = nu - round(nu)` in
/// `[-1/2, 1/2]`, then lifted by the stable upward recurrence
/// `K_{m+1} = K_{m-1} + (2m/x) K_m`.
pub fn bessel_k(nu: f64, x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(CovError::InvalidBesselArgument(x));
    }
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(CovError::InvalidModelSpec(format!(
            "bessel order must be positive, got {nu}"
        )));
    }
    let steps = (nu + 0.5).floor() as usize;
    let mu = nu - steps as f64;
    let mu2 = mu * mu;

    let (mut k_lo, mut k_hi) = if x <= 2.0 {
        // Temme series around the origin.
        let x2 = 0.5 * x;
        let pimu = std::f64::consts::PI * mu;
        let fact = if pimu.abs() < 1e-14 {
            1.0
        } else {
            pimu / pimu.sin()
        };
        let d = -x2.ln();
        let e = mu * d;
        let fact2 = if e.abs() < 1e-14 { 1.0 } else { e.sinh() / e };
        let gam1 = gamma_ratio_diff(mu);
        let gam2 = 0.5 * (1.0 / gamma(1.0 - mu) + 1.0 / gamma(1.0 + mu));
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let e = e.exp();
        // p = (x/2)^{-mu} Gamma(1+mu)/2, q = (x/2)^{mu} Gamma(1-mu)/2.
        let mut p = 0.5 * e * gamma(1.0 + mu);
        let mut q = 0.5 / e * gamma(1.0 - mu);
        let mut c = 1.0;
        let dsq = x2 * x2;
        let mut sum1 = p;
        let mut converged = false;
        for i in 1..=BESSEL_MAX_ITER {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu2);
            c *= dsq / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            let del1 = c * (p - fi * ff);
            sum1 += del1;
            if del.abs() < sum.abs() * BESSEL_EPS {
                converged = true;
                break;
            }
        }
        debug_assert!(converged, "Temme series did not converge");
        (sum, sum1 * 2.0 / x)
    } else {
        // Steed's continued fraction CF2.
        let a1 = 0.25 - mu2;
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut delh = d;
        let mut h = delh;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        let mut converged = false;
        for i in 2..=BESSEL_MAX_ITER {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh = (b * d - 1.0) * delh;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < BESSEL_EPS {
                converged = true;
                break;
            }
        }
        debug_assert!(converged, "continued fraction did not converge");
        let h = a1 * h;
        let k_mu = (std::f64::consts::PI / (2.0 * x)).sqrt() * (-x).exp() / s;
        let k_mu1 = k_mu * (mu + x + 0.5 - h) / x;
        (k_mu, k_mu1)
    };

    for m in 1..=steps {
        let next = k_lo + 2.0 * (mu + m as f64) / x * k_hi;
        k_lo = k_hi;
        k_hi = next;
    }
    // After `steps` lifts, k_lo holds K_{mu+steps}(x) = K_nu(x).
    Ok(k_lo)
}

/// Lag `s` where the correlation falls to `rho0` (default 0.05):
/// the boundary solution of `rho(s) = rho0`, found by bisection.
pub fn effective_range(spec: &CovModelSpec, rho0: f64) -> Result<f64> {
    if !(rho0 > 0.0 && rho0 <= 1.0) {
        return Err(CovError::InvalidRho(rho0));
    }
    if rho0 == 1.0 {
        return Ok(0.0);
    }
    let mut hi = spec.range;
    let mut tries = 0;
    while spec.correlation(hi)? > rho0 {
        hi *= 2.0;
        tries += 1;
        if tries > 60 {
            return Err(CovError::InvalidModelSpec(
                "correlation does not fall below rho0".into(),
            ));
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if spec.correlation(mid)? > rho0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Draw `n` trajectories of a zero-mean Gaussian process with covariance
/// `C(|x_j - x_j'|)` on `grid`, one subject per deterministic RNG
/// substream of `seed`.
///
/// The covariance matrix is factored by Cholesky; if that fails, jitter
/// `1e-10 C(0) I` is added and escalated tenfold up to three times.
pub fn sample_gp(
    spec: &CovModelSpec,
    grid: &[f64],
    n: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if grid.is_empty() || n == 0 {
        return Err(CovError::InvalidDataset(
            "GP sampling needs a nonempty grid and n >= 1".into(),
        ));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CovError::InvalidDataset(
            "GP grid must be strictly increasing".into(),
        ));
    }
    let m = grid.len();
    let mut sigma = DMatrix::zeros(m, m);
    for j in 0..m {
        for j2 in j..m {
            let v = spec.eval((grid[j2] - grid[j]).abs())?;
            sigma[(j, j2)] = v;
            sigma[(j2, j)] = v;
        }
    }
    let c0 = spec.sill;
    let mut chol = nalgebra::Cholesky::new(sigma.clone());
    let mut jitter = 1e-10 * c0;
    let mut attempts = 0;
    while chol.is_none() && attempts < 3 {
        let mut jittered = sigma.clone();
        for j in 0..m {
            jittered[(j, j)] += jitter;
        }
        chol = nalgebra::Cholesky::new(jittered);
        jitter *= 10.0;
        attempts += 1;
    }
    let l = chol.ok_or(CovError::NotPositiveSemidefinite)?.unpack();
    let mut z = DMatrix::zeros(n, m);
    for i in 0..n {
        let mut rng = substream(seed, domain::GP_SUBJECT, i as u64);
        let w = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let zi = &l * w;
        for j in 0..m {
            z[(i, j)] = zi[j];
        }
    }
    Ok(z)
}
