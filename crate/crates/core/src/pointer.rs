//! Gaussian spatial pointer: the weak polarization probe as a
//! polarization-dependent transverse displacement of the beam profile.
//!
//! The beam's intensity profile is Gaussian with standard deviation sigma;
//! horizontal polarization is displaced to r_H and vertical to r_V. All
//! readout distributions reduce to mixtures of three Gaussian terms
//! (H-squared, V-squared, and the interference cross term) whose weighted
//! integrals have closed forms; fixed-grid Simpson quadrature cross-checks
//! them in tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::ComplexMatrix;
use crate::states::{DensityMatrix, Observable};
use crate::weak::{BobSetting, OneSidedTable, OUTCOMES};

/// Geometry of the displaced-beam probe, lengths in micrometers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointerConfig {
    #[serde(rename = "r_H")]
    pub r_h: f64,
    #[serde(rename = "r_V")]
    pub r_v: f64,
    pub sigma: f64,
}

impl Default for PointerConfig {
    fn default() -> Self {
        Self::default_apparatus()
    }
}

impl PointerConfig {
    pub fn new(r_h: f64, r_v: f64, sigma: f64) -> Result<Self> {
        let cfg = Self { r_h, r_v, sigma };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidConfig(format!("sigma = {} must be positive", self.sigma)));
        }
        if !(self.r_v > self.r_h) {
            return Err(Error::InvalidConfig(format!(
                "r_V = {} must exceed r_H = {}",
                self.r_v, self.r_h
            )));
        }
        Ok(())
    }

    /// Beam width 500 um with a 25 um separation centered on the axis.
    pub fn default_apparatus() -> Self {
        Self { r_h: -12.5, r_v: 12.5, sigma: 500.0 }
    }

    /// Same beam width, displaced symmetrically to the requested
    /// separation-to-width ratio.
    pub fn with_separation_ratio(ratio: f64) -> Result<Self> {
        if !(ratio > 0.0) {
            return Err(Error::InvalidConfig(format!("ratio = {ratio} must be positive")));
        }
        let sigma = 500.0;
        let half = 0.5 * ratio * sigma;
        Self::new(-half, half, sigma)
    }

    pub fn delta_r(&self) -> f64 {
        self.r_v - self.r_h
    }

    pub fn separation_ratio(&self) -> f64 {
        self.delta_r() / self.sigma
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.r_h + self.r_v)
    }

    /// Suppression of Alice's H/V coherences after tracing the pointer:
    /// the Gaussian mode overlap exp(-delta_r^2 / (8 sigma^2)).
    pub fn decoherence_factor(&self) -> f64 {
        let d = self.delta_r();
        (-d * d / (8.0 * self.sigma * self.sigma)).exp()
    }

    /// Unit-normalized Gaussian amplitude centered at `center`: intensity
    /// |g|^2 integrates to one with standard deviation sigma.
    pub fn amplitude(&self, r: f64, center: f64) -> f64 {
        let norm = (2.0 * std::f64::consts::PI * self.sigma * self.sigma).powf(-0.25);
        let u = r - center;
        norm * (-u * u / (4.0 * self.sigma * self.sigma)).exp()
    }

    /// Range that captures every integral used here to well below 1e-9,
    /// including moment weights that grow linearly in r.
    pub fn quadrature_range(&self) -> (f64, f64) {
        (self.r_h - 8.0 * self.sigma, self.r_v + 8.0 * self.sigma)
    }
}

/// Measurement operator of the probe at readout position r:
/// K(r) = g(r - r_H) Pi_H + g(r - r_V) Pi_V, diagonal in the H/V basis.
pub fn kraus_at_position(r: f64, cfg: &PointerConfig) -> ComplexMatrix {
    let mut k = ComplexMatrix::zeros(2);
    k[(0, 0)] = crate::matrix::c(cfg.amplitude(r, cfg.r_h), 0.0);
    k[(1, 1)] = crate::matrix::c(cfg.amplitude(r, cfg.r_v), 0.0);
    k
}

/// One readout distribution as coefficients over the three Gaussian terms:
/// density(r) = hh g_H(r)^2 + vv g_V(r)^2 + hv g_H(r) g_V(r).
#[derive(Debug, Clone, Copy)]
pub struct GaussianMixture {
    pub hh: f64,
    pub vv: f64,
    pub hv: f64,
    cfg: PointerConfig,
}

impl GaussianMixture {
    pub fn new(hh: f64, vv: f64, hv: f64, cfg: PointerConfig) -> Self {
        Self { hh, vv, hv, cfg }
    }

    pub fn config(&self) -> &PointerConfig {
        &self.cfg
    }

    pub fn eval(&self, r: f64) -> f64 {
        let gh = self.cfg.amplitude(r, self.cfg.r_h);
        let gv = self.cfg.amplitude(r, self.cfg.r_v);
        self.hh * gh * gh + self.vv * gv * gv + self.hv * gh * gv
    }

    /// Exact full-line integral: the cross term integrates to the mode
    /// overlap (the decoherence factor).
    pub fn total_mass(&self) -> f64 {
        self.hh + self.vv + self.hv * self.cfg.decoherence_factor()
    }

    /// Exact integral of (r_V - r)/delta_r against the density; the weight
    /// that flags the H (Z = +1) component.
    pub fn weighted_toward_h(&self) -> f64 {
        self.hh + 0.5 * self.hv * self.cfg.decoherence_factor()
    }

    /// Exact integral of (r - r_H)/delta_r against the density.
    pub fn weighted_toward_v(&self) -> f64 {
        self.vv + 0.5 * self.hv * self.cfg.decoherence_factor()
    }

    /// Exact integral of (r_H + r_V - 2r)/delta_r against the density; the
    /// cross term drops out entirely, so this equals hh - vv for every
    /// separation.
    pub fn mean_z_weight(&self) -> f64 {
        self.hh - self.vv
    }

    /// Composite-Simpson integral over [a, b] with n even subintervals.
    pub fn integrate(&self, a: f64, b: f64, n: usize) -> f64 {
        simpson(|r| self.eval(r), a, b, n)
    }
}

/// Composite Simpson quadrature; n is rounded up to even.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let n = if n % 2 == 0 { n.max(2) } else { n + 1 };
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + h * i as f64);
    }
    acc * h / 3.0
}

/// Joint readout densities for one Bob analyser setting: one mixture per
/// (Alice strong outcome x, Bob outcome b).
#[derive(Debug, Clone)]
pub struct SpatialDensity {
    setting: BobSetting,
    cells: [GaussianMixture; 4],
}

fn cell_index(x: i8, b: i8) -> usize {
    (if x > 0 { 0 } else { 1 }) * 2 + (if b > 0 { 0 } else { 1 })
}

impl SpatialDensity {
    pub fn setting(&self) -> BobSetting {
        self.setting
    }

    pub fn mixture(&self, x: i8, b: i8) -> &GaussianMixture {
        &self.cells[cell_index(x, b)]
    }

    pub fn eval(&self, r: f64, x: i8, b: i8) -> f64 {
        self.mixture(x, b).eval(r)
    }

    /// Closed-form weak estimates per cell: the deflection-weighted
    /// integrals that estimate Pr^w[Z = z, x, b] from the exact densities.
    pub fn weak_estimates(&self) -> OneSidedTable {
        let mut t = OneSidedTable::empty(self.setting);
        for x in OUTCOMES {
            for b in OUTCOMES {
                let m = self.mixture(x, b);
                t.set(x, 1, b, Some(m.weighted_toward_h()));
                t.set(x, -1, b, Some(m.weighted_toward_v()));
            }
        }
        t
    }

    pub fn to_csv_string(&self, grid: &[f64]) -> String {
        let mut out = String::from("r,x,bob_outcome,density\n");
        for &r in grid {
            for x in OUTCOMES {
                for b in OUTCOMES {
                    out.push_str(&format!("{r},{x},{b},{}\n", self.eval(r, x, b)));
                }
            }
        }
        out
    }
}

/// Mixture coefficients for Alice postselection operator `a` (2x2) and Bob
/// operator `bob` (2x2) on `rho`: hh and vv are the displaced-mode weights,
/// hv the interference term.
fn mixture_coefficients(
    rho: &DensityMatrix,
    a: &ComplexMatrix,
    bob: &ComplexMatrix,
    cfg: PointerConfig,
) -> GaussianMixture {
    let z = Observable::z();
    let pi_h = z.projector(1);
    let pi_v = z.projector(-1);
    let hh = pi_h.mul(a).mul(pi_h).kron(bob).mul(rho.matrix()).trace().re;
    let vv = pi_v.mul(a).mul(pi_v).kron(bob).mul(rho.matrix()).trace().re;
    let hv = 2.0 * pi_v.mul(a).mul(pi_h).kron(bob).mul(rho.matrix()).trace().re;
    GaussianMixture::new(hh, vv, hv, cfg)
}

/// Full set of readout densities for the four (x, b) postselections of one
/// Bob setting.
pub fn joint_density(
    rho: &DensityMatrix,
    setting: BobSetting,
    cfg: &PointerConfig,
) -> Result<SpatialDensity> {
    if rho.dim() != 4 {
        return Err(Error::Dimension { expected: 4, got: rho.dim() });
    }
    cfg.validate()?;
    let x_obs = Observable::x();
    let bob = setting.observable();
    let mk = |x: i8, b: i8| mixture_coefficients(rho, x_obs.projector(x), bob.projector(b), *cfg);
    Ok(SpatialDensity {
        setting,
        cells: [mk(1, 1), mk(1, -1), mk(-1, 1), mk(-1, -1)],
    })
}

/// Readout density with no postselection at all (Alice analyser open, Bob
/// traced out). Orthogonality of the displaced projectors removes the cross
/// term, which is why the mean-deflection identity is exact for every
/// separation.
pub fn unconditional_density(rho: &DensityMatrix, cfg: &PointerConfig) -> Result<GaussianMixture> {
    if rho.dim() != 4 {
        return Err(Error::Dimension { expected: 4, got: rho.dim() });
    }
    cfg.validate()?;
    let id2 = ComplexMatrix::identity(2);
    Ok(mixture_coefficients(rho, &id2, &id2, *cfg))
}

/// Calibration density: Alice postselected on H (z = +1) or V (z = -1) in
/// the probe basis itself, Bob traced out. A single displaced Gaussian.
pub fn calibration_density(
    rho: &DensityMatrix,
    z_outcome: i8,
    cfg: &PointerConfig,
) -> Result<GaussianMixture> {
    if rho.dim() != 4 {
        return Err(Error::Dimension { expected: 4, got: rho.dim() });
    }
    cfg.validate()?;
    let z = Observable::z();
    let id2 = ComplexMatrix::identity(2);
    Ok(mixture_coefficients(rho, z.projector(z_outcome), &id2, *cfg))
}
