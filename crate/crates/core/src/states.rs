//! Two-qubit states and dichotomic polarization observables.
//!
//! Conventions: |0> is horizontal with Z|0> = +|0>, |1> is vertical. The
//! first tensor factor belongs to the analyser arm carrying the weak probe
//! (Alice), the second to the remote arm (Bob).

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::matrix::{c, C64, ComplexMatrix};

pub const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Normalized state vector of one or two qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    amps: Vec<C64>,
}

impl PureState {
    /// Accepts amplitudes that are already normalized to 1 within 1e-12.
    pub fn new(amps: Vec<C64>) -> Result<Self> {
        if amps.len() != 2 && amps.len() != 4 {
            return Err(Error::Dimension { expected: 4, got: amps.len() });
        }
        let norm_sq: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm_sq - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidState(format!("state norm^2 = {norm_sq:.15} is not 1")));
        }
        Ok(Self { amps })
    }

    /// Normalizes arbitrary amplitudes; rejects the zero vector.
    pub fn normalized(amps: Vec<C64>) -> Result<Self> {
        let norm_sq: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if norm_sq < 1e-24 {
            return Err(Error::InvalidState("cannot normalize the zero vector".into()));
        }
        let inv = 1.0 / norm_sq.sqrt();
        Self::new(amps.into_iter().map(|a| a * inv).collect())
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn inner(&self, other: &Self) -> C64 {
        assert_eq!(self.dim(), other.dim());
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn tensor(&self, other: &Self) -> Self {
        let mut amps = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.amps {
            for b in &other.amps {
                amps.push(a * b);
            }
        }
        Self { amps }
    }

    pub fn density(&self) -> DensityMatrix {
        let n = self.dim();
        let mut m = ComplexMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = self.amps[i] * self.amps[j].conj();
            }
        }
        DensityMatrix { m }
    }

    pub fn projector(&self) -> ComplexMatrix {
        self.density().m
    }
}

/// Hermitian unit-trace operator; may carry negative eigenvalues only when
/// constructed through the dedicated transient-state path, so the standard
/// constructor validates positivity loosely and trace/hermiticity strictly.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    m: ComplexMatrix,
}

impl DensityMatrix {
    /// Validates hermiticity and unit trace at tolerance `tol`
    /// (1e-12 for analytic inputs, 1e-10 for reconstructed ones).
    pub fn new(m: ComplexMatrix, tol: f64) -> Result<Self> {
        let dev = m.hermiticity_deviation();
        if dev > tol {
            return Err(Error::NotHermitian { deviation: dev });
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > tol || tr.im.abs() > tol {
            return Err(Error::NotUnitTrace { trace: tr.re, tol });
        }
        Ok(Self { m: m.hermitian_part() })
    }

    pub fn new_analytic(m: ComplexMatrix) -> Result<Self> {
        Self::new(m, 1e-12)
    }

    pub fn dim(&self) -> usize {
        self.m.dim()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.m
    }

    /// Real part of Tr[O rho]; the imaginary part must vanish for Hermitian O
    /// and is asserted small in debug builds.
    pub fn expectation(&self, obs: &ComplexMatrix) -> f64 {
        let t = obs.mul(&self.m).trace();
        debug_assert!(t.im.abs() < 1e-9 * (1.0 + t.norm()), "non-real expectation {t}");
        t.re
    }

    pub fn purity(&self) -> f64 {
        self.m.mul(&self.m).trace().re
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        self.m.hermitian_eigenvalues()
    }

    /// True when all eigenvalues sit above -tol.
    pub fn is_physical(&self, tol: f64) -> Result<bool> {
        Ok(self.eigenvalues()?.into_iter().all(|v| v >= -tol))
    }

    /// Reduced state of the first qubit of a two-qubit system.
    pub fn partial_trace_bob(&self) -> Result<DensityMatrix> {
        if self.dim() != 4 {
            return Err(Error::Dimension { expected: 4, got: self.dim() });
        }
        let mut r = ComplexMatrix::zeros(2);
        for i in 0..2 {
            for j in 0..2 {
                r[(i, j)] = self.m[(2 * i, 2 * j)] + self.m[(2 * i + 1, 2 * j + 1)];
            }
        }
        DensityMatrix::new(r, 1e-10)
    }

    /// Overlap <psi| rho |psi>.
    pub fn fidelity_with_pure(&self, psi: &PureState) -> f64 {
        assert_eq!(self.dim(), psi.dim());
        let v = self.m.apply(psi.amplitudes());
        psi.amplitudes()
            .iter()
            .zip(&v)
            .map(|(a, b)| (a.conj() * b).re)
            .sum()
    }
}

/// Entangled pair delivered by the source after compensation,
/// sin(theta)|01> - e^{i phi} cos(theta)|10>. Equals the singlet at
/// theta = 45 degrees, phi = 0.
pub fn entangled_pair(theta_rad: f64, phi_rad: f64) -> PureState {
    let s = theta_rad.sin();
    let ph = Complex64::from_polar(theta_rad.cos(), phi_rad);
    PureState::normalized(vec![C64::ZERO, c(s, 0.0), -ph, C64::ZERO])
        .expect("family amplitudes never all vanish")
}

/// Maximally entangled antisymmetric two-qubit state (|01> - |10>)/sqrt(2).
pub fn singlet() -> PureState {
    PureState::new(vec![
        C64::ZERO,
        c(FRAC_1_SQRT_2, 0.0),
        c(-FRAC_1_SQRT_2, 0.0),
        C64::ZERO,
    ])
    .expect("singlet amplitudes are normalized")
}

/// Isotropic white-noise admixture v |psi><psi| + (1 - v) I/4.
pub fn werner_mixture(psi: &PureState, v: f64) -> Result<DensityMatrix> {
    if psi.dim() != 4 {
        return Err(Error::Dimension { expected: 4, got: psi.dim() });
    }
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidState(format!("mixing weight {v} outside [0, 1]")));
    }
    let m = psi
        .projector()
        .scale_re(v)
        .add(&ComplexMatrix::identity(4).scale_re((1.0 - v) / 4.0));
    DensityMatrix::new_analytic(m)
}

/// Werner state built on the singlet.
pub fn werner(v: f64) -> Result<DensityMatrix> {
    werner_mixture(&singlet(), v)
}

pub fn pauli_x() -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(2);
    m[(0, 1)] = C64::ONE;
    m[(1, 0)] = C64::ONE;
    m
}

pub fn pauli_y() -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(2);
    m[(0, 1)] = c(0.0, -1.0);
    m[(1, 0)] = c(0.0, 1.0);
    m
}

pub fn pauli_z() -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(2);
    m[(0, 0)] = C64::ONE;
    m[(1, 1)] = c(-1.0, 0.0);
    m
}

/// Remote-arm analyser axes: P = -(Z + X)/sqrt(2) and Q = (Z - X)/sqrt(2).
pub fn obs_p_matrix() -> ComplexMatrix {
    pauli_z().add(&pauli_x()).scale_re(-FRAC_1_SQRT_2)
}

pub fn obs_q_matrix() -> ComplexMatrix {
    pauli_z().sub(&pauli_x()).scale_re(FRAC_1_SQRT_2)
}

/// Dichotomic single-qubit observable with outcomes +1 and -1, carried with
/// its spectral projectors.
#[derive(Debug, Clone)]
pub struct Observable {
    matrix: ComplexMatrix,
    plus: ComplexMatrix,
    minus: ComplexMatrix,
}

impl Observable {
    /// Builds the observable from a 2x2 Hermitian matrix with eigenvalues
    /// +1 and -1 (within 1e-10), using the closed-form decomposition
    /// e_pm = m +- sqrt(((a-d)/2)^2 + |b|^2).
    pub fn dichotomic(matrix: ComplexMatrix) -> Result<Self> {
        if matrix.dim() != 2 {
            return Err(Error::Dimension { expected: 2, got: matrix.dim() });
        }
        let dev = matrix.hermiticity_deviation();
        if dev > 1e-12 {
            return Err(Error::NotHermitian { deviation: dev });
        }
        let a = matrix[(0, 0)].re;
        let d = matrix[(1, 1)].re;
        let b = matrix[(0, 1)];
        let mean = 0.5 * (a + d);
        let radius = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
        if radius < 1e-12 {
            return Err(Error::DegenerateObservable { gap: 2.0 * radius });
        }
        let e_plus = mean + radius;
        let e_minus = mean - radius;
        if (e_plus - 1.0).abs() > 1e-10 || (e_minus + 1.0).abs() > 1e-10 {
            return Err(Error::InvalidState(format!(
                "expected eigenvalues +1/-1, got {e_plus:.12} and {e_minus:.12}"
            )));
        }
        // Pi_+ = (A - e_- I)/(e_+ - e_-), Pi_- = I - Pi_+.
        let id = ComplexMatrix::identity(2);
        let plus = matrix.sub(&id.scale_re(e_minus)).scale_re(1.0 / (e_plus - e_minus));
        let minus = id.sub(&plus);
        Ok(Self { matrix, plus, minus })
    }

    pub fn x() -> Self {
        Self::dichotomic(pauli_x()).expect("X is dichotomic")
    }

    pub fn z() -> Self {
        Self::dichotomic(pauli_z()).expect("Z is dichotomic")
    }

    pub fn p() -> Self {
        Self::dichotomic(obs_p_matrix()).expect("P is dichotomic")
    }

    pub fn q() -> Self {
        Self::dichotomic(obs_q_matrix()).expect("Q is dichotomic")
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    /// Projector onto the +1 or -1 eigenspace; the sign of `outcome` decides,
    /// so callers never depend on basis ordering.
    pub fn projector(&self, outcome: i8) -> &ComplexMatrix {
        if outcome > 0 {
            &self.plus
        } else {
            &self.minus
        }
    }
}

/// The Bell operator (X + Z) x P + (X - Z) x Q.
pub fn chsh_operator() -> ComplexMatrix {
    let xz_sum = pauli_x().add(&pauli_z());
    let xz_diff = pauli_x().sub(&pauli_z());
    xz_sum.kron(&obs_p_matrix()).add(&xz_diff.kron(&obs_q_matrix()))
}

/// Wootters concurrence of a two-qubit density matrix.
pub fn concurrence(rho: &DensityMatrix) -> Result<f64> {
    if rho.dim() != 4 {
        return Err(Error::Dimension { expected: 4, got: rho.dim() });
    }
    let yy = pauli_y().kron(&pauli_y());
    let spin_flipped = yy.mul(&rho.matrix().conjugate()).mul(&yy);
    let root = rho.matrix().psd_sqrt()?;
    let m = root.mul(&spin_flipped).mul(&root);
    let mut lambdas: Vec<f64> = m
        .hermitian_eigen()?
        .values
        .into_iter()
        .map(|v| v.max(0.0).sqrt())
        .collect();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    Ok((lambdas[0] - lambdas[1] - lambdas[2] - lambdas[3]).max(0.0))
}

/// Tangle, the squared concurrence.
pub fn tangle(rho: &DensityMatrix) -> Result<f64> {
    let con = concurrence(rho)?;
    Ok(con * con)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn singlet_is_normalized_and_maximally_entangled() {
        let psi = singlet();
        let rho = psi.density();
        assert_relative_eq!(rho.purity(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(tangle(&rho).unwrap(), 1.0, epsilon = 1e-10);
        assert_relative_eq!(rho.fidelity_with_pure(&psi), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn singlet_reduced_state_is_maximally_mixed() {
        let red = singlet().density().partial_trace_bob().unwrap();
        let half = ComplexMatrix::identity(2).scale_re(0.5);
        assert!(red.matrix().max_abs_diff(&half) < 1e-12);
    }

    #[test]
    fn chsh_expectation_on_singlet_is_tsirelson() {
        let rho = singlet().density();
        assert_relative_eq!(
            rho.expectation(&chsh_operator()),
            2.0 * std::f64::consts::SQRT_2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn chsh_operator_spectrum_is_bounded_by_tsirelson() {
        let vals = chsh_operator().hermitian_eigenvalues().unwrap();
        let max_abs = vals.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        assert_relative_eq!(max_abs, 2.0 * std::f64::consts::SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn analyser_axes_square_to_identity_and_are_orthogonal() {
        let p = obs_p_matrix();
        let q = obs_q_matrix();
        let id = ComplexMatrix::identity(2);
        assert!(p.mul(&p).max_abs_diff(&id) < 1e-12);
        assert!(q.mul(&q).max_abs_diff(&id) < 1e-12);
        assert!(p.mul(&q).trace().norm() < 1e-12);
    }

    #[test]
    fn observable_projectors_are_spectral() {
        for obs in [Observable::x(), Observable::z(), Observable::p(), Observable::q()] {
            let plus = obs.projector(1);
            let minus = obs.projector(-1);
            let id = ComplexMatrix::identity(2);
            assert!(plus.mul(plus).max_abs_diff(plus) < 1e-12);
            assert!(minus.mul(minus).max_abs_diff(minus) < 1e-12);
            assert!(plus.add(minus).max_abs_diff(&id) < 1e-12);
            let rebuilt = plus.sub(minus);
            assert!(rebuilt.max_abs_diff(obs.matrix()) < 1e-12);
        }
    }

    #[test]
    fn weak_and_strong_bases_are_mutually_unbiased() {
        let pairs = [
            (Observable::z(), Observable::x()),
            (Observable::q(), Observable::p()),
        ];
        for (weak, strong) in pairs {
            for wo in [1i8, -1] {
                for so in [1i8, -1] {
                    let overlap = weak.projector(wo).mul(strong.projector(so)).trace().re;
                    assert_relative_eq!(overlap, 0.5, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn observable_rejects_degenerate_input() {
        let id = ComplexMatrix::identity(2);
        assert!(matches!(
            Observable::dichotomic(id),
            Err(Error::DegenerateObservable { .. })
        ));
    }

    #[test]
    fn density_validation_rejects_bad_trace() {
        let m = ComplexMatrix::identity(4);
        assert!(matches!(
            DensityMatrix::new_analytic(m),
            Err(Error::NotUnitTrace { .. })
        ));
    }

    #[test]
    fn pure_state_normalization_paths() {
        assert!(PureState::new(vec![c(0.9, 0.0), c(0.1, 0.0)]).is_err());
        let s = PureState::normalized(vec![c(3.0, 0.0), c(4.0, 0.0)]).unwrap();
        assert_relative_eq!(s.amplitudes()[0].re, 0.6, epsilon = 1e-15);
        assert!(PureState::normalized(vec![C64::ZERO, C64::ZERO]).is_err());
    }

    #[test]
    fn entangled_pair_tangle_follows_sin_squared_law() {
        // Pure states put three exact zeros in the spin-flip spectrum, and
        // square-rooting eigenvalue noise limits the formula to ~1e-7 there.
        for k in 0..=18 {
            let theta = (k as f64) * 5.0_f64.to_radians();
            let t = tangle(&entangled_pair(theta, 0.3).density()).unwrap();
            assert_relative_eq!(t, (2.0 * theta).sin().powi(2), epsilon = 1e-6);
        }
        assert!(entangled_pair(std::f64::consts::FRAC_PI_4, 0.0)
            .density()
            .fidelity_with_pure(&singlet()) > 1.0 - 1e-12);
    }

    #[test]
    fn concurrence_of_product_state_is_zero() {
        let h = PureState::new(vec![C64::ONE, C64::ZERO]).unwrap();
        let rho = h.tensor(&h).density();
        assert!(concurrence(&rho).unwrap() < 1e-10);
    }

    #[test]
    fn werner_closed_forms() {
        // The spin-flip spectrum of a Werner state stays away from zero, so
        // the concurrence formula is well conditioned and tight here.
        for v in [0.0, 0.2, 1.0 / 3.0, 0.5, 0.8, 0.944707, 1.0] {
            let rho = werner(v).unwrap();
            assert_relative_eq!(
                rho.expectation(&chsh_operator()),
                2.0 * std::f64::consts::SQRT_2 * v,
                epsilon = 1e-12
            );
            assert_relative_eq!(rho.fidelity_with_pure(&singlet()), (3.0 * v + 1.0) / 4.0, epsilon = 1e-12);
            let expected_c = ((3.0 * v - 1.0) / 2.0).max(0.0);
            assert_relative_eq!(concurrence(&rho).unwrap(), expected_c, epsilon = 1e-10);
            assert_relative_eq!(tangle(&rho).unwrap(), expected_c * expected_c, epsilon = 1e-10);
        }
        assert!(werner(1.2).is_err());
    }

    #[test]
    fn tangle_invariant_under_local_unitaries() {
        use crate::random::{random_density, random_unitary_2, rng_from_seed};
        let mut rng = rng_from_seed(0x7a61e);
        for _ in 0..100 {
            let rho = random_density(&mut rng, 4);
            let u = random_unitary_2(&mut rng).kron(&random_unitary_2(&mut rng));
            let rotated = DensityMatrix::new(u.mul(rho.matrix()).mul(&u.adjoint()), 1e-10).unwrap();
            let diff = (tangle(&rho).unwrap() - tangle(&rotated).unwrap()).abs();
            assert!(diff < 1e-9, "tangle shifted by {diff}");
        }
    }

    #[test]
    fn chsh_expectation_is_linear_in_the_state() {
        use crate::random::{random_density, rng_from_seed};
        let mut rng = rng_from_seed(0x11ea);
        let op = chsh_operator();
        for _ in 0..50 {
            let a = random_density(&mut rng, 4);
            let b = random_density(&mut rng, 4);
            let w = 0.37;
            let mix = DensityMatrix::new_analytic(
                a.matrix().scale_re(w).add(&b.matrix().scale_re(1.0 - w)),
            )
            .unwrap();
            assert_relative_eq!(
                mix.expectation(&op),
                w * a.expectation(&op) + (1.0 - w) * b.expectation(&op),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn fidelity_between_singlet_and_product_state() {
        let h = PureState::new(vec![C64::ONE, C64::ZERO]).unwrap();
        let v = PureState::new(vec![C64::ZERO, C64::ONE]).unwrap();
        let hv = h.tensor(&v).density();
        assert_relative_eq!(hv.fidelity_with_pure(&singlet()), 0.5, epsilon = 1e-12);
    }
}
