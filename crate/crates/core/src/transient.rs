//! Transient conditional states: the Hermitian unit-trace operator
//! R = (F rho + rho F) / (2 Tr[F rho]) assigned to a preparation rho and a
//! postselection F. Diagonal elements of R in any product basis reproduce the
//! weak-valued joint probabilities, and R may carry negative eigenvalues;
//! that negativity is exactly what lets the Bell accounting pass 2.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{ComplexMatrix, MatrixDto};
use crate::states::DensityMatrix;
use crate::weak::{MeasurementFrame, WeakJointTable, OUTCOMES, POSTSELECTION_FLOOR};

/// Conditional state between preparation and postselection. Hermitian with
/// unit trace by construction; positivity is deliberately not enforced.
#[derive(Debug, Clone)]
pub struct TransientMatrix {
    matrix: ComplexMatrix,
    postselection: ComplexMatrix,
    selection_prob: f64,
}

impl TransientMatrix {
    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn postselection(&self) -> &ComplexMatrix {
        &self.postselection
    }

    /// Probability Tr[F rho] of the postselection that conditions this state.
    pub fn selection_prob(&self) -> f64 {
        self.selection_prob
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        self.matrix.hermitian_eigenvalues()
    }

    /// Sum of the magnitudes of negative eigenvalues; zero for a physical
    /// state.
    pub fn negativity(&self) -> Result<f64> {
        Ok(self
            .eigenvalues()?
            .into_iter()
            .filter(|&v| v < 0.0)
            .map(f64::abs)
            .sum())
    }

    /// True when some eigenvalue falls below -1e-10, past numerical noise.
    pub fn is_non_realistic(&self) -> Result<bool> {
        Ok(self.eigenvalues()?.into_iter().any(|v| v < -1e-10))
    }

    /// Expectation Tr[O R]; real for Hermitian O.
    pub fn expectation(&self, obs: &ComplexMatrix) -> f64 {
        obs.mul(&self.matrix).trace().re
    }

    pub fn to_dto(&self) -> TransientDto {
        TransientDto {
            matrix: MatrixDto::from(&self.matrix),
            postselection: MatrixDto::from(&self.postselection),
            selection_prob: self.selection_prob,
        }
    }
}

/// JSON shape for a transient state dump.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransientDto {
    pub matrix: MatrixDto,
    pub postselection: MatrixDto,
    pub selection_prob: f64,
}

/// Builds the transient state for preparation `rho` and postselection POVM
/// element `f`. Fails on vanishing selection probability.
pub fn transient_matrix(rho: &DensityMatrix, f: &ComplexMatrix) -> Result<TransientMatrix> {
    if f.dim() != rho.dim() {
        return Err(Error::Dimension { expected: rho.dim(), got: f.dim() });
    }
    let prob = f.mul(rho.matrix()).trace().re;
    if prob <= POSTSELECTION_FLOOR {
        return Err(Error::ZeroPostselection { prob });
    }
    let anticomm = f.mul(rho.matrix()).add(&rho.matrix().mul(f));
    let matrix = anticomm.scale_re(0.5 / prob);
    let dev = matrix.hermiticity_deviation();
    if dev > 1e-12 {
        return Err(Error::NotHermitian { deviation: dev });
    }
    let tr = matrix.trace();
    if (tr.re - 1.0).abs() > 1e-12 || tr.im.abs() > 1e-12 {
        return Err(Error::NotUnitTrace { trace: tr.re, tol: 1e-12 });
    }
    Ok(TransientMatrix { matrix, postselection: f.clone(), selection_prob: prob })
}

/// All four transients of a frame's strong product postselections, keyed by
/// (x, p) in the default frame and by (z, q) in the basis-swapped one.
pub fn strong_pair_transients(
    rho: &DensityMatrix,
    frame: &MeasurementFrame,
) -> Result<Vec<((i8, i8), TransientMatrix)>> {
    let mut out = Vec::with_capacity(4);
    for a in OUTCOMES {
        for b in OUTCOMES {
            // Slot arguments are degenerate across the unused outcomes, so
            // pass `a` and `b` to both observable slots of each arm.
            let f = frame.strong_pair_projector(a, a, b, b);
            out.push(((a, b), transient_matrix(rho, &f)?));
        }
    }
    Ok(out)
}

/// Predicts the full weak-valued table through the transient route:
/// entry(x,z,p,q) = Tr[(weak-pair projector) R] * Tr[F rho]. Algebraically
/// identical to the direct table via the anticommutator form.
pub fn predict_joint_from_transient(
    rho: &DensityMatrix,
    frame: &MeasurementFrame,
) -> Result<WeakJointTable> {
    if rho.dim() != 4 {
        return Err(Error::Dimension { expected: 4, got: rho.dim() });
    }
    frame.validate()?;
    let mut table = WeakJointTable::empty();
    for x in OUTCOMES {
        for z in OUTCOMES {
            for p in OUTCOMES {
                for q in OUTCOMES {
                    let f = frame.strong_pair_projector(x, z, p, q);
                    let prob = f.mul(rho.matrix()).trace().re;
                    if prob <= POSTSELECTION_FLOOR {
                        table.set(x, z, p, q, None);
                        continue;
                    }
                    let r = transient_matrix(rho, &f)?;
                    let weak_proj = frame.weak_pair_projector(x, z, p, q);
                    table.set(x, z, p, q, Some(r.expectation(&weak_proj) * prob));
                }
            }
        }
    }
    Ok(table)
}

/// Probability-weighted sum over a postselection set. When the set resolves
/// the identity the sum reconstructs the preparation exactly.
pub fn statistical_sum(rho: &DensityMatrix, selections: &[ComplexMatrix]) -> Result<ComplexMatrix> {
    let mut acc = ComplexMatrix::zeros(rho.dim());
    for f in selections {
        let r = transient_matrix(rho, f)?;
        acc = acc.add(&r.matrix().scale_re(r.selection_prob()));
    }
    Ok(acc)
}

/// How close the transient sits to an exact tensor product of single-qubit
/// Hermitian factors. Exploratory only: nothing in the pipeline depends on
/// the answer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorizationDiagnostic {
    /// Frobenius distance from the best product approximation.
    pub residual: f64,
    /// Distance normalized by the Frobenius norm of the transient.
    pub relative_residual: f64,
    pub alice_factor: MatrixDto,
    pub bob_factor: MatrixDto,
}

/// Nearest-Kronecker-product diagnostic: rearrange the 4x4 transient so that
/// a rank-1 approximation of the rearrangement corresponds to the best
/// product A tensor B, then report the residual.
pub fn factorization_diagnostic(r: &TransientMatrix) -> Result<FactorizationDiagnostic> {
    let m = r.matrix();
    if m.dim() != 4 {
        return Err(Error::Dimension { expected: 4, got: m.dim() });
    }
    // Rearranged matrix: row (i, j) over Alice indices, column (k, l) over
    // Bob indices, entry M[(2i + k, 2j + l)].
    let mut rearr = ComplexMatrix::zeros(4);
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    rearr[(i * 2 + j, k * 2 + l)] = m[(2 * i + k, 2 * j + l)];
                }
            }
        }
    }
    // Dominant singular triple via the Hermitian Gram matrix.
    let gram = rearr.adjoint().mul(&rearr);
    let eig = gram.hermitian_eigen()?;
    let v: Vec<_> = (0..4).map(|i| eig.vectors[(i, 3)]).collect();
    let u = rearr.apply(&v);
    // alice vec = u (unnormalized, carrying the singular value); bob vec = v.
    let mut alice = ComplexMatrix::zeros(2);
    let mut bob = ComplexMatrix::zeros(2);
    for i in 0..2 {
        for j in 0..2 {
            alice[(i, j)] = u[i * 2 + j];
            bob[(i, j)] = v[i * 2 + j];
        }
    }
    let product = alice.kron(&bob);
    let residual = m.sub(&product).frobenius_norm();
    let norm = m.frobenius_norm().max(1e-300);
    Ok(FactorizationDiagnostic {
        residual,
        relative_residual: residual / norm,
        alice_factor: MatrixDto::from(&alice),
        bob_factor: MatrixDto::from(&bob),
    })
}
