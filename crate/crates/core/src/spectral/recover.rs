//! Recovery of `O_t`, `π*(t)` and `Q*(t)` from moments.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::moments::MomentSet;
use crate::error::{Result, ShmmError};

const RANK_TOL: f64 = 1e-10;
const SEPARATION_TOL: f64 = 1e-6;
const MAX_ALPHA_DRAWS: usize = 10;
const IMAG_TOL: f64 = 1e-6;

/// Per-phase numerical diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct PhaseDiagnostics {
    pub t: usize,
    /// All singular values of `P(t)`.
    pub p_singular_values: Vec<f64>,
    /// Smallest gap between eigenvalues of the random combination `B`, relative
    /// to its spectral radius.
    pub eigen_separation: f64,
    pub alpha_draws: usize,
    /// Largest imaginary part of the eigenvalues relative to the spectral radius.
    pub imaginary_residue: f64,
}

/// Emission features, time marginal and right factor for one phase.
#[derive(Debug, Clone)]
pub struct PhaseRecovery {
    pub t: usize,
    /// `N × K`, columns in an arbitrary order.
    pub o: DMatrix<f64>,
    pub pi: DVector<f64>,
    /// Top-`K` right singular vectors of `P(t)`.
    pub v: DMatrix<f64>,
    pub diagnostics: PhaseDiagnostics,
}

/// Recovered quantities for a whole cycle `t = 1, …, T`.
#[derive(Debug, Clone)]
pub struct SpectralRecovery {
    pub o: Vec<DMatrix<f64>>,
    pub pi: Vec<DVector<f64>>,
    /// `q[t-1]` has rows in the state order of `o[t-1]` and columns in the
    /// order of `o[t]` (cyclically).
    pub q: Vec<DMatrix<f64>>,
    pub diagnostics: Vec<PhaseDiagnostics>,
    pub warnings: Vec<String>,
}

/// Recover `O_t` and `π*(t)` from the moment set of phase `t`.
pub fn recover_phase<R: Rng + ?Sized>(
    ms: &MomentSet,
    k: usize,
    rng: &mut R,
) -> Result<PhaseRecovery> {
    let n = ms.features();
    if k == 0 || n < k {
        return Err(ShmmError::InvalidArgument(format!(
            "need 1 <= K <= N, got K = {k}, N = {n}"
        )));
    }
    let svd = ms.p_mat.clone().svd(true, true);
    let (u, v) = top_singular_vectors(&svd, k);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let scale = sv[0].max(f64::MIN_POSITIVE);
    if sv[k - 1] <= RANK_TOL * scale {
        return Err(ShmmError::Rank(format!(
            "phase {}: singular value {} of P is {:.3e} (largest {:.3e}); \
             emission laws or transitions are rank deficient",
            ms.t,
            k,
            sv[k - 1],
            sv[0]
        )));
    }

    let upv = u.transpose() * &ms.p_mat * &v;
    let upv_inv = upv
        .clone()
        .try_inverse()
        .ok_or_else(|| ShmmError::Rank(format!("phase {}: UᵀPV is singular", ms.t)))?;
    let b_mats: Vec<DMatrix<f64>> = ms
        .m_slices
        .iter()
        .map(|m| &upv_inv * u.transpose() * m * &v)
        .collect();

    let mut draws = 0;
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    while draws < MAX_ALPHA_DRAWS {
        draws += 1;
        let mut alpha: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = alpha.iter().map(|a| a * a).sum::<f64>().sqrt();
        alpha.iter_mut().for_each(|a| *a /= norm);
        let b = combine(&b_mats, &alpha);
        let eig = b.complex_eigenvalues();
        let radius = eig
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let imag = eig.iter().map(|z| z.im.abs()).fold(0.0, f64::max) / radius;
        let mut re: Vec<f64> = eig.iter().map(|z| z.re).collect();
        re.sort_by(f64::total_cmp);
        let sep = re
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
            / radius;
        if best.as_ref().is_none_or(|(s, _, _)| sep > *s) {
            best = Some((sep, alpha, imag));
        }
        if sep > SEPARATION_TOL {
            break;
        }
    }
    let (sep, alpha, imag) = best.expect("at least one draw");
    if sep <= SEPARATION_TOL {
        return Err(ShmmError::Degeneracy(format!(
            "phase {}: eigenvalues of B stayed within {:.3e} of each other after {draws} draws; \
             emission laws are nearly indistinguishable",
            ms.t, sep
        )));
    }
    let b = combine(&b_mats, &alpha);
    let mut lambdas: Vec<f64> = b.complex_eigenvalues().iter().map(|z| z.re).collect();
    lambdas.sort_by(f64::total_cmp);
    let mut r = DMatrix::zeros(k, k);
    for (col, &lam) in lambdas.iter().enumerate() {
        let shifted = &b - DMatrix::identity(k, k) * lam;
        let s = shifted.svd(false, true);
        let v_t = s.v_t.expect("requested");
        let idx = s
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("non-empty");
        for row in 0..k {
            r[(row, col)] = v_t[(idx, row)];
        }
    }
    let r_inv = r.clone().try_inverse().ok_or_else(|| {
        ShmmError::Degeneracy(format!(
            "phase {}: eigenvectors of B are not independent",
            ms.t
        ))
    })?;
    let mut o = DMatrix::zeros(n, k);
    for (bi, bm) in b_mats.iter().enumerate() {
        let d = &r_inv * bm * &r;
        for c in 0..k {
            o[(bi, c)] = d[(c, c)];
        }
    }

    let pi_raw = o
        .clone()
        .svd(true, true)
        .solve(&ms.l, 1e-14)
        .map_err(|e| ShmmError::Numerical(format!("phase {}: {e}", ms.t)))?;
    let total = pi_raw.sum();
    let pi = pi_raw / total;

    Ok(PhaseRecovery {
        t: ms.t,
        o,
        pi,
        v,
        diagnostics: PhaseDiagnostics {
            t: ms.t,
            p_singular_values: sv,
            eigen_separation: sep,
            alpha_draws: draws,
            imaginary_residue: imag,
        },
    })
}

/// `Q*(t) = (Ũᵀ O_t diag π*(t))^{-1} Ũᵀ N(t) V (O_{t+1}ᵀ V)^{-1}` with rows
/// renormalized; `Ũ` holds the top left singular vectors of `N(t)`.
pub fn recover_transition(
    ms: &MomentSet,
    here: &PhaseRecovery,
    o_next: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let k = here.o.ncols();
    let svd = ms.n_mat.clone().svd(true, true);
    let (u_tilde, _) = top_singular_vectors(&svd, k);
    let left = (u_tilde.transpose() * &here.o * DMatrix::from_diagonal(&here.pi))
        .try_inverse()
        .ok_or_else(|| ShmmError::Rank(format!("phase {}: ŨᵀO diag(π) is singular", ms.t)))?;
    let right = (o_next.transpose() * &here.v)
        .try_inverse()
        .ok_or_else(|| ShmmError::Rank(format!("phase {}: O_{{t+1}}ᵀV is singular", ms.t)))?;
    let mut q = left * u_tilde.transpose() * &ms.n_mat * &here.v * right;
    for mut row in q.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    Ok(q)
}

/// Recover a whole cycle from the moment sets of phases `1, …, T` (in order).
pub fn recover<R: Rng + ?Sized>(
    sets: &[MomentSet],
    k: usize,
    rng: &mut R,
) -> Result<SpectralRecovery> {
    if sets.is_empty() {
        return Err(ShmmError::InvalidArgument("no moment sets".into()));
    }
    let phases = sets
        .iter()
        .map(|ms| recover_phase(ms, k, rng))
        .collect::<Result<Vec<_>>>()?;
    let period = sets.len();
    let mut q = Vec::with_capacity(period);
    for (i, ms) in sets.iter().enumerate() {
        q.push(recover_transition(
            ms,
            &phases[i],
            &phases[(i + 1) % period].o,
        )?);
    }
    let warnings = phases
        .iter()
        .filter(|p| p.diagnostics.imaginary_residue > IMAG_TOL)
        .map(|p| {
            format!(
                "phase {}: complex eigenvalues (relative imaginary part {:.3e}); real parts used",
                p.t, p.diagnostics.imaginary_residue
            )
        })
        .collect();
    Ok(SpectralRecovery {
        o: phases.iter().map(|p| p.o.clone()).collect(),
        pi: phases.iter().map(|p| p.pi.clone()).collect(),
        q,
        diagnostics: phases.into_iter().map(|p| p.diagnostics).collect(),
        warnings,
    })
}

fn combine(b_mats: &[DMatrix<f64>], alpha: &[f64]) -> DMatrix<f64> {
    let k = b_mats[0].nrows();
    b_mats
        .iter()
        .zip(alpha)
        .fold(DMatrix::zeros(k, k), |acc, (b, a)| acc + b * *a)
}

/// Left and right singular vectors of the `k` largest singular values.
fn top_singular_vectors(
    svd: &nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
    k: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let u = svd.u.as_ref().expect("requested");
    let v_t = svd.v_t.as_ref().expect("requested");
    let mut uu = DMatrix::zeros(u.nrows(), k);
    let mut vv = DMatrix::zeros(v_t.ncols(), k);
    for (c, &i) in order.iter().take(k).enumerate() {
        uu.set_column(c, &u.column(i));
        vv.set_column(c, &v_t.row(i).transpose());
    }
    (uu, vv)
}
