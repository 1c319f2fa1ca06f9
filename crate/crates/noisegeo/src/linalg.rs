//! Dense spectral routines: one-sided Jacobi SVD, symmetric Jacobi
//! eigendecomposition, and PCA strength spectra.
//!
//! Everything here targets the small matrices this crate actually meets
//! (≤ 512×512); accuracy is favoured over asymptotics.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Thin singular value decomposition `M = U · diag(s) · Vᵀ`.
///
/// `u` is m×k, `v` is n×k with k = min(m,n); both have orthonormal columns
/// and `s` is descending and nonnegative.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Tensor,
    pub s: Vec<f64>,
    pub v: Tensor,
}

const JACOBI_EPS: f64 = 1e-15;
const MAX_SWEEPS: usize = 64;

/// One-sided Jacobi SVD of a rank-2 tensor.
pub fn svd(m: &Tensor) -> Result<Svd> {
    if m.rank() != 2 {
        return Err(Error::invalid(format!(
            "svd expects a matrix, got shape {:?}",
            m.shape()
        )));
    }
    let rows = m.shape()[0];
    let cols = m.shape()[1];
    if rows >= cols {
        svd_tall(m)
    } else {
        // svd(Mᵀ) = (V, s, U)
        let t = m.transpose()?;
        let Svd { u, s, v } = svd_tall(&t)?;
        Ok(Svd { u: v, s, v: u })
    }
}

/// Jacobi rotations orthogonalize the columns of a tall matrix in place;
/// column norms become the singular values and the accumulated rotations
/// form V.
fn svd_tall(m: &Tensor) -> Result<Svd> {
    let rows = m.shape()[0];
    let cols = m.shape()[1];
    // column-major working copy for cache-friendly column ops
    let mut a: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..rows).map(|i| m.at2(i, j)).collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            e
        })
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let (mut app, mut aqq, mut apq) = (0.0, 0.0, 0.0);
                for i in 0..rows {
                    app += a[p][i] * a[p][i];
                    aqq += a[q][i] * a[q][i];
                    apq += a[p][i] * a[q][i];
                }
                if apq.abs() <= JACOBI_EPS * (app * aqq).sqrt() || apq == 0.0 {
                    continue;
                }
                rotated = true;
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let ap = a[p][i];
                    let aq = a[q][i];
                    a[p][i] = c * ap - s * aq;
                    a[q][i] = s * ap + c * aq;
                }
                for i in 0..cols {
                    let vp = v[p][i];
                    let vq = v[q][i];
                    v[p][i] = c * vp - s * vq;
                    v[q][i] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    // Singular values and column order.
    let mut order: Vec<usize> = (0..cols).collect();
    let norms: Vec<f64> = a.iter().map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());

    let smax = norms[order[0]];
    let mut u = vec![0.0; rows * cols];
    let mut vt = vec![0.0; cols * cols];
    let mut s = vec![0.0; cols];
    let mut filled: Vec<bool> = vec![false; cols];
    for (k, &j) in order.iter().enumerate() {
        s[k] = norms[j];
        if norms[j] > smax * 1e-300 && norms[j] > 0.0 {
            for i in 0..rows {
                u[i * cols + k] = a[j][i] / norms[j];
            }
            filled[k] = true;
        }
        for i in 0..cols {
            vt[i * cols + k] = v[j][i];
        }
    }

    // Rank-deficient case: complete U with orthonormal columns drawn from
    // canonical basis vectors so the orthonormality contract still holds.
    for k in 0..cols {
        if filled[k] {
            continue;
        }
        let mut best: Option<Vec<f64>> = None;
        let mut best_norm = 0.0;
        for cand in 0..rows {
            let mut col = vec![0.0; rows];
            col[cand] = 1.0;
            // Gram–Schmidt against already-filled columns (twice, for accuracy)
            for _ in 0..2 {
                for kk in 0..cols {
                    if !filled[kk] {
                        continue;
                    }
                    let dot: f64 = (0..rows).map(|i| col[i] * u[i * cols + kk]).sum();
                    for i in 0..rows {
                        col[i] -= dot * u[i * cols + kk];
                    }
                }
            }
            let nrm: f64 = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nrm > best_norm {
                best_norm = nrm;
                best = Some(col);
            }
            if nrm > 0.9 {
                break;
            }
        }
        let col = best.expect("rows >= cols guarantees a complement exists");
        for i in 0..rows {
            u[i * cols + k] = col[i] / best_norm;
        }
        filled[k] = true;
    }

    Ok(Svd {
        u: Tensor::new([rows, cols], u)?,
        s,
        v: Tensor::new([cols, cols], vt)?,
    })
}

/// Symmetric eigendecomposition `A = Q · diag(λ) · Qᵀ` by classical Jacobi;
/// eigenvalues descending. The input is symmetrized first.
pub fn eigh(m: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    if m.rank() != 2 || m.shape()[0] != m.shape()[1] {
        return Err(Error::invalid(format!(
            "eigh expects a square matrix, got {:?}",
            m.shape()
        )));
    }
    let n = m.shape()[0];
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = 0.5 * (m.at2(i, j) + m.at2(j, i));
        }
    }
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        q[i * n + i] = 1.0;
    }

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i * n + j] * a[i * n + j];
            }
        }
        if off.sqrt() <= 1e-14 * (1.0 + frob(&a)) {
            break;
        }
        for p in 0..n {
            for r in (p + 1)..n {
                let apq = a[p * n + r];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[r * n + r];
                if apq.abs() <= JACOBI_EPS * (app.abs() + aqq.abs()) {
                    a[p * n + r] = 0.0;
                    a[r * n + p] = 0.0;
                    continue;
                }
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + r];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + r] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[r * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[r * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let qkp = q[k * n + p];
                    let qkq = q[k * n + r];
                    q[k * n + p] = c * qkp - s * qkq;
                    q[k * n + r] = s * qkp + c * qkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].partial_cmp(&a[i * n + i]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (k, &j) in order.iter().enumerate() {
        for i in 0..n {
            vectors[i * n + k] = q[i * n + j];
        }
    }
    Ok((eigenvalues, Tensor::new([n, n], vectors)?))
}

fn frob(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// PCA component strengths of a sample matrix (rows are samples): the
/// covariance eigenvalues normalized to sum to one, descending.
pub fn pca_strengths(samples: &Tensor) -> Result<Vec<f64>> {
    if samples.rank() != 2 {
        return Err(Error::invalid(format!(
            "pca_strengths expects (n, m) samples, got {:?}",
            samples.shape()
        )));
    }
    let n = samples.shape()[0];
    let m = samples.shape()[1];
    if n < 2 {
        return Err(Error::invalid("pca_strengths needs at least 2 samples"));
    }

    // column means
    let mut mean = vec![0.0; m];
    for i in 0..n {
        for j in 0..m {
            mean[j] += samples.at2(i, j);
        }
    }
    for v in &mut mean {
        *v /= n as f64;
    }

    // covariance (unbiased)
    let mut cov = vec![0.0; m * m];
    let mut scale = 0.0f64;
    for i in 0..n {
        for j in 0..m {
            let dj = samples.at2(i, j) - mean[j];
            scale = scale.max(dj.abs());
            for k in j..m {
                let dk = samples.at2(i, k) - mean[k];
                cov[j * m + k] += dj * dk;
            }
        }
    }
    let denom = (n - 1) as f64;
    for j in 0..m {
        for k in j..m {
            cov[j * m + k] /= denom;
            cov[k * m + j] = cov[j * m + k];
        }
    }

    let trace: f64 = (0..m).map(|j| cov[j * m + j]).sum();
    // all-identical samples leave only rounding residue in the deviations
    if trace <= 1e-24 * (1.0 + scale * scale) || trace == 0.0 {
        return Err(Error::DegenerateCovariance);
    }

    let (mut eig, _) = eigh(&Tensor::new([m, m], cov)?)?;
    for v in &mut eig {
        *v = v.max(0.0);
    }
    let total: f64 = eig.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateCovariance);
    }
    Ok(eig.into_iter().map(|v| v / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;

    fn reconstruct(d: &Svd) -> Tensor {
        let k = d.s.len();
        let mut sv = Tensor::zeros([k, k]);
        for i in 0..k {
            sv.data_mut()[i * k + i] = d.s[i];
        }
        d.u.matmul(&sv).unwrap().matmul(&d.v.transpose().unwrap()).unwrap()
    }

    fn orthonormality_defect(u: &Tensor) -> f64 {
        let k = u.shape()[1];
        let gram = u.transpose().unwrap().matmul(u).unwrap();
        gram.max_abs_diff(&Tensor::eye(k)).unwrap()
    }

    #[test]
    fn diag_singular_values() {
        let m = Tensor::matrix(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let d = svd(&m).unwrap();
        assert!((d.s[0] - 3.0).abs() < 1e-12);
        assert!((d.s[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_singular_values_all_one() {
        let d = svd(&Tensor::eye(4)).unwrap();
        for s in &d.s {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn random_rect_reconstructs_within_tolerance() {
        let mut rs = RandomSource::new(11);
        for &(r, c) in &[(5usize, 3usize), (3, 5), (7, 7)] {
            let m = rs.gaussian(&[r, c]).unwrap();
            let d = svd(&m).unwrap();
            let err = reconstruct(&d).max_abs_diff(&m).unwrap();
            assert!(err <= 1e-8 * (1.0 + m.max_abs()), "err {err}");
            assert!(orthonormality_defect(&d.u) <= 1e-8);
            assert!(orthonormality_defect(&d.v) <= 1e-8);
            assert!(d.s.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn rank_deficient_still_orthonormal() {
        let mut rs = RandomSource::new(3);
        let a = rs.gaussian(&[6, 2]).unwrap();
        let b = rs.gaussian(&[2, 6]).unwrap();
        let m = a.matmul(&b).unwrap();
        let d = svd(&m).unwrap();
        assert!(reconstruct(&d).max_abs_diff(&m).unwrap() <= 1e-8 * (1.0 + m.max_abs()));
        assert!(orthonormality_defect(&d.u) <= 1e-8);
        assert!(orthonormality_defect(&d.v) <= 1e-8);
        // singular values 3..6 are numerically zero
        for s in &d.s[2..] {
            assert!(*s <= 1e-10 * d.s[0]);
        }
    }

    #[test]
    fn zero_matrix_svd_is_sane() {
        let d = svd(&Tensor::zeros([3, 2])).unwrap();
        assert!(d.s.iter().all(|&s| s == 0.0));
        assert!(orthonormality_defect(&d.u) <= 1e-12);
    }

    #[test]
    fn eigh_recovers_known_spectrum() {
        // A = Q diag(5,2,-1) Qᵀ built from a random orthogonal Q (via svd)
        let mut rs = RandomSource::new(21);
        let g = rs.gaussian(&[3, 3]).unwrap();
        let q = svd(&g).unwrap().u;
        let mut d = Tensor::zeros([3, 3]);
        d.data_mut()[0] = 5.0;
        d.data_mut()[4] = 2.0;
        d.data_mut()[8] = -1.0;
        let a = q.matmul(&d).unwrap().matmul(&q.transpose().unwrap()).unwrap();
        let (eig, vecs) = eigh(&a).unwrap();
        assert!((eig[0] - 5.0).abs() < 1e-10);
        assert!((eig[1] - 2.0).abs() < 1e-10);
        assert!((eig[2] + 1.0).abs() < 1e-10);
        // A·v = λ·v for each column
        for k in 0..3 {
            let col = Tensor::vector((0..3).map(|i| vecs.at2(i, k)).collect());
            let av = a.matvec(&col).unwrap();
            assert!(av.max_abs_diff(&col.scale(eig[k])).unwrap() < 1e-9);
        }
    }

    #[test]
    fn planar_samples_have_exactly_two_strengths() {
        // points on a 2-plane inside 5-space
        let mut rs = RandomSource::new(8);
        let basis = rs.gaussian(&[2, 5]).unwrap();
        let coeffs = rs.gaussian(&[200, 2]).unwrap();
        let pts = coeffs.matmul(&basis).unwrap();
        let s = pca_strengths(&pts).unwrap();
        assert!(s[0] > 0.0 && s[1] > 0.0);
        for v in &s[2..] {
            assert!(*v <= 1e-10, "strength {v}");
        }
        let total: f64 = s.iter().sum();
        assert!((total - 1.0).abs() <= 1e-12);
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn isotropic_gaussian_strengths_are_uniform() {
        let mut rs = RandomSource::new(99);
        let pts = rs.gaussian(&[100_000, 3]).unwrap();
        let s = pca_strengths(&pts).unwrap();
        for v in &s {
            assert!((v - 1.0 / 3.0).abs() < 0.01, "strength {v}");
        }
    }

    #[test]
    fn repeated_point_is_degenerate() {
        let pts = Tensor::new([4, 3], vec![1.0, 2.0, 3.0].repeat(4)).unwrap();
        assert!(matches!(
            pca_strengths(&pts),
            Err(Error::DegenerateCovariance)
        ));
    }
}
