//! Truncated SVD of a dense association matrix, the closed-form embedder.
//!
//! Large matrices use randomized subspace iteration; the small projected
//! problem and every matrix of at most [`JACOBI_LIMIT`] columns go through a
//! one-sided Jacobi SVD. All arithmetic is done in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::association::{Association, AssociationKind, AssociationSpec};
use crate::corpus::CoocStats;
use crate::error::{Error, Result};
use crate::model::{EmbeddingModel, KernelSpec};
use crate::scalar::Scalar;

/// Power iterations of the randomized range finder.
pub const POWER_ITERATIONS: usize = 4;
/// Extra columns sampled beyond the requested rank.
pub const OVERSAMPLING: usize = 8;
/// Matrices this narrow are decomposed exactly.
pub const JACOBI_LIMIT: usize = 64;

/// Row-major matrix of association values.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseAssocMatrix<F> {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<F>,
    pub spec: Option<AssociationSpec>,
}

impl<F: Scalar> DenseAssocMatrix<F> {
    pub fn from_rows(rows: usize, cols: usize, entries: Vec<F>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {}x{} matrix",
                entries.len(),
                rows,
                cols
            )));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::UnboundedAssociation);
        }
        Ok(DenseAssocMatrix {
            rows,
            cols,
            entries,
            spec: None,
        })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> F {
        self.entries[i * self.cols + j]
    }

    fn to_f64(&self) -> Vec<f64> {
        self.entries.iter().map(|x| x.to_f64_lossy()).collect()
    }
}

/// Dense `φ` for every pair. Rows and columns of words without
/// cooccurrences are zero.
pub fn build_assoc_matrix<F: Scalar>(
    stats: &CoocStats,
    spec: &AssociationSpec,
) -> Result<DenseAssocMatrix<F>> {
    if !spec.is_bounded() {
        return Err(Error::UnboundedAssociation);
    }
    let size = stats.size();
    let assoc = Association::new(*spec, stats)?;
    let mut entries = vec![F::zero(); size * size];
    for i in 0..size {
        if stats.context_marginal(i) <= 0.0 {
            continue;
        }
        for j in 0..size {
            if stats.term_marginal(j) <= 0.0 {
                continue;
            }
            entries[i * size + j] = F::of(assoc.value(i, j)?);
        }
    }
    Ok(DenseAssocMatrix {
        rows: size,
        cols: size,
        entries,
        spec: Some(*spec),
    })
}

/// `M ≈ U diag(S) Vt`.
#[derive(Clone, Debug, PartialEq)]
pub struct Svd<F> {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    /// `rows × rank`, row-major.
    pub u: Vec<F>,
    pub s: Vec<F>,
    /// `rank × cols`, row-major.
    pub vt: Vec<F>,
}

impl<F: Scalar> Svd<F> {
    /// `U diag(S) Vt`, row-major.
    pub fn reconstruct(&self) -> Vec<F> {
        let mut out = vec![F::zero(); self.rows * self.cols];
        for i in 0..self.rows {
            for k in 0..self.rank {
                let a = self.u[i * self.rank + k] * self.s[k];
                if a == F::zero() {
                    continue;
                }
                let row = &self.vt[k * self.cols..(k + 1) * self.cols];
                for (o, &v) in out[i * self.cols..(i + 1) * self.cols].iter_mut().zip(row) {
                    *o += a * v;
                }
            }
        }
        out
    }
}

/// Frobenius norm of `a − b`.
pub fn frobenius_error<F: Scalar>(a: &[F], b: &[F]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).to_f64_lossy().powi(2))
        .sum::<f64>()
        .sqrt()
}

/// One-sided Jacobi SVD of a row-major `m × n` matrix. Returns
/// `(U: m × n, S: n, V: n × n)` with `S` sorted descending, `V` row-major
/// (row `r` holds component `r` of every right singular vector).
pub fn jacobi_svd(a: &[f64], m: usize, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    // work on columns: g[c] is column c of A
    let mut g: Vec<Vec<f64>> = (0..n).map(|c| (0..m).map(|r| a[r * n + c]).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|c| {
            let mut e = vec![0.0; n];
            e[c] = 1.0;
            e
        })
        .collect();
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for r in 0..m {
                    alpha += g[p][r] * g[p][r];
                    beta += g[q][r] * g[q][r];
                    gamma += g[p][r] * g[q][r];
                }
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (gp, gq) = split_pair(&mut g, p, q);
                for r in 0..m {
                    let (x, y) = (gp[r], gq[r]);
                    gp[r] = c * x - s * y;
                    gq[r] = s * x + c * y;
                }
                let (vp, vq) = split_pair(&mut v, p, q);
                for r in 0..n {
                    let (x, y) = (vp[r], vq[r]);
                    vp[r] = c * x - s * y;
                    vq[r] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = g.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));

    let mut u = vec![0.0; m * n];
    let mut s = vec![0.0; n];
    let mut vt = vec![0.0; n * n];
    for (k, &c) in order.iter().enumerate() {
        s[k] = norms[c];
        if norms[c] > 0.0 {
            for r in 0..m {
                u[r * n + k] = g[c][r] / norms[c];
            }
        }
        for r in 0..n {
            vt[k * n + r] = v[c][r];
        }
    }
    complete_basis(&mut u, m, n, &s);
    (u, s, vt)
}

fn split_pair<T>(v: &mut [T], p: usize, q: usize) -> (&mut T, &mut T) {
    let (a, b) = v.split_at_mut(q);
    (&mut a[p], &mut b[0])
}

/// Replace left singular vectors of zero singular values with unit vectors
/// orthogonal to the rest, so `U` always has orthonormal columns.
fn complete_basis(u: &mut [f64], m: usize, n: usize, s: &[f64]) {
    let tiny = s.first().copied().unwrap_or(0.0) * 1e-14;
    for k in 0..n.min(m) {
        if s[k] > tiny && s[k] > 0.0 {
            continue;
        }
        for e in 0..m {
            let mut col = vec![0.0; m];
            col[e] = 1.0;
            for _ in 0..2 {
                for other in 0..n.min(m) {
                    if other == k || (other > k && !(s[other] > tiny && s[other] > 0.0)) {
                        continue;
                    }
                    let d: f64 = (0..m).map(|r| col[r] * u[r * n + other]).sum();
                    for r in 0..m {
                        col[r] -= d * u[r * n + other];
                    }
                }
            }
            let nrm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nrm > 1e-6 {
                for r in 0..m {
                    u[r * n + k] = col[r] / nrm;
                }
                break;
            }
        }
    }
}

/// Orthonormalize the `cols` columns of a row-major `rows × cols` matrix in
/// place (modified Gram-Schmidt, applied twice).
fn orthonormalize(a: &mut [f64], rows: usize, cols: usize) {
    for _ in 0..2 {
        for c in 0..cols {
            for p in 0..c {
                let d: f64 = (0..rows).map(|r| a[r * cols + c] * a[r * cols + p]).sum();
                for r in 0..rows {
                    a[r * cols + c] -= d * a[r * cols + p];
                }
            }
            let nrm = (0..rows).map(|r| a[r * cols + c].powi(2)).sum::<f64>().sqrt();
            if nrm > 0.0 {
                for r in 0..rows {
                    a[r * cols + c] /= nrm;
                }
            }
        }
    }
}

/// `A (m × n) · B (n × l)`, all row-major.
fn matmul(a: &[f64], b: &[f64], m: usize, n: usize, l: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * l];
    for i in 0..m {
        let row = &mut out[i * l..(i + 1) * l];
        for k in 0..n {
            let x = a[i * n + k];
            if x == 0.0 {
                continue;
            }
            for (o, &y) in row.iter_mut().zip(&b[k * l..(k + 1) * l]) {
                *o += x * y;
            }
        }
    }
    out
}

/// `Aᵀ (n × m) · B (m × l)` for row-major `A: m × n`.
fn matmul_t(a: &[f64], b: &[f64], m: usize, n: usize, l: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * l];
    for r in 0..m {
        let brow = &b[r * l..(r + 1) * l];
        for k in 0..n {
            let x = a[r * n + k];
            if x == 0.0 {
                continue;
            }
            for (o, &y) in out[k * l..(k + 1) * l].iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    out
}

fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Exact thin SVD `(U: m × r, S: r, Vt: r × n)` with `r = min(m, n)`.
fn exact_svd(a: &[f64], m: usize, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    if m >= n {
        // columns of A are orthogonalized; V is n × n
        let (u, s, v) = jacobi_svd(a, m, n);
        (u, s, v)
    } else {
        // Aᵀ = U' S V'ᵀ  ⇒  A = V' S U'ᵀ
        let at = transpose(a, m, n);
        let (u2, s, v2) = jacobi_svd(&at, n, m);
        // v2 row k = k-th right singular vector of Aᵀ = k-th left vector of A
        let u = transpose(&v2, m, m);
        let vt = transpose(&u2, n, m);
        (u, s, vt)
    }
}

/// Rank-`rank` truncated SVD. Matrices with `min(m, n) <= JACOBI_LIMIT`, or
/// where `rank + OVERSAMPLING` covers the smaller side, are decomposed
/// exactly; otherwise a seeded randomized range finder reduces the problem
/// first.
pub fn truncated_svd<F: Scalar>(m: &DenseAssocMatrix<F>, rank: usize, seed: u64) -> Result<Svd<F>> {
    let (rows, cols) = (m.rows, m.cols);
    let max = rows.min(cols);
    if rank < 1 || rank > max {
        return Err(Error::RankOutOfRange { rank, max });
    }
    let a = m.to_f64();
    let l = rank + OVERSAMPLING;

    let (u_full, s_full, vt_full, r) = if max <= JACOBI_LIMIT || l >= max {
        let (u, s, vt) = exact_svd(&a, rows, cols);
        (u, s, vt, max)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let omega: Vec<f64> = (0..cols * l).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut q = matmul(&a, &omega, rows, cols, l);
        orthonormalize(&mut q, rows, l);
        for _ in 0..POWER_ITERATIONS {
            let mut z = matmul_t(&a, &q, rows, cols, l);
            orthonormalize(&mut z, cols, l);
            q = matmul(&a, &z, rows, cols, l);
            orthonormalize(&mut q, rows, l);
        }
        // B = Qᵀ A is l × cols
        let b = matmul_t(&q, &a, rows, l, cols);
        let (ub, s, vt) = exact_svd(&b, l, cols);
        let u = matmul(&q, &ub, rows, l, l);
        (u, s, vt, l)
    };

    let mut u = vec![0.0; rows * rank];
    let mut vt = vec![0.0; rank * cols];
    let mut s = vec![0.0; rank];
    for k in 0..rank {
        // flip so the largest-magnitude entry of u_k is positive
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for i in 0..rows {
            let x = u_full[i * r + k];
            if x.abs() > best.abs() {
                best = x;
            }
        }
        if best < 0.0 {
            sign = -1.0;
        }
        for i in 0..rows {
            u[i * rank + k] = sign * u_full[i * r + k];
        }
        for j in 0..cols {
            vt[k * cols + j] = sign * vt_full[k * cols + j];
        }
        s[k] = s_full[k];
    }
    Ok(Svd {
        rows,
        cols,
        rank,
        u: u.into_iter().map(F::of).collect(),
        s: s.into_iter().map(F::of).collect(),
        vt: vt.into_iter().map(F::of).collect(),
    })
}

/// How singular values are distributed between the two sides.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SigmaSplit {
    /// `⟨i| = u_i`, `|j⟩ = Σ v_j`.
    #[default]
    Vectors,
    /// `⟨i| = √Σ u_i`, `|j⟩ = √Σ v_j`.
    Symmetric,
}

impl SigmaSplit {
    pub fn name(self) -> &'static str {
        match self {
            SigmaSplit::Vectors => "vectors",
            SigmaSplit::Symmetric => "sqrt",
        }
    }
}

impl std::str::FromStr for SigmaSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vectors" => Ok(SigmaSplit::Vectors),
            "sqrt" | "symmetric" => Ok(SigmaSplit::Symmetric),
            other => Err(Error::InvalidConfig(format!("unknown sigma split '{}'", other))),
        }
    }
}

/// Dot-kernel model with `ψ_ij = (U diag(S) Vt)_ij`.
pub fn svd_to_model<F: Scalar>(svd: &Svd<F>, split: SigmaSplit) -> Result<EmbeddingModel<F>> {
    let k = svd.rank;
    if svd.u.len() != svd.rows * k || svd.vt.len() != k * svd.cols || svd.s.len() != k {
        return Err(Error::Shape("inconsistent SVD factors".into()));
    }
    let mut model = EmbeddingModel::zeros(svd.rows, svd.cols, k, KernelSpec::Dot, None)?;
    let (left, right): (Vec<F>, Vec<F>) = match split {
        SigmaSplit::Vectors => (vec![F::one(); k], svd.s.clone()),
        SigmaSplit::Symmetric => {
            let r: Vec<F> = svd.s.iter().map(|s| s.sqrt()).collect();
            (r.clone(), r)
        }
    };
    for i in 0..svd.rows {
        let w = model.covector_mut(i);
        for c in 0..k {
            w[c] = svd.u[i * k + c] * left[c];
        }
    }
    for j in 0..svd.cols {
        let v = model.stored_vector_mut(j).expect("dot kernel");
        for c in 0..k {
            v[c] = svd.vt[c * svd.cols + j] * right[c];
        }
    }
    Ok(model)
}

/// Association used when none is given: PPMI.
pub fn default_association() -> AssociationSpec {
    AssociationSpec::new(AssociationKind::ClippedPmi(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abab() -> CoocStats {
        CoocStats::from_triples(2, vec![(0, 1, 4.0), (1, 0, 4.0)]).unwrap()
    }

    #[test]
    fn ppmi_matrix_of_abab() {
        let m: DenseAssocMatrix<f64> = build_assoc_matrix(&abab(), &default_association()).unwrap();
        let l2 = 2f64.ln();
        assert_eq!(m.entries, vec![0.0, l2, l2, 0.0]);
    }

    #[test]
    fn raw_pmi_rejected() {
        for kind in [AssociationKind::Pmi, AssociationKind::LogCount, AssociationKind::ShiftedPmi(5)] {
            let err = build_assoc_matrix::<f64>(&abab(), &AssociationSpec::new(kind)).unwrap_err();
            assert_eq!(err.to_string(), "unbounded association; choose a clipped variant");
        }
    }

    #[test]
    fn full_rank_2x2_exact() {
        let m: DenseAssocMatrix<f64> = build_assoc_matrix(&abab(), &default_association()).unwrap();
        let svd = truncated_svd(&m, 2, 0).unwrap();
        assert!(frobenius_error(&svd.reconstruct(), &m.entries) < 1e-10);
        let model = svd_to_model(&svd, SigmaSplit::Vectors).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((crate::model::psi(&model, i, j).unwrap() - m.get(i, j)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rank_checks() {
        let m = DenseAssocMatrix::<f64>::from_rows(2, 3, vec![1.0; 6]).unwrap();
        assert!(truncated_svd(&m, 0, 0).is_err());
        assert!(matches!(truncated_svd(&m, 3, 0), Err(Error::RankOutOfRange { rank: 3, max: 2 })));
        assert!(truncated_svd(&m, 2, 0).is_ok());
    }

    #[test]
    fn wide_and_tall_agree() {
        let a: Vec<f64> = (0..12).map(|x| ((x * 7 % 5) as f64) - 1.5).collect();
        let wide = DenseAssocMatrix::from_rows(3, 4, a.clone()).unwrap();
        let tall = DenseAssocMatrix::from_rows(4, 3, transpose(&a, 3, 4)).unwrap();
        let sw = truncated_svd(&wide, 3, 0).unwrap();
        let st = truncated_svd(&tall, 3, 0).unwrap();
        for k in 0..3 {
            assert!((sw.s[k] - st.s[k]).abs() < 1e-12);
        }
        assert!(frobenius_error(&sw.reconstruct(), &a) < 1e-12);
    }

    #[test]
    fn sign_convention() {
        let m = DenseAssocMatrix::<f64>::from_rows(2, 2, vec![-3.0, 0.0, 0.0, -1.0]).unwrap();
        let svd = truncated_svd(&m, 2, 0).unwrap();
        assert_eq!(svd.s, vec![3.0, 1.0]);
        assert_eq!(svd.u, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(svd.vt, vec![-1.0, 0.0, 0.0, -1.0]);
    }

    #[test]
    fn symmetric_split_same_psi() {
        let a = vec![2.0, 1.0, 0.5, 1.0, 3.0, 0.0, 0.5, 0.0, 1.0];
        let m = DenseAssocMatrix::<f64>::from_rows(3, 3, a.clone()).unwrap();
        let svd = truncated_svd(&m, 3, 0).unwrap();
        let sym = svd_to_model(&svd, SigmaSplit::Symmetric).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((crate::model::psi(&sym, i, j).unwrap() - a[i * 3 + j]).abs() < 1e-12);
            }
        }
    }
}
