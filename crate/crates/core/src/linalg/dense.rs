use crate::error::{Error, Result};

/// Dense symmetric matrix, row-major full storage.
#[derive(Debug, Clone)]
pub struct DenseSymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseSymMatrix {
    pub fn zeros(n: usize) -> Self {
        DenseSymMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_raw(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n);
        DenseSymMatrix { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] += v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Replace by (A + A^T)/2.
    pub fn symmetrize(&mut self) {
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let v = 0.5 * (self.get(i, j) + self.get(j, i));
                self.set(i, j, v);
                self.set(j, i, v);
            }
        }
    }

    /// Max |A_ij - A_ji| relative to max |A_ij|.
    pub fn asymmetry(&self) -> f64 {
        let mut max_abs = 0.0f64;
        let mut max_dev = 0.0f64;
        for i in 0..self.n {
            for j in 0..self.n {
                max_abs = max_abs.max(self.get(i, j).abs());
                max_dev = max_dev.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        if max_abs == 0.0 {
            0.0
        } else {
            max_dev / max_abs
        }
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                self.data[i * self.n..(i + 1) * self.n]
                    .iter()
                    .map(|v| v.abs())
                    .sum()
            })
            .fold(0.0, f64::max)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| {
                self.data[i * self.n..(i + 1) * self.n]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }
}

/// Dense Cholesky factorization (lower triangular), used for coarse operators
/// and for the reduction of generalized eigenproblems.
#[derive(Debug, Clone)]
pub struct DenseCholesky {
    n: usize,
    /// lower triangle of L, row-major full storage
    l: Vec<f64>,
}

impl DenseCholesky {
    pub fn new(a: &DenseSymMatrix) -> Result<Self> {
        let n = a.n;
        let mut l = a.data.clone();
        for i in 0..n {
            for j in 0..=i {
                let mut s = l[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::NotSpd { pivot: i });
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
            for j in (i + 1)..n {
                l[i * n + j] = 0.0;
            }
        }
        Ok(DenseCholesky { n, l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.forward(&mut x);
        self.backward(&mut x);
        x
    }

    /// x <- L^{-1} x
    pub fn forward(&self, x: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.l[i * n + k] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
    }

    /// Entry of the lower-triangular factor.
    pub fn l_entry(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.n + j]
    }

    /// x <- L^{-T} x
    pub fn backward(&self, x: &mut [f64]) {
        let n = self.n;
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
    }
}

/// Householder reduction to tridiagonal form. Reflectors are retained so the
/// orthogonal factor can be applied to selected eigenvectors afterwards.
struct Tridiagonalization {
    n: usize,
    d: Vec<f64>,
    e: Vec<f64>,
    /// reflector for step i acts on components 0..i, stored with its `h`
    reflectors: Vec<(usize, Vec<f64>, f64)>,
}

fn tridiagonalize(a: &DenseSymMatrix) -> Tridiagonalization {
    let n = a.n;
    let mut w = a.data.clone();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    let mut reflectors = Vec::new();
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let scale: f64 = (0..=l).map(|k| w[i * n + k].abs()).sum();
            if scale == 0.0 {
                e[i] = w[i * n + l];
            } else {
                for k in 0..=l {
                    w[i * n + k] /= scale;
                    h += w[i * n + k] * w[i * n + k];
                }
                let f = w[i * n + l];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                w[i * n + l] = f - g;
                // p = W u over the lower triangle, row-contiguous
                let u = w[i * n..i * n + l + 1].to_vec();
                let mut p = vec![0.0; l + 1];
                for j in 0..=l {
                    let row = &w[j * n..j * n + j];
                    let uj = u[j];
                    let mut acc = w[j * n + j] * uj;
                    for (k, &wjk) in row.iter().enumerate() {
                        acc += wjk * u[k];
                        p[k] += wjk * uj;
                    }
                    p[j] += acc;
                }
                let mut ftot = 0.0;
                for j in 0..=l {
                    e[j] = p[j] / h;
                    ftot += e[j] * u[j];
                }
                let hh = ftot / (h + h);
                for j in 0..=l {
                    let f2 = u[j];
                    let g2 = e[j] - hh * f2;
                    e[j] = g2;
                    let row = &mut w[j * n..j * n + j + 1];
                    for (k, wjk) in row.iter_mut().enumerate() {
                        *wjk -= f2 * e[k] + g2 * u[k];
                    }
                }
                reflectors.push((i, u, h));
            }
        } else {
            e[i] = w[i * n + l];
        }
        d[i] = h;
    }
    for i in 0..n {
        d[i] = w[i * n + i];
    }
    e[0] = 0.0;
    Tridiagonalization {
        n,
        d,
        e,
        reflectors,
    }
}

impl Tridiagonalization {
    /// x = Q y where T = Q^T A Q.
    fn apply_q(&self, y: &[f64]) -> Vec<f64> {
        let mut x = y.to_vec();
        // reflectors were pushed for i = n-1 down; Q = P_{n-1} ... P_2, so
        // apply in reverse push order (increasing i).
        for (i, u, h) in self.reflectors.iter().rev() {
            let l = *i - 1;
            let mut s = 0.0;
            for k in 0..=l {
                s += u[k] * x[k];
            }
            s /= *h;
            for k in 0..=l {
                x[k] -= s * u[k];
            }
        }
        let _ = self.n;
        x
    }
}

/// Implicit QL with shifts on a tridiagonal matrix. With `z`, the columns of
/// the supplied row-major matrix are rotated along, so that a matrix seeded
/// with the back-transform basis ends up holding eigenvectors as columns.
fn tql_impl(d: &mut [f64], e: &mut [f64], mut z: Option<&mut [f64]>) -> Result<()> {
    let n = d.len();
    if n == 0 {
        return Ok(());
    }
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::EigNonConvergence {
                    iterations: iter,
                    achieved: e[l].abs(),
                });
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c) = (1.0f64, 1.0f64);
            let mut p = 0.0;
            let mut underflowed = false;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflowed = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                let rr = (d[i] - g) * s + 2.0 * c * b;
                p = s * rr;
                d[i + 1] = g + p;
                g = c * rr - b;
                if let Some(zm) = z.as_deref_mut() {
                    for k in 0..n {
                        f = zm[k * n + i + 1];
                        zm[k * n + i + 1] = s * zm[k * n + i] + c * f;
                        zm[k * n + i] = c * zm[k * n + i] - s * f;
                    }
                }
            }
            if underflowed {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Number of eigenvalues of the tridiagonal (d, e) strictly below x
/// (Sturm sequence count).
fn sturm_count(d: &[f64], e: &[f64], x: f64) -> usize {
    let n = d.len();
    let mut count = 0;
    let mut q = 1.0f64;
    let tiny = f64::MIN_POSITIVE / f64::EPSILON;
    for i in 0..n {
        let esq = if i == 0 { 0.0 } else { e[i] * e[i] };
        q = d[i] - x - if i == 0 { 0.0 } else { esq / q };
        if q.abs() < tiny {
            q = -tiny;
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Lowest k eigenvalues of a tridiagonal matrix via bisection.
/// e[0] is unused; e[i] couples rows i-1 and i.
fn tridiag_lowest_eigenvalues(d: &[f64], e: &[f64], k: usize) -> Vec<f64> {
    let n = d.len();
    let k = k.min(n);
    // Gershgorin interval
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { e[i].abs() } else { 0.0 } + if i + 1 < n { e[i + 1].abs() } else { 0.0 };
        lo = lo.min(d[i] - r);
        hi = hi.max(d[i] + r);
    }
    let scale = (hi - lo).max(hi.abs()).max(lo.abs()).max(1e-300);
    let mut vals = Vec::with_capacity(k);
    for idx in 0..k {
        let mut a = lo;
        let mut b = hi;
        // invariant: count(a) <= idx < count(b)
        for _ in 0..120 {
            let mid = 0.5 * (a + b);
            if sturm_count(d, e, mid) <= idx {
                a = mid;
            } else {
                b = mid;
            }
            if b - a <= f64::EPSILON * scale * 4.0 {
                break;
            }
        }
        vals.push(0.5 * (a + b));
    }
    vals
}

/// Inverse iteration for one tridiagonal eigenvector; deterministic start.
fn tridiag_eigenvector(d: &[f64], e: &[f64], lambda: f64, seed: usize) -> Vec<f64> {
    let n = d.len();
    // LU of (T - lambda I) with partial pivoting; tridiagonal + fill-in band.
    let mut diag: Vec<f64> = d.iter().map(|&x| x - lambda).collect();
    let mut sup1: Vec<f64> = (0..n)
        .map(|i| if i + 1 < n { e[i + 1] } else { 0.0 })
        .collect();
    let mut sup2 = vec![0.0; n];
    let mut sub: Vec<f64> = (0..n).map(|i| if i > 0 { e[i] } else { 0.0 }).collect();
    let mut lmul = vec![0.0; n];
    let mut swapped = vec![false; n];
    let norm_t: f64 = d
        .iter()
        .map(|v| v.abs())
        .chain(e.iter().map(|v| v.abs()))
        .fold(0.0, f64::max)
        .max(1e-300);
    let tiny = f64::EPSILON * norm_t;
    for i in 0..n.saturating_sub(1) {
        if sub[i + 1].abs() > diag[i].abs() {
            swapped[i] = true;
            std::mem::swap(&mut diag[i], &mut sub[i + 1]);
            std::mem::swap(&mut sup1[i], &mut diag[i + 1]);
            if i + 2 <= n - 1 {
                sup2[i] = sup1[i + 1];
                sup1[i + 1] = 0.0;
            }
        }
        if diag[i].abs() < tiny {
            diag[i] = tiny.copysign(if diag[i] == 0.0 { 1.0 } else { diag[i] });
        }
        let m = sub[i + 1] / diag[i];
        lmul[i] = m;
        diag[i + 1] -= m * sup1[i];
        if i + 2 <= n - 1 {
            sup1[i + 1] -= m * sup2[i];
        }
    }
    if diag[n - 1].abs() < tiny {
        diag[n - 1] = tiny.copysign(if diag[n - 1] == 0.0 { 1.0 } else { diag[n - 1] });
    }

    // quasi-random but deterministic start vector
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let mut h = (i as u64)
                .wrapping_mul(0x9E3779B97F4A7C15)
                .wrapping_add(seed as u64 + 1);
            h ^= h >> 33;
            h = h.wrapping_mul(0xff51afd7ed558ccd);
            h ^= h >> 33;
            (h as f64 / u64::MAX as f64) - 0.5
        })
        .collect();
    for _ in 0..4 {
        // forward elimination
        for i in 0..n.saturating_sub(1) {
            if swapped[i] {
                x.swap(i, i + 1);
            }
            x[i + 1] -= lmul[i] * x[i];
        }
        // back substitution
        for i in (0..n).rev() {
            let mut s = x[i];
            if i + 1 < n {
                s -= sup1[i] * x[i + 1];
            }
            if i + 2 < n {
                s -= sup2[i] * x[i + 2];
            }
            x[i] = s / diag[i];
        }
        let nrm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nrm == 0.0 || !nrm.is_finite() {
            // restart with shifted seed
            for (i, v) in x.iter_mut().enumerate() {
                *v = ((i * 31 + seed * 7 + 1) % 97) as f64 / 97.0 - 0.5;
            }
            continue;
        }
        for v in x.iter_mut() {
            *v /= nrm;
        }
    }
    x
}

/// Ascending eigenvalues only.
pub fn sym_eigenvalues(a: &DenseSymMatrix) -> Result<Vec<f64>> {
    let t = tridiagonalize(a);
    let mut d = t.d.clone();
    let mut e = t.e.clone();
    tql_impl(&mut d, &mut e, None)?;
    d.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(d)
}

/// Full symmetric eigendecomposition, eigenvalues ascending, orthonormal
/// eigenvectors as columns (returned as row-major matrix).
pub fn sym_eig_full(a: &DenseSymMatrix) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = a.n;
    let t = tridiagonalize(a);
    let mut d = t.d.clone();
    let mut e = t.e.clone();
    // z starts as Q (back-transform), built by applying reflectors to identity
    let mut z = vec![0.0; n * n];
    for j in 0..n {
        let mut col = vec![0.0; n];
        col[j] = 1.0;
        let qcol = t.apply_q(&col);
        for i in 0..n {
            z[i * n + j] = qcol[i];
        }
    }
    tql_impl(&mut d, &mut e, Some(&mut z))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].partial_cmp(&d[j]).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let vecs: Vec<Vec<f64>> = order
        .iter()
        .map(|&j| (0..n).map(|i| z[i * n + j]).collect())
        .collect();
    Ok((vals, vecs))
}

/// Lowest `k` eigenpairs via bisection + inverse iteration on the tridiagonal
/// reduction. Falls back to the full decomposition when the requested count is
/// a large fraction of the dimension.
pub fn sym_eig_lowest(a: &DenseSymMatrix, k: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = a.n;
    let k = k.min(n);
    if k == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    if 4 * k >= 3 * n || n <= 64 {
        let (vals, vecs) = sym_eig_full(a)?;
        return Ok((vals[..k].to_vec(), vecs[..k].to_vec()));
    }
    let t = tridiagonalize(a);
    let vals = tridiag_lowest_eigenvalues(&t.d, &t.e, k);
    let scale = t
        .d
        .iter()
        .chain(t.e.iter())
        .map(|v| v.abs())
        .fold(0.0, f64::max)
        .max(1e-300);
    let cluster_tol = 1e-8 * scale;
    let mut tri_vecs: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut cluster_start = 0usize;
    for idx in 0..k {
        if idx > 0 && (vals[idx] - vals[idx - 1]).abs() > cluster_tol {
            cluster_start = idx;
        }
        let mut v = tridiag_eigenvector(&t.d, &t.e, vals[idx], idx);
        // orthogonalize against previous members of the same cluster
        for prev in cluster_start..idx {
            let dp: f64 = v.iter().zip(&tri_vecs[prev]).map(|(x, y)| x * y).sum();
            for (vi, pi) in v.iter_mut().zip(&tri_vecs[prev]) {
                *vi -= dp * pi;
            }
        }
        let nrm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm < 1e-8 {
            // degenerate cluster direction; fall back to the robust full path
            let (vals_full, vecs_full) = sym_eig_full(a)?;
            return Ok((vals_full[..k].to_vec(), vecs_full[..k].to_vec()));
        }
        for vi in v.iter_mut() {
            *vi /= nrm;
        }
        tri_vecs.push(v);
    }
    let vecs: Vec<Vec<f64>> = tri_vecs.iter().map(|v| t.apply_q(v)).collect();
    Ok((vals, vecs))
}

/// Result of a generalized symmetric eigensolve A psi = lambda M psi.
#[derive(Debug, Clone)]
pub struct GeneralizedEig {
    /// ascending
    pub eigenvalues: Vec<f64>,
    /// vectors[j] pairs with eigenvalues[j]; M-orthonormal
    pub vectors: Vec<Vec<f64>>,
    /// dimension removed by mass-matrix deflation (0 for SPD mass)
    pub deflated: usize,
}

/// Generalized eigenproblem with SPD mass matrix, by Cholesky reduction of M
/// to a standard symmetric problem. Returns the lowest `count` pairs,
/// eigenvalues ascending and eigenvectors M-orthonormal.
pub fn dense_generalized_eig(
    a: &DenseSymMatrix,
    m: &DenseSymMatrix,
    count: usize,
) -> Result<GeneralizedEig> {
    let n = a.n;
    if m.n != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: m.n,
        });
    }
    let chol = DenseCholesky::new(m).map_err(|_| {
        Error::OperatorNotSpd("mass matrix in generalized eigenproblem is not SPD".into())
    })?;
    // C = L^{-1} A L^{-T}
    let mut w = a.data.clone();
    // forward solve on block rows: W = L^{-1} A
    for i in 0..n {
        for k in 0..i {
            let lik = chol.l[i * n + k];
            if lik != 0.0 {
                let (head, tail) = w.split_at_mut(i * n);
                let wk = &head[k * n..k * n + n];
                let wi = &mut tail[..n];
                for (wij, wkj) in wi.iter_mut().zip(wk) {
                    *wij -= lik * wkj;
                }
            }
        }
        let lii = chol.l[i * n + i];
        for v in w[i * n..(i + 1) * n].iter_mut() {
            *v /= lii;
        }
    }
    // C rows: row i of C solves L y = (row i of W)^T
    let mut c = vec![0.0; n * n];
    let mut buf = vec![0.0; n];
    for i in 0..n {
        buf.copy_from_slice(&w[i * n..(i + 1) * n]);
        chol.forward(&mut buf);
        c[i * n..(i + 1) * n].copy_from_slice(&buf);
    }
    let mut cm = DenseSymMatrix::from_raw(n, c);
    cm.symmetrize();
    let count = count.min(n);
    let (vals, ys) = sym_eig_lowest(&cm, count)?;
    let vectors = ys
        .into_iter()
        .map(|mut y| {
            chol.backward(&mut y);
            y
        })
        .collect();
    Ok(GeneralizedEig {
        eigenvalues: vals,
        vectors,
        deflated: 0,
    })
}

/// Generalized eigenproblem with symmetric positive *semi*definite mass
/// matrix. The mass nullspace is deflated spectrally: directions with mass
/// eigenvalue below `deflate_tol` times the largest are removed (they
/// correspond to infinite generalized eigenvalues) and the problem is solved
/// on the complement.
pub fn dense_generalized_eig_psd(
    a: &DenseSymMatrix,
    m: &DenseSymMatrix,
    count: usize,
    deflate_tol: f64,
) -> Result<GeneralizedEig> {
    let n = a.n;
    if m.n != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: m.n,
        });
    }
    let (mu, u) = sym_eig_full(m)?;
    let mu_max = mu.last().copied().unwrap_or(0.0).max(0.0);
    if mu_max <= 0.0 {
        return Err(Error::OperatorNotSpd(
            "mass matrix is identically zero".into(),
        ));
    }
    let keep: Vec<usize> = (0..n).filter(|&i| mu[i] > deflate_tol * mu_max).collect();
    let r = keep.len();
    // B columns: u_k / sqrt(mu_k)
    let mut b = vec![0.0; n * r];
    for (col, &k) in keep.iter().enumerate() {
        let s = mu[k].sqrt();
        for i in 0..n {
            b[i * r + col] = u[k][i] / s;
        }
    }
    // Ct = B^T A B
    let mut ab = vec![0.0; n * r];
    for i in 0..n {
        for col in 0..r {
            let mut s = 0.0;
            for j in 0..n {
                s += a.get(i, j) * b[j * r + col];
            }
            ab[i * r + col] = s;
        }
    }
    let mut ct = vec![0.0; r * r];
    for row in 0..r {
        for col in 0..r {
            let mut s = 0.0;
            for i in 0..n {
                s += b[i * r + row] * ab[i * r + col];
            }
            ct[row * r + col] = s;
        }
    }
    let mut cm = DenseSymMatrix::from_raw(r, ct);
    cm.symmetrize();
    let count = count.min(r);
    let (vals, ys) = sym_eig_lowest(&cm, count)?;
    let vectors: Vec<Vec<f64>> = ys
        .iter()
        .map(|y| {
            (0..n)
                .map(|i| (0..r).map(|col| b[i * r + col] * y[col]).sum())
                .collect()
        })
        .collect();
    Ok(GeneralizedEig {
        eigenvalues: vals,
        vectors,
        deflated: n - r,
    })
}
