//! One- and two-level additive Schwarz preconditioners and the PCG driver
//! with Lanczos condition-number reporting.

use rayon::prelude::*;

use crate::coarse::CoarseSpace;
use crate::decomposition::OverlappingPartition;
use crate::error::{Error, Result};
use crate::linalg::{
    dot, lanczos_cond_estimate, norm, DenseCholesky, DenseSymMatrix, FactorizedSpd,
    SparseSymMatrix,
};
use crate::mesh::PolygonalMesh;
use crate::vem::GlobalSystem;

pub trait Preconditioner: Sync {
    fn apply(&self, r: &[f64]) -> Vec<f64>;
}

/// Exact-solve preconditioner for tests and oracles.
pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        r.to_vec()
    }
}

/// Factorized local Dirichlet solvers over the overlapped subdomains.
pub struct LocalSolverSet {
    /// per subdomain: sorted interior-dof indices of D_i'
    pub dof_sets: Vec<Vec<usize>>,
    factors: Vec<FactorizedSpd>,
}

impl LocalSolverSet {
    pub fn n_subdomains(&self) -> usize {
        self.dof_sets.len()
    }
}

/// Coarse solver R_0^T A_0^{-1} R_0 with near-duplicate columns dropped.
pub struct CoarseSolver {
    /// kept columns, sparse over interior dofs
    columns: Vec<Vec<(usize, f64)>>,
    /// indices (into the original coarse space) of dropped columns
    pub dropped: Vec<usize>,
    factor: DenseCholesky,
    pub dim: usize,
}

/// Additive Schwarz preconditioner: local solves plus an optional coarse
/// level. The additive sum is reduced in fixed subdomain order, so apply()
/// is bitwise deterministic.
pub struct SchwarzPreconditioner {
    pub local: LocalSolverSet,
    pub coarse: Option<CoarseSolver>,
}

/// One-level preconditioner: M_1^{-1} = sum_i R_i^T A_i^{-1} R_i.
pub fn build_one_level(
    system: &GlobalSystem,
    mesh: &PolygonalMesh,
    overlap: &OverlappingPartition,
) -> Result<SchwarzPreconditioner> {
    let dof_sets: Vec<Vec<usize>> = (0..overlap.cells_ext.len())
        .map(|p| {
            overlap
                .local_dofs(mesh, &system.dof_map, p)
                .into_iter()
                .map(|d| {
                    system
                        .dof_map
                        .interior_index(d)
                        .expect("local dofs exclude the Dirichlet boundary")
                })
                .collect()
        })
        .collect();
    let factors: Vec<Result<FactorizedSpd>> = dof_sets
        .par_iter()
        .map(|dofs| {
            let sub = system.a.submatrix(dofs);
            FactorizedSpd::new(&sub).map_err(|e| match e {
                Error::NotSpd { pivot } => Error::Config(format!(
                    "local subdomain matrix not SPD at pivot {pivot} (bad dof masking)"
                )),
                other => other,
            })
        })
        .collect();
    let factors = factors.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(SchwarzPreconditioner {
        local: LocalSolverSet { dof_sets, factors },
        coarse: None,
    })
}

/// Two-level preconditioner: M_2^{-1} = R_0^T A_0^{-1} R_0 + M_1^{-1}.
/// Near-duplicate coarse columns are removed by Gram-Schmidt in the A-inner
/// product with a relative drop tolerance of 1e-10; drops are recorded.
pub fn build_two_level(
    one_level: SchwarzPreconditioner,
    space: &CoarseSpace,
    system: &GlobalSystem,
) -> Result<SchwarzPreconditioner> {
    if space.dim() == 0 {
        return Ok(one_level);
    }
    let n = system.a.n();
    let ncols = space.dim();
    // dense columns and their A-images
    let mut dense_cols: Vec<Vec<f64>> = Vec::with_capacity(ncols);
    for col in &space.columns {
        let mut v = vec![0.0; n];
        for &(i, x) in col {
            v[i] = x;
        }
        dense_cols.push(v);
    }
    let a_cols: Vec<Vec<f64>> = dense_cols
        .par_iter()
        .map(|v| system.a.spmv(v).expect("dimension match"))
        .collect();
    // Gram matrix A0 = Phi^T A Phi
    let mut gram = vec![0.0; ncols * ncols];
    for i in 0..ncols {
        for j in i..ncols {
            let g = dot(&dense_cols[i], &a_cols[j]);
            gram[i * ncols + j] = g;
            gram[j * ncols + i] = g;
        }
    }
    // greedy Cholesky with relative pivot drop (A-orthogonal Gram-Schmidt)
    let drop_tol = 1e-10;
    let mut kept: Vec<usize> = Vec::new();
    let mut dropped: Vec<usize> = Vec::new();
    let mut l: Vec<f64> = Vec::new(); // row-packed lower factor over kept columns
    for c in 0..ncols {
        let k = kept.len();
        let mut row = vec![0.0; k];
        for (j, &cj) in kept.iter().enumerate() {
            let mut s = gram[c * ncols + cj];
            for t in 0..j {
                s -= row[t] * l[j * (j + 1) / 2 + t];
            }
            row.push(0.0);
            row[j] = s / l[j * (j + 1) / 2 + j];
            row.truncate(k);
        }
        let diag = gram[c * ncols + c];
        let mut d = diag;
        for &rj in &row {
            d -= rj * rj;
        }
        if diag <= 0.0 || d <= drop_tol * diag {
            dropped.push(c);
            continue;
        }
        for &rj in &row {
            l.push(rj);
        }
        l.push(d.sqrt());
        kept.push(c);
    }
    if kept.is_empty() {
        return Ok(one_level);
    }
    // factor the kept Gram block
    let kdim = kept.len();
    let mut a0 = DenseSymMatrix::zeros(kdim);
    for (i, &ci) in kept.iter().enumerate() {
        for (j, &cj) in kept.iter().enumerate() {
            a0.set(i, j, gram[ci * ncols + cj]);
        }
    }
    let factor = DenseCholesky::new(&a0).map_err(|e| {
        Error::Config(format!("coarse operator not SPD after column drops: {e}"))
    })?;
    let columns: Vec<Vec<(usize, f64)>> = kept
        .iter()
        .map(|&c| space.columns[c].clone())
        .collect();
    Ok(SchwarzPreconditioner {
        local: one_level.local,
        coarse: Some(CoarseSolver {
            columns,
            dropped,
            factor,
            dim: kdim,
        }),
    })
}

impl Preconditioner for SchwarzPreconditioner {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; r.len()];
        if let Some(coarse) = &self.coarse {
            let rhs: Vec<f64> = coarse
                .columns
                .iter()
                .map(|col| col.iter().map(|&(i, v)| v * r[i]).sum())
                .collect();
            let y = coarse.factor.solve(&rhs);
            for (col, &yc) in coarse.columns.iter().zip(&y) {
                for &(i, v) in col {
                    z[i] += v * yc;
                }
            }
        }
        let locals: Vec<Vec<f64>> = self
            .local
            .dof_sets
            .par_iter()
            .zip(&self.local.factors)
            .map(|(dofs, factor)| {
                let rhs: Vec<f64> = dofs.iter().map(|&d| r[d]).collect();
                factor.solve(&rhs)
            })
            .collect();
        for (dofs, sol) in self.local.dof_sets.iter().zip(&locals) {
            for (&d, &v) in dofs.iter().zip(sol) {
                z[d] += v;
            }
        }
        z
    }
}

/// Outcome of a PCG run.
#[derive(Debug, Clone)]
pub struct PcgReport {
    pub iterations: usize,
    /// relative residual after each iteration
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub cond_estimate: Option<f64>,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
}

/// Preconditioned conjugate gradients to a relative residual tolerance.
/// Returns the iterate and a report carrying the Lanczos condition estimate
/// recovered from the CG coefficients.
pub fn pcg(
    a: &SparseSymMatrix,
    b: &[f64],
    m: &dyn Preconditioner,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, PcgReport)> {
    let n = a.n();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    let nb = norm(b);
    let mut x = vec![0.0; n];
    if nb == 0.0 {
        return Ok((
            x,
            PcgReport {
                iterations: 0,
                residual_history: Vec::new(),
                converged: true,
                cond_estimate: None,
                alphas: Vec::new(),
                betas: Vec::new(),
            },
        ));
    }
    let mut r = b.to_vec();
    let mut z = m.apply(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    let mut history = Vec::new();
    let mut converged = false;
    let mut q = vec![0.0; n];
    while alphas.len() < max_iter {
        a.spmv_into(&p, &mut q);
        let pq = dot(&p, &q);
        if pq <= 0.0 {
            return Err(Error::OperatorNotSpd(format!(
                "non-positive curvature p^T A p = {pq:e} at iteration {}",
                alphas.len()
            )));
        }
        let alpha = rz / pq;
        alphas.push(alpha);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        let rel = norm(&r) / nb;
        history.push(rel);
        if rel <= tol {
            converged = true;
            break;
        }
        z = m.apply(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        betas.push(beta);
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_new;
    }
    let cond_estimate = match alphas.len() {
        0 => None,
        1 => Some(1.0),
        _ => lanczos_cond_estimate(&alphas, &betas).ok(),
    };
    Ok((
        x,
        PcgReport {
            iterations: alphas.len(),
            residual_history: history,
            converged,
            cond_estimate,
            alphas,
            betas,
        },
    ))
}

/// Dense condition-number oracle: forms M^{-1} A column by column and solves
/// the generalized eigenproblem (A M^{-1} A, A), whose spectrum equals that
/// of M^{-1} A. Capped at 2000 dofs.
pub fn dense_cond_oracle(
    a: &SparseSymMatrix,
    m: &dyn Preconditioner,
    cap: usize,
) -> Result<f64> {
    let n = a.n();
    let cap = cap.min(2000);
    if n > cap {
        return Err(Error::Contract(format!(
            "dense oracle capped at {cap} dofs, got {n}"
        )));
    }
    // C = M^{-1} A columnwise
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let ae = a.spmv(&e).expect("dimension match");
            m.apply(&ae)
        })
        .collect();
    // S = A C (columns)
    let mut s = DenseSymMatrix::zeros(n);
    for (j, c) in cols.iter().enumerate() {
        let ac = a.spmv(c)?;
        for i in 0..n {
            s.set(i, j, ac[i]);
        }
    }
    s.symmetrize();
    // reduce (S, A) with the Cholesky of A and take extreme eigenvalues
    let ad = a.to_dense();
    let chol = DenseCholesky::new(&ad)
        .map_err(|_| Error::OperatorNotSpd("system matrix not SPD in oracle".into()))?;
    let mut w = s.data().to_vec();
    for i in 0..n {
        for k in 0..i {
            let lik = chol_l(&chol, n, i, k);
            if lik != 0.0 {
                let (head, tail) = w.split_at_mut(i * n);
                let wk = &head[k * n..k * n + n];
                for (wij, wkj) in tail[..n].iter_mut().zip(wk) {
                    *wij -= lik * wkj;
                }
            }
        }
        let lii = chol_l(&chol, n, i, i);
        for v in w[i * n..(i + 1) * n].iter_mut() {
            *v /= lii;
        }
    }
    let mut c = vec![0.0; n * n];
    let mut buf = vec![0.0; n];
    for i in 0..n {
        buf.copy_from_slice(&w[i * n..(i + 1) * n]);
        chol.forward(&mut buf);
        c[i * n..(i + 1) * n].copy_from_slice(&buf);
    }
    let mut cm = DenseSymMatrix::from_raw(n, c);
    cm.symmetrize();
    let vals = crate::linalg::sym_eigenvalues(&cm)?;
    let lmax = *vals.last().unwrap();
    let lmin = vals
        .iter()
        .copied()
        .find(|&v| v > 1e-12 * lmax)
        .ok_or_else(|| Error::OperatorNotSpd("no positive modes in oracle".into()))?;
    Ok(lmax / lmin)
}

fn chol_l(chol: &DenseCholesky, _n: usize, i: usize, j: usize) -> f64 {
    chol.l_entry(i, j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coarse::CoarseSpace;
    use crate::decomposition::{extend_overlap, partition_structured};
    use crate::mesh::{build_triangular, CoefficientField};
    use crate::pu::{build_coarse_pu, ExtensionMode};
    use crate::vem::{assemble_global, VemCache};

    fn poisson_system(n: usize) -> (PolygonalMesh, VemCache, GlobalSystem) {
        let mesh = build_triangular(n).unwrap();
        let cache = VemCache::build(&mesh, 1).unwrap();
        let field = CoefficientField::constant(mesh.n_cells(), 1.0);
        let sys = assemble_global(&mesh, &cache, &field, &|_| 1.0, &|_| 0.0).unwrap();
        (mesh, cache, sys)
    }

    #[test]
    fn single_subdomain_is_exact() {
        let (mesh, _cache, sys) = poisson_system(8);
        let p = partition_structured(&mesh, 1).unwrap();
        let o = extend_overlap(&mesh, &p, 1).unwrap();
        let precond = build_one_level(&sys, &mesh, &o).unwrap();
        let (x, report) = pcg(&sys.a, &sys.b, &precond, 1e-6, 50).unwrap();
        assert_eq!(report.iterations, 1);
        assert!(report.converged);
        let direct = sys.solve_direct().unwrap();
        for (a, b) in x.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(report.cond_estimate, Some(1.0));
    }

    #[test]
    fn apply_is_linear() {
        let (mesh, _cache, sys) = poisson_system(8);
        let p = partition_structured(&mesh, 2).unwrap();
        let o = extend_overlap(&mesh, &p, 1).unwrap();
        let precond = build_one_level(&sys, &mesh, &o).unwrap();
        let r: Vec<f64> = (0..sys.a.n()).map(|i| (i % 5) as f64 - 2.0).collect();
        let z1 = precond.apply(&r);
        let r2: Vec<f64> = r.iter().map(|v| 3.5 * v).collect();
        let z2 = precond.apply(&r2);
        for (a, b) in z1.iter().zip(&z2) {
            assert!((3.5 * a - b).abs() < 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn a_inner_product_symmetry() {
        let (mesh, cache, sys) = poisson_system(12);
        let p = partition_structured(&mesh, 3).unwrap();
        let o = extend_overlap(&mesh, &p, 1).unwrap();
        let one = build_one_level(&sys, &mesh, &o).unwrap();
        let skeleton = crate::decomposition::extract_skeleton(&mesh, &p).unwrap();
        let pu = build_coarse_pu(&mesh, &sys.dof_map, &cache, &p, &skeleton, ExtensionMode::Harmonic)
            .unwrap();
        let space = CoarseSpace::from_pu(&pu, &sys.dof_map);
        let two = build_two_level(one, &space, &sys).unwrap();
        let n = sys.a.n();
        let u: Vec<f64> = (0..n).map(|i| ((i * 7 + 1) % 13) as f64 / 13.0 - 0.4).collect();
        let v: Vec<f64> = (0..n).map(|i| ((i * 11 + 5) % 17) as f64 / 17.0 - 0.6).collect();
        // plain symmetry of the preconditioner
        let mu = two.apply(&u);
        let mv = two.apply(&v);
        let s1 = dot(&mu, &v);
        let s2 = dot(&u, &mv);
        assert!(
            (s1 - s2).abs() <= 1e-9 * s1.abs().max(s2.abs()),
            "{s1} vs {s2}"
        );
        // self-adjointness of M^{-1}A in the A-inner product:
        // <M^{-1}A u, A v> = <A u, M^{-1}A v>
        let au = sys.a.spmv(&u).unwrap();
        let av = sys.a.spmv(&v).unwrap();
        let pau = two.apply(&au);
        let pav = two.apply(&av);
        let lhs = dot(&pau, &av);
        let rhs = dot(&au, &pav);
        assert!(
            (lhs - rhs).abs() <= 1e-9 * lhs.abs().max(rhs.abs()),
            "{lhs} vs {rhs}"
        );
    }

    #[test]
    fn empty_coarse_space_is_one_level() {
        let (mesh, _cache, sys) = poisson_system(8);
        let p = partition_structured(&mesh, 2).unwrap();
        let o = extend_overlap(&mesh, &p, 1).unwrap();
        let one = build_one_level(&sys, &mesh, &o).unwrap();
        let r: Vec<f64> = (0..sys.a.n()).map(|i| (i % 3) as f64).collect();
        let z_one = one.apply(&r);
        let empty = CoarseSpace {
            columns: vec![],
            generators: vec![],
        };
        let two = build_two_level(one, &empty, &sys).unwrap();
        assert!(two.coarse.is_none());
        let z_two = two.apply(&r);
        assert_eq!(z_one, z_two);
    }

    #[test]
    fn coarse_level_lowers_condition_number() {
        let (mesh, cache, sys) = poisson_system(16);
        let p = partition_structured(&mesh, 4).unwrap();
        let o = extend_overlap(&mesh, &p, 1).unwrap();
        let one = build_one_level(&sys, &mesh, &o).unwrap();
        let cond_one = dense_cond_oracle(&sys.a, &one, 2000).unwrap();
        let skeleton = crate::decomposition::extract_skeleton(&mesh, &p).unwrap();
        let pu = build_coarse_pu(&mesh, &sys.dof_map, &cache, &p, &skeleton, ExtensionMode::Harmonic)
            .unwrap();
        let space = CoarseSpace::from_pu(&pu, &sys.dof_map);
        let two = build_two_level(one, &space, &sys).unwrap();
        let cond_two = dense_cond_oracle(&sys.a, &two, 2000).unwrap();
        assert!(
            cond_two < cond_one,
            "one-level {cond_one}, two-level {cond_two}"
        );
    }

    #[test]
    fn near_duplicate_columns_are_dropped() {
        let (mesh, _cache, sys) = poisson_system(8);
        let p = partition_structured(&mesh, 2).unwrap();
        let o = extend_overlap(&mesh, &p, 1).unwrap();
        let one = build_one_level(&sys, &mesh, &o).unwrap();
        // duplicate one column exactly
        let col: Vec<(usize, f64)> = (0..sys.a.n()).map(|i| (i, (i % 4) as f64 + 1.0)).collect();
        let space = CoarseSpace {
            columns: vec![col.clone(), col],
            generators: vec![(0, 0), (0, 1)],
        };
        let two = build_two_level(one, &space, &sys).unwrap();
        let coarse = two.coarse.as_ref().unwrap();
        assert_eq!(coarse.dim, 1);
        assert_eq!(coarse.dropped, vec![1]);
    }

    #[test]
    fn pcg_zero_rhs() {
        let (_mesh, _cache, sys) = poisson_system(4);
        let zero = vec![0.0; sys.a.n()];
        let (x, report) = pcg(&sys.a, &zero, &IdentityPreconditioner, 1e-6, 10).unwrap();
        assert_eq!(report.iterations, 0);
        assert!(report.converged);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pcg_identity_converges_in_one_iteration() {
        let a = SparseSymMatrix::identity(5);
        let b = vec![1.0, -2.0, 3.0, 0.5, 2.0];
        let (x, report) = pcg(&a, &b, &IdentityPreconditioner, 1e-10, 10).unwrap();
        assert_eq!(report.iterations, 1);
        assert_eq!(report.cond_estimate, Some(1.0));
        for (xi, bi) in x.iter().zip(&b) {
            assert!((xi - bi).abs() < 1e-14);
        }
    }

    #[test]
    fn pcg_detects_indefinite_operator() {
        let a = SparseSymMatrix::diagonal(&[1.0, -1.0]);
        let b = vec![1.0, 1.0];
        assert!(matches!(
            pcg(&a, &b, &IdentityPreconditioner, 1e-8, 10),
            Err(Error::OperatorNotSpd(_))
        ));
    }

    #[test]
    fn oracle_trivial_cases() {
        let a = SparseSymMatrix::diagonal(&[1.0, 4.0]);
        // M = A: perfectly preconditioned
        struct Inv;
        impl Preconditioner for Inv {
            fn apply(&self, r: &[f64]) -> Vec<f64> {
                vec![r[0], r[1] / 4.0]
            }
        }
        let c = dense_cond_oracle(&a, &Inv, 2000).unwrap();
        assert!((c - 1.0).abs() < 1e-9);
        let c = dense_cond_oracle(&a, &IdentityPreconditioner, 2000).unwrap();
        assert!((c - 4.0).abs() < 1e-9);
    }

    #[test]
    fn oracle_size_cap() {
        let a = SparseSymMatrix::identity(50);
        assert!(dense_cond_oracle(&a, &IdentityPreconditioner, 10).is_err());
    }

    #[test]
    fn lanczos_estimate_close_to_oracle_small_instance() {
        // ~200-dof Poisson problem, one-level preconditioner
        let (mesh, _cache, sys) = poisson_system(16);
        assert!((150..=260).contains(&sys.a.n()), "n = {}", sys.a.n());
        let p = partition_structured(&mesh, 2).unwrap();
        let o = extend_overlap(&mesh, &p, 1).unwrap();
        let precond = build_one_level(&sys, &mesh, &o).unwrap();
        let (_, report) = pcg(&sys.a, &sys.b, &precond, 1e-10, 400).unwrap();
        let est = report.cond_estimate.unwrap();
        let oracle = dense_cond_oracle(&sys.a, &precond, 2000).unwrap();
        assert!(
            (est - oracle).abs() / oracle < 0.10,
            "estimate {est}, oracle {oracle}"
        );
        assert!(est <= oracle * 1.01, "Lanczos must bound from the inside");
    }
}
