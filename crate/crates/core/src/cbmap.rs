//! Choi-matrix machinery for linear maps M_d -> M_n.
//!
//! A map phi is stored through its Choi matrix J = sum_ij E_ij (x)
//! phi(E_ij); complete positivity is positivity of J, and complete
//! contractivity is encoded by the 2x2 block program
//!
//!   [[Y0, J], [J^*, Y1]] >= 0,   Tr_d(Y0) <= I_n,   Tr_d(Y1) <= I_n,
//!
//! whose optimal scaling gives the cb norm. The same block is installed
//! into larger feasibility programs where J itself is a variable: the
//! witness sets of completely contractive maps fixing a distinguished
//! element, used throughout the gamma and cone computations.

use num_complex::Complex64 as C64;

use crate::cmat::{cr, CMat};
use crate::error::{OsError, Result};
use crate::sdp::{BlockId, CExpr, LinExpr, SdpProblem, SdpSolution, SdpStatus, Sense, SolveOpts};
use crate::space::{LevelElement, OperatorSpaceSpec};

pub const CP_TOL: f64 = 1e-8;

/// A linear map M_d -> M_n encoded by its Choi matrix (non-Hermitian
/// matrices are allowed; CP is a checked property, not an assumption).
#[derive(Debug, Clone)]
pub struct ChoiMatrix {
    pub d: usize,
    pub n: usize,
    pub mat: CMat,
    /// Verified-CP flag, set by [`ChoiMatrix::is_cp`].
    pub cp_checked: Option<bool>,
    /// Verified cb-norm value, set by [`cb_norm`].
    pub cb_checked: Option<f64>,
    /// PSD corner witnesses (Y0, Y1) from the cb feasibility block.
    pub slack: Option<(CMat, CMat)>,
}

impl ChoiMatrix {
    pub fn new(d: usize, n: usize, mat: CMat) -> Result<Self> {
        if mat.rows() != d * n || mat.cols() != d * n {
            return Err(OsError::Shape(format!(
                "Choi matrix must be {0}x{0}, got {1}x{2}",
                d * n,
                mat.rows(),
                mat.cols()
            )));
        }
        Ok(ChoiMatrix { d, n, mat, cp_checked: None, cb_checked: None, slack: None })
    }

    /// Build from the action on matrix units.
    pub fn from_map(d: usize, n: usize, mut phi: impl FnMut(&CMat) -> CMat) -> Self {
        let mut mat = CMat::zeros(d * n, d * n);
        for i in 0..d {
            for j in 0..d {
                let img = phi(&CMat::unit(d, d, i, j));
                assert_eq!((img.rows(), img.cols()), (n, n), "map image has wrong size");
                for k in 0..n {
                    for l in 0..n {
                        mat[(i * n + k, j * n + l)] = img[(k, l)];
                    }
                }
            }
        }
        ChoiMatrix { d, n, mat, cp_checked: None, cb_checked: None, slack: None }
    }

    pub fn identity(d: usize) -> Self {
        Self::from_map(d, d, |a| a.clone())
    }

    pub fn transpose_map(d: usize) -> Self {
        Self::from_map(d, d, |a| a.transpose())
    }

    /// The scalar-valued map a -> Tr(F a) (n = 1).
    pub fn functional(f: &CMat) -> Self {
        let d = f.rows();
        Self::from_map(d, 1, |a| {
            let mut m = CMat::zeros(1, 1);
            m[(0, 0)] = f.matmul(a).trace();
            m
        })
    }

    /// Compression x -> W^* x W for an isometry W (d x n, W^*W = I_n).
    pub fn compression(w: &CMat) -> Result<Self> {
        let (d, n) = (w.rows(), w.cols());
        let dev = w.adjoint().matmul(w).sub(&CMat::eye(n)).max_abs();
        if dev > 1e-9 {
            return Err(OsError::Contract(format!(
                "W is not an isometry (||W*W - I|| = {dev:.3e})"
            )));
        }
        Ok(Self::from_map(d, n, |a| w.adjoint().matmul(a).matmul(w)))
    }

    pub fn scale(&self, t: C64) -> Self {
        ChoiMatrix {
            d: self.d,
            n: self.n,
            mat: self.mat.scale(t),
            cp_checked: None,
            cb_checked: None,
            slack: None,
        }
    }

    /// phi(b) for b in M_d.
    pub fn apply1(&self, b: &CMat) -> CMat {
        let (d, n) = (self.d, self.n);
        assert_eq!((b.rows(), b.cols()), (d, d), "apply1: wrong input size");
        CMat::from_fn(n, n, |k, l| {
            let mut acc = C64::ZERO;
            for i in 0..d {
                for j in 0..d {
                    let bij = b[(i, j)];
                    if bij != C64::ZERO {
                        acc += bij * self.mat[(i * n + k, j * n + l)];
                    }
                }
            }
            acc
        })
    }

    /// The k-th amplification applied to a (kd) x (kd) matrix: each d x d
    /// block goes through the map.
    pub fn apply(&self, a: &CMat, k: usize) -> Result<CMat> {
        let (d, n) = (self.d, self.n);
        if a.rows() != k * d || a.cols() != k * d {
            return Err(OsError::Shape(format!(
                "amplification level {k}: expected {0}x{0}, got {1}x{2}",
                k * d,
                a.rows(),
                a.cols()
            )));
        }
        let mut out = CMat::zeros(k * n, k * n);
        for r in 0..k {
            for s in 0..k {
                let img = self.apply1(&a.block(r * d, s * d, d, d));
                out.set_block(r * n, s * n, &img);
            }
        }
        Ok(out)
    }

    /// Apply the k-th amplification to an element of M_k(V).
    pub fn apply_level(&self, space: &OperatorSpaceSpec, x: &LevelElement) -> Result<CMat> {
        self.apply(&x.realize(space)?, x.level())
    }

    /// Hilbert-Schmidt adjoint map M_n -> M_d.
    pub fn adjoint_map(&self) -> ChoiMatrix {
        let (d, n) = (self.d, self.n);
        let mat = CMat::from_fn(d * n, d * n, |row, col| {
            let (k, i) = (row / d, row % d);
            let (l, j) = (col / d, col % d);
            self.mat[(i * n + k, j * n + l)].conj()
        });
        ChoiMatrix { d: n, n: d, mat, cp_checked: None, cb_checked: None, slack: None }
    }

    /// Complete positivity: the Choi matrix is Hermitian PSD.
    pub fn is_cp(&mut self) -> bool {
        let herm = self.mat.herm_deviation() <= 1e-10 * (1.0 + self.mat.max_abs());
        let verdict = herm
            && crate::eig::psd_check(&self.mat.hermitian_part(), CP_TOL)
                .map(|(ok, _)| ok)
                .unwrap_or(false);
        self.cp_checked = Some(verdict);
        verdict
    }

    /// Least-squares correction making phi(u_hat) exactly the identity;
    /// perturbs the Choi matrix by O(constraint residual).
    pub fn project_unital(&self, u_hat: &CMat) -> ChoiMatrix {
        let (d, n) = (self.d, self.n);
        let img = self.apply1(u_hat);
        let err = CMat::eye(n).sub(&img);
        let weight: f64 = u_hat.fro_norm().powi(2);
        let mut mat = self.mat.clone();
        if weight > 1e-300 {
            for i in 0..d {
                for j in 0..d {
                    let uij = u_hat[(i, j)].conj() / weight;
                    if uij == C64::ZERO {
                        continue;
                    }
                    for k in 0..n {
                        for l in 0..n {
                            mat[(i * n + k, j * n + l)] += uij * err[(k, l)];
                        }
                    }
                }
            }
        }
        ChoiMatrix { d, n, mat, cp_checked: None, cb_checked: None, slack: None }
    }
}

// ---------------------------------------------------------------------------
// The cb <= 1 feasibility block
// ---------------------------------------------------------------------------

/// Handles into an SDP where a Choi matrix lives as the off-diagonal
/// corner of the PSD block [[Y0, J],[J^*, Y1]] with trace-normalized
/// corners: all feasible corners are exactly the Choi matrices of
/// completely contractive maps.
#[derive(Debug, Clone)]
pub struct CbBlock {
    pub z: BlockId,
    pub d: usize,
    pub n: usize,
}

impl CbBlock {
    /// Install the block and its partial-trace constraints enforcing
    /// cb norm <= bound.
    pub fn install(p: &mut SdpProblem, d: usize, n: usize, bound: f64, prefix: &str) -> CbBlock {
        let dn = d * n;
        let z = p.add_block(&format!("{prefix}/Z"), 2 * dn);
        let u0 = p.add_block(&format!("{prefix}/U0"), n);
        let u1 = p.add_block(&format!("{prefix}/U1"), n);
        for (off, slack) in [(0, u0), (dn, u1)] {
            for k in 0..n {
                for l in k..n {
                    let mut e = CExpr::new();
                    for i in 0..d {
                        e.add_scaled(
                            &CExpr::entry(z, off + i * n + k, off + i * n + l),
                            cr(1.0),
                        );
                    }
                    e.add_scaled(&CExpr::entry(slack, k, l), cr(1.0));
                    let rhs = if k == l { cr(bound) } else { C64::ZERO };
                    p.add_ceq(&e, rhs);
                }
            }
        }
        CbBlock { z, d, n }
    }

    /// The Choi entry J[p, q] as a complex expression.
    pub fn corner(&self, p: usize, q: usize) -> CExpr {
        CExpr::entry(self.z, p, self.d * self.n + q)
    }

    /// phi(b)_{kl} as a complex expression, for a fixed b in M_d.
    pub fn phi_entry(&self, b: &CMat, k: usize, l: usize) -> CExpr {
        let (d, n) = (self.d, self.n);
        let mut e = CExpr::new();
        for i in 0..d {
            for j in 0..d {
                let bij = b[(i, j)];
                if bij != C64::ZERO {
                    e.add_scaled(&self.corner(i * n + k, j * n + l), bij);
                }
            }
        }
        e
    }

    /// Constrain phi(b) == target entrywise.
    pub fn pin_image(&self, p: &mut SdpProblem, b: &CMat, target: &CMat) {
        for k in 0..self.n {
            for l in 0..self.n {
                p.add_ceq(&self.phi_entry(b, k, l), target[(k, l)]);
            }
        }
    }

    /// Recover the Choi matrix (with its PSD corner witnesses) from a
    /// solved problem.
    pub fn extract(&self, sol: &SdpSolution) -> ChoiMatrix {
        let dn = self.d * self.n;
        let zval = sol.block(self.z);
        let mut choi = ChoiMatrix {
            d: self.d,
            n: self.n,
            mat: zval.block(0, dn, dn, dn),
            cp_checked: None,
            cb_checked: None,
            slack: None,
        };
        choi.slack = Some((zval.block(0, 0, dn, dn), zval.block(dn, dn, dn, dn)));
        choi
    }
}

/// Result of the completely bounded norm SDP.
#[derive(Debug, Clone)]
pub struct CbNormResult {
    pub value: f64,
    /// false when the solver hit its iteration cap; the value is then a
    /// best effort and must not be treated as certified.
    pub verified: bool,
    pub witnesses: Option<(CMat, CMat)>,
}

/// Completely bounded (spectral) norm of the map with the given Choi
/// matrix: minimize t subject to [[Y0, J],[J^*, Y1]] >= 0 and
/// Tr_d(Y_i) <= t I_n.
pub fn cb_norm(choi: &ChoiMatrix, opts: &SolveOpts) -> Result<CbNormResult> {
    let (d, n) = (choi.d, choi.n);
    let dn = d * n;
    let mut p = SdpProblem::new();
    let z = p.add_block("Z", 2 * dn);
    let u0 = p.add_block("U0", n);
    let u1 = p.add_block("U1", n);
    let t = p.add_block("t", 1);
    // corner pinned to the fixed Choi matrix
    for i in 0..dn {
        for j in 0..dn {
            p.add_ceq(&CExpr::entry(z, i, dn + j), choi.mat[(i, j)]);
        }
    }
    for (off, slack) in [(0, u0), (dn, u1)] {
        for k in 0..n {
            for l in k..n {
                let mut e = CExpr::new();
                for i in 0..d {
                    e.add_scaled(&CExpr::entry(z, off + i * n + k, off + i * n + l), cr(1.0));
                }
                e.add_scaled(&CExpr::entry(slack, k, l), cr(1.0));
                if k == l {
                    e.add_scaled(&CExpr::entry(t, 0, 0), cr(-1.0));
                }
                p.add_ceq(&e, C64::ZERO);
            }
        }
    }
    let mut obj = LinExpr::new();
    obj.add_re_entry(t, 0, 0, cr(1.0));
    p.set_objective(Sense::Minimize, obj);

    let sol = p.solve(opts)?;
    match sol.status {
        SdpStatus::Optimal | SdpStatus::MaxIterations => {
            let dnb = dn;
            let zval = sol.block(z);
            Ok(CbNormResult {
                value: sol.primal_objective,
                verified: sol.status == SdpStatus::Optimal,
                witnesses: Some((zval.block(0, 0, dnb, dnb), zval.block(dnb, dnb, dnb, dnb))),
            })
        }
        SdpStatus::Infeasible | SdpStatus::Unbounded => {
            Err(OsError::Solver("cb-norm program must be feasible".into()))
        }
    }
}

// ---------------------------------------------------------------------------
// Witness-set membership
// ---------------------------------------------------------------------------

/// A completely contractive map sending u to the identity, given by an
/// extension Choi matrix on all of M_d, with its verification residuals.
#[derive(Debug, Clone)]
pub struct SnWitness {
    pub choi: ChoiMatrix,
    pub restriction_residual: f64,
    pub unit_residual: f64,
}

#[derive(Debug, Clone)]
pub enum SnResult {
    Witness(SnWitness),
    /// Certified infeasible: the dual improving ray from the solver.
    Infeasible(Vec<f64>),
}

/// Feasibility of a witness with prescribed images: is there a completely
/// contractive extension to M_d with phi(G_t) = B_t for every basis
/// element and phi(u) = I_n?
pub fn sn_membership(
    space: &OperatorSpaceSpec,
    targets: &[CMat],
    n: usize,
    opts: &SolveOpts,
) -> Result<SnResult> {
    let u = space.require_u()?;
    if targets.len() != space.dim() {
        return Err(OsError::Input(format!(
            "need one target per basis element ({} != {})",
            targets.len(),
            space.dim()
        )));
    }
    for b in targets {
        if b.rows() != n || b.cols() != n {
            return Err(OsError::Shape("target size must match the codomain".into()));
        }
    }
    let d = space.ambient_dim();
    let mut p = SdpProblem::new();
    let cb = CbBlock::install(&mut p, d, n, 1.0, "w");
    for (g, b) in space.basis().iter().zip(targets) {
        cb.pin_image(&mut p, g, b);
    }
    let uhat = space.realize(u);
    cb.pin_image(&mut p, &uhat, &CMat::eye(n));

    let sol = p.feasibility(opts)?;
    match sol.status {
        SdpStatus::Optimal => {
            let choi = cb.extract(&sol);
            Ok(SnResult::Witness(witness_with_residuals(space, choi, Some(targets))))
        }
        SdpStatus::Infeasible => Ok(SnResult::Infeasible(sol.y)),
        SdpStatus::MaxIterations | SdpStatus::Unbounded => Err(OsError::Solver(format!(
            "witness feasibility did not resolve: {:?}",
            sol.status
        ))),
    }
}

/// Package a Choi matrix as a witness, computing its residuals against
/// the space (and optionally prescribed basis targets).
pub fn witness_with_residuals(
    space: &OperatorSpaceSpec,
    choi: ChoiMatrix,
    targets: Option<&[CMat]>,
) -> SnWitness {
    let restriction_residual = match targets {
        Some(ts) => space
            .basis()
            .iter()
            .zip(ts)
            .map(|(g, b)| crate::eig::spec_norm(&choi.apply1(g).sub(b)))
            .fold(0.0, f64::max),
        None => 0.0,
    };
    let unit_residual = match space.u_coeffs() {
        Some(u) => {
            let img = choi.apply1(&space.realize(u));
            crate::eig::spec_norm(&img.sub(&CMat::eye(choi.n)))
        }
        None => 0.0,
    };
    SnWitness { choi, restriction_residual, unit_residual }
}

/// The compression witness x -> W^* x W for a space realized with u = I_d.
pub fn compression_element(space: &OperatorSpaceSpec, w: &CMat) -> Result<SnWitness> {
    let u = space.require_u()?;
    let uhat = space.realize(u);
    let dev = uhat.sub(&CMat::eye(space.ambient_dim())).max_abs();
    if dev > 1e-9 {
        return Err(OsError::NotUnitary(format!(
            "compression witnesses need u realized as the identity \
             (apply the conjugate embedding first); ||u - I|| = {dev:.3e}"
        )));
    }
    if w.rows() != space.ambient_dim() {
        return Err(OsError::Shape("isometry row count must match the ambient dimension".into()));
    }
    let choi = ChoiMatrix::compression(w)?;
    Ok(witness_with_residuals(space, choi, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmat::c;
    use crate::eig::{spec_norm, top_singular_pair, trace_norm};
    use crate::space::{full_matrix_space, level_norm, span_identity_nilpotent};
    use crate::util;

    #[test]
    fn choi_round_trip_identity() {
        let choi = ChoiMatrix::identity(2);
        // reassembling from images of matrix units reproduces the matrix
        let rebuilt = ChoiMatrix::from_map(2, 2, |a| choi.apply1(a));
        assert!(rebuilt.mat.sub(&choi.mat).max_abs() < 1e-14);
        let mut rng = util::rng(1);
        let a = util::random_cmat(&mut rng, 2, 2);
        assert!(choi.apply1(&a).sub(&a).max_abs() < 1e-14);
    }

    #[test]
    fn trace_map_choi() {
        let choi = ChoiMatrix::from_map(2, 1, |a| {
            let mut m = CMat::zeros(1, 1);
            m[(0, 0)] = a.trace();
            m
        });
        let e11 = CMat::unit(2, 2, 0, 0);
        assert!((choi.apply1(&e11)[(0, 0)] - cr(1.0)).norm() < 1e-14);
    }

    #[test]
    fn amplification_of_identity_is_identity() {
        let mut rng = util::rng(2);
        let choi = ChoiMatrix::identity(2);
        let a = util::random_cmat(&mut rng, 4, 4);
        assert!(choi.apply(&a, 2).unwrap().sub(&a).max_abs() < 1e-14);
    }

    #[test]
    fn cp_checks() {
        assert!(ChoiMatrix::identity(2).is_cp());
        // Choi of the transpose is the swap, with eigenvalue -1
        assert!(!ChoiMatrix::transpose_map(2).is_cp());
        // pinching to the diagonal is CP
        let mut pinch = ChoiMatrix::from_map(2, 2, |a| {
            CMat::diag(&[a[(0, 0)], a[(1, 1)]])
        });
        assert!(pinch.is_cp());
    }

    #[test]
    fn cb_norm_identity_small() {
        for d in 1..=3 {
            let r = cb_norm(&ChoiMatrix::identity(d), &SolveOpts::default()).unwrap();
            assert!(r.verified, "d={d}");
            assert!((r.value - 1.0).abs() < 1e-6, "d={d}: {}", r.value);
        }
    }

    #[test]
    fn cb_norm_transpose_is_dimension() {
        let r = cb_norm(&ChoiMatrix::transpose_map(2), &SolveOpts::default()).unwrap();
        assert!(r.verified);
        assert!((r.value - 2.0).abs() < 1e-5, "{}", r.value);
    }

    #[test]
    fn cb_norm_scaling_homogeneous() {
        let choi = ChoiMatrix::identity(2).scale(cr(3.0));
        let r = cb_norm(&choi, &SolveOpts::default()).unwrap();
        assert!((r.value - 3.0).abs() < 1e-5, "{}", r.value);
    }

    #[test]
    fn cb_norm_of_functional_is_trace_norm() {
        let mut rng = util::rng(7);
        let f = util::random_cmat(&mut rng, 2, 2);
        let r = cb_norm(&ChoiMatrix::functional(&f), &SolveOpts::default()).unwrap();
        assert!((r.value - trace_norm(&f)).abs() < 1e-6, "{} vs {}", r.value, trace_norm(&f));
    }

    #[test]
    fn cb_norm_unitarily_invariant() {
        let mut rng = util::rng(11);
        let choi = ChoiMatrix::from_map(2, 2, |a| {
            let g = CMat::from_rows(&[
                vec![cr(0.3), c(0.2, 0.7)],
                vec![c(-0.1, 0.4), cr(1.1)],
            ])
            .unwrap();
            g.matmul(a).matmul(&g.adjoint())
        });
        let u = crate::eig::qr_unitary(&util::random_cmat(&mut rng, 2, 2));
        let v = crate::eig::qr_unitary(&util::random_cmat(&mut rng, 2, 2));
        let conj = ChoiMatrix::from_map(2, 2, |a| {
            v.adjoint().matmul(&choi.apply1(&u.matmul(a).matmul(&u.adjoint()))).matmul(&v)
        });
        let r1 = cb_norm(&choi, &SolveOpts::default()).unwrap();
        let r2 = cb_norm(&conj, &SolveOpts::default()).unwrap();
        assert!((r1.value - r2.value).abs() < 1e-6, "{} vs {}", r1.value, r2.value);
    }

    /// Brute-force level-n ascent for the cb norm: alternate between the
    /// top singular pair of phi_n(x) and the polar maximizer over the
    /// spectral unit ball. Independent of the SDP route.
    fn cb_norm_bruteforce(choi: &ChoiMatrix, restarts: usize, seed: u64) -> f64 {
        let (d, n) = (choi.d, choi.n);
        let adj = choi.adjoint_map();
        let mut rng = util::rng(seed);
        let mut best: f64 = 0.0;
        for _ in 0..restarts {
            let mut x = util::random_cmat(&mut rng, n * d, n * d);
            let mut prev = 0.0;
            for _ in 0..60 {
                // renormalize every pass so the ratio stays a certified
                // lower bound even if the polar step drifts off the ball
                x = x.scale(cr(1.0 / spec_norm(&x)));
                let img = choi.apply(&x, n).unwrap();
                let (sigma, uvec, vvec) = top_singular_pair(&img);
                if sigma > best {
                    best = sigma;
                }
                if (sigma - prev).abs() < 1e-11 {
                    break;
                }
                prev = sigma;
                // gradient: K = (phi^dagger)_n(u v^*); next x = polar(K)
                let rank1 = CMat::from_fn(n * n, n * n, |p, q| uvec[p] * vvec[q].conj());
                let k_mat = adj.apply(&rank1, n).unwrap();
                x = spectral_polar(&k_mat);
            }
        }
        best
    }

    /// Polar factor U V^* (the spectral-ball maximizer of Re<K, x>). Rank
    /// deficient K needs an orthonormal completion of the U columns or the
    /// result stops being a contraction.
    fn spectral_polar(k: &CMat) -> CMat {
        let n = k.rows();
        let g = k.adjoint().matmul(k).hermitian_part();
        let (vals, v) = crate::eig::herm_eig(&g).unwrap();
        let kv = k.matmul(&v);
        // columns below ~sqrt(machine eps) relative are unreliable through
        // the Gram route; treat them as null and complete orthonormally
        let tol = vals[0].max(0.0).sqrt() * 1e-7 + 1e-300;
        let mut u = CMat::zeros(n, n);
        let mut null_cols = vec![];
        for j in 0..n {
            let sigma = vals[j].max(0.0).sqrt();
            if sigma > tol {
                for i in 0..n {
                    u[(i, j)] = kv[(i, j)] / sigma;
                }
            } else {
                null_cols.push(j);
            }
        }
        if !null_cols.is_empty() {
            let mut b = u.clone();
            for (fill, &j) in null_cols.iter().enumerate() {
                b[(fill % n, j)] = cr(1.0);
            }
            let q = crate::eig::qr_unitary(&b);
            for &j in &null_cols {
                for i in 0..n {
                    u[(i, j)] = q[(i, j)];
                }
            }
        }
        u.matmul(&v.adjoint())
    }

    #[test]
    fn smith_level_attainment_oracle_matches_sdp() {
        let mut rng = util::rng(19);
        for (d, n) in [(2usize, 2usize), (2, 3), (3, 2)] {
            let mat = util::random_cmat(&mut rng, d * n, d * n).scale(cr(0.5));
            let choi = ChoiMatrix::new(d, n, mat).unwrap();
            let sdp = cb_norm(&choi, &SolveOpts::default()).unwrap();
            let brute = cb_norm_bruteforce(&choi, 12, 1000 + d as u64 * 10 + n as u64);
            assert!(
                (sdp.value - brute).abs() < 1e-3,
                "d={d} n={n}: sdp {} vs brute {}",
                sdp.value,
                brute
            );
            assert!(brute <= sdp.value + 1e-6, "brute force is a lower bound");
        }
    }

    #[test]
    fn sn_membership_identity_on_m2() {
        let v = full_matrix_space(2);
        let targets: Vec<CMat> = v.basis().to_vec();
        match sn_membership(&v, &targets, 2, &SolveOpts::default()).unwrap() {
            SnResult::Witness(w) => {
                assert!(w.restriction_residual < 1e-6, "{}", w.restriction_residual);
                assert!(w.unit_residual < 1e-6);
            }
            SnResult::Infeasible(_) => panic!("identity must be feasible"),
        }
    }

    #[test]
    fn sn_membership_rank_one_functional_on_span_u() {
        // V = span{diag(1, 1/2)}, u the generator, phi(u) = 1 in M_1.
        let basis = vec![CMat::diag(&[cr(1.0), cr(0.5)])];
        let v = OperatorSpaceSpec::new(2, basis, "span-u")
            .unwrap()
            .with_u(vec![cr(1.0)])
            .unwrap();
        let targets = vec![CMat::eye(1)];
        match sn_membership(&v, &targets, 1, &SolveOpts::default()).unwrap() {
            SnResult::Witness(w) => assert!(w.unit_residual < 1e-6),
            SnResult::Infeasible(_) => panic!("rank-one functional must be feasible"),
        }
    }

    #[test]
    fn sn_membership_inflated_off_diagonal_infeasible() {
        // forcing phi(E12) = 2 E12 with identity elsewhere needs cb > 1
        let v = full_matrix_space(2);
        let mut targets: Vec<CMat> = v.basis().to_vec();
        targets[1] = targets[1].scale(cr(2.0)); // basis order: E11,E12,E21,E22
        match sn_membership(&v, &targets, 2, &SolveOpts::default()).unwrap() {
            SnResult::Witness(w) => panic!(
                "must be infeasible, got witness with residuals {} / {}",
                w.restriction_residual, w.unit_residual
            ),
            SnResult::Infeasible(cert) => {
                assert!(cert.iter().any(|v| v.abs() > 0.0), "certificate should be nonzero");
            }
        }
    }

    #[test]
    fn compression_witnesses() {
        let v = full_matrix_space(2);
        // W = I: the identity witness
        let w_full = compression_element(&v, &CMat::eye(2)).unwrap();
        assert!(w_full.unit_residual < 1e-12);
        let mut rngx = util::rng(4);
        let a = util::random_cmat(&mut rngx, 2, 2);
        assert!(w_full.choi.apply1(&a).sub(&a).max_abs() < 1e-12);
        // W = e1: x -> x_11, a state
        let e1 = CMat::from_rows(&[vec![cr(1.0)], vec![C64::ZERO]]).unwrap();
        let w_state = compression_element(&v, &e1).unwrap();
        assert!((w_state.choi.apply1(&a)[(0, 0)] - a[(0, 0)]).norm() < 1e-12);
        // random isometry: its targets are feasible for the witness program
        let q = crate::eig::qr_unitary(&util::random_cmat(&mut rngx, 2, 2));
        let wiso = q.block(0, 0, 2, 1);
        let comp = compression_element(&v, &wiso).unwrap();
        let targets: Vec<CMat> = v.basis().iter().map(|g| comp.choi.apply1(g)).collect();
        match sn_membership(&v, &targets, 1, &SolveOpts::default()).unwrap() {
            SnResult::Witness(w) => assert!(w.restriction_residual < 1e-6),
            SnResult::Infeasible(_) => panic!("compression must be feasible"),
        }
    }

    #[test]
    fn witness_contractivity_sandwich() {
        // every witness is completely contractive on the space
        let v = span_identity_nilpotent();
        let targets = vec![CMat::eye(2), CMat::unit(2, 2, 0, 1).scale(cr(0.4))];
        let SnResult::Witness(w) =
            sn_membership(&v, &targets, 2, &SolveOpts::default()).unwrap()
        else {
            panic!("feasible");
        };
        let mut rng = util::rng(23);
        for k in 1..=2 {
            for _ in 0..4 {
                let x = LevelElement::from_fn(k, 2, |_, _, _| util::random_c64(&mut rng));
                let img = w.choi.apply_level(&v, &x).unwrap();
                let nx = level_norm(&v, &x).unwrap();
                assert!(
                    spec_norm(&img) <= nx + 1e-6,
                    "k={k}: {} > {}",
                    spec_norm(&img),
                    nx
                );
            }
        }
    }

    #[test]
    fn restriction_to_subspace_keeps_witness() {
        // a witness for M_2 restricts to span{I, E12} with the same data
        let big = full_matrix_space(2);
        let targets: Vec<CMat> = big.basis().to_vec();
        let SnResult::Witness(w) =
            sn_membership(&big, &targets, 2, &SolveOpts::default()).unwrap()
        else {
            panic!("feasible");
        };
        let small = span_identity_nilpotent();
        let restricted = witness_with_residuals(
            &small,
            w.choi.clone(),
            Some(&[CMat::eye(2), CMat::unit(2, 2, 0, 1)]),
        );
        assert!(restricted.unit_residual <= w.unit_residual + 1e-9);
        assert!(restricted.restriction_residual < 1e-5);
    }

    #[test]
    fn project_unital_fixes_unit_exactly() {
        let v = full_matrix_space(2);
        let targets: Vec<CMat> = v.basis().to_vec();
        let SnResult::Witness(w) =
            sn_membership(&v, &targets, 2, &SolveOpts::default()).unwrap()
        else {
            panic!("feasible");
        };
        let uhat = v.u_matrix().unwrap();
        let fixed = w.choi.project_unital(&uhat);
        let img = fixed.apply1(&uhat);
        assert!(img.sub(&CMat::eye(2)).max_abs() < 1e-13);
        // the correction is bounded by the original residual
        assert!(fixed.mat.sub(&w.choi.mat).max_abs() <= w.unit_residual + 1e-9);
    }
}
