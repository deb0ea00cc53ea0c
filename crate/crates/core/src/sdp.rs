//! Dense Hermitian-block semidefinite programming.
//!
//! Problems are stated over a list of Hermitian matrix blocks with real
//! affine constraints and a real linear objective. The solver is a
//! primal-dual interior-point method on the homogeneous self-dual
//! embedding with Nesterov-Todd scaling, so it either returns an optimal
//! primal/dual pair or an explicit infeasibility certificate (a dual
//! improving ray). Blocks are handled natively in complex arithmetic;
//! [`real_embedding`] provides the real symmetric form used for
//! cross-checking.
//!
//! Scale target: a few thousand real variables, a few hundred constraints.
//! The Schur complement is formed densely and factored by Cholesky.

use std::collections::BTreeMap;

use num_complex::Complex64 as C64;
use serde_json::json;

use crate::cmat::{cr, CMat};
use crate::eig::{cholesky, herm_eig, min_eigenvalue};
use crate::error::{OsError, Result};

pub const DEFAULT_GAP_TOL: f64 = 1e-8;
pub const DEFAULT_FEAS_TOL: f64 = 1e-8;
pub const FEASIBILITY_SLACK: f64 = 1e-7;

/// Handle to a declared Hermitian block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct BlockId(pub usize);

/// Hermitian coefficient matrix stored sparsely: diagonal entries (real)
/// and strictly-upper entries; the lower triangle is implied.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseHerm {
    dim: usize,
    /// (i, j, v) with i <= j; v real when i == j.
    entries: Vec<(usize, usize, C64)>,
}

impl SparseHerm {
    pub fn from_map(dim: usize, map: &BTreeMap<(usize, usize), C64>) -> Self {
        let mut entries = Vec::with_capacity(map.len());
        for (&(i, j), &v) in map {
            debug_assert!(i <= j);
            if v.norm() > 0.0 {
                entries.push((i, j, v));
            }
        }
        SparseHerm { dim, entries }
    }

    pub fn from_dense(a: &CMat) -> Self {
        assert!(a.is_square());
        let mut map = BTreeMap::new();
        for i in 0..a.rows() {
            for j in i..a.cols() {
                let v = if i == j { cr(a[(i, j)].re) } else { a[(i, j)] };
                if v.norm() > 1e-300 {
                    map.insert((i, j), v);
                }
            }
        }
        Self::from_map(a.rows(), &map)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, usize, C64)] {
        &self.entries
    }

    pub fn to_dense(&self) -> CMat {
        let mut m = CMat::zeros(self.dim, self.dim);
        for &(i, j, v) in &self.entries {
            if i == j {
                m[(i, i)] = cr(v.re);
            } else {
                m[(i, j)] = v;
                m[(j, i)] = v.conj();
            }
        }
        m
    }

    /// <A, X> = Re Tr(A X) for Hermitian X.
    pub fn pair(&self, x: &CMat) -> f64 {
        let mut acc = 0.0;
        for &(i, j, v) in &self.entries {
            if i == j {
                acc += v.re * x[(i, i)].re;
            } else {
                acc += 2.0 * (v.conj() * x[(i, j)]).re;
            }
        }
        acc
    }

    /// X += t * A (dense accumulation).
    pub fn add_scaled_to(&self, x: &mut CMat, t: f64) {
        for &(i, j, v) in &self.entries {
            if i == j {
                x[(i, i)] += cr(v.re * t);
            } else {
                x[(i, j)] += v * t;
                x[(j, i)] += v.conj() * t;
            }
        }
    }

    /// <A, B> between two sparse Hermitian matrices.
    pub fn gram_dot(&self, other: &SparseHerm) -> f64 {
        // Both entry lists are sorted lexicographically.
        let (mut p, mut q) = (0, 0);
        let mut acc = 0.0;
        while p < self.entries.len() && q < other.entries.len() {
            let a = &self.entries[p];
            let b = &other.entries[q];
            match (a.0, a.1).cmp(&(b.0, b.1)) {
                std::cmp::Ordering::Less => p += 1,
                std::cmp::Ordering::Greater => q += 1,
                std::cmp::Ordering::Equal => {
                    let w = if a.0 == a.1 { 1.0 } else { 2.0 };
                    acc += w * (a.2.conj() * b.2).re;
                    p += 1;
                    q += 1;
                }
            }
        }
        acc
    }

    pub fn fro_norm(&self) -> f64 {
        self.gram_dot(self).max(0.0).sqrt()
    }

    pub fn scale(&self, t: f64) -> SparseHerm {
        SparseHerm {
            dim: self.dim,
            entries: self.entries.iter().map(|&(i, j, v)| (i, j, v * t)).collect(),
        }
    }

    /// W A W for Hermitian W, exploiting the entry sparsity of A:
    /// each entry contributes a rank-one outer product of columns of W.
    pub fn congruence(&self, w: &CMat) -> CMat {
        let n = self.dim;
        let mut out = CMat::zeros(n, n);
        for &(i, j, v) in &self.entries {
            // W E_ij W = w_i w_j^dag with w_k the k-th column of W.
            if i == j {
                rank1_acc(&mut out, w, i, i, cr(v.re));
            } else {
                rank1_acc(&mut out, w, i, j, v);
                rank1_acc(&mut out, w, j, i, v.conj());
            }
        }
        out
    }
}

fn rank1_acc(out: &mut CMat, w: &CMat, i: usize, j: usize, v: C64) {
    let n = w.rows();
    for p in 0..n {
        let wpi = w[(p, i)] * v;
        if wpi == C64::ZERO {
            continue;
        }
        for q in 0..n {
            // (w_i w_j^dag)_{pq} = W_{pi} conj(W_{qj})
            out[(p, q)] += wpi * w[(q, j)].conj();
        }
    }
}

/// Real-linear functional of the block variables plus a constant:
/// f(X) = sum_b <A_b, X_b> + c.
#[derive(Debug, Clone, Default)]
pub struct LinExpr {
    coeffs: BTreeMap<(usize, usize, usize), C64>, // (block, i, j) i<=j canonical
    pub constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        LinExpr { coeffs: BTreeMap::new(), constant: c }
    }

    /// Add `Re(c * X_b[i, j])`.
    pub fn add_re_entry(&mut self, b: BlockId, i: usize, j: usize, c: C64) {
        if i == j {
            *self.coeffs.entry((b.0, i, i)).or_insert(C64::ZERO) += cr(c.re);
        } else if i < j {
            // Re(c X_ij) = <(c/2) E_ji + (cbar/2) E_ij, X>; canonical upper entry (i,j)
            *self.coeffs.entry((b.0, i, j)).or_insert(C64::ZERO) += c.conj() * 0.5;
        } else {
            // X_ji = conj(X_ij): Re(c X_ij) with i>j -> Re(cbar X_ji)
            *self.coeffs.entry((b.0, j, i)).or_insert(C64::ZERO) += c * 0.5;
        }
    }

    pub fn add(&mut self, other: &LinExpr) {
        for (&k, &v) in &other.coeffs {
            *self.coeffs.entry(k).or_insert(C64::ZERO) += v;
        }
        self.constant += other.constant;
    }

    pub fn add_scaled(&mut self, other: &LinExpr, t: f64) {
        for (&k, &v) in &other.coeffs {
            *self.coeffs.entry(k).or_insert(C64::ZERO) += v * t;
        }
        self.constant += other.constant * t;
    }

    /// Add the pairing `<A, X_b>` for a dense Hermitian coefficient matrix.
    pub fn add_herm(&mut self, b: BlockId, a: &CMat) {
        assert!(a.is_square());
        for i in 0..a.rows() {
            for j in i..a.cols() {
                let v = if i == j { cr(a[(i, i)].re) } else { a[(i, j)] };
                if v.norm() > 1e-300 {
                    *self.coeffs.entry((b.0, i, j)).or_insert(C64::ZERO) += v;
                }
            }
        }
    }

    pub fn scaled(&self, t: f64) -> LinExpr {
        let mut out = self.clone();
        for v in out.coeffs.values_mut() {
            *v *= t;
        }
        out.constant *= t;
        out
    }

    fn split_by_block(&self, dims: &[usize]) -> Vec<(usize, SparseHerm)> {
        let mut per: BTreeMap<usize, BTreeMap<(usize, usize), C64>> = BTreeMap::new();
        for (&(b, i, j), &v) in &self.coeffs {
            per.entry(b).or_default().insert((i, j), v);
        }
        per.into_iter()
            .map(|(b, map)| (b, SparseHerm::from_map(dims[b], &map)))
            .filter(|(_, a)| !a.entries.is_empty())
            .collect()
    }
}

/// Complex-valued linear expression, kept as separate real and imaginary
/// real-linear parts.
#[derive(Debug, Clone, Default)]
pub struct CExpr {
    pub re: LinExpr,
    pub im: LinExpr,
}

impl CExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: C64) -> Self {
        CExpr { re: LinExpr::constant(c.re), im: LinExpr::constant(c.im) }
    }

    /// The entry X_b[i, j] as a complex expression.
    pub fn entry(b: BlockId, i: usize, j: usize) -> Self {
        let mut e = CExpr::new();
        e.re.add_re_entry(b, i, j, cr(1.0));
        e.im.add_re_entry(b, i, j, C64::new(0.0, -1.0)); // Im z = Re(-i z)
        e
    }

    pub fn add_scaled(&mut self, other: &CExpr, c: C64) {
        // (a+ib)(x+iy) -> re += a*x - b*y ; im += a*y + b*x
        self.re.add_scaled(&other.re, c.re);
        self.re.add_scaled(&other.im, -c.im);
        self.im.add_scaled(&other.im, c.re);
        self.im.add_scaled(&other.re, c.im);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ConOp {
    Eq,
    Le,
    Ge,
}

#[derive(Debug, Clone)]
struct RawConstraint {
    expr: LinExpr,
    op: ConOp,
    rhs: f64,
}

/// A Hermitian-block SDP: declared blocks, affine constraints, and an
/// optional real linear objective.
#[derive(Debug, Clone)]
pub struct SdpProblem {
    names: Vec<String>,
    dims: Vec<usize>,
    constraints: Vec<RawConstraint>,
    objective: LinExpr,
    sense: Sense,
}

impl Default for SdpProblem {
    fn default() -> Self {
        Self::new()
    }
}

impl SdpProblem {
    pub fn new() -> Self {
        SdpProblem {
            names: vec![],
            dims: vec![],
            constraints: vec![],
            objective: LinExpr::new(),
            sense: Sense::Maximize,
        }
    }

    pub fn add_block(&mut self, name: &str, dim: usize) -> BlockId {
        assert!(dim >= 1, "block dimension must be positive");
        self.names.push(name.to_string());
        self.dims.push(dim);
        BlockId(self.dims.len() - 1)
    }

    pub fn block_dim(&self, b: BlockId) -> usize {
        self.dims[b.0]
    }

    pub fn num_blocks(&self) -> usize {
        self.dims.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn set_objective(&mut self, sense: Sense, expr: LinExpr) {
        self.sense = sense;
        self.objective = expr;
    }

    pub fn add_eq(&mut self, expr: LinExpr, rhs: f64) {
        self.constraints.push(RawConstraint { expr, op: ConOp::Eq, rhs });
    }

    pub fn add_le(&mut self, expr: LinExpr, rhs: f64) {
        self.constraints.push(RawConstraint { expr, op: ConOp::Le, rhs });
    }

    pub fn add_ge(&mut self, expr: LinExpr, rhs: f64) {
        self.constraints.push(RawConstraint { expr, op: ConOp::Ge, rhs });
    }

    /// Equate a complex expression to a complex constant (two real rows).
    /// Constants inside the expression migrate to the right-hand side when
    /// the problem is put in standard form.
    pub fn add_ceq(&mut self, expr: &CExpr, rhs: C64) {
        self.add_eq(expr.re.clone(), rhs.re);
        self.add_eq(expr.im.clone(), rhs.im);
    }

    /// Documented JSON dump for external cross-checking.
    pub fn debug_json(&self) -> serde_json::Value {
        let blocks: Vec<_> = self
            .names
            .iter()
            .zip(&self.dims)
            .map(|(n, d)| json!({"name": n, "dim": d}))
            .collect();
        let expr_json = |e: &LinExpr| {
            let terms: Vec<_> = e
                .coeffs
                .iter()
                .map(|(&(b, i, j), v)| json!([b, i, j, v.re, v.im]))
                .collect();
            json!({"terms": terms, "constant": e.constant})
        };
        let cons: Vec<_> = self
            .constraints
            .iter()
            .map(|c| {
                json!({
                    "expr": expr_json(&c.expr),
                    "op": match c.op { ConOp::Eq => "eq", ConOp::Le => "le", ConOp::Ge => "ge" },
                    "rhs": c.rhs,
                })
            })
            .collect();
        json!({
            "schema": "opspace/1",
            "kind": "sdp_problem",
            "blocks": blocks,
            "sense": match self.sense { Sense::Minimize => "min", Sense::Maximize => "max" },
            "objective": expr_json(&self.objective),
            "constraints": cons,
        })
    }

    pub fn solve(&self, opts: &SolveOpts) -> Result<SdpSolution> {
        match Solver::build(self, opts)? {
            Build::Ready(mut solver) => solver.run_inner(),
            Build::LinearInfeasible(y) => {
                // The affine part of the constraints is already inconsistent;
                // y is an exact Farkas combination with A*(y) = 0, <b,y> = 1.
                Ok(SdpSolution {
                    status: SdpStatus::Infeasible,
                    blocks: self.dims.iter().map(|&d| CMat::zeros(d, d)).collect(),
                    y: y.clone(),
                    primal_objective: f64::NAN,
                    dual_objective: f64::NAN,
                    gap: f64::NAN,
                    iterations: 0,
                    constraint_residual: f64::NAN,
                    certificate: Some(InfeasibilityCertificate { y, ray_psd_violation: 0.0 }),
                })
            }
        }
    }

    /// Feasibility problem: zero objective, witness or certificate.
    pub fn feasibility(&self, opts: &SolveOpts) -> Result<SdpSolution> {
        let mut p = self.clone();
        p.objective = LinExpr::new();
        p.sense = Sense::Maximize;
        p.solve(opts)
    }
}

#[derive(Debug, Clone)]
pub struct SolveOpts {
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOpts {
    fn default() -> Self {
        SolveOpts { gap_tol: DEFAULT_GAP_TOL, feas_tol: DEFAULT_FEAS_TOL, max_iter: 120 }
    }
}

impl SolveOpts {
    pub fn with_gap(gap_tol: f64) -> Self {
        SolveOpts { gap_tol, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIterations,
}

/// Farkas-type certificate of primal infeasibility: a dual ray `y` with
/// `A*(y)` negative semidefinite and `<b, y> = 1`.
#[derive(Debug, Clone)]
pub struct InfeasibilityCertificate {
    pub y: Vec<f64>,
    /// max over blocks of lambda_max(A*(y)); infeasibility is certified
    /// when this is <= a small tolerance while <b,y> = 1.
    pub ray_psd_violation: f64,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SdpStatus,
    /// Values for the user-declared blocks (PSD within tolerance).
    pub blocks: Vec<CMat>,
    /// Dual multipliers for the declared constraints (zeros for dropped
    /// redundant rows).
    pub y: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub gap: f64,
    pub iterations: usize,
    /// Worst violation of the declared constraints by `blocks`.
    pub constraint_residual: f64,
    pub certificate: Option<InfeasibilityCertificate>,
}

impl SdpSolution {
    pub fn block(&self, b: BlockId) -> &CMat {
        &self.blocks[b.0]
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SdpStatus::Optimal
    }
}

// ---------------------------------------------------------------------------
// Internal solver
// ---------------------------------------------------------------------------

/// One constraint in standard equality form over the extended block list.
struct Row {
    terms: Vec<(usize, SparseHerm)>,
    rhs: f64,
    /// Index of the user constraint this row came from.
    origin: usize,
}

impl Row {
    fn apply(&self, x: &[CMat]) -> f64 {
        self.terms.iter().map(|(b, a)| a.pair(&x[*b])).sum()
    }

    fn dot(&self, other: &Row) -> f64 {
        // both term lists sorted by block index
        let mut acc = 0.0;
        let mut q = 0;
        for (b, a) in &self.terms {
            while q < other.terms.len() && other.terms[q].0 < *b {
                q += 1;
            }
            if q < other.terms.len() && other.terms[q].0 == *b {
                acc += a.gram_dot(&other.terms[q].1);
            }
        }
        acc
    }
}

struct Solver {
    dims: Vec<usize>,
    n_user_blocks: usize,
    rows: Vec<Row>,
    b: Vec<f64>,
    c: Vec<CMat>,
    obj_scale: f64,
    obj_constant: f64,
    flip: f64, // +1 if internal minimization matches requested sense
    n_user_constraints: usize,
    origins: Vec<usize>,
    opts: SolveOpts,
    problem: SdpProblem,
}

fn block_dot(a: &[CMat], b: &[CMat]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.re_dot(y)).sum()
}

fn block_norm(a: &[CMat]) -> f64 {
    a.iter().map(|x| x.fro_norm().powi(2)).sum::<f64>().sqrt()
}

enum Build {
    Ready(Solver),
    LinearInfeasible(Vec<f64>),
}

impl Solver {
    fn build(p: &SdpProblem, opts: &SolveOpts) -> Result<Build> {
        let mut dims = p.dims.clone();
        let n_user_blocks = dims.len();

        // Standard form: inequalities get scalar slack blocks.
        let mut std_rows: Vec<Row> = Vec::with_capacity(p.constraints.len());
        for (idx, con) in p.constraints.iter().enumerate() {
            let mut expr = con.expr.clone();
            let mut rhs = con.rhs - expr.constant;
            expr.constant = 0.0;
            match con.op {
                ConOp::Eq => {}
                ConOp::Le => {
                    let slack = dims.len();
                    dims.push(1);
                    expr.add_re_entry(BlockId(slack), 0, 0, cr(1.0));
                }
                ConOp::Ge => {
                    let slack = dims.len();
                    dims.push(1);
                    expr.add_re_entry(BlockId(slack), 0, 0, cr(-1.0));
                }
            }
            let terms = expr.split_by_block(&dims);
            // normalize row scale
            let fro: f64 =
                terms.iter().map(|(_, a)| a.gram_dot(a)).sum::<f64>().max(0.0).sqrt();
            let scale = if fro > 1e-12 { 1.0 / fro } else { 1.0 };
            let terms =
                terms.into_iter().map(|(b, a)| (b, a.scale(scale))).collect::<Vec<_>>();
            rhs *= scale;
            if terms.is_empty() {
                if rhs.abs() > 1e-9 {
                    return Err(OsError::Inconsistent(format!(
                        "constraint {idx} has empty left-hand side but rhs {rhs:.3e}"
                    )));
                }
                continue;
            }
            std_rows.push(Row { terms, rhs, origin: idx });
        }

        // Objective as dense per-block cost matrices (internal sense: minimize).
        let flip = match p.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let mut c: Vec<CMat> = dims.iter().map(|&d| CMat::zeros(d, d)).collect();
        for (b, a) in p.objective.split_by_block(&dims) {
            a.add_scaled_to(&mut c[b], flip);
        }
        let cnorm = block_norm(&c);
        let obj_scale = if cnorm > 1e-10 { cnorm } else { 1.0 };
        for m in c.iter_mut() {
            *m = m.scale(cr(1.0 / obj_scale));
        }

        // Drop linearly dependent rows (checking consistency as we go).
        let (rows, certificate) = dedup_rows(std_rows)?;
        if let Some(cert) = certificate {
            // Inconsistent affine system: report infeasibility immediately.
            let mut y = vec![0.0; p.constraints.len()];
            for (orig, w) in cert {
                y[orig] += w;
            }
            return Ok(Build::LinearInfeasible(y));
        }

        let b: Vec<f64> = rows.iter().map(|r| r.rhs).collect();
        let origins: Vec<usize> = rows.iter().map(|r| r.origin).collect();
        Ok(Build::Ready(Solver {
            dims,
            n_user_blocks,
            rows,
            b,
            c,
            obj_scale,
            obj_constant: p.objective.constant,
            flip,
            n_user_constraints: p.constraints.len(),
            origins,
            opts: opts.clone(),
            problem: p.clone(),
        }))
    }

    fn a_apply(&self, x: &[CMat]) -> Vec<f64> {
        self.rows.iter().map(|r| r.apply(x)).collect()
    }

    fn a_adjoint(&self, y: &[f64]) -> Vec<CMat> {
        let mut out: Vec<CMat> = self.dims.iter().map(|&d| CMat::zeros(d, d)).collect();
        for (row, &yi) in self.rows.iter().zip(y) {
            if yi == 0.0 {
                continue;
            }
            for (b, a) in &row.terms {
                a.add_scaled_to(&mut out[*b], yi);
            }
        }
        out
    }

    fn run_inner(&mut self) -> Result<SdpSolution> {
        let nu: f64 = self.dims.iter().map(|&d| d as f64).sum();
        let m = self.rows.len();
        let bnorm = 1.0 + self.b.iter().map(|x| x * x).sum::<f64>().sqrt();
        let cnorm = 1.0 + block_norm(&self.c);

        let mut x: Vec<CMat> = self.dims.iter().map(|&d| CMat::eye(d)).collect();
        let mut s: Vec<CMat> = self.dims.iter().map(|&d| CMat::eye(d)).collect();
        let mut y = vec![0.0f64; m];
        let mut tau = 1.0f64;
        let mut kappa = 1.0f64;

        let mut iterations = 0;
        // best iterate so far by the composite optimality measure
        let mut best: Option<(f64, Vec<CMat>, Vec<f64>, f64)> = None;

        for iter in 0..self.opts.max_iter {
            iterations = iter;
            // Residuals of the homogeneous model.
            let ax = self.a_apply(&x);
            let rp: Vec<f64> = (0..m).map(|i| tau * self.b[i] - ax[i]).collect();
            let aty = self.a_adjoint(&y);
            let rd: Vec<CMat> = (0..self.dims.len())
                .map(|bi| {
                    let mut r = self.c[bi].scale(cr(tau));
                    r = r.sub(&aty[bi]).sub(&s[bi]);
                    r
                })
                .collect();
            let cx = block_dot(&self.c, &x);
            let by: f64 = self.b.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rg = by - cx - kappa;
            let xs = block_dot(&x, &s);
            let mu = (xs + tau * kappa) / (nu + 1.0);

            // Convergence and certificate tests.
            let pobj = cx / tau;
            let dobj = by / tau;
            let pinf = rp.iter().map(|v| v * v).sum::<f64>().sqrt() / (tau * bnorm);
            let dinf = block_norm(&rd) / (tau * cnorm);
            let relgap = xs / (tau * tau) / (1.0 + pobj.abs() + dobj.abs());
            if pinf <= self.opts.feas_tol && dinf <= self.opts.feas_tol && relgap <= self.opts.gap_tol
            {
                return Ok(self.extract(&x, &y, tau, iter + 1));
            }
            let measure = pinf.max(dinf).max(relgap);
            if best.as_ref().is_none_or(|(b, ..)| measure < *b) {
                best = Some((measure, x.clone(), y.clone(), tau));
            }
            // Primal infeasibility: y a dual improving ray. Problems whose
            // feasible set is nonempty but has empty interior also drive
            // tau down, so infeasibility is declared only on a
            // high-quality certificate (a bounded-trace feasible point
            // would contradict lambda_max(A*(y)) <= 1e-8 with <b,y> = 1)
            // and with kappa dominating tau.
            if by > 0.0 && iter >= 3 {
                let yn: Vec<f64> = y.iter().map(|v| v / by).collect();
                let ray = self.a_adjoint(&yn);
                let viol = ray
                    .iter()
                    .map(|blockm| {
                        herm_eig(&blockm.hermitian_part())
                            .map(|(vals, _)| vals.first().copied().unwrap_or(0.0))
                            .unwrap_or(f64::INFINITY)
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                if viol <= 1e-8 && (tau <= 1e-3 * kappa.max(1e-300) || viol <= 1e-12) {
                    return Ok(self.infeasible_solution(yn, viol, iter + 1));
                }
            }
            // Dual infeasibility: x an unbounded primal ray.
            if cx < 0.0 && iter >= 3 && tau <= 1e-3 * kappa.max(1e-300) {
                let scale = -cx;
                let axn = ax.iter().map(|v| (v / scale).abs()).fold(0.0, f64::max);
                if axn <= 1e-8 {
                    let mut sol = self.infeasible_solution(vec![0.0; self.n_user_constraints], 0.0, iter + 1);
                    sol.status = SdpStatus::Unbounded;
                    sol.certificate = None;
                    return Ok(sol);
                }
            }

            // Nesterov-Todd scalings.
            let mut scalings = Vec::with_capacity(self.dims.len());
            for bi in 0..self.dims.len() {
                scalings.push(NtScaling::compute(&x[bi], &s[bi])?);
            }

            // Schur complement M = A W A^T and objective-side vectors.
            let wcw: Vec<CMat> =
                (0..self.dims.len()).map(|bi| scalings[bi].congruence_w(&self.c[bi])).collect();
            let mut mmat = vec![0.0f64; m * m];
            // Per block: W A_j W once, then sparse pairings.
            let mut waw: Vec<Vec<Option<CMat>>> = Vec::with_capacity(self.dims.len());
            for bi in 0..self.dims.len() {
                let mut per: Vec<Option<CMat>> = vec![None; m];
                for (j, row) in self.rows.iter().enumerate() {
                    for (bb, a) in &row.terms {
                        if *bb == bi {
                            per[j] = Some(a.congruence(&scalings[bi].w));
                        }
                    }
                }
                waw.push(per);
            }
            for j in 0..m {
                for bi in 0..self.dims.len() {
                    if let Some(yj) = &waw[bi][j] {
                        for (i, row) in self.rows.iter().enumerate() {
                            if i > j {
                                continue;
                            }
                            for (bb, a) in &row.terms {
                                if *bb == bi {
                                    mmat[i * m + j] += a.pair(yj);
                                }
                            }
                        }
                    }
                }
            }
            for i in 0..m {
                for j in 0..i {
                    mmat[i * m + j] = mmat[j * m + i];
                }
            }
            let mchol = RealChol::new(mmat, m)?;

            // w = A(W C W); least-squares split of the scalar reduction:
            // y_w = M^-1 w, y_b = M^-1 b, E = C - A*(y_w). The dtau
            // denominator kappa + tau (b'y_b + ||R* E R||_F^2) is a sum of
            // nonnegative terms, which avoids the catastrophic cancellation
            // of the naive <C, WCW> arrangement.
            let w_vec: Vec<f64> = (0..m)
                .map(|i| {
                    self.rows[i].terms.iter().map(|(bb, a)| a.pair(&wcw[*bb])).sum::<f64>()
                })
                .collect();
            let y_w = mchol.solve(&w_vec);
            let y_b = mchol.solve(&self.b);
            let at_yw = self.a_adjoint(&y_w);
            let e_resid: Vec<CMat> =
                (0..self.dims.len()).map(|bi| self.c[bi].sub(&at_yw[bi])).collect();
            let rer: Vec<CMat> =
                (0..self.dims.len()).map(|bi| scalings[bi].scale_s(&e_resid[bi])).collect();
            let b_yb = self.b.iter().zip(&y_b).map(|(a, b)| a * b).sum::<f64>().max(0.0);
            let rer_sq: f64 = rer.iter().map(|m| m.fro_norm().powi(2)).sum();

            let ctx = NewtonCtx {
                solver: self,
                scalings: &scalings,
                mchol: &mchol,
                y_w: &y_w,
                y_b: &y_b,
                rer: &rer,
                b_yb,
                rer_sq,
                tau,
                kappa,
            };

            // Predictor (affine direction).
            let e_aff: Vec<CMat> = scalings
                .iter()
                .map(|sc| {
                    CMat::diag(&sc.lambda.iter().map(|&l| cr(-l * l)).collect::<Vec<_>>())
                })
                .collect();
            let aff = ctx.solve_newton(&rp, &rd, rg, -tau * kappa, &e_aff);
            if !aff.is_finite() {
                if std::env::var_os("OPSPACE_SDP_TRACE").is_some() {
                    eprintln!("  break: affine direction non-finite at iter {iter}");
                }
                break;
            }

            let alpha_aff = self.max_step(tau, kappa, &aff, &scalings).min(1.0);
            let mu_aff = {
                // <X + a dX, S + a dS> = <Lam + a D, Lam + a F> by the
                // congruence invariance of the pairing
                let mut acc = 0.0;
                for bi in 0..self.dims.len() {
                    let lam = scalings[bi].lambda_mat();
                    let xa = lam.add(&aff.d_x[bi].scale(cr(alpha_aff)));
                    let sa = lam.add(&aff.d_s[bi].scale(cr(alpha_aff)));
                    acc += xa.re_dot(&sa);
                }
                let ta = tau + alpha_aff * aff.dtau;
                let ka = kappa + alpha_aff * aff.dkappa;
                (acc + ta * ka) / (nu + 1.0)
            };
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

            // Corrector + centering, combined direction.
            let e_comb: Vec<CMat> = (0..self.dims.len())
                .map(|bi| {
                    let sc = &scalings[bi];
                    let prod = aff.d_x[bi].matmul(&aff.d_s[bi]);
                    let sym = prod.hermitian_part();
                    let mut e = sym.scale(cr(-1.0));
                    for i in 0..e.rows() {
                        e[(i, i)] += cr(sigma * mu - sc.lambda[i] * sc.lambda[i]);
                    }
                    e
                })
                .collect();
            if !sigma.is_finite() {
                if std::env::var_os("OPSPACE_SDP_TRACE").is_some() {
                    eprintln!("  break: sigma non-finite at iter {iter}");
                }
                break;
            }
            let rtk = sigma * mu - tau * kappa - aff.dtau * aff.dkappa;
            let dir = ctx.solve_newton(&rp, &rd, rg, rtk, &e_comb);
            if !dir.is_finite() {
                if std::env::var_os("OPSPACE_SDP_TRACE").is_some() {
                    eprintln!("  break: combined direction non-finite at iter {iter}");
                }
                break;
            }

            if std::env::var_os("OPSPACE_SDP_TRACE").is_some() {
                let res = self.newton_residual(&dir, &rp, &rd, rg, rtk, &scalings, &e_comb, tau, kappa);
                eprintln!(
                    "it {iter:3} mu {mu:9.2e} pinf {pinf:9.2e} dinf {dinf:9.2e} gap {relgap:9.2e} tau {tau:9.2e} kappa {kappa:9.2e} sigma {sigma:5.2e} newton_res {res:9.2e}"
                );
            }

            let mut alpha = (0.99 * self.max_step(tau, kappa, &dir, &scalings)).min(1.0);
            // the eigenvalue bound can be unreliable at extreme scalings;
            // verify the step leaves both cones factorable and back off
            // otherwise
            let mut backoffs = 0;
            while backoffs < 60 {
                let ok = (0..self.dims.len()).all(|bi| {
                    let xn = x[bi].add(&dir.dx[bi].scale(cr(alpha))).hermitian_part();
                    let sn = s[bi].add(&dir.ds[bi].scale(cr(alpha))).hermitian_part();
                    cholesky(&xn).is_ok() && cholesky(&sn).is_ok()
                }) && tau + alpha * dir.dtau > 0.0
                    && kappa + alpha * dir.dkappa > 0.0;
                if ok {
                    break;
                }
                alpha *= 0.5;
                backoffs += 1;
            }
            if backoffs >= 60 {
                if std::env::var_os("OPSPACE_SDP_TRACE").is_some() {
                    eprintln!("  break: no admissible step at iter {iter}");
                }
                break;
            }
            for bi in 0..self.dims.len() {
                x[bi] = x[bi].add(&dir.dx[bi].scale(cr(alpha))).hermitian_part();
                s[bi] = s[bi].add(&dir.ds[bi].scale(cr(alpha))).hermitian_part();
            }
            for (yi, dyi) in y.iter_mut().zip(&dir.dy) {
                *yi += alpha * dyi;
            }
            tau += alpha * dir.dtau;
            kappa += alpha * dir.dkappa;

            if !(tau.is_finite() && kappa.is_finite()) || tau <= 1e-300 {
                break;
            }

            // The homogeneous model is invariant under positive scaling;
            // renormalizing to tau + kappa = 1 prevents the overall scale of
            // the iterate from collapsing and losing precision.
            let total = tau + kappa;
            if total.is_finite() && total > 0.0 && !(0.25..=4.0).contains(&total) {
                let f = 1.0 / total;
                for bi in 0..self.dims.len() {
                    x[bi] = x[bi].scale(cr(f));
                    s[bi] = s[bi].scale(cr(f));
                }
                for yi in y.iter_mut() {
                    *yi *= f;
                }
                tau *= f;
                kappa *= f;
            }
        }

        let mut sol = match best {
            Some((_, bx, by_vec, btau)) => self.extract(&bx, &by_vec, btau, iterations + 1),
            None => self.extract(&x, &y, tau.max(1e-300), iterations + 1),
        };
        sol.status = SdpStatus::MaxIterations;
        Ok(sol)
    }

    /// Residual of the linearized homogeneous system at a computed
    /// direction; used by the trace hook to validate the reduction. The
    /// unscaled directions are reconstructed here, so this is a debugging
    /// aid rather than part of the iteration.
    #[allow(clippy::too_many_arguments)]
    fn newton_residual(
        &self,
        dir: &Direction,
        rp: &[f64],
        rd: &[CMat],
        rg: f64,
        rtk: f64,
        scalings: &[NtScaling],
        e: &[CMat],
        tau: f64,
        kappa: f64,
    ) -> f64 {
        let mut parts = [0.0f64; 5];
        let dx = &dir.dx;
        let ds = &dir.ds;
        // (1) A(dx) - dtau b = rp
        let adx = self.a_apply(dx);
        for i in 0..self.rows.len() {
            parts[0] = parts[0].max((adx[i] - dir.dtau * self.b[i] - rp[i]).abs());
        }
        // (2) dtau C - A*(dy) - ds = -rd
        let atdy = self.a_adjoint(&dir.dy);
        for bi in 0..self.dims.len() {
            let r = self.c[bi].scale(cr(dir.dtau)).sub(&atdy[bi]).sub(&ds[bi]).add(&rd[bi]);
            parts[1] = parts[1].max(r.max_abs());
        }
        // (3) <b,dy> - <C,dx> - dkappa = -rg
        let by: f64 = self.b.iter().zip(&dir.dy).map(|(a, b)| a * b).sum();
        parts[2] = (by - block_dot(&self.c, dx) - dir.dkappa + rg).abs();
        // (4) H_lambda(D + F) = E
        for bi in 0..self.dims.len() {
            let sc = &scalings[bi];
            let sum = dir.d_x[bi].add(&dir.d_s[bi]);
            let n = sc.lambda.len();
            let hl = CMat::from_fn(n, n, |i, j| {
                sum[(i, j)] * ((sc.lambda[i] + sc.lambda[j]) * 0.5)
            });
            parts[3] = parts[3].max(hl.sub(&e[bi]).max_abs());
        }
        // (5) kappa dtau + tau dkappa = rtk
        parts[4] = (kappa * dir.dtau + tau * dir.dkappa - rtk).abs();
        if std::env::var_os("OPSPACE_SDP_TRACE_PARTS").is_some() {
            eprintln!(
                "    newton parts: p={:9.2e} d={:9.2e} g={:9.2e} compl={:9.2e} tk={:9.2e}",
                parts[0], parts[1], parts[2], parts[3], parts[4]
            );
        }
        parts.iter().fold(0.0f64, |a, &b| a.max(b))
    }

    /// Largest step keeping all cones interior (may exceed 1; callers cap).
    /// Works on the scaled directions: X + a dX >= 0 iff
    /// Lam + a D >= 0 iff I + a Lam^{-1/2} D Lam^{-1/2} >= 0.
    fn max_step(&self, tau: f64, kappa: f64, dir: &Direction, scalings: &[NtScaling]) -> f64 {
        let mut alpha: f64 = f64::INFINITY;
        for (bi, sc) in scalings.iter().enumerate() {
            for dm in [&dir.d_x[bi], &dir.d_s[bi]] {
                let n = sc.lambda.len();
                let scaled = CMat::from_fn(n, n, |i, j| {
                    let wi = sc.lambda[i].max(1e-150).sqrt();
                    let wj = sc.lambda[j].max(1e-150).sqrt();
                    dm[(i, j)] / (wi * wj)
                });
                if let Ok(l) = min_eigenvalue(&scaled.hermitian_part()) {
                    if l < 0.0 {
                        alpha = alpha.min(-1.0 / l);
                    }
                }
            }
        }
        if dir.dtau < 0.0 {
            alpha = alpha.min(-tau / dir.dtau);
        }
        if dir.dkappa < 0.0 {
            alpha = alpha.min(-kappa / dir.dkappa);
        }
        alpha
    }

    fn extract(&self, x: &[CMat], y: &[f64], tau: f64, iters: usize) -> SdpSolution {
        let inv = 1.0 / tau;
        let user_blocks: Vec<CMat> =
            (0..self.n_user_blocks).map(|bi| x[bi].scale(cr(inv)).hermitian_part()).collect();
        let all_blocks: Vec<CMat> = x.iter().map(|m| m.scale(cr(inv))).collect();

        // Objective in the user's sense and scale.
        let cx = block_dot(&self.c, &all_blocks) * self.obj_scale;
        let by: f64 = self.b.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() * inv * self.obj_scale;
        let (pobj, dobj) = if self.flip < 0.0 { (-cx, -by) } else { (cx, by) };
        let pobj = pobj + self.obj_constant;
        let dobj = dobj + self.obj_constant;

        // Residuals against the original constraints.
        let mut residual = 0.0f64;
        for con in &self.problem.constraints {
            let val: f64 = con
                .expr
                .split_by_block(&self.dims)
                .iter()
                .filter(|(b, _)| *b < self.n_user_blocks)
                .map(|(b, a)| a.pair(&user_blocks[*b]))
                .sum::<f64>()
                + con.expr.constant;
            let viol = match con.op {
                ConOp::Eq => (val - con.rhs).abs(),
                ConOp::Le => (val - con.rhs).max(0.0),
                ConOp::Ge => (con.rhs - val).max(0.0),
            };
            residual = residual.max(viol);
        }

        let mut y_user = vec![0.0; self.n_user_constraints];
        for (k, &orig) in self.origins.iter().enumerate() {
            y_user[orig] = y[k] * inv * self.obj_scale * self.flip;
        }

        SdpSolution {
            status: SdpStatus::Optimal,
            blocks: user_blocks,
            y: y_user,
            primal_objective: pobj,
            dual_objective: dobj,
            gap: (pobj - dobj).abs(),
            iterations: iters,
            constraint_residual: residual,
            certificate: None,
        }
    }

    fn infeasible_solution(
        &self,
        y_scaled: Vec<f64>,
        viol: f64,
        iters: usize,
    ) -> SdpSolution {
        let mut y_user = vec![0.0; self.n_user_constraints];
        for (k, &orig) in self.origins.iter().enumerate() {
            y_user[orig] = y_scaled[k];
        }
        SdpSolution {
            status: SdpStatus::Infeasible,
            blocks: (0..self.n_user_blocks).map(|bi| CMat::zeros(self.dims[bi], self.dims[bi])).collect(),
            y: y_user.clone(),
            primal_objective: f64::NAN,
            dual_objective: f64::NAN,
            gap: f64::NAN,
            iterations: iters,
            constraint_residual: f64::NAN,
            certificate: Some(InfeasibilityCertificate { y: y_user, ray_psd_violation: viol }),
        }
    }
}

/// Row deduplication by pivoted Gram elimination. Returns the kept rows, or
/// an inconsistency certificate as (origin index, weight) pairs.
#[allow(clippy::type_complexity)]
fn dedup_rows(rows: Vec<Row>) -> Result<(Vec<Row>, Option<Vec<(usize, f64)>>)> {
    let m = rows.len();
    if m == 0 {
        return Ok((rows, None));
    }
    let mut gram = vec![0.0f64; m * m];
    for i in 0..m {
        for j in i..m {
            let v = rows[i].dot(&rows[j]);
            gram[i * m + j] = v;
            gram[j * m + i] = v;
        }
    }
    let mut kept: Vec<usize> = vec![];
    let mut lfac: Vec<Vec<f64>> = vec![]; // lower-triangular rows of chol(G_kept)
    let mut kept_rows: Vec<Row> = vec![];
    for r in 0..m {
        // c = L^{-1} G[kept, r]
        let grk: Vec<f64> = kept.iter().map(|&k| gram[k * m + r]).collect();
        let mut cvec = vec![0.0f64; kept.len()];
        for i in 0..kept.len() {
            let mut sum = grk[i];
            for k in 0..i {
                sum -= lfac[i][k] * cvec[k];
            }
            cvec[i] = sum / lfac[i][i];
        }
        let res = gram[r * m + r] - cvec.iter().map(|v| v * v).sum::<f64>();
        if res > 1e-10 * gram[r * m + r].max(1.0) {
            // independent: keep
            let mut lrow = cvec.clone();
            lrow.push(res.sqrt());
            lfac.push(lrow);
            kept.push(r);
            kept_rows.push(Row {
                terms: rows[r].terms.clone(),
                rhs: rows[r].rhs,
                origin: rows[r].origin,
            });
        } else {
            // dependent: r = sum_j lambda_j kept_j; check rhs consistency.
            // lambda = L^{-T} c
            let mut lambda = cvec.clone();
            for i in (0..kept.len()).rev() {
                let mut sum = lambda[i];
                for k in i + 1..kept.len() {
                    sum -= lfac[k][i] * lambda[k];
                }
                lambda[i] = sum / lfac[i][i];
            }
            let combo_rhs: f64 = lambda.iter().zip(&kept).map(|(l, &k)| l * rows[k].rhs).sum();
            if (rows[r].rhs - combo_rhs).abs() > 1e-8 {
                // Inconsistent linear system: Farkas certificate.
                let norm = rows[r].rhs - combo_rhs;
                let mut cert: Vec<(usize, f64)> = vec![(rows[r].origin, 1.0 / norm)];
                for (l, &k) in lambda.iter().zip(&kept) {
                    cert.push((rows[k].origin, -l / norm));
                }
                return Ok((kept_rows, Some(cert)));
            }
        }
    }
    Ok((kept_rows, None))
}

/// NT scaling data for one block.
struct NtScaling {
    w: CMat,
    r: CMat,
    rinv: CMat,
    lambda: Vec<f64>,
}

impl NtScaling {
    fn compute(x: &CMat, s: &CMat) -> Result<NtScaling> {
        let lx = chol_with_jitter(x)?;
        let ls = chol_with_jitter(s)?;
        let bmat = ls.adjoint().matmul(&lx);
        // SVD of B via the Hermitian eigendecomposition of B^* B.
        let g = bmat.adjoint().matmul(&bmat).hermitian_part();
        let (mut vals, v) = herm_eig(&g)?;
        for v in vals.iter_mut() {
            *v = v.max(1e-280);
        }
        let lambda: Vec<f64> = vals.iter().map(|&t| t.sqrt()).collect();
        let u = {
            let vs = v.clone();
            let mut bv = bmat.matmul(&vs);
            for j in 0..lambda.len() {
                for i in 0..bv.rows() {
                    let t = bv[(i, j)] / lambda[j];
                    bv[(i, j)] = t;
                }
            }
            bv
        };
        // R = Lx V Lambda^{-1/2};  R^{-1} = Lambda^{-1/2} U^* Ls^*
        let n = lambda.len();
        let mut vl = v.clone();
        for j in 0..n {
            let f = 1.0 / lambda[j].sqrt();
            for i in 0..n {
                let t = vl[(i, j)] * f;
                vl[(i, j)] = t;
            }
        }
        let r = lx.matmul(&vl);
        let mut ul = u;
        for j in 0..n {
            let f = 1.0 / lambda[j].sqrt();
            for i in 0..n {
                let t = ul[(i, j)] * f;
                ul[(i, j)] = t;
            }
        }
        let rinv = ul.adjoint().matmul(&ls.adjoint());
        let w = r.matmul(&r.adjoint()).hermitian_part();
        Ok(NtScaling { w, r, rinv, lambda })
    }

    fn lambda_mat(&self) -> CMat {
        CMat::diag(&self.lambda.iter().map(|&l| cr(l)).collect::<Vec<_>>())
    }

    /// X-side unscaling: R M R^*.
    fn unscale_x(&self, m: &CMat) -> CMat {
        self.r.matmul(m).matmul(&self.r.adjoint())
    }

    fn congruence_w(&self, a: &CMat) -> CMat {
        self.w.matmul(a).matmul(&self.w)
    }

    /// F = R^* M R (scaled dual direction).
    fn scale_s(&self, m: &CMat) -> CMat {
        self.r.adjoint().matmul(m).matmul(&self.r)
    }

    /// Solve H_lambda(G) = E, i.e. G_ij = 2 E_ij / (lambda_i + lambda_j).
    fn hl_solve(&self, e: &CMat) -> CMat {
        let n = self.lambda.len();
        CMat::from_fn(n, n, |i, j| e[(i, j)] * (2.0 / (self.lambda[i] + self.lambda[j])))
    }
}

fn chol_with_jitter(a: &CMat) -> Result<CMat> {
    let mut jitter = 0.0f64;
    let base = a.trace().re.abs().max(1e-30) / a.rows() as f64;
    for _ in 0..8 {
        let m = if jitter == 0.0 {
            a.clone()
        } else {
            let mut m = a.clone();
            for i in 0..m.rows() {
                m[(i, i)] += cr(jitter);
            }
            m
        };
        match cholesky(&m) {
            Ok(l) => return Ok(l),
            Err(_) => {
                jitter = if jitter == 0.0 { 1e-14 * base } else { jitter * 100.0 };
            }
        }
    }
    Err(OsError::Solver("cone iterate lost positive definiteness".into()))
}

/// Newton direction. The cone parts are computed in NT-scaled
/// coordinates (D = R^-1 dX R^-*, F = R^* dS R), where the
/// complementarity solve is cancellation-free; the unscaled dx is then
/// reconstructed by a single congruence, and ds is kept in its exact
/// additive form so the dual residual contracts to machine precision.
struct Direction {
    d_x: Vec<CMat>,
    d_s: Vec<CMat>,
    dx: Vec<CMat>,
    ds: Vec<CMat>,
    dy: Vec<f64>,
    dtau: f64,
    dkappa: f64,
}

impl Direction {
    fn is_finite(&self) -> bool {
        self.dtau.is_finite()
            && self.dkappa.is_finite()
            && self.dy.iter().all(|v| v.is_finite())
            && self.dx.iter().all(|m| m.data().iter().all(|z| z.re.is_finite() && z.im.is_finite()))
            && self.ds.iter().all(|m| m.data().iter().all(|z| z.re.is_finite() && z.im.is_finite()))
    }
}

struct NewtonCtx<'a> {
    solver: &'a Solver,
    scalings: &'a [NtScaling],
    mchol: &'a RealChol,
    y_w: &'a [f64],
    y_b: &'a [f64],
    rer: &'a [CMat],
    b_yb: f64,
    rer_sq: f64,
    tau: f64,
    kappa: f64,
}

impl NewtonCtx<'_> {
    /// Solve the linearized homogeneous system:
    ///   A(dx) - dtau b                    = rp
    ///   dtau C - A*(dy) - ds              = -rd
    ///   <b,dy> - <C,dx> - dkappa          = -rg
    ///   H_lambda(R^-1 dx R^-* + R^* ds R) = E
    ///   kappa dtau + tau dkappa           = rtk
    /// via two Schur-complement solves and a scalar equation for dtau.
    fn solve_newton(&self, rp: &[f64], rd: &[CMat], rg: f64, rtk: f64, e: &[CMat]) -> Direction {
        let sv = self.solver;
        let nb = sv.dims.len();
        let m = sv.rows.len();

        // G_b solves the per-block Lyapunov system; RGR_b = R G R^*.
        let gmats: Vec<CMat> = (0..nb).map(|bi| self.scalings[bi].hl_solve(&e[bi])).collect();
        let rgr: Vec<CMat> = (0..nb)
            .map(|bi| self.scalings[bi].r.matmul(&gmats[bi]).matmul(&self.scalings[bi].r.adjoint()))
            .collect();
        let wrd: Vec<CMat> = (0..nb)
            .map(|bi| self.scalings[bi].w.matmul(&rd[bi]).matmul(&self.scalings[bi].w))
            .collect();

        let a_of = |blocks: &Vec<CMat>| -> Vec<f64> {
            sv.rows
                .iter()
                .map(|r| r.terms.iter().map(|(b, a)| a.pair(&blocks[*b])).sum())
                .collect()
        };
        let a_rgr = a_of(&rgr);
        let a_wrd = a_of(&wrd);
        let rhs1: Vec<f64> = (0..m).map(|i| rp[i] - a_rgr[i] + a_wrd[i]).collect();
        let v1 = self.mchol.solve(&rhs1);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

        // Scalar equation for dtau, assembled against the bounded residual
        // E_r = C - A*(y_w) to stay cancellation-free:
        //   num = rtk - tau rg - tau b'v1 + tau y_w'rp
        //         + tau <R*E_r R, G> - tau <R*E_r R, R* rd R>
        //   den = kappa + tau b'y_b + tau ||R*E_r R||_F^2
        let mut cross = 0.0;
        for bi in 0..nb {
            cross += self.rer[bi].re_dot(&gmats[bi]);
            cross -= self.rer[bi].re_dot(&self.scalings[bi].scale_s(&rd[bi]));
        }
        let num = rtk - self.tau * rg - self.tau * dot(&sv.b, &v1)
            + self.tau * dot(self.y_w, rp)
            + self.tau * cross;
        let den = self.kappa + self.tau * self.b_yb + self.tau * self.rer_sq;
        let dtau = num / den;

        let dy: Vec<f64> = (0..m).map(|i| v1[i] + dtau * (self.y_w[i] + self.y_b[i])).collect();
        let at_dy = sv.a_adjoint(&dy);
        let mut d_s = Vec::with_capacity(nb);
        let mut d_x = Vec::with_capacity(nb);
        let mut ds = Vec::with_capacity(nb);
        let mut dx = Vec::with_capacity(nb);
        for bi in 0..nb {
            let ds_unscaled =
                rd[bi].add(&sv.c[bi].scale(cr(dtau))).sub(&at_dy[bi]).hermitian_part();
            let f = self.scalings[bi].scale_s(&ds_unscaled).hermitian_part();
            // D + F = G solves the scaled complementarity equation
            let dmat = gmats[bi].sub(&f).hermitian_part();
            dx.push(self.scalings[bi].unscale_x(&dmat).hermitian_part());
            d_x.push(dmat);
            d_s.push(f);
            ds.push(ds_unscaled);
        }
        // dkappa from the tau-kappa equation keeps the pair consistent even
        // when inner products suffer rounding.
        let dkappa = (rtk - self.kappa * dtau) / self.tau;
        Direction { d_x, d_s, dx, ds, dy, dtau, dkappa }
    }
}

/// Dense real symmetric Cholesky used for the Schur complement. The
/// matrix is Jacobi-equilibrated before factoring (its conditioning grows
/// like 1/mu^2 near convergence) and solves run two rounds of iterative
/// refinement against the unscaled matrix.
struct RealChol {
    l: Vec<f64>,
    a: Vec<f64>,
    scale: Vec<f64>,
    n: usize,
}

impl RealChol {
    fn new(a: Vec<f64>, n: usize) -> Result<RealChol> {
        if n == 0 {
            return Ok(RealChol { l: a.clone(), a, scale: vec![], n });
        }
        let scale: Vec<f64> = (0..n)
            .map(|i| {
                let d = a[i * n + i];
                if d > 1e-300 {
                    1.0 / d.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let mut scaled = vec![0.0f64; n * n];
        for i in 0..n {
            for j in 0..n {
                scaled[i * n + j] = a[i * n + j] * scale[i] * scale[j];
            }
        }
        let mut jitter = 0.0f64;
        for _attempt in 0..12 {
            let mut l = scaled.clone();
            if jitter > 0.0 {
                for i in 0..n {
                    l[i * n + i] += jitter;
                }
            }
            if Self::factor(&mut l, n) {
                return Ok(RealChol { l, a, scale, n });
            }
            jitter = if jitter == 0.0 { 1e-14 } else { jitter * 30.0 };
        }
        Err(OsError::Solver("Schur complement not positive definite".into()))
    }

    fn factor(l: &mut [f64], n: usize) -> bool {
        for i in 0..n {
            for j in 0..=i {
                let mut sum = l[i * n + j];
                for k in 0..j {
                    sum -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if sum <= 0.0 || !sum.is_finite() {
                        return false;
                    }
                    l[i * n + i] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        true
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = self.solve_raw(b);
        for _refine in 0..2 {
            let mut r = b.to_vec();
            for i in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += self.a[i * n + k] * x[k];
                }
                r[i] -= acc;
            }
            let corr = self.solve_raw(&r);
            for i in 0..n {
                x[i] += corr[i];
            }
        }
        x
    }

    fn solve_raw(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = (0..n).map(|i| b[i] * self.scale[i]).collect();
        for i in 0..n {
            let mut sum = x[i];
            for k in 0..i {
                sum -= self.l[i * n + k] * x[k];
            }
            x[i] = sum / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut sum = x[i];
            for k in i + 1..n {
                sum -= self.l[k * n + i] * x[k];
            }
            x[i] = sum / self.l[i * n + i];
        }
        for i in 0..n {
            x[i] *= self.scale[i];
        }
        x
    }
}

/// Map a Hermitian problem to its real symmetric embedding
/// A + iB -> [[A, -B], [B, A]], with coefficient matrices halved so all
/// pairings (objective and constraints) keep their values. Used to
/// cross-check the native complex path; optima agree up to solver
/// tolerance.
pub fn real_embedding(p: &SdpProblem) -> SdpProblem {
    let mut out = SdpProblem::new();
    for (name, &dim) in p.names.iter().zip(&p.dims) {
        out.add_block(&format!("{name}~re"), 2 * dim);
    }
    let embed_expr = |e: &LinExpr| -> LinExpr {
        let mut ne = LinExpr::new();
        ne.constant = e.constant;
        for (b, sparse) in e.split_by_block(&p.dims) {
            let a = sparse.to_dense();
            let d = a.rows();
            let mut emb = CMat::zeros(2 * d, 2 * d);
            for i in 0..d {
                for j in 0..d {
                    let re = cr(a[(i, j)].re * 0.5);
                    let im = cr(a[(i, j)].im * 0.5);
                    emb[(i, j)] = re;
                    emb[(d + i, d + j)] = re;
                    emb[(i, d + j)] = -im;
                    emb[(d + i, j)] = im;
                }
            }
            ne.add_herm(BlockId(b), &emb);
        }
        ne
    };
    for con in &p.constraints {
        let e = embed_expr(&con.expr);
        match con.op {
            ConOp::Eq => out.add_eq(e, con.rhs),
            ConOp::Le => out.add_le(e, con.rhs),
            ConOp::Ge => out.add_ge(e, con.rhs),
        }
    }
    out.set_objective(p.sense, embed_expr(&p.objective));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util;

    /// min t s.t. t I - A is PSD; equals lambda_max for A with lambda_max >= 0.
    fn lambda_max_problem(a: &CMat) -> SdpProblem {
        let d = a.rows();
        let mut p = SdpProblem::new();
        let t = p.add_block("t", 1);
        let slack = p.add_block("slack", d);
        for i in 0..d {
            for j in i..d {
                let mut e = CExpr::new();
                if i == j {
                    e.add_scaled(&CExpr::entry(t, 0, 0), cr(1.0));
                }
                e.add_scaled(&CExpr::entry(slack, i, j), cr(-1.0));
                p.add_ceq(&e, a[(i, j)]);
            }
        }
        let mut obj = LinExpr::new();
        obj.add_re_entry(t, 0, 0, cr(1.0));
        p.set_objective(Sense::Minimize, obj);
        p
    }

    #[test]
    fn trace_capped_by_identity() {
        // maximize Tr X s.t. X <= I_2, X >= 0  ->  2
        let mut p = SdpProblem::new();
        let x = p.add_block("X", 2);
        let s = p.add_block("S", 2);
        for i in 0..2 {
            for j in i..2 {
                let mut e = CExpr::new();
                e.add_scaled(&CExpr::entry(x, i, j), cr(1.0));
                e.add_scaled(&CExpr::entry(s, i, j), cr(1.0));
                p.add_ceq(&e, if i == j { cr(1.0) } else { C64::ZERO });
            }
        }
        let mut obj = LinExpr::new();
        obj.add_re_entry(x, 0, 0, cr(1.0));
        obj.add_re_entry(x, 1, 1, cr(1.0));
        p.set_objective(Sense::Maximize, obj);
        let sol = p.solve(&SolveOpts::default()).unwrap();
        assert!(sol.is_optimal(), "status {:?}", sol.status);
        assert!((sol.primal_objective - 2.0).abs() < 1e-6, "got {}", sol.primal_objective);
        assert!(sol.constraint_residual < 1e-7);
    }

    #[test]
    fn lambda_max_diagonal() {
        let a = CMat::diag(&[cr(3.0), cr(1.0)]);
        let sol = lambda_max_problem(&a).solve(&SolveOpts::default()).unwrap();
        assert!(sol.is_optimal());
        assert!((sol.primal_objective - 3.0).abs() < 1e-6, "got {}", sol.primal_objective);
    }

    #[test]
    fn lambda_max_complex_hermitian_matches_eig() {
        let mut rng = util::rng(17);
        let a = {
            let g = util::random_hermitian(&mut rng, 3);
            // shift to make lambda_max clearly positive
            g.add(&CMat::eye(3).scale(cr(2.0)))
        };
        let (vals, _) = herm_eig(&a).unwrap();
        let sol = lambda_max_problem(&a).solve(&SolveOpts::with_gap(1e-10)).unwrap();
        assert!(sol.is_optimal());
        assert!(
            (sol.primal_objective - vals[0]).abs() < 1e-7,
            "sdp {} vs eig {}",
            sol.primal_objective,
            vals[0]
        );
    }

    #[test]
    fn trace_norm_of_matrix_unit_via_block_sdp() {
        // min (Tr Y0 + Tr Y1)/2 s.t. [[Y0, E12],[E21, Y1]] >= 0  ->  ||E12||_1 = 1
        let mut p = SdpProblem::new();
        let z = p.add_block("Z", 4);
        let target = CMat::unit(2, 2, 0, 1);
        for i in 0..2 {
            for j in 0..2 {
                p.add_ceq(&CExpr::entry(z, i, 2 + j), target[(i, j)]);
            }
        }
        let mut obj = LinExpr::new();
        for i in 0..4 {
            obj.add_re_entry(z, i, i, cr(0.5));
        }
        p.set_objective(Sense::Minimize, obj);
        let sol = p.solve(&SolveOpts::default()).unwrap();
        assert!(sol.is_optimal());
        assert!((sol.primal_objective - 1.0).abs() < 1e-6, "got {}", sol.primal_objective);
    }

    #[test]
    fn feasibility_witness_density_matrix() {
        let mut p = SdpProblem::new();
        let x = p.add_block("X", 2);
        let mut tr = LinExpr::new();
        tr.add_re_entry(x, 0, 0, cr(1.0));
        tr.add_re_entry(x, 1, 1, cr(1.0));
        p.add_eq(tr, 1.0);
        let sol = p.feasibility(&SolveOpts::default()).unwrap();
        assert!(sol.is_optimal());
        let w = sol.block(x);
        assert!((w.trace().re - 1.0).abs() < 1e-7);
        let (ok, _) = crate::eig::psd_check(&w.hermitian_part(), 1e-8).unwrap();
        assert!(ok);
    }

    #[test]
    fn infeasible_negative_trace_with_certificate() {
        let mut p = SdpProblem::new();
        let x = p.add_block("X", 2);
        let mut tr = LinExpr::new();
        tr.add_re_entry(x, 0, 0, cr(1.0));
        tr.add_re_entry(x, 1, 1, cr(1.0));
        p.add_eq(tr, -1.0);
        let sol = p.feasibility(&SolveOpts::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
        let cert = sol.certificate.expect("certificate required");
        // Farkas: A*(y) = y * I must be negative semidefinite and <b,y> = 1.
        let by: f64 = cert.y[0] * -1.0;
        assert!(by > 0.9, "certificate should have positive <b,y>, got {by}");
        assert!(cert.ray_psd_violation <= 1e-6);
    }

    #[test]
    fn weak_duality_and_determinism() {
        let mut rng = util::rng(23);
        let a = util::random_hermitian(&mut rng, 3).add(&CMat::eye(3).scale(cr(2.0)));
        let p = lambda_max_problem(&a);
        let s1 = p.solve(&SolveOpts::with_gap(1e-10)).unwrap();
        let s2 = p.solve(&SolveOpts::with_gap(1e-10)).unwrap();
        // minimization sense: primal >= dual - 1e-9
        assert!(s1.primal_objective >= s1.dual_objective - 1e-9);
        assert_eq!(s1.primal_objective.to_bits(), s2.primal_objective.to_bits());
        assert_eq!(s1.iterations, s2.iterations);
    }

    #[test]
    fn unitary_reparameterization_invariance() {
        let mut rng = util::rng(29);
        let a = util::random_hermitian(&mut rng, 3).add(&CMat::eye(3).scale(cr(2.0)));
        let u = crate::eig::qr_unitary(&util::random_cmat(&mut rng, 3, 3));
        let b = u.matmul(&a).matmul(&u.adjoint()).hermitian_part();
        let opts = SolveOpts::with_gap(1e-10);
        let s1 = lambda_max_problem(&a).solve(&opts).unwrap();
        let s2 = lambda_max_problem(&b).solve(&opts).unwrap();
        assert!((s1.primal_objective - s2.primal_objective).abs() < 2.0 * 1e-8);
    }

    #[test]
    fn real_embedding_round_trip() {
        let mut rng = util::rng(31);
        let a = util::random_hermitian(&mut rng, 3).add(&CMat::eye(3).scale(cr(2.0)));
        let p = lambda_max_problem(&a);
        let pe = real_embedding(&p);
        let opts = SolveOpts::with_gap(1e-10);
        let s1 = p.solve(&opts).unwrap();
        let s2 = pe.solve(&opts).unwrap();
        assert!(s1.is_optimal() && s2.is_optimal());
        assert!(
            (s1.primal_objective - s2.primal_objective).abs() < 1e-9,
            "complex {} vs embedded {}",
            s1.primal_objective,
            s2.primal_objective
        );
    }

    #[test]
    fn redundant_rows_are_dropped() {
        // Same constraint twice plus its double: solvable, consistent.
        let a = CMat::diag(&[cr(2.0), cr(1.0)]);
        let mut p = lambda_max_problem(&a);
        let t = BlockId(0);
        let mut e = LinExpr::new();
        e.add_re_entry(t, 0, 0, cr(0.0)); // no-op row with zero rhs
        p.add_eq(e, 0.0);
        let sol = p.solve(&SolveOpts::default()).unwrap();
        assert!(sol.is_optimal());
        assert!((sol.primal_objective - 2.0).abs() < 1e-6);
    }

    #[test]
    fn inconsistent_linear_rows_certified() {
        let mut p = SdpProblem::new();
        let x = p.add_block("X", 2);
        let mut tr = LinExpr::new();
        tr.add_re_entry(x, 0, 0, cr(1.0));
        tr.add_re_entry(x, 1, 1, cr(1.0));
        p.add_eq(tr.clone(), 1.0);
        p.add_eq(tr, 2.0); // same functional, different rhs
        let sol = p.feasibility(&SolveOpts::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
        assert!(sol.certificate.is_some());
    }

    #[test]
    fn debug_json_shape() {
        let a = CMat::diag(&[cr(1.0), cr(0.0)]);
        let p = lambda_max_problem(&a);
        let v = p.debug_json();
        assert_eq!(v["schema"], "opspace/1");
        assert_eq!(v["blocks"].as_array().unwrap().len(), 2);
        assert!(v["constraints"].as_array().unwrap().len() >= 3);
    }
}
