//! Concrete operator spaces V inside M_d and their matrix levels.
//!
//! A space is specified by a linearly independent basis of d x d complex
//! matrices, optionally with a distinguished norm-one element `u` given by
//! its coefficient vector. Elements of the k-th matrix level M_k(V) are
//! stored as k x k arrays of coefficient vectors and realized on demand as
//! (kd) x (kd) matrices; all level norms are spectral norms of these
//! realizations.

use num_complex::Complex64 as C64;

use crate::cmat::{cr, CMat};
use crate::eig::{herm_eig, hpd_solve, spec_norm};
use crate::error::{OsError, Result};

/// Smallest admissible eigenvalue of the basis Gram matrix; bases below
/// this floor are rejected rather than regularized.
pub const GRAM_FLOOR: f64 = 1e-10;

const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct OperatorSpaceSpec {
    d: usize,
    basis: Vec<CMat>,
    u: Option<Vec<C64>>,
    label: String,
    gram: CMat,
}

impl OperatorSpaceSpec {
    pub fn new(d: usize, basis: Vec<CMat>, label: &str) -> Result<Self> {
        if basis.is_empty() {
            return Err(OsError::Input("operator space needs at least one basis element".into()));
        }
        for (t, g) in basis.iter().enumerate() {
            if g.rows() != d || g.cols() != d {
                return Err(OsError::Shape(format!(
                    "basis element {t} is {}x{}, ambient dimension is {d}",
                    g.rows(),
                    g.cols()
                )));
            }
        }
        let m = basis.len();
        let gram = CMat::from_fn(m, m, |s, t| basis[s].hs_dot(&basis[t])).hermitian_part();
        let (vals, _) = herm_eig(&gram)?;
        let min = vals.last().copied().unwrap_or(0.0);
        if min < GRAM_FLOOR {
            return Err(OsError::IllConditionedBasis(min, GRAM_FLOOR));
        }
        Ok(OperatorSpaceSpec { d, basis, u: None, label: label.to_string(), gram })
    }

    /// Attach the distinguished element by coefficients; its level-1 norm
    /// must be 1.
    pub fn with_u(mut self, coeffs: Vec<C64>) -> Result<Self> {
        if coeffs.len() != self.basis.len() {
            return Err(OsError::Shape(format!(
                "u has {} coefficients, basis has {}",
                coeffs.len(),
                self.basis.len()
            )));
        }
        let norm = spec_norm(&self.realize(&coeffs));
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(OsError::Contract(format!(
                "distinguished element must have norm 1, got {norm:.12}"
            )));
        }
        self.u = Some(coeffs);
        Ok(self)
    }

    pub fn ambient_dim(&self) -> usize {
        self.d
    }

    /// Linear dimension of the space.
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[CMat] {
        &self.basis
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn u_coeffs(&self) -> Option<&[C64]> {
        self.u.as_deref()
    }

    pub fn u_matrix(&self) -> Option<CMat> {
        self.u.as_ref().map(|c| self.realize(c))
    }

    pub fn require_u(&self) -> Result<&[C64]> {
        self.u.as_deref().ok_or_else(|| {
            OsError::Input(format!("space '{}' has no distinguished element", self.label))
        })
    }

    pub fn gram(&self) -> &CMat {
        &self.gram
    }

    pub fn realize(&self, coeffs: &[C64]) -> CMat {
        assert_eq!(coeffs.len(), self.basis.len(), "coefficient length mismatch");
        let mut out = CMat::zeros(self.d, self.d);
        for (c, g) in coeffs.iter().zip(&self.basis) {
            if *c != C64::ZERO {
                out.axpy_inplace(*c, g);
            }
        }
        out
    }

    /// Coefficients of the orthogonal projection of `a` onto the span,
    /// together with the Frobenius norm of the out-of-span残 residual.
    pub fn project(&self, a: &CMat) -> Result<(Vec<C64>, f64)> {
        if a.rows() != self.d || a.cols() != self.d {
            return Err(OsError::Shape("projection target has wrong ambient size".into()));
        }
        let m = self.basis.len();
        let rhs = CMat::from_fn(m, 1, |t, _| self.basis[t].hs_dot(a));
        let sol = hpd_solve(&self.gram, &rhs)?;
        let coeffs: Vec<C64> = (0..m).map(|t| sol[(t, 0)]).collect();
        let residual = a.sub(&self.realize(&coeffs)).fro_norm();
        Ok((coeffs, residual))
    }

    /// Coefficients of an element known to lie in the span.
    pub fn coeffs_of(&self, a: &CMat) -> Result<Vec<C64>> {
        let (coeffs, residual) = self.project(a)?;
        let scale = 1.0 + a.fro_norm();
        if residual > 1e-8 * scale {
            return Err(OsError::Inconsistent(format!(
                "matrix lies outside the span (residual {residual:.3e})"
            )));
        }
        Ok(coeffs)
    }

    /// The u-conjugated copy u^* V with the map data (the unitary u-hat):
    /// x -> u^* x is a complete isometry sending u to the identity.
    pub fn conjugate_embedding(&self) -> Result<(OperatorSpaceSpec, CMat)> {
        let u = self.require_u()?.to_vec();
        let uhat = self.realize(&u);
        let dev = uhat.adjoint().matmul(&uhat).sub(&CMat::eye(self.d)).max_abs();
        if dev > 1e-9 {
            return Err(OsError::NotUnitary(format!(
                "u is not unitary in this realization (||u*u - I|| = {dev:.3e})"
            )));
        }
        let ustar = uhat.adjoint();
        let basis: Vec<CMat> = self.basis.iter().map(|g| ustar.matmul(g)).collect();
        let spec = OperatorSpaceSpec::new(self.d, basis, &format!("{}~unital", self.label))?
            .with_u(u)?;
        Ok((spec, uhat))
    }

    /// True when the realized distinguished element is unitary.
    pub fn u_is_unitary(&self, tol: f64) -> bool {
        match self.u_matrix() {
            Some(uhat) => {
                uhat.adjoint().matmul(&uhat).sub(&CMat::eye(self.d)).max_abs() <= tol
            }
            None => false,
        }
    }

    /// Block-diagonal direct sum; level norms are the max of the parts.
    /// The distinguished element, when both parts carry one, is the pair
    /// (u, v) (norm max(1,1) = 1).
    pub fn direct_sum_inf(&self, other: &OperatorSpaceSpec) -> Result<OperatorSpaceSpec> {
        let d = self.d + other.d;
        let mut basis = Vec::with_capacity(self.dim() + other.dim());
        let zero_other = CMat::zeros(other.d, other.d);
        let zero_self = CMat::zeros(self.d, self.d);
        for g in &self.basis {
            basis.push(g.direct_sum(&zero_other));
        }
        for g in &other.basis {
            basis.push(zero_self.direct_sum(g));
        }
        let label = format!("{} (+inf) {}", self.label, other.label);
        let spec = OperatorSpaceSpec::new(d, basis, &label)?;
        match (&self.u, &other.u) {
            (Some(a), Some(b)) => {
                let mut u = a.clone();
                u.extend_from_slice(b);
                spec.with_u(u)
            }
            _ => Ok(spec),
        }
    }
}

/// An element of M_k(V): a k x k array of coefficient vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelElement {
    level: usize,
    m: usize,
    coeffs: Vec<Vec<Vec<C64>>>,
}

impl LevelElement {
    pub fn new(level: usize, m: usize, coeffs: Vec<Vec<Vec<C64>>>) -> Result<Self> {
        if level == 0 {
            return Err(OsError::Input("level must be at least 1".into()));
        }
        if coeffs.len() != level
            || coeffs.iter().any(|row| row.len() != level)
            || coeffs.iter().flatten().any(|c| c.len() != m)
        {
            return Err(OsError::Shape(format!(
                "level element must be a {level}x{level} array of {m}-dim coefficient vectors"
            )));
        }
        Ok(LevelElement { level, m, coeffs })
    }

    pub fn from_fn(level: usize, m: usize, mut f: impl FnMut(usize, usize, usize) -> C64) -> Self {
        let coeffs = (0..level)
            .map(|r| (0..level).map(|s| (0..m).map(|t| f(r, s, t)).collect()).collect())
            .collect();
        LevelElement { level, m, coeffs }
    }

    /// Level-1 wrapper around a plain coefficient vector.
    pub fn scalar(coeffs: Vec<C64>) -> Self {
        let m = coeffs.len();
        LevelElement { level: 1, m, coeffs: vec![vec![coeffs]] }
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn space_dim(&self) -> usize {
        self.m
    }

    pub fn coeff(&self, r: usize, s: usize) -> &[C64] {
        &self.coeffs[r][s]
    }

    pub fn coeffs(&self) -> &Vec<Vec<Vec<C64>>> {
        &self.coeffs
    }

    /// Flat view of all coefficients (row-major over (r, s, t)).
    pub fn flat(&self) -> Vec<C64> {
        self.coeffs.iter().flatten().flatten().copied().collect()
    }

    pub fn from_flat(level: usize, m: usize, flat: &[C64]) -> Result<Self> {
        if flat.len() != level * level * m {
            return Err(OsError::Shape("flat coefficient length mismatch".into()));
        }
        Ok(Self::from_fn(level, m, |r, s, t| flat[(r * level + s) * m + t]))
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self::from_fn(self.level, self.m, |r, s, t| self.coeffs[r][s][t] * factor)
    }

    /// Realize as a (kd) x (kd) matrix: sum_{r,s} E_rs (x) x_rs.
    pub fn realize(&self, space: &OperatorSpaceSpec) -> Result<CMat> {
        if self.m != space.dim() {
            return Err(OsError::Shape(format!(
                "element has {}-dim coefficients, space dimension is {}",
                self.m,
                space.dim()
            )));
        }
        let d = space.ambient_dim();
        let k = self.level;
        let mut out = CMat::zeros(k * d, k * d);
        for r in 0..k {
            for s in 0..k {
                let blockm = space.realize(&self.coeffs[r][s]);
                out.set_block(r * d, s * d, &blockm);
            }
        }
        Ok(out)
    }

    /// Adjoint element: (x*)_{rs} needs the coefficients of (x_sr)^*,
    /// which requires the space to be closed under adjoints.
    pub fn adjoint_in(&self, space: &OperatorSpaceSpec) -> Result<LevelElement> {
        let k = self.level;
        let mut coeffs = vec![vec![Vec::new(); k]; k];
        for r in 0..k {
            for s in 0..k {
                let a = space.realize(&self.coeffs[s][r]).adjoint();
                coeffs[r][s] = space.coeffs_of(&a)?;
            }
        }
        LevelElement::new(k, self.m, coeffs)
    }
}

/// Spectral norm of the realization of x in M_k(V).
pub fn level_norm(space: &OperatorSpaceSpec, x: &LevelElement) -> Result<f64> {
    Ok(spec_norm(&x.realize(space)?))
}

// ---------------------------------------------------------------------------
// Classical normed-space specifications
// ---------------------------------------------------------------------------

/// How the norm (equivalently the dual ball) of a classical space is given.
#[derive(Debug, Clone)]
pub enum NormedBody {
    /// Dual ball = absolutely convex hull of the listed functionals
    /// (complex combination coefficients supply the унимodular orbit, so a
    /// single representative per orbit suffices).
    Polytope { dim: usize, vertices: Vec<Vec<C64>> },
    /// X realized inside C(Omega) for a finite Omega: values[j][t] is the
    /// value of the t-th generator at the j-th point.
    SupOverPoints { values: Vec<Vec<C64>> },
    /// A concrete operator space used only at level 1 (spectral norm, dual
    /// ball = trace-norm ball).
    MatrixRealized(OperatorSpaceSpec),
    /// X (+1) Y; dual ball is the product of the dual balls.
    Sum1(Box<NormedBody>, Box<NormedBody>),
    /// X (+inf) Y; dual ball is the l1 sum of the dual balls.
    SumInf(Box<NormedBody>, Box<NormedBody>),
}

#[derive(Debug, Clone)]
pub struct NormedSpaceSpec {
    pub body: NormedBody,
    pub u: Option<Vec<C64>>,
    pub label: String,
}

impl NormedBody {
    pub fn dim(&self) -> usize {
        match self {
            NormedBody::Polytope { dim, .. } => *dim,
            NormedBody::SupOverPoints { values } => {
                values.first().map_or(0, |row| row.len())
            }
            NormedBody::MatrixRealized(spec) => spec.dim(),
            NormedBody::Sum1(a, b) | NormedBody::SumInf(a, b) => a.dim() + b.dim(),
        }
    }

    pub fn norm(&self, x: &[C64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(OsError::Shape("coefficient length mismatch".into()));
        }
        Ok(match self {
            NormedBody::Polytope { vertices, .. } => vertices
                .iter()
                .map(|f| pair_bilinear(f, x).norm())
                .fold(0.0, f64::max),
            NormedBody::SupOverPoints { values } => values
                .iter()
                .map(|row| pair_bilinear(row, x).norm())
                .fold(0.0, f64::max),
            NormedBody::MatrixRealized(spec) => spec_norm(&spec.realize(x)),
            NormedBody::Sum1(a, b) => {
                let (xa, xb) = x.split_at(a.dim());
                a.norm(xa)? + b.norm(xb)?
            }
            NormedBody::SumInf(a, b) => {
                let (xa, xb) = x.split_at(a.dim());
                a.norm(xa)?.max(b.norm(xb)?)
            }
        })
    }
}

/// f(x) = sum_t f_t x_t (functionals are stored as covectors; no
/// conjugation).
pub fn pair_bilinear(f: &[C64], x: &[C64]) -> C64 {
    f.iter().zip(x).map(|(a, b)| a * b).sum()
}

impl NormedSpaceSpec {
    pub fn new(body: NormedBody, label: &str) -> Self {
        NormedSpaceSpec { body, u: None, label: label.to_string() }
    }

    pub fn with_u(mut self, u: Vec<C64>) -> Result<Self> {
        let norm = self.body.norm(&u)?;
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(OsError::Contract(format!(
                "distinguished element must have norm 1, got {norm:.12}"
            )));
        }
        self.u = Some(u);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.body.dim()
    }

    pub fn norm(&self, x: &[C64]) -> Result<f64> {
        self.body.norm(x)
    }

    pub fn require_u(&self) -> Result<&[C64]> {
        self.u.as_deref().ok_or_else(|| {
            OsError::Input(format!("space '{}' has no distinguished element", self.label))
        })
    }

    /// l-infinity^n as a sup-over-points spec on n evaluation points.
    pub fn l_inf(n: usize) -> NormedSpaceSpec {
        let values = (0..n)
            .map(|j| (0..n).map(|t| if t == j { cr(1.0) } else { C64::ZERO }).collect())
            .collect();
        NormedSpaceSpec::new(NormedBody::SupOverPoints { values }, &format!("l_inf^{n}"))
    }

    /// The scalars as a one-point sup spec.
    pub fn scalars() -> NormedSpaceSpec {
        NormedSpaceSpec::new(
            NormedBody::SupOverPoints { values: vec![vec![cr(1.0)]] },
            "C",
        )
    }

    /// X (+1) Y with the distinguished element (u_X, 0) when X carries u.
    pub fn sum1(x: &NormedSpaceSpec, y: &NormedSpaceSpec) -> Result<NormedSpaceSpec> {
        let label = format!("{} (+1) {}", x.label, y.label);
        let spec = NormedSpaceSpec::new(
            NormedBody::Sum1(Box::new(x.body.clone()), Box::new(y.body.clone())),
            &label,
        );
        match &x.u {
            Some(u) => {
                let mut combined = u.clone();
                combined.extend(std::iter::repeat_n(C64::ZERO, y.dim()));
                spec.with_u(combined)
            }
            None => Ok(spec),
        }
    }

    pub fn sum_inf(x: &NormedSpaceSpec, y: &NormedSpaceSpec) -> NormedSpaceSpec {
        let label = format!("{} (+inf) {}", x.label, y.label);
        NormedSpaceSpec::new(
            NormedBody::SumInf(Box::new(x.body.clone()), Box::new(y.body.clone())),
            &label,
        )
    }
}

/// Minimal quantization of a sup-over-points spec: generators embed as
/// diagonal matrices of their point values, so every level-k norm is the
/// max over points of the M_k norm of the value matrix.
pub fn min_quantization(x: &NormedSpaceSpec) -> Result<OperatorSpaceSpec> {
    let NormedBody::SupOverPoints { values } = &x.body else {
        return Err(OsError::Input(
            "min quantization needs a sup-over-points specification".into(),
        ));
    };
    let n = values.len();
    if n == 0 {
        return Err(OsError::Input("empty point set".into()));
    }
    let m = values[0].len();
    let basis: Vec<CMat> = (0..m)
        .map(|t| CMat::diag(&values.iter().map(|row| row[t]).collect::<Vec<_>>()))
        .collect();
    let spec = OperatorSpaceSpec::new(n, basis, &format!("min {}", x.label))?;
    match &x.u {
        Some(u) => spec.with_u(u.clone()),
        None => Ok(spec),
    }
}

// ---------------------------------------------------------------------------
// Stock spaces used across the test and acceptance suites
// ---------------------------------------------------------------------------

/// Full matrix algebra M_d with basis {E_ij} and u = I.
pub fn full_matrix_space(d: usize) -> OperatorSpaceSpec {
    let basis: Vec<CMat> =
        (0..d * d).map(|t| CMat::unit(d, d, t / d, t % d)).collect();
    let mut u = vec![C64::ZERO; d * d];
    for i in 0..d {
        u[i * d + i] = cr(1.0);
    }
    OperatorSpaceSpec::new(d, basis, &format!("M{d}"))
        .and_then(|s| s.with_u(u))
        .expect("full matrix space is well-formed")
}

/// span{I_2, E_12} with u = I_2.
pub fn span_identity_nilpotent() -> OperatorSpaceSpec {
    let basis = vec![CMat::eye(2), CMat::unit(2, 2, 0, 1)];
    OperatorSpaceSpec::new(2, basis, "span{I2,E12}")
        .and_then(|s| s.with_u(vec![cr(1.0), C64::ZERO]))
        .expect("well-formed")
}

/// Diagonal matrices in M_n with u = I_n (the commutative C*-algebra).
pub fn diagonal_space(n: usize) -> OperatorSpaceSpec {
    let basis: Vec<CMat> = (0..n)
        .map(|i| {
            let mut mtx = CMat::zeros(n, n);
            mtx[(i, i)] = cr(1.0);
            mtx
        })
        .collect();
    OperatorSpaceSpec::new(n, basis, &format!("diag{n}"))
        .and_then(|s| s.with_u(vec![cr(1.0); n]))
        .expect("well-formed")
}
