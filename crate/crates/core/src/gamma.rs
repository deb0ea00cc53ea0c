//! Witness seminorms and the unitality constant.
//!
//! For a space V with distinguished unit-norm element u, the level
//! seminorm of x in M_k(V) is the supremum of ||phi_k(x)|| over all
//! completely contractive maps phi: V -> M_n with phi(u) = I_n, over all
//! codomain sizes n. The unitality constant is the infimum of these
//! seminorms over the unit spheres of all levels; it equals 1 exactly
//! when u admits a unital complete isometry into some L(H).
//!
//! Suprema are estimated by a seesaw: for fixed unit vectors (xi, eta)
//! the objective Re<xi, phi_k(x) eta> is linear in the extension Choi
//! matrix (one SDP over the witness set), and for fixed phi the best
//! vectors are the top singular pair of phi_k(x). Every reported value is
//! a certified lower bound carried by an explicit witness. Infima over
//! spheres are heuristic (random starts plus witness-gradient descent)
//! and always return the witness element attaining them.

use num_complex::Complex64 as C64;

use crate::cbmap::{witness_with_residuals, CbBlock, SnWitness};
use crate::cmat::{cr, vec_norm, vec_normalize, CMat};
use crate::eig::{spec_norm, top_singular_pair};
use crate::error::{OsError, Result};
use crate::sdp::{SdpProblem, SdpStatus, Sense, SolveOpts};
use crate::space::{level_norm, LevelElement, OperatorSpaceSpec};
use crate::util;

/// Default truncation of the codomain-size supremum for an element of
/// M_k(V), V inside M_d: the full compression at n = d k attains the norm
/// in the unital case, and nothing in scope needs more.
pub fn default_n_max(d: usize, k: usize) -> usize {
    d * k
}

pub const SEESAW_STALL_TOL: f64 = 1e-9;
pub const SEESAW_STALL_ROUNDS: usize = 5;
pub const DEFAULT_KERNEL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateKind {
    /// The monotone sandwich closed: the value matches the level norm.
    Exact,
    /// A certified lower bound (witness checkable), possibly strict.
    LowerBound,
    /// A sphere-minimization result; upper-bound character only.
    Heuristic,
}

#[derive(Debug, Clone)]
pub struct GammaOpts {
    pub restarts: usize,
    pub seed: u64,
    pub max_rounds: usize,
    pub solve: SolveOpts,
}

impl Default for GammaOpts {
    fn default() -> Self {
        GammaOpts { restarts: 20, seed: 0, max_rounds: 40, solve: SolveOpts::default() }
    }
}

impl GammaOpts {
    pub fn with_restarts(restarts: usize, seed: u64) -> Self {
        GammaOpts { restarts, seed, ..Default::default() }
    }
}

#[derive(Debug, Clone)]
pub struct GammaEstimate {
    pub value: f64,
    pub kind: EstimateKind,
    /// Codomain size attaining the reported value.
    pub n_used: usize,
    pub witness: SnWitness,
    pub xi: Vec<C64>,
    pub eta: Vec<C64>,
    /// Best value per codomain size, running maximum (monotone).
    pub history: Vec<(usize, f64)>,
    /// The level norm of the element (gamma never exceeds it).
    pub norm_bound: f64,
}

impl GammaEstimate {
    /// |<xi, phi_k(x) eta>| recomputed from the stored witness.
    pub fn witness_value(
        &self,
        space: &OperatorSpaceSpec,
        x: &LevelElement,
    ) -> Result<f64> {
        let img = self.witness.choi.apply_level(space, x)?;
        let iv = img.matvec(&self.eta);
        Ok(crate::cmat::vec_dot(&self.xi, &iv).norm())
    }
}

/// Seesaw estimate of the witness seminorm at a fixed codomain size n.
/// The result is a certified lower bound for the n-restricted supremum.
pub fn gamma_fixed_n(
    space: &OperatorSpaceSpec,
    x: &LevelElement,
    n: usize,
    opts: &GammaOpts,
) -> Result<GammaEstimate> {
    let u = space.require_u()?;
    if n == 0 {
        return Err(OsError::Input("codomain size must be at least 1".into()));
    }
    let d = space.ambient_dim();
    let k = x.level();
    let xhat = x.realize(space)?;
    let uhat = space.realize(u);
    let norm_bound = spec_norm(&xhat);

    let mut best: Option<(f64, SnWitness, Vec<C64>, Vec<C64>)> = None;
    let mut failures = 0usize;
    let total_starts = opts.restarts.max(1);
    for restart in 0..total_starts {
        let mut rng = util::rng(opts.seed.wrapping_add(0x9e3779b9 * restart as u64));
        let (mut xi, mut eta) = if restart == 0 && n == d && space.u_is_unitary(1e-9) {
            // the conjugation witness v -> u^* v is feasible; its top
            // singular pair starts the seesaw at the level norm
            let conj = CMat::eye(k).kron(&uhat.adjoint()).matmul(&xhat);
            let (_, uu, vv) = top_singular_pair(&conj);
            (uu, vv)
        } else {
            (util::random_unit_vector(&mut rng, k * n), util::random_unit_vector(&mut rng, k * n))
        };

        let mut round_best: Option<(f64, SnWitness, Vec<C64>, Vec<C64>)> = None;
        let mut stall = 0usize;
        let mut prev = f64::NEG_INFINITY;
        let mut failed = false;
        for _round in 0..opts.max_rounds {
            let sol = match solve_gamma_step(space, &xhat, k, n, &xi, &eta, &opts.solve) {
                Ok(s) => s,
                Err(e) => {
                    if std::env::var_os("OPSPACE_GAMMA_TRACE").is_some() {
                        eprintln!("  seesaw solve failed (n={n}, restart {restart}): {e}");
                    }
                    failed = true;
                    break;
                }
            };
            let choi = sol.project_unital(&uhat);
            let witness = witness_with_residuals(space, choi, None);
            let img = witness.choi.apply(&xhat, k)?;
            let (sigma, uu, vv) = top_singular_pair(&img);
            xi = uu;
            eta = vv;
            if round_best.as_ref().is_none_or(|(b, ..)| sigma > *b) {
                round_best = Some((sigma, witness, xi.clone(), eta.clone()));
            }
            if sigma - prev < SEESAW_STALL_TOL {
                stall += 1;
                if stall >= SEESAW_STALL_ROUNDS {
                    break;
                }
            } else {
                stall = 0;
            }
            prev = prev.max(sigma);
        }
        if failed && round_best.is_none() {
            failures += 1;
            continue;
        }
        if let Some(rb) = round_best {
            if best.as_ref().is_none_or(|(b, ..)| rb.0 > *b) {
                best = Some(rb);
            }
        }
    }
    if failures == total_starts {
        return Err(OsError::Solver("all seesaw restarts failed".into()));
    }
    let (value, witness, xi, eta) =
        best.ok_or_else(|| OsError::Solver("seesaw produced no value".into()))?;
    Ok(GammaEstimate {
        value,
        kind: EstimateKind::LowerBound,
        n_used: n,
        witness,
        xi,
        eta,
        history: vec![(n, value)],
        norm_bound,
    })
}

/// One inner SDP: maximize Re<xi, phi_k(x) eta> over the witness set at
/// codomain size n, returning the optimizing extension Choi matrix.
fn solve_gamma_step(
    space: &OperatorSpaceSpec,
    xhat: &CMat,
    k: usize,
    n: usize,
    xi: &[C64],
    eta: &[C64],
    solve: &SolveOpts,
) -> Result<crate::cbmap::ChoiMatrix> {
    let d = space.ambient_dim();
    let u = space.require_u()?;
    let uhat = space.realize(u);
    let mut p = SdpProblem::new();
    let cb = CbBlock::install(&mut p, d, n, 1.0, "w");
    cb.pin_image(&mut p, &uhat, &CMat::eye(n));
    // objective: sum over level blocks (r,s) and codomain entries (kk,ll)
    let mut obj = crate::sdp::CExpr::new();
    for r in 0..k {
        for s in 0..k {
            let block = xhat.block(r * d, s * d, d, d);
            if block.max_abs() == 0.0 {
                continue;
            }
            for kk in 0..n {
                for ll in 0..n {
                    let w = xi[r * n + kk].conj() * eta[s * n + ll];
                    if w != C64::ZERO {
                        obj.add_scaled(&cb.phi_entry(&block, kk, ll), w);
                    }
                }
            }
        }
    }
    p.set_objective(Sense::Maximize, obj.re);
    let sol = p.solve(solve)?;
    // Witness sets without interior (images pinned to faces) can leave the
    // solver short of certified optimality; a near-feasible iterate is
    // still a usable witness because the reported value is recomputed from
    // it and stays a lower bound.
    let acceptable = sol.status == SdpStatus::Optimal
        || (sol.status == SdpStatus::MaxIterations && sol.constraint_residual <= 1e-6);
    if !acceptable {
        return Err(OsError::Solver(format!("witness step: {:?}", sol.status)));
    }
    Ok(cb.extract(&sol))
}

/// Witness seminorm with the codomain supremum truncated at n_max: the
/// running maximum over n = 1..n_max, stopping early once the value meets
/// the level norm (the sandwich gamma <= norm closes and the estimate is
/// exact).
pub fn gamma(
    space: &OperatorSpaceSpec,
    x: &LevelElement,
    n_max: usize,
    opts: &GammaOpts,
) -> Result<GammaEstimate> {
    if n_max == 0 {
        return Err(OsError::Input("n_max must be at least 1".into()));
    }
    let norm_bound = level_norm(space, x)?;
    let mut history: Vec<(usize, f64)> = Vec::with_capacity(n_max);
    let mut best: Option<GammaEstimate> = None;
    for n in 1..=n_max {
        let est = gamma_fixed_n(space, x, n, opts)?;
        let running = best.as_ref().map_or(est.value, |b| b.value.max(est.value));
        history.push((n, running));
        if best.as_ref().is_none_or(|b| est.value > b.value) {
            best = Some(est);
        }
        if running >= norm_bound - 1e-6 {
            break;
        }
    }
    let mut out = best.expect("n_max >= 1");
    out.norm_bound = norm_bound;
    out.history = history;
    out.kind = if out.value >= norm_bound - 1e-6 {
        EstimateKind::Exact
    } else {
        EstimateKind::LowerBound
    };
    Ok(out)
}

/// Convenience: the seminorm of the distinguished element itself (always
/// 1, since every witness maps it to an identity matrix).
pub fn gamma_of_u(space: &OperatorSpaceSpec, n_max: usize, opts: &GammaOpts) -> Result<GammaEstimate> {
    let u = space.require_u()?.to_vec();
    gamma(space, &LevelElement::scalar(u), n_max, opts)
}

// ---------------------------------------------------------------------------
// The unitality constant
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NcbShortcut {
    None,
    /// u realizes as a unitary: conjugation gives a unital complete
    /// isometry, so the constant is exactly 1.
    UnitaryConjugation,
}

#[derive(Debug, Clone)]
pub struct NcbOpts {
    pub k_max: usize,
    pub n_max: usize,
    pub sphere_restarts: usize,
    pub descent_steps: usize,
    pub gamma: GammaOpts,
}

impl Default for NcbOpts {
    fn default() -> Self {
        NcbOpts {
            k_max: 2,
            n_max: 0, // 0 = per-level default d*k
            sphere_restarts: 12,
            descent_steps: 8,
            gamma: GammaOpts::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NcbEstimate {
    pub value: f64,
    pub kind: EstimateKind,
    pub shortcut: NcbShortcut,
    /// Sphere element attaining the reported infimum.
    pub witness: LevelElement,
    pub gamma_at_witness: GammaEstimate,
}

/// Estimate of the unitality constant: exact 1 via the conjugation
/// shortcut when u realizes as a unitary, otherwise a sphere-infimum
/// heuristic carrying its witness.
pub fn ncb_estimate(space: &OperatorSpaceSpec, opts: &NcbOpts) -> Result<NcbEstimate> {
    let u = space.require_u()?.to_vec();
    if space.u_is_unitary(1e-9) {
        let gamma_u = gamma_of_u(space, 1, &GammaOpts { restarts: 2, ..opts.gamma.clone() })?;
        return Ok(NcbEstimate {
            value: 1.0,
            kind: EstimateKind::Exact,
            shortcut: NcbShortcut::UnitaryConjugation,
            witness: LevelElement::scalar(u),
            gamma_at_witness: gamma_u,
        });
    }

    let m = space.dim();
    let d = space.ambient_dim();
    let mut best: Option<(f64, LevelElement, GammaEstimate)> = None;
    for k in 1..=opts.k_max.max(1) {
        let n_max = if opts.n_max == 0 { default_n_max(d, k) } else { opts.n_max };
        let eval = |x: &LevelElement| -> Result<GammaEstimate> {
            gamma(space, x, n_max, &opts.gamma)
        };
        let mut rng = util::rng(opts.gamma.seed.wrapping_add(k as u64));
        let mut level_best: Option<(f64, LevelElement, GammaEstimate)> = None;
        for _ in 0..opts.sphere_restarts.max(1) {
            let x = random_sphere_element(space, &mut rng, k, m)?;
            let est = eval(&x)?;
            if level_best.as_ref().is_none_or(|(b, ..)| est.value < *b) {
                level_best = Some((est.value, x, est));
            }
        }
        // witness-gradient descent from the best sample
        if let Some((mut val, mut xbest, mut estbest)) = level_best.take() {
            let mut step = 0.5f64;
            for _ in 0..opts.descent_steps {
                let grad = envelope_gradient(space, &xbest, &estbest)?;
                let gnorm = vec_norm(&grad);
                if gnorm < 1e-12 {
                    break;
                }
                let mut improved = false;
                for _ in 0..3 {
                    let mut flat = xbest.flat();
                    for (c, g) in flat.iter_mut().zip(&grad) {
                        *c -= g * (step / gnorm);
                    }
                    let cand = normalized_element(space, k, m, &flat)?;
                    let est = eval(&cand)?;
                    if est.value < val - 1e-10 {
                        val = est.value;
                        xbest = cand;
                        estbest = est;
                        improved = true;
                        break;
                    }
                    step *= 0.5;
                }
                if !improved {
                    break;
                }
            }
            level_best = Some((val, xbest, estbest));
        }
        if let Some(lb) = level_best {
            if best.as_ref().is_none_or(|(b, ..)| lb.0 < *b) {
                best = Some(lb);
            }
        }
    }
    let (value, witness, gamma_at_witness) =
        best.ok_or_else(|| OsError::Solver("sphere search produced no samples".into()))?;
    Ok(NcbEstimate {
        value,
        kind: EstimateKind::Heuristic,
        shortcut: NcbShortcut::None,
        witness,
        gamma_at_witness,
    })
}

fn random_sphere_element(
    space: &OperatorSpaceSpec,
    rng: &mut rand_chacha::ChaCha8Rng,
    k: usize,
    m: usize,
) -> Result<LevelElement> {
    let flat: Vec<C64> = (0..k * k * m).map(|_| util::random_c64(rng)).collect();
    normalized_element(space, k, m, &flat)
}

fn normalized_element(
    space: &OperatorSpaceSpec,
    k: usize,
    m: usize,
    flat: &[C64],
) -> Result<LevelElement> {
    let x = LevelElement::from_flat(k, m, flat)?;
    let norm = level_norm(space, &x)?;
    if norm < 1e-12 {
        return Err(OsError::Input("degenerate sphere sample".into()));
    }
    Ok(x.scale(cr(1.0 / norm)))
}

/// Gradient (Wirtinger, descent direction for the modulus) of the witness
/// envelope c -> |<xi, phi_k(x(c)) eta>| at the current estimate.
fn envelope_gradient(
    space: &OperatorSpaceSpec,
    x: &LevelElement,
    est: &GammaEstimate,
) -> Result<Vec<C64>> {
    let k = x.level();
    let m = space.dim();
    let n = est.witness.choi.n;
    // phase of the attained value
    let img = est.witness.choi.apply_level(space, x)?;
    let gval = crate::cmat::vec_dot(&est.xi, &img.matvec(&est.eta));
    let phase = if gval.norm() > 1e-14 { gval / gval.norm() } else { cr(1.0) };
    let mut grad = vec![C64::ZERO; k * k * m];
    for r in 0..k {
        for s in 0..k {
            for t in 0..m {
                // d g / d c_{r,s,t} = <xi_r, phi(G_t) eta_s>
                let gt_img = est.witness.choi.apply1(&space.basis()[t]);
                let mut acc = C64::ZERO;
                for kk in 0..n {
                    for ll in 0..n {
                        acc += est.xi[r * n + kk].conj() * gt_img[(kk, ll)] * est.eta[s * n + ll];
                    }
                }
                grad[(r * k + s) * m + t] = (phase.conj() * acc).conj();
            }
        }
    }
    Ok(grad)
}

// ---------------------------------------------------------------------------
// Quotient by the null space of the level-1 seminorm
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SeminormEntry {
    pub level: usize,
    pub description: String,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct QuotientData {
    /// Coefficient-space directions with vanishing level-1 seminorm.
    pub kernel_basis: Vec<Vec<C64>>,
    /// Complementary directions spanning the quotient (Gram-orthonormal).
    pub quotient_basis: Vec<Vec<C64>>,
    /// Rows map coefficients to quotient coordinates and vanish on the
    /// kernel.
    pub q_map: CMat,
    /// Sampled seminorm values on the quotient at levels 1..k_max.
    pub seminorm_table: Vec<SeminormEntry>,
}

#[derive(Debug, Clone)]
pub struct QuotientOpts {
    pub k_max: usize,
    pub kernel_tol: f64,
    pub n_max: usize,
    pub search_restarts: usize,
    pub gamma: GammaOpts,
}

impl Default for QuotientOpts {
    fn default() -> Self {
        QuotientOpts {
            k_max: 2,
            kernel_tol: DEFAULT_KERNEL_TOL,
            n_max: 0,
            search_restarts: 10,
            gamma: GammaOpts { restarts: 6, ..Default::default() },
        }
    }
}

/// Detect the null space of the level-1 seminorm by deflating sphere
/// minimization, and tabulate the induced quotient seminorms.
pub fn quotient_vu(space: &OperatorSpaceSpec, opts: &QuotientOpts) -> Result<QuotientData> {
    let m = space.dim();
    let d = space.ambient_dim();
    let n_max = if opts.n_max == 0 { default_n_max(d, 1) } else { opts.n_max };
    let gram = space.gram().clone();

    // Gram-orthonormal basis of the current candidate subspace.
    let mut subspace: Vec<Vec<C64>> = gram_orthonormal_basis(&gram, m);
    let mut kernel: Vec<Vec<C64>> = vec![];

    while !subspace.is_empty() {
        // minimize the level-1 seminorm over the unit sphere of the span
        let mut rng = util::rng(opts.gamma.seed.wrapping_add(kernel.len() as u64 + 101));
        let mut best: Option<(f64, Vec<C64>)> = None;
        for _ in 0..opts.search_restarts.max(2) {
            let mut coeffs: Vec<C64> =
                (0..subspace.len()).map(|_| util::random_c64(&mut rng)).collect();
            vec_normalize(&mut coeffs);
            let v = combine(&subspace, &coeffs);
            let x = match normalized_element(space, 1, m, &v) {
                Ok(x) => x,
                Err(_) => continue,
            };
            let est = gamma(space, &x, n_max, &opts.gamma)?;
            // descend along the witness envelope; the envelope is linear
            // in the coefficients, so the Newton-style step value/|grad|
            // jumps (nearly) onto its zero set when one exists
            let mut cur = (est.value, x.flat());
            let mut est_cur = est;
            let mut damping = 1.0f64;
            for _ in 0..12 {
                if cur.0 <= 0.5 * opts.kernel_tol {
                    break;
                }
                let xe = LevelElement::from_flat(1, m, &cur.1)?;
                let grad = envelope_gradient(space, &xe, &est_cur)?;
                let gnorm = vec_norm(&grad);
                if gnorm < 1e-13 {
                    break;
                }
                let step = damping * cur.0 / gnorm;
                let mut flat = cur.1.clone();
                for (c, g) in flat.iter_mut().zip(&grad) {
                    *c -= g * (step / gnorm);
                }
                let projected = project_into(&gram, &subspace, &flat);
                let cand = match normalized_element(space, 1, m, &projected) {
                    Ok(x) => x,
                    Err(_) => break,
                };
                let est_new = gamma(space, &cand, n_max, &opts.gamma)?;
                if est_new.value < cur.0 - 1e-14 {
                    cur = (est_new.value, cand.flat());
                    est_cur = est_new;
                    damping = (damping * 1.5).min(1.0);
                } else {
                    damping *= 0.5;
                    if damping < 1e-4 {
                        break;
                    }
                }
            }
            if best.as_ref().is_none_or(|(b, _)| cur.0 < *b) {
                best = Some(cur);
            }
        }
        let Some((min_val, direction)) = best else { break };
        if min_val <= opts.kernel_tol {
            let mut dir = direction;
            vec_normalize(&mut dir);
            kernel.push(dir.clone());
            subspace = deflate(&gram, &subspace, &dir);
        } else if min_val <= 10.0 * opts.kernel_tol {
            return Err(OsError::AmbiguousKernel(format!(
                "minimal level-1 seminorm {min_val:.3e} inside the guard band \
                 [{:.1e}, {:.1e}]; refusing to decide",
                opts.kernel_tol,
                10.0 * opts.kernel_tol
            )));
        } else {
            break;
        }
    }

    let quotient_basis = subspace;
    let q_dim = quotient_basis.len();
    // Quotient coordinates: Gram pairing with the orthonormal basis.
    let q_map = CMat::from_fn(q_dim, m, |i, j| {
        let mut acc = C64::ZERO;
        for t in 0..m {
            acc += quotient_basis[i][t].conj() * gram[(t, j)];
        }
        acc
    });

    // Seminorm table: basis directions at level 1, seeded samples above.
    let mut table = vec![];
    for (i, q) in quotient_basis.iter().enumerate() {
        if let Ok(x) = normalized_element(space, 1, m, q) {
            let est = gamma(space, &x, n_max, &opts.gamma)?;
            table.push(SeminormEntry {
                level: 1,
                description: format!("quotient basis {i}"),
                value: est.value,
            });
        }
    }
    if let Some(u) = space.u_coeffs() {
        let est = gamma(space, &LevelElement::scalar(u.to_vec()), n_max, &opts.gamma)?;
        table.push(SeminormEntry { level: 1, description: "image of u".into(), value: est.value });
    }
    let mut rng = util::rng(opts.gamma.seed.wrapping_add(777));
    for k in 2..=opts.k_max {
        for sample in 0..2usize {
            if let Ok(x) = random_sphere_element(space, &mut rng, k, m) {
                let nmk = if opts.n_max == 0 { default_n_max(d, k) } else { opts.n_max };
                let est = gamma(space, &x, nmk, &opts.gamma)?;
                table.push(SeminormEntry {
                    level: k,
                    description: format!("seeded sample {sample}"),
                    value: est.value,
                });
            }
        }
    }

    Ok(QuotientData { kernel_basis: kernel, quotient_basis, q_map, seminorm_table: table })
}

fn gram_orthonormal_basis(gram: &CMat, m: usize) -> Vec<Vec<C64>> {
    let mut basis: Vec<Vec<C64>> = vec![];
    for t in 0..m {
        let mut v = vec![C64::ZERO; m];
        v[t] = cr(1.0);
        for b in &basis {
            let inner = gram_inner(gram, b, &v);
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= inner * bi;
            }
        }
        let norm = gram_inner(gram, &v, &v).re.max(0.0).sqrt();
        if norm > 1e-8 {
            for vi in v.iter_mut() {
                *vi /= norm;
            }
            basis.push(v);
        }
    }
    basis
}

fn gram_inner(gram: &CMat, a: &[C64], b: &[C64]) -> C64 {
    let m = a.len();
    let mut acc = C64::ZERO;
    for i in 0..m {
        for j in 0..m {
            acc += a[i].conj() * gram[(i, j)] * b[j];
        }
    }
    acc
}

fn combine(basis: &[Vec<C64>], coeffs: &[C64]) -> Vec<C64> {
    let m = basis[0].len();
    let mut out = vec![C64::ZERO; m];
    for (b, c) in basis.iter().zip(coeffs) {
        for (o, bi) in out.iter_mut().zip(b) {
            *o += c * bi;
        }
    }
    out
}

/// Gram-orthogonal projection of `v` onto the span of `basis`.
fn project_into(gram: &CMat, basis: &[Vec<C64>], v: &[C64]) -> Vec<C64> {
    let mut out = vec![C64::ZERO; v.len()];
    for b in basis {
        let inner = gram_inner(gram, b, v);
        for (o, bi) in out.iter_mut().zip(b) {
            *o += inner * bi;
        }
    }
    out
}

fn deflate(gram: &CMat, basis: &[Vec<C64>], dir: &[C64]) -> Vec<Vec<C64>> {
    // normalize dir in the Gram inner product, then remove its component
    let mut d = dir.to_vec();
    let dn = gram_inner(gram, &d, &d).re.max(1e-300).sqrt();
    for x in d.iter_mut() {
        *x /= dn;
    }
    let mut out: Vec<Vec<C64>> = vec![];
    for b in basis {
        let inner = gram_inner(gram, &d, b);
        let mut nb = b.clone();
        for (x, di) in nb.iter_mut().zip(&d) {
            *x -= inner * di;
        }
        let norm = gram_inner(gram, &nb, &nb).re.max(0.0).sqrt();
        if norm > 1e-8 {
            for x in nb.iter_mut() {
                *x /= norm;
            }
            // re-orthogonalize against what we already kept
            for kept in &out {
                let i2 = gram_inner(gram, kept, &nb);
                for (x, ki) in nb.iter_mut().zip(kept) {
                    *x -= i2 * ki;
                }
            }
            let n2 = gram_inner(gram, &nb, &nb).re.max(0.0).sqrt();
            if n2 > 1e-8 {
                for x in nb.iter_mut() {
                    *x /= n2;
                }
                out.push(nb);
            }
        }
    }
    out
}

/// The induced map on quotient coordinates of a witness-style complete
/// contraction fixing u, with its factorization residual.
#[derive(Debug, Clone)]
pub struct FactoredMap {
    /// Images of the quotient basis elements.
    pub targets: Vec<CMat>,
    /// max_t || psi(G_t) - psi_u(Q_u G_t) ||
    pub residual: f64,
}

pub fn factor_through_quotient(
    space: &OperatorSpaceSpec,
    quotient: &QuotientData,
    psi: &SnWitness,
) -> Result<FactoredMap> {
    // psi must vanish on the detected kernel
    for (i, kdir) in quotient.kernel_basis.iter().enumerate() {
        let img = psi.choi.apply1(&space.realize(kdir));
        let sz = spec_norm(&img);
        if sz > 1e-6 {
            return Err(OsError::Inconsistent(format!(
                "map does not vanish on kernel direction {i} (norm {sz:.3e}); \
                 kernel detection and the map disagree"
            )));
        }
    }
    let targets: Vec<CMat> = quotient
        .quotient_basis
        .iter()
        .map(|q| psi.choi.apply1(&space.realize(q)))
        .collect();
    // residual of psi = psi_u o Q_u on the original basis
    let m = space.dim();
    let mut residual = 0.0f64;
    for t in 0..m {
        let mut e = vec![C64::ZERO; m];
        e[t] = cr(1.0);
        let coords = quotient.q_map.matvec(&e);
        let mut recon = CMat::zeros(psi.choi.n, psi.choi.n);
        for (c, img) in coords.iter().zip(&targets) {
            recon.axpy_inplace(*c, img);
        }
        let direct = psi.choi.apply1(&space.basis()[t]);
        residual = residual.max(spec_norm(&direct.sub(&recon)));
    }
    Ok(FactoredMap { targets, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{full_matrix_space, min_quantization, span_identity_nilpotent};
    use crate::space::NormedSpaceSpec;

    fn fast_opts(restarts: usize) -> GammaOpts {
        GammaOpts { restarts, seed: 7, max_rounds: 25, solve: SolveOpts::default() }
    }

    #[test]
    fn gamma_at_n1_is_numerical_radius_of_nilpotent() {
        // V = span{I2, E12}, u = I2, x = E12: states give |rho_21| <= 1/2
        let v = span_identity_nilpotent();
        let x = LevelElement::scalar(vec![C64::ZERO, cr(1.0)]);
        let est = gamma_fixed_n(&v, &x, 1, &fast_opts(6)).unwrap();
        assert!((est.value - 0.5).abs() < 1e-3, "got {}", est.value);
        // witness reproduces the value
        let wv = est.witness_value(&v, &x).unwrap();
        assert!((wv - est.value).abs() < 1e-6);
    }

    #[test]
    fn gamma_at_n2_reaches_the_norm() {
        let v = span_identity_nilpotent();
        let x = LevelElement::scalar(vec![C64::ZERO, cr(1.0)]);
        let est = gamma_fixed_n(&v, &x, 2, &fast_opts(6)).unwrap();
        assert!((est.value - 1.0).abs() < 1e-3, "got {}", est.value);
    }

    #[test]
    fn gamma_of_u_is_one() {
        let v = span_identity_nilpotent();
        for n in 1..=3 {
            let opts = fast_opts(3);
            let est = gamma_fixed_n(&v, &LevelElement::scalar(vec![cr(1.0), C64::ZERO]), n, &opts)
                .unwrap();
            assert!((est.value - 1.0).abs() < 1e-9, "n={n}: {}", est.value);
        }
    }

    #[test]
    fn unital_space_gamma_closes_to_norm() {
        let v = full_matrix_space(2);
        let mut rng = util::rng(42);
        for _ in 0..3 {
            let flat: Vec<C64> = (0..4).map(|_| util::random_c64(&mut rng)).collect();
            let x = LevelElement::from_flat(1, 4, &flat).unwrap();
            let est = gamma(&v, &x, 2, &fast_opts(3)).unwrap();
            assert_eq!(est.kind, EstimateKind::Exact, "sandwich should close");
            assert!((est.value - est.norm_bound).abs() < 1e-4);
            assert!(est.value <= est.norm_bound + 1e-6);
        }
    }

    #[test]
    fn min_quantized_l_inf_is_unital() {
        let linf = NormedSpaceSpec::l_inf(2).with_u(vec![cr(1.0), cr(1.0)]).unwrap();
        let v = min_quantization(&linf).unwrap();
        let x = LevelElement::scalar(vec![cr(1.0), cr(-1.0)]);
        let est = gamma(&v, &x, 2, &fast_opts(3)).unwrap();
        assert!((est.value - 1.0).abs() < 1e-4, "got {}", est.value);
    }

    #[test]
    fn history_is_monotone() {
        let v = span_identity_nilpotent();
        let x = LevelElement::scalar(vec![cr(0.3), cr(0.9)]);
        let est = gamma(&v, &x, 3, &fast_opts(4)).unwrap();
        for w in est.history.windows(2) {
            assert!(w[1].1 >= w[0].1 - 1e-12, "history not monotone: {:?}", est.history);
        }
        assert!(est.value <= est.norm_bound + 1e-6);
    }

    #[test]
    fn ncb_shortcut_on_unitary_u() {
        let v = full_matrix_space(2);
        let est = ncb_estimate(&v, &NcbOpts::default()).unwrap();
        assert_eq!(est.kind, EstimateKind::Exact);
        assert_eq!(est.shortcut, NcbShortcut::UnitaryConjugation);
        assert!((est.value - 1.0).abs() < 1e-12);
        assert!((est.gamma_at_witness.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ncb_heuristic_on_one_dimensional_space() {
        // V = span{diag(1, 1/2)}: completely isometric to the scalars, so
        // the true constant is 1; the heuristic must come out >= 0.99.
        let basis = vec![CMat::diag(&[cr(1.0), cr(0.5)])];
        let v = OperatorSpaceSpec::new(2, basis, "span-u")
            .unwrap()
            .with_u(vec![cr(1.0)])
            .unwrap();
        let opts = NcbOpts {
            k_max: 2,
            n_max: 2,
            sphere_restarts: 4,
            descent_steps: 2,
            gamma: fast_opts(4),
        };
        let est = ncb_estimate(&v, &opts).unwrap();
        assert_eq!(est.kind, EstimateKind::Heuristic);
        assert!(est.value >= 0.99, "got {}", est.value);
        assert!(est.gamma_at_witness.value >= est.value - 1e-6);
    }

    #[test]
    fn quotient_trivial_for_unital_space() {
        let v = span_identity_nilpotent();
        let qd = quotient_vu(&v, &QuotientOpts { search_restarts: 4, ..Default::default() })
            .unwrap();
        assert!(qd.kernel_basis.is_empty(), "unital spaces have trivial kernel");
        assert_eq!(qd.quotient_basis.len(), 2);
        // gamma(Q_u u) = 1
        let u_entry = qd
            .seminorm_table
            .iter()
            .find(|e| e.description == "image of u")
            .expect("u entry present");
        assert!((u_entry.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn quotient_detects_nilpotent_kernel() {
        // V = span{E11, E12}, u = E11: gamma_1(E12) = 0 is forced by the
        // level-2 norms, so E12 spans the kernel.
        let basis = vec![CMat::unit(2, 2, 0, 0), CMat::unit(2, 2, 0, 1)];
        let v = OperatorSpaceSpec::new(2, basis, "span{E11,E12}")
            .unwrap()
            .with_u(vec![cr(1.0), C64::ZERO])
            .unwrap();
        let qd = quotient_vu(
            &v,
            &QuotientOpts {
                search_restarts: 6,
                gamma: fast_opts(5),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(qd.kernel_basis.len(), 1, "exactly one kernel direction");
        // the kernel direction is (0, 1) up to phase
        let kdir = &qd.kernel_basis[0];
        assert!(kdir[0].norm() < 1e-3, "kernel is the nilpotent direction: {kdir:?}");
        assert!((kdir[1].norm() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn factorization_through_trivial_quotient() {
        let v = span_identity_nilpotent();
        let qd = quotient_vu(&v, &QuotientOpts { search_restarts: 3, ..Default::default() })
            .unwrap();
        // identity-restriction witness
        let targets = vec![CMat::eye(2), CMat::unit(2, 2, 0, 1)];
        let crate::cbmap::SnResult::Witness(w) =
            crate::cbmap::sn_membership(&v, &targets, 2, &SolveOpts::default()).unwrap()
        else {
            panic!("feasible")
        };
        let f = factor_through_quotient(&v, &qd, &w).unwrap();
        assert!(f.residual < 1e-6, "residual {}", f.residual);
    }

    #[test]
    fn feasible_maps_annihilate_detected_kernel() {
        // on span{E11, E12} with u = E11, any witness kills E12
        let basis = vec![CMat::unit(2, 2, 0, 0), CMat::unit(2, 2, 0, 1)];
        let v = OperatorSpaceSpec::new(2, basis, "span{E11,E12}")
            .unwrap()
            .with_u(vec![cr(1.0), C64::ZERO])
            .unwrap();
        // find some witness at n = 2 by maximizing a random objective
        let x = LevelElement::scalar(vec![cr(0.4), cr(0.8)]);
        let est = gamma_fixed_n(&v, &x, 2, &fast_opts(3)).unwrap();
        let img = est.witness.choi.apply1(&CMat::unit(2, 2, 0, 1));
        assert!(spec_norm(&img) < 1e-5, "witness must kill the kernel: {}", spec_norm(&img));
    }
}
