//! Linearization about the base flow and its spectrum.
//!
//! For a perturbation `w` in azimuthal mode `m` the linearized steady balance
//! is `A w - λ J w = 0` with `A = 2 S` and `J = ξ₀ D1 + K_{v₀}`. Eigenvalues
//! of the pencil
//!
//! `λ J w = μ A w`
//!
//! are the eigenvalues `μ` of `λ M(λ)` with `M = A⁻¹ J`; a steady bifurcation
//! needs `μ = 1`. Adjoint vectors solve `λ Jᵀ z = μ A z` and are normalized by
//! `zᵀ A w = 1`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Schur, LU, SVD};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::baseflow::{BaseFlow, BaseProblem};
use crate::basis::{build_basis, DiscreteField, ModalBasis, Parity};
use crate::error::{Error, Result};
use crate::forms::{assemble_D1, assemble_S, assemble_trilinear, FormMatrix, STRESS_FACTOR};
use crate::quadrature::QuadratureSpec;

type CMat = DMatrix<Complex64>;
type CVec = DVector<Complex64>;

/// λ-independent operators of one azimuthal block.
#[derive(Clone, Debug)]
pub struct ModeOperators {
    pub basis: Arc<ModalBasis>,
    pub parity: Parity,
    pub s: FormMatrix,
    pub d1: FormMatrix,
}

impl ModeOperators {
    pub fn new(m: u32, parity: Parity, max_degree: u32, radial: u32, quad: &QuadratureSpec) -> Result<Self> {
        let basis = Arc::new(build_basis(m, max_degree.max(m.max(1)), radial, quad)?.block(parity));
        Self::from_basis(basis, parity, quad)
    }

    pub fn from_basis(basis: Arc<ModalBasis>, parity: Parity, quad: &QuadratureSpec) -> Result<Self> {
        Ok(ModeOperators {
            s: assemble_S(&basis, quad)?,
            d1: assemble_D1(&basis, quad)?,
            basis,
            parity,
        })
    }
}

#[derive(Clone, Debug)]
pub struct OperatorBundle {
    pub m: u32,
    pub lambda: f64,
    pub xi0: f64,
    /// `A = 2 S`
    pub a: DMatrix<f64>,
    /// `J = ξ₀ D1 + K`
    pub j: DMatrix<f64>,
    /// Components, absent for manufactured bundles.
    pub parts: Option<BundleParts>,
    pub fingerprint: String,
}

#[derive(Clone, Debug)]
pub struct BundleParts {
    pub ops: ModeOperators,
    pub k: FormMatrix,
    pub base_fingerprint: String,
}

impl OperatorBundle {
    /// Bundle from explicit matrices; `a` must be symmetric positive definite.
    pub fn from_matrices(m: u32, lambda: f64, a: DMatrix<f64>, j: DMatrix<f64>) -> Result<Self> {
        if a.shape() != j.shape() || !a.is_square() {
            return Err(Error::InvalidInput("A and J must be square and of equal size".into()));
        }
        Ok(OperatorBundle {
            m,
            lambda,
            xi0: 0.0,
            a,
            j,
            parts: None,
            fingerprint: "manufactured".into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// `λ J`
    pub fn lambda_j(&self) -> DMatrix<f64> {
        &self.j * self.lambda
    }

    /// The Hilbert Gram matrix `S = A / 2`.
    pub fn gram(&self) -> DMatrix<f64> {
        &self.a / STRESS_FACTOR
    }

    pub fn basis(&self) -> Option<&Arc<ModalBasis>> {
        self.parts.as_ref().map(|p| &p.ops.basis)
    }
}

/// Linearize about `base` in the azimuthal block `ops`.
pub fn assemble_bundle(problem: &BaseProblem, base: &BaseFlow, ops: &ModeOperators) -> Result<OperatorBundle> {
    if base.fingerprint != problem.fingerprint() {
        return Err(Error::FingerprintMismatch {
            expected: problem.fingerprint().to_string(),
            found: base.fingerprint.clone(),
        });
    }
    let v0 = DiscreteField::new(problem.basis.clone(), base.coefficients())?;
    let k = assemble_trilinear(&ops.basis, &ops.basis, &v0, &problem.quad)?;
    let j = &ops.d1.matrix * base.xi0 + &k.matrix;
    Ok(OperatorBundle {
        m: ops.basis.m,
        lambda: base.lambda,
        xi0: base.xi0,
        a: &ops.s.matrix * STRESS_FACTOR,
        j,
        fingerprint: ops.basis.fingerprint().to_string(),
        parts: Some(BundleParts {
            ops: ops.clone(),
            k,
            base_fingerprint: base.fingerprint.clone(),
        }),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenPair {
    pub mu: Complex64,
    /// Right eigenvector, `wᴴ A w = 1`.
    pub w: Vec<Complex64>,
    /// Adjoint eigenvector, `zᵀ A w = 1` when the pairing is nonzero.
    pub w_star: Vec<Complex64>,
    /// `|zᵀ A w| / (‖z‖ ‖A w‖)` before normalization; zero for a Jordan block.
    pub pairing: f64,
    /// Distance to the nearest other computed eigenvalue.
    pub gap: f64,
    /// `‖λ J w - μ A w‖ / ‖A w‖`
    pub residual: f64,
    /// `‖λ Jᵀ z - μ A z‖ / ‖A z‖`
    pub adjoint_residual: f64,
}

impl EigenPair {
    pub fn right(&self) -> CVec {
        CVec::from_column_slice(&self.w)
    }

    pub fn left(&self) -> CVec {
        CVec::from_column_slice(&self.w_star)
    }

    pub fn is_real(&self, tol: f64) -> bool {
        self.mu.im.abs() <= tol * self.mu.norm().max(1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenOptions {
    pub tol: f64,
    pub krylov_dim: usize,
    pub refine_iterations: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            tol: 1e-8,
            krylov_dim: 60,
            refine_iterations: 8,
            seed: 0x5eed,
        }
    }
}

fn to_complex(m: &DMatrix<f64>) -> CMat {
    m.map(|x| Complex64::new(x, 0.0))
}

fn bilinear(a: &CVec, b: &CVec) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// `k` eigenpairs of `λ J w = μ A w` nearest `shift`, by shift-invert
/// Arnoldi followed by two-sided Rayleigh-quotient refinement.
pub fn leading_eigs(
    bundle: &OperatorBundle,
    shift: Complex64,
    k: usize,
    opts: &EigenOptions,
) -> Result<Vec<EigenPair>> {
    if k == 0 {
        return Err(Error::InvalidInput("at least one eigenpair must be requested".into()));
    }
    let n = bundle.dim();
    let a = to_complex(&bundle.a);
    let lj = to_complex(&bundle.lambda_j());
    // A shift sitting on an eigenvalue is nudged off it; the refinement
    // below converges to the eigenvalue itself either way.
    let mut sigma = shift;
    let mut lu = LU::new(&lj - &a * sigma);
    let (lj_max, a_max) = (lj.iter().map(|c| c.norm()).fold(0.0, f64::max), bundle.a.amax());
    for _ in 0..4 {
        let scale = lj_max + sigma.norm() * a_max;
        let small = lu.u().diagonal().iter().map(|c| c.norm()).fold(f64::INFINITY, f64::min);
        if small > 1e-10 * scale {
            break;
        }
        sigma += Complex64::new(1e-6 * sigma.norm().max(1.0), 0.0);
        lu = LU::new(&lj - &a * sigma);
    }
    let p = n.min(opts.krylov_dim.max(2 * k + 10));
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v0 = CVec::from_fn(n, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), 0.0));
    v0 /= Complex64::new(v0.norm(), 0.0);
    let mut basis: Vec<CVec> = vec![v0];
    let mut h = CMat::zeros(p + 1, p);
    let mut dim = p;
    for jj in 0..p {
        let mut w = lu
            .solve(&(&a * &basis[jj]))
            .ok_or_else(|| Error::SingularSystem("shift coincides with an eigenvalue".into()))?;
        let scale = w.norm();
        for _ in 0..2 {
            for (i, q) in basis.iter().enumerate() {
                let c = q.dotc(&w);
                h[(i, jj)] += c;
                w -= q * c;
            }
        }
        let beta = w.norm();
        h[(jj + 1, jj)] = Complex64::new(beta, 0.0);
        if beta <= 1e-13 * scale.max(f64::MIN_POSITIVE) {
            dim = jj + 1;
            break;
        }
        basis.push(w / Complex64::new(beta, 0.0));
    }
    let hm = h.view((0, 0), (dim, dim)).into_owned();
    let thetas = hm
        .iter()
        .all(|c| c.is_finite())
        .then(|| {
            SCHUR_EPS
                .iter()
                .find_map(|&eps| Schur::try_new(hm.clone(), eps, 10_000).and_then(|s| s.eigenvalues()))
        })
        .flatten();
    // (Ritz value, starting vector) candidates ordered by distance to the shift
    let candidates: Vec<(Complex64, CVec)> = match thetas {
        Some(thetas) => {
            let mut order: Vec<usize> = (0..dim).filter(|&i| thetas[i].norm() > 0.0).collect();
            order.sort_by(|&x, &y| thetas[y].norm().total_cmp(&thetas[x].norm()));
            order
                .iter()
                .map(|&i| {
                    let y = small_eigvec(&hm, thetas[i]);
                    let mut x = CVec::zeros(n);
                    for (c, q) in y.iter().zip(&basis) {
                        x += q * *c;
                    }
                    (sigma + thetas[i].inv(), x)
                })
                .collect()
        }
        None => dense_candidates(bundle, &a, &lj, shift, &mut rng)?,
    };
    let ritz: Vec<Complex64> = candidates.iter().map(|c| c.0).collect();
    let mut pairs = Vec::new();
    let mut history = Vec::new();
    for (mu0, x) in candidates.into_iter().take(k) {
        let pair = refine(&a, &lj, mu0, x, opts)?;
        history.push(pair.residual);
        if !(pair.residual <= opts.tol) || !(pair.adjoint_residual <= opts.tol) {
            return Err(Error::EigenNonConvergence { history });
        }
        pairs.push(pair);
    }
    // gaps against all Ritz values of the final Krylov space
    for pair in pairs.iter_mut() {
        pair.gap = ritz
            .iter()
            .map(|r| (r - pair.mu).norm())
            .filter(|d| *d > 1e3 * opts.tol * pair.mu.norm().max(1.0))
            .fold(f64::INFINITY, f64::min);
    }
    pairs.sort_by(|x, y| (x.mu - shift).norm().total_cmp(&(y.mu - shift).norm()));
    Ok(pairs)
}

/// Deflation tolerances tried in turn; near-scalar matrices can stall the
/// QR iteration at machine precision.
const SCHUR_EPS: [f64; 3] = [f64::EPSILON, 1e-13, 1e-11];

/// Dense fallback: all eigenvalues, nearest to `shift` first, each with a
/// starting vector from one step of inverse iteration.
fn dense_candidates(
    bundle: &OperatorBundle,
    a: &CMat,
    lj: &CMat,
    shift: Complex64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(Complex64, CVec)>> {
    let n = a.nrows();
    let mut mus = dense_eigenvalues(bundle)?;
    mus.sort_by(|x, y| (x - shift).norm().total_cmp(&(y - shift).norm()));
    Ok(mus
        .into_iter()
        .map(|mu| {
            let start = CVec::from_fn(n, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), 0.0));
            let off = Complex64::new(1e-8 * mu.norm().max(1.0), 0.0);
            let x = LU::new(lj - a * (mu + off))
                .solve(&(a * &start))
                .filter(|v| v.iter().all(|c| c.is_finite()))
                .unwrap_or(start);
            (mu, x)
        })
        .collect())
}

/// Eigenvector of a small matrix for a known eigenvalue, by inverse iteration.
fn small_eigvec(h: &CMat, theta: Complex64) -> CVec {
    let n = h.nrows();
    let pert = Complex64::new(1e-10 * theta.norm().max(1e-300), 0.0);
    let lu = LU::new(h - CMat::identity(n, n) * (theta + pert));
    let mut y = CVec::from_element(n, Complex64::new(1.0, 0.0));
    for _ in 0..3 {
        match lu.solve(&y) {
            Some(z) if z.iter().all(|c| c.is_finite()) && z.norm() > 0.0 => {
                y = &z / Complex64::new(z.norm(), 0.0)
            }
            _ => break,
        }
    }
    y
}

/// Two-sided Rayleigh-quotient iteration from an approximate right vector.
fn refine(a: &CMat, lj: &CMat, mut mu: Complex64, x0: CVec, opts: &EigenOptions) -> Result<EigenPair> {
    let n = a.nrows();
    let normalize = |v: &CVec| v / Complex64::new(v.norm().max(f64::MIN_POSITIVE), 0.0);
    let mut x = normalize(&x0);
    let mut z = x.map(|c| c.conj());
    let res = |mu: Complex64, x: &CVec, z: &CVec| {
        let ax = a * x;
        let rx = (lj * x - &ax * mu).norm() / ax.norm();
        let az = a * z;
        let rz = (lj.transpose() * z - &az * mu).norm() / az.norm();
        (rx, rz)
    };
    let mut best = (res(mu, &x, &z), mu, x.clone(), z.clone());
    for _ in 0..opts.refine_iterations {
        let m = lj - a * mu;
        let (lu, lut) = (LU::new(m.clone()), LU::new(m.transpose()));
        if let Some(nx) = lu.solve(&(a * &x)).filter(|v| v.iter().all(|c| c.is_finite())) {
            x = normalize(&nx);
        }
        if let Some(nz) = lut.solve(&(a * &z)).filter(|v| v.iter().all(|c| c.is_finite())) {
            z = normalize(&nz);
        }
        let denom = bilinear(&z, &(a * &x));
        if denom.norm() > 1e-14 {
            mu = bilinear(&z, &(lj * &x)) / denom;
        } else {
            mu = x.dotc(&(lj * &x)) / x.dotc(&(a * &x));
        }
        let r = res(mu, &x, &z);
        if r.0.max(r.1) < best.0 .0.max(best.0 .1) {
            best = (r, mu, x.clone(), z.clone());
        }
        if r.0.max(r.1) < 1e-14 {
            break;
        }
    }
    let ((rx, mut rz), mu, mut x, mut z) = best;
    if rz > opts.tol {
        // adjoint-only inverse iteration at the converged eigenvalue
        let off = Complex64::new(1e-10 * mu.norm().max(1.0), 0.0);
        let lut = LU::new((lj - a * (mu + off)).transpose());
        let mut zz = CVec::from_fn(n, |i, _| Complex64::new(1.0 + (i % 7) as f64, 0.0));
        for _ in 0..3 {
            match lut.solve(&(a * &zz)).filter(|v| v.iter().all(|c| c.is_finite())) {
                Some(v) => zz = normalize(&v),
                None => break,
            }
        }
        let r = res(mu, &x, &zz).1;
        if r < rz {
            rz = r;
            z = zz;
        }
    }
    let ax = a * &x;
    let a_norm = x.dotc(&ax).re.max(f64::MIN_POSITIVE).sqrt();
    x /= Complex64::new(a_norm, 0.0);
    let ax = a * &x;
    let raw = bilinear(&z, &ax);
    let pairing = raw.norm() / (z.norm() * ax.norm());
    if pairing > 1e-12 {
        z /= raw;
    }
    debug_assert_eq!(x.len(), n);
    Ok(EigenPair {
        mu,
        w: x.as_slice().to_vec(),
        w_star: z.as_slice().to_vec(),
        pairing,
        gap: f64::INFINITY,
        residual: rx,
        adjoint_residual: rz,
    })
}

/// Full spectrum of the pencil by Cholesky reduction to a standard problem.
pub fn dense_eigenvalues(bundle: &OperatorBundle) -> Result<Vec<Complex64>> {
    let chol = Cholesky::new(bundle.a.clone())
        .ok_or_else(|| Error::SingularSystem("A is not positive definite".into()))?;
    let l = chol.l();
    let lj = bundle.lambda_j();
    let y = l
        .solve_lower_triangular(&lj)
        .ok_or_else(|| Error::SingularSystem("triangular solve failed".into()))?;
    let c = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::SingularSystem("triangular solve failed".into()))?
        .transpose();
    for eps in SCHUR_EPS {
        if let Some(schur) = Schur::try_new(c.clone(), eps, 20_000) {
            return Ok(schur.complex_eigenvalues().iter().copied().collect());
        }
    }
    Err(Error::EigenNonConvergence { history: vec![] })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimplicityDiagnostics {
    pub geometric_multiplicity: usize,
    pub gap: f64,
    pub pairing: f64,
    pub certified: bool,
    pub reason: Option<String>,
}

/// Minimum gap below which simplicity is not certified.
pub const GAP_TOL: f64 = 1e-6;

/// Geometric multiplicity from the singular values of `λJ - μA`, the gap,
/// and the unnormalized pairing `|zᵀAw|`.
pub fn certify_simplicity(bundle: &OperatorBundle, pair: &EigenPair) -> SimplicityDiagnostics {
    let a = to_complex(&bundle.a);
    let m = to_complex(&bundle.lambda_j()) - &a * pair.mu;
    let sv = SVD::new(m, false, false).singular_values;
    let smax = sv.max().max(f64::MIN_POSITIVE);
    let scale = a.norm().max(smax);
    let mult = sv.iter().filter(|s| **s <= 1e-7 * scale).count().max(1);
    let gap = if mult > 1 { 0.0 } else { pair.gap };
    let reason = if mult > 1 {
        Some(format!("geometric multiplicity {mult}"))
    } else if gap < GAP_TOL {
        Some(format!("eigenvalue gap {gap:.3e} below {GAP_TOL:e}"))
    } else if pair.pairing < 1e-8 {
        Some(format!("adjoint pairing {:.3e} indicates a Jordan block", pair.pairing))
    } else {
        None
    };
    SimplicityDiagnostics {
        geometric_multiplicity: mult,
        gap,
        pairing: pair.pairing,
        certified: reason.is_none(),
        reason,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResolventReport {
    /// `‖D(u)‖₂² = uᵀ S u`
    pub energy: f64,
    /// `⟨f, u⟩`
    pub pairing: f64,
    /// `‖f‖₋₁ = √(fᵀ S⁻¹ f)`
    pub dual_norm: f64,
}

/// Solve `(S - ρ ξ₀ D1) u = f` with the Hilbert Gram matrix `S`.
pub fn solve_resolvent(
    bundle: &OperatorBundle,
    f: &DVector<f64>,
    rho: f64,
) -> Result<(DVector<f64>, ResolventReport)> {
    let parts = bundle
        .parts
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("resolvent needs an assembled bundle".into()))?;
    if f.len() != bundle.dim() || !f.iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidInput("right-hand side must be finite and match the basis".into()));
    }
    let s = &parts.ops.s.matrix;
    let op = s - &parts.ops.d1.matrix * (rho * bundle.xi0);
    let u = LU::new(op)
        .solve(f)
        .filter(|u| u.iter().all(|x| x.is_finite()))
        .ok_or_else(|| Error::SingularSystem("resolvent operator is singular".into()))?;
    let chol: Cholesky<f64, Dyn> = Cholesky::new(s.clone())
        .ok_or_else(|| Error::SingularSystem("S is not positive definite".into()))?;
    let report = ResolventReport {
        energy: u.dot(&(s * &u)),
        pairing: f.dot(&u),
        dual_norm: f.dot(&chol.solve(f)).max(0.0).sqrt(),
    };
    Ok((u, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseflow::{solve_base, NewtonOptions};

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &b * b.transpose() + DMatrix::identity(n, n) * n as f64
    }

    fn random_bundle(n: usize, seed: u64) -> OperatorBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_spd(n, &mut rng);
        let j = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        OperatorBundle::from_matrices(1, 2.0, a, j).unwrap()
    }

    #[test]
    fn shift_invert_matches_dense_spectrum() {
        let b = random_bundle(60, 3);
        let dense = dense_eigenvalues(&b).unwrap();
        let shift = Complex64::new(0.3, 0.0);
        let pairs = leading_eigs(&b, shift, 6, &EigenOptions::default()).unwrap();
        for p in &pairs {
            let d = dense.iter().map(|e| (e - p.mu).norm()).fold(f64::INFINITY, f64::min);
            assert!(d < 1e-8, "{} off by {d}", p.mu);
            assert!(p.residual < 1e-8 && p.adjoint_residual < 1e-8);
        }
        // the returned values are the nearest to the shift
        let mut by_dist = dense.clone();
        by_dist.sort_by(|x, y| (x - shift).norm().total_cmp(&(y - shift).norm()));
        assert!(((pairs[0].mu - shift).norm() - (by_dist[0] - shift).norm()).abs() < 1e-8);
        let a = to_complex(&b.a);
        for (i, p) in pairs.iter().enumerate() {
            assert!((bilinear(&p.left(), &(&a * p.right())) - 1.0).norm() < 1e-10);
            for q in pairs.iter().skip(i + 1) {
                if (q.mu - p.mu.conj()).norm() > 1e-6 || p.is_real(1e-12) {
                    assert!(bilinear(&p.left(), &(&a * q.right())).norm() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn identity_family_has_single_eigenvalue() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_spd(12, &mut rng);
        let lambda = 0.7;
        let b = OperatorBundle::from_matrices(0, lambda, a.clone(), -a).unwrap();
        let pairs = leading_eigs(&b, Complex64::new(1.0, 0.0), 3, &EigenOptions::default()).unwrap();
        assert!((pairs[0].mu - Complex64::new(-lambda, 0.0)).norm() < 1e-12);
        let cert = certify_simplicity(&b, &pairs[0]);
        assert_eq!(cert.geometric_multiplicity, 12);
        assert!(!cert.certified);
        assert!((pairs[0].pairing - 1.0).abs() < 0.5);
    }

    #[test]
    fn jordan_block_is_detected() {
        let a = DMatrix::identity(2, 2);
        let j = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let b = OperatorBundle::from_matrices(1, 1.0, a, j).unwrap();
        let pairs = leading_eigs(&b, Complex64::new(0.5, 0.0), 1, &EigenOptions { tol: 1e-6, ..Default::default() });
        let pair = match pairs {
            Ok(p) => p[0].clone(),
            Err(e) => panic!("{e}"),
        };
        assert!(pair.pairing < 1e-6, "{}", pair.pairing);
        assert!(!certify_simplicity(&b, &pair).certified);
    }

    #[test]
    fn simple_eigenvalue_is_certified() {
        let a = DMatrix::identity(3, 3);
        let j = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 4.0]));
        let b = OperatorBundle::from_matrices(1, 1.0, a, j).unwrap();
        let pairs = leading_eigs(&b, Complex64::new(0.9, 0.0), 1, &EigenOptions::default()).unwrap();
        let c = certify_simplicity(&b, &pairs[0]);
        assert!(c.certified, "{c:?}");
        assert_eq!(c.geometric_multiplicity, 1);
        assert!((c.pairing - 1.0).abs() < 1e-12);
    }

    fn physical(lambda: f64) -> OperatorBundle {
        let quad = QuadratureSpec::default();
        let p = BaseProblem::new(3, 5, quad).unwrap();
        let base = solve_base(&p, lambda, None, &NewtonOptions::default()).unwrap();
        let ops = ModeOperators::new(1, Parity::Even, 3, 5, &quad).unwrap();
        assemble_bundle(&p, &base, &ops).unwrap()
    }

    #[test]
    fn stokes_regime_spectrum_is_small() {
        let b = physical(1e-2);
        let dense = dense_eigenvalues(&b).unwrap();
        assert!(dense.iter().all(|m| m.norm() < 0.5));
        let pairs = leading_eigs(&b, Complex64::new(1.0, 0.0), 4, &EigenOptions::default()).unwrap();
        for p in pairs {
            assert!(p.mu.norm() < 0.5);
        }
    }

    #[test]
    fn resolvent_energy_identity_and_bound() {
        let b = physical(3.0);
        let s = b.gram();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let f = DVector::from_fn(b.dim(), |_, _| rng.gen_range(-1.0..1.0));
            let (_, r) = solve_resolvent(&b, &f, 3.0).unwrap();
            assert!(r.energy.sqrt() <= r.dual_norm + 1e-10);
            assert!((r.energy - r.pairing).abs() <= 1e-10 * r.energy.max(1.0));
        }
        let u = DVector::from_fn(b.dim(), |_, _| rng.gen_range(-1.0..1.0));
        let f = &s * &u;
        let (v, _) = solve_resolvent(&b, &f, 0.0).unwrap();
        assert!((v - u).amax() < 1e-12 * 1e3);
    }

    #[test]
    fn bundle_rejects_foreign_base() {
        let quad = QuadratureSpec::default();
        let p = BaseProblem::new(3, 5, quad).unwrap();
        let mut base = solve_base(&p, 1.0, None, &NewtonOptions::default()).unwrap();
        base.fingerprint = "other".into();
        let ops = ModeOperators::new(1, Parity::Even, 3, 5, &quad).unwrap();
        assert!(matches!(assemble_bundle(&p, &base, &ops), Err(Error::FingerprintMismatch { .. })));
    }
}
