//! Critical parameter, simplicity, transversality and symmetry breaking.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Mutex;

use crate::baseflow::{BaseFlow, BaseProblem, Branch, NewtonOptions};
use crate::basis::{DiscreteField, Rotlet, VectorField};
use crate::error::{Error, Result};
use crate::forms::{advective_pairing, convective_pairing};
use crate::spectrum::{
    assemble_bundle, certify_simplicity, leading_eigs, EigenOptions, EigenPair, ModeOperators,
    OperatorBundle, SimplicityDiagnostics,
};

/// A one-parameter family of operator bundles `λ ↦ (A, J(λ))`.
pub trait OperatorFamily {
    fn bundle(&self, lambda: f64) -> Result<OperatorBundle>;

    fn label(&self) -> String;

    /// Base-flow context, for families built from the flow problem.
    fn physical(&self) -> Option<&PhysicalFamily> {
        None
    }
}

/// Closed-form family `J(λ) = ±(λ/λ*) A Λ`, `Λ = diag(1, 1-δ, 1-2δ, …)`.
///
/// The pencil eigenvalues are `±(λ²/λ*)(1 - iδ)`. With `δ = 0` every
/// eigenvalue coincides.
#[derive(Clone, Debug)]
pub struct ManufacturedFamily {
    pub a: DMatrix<f64>,
    pub lambda_star: f64,
    pub sign: f64,
    pub spread: f64,
}

impl ManufacturedFamily {
    /// `μ(λ) = λ²/λ*`, crossing 1 at `λ = √λ*`.
    pub fn crossing(a: DMatrix<f64>, lambda_star: f64) -> Self {
        ManufacturedFamily {
            a,
            lambda_star,
            sign: 1.0,
            spread: 0.0,
        }
    }

    /// `μ(λ) = -λ²/λ*`, never reaching 1.
    pub fn receding(a: DMatrix<f64>, lambda_star: f64) -> Self {
        ManufacturedFamily {
            sign: -1.0,
            ..Self::crossing(a, lambda_star)
        }
    }

    pub fn with_spread(self, spread: f64) -> Self {
        ManufacturedFamily { spread, ..self }
    }
}

impl OperatorFamily for ManufacturedFamily {
    fn bundle(&self, lambda: f64) -> Result<OperatorBundle> {
        let n = self.a.nrows();
        let diag = DVector::from_fn(n, |i, _| 1.0 - self.spread * i as f64 / n as f64);
        let j = &self.a * DMatrix::from_diagonal(&diag) * (self.sign * lambda / self.lambda_star);
        OperatorBundle::from_matrices(1, lambda, self.a.clone(), j)
    }

    fn label(&self) -> String {
        format!(
            "manufactured(lambda*={}, sign={}, spread={})",
            self.lambda_star, self.sign, self.spread
        )
    }
}

/// Linearization about the computed base branch in one azimuthal block.
pub struct PhysicalFamily {
    pub problem: BaseProblem,
    pub ops: ModeOperators,
    pub newton: NewtonOptions,
    /// Largest λ jump attempted in one Newton solve when reaching a new λ.
    pub max_step: f64,
    cache: Mutex<Vec<BaseFlow>>,
}

impl PhysicalFamily {
    pub fn new(problem: BaseProblem, ops: ModeOperators, newton: NewtonOptions) -> Self {
        PhysicalFamily {
            problem,
            ops,
            newton,
            max_step: 10.0,
            cache: Mutex::new(Vec::new()),
        }
    }

    /// Seed the base-flow cache from a stored branch.
    pub fn with_branch(self, branch: &Branch) -> Result<Self> {
        if branch.fingerprint != self.problem.fingerprint() {
            return Err(Error::FingerprintMismatch {
                expected: self.problem.fingerprint().to_string(),
                found: branch.fingerprint.clone(),
            });
        }
        self.cache.lock().unwrap().extend(branch.points.iter().cloned());
        Ok(self)
    }

    /// Base flow at `lambda`, continued from the nearest cached point.
    pub fn base_at(&self, lambda: f64) -> Result<BaseFlow> {
        let nearest = {
            let cache = self.cache.lock().unwrap();
            if let Some(b) = cache.iter().find(|b| b.lambda == lambda) {
                return Ok(b.clone());
            }
            cache
                .iter()
                .min_by(|a, b| (a.lambda - lambda).abs().total_cmp(&(b.lambda - lambda).abs()))
                .cloned()
        };
        let mut current = match nearest {
            Some(b) => b,
            None => crate::baseflow::solve_base(&self.problem, 0.0, None, &self.newton)?,
        };
        while current.lambda != lambda {
            let gap = lambda - current.lambda;
            let next = if gap.abs() <= self.max_step {
                lambda
            } else {
                current.lambda + self.max_step * gap.signum()
            };
            current = crate::baseflow::solve_base(&self.problem, next, Some(&current), &self.newton)?;
            self.cache.lock().unwrap().push(current.clone());
        }
        Ok(current)
    }
}

impl OperatorFamily for PhysicalFamily {
    fn bundle(&self, lambda: f64) -> Result<OperatorBundle> {
        let base = self.base_at(lambda)?;
        assemble_bundle(&self.problem, &base, &self.ops)
    }

    fn label(&self) -> String {
        format!(
            "physical(m={}, {:?}, L={}, N={})",
            self.ops.basis.m, self.ops.parity, self.ops.basis.max_degree, self.ops.basis.radial
        )
    }

    fn physical(&self) -> Option<&PhysicalFamily> {
        Some(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    pub shift: f64,
    pub count: usize,
    pub overlap_threshold: f64,
    /// Relative bound on `|Im μ|` for an eigenvalue to count as real.
    pub real_tol: f64,
    /// Relative root tolerance in λ.
    pub root_tol: f64,
    pub eig: EigenOptions,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            shift: 1.0,
            count: 6,
            overlap_threshold: 0.9,
            real_tol: 1e-8,
            root_tol: ROOT_TOL,
            eig: EigenOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuPoint {
    pub lambda: f64,
    pub mu: Complex64,
    pub gap: f64,
    pub residual: f64,
    /// `|w_prevᴴ A w|` against the previous tracked eigenvector.
    pub overlap: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MuScan {
    pub points: Vec<MuPoint>,
    /// Indices where eigenvector overlap fell below the threshold.
    pub breaks: Vec<usize>,
}

impl MuScan {
    pub fn extrema(&self) -> Option<(f64, f64)> {
        let re = self.points.iter().map(|p| p.mu.re);
        let lo = re.clone().fold(f64::INFINITY, f64::min);
        let hi = re.fold(f64::NEG_INFINITY, f64::max);
        (!self.points.is_empty()).then_some((lo, hi))
    }
}

fn a_overlap(a: &DMatrix<f64>, x: &[Complex64], y: &[Complex64]) -> f64 {
    let ac = a.map(|v| Complex64::new(v, 0.0));
    let xv = DVector::from_column_slice(x);
    let yv = DVector::from_column_slice(y);
    let nx = xv.dotc(&(&ac * &xv)).re.sqrt();
    let ny = yv.dotc(&(&ac * &yv)).re.sqrt();
    xv.dotc(&(&ac * &yv)).norm() / (nx * ny)
}

/// Pick the tracked pair: largest overlap with `prev`, or else the real
/// eigenvalue with the largest real part (any eigenvalue if none is real).
fn select(pairs: &[EigenPair], prev: Option<&[Complex64]>, a: &DMatrix<f64>, real_tol: f64) -> (usize, Option<f64>) {
    if let Some(p) = prev {
        let (i, o) = pairs
            .iter()
            .enumerate()
            .map(|(i, q)| (i, a_overlap(a, p, &q.w)))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        return (i, Some(o));
    }
    let real: Vec<usize> = (0..pairs.len()).filter(|&i| pairs[i].is_real(real_tol)).collect();
    let pool = if real.is_empty() { (0..pairs.len()).collect() } else { real };
    let i = pool
        .into_iter()
        .max_by(|&x, &y| pairs[x].mu.re.total_cmp(&pairs[y].mu.re))
        .unwrap();
    (i, None)
}

fn eigs(family: &dyn OperatorFamily, lambda: f64, shift: Complex64, opts: &ScanOptions) -> Result<(OperatorBundle, Vec<EigenPair>)> {
    let bundle = family.bundle(lambda)?;
    let count = opts.count.min(bundle.dim());
    let pairs = leading_eigs(&bundle, shift, count, &opts.eig)?;
    Ok((bundle, pairs))
}

/// Eigenpairs at `lambda` with the one continuing `prev` selected; the
/// number of requested pairs grows until the overlap clears the threshold
/// or the whole spectrum has been searched.
fn tracked(
    family: &dyn OperatorFamily,
    lambda: f64,
    shift: Complex64,
    prev: Option<&[Complex64]>,
    opts: &ScanOptions,
) -> Result<(OperatorBundle, EigenPair, Option<f64>)> {
    let bundle = family.bundle(lambda)?;
    let mut count = opts.count.min(bundle.dim());
    loop {
        let pairs = leading_eigs(&bundle, shift, count, &opts.eig)?;
        let (i, overlap) = select(&pairs, prev, &bundle.a, opts.real_tol);
        if overlap.map_or(true, |o| o >= opts.overlap_threshold) || count >= bundle.dim() {
            let pair = pairs[i].clone();
            return Ok((bundle, pair, overlap));
        }
        count = (count * 4).min(bundle.dim());
    }
}

/// Linear extrapolation of the tracked eigenvalue to `lambda`.
fn predict_mu(points: &[MuPoint], lambda: f64) -> Option<Complex64> {
    match points {
        [] => None,
        [p] => Some(p.mu),
        [.., a, b] => Some(b.mu + (b.mu - a.mu) * ((lambda - b.lambda) / (b.lambda - a.lambda))),
    }
}

/// Track one eigenvalue along `lambdas` by eigenvector overlap.
pub fn scan_mu(family: &dyn OperatorFamily, lambdas: &[f64], opts: &ScanOptions) -> Result<MuScan> {
    let mut scan = MuScan::default();
    let mut prev: Option<Vec<Complex64>> = None;
    for &lambda in lambdas {
        let shift = predict_mu(&scan.points, lambda).unwrap_or(Complex64::new(opts.shift, 0.0));
        let (_, p, overlap) = tracked(family, lambda, shift, prev.as_deref(), opts)?;
        if overlap.is_some_and(|o| o < opts.overlap_threshold) {
            scan.breaks.push(scan.points.len());
        }
        scan.points.push(MuPoint {
            lambda,
            mu: p.mu,
            gap: p.gap,
            residual: p.residual,
            overlap,
        });
        prev = Some(p.w.clone());
    }
    Ok(scan)
}

#[derive(Clone, Debug)]
pub struct CriticalPoint {
    pub lambda0: f64,
    pub pair: EigenPair,
    pub bundle: OperatorBundle,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub enum CriticalOutcome {
    Crossing(Box<CriticalPoint>),
    NoCrossing { mu_min: f64, mu_max: f64 },
}

/// Relative root tolerance in λ.
pub const ROOT_TOL: f64 = 1e-8;

/// Locate `μ(λ₀) = 1` inside `bracket`: a sampled scan finds a sign change of
/// `Re μ - 1`, then secant steps (falling back to false position) refine it.
pub fn find_critical(
    family: &dyn OperatorFamily,
    bracket: (f64, f64),
    samples: usize,
    opts: &ScanOptions,
) -> Result<(MuScan, CriticalOutcome)> {
    let (lo, hi) = bracket;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::InvalidInput(format!("bracket must satisfy 0 < lo < hi, got {bracket:?}")));
    }
    let n = samples.max(2);
    let lambdas: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let scan = scan_mu(family, &lambdas, opts)?;
    let change = scan
        .points
        .windows(2)
        .position(|w| (w[0].mu.re - 1.0) * (w[1].mu.re - 1.0) <= 0.0);
    let Some(k) = change else {
        let (mu_min, mu_max) = scan.extrema().unwrap_or((f64::NAN, f64::NAN));
        return Ok((scan, CriticalOutcome::NoCrossing { mu_min, mu_max }));
    };
    let shift = Complex64::new(opts.shift, 0.0);
    let (mut a, mut b) = (scan.points[k].clone(), scan.points[k + 1].clone());
    let (_, pa) = eigs(family, a.lambda, a.mu, opts)?;
    let (ia, _) = select(&pa, None, &family.bundle(a.lambda)?.a, opts.real_tol);
    let mut track = pa[ia].w.clone();
    let mut fa = a.mu.re - 1.0;
    let mut fb = b.mu.re - 1.0;
    let (mut x0, mut f0) = (a.lambda, fa);
    let (mut x1, mut f1) = (b.lambda, fb);
    let mut side = 0i8;
    for it in 1..=80 {
        let secant = x1 - f1 * (x1 - x0) / (f1 - f0);
        let (l, r) = (a.lambda.min(b.lambda), a.lambda.max(b.lambda));
        let mut x = if secant.is_finite() && secant > l && secant < r {
            secant
        } else {
            let (wa, wb) = match side {
                1 => (0.5, 1.0),
                -1 => (1.0, 0.5),
                _ => (1.0, 1.0),
            };
            (a.lambda * fb * wb - b.lambda * fa * wa) / (fb * wb - fa * wa)
        };
        if !(x > l && x < r) {
            x = 0.5 * (l + r);
        }
        let guess = predict_mu(&[a.clone(), b.clone()], x).unwrap_or(shift);
        let (bundle, pair, _) = tracked(family, x, guess, Some(&track), opts)?;
        let fx = pair.mu.re - 1.0;
        track = pair.w.clone();
        let done = (x - x1).abs() <= opts.root_tol * x || fx == 0.0 || (r - l) <= opts.root_tol * x;
        if done {
            return Ok((
                scan,
                CriticalOutcome::Crossing(Box::new(CriticalPoint {
                    lambda0: x,
                    pair,
                    bundle,
                    iterations: it,
                })),
            ));
        }
        let point = MuPoint {
            lambda: x,
            mu: pair.mu,
            gap: pair.gap,
            residual: pair.residual,
            overlap: None,
        };
        if fa * fx < 0.0 {
            b = point;
            fb = fx;
            side = 1;
        } else {
            a = point;
            fa = fx;
            side = -1;
        }
        x0 = x1;
        f0 = f1;
        x1 = x;
        f1 = fx;
    }
    Err(Error::EigenNonConvergence {
        history: vec![fa, fb],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transversality {
    pub delta: f64,
    /// Central difference of the tracked eigenvalue.
    pub mu_prime_fd: f64,
    /// `zᵀ (J + λ₀ J′) w / zᵀ A w`, the first-order perturbation formula.
    pub mu_prime_formula: f64,
    /// The same pairing with the opposite overall sign.
    pub mu_prime_opposite_sign: f64,
    pub relative_disagreement: f64,
    pub flagged: bool,
}

/// Default finite-difference step `max(1e-4, 1e-3 λ)`.
pub fn default_delta(lambda: f64) -> f64 {
    (1e-3 * lambda).max(1e-4)
}

pub fn transversality(
    family: &dyn OperatorFamily,
    point: &CriticalPoint,
    delta: Option<f64>,
    opts: &ScanOptions,
) -> Result<Transversality> {
    let l0 = point.lambda0;
    let h = delta.unwrap_or_else(|| default_delta(l0));
    let mut mus = [0.0; 2];
    let mut js = Vec::new();
    for (k, s) in [1.0, -1.0].iter().enumerate() {
        let (bundle, pair, _) = tracked(family, l0 + s * h, point.pair.mu, Some(&point.pair.w), opts)?;
        mus[k] = pair.mu.re;
        js.push(bundle.j);
    }
    let fd = (mus[0] - mus[1]) / (2.0 * h);
    let jprime = (&js[0] - &js[1]) / (2.0 * h);
    let op = (&point.bundle.j + jprime * l0).map(|v| Complex64::new(v, 0.0));
    let a = point.bundle.a.map(|v| Complex64::new(v, 0.0));
    let w = point.pair.right();
    let z = point.pair.left();
    let num: Complex64 = z.iter().zip((&op * &w).iter()).map(|(x, y)| x * y).sum();
    let den: Complex64 = z.iter().zip((&a * &w).iter()).map(|(x, y)| x * y).sum();
    let formula = (num / den).re;
    let rel = (fd - formula).abs() / fd.abs().max(formula.abs()).max(f64::MIN_POSITIVE);
    Ok(Transversality {
        delta: h,
        mu_prime_fd: fd,
        mu_prime_formula: formula,
        mu_prime_opposite_sign: -formula,
        relative_disagreement: rel,
        flagged: rel > 1e-2,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryBreaking {
    /// `ξ₀ (∂₁w, H) + ⟨K_{v₀} w, H⟩` evaluated by quadrature against the closed-form rotlet.
    pub functional: f64,
    /// `ω_w · e₃` read from the eigenvector's rotational lifting coefficient.
    pub omega_e3: f64,
    /// `-(8π/λ₀) ω_w·e₃`
    pub predicted_negative: f64,
    /// `(8π/λ₀) ω_w·e₃`
    pub predicted_positive: f64,
    /// `|functional - predicted_negative| / max(|functional|, |predicted_negative|)`
    pub defect_negative: f64,
    /// Same against `predicted_positive`.
    pub defect_positive: f64,
    /// Change of the functional when the quadrature is refined.
    pub refinement_change: f64,
    pub flagged: bool,
}

/// Real representative of an eigenvector of a real eigenvalue.
pub fn real_eigenvector(pair: &EigenPair) -> DVector<f64> {
    let (k, _) = pair
        .w
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.norm().total_cmp(&y.1.norm()))
        .unwrap();
    let phase = pair.w[k].conj() / pair.w[k].norm();
    DVector::from_iterator(pair.w.len(), pair.w.iter().map(|c| (c * phase).re))
}

/// `ξ₀ (∂₁w, H) + c(w, v₀, H) + c(v₀, w, H) + ξ_w (∂₁v₀, H)` on `grid`.
pub fn symmetry_functional(
    w: &DiscreteField,
    v0: &dyn VectorField,
    xi0: f64,
    grid: &crate::quadrature::VolumeGrid,
) -> f64 {
    let h = Rotlet::E3;
    xi0 * advective_pairing(w, &h, grid) + convective_pairing(w, w.rigid().xi, v0, &h, grid)
}

pub fn symmetry_breaking(family: &PhysicalFamily, point: &CriticalPoint) -> Result<SymmetryBreaking> {
    let basis = family.ops.basis.clone();
    if crate::forms::rotation_index(&basis, 2).is_none() {
        return Err(Error::MissingLifting("e3 rotational"));
    }
    let base = family.base_at(point.lambda0)?;
    let v0 = family.problem.field(base.coefficients())?;
    let w = DiscreteField::new(basis.clone(), real_eigenvector(&point.pair))?;
    let quad = &family.problem.quad;
    let l = basis.max_degree.max(family.problem.basis.max_degree);
    let n = basis.radial.max(family.problem.basis.radial);
    let grid = quad.volume_grid(l, n, &[1, 0, 1])?;
    let fine = quad.volume_grid_scaled(l, n, &[1, 0, 1], 2)?;
    let functional = symmetry_functional(&w, &v0, base.xi0, &grid);
    let refined = symmetry_functional(&w, &v0, base.xi0, &fine);
    let omega_e3 = w.rigid().omega[2];
    let k = 8.0 * PI / point.lambda0;
    let defect = |p: f64| (functional - p).abs() / functional.abs().max(p.abs()).max(f64::MIN_POSITIVE);
    let change = (refined - functional).abs() / functional.abs().max(f64::MIN_POSITIVE);
    Ok(SymmetryBreaking {
        functional,
        omega_e3,
        predicted_negative: -k * omega_e3,
        predicted_positive: k * omega_e3,
        defect_negative: defect(-k * omega_e3),
        defect_positive: defect(k * omega_e3),
        refinement_change: change,
        flagged: change > 1e-6,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BifurcationStatus {
    Bifurcation,
    NoCriticalPoint,
    SimplicityNotCertified,
    NotTransversal,
    ComplexCrossing,
    NotResolved,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Tolerances {
    pub root: f64,
    pub eigen: f64,
    pub overlap: f64,
    pub transversality: f64,
    pub resolution: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            root: ROOT_TOL,
            eigen: EigenOptions::default().tol,
            overlap: ScanOptions::default().overlap_threshold,
            transversality: 1e-8,
            resolution: 1e-4,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BifurcationReport {
    pub family: String,
    pub mode: u32,
    pub status: BifurcationStatus,
    pub lambda0: Option<f64>,
    pub mu_at_lambda0: Option<Complex64>,
    pub mu_curve: Vec<MuPoint>,
    pub path_breaks: Vec<usize>,
    pub mu_extrema: Option<(f64, f64)>,
    pub simplicity: Option<SimplicityDiagnostics>,
    pub transversality: Option<Transversality>,
    pub symmetry: Option<SymmetryBreaking>,
    /// Relative shift of λ₀ against a refined discretization, when computed.
    pub resolution_shift: Option<f64>,
    /// Nearest eigenvalue of the complementary real sub-block at λ₀.
    pub partner_mu: Option<Complex64>,
    /// Multiplicity of μ(λ₀) counting both real sub-blocks of the mode.
    pub full_multiplicity: Option<usize>,
    pub tolerances: Tolerances,
    pub notes: Vec<String>,
}

/// Run the full chain: scan, root, simplicity, transversality and, for
/// physical families, the symmetry-breaking functional.
pub fn analyze(
    family: &dyn OperatorFamily,
    bracket: (f64, f64),
    samples: usize,
    opts: &ScanOptions,
) -> Result<(BifurcationReport, Option<CriticalPoint>)> {
    let tol = Tolerances {
        root: opts.root_tol,
        eigen: opts.eig.tol,
        overlap: opts.overlap_threshold,
        ..Default::default()
    };
    let (scan, outcome) = find_critical(family, bracket, samples, opts)?;
    let mut report = BifurcationReport {
        family: family.label(),
        mode: family.bundle(bracket.0)?.m,
        status: BifurcationStatus::NoCriticalPoint,
        lambda0: None,
        mu_at_lambda0: None,
        mu_extrema: scan.extrema(),
        mu_curve: scan.points,
        path_breaks: scan.breaks,
        simplicity: None,
        transversality: None,
        symmetry: None,
        resolution_shift: None,
        partner_mu: None,
        full_multiplicity: None,
        tolerances: tol,
        notes: vec![],
    };
    let point = match outcome {
        CriticalOutcome::NoCrossing { .. } => return Ok((report, None)),
        CriticalOutcome::Crossing(p) => *p,
    };
    report.lambda0 = Some(point.lambda0);
    report.mu_at_lambda0 = Some(point.pair.mu);
    if !report.path_breaks.is_empty() {
        report.notes.push(format!("eigenvalue path breaks at scan indices {:?}", report.path_breaks));
    }
    if !point.pair.is_real(opts.real_tol) {
        report.status = BifurcationStatus::ComplexCrossing;
        report.notes.push("tracked eigenvalue is complex at the crossing".into());
        return Ok((report, Some(point)));
    }
    let simp = certify_simplicity(&point.bundle, &point.pair);
    let tr = transversality(family, &point, None, opts)?;
    if let Some(phys) = family.physical() {
        match symmetry_breaking(phys, &point) {
            Ok(sb) => report.symmetry = Some(sb),
            Err(e) => report.notes.push(format!("symmetry functional unavailable: {e}")),
        }
    }
    report.status = if !simp.certified {
        report.notes.push(format!(
            "simplicity not certified: {}",
            simp.reason.clone().unwrap_or_default()
        ));
        BifurcationStatus::SimplicityNotCertified
    } else if tr.mu_prime_formula.abs() <= report.tolerances.transversality {
        BifurcationStatus::NotTransversal
    } else {
        BifurcationStatus::Bifurcation
    };
    if tr.flagged {
        report.notes.push(format!(
            "transversality estimates disagree by {:.3e}; rerun with another step",
            tr.relative_disagreement
        ));
    }
    report.simplicity = Some(simp);
    report.transversality = Some(tr);
    Ok((report, Some(point)))
}

/// Solve the complementary real sub-block at λ₀ and record whether it
/// shares the critical eigenvalue (the cos/sin pairing of `m ≥ 1`).
pub fn block_degeneracy(
    report: &mut BifurcationReport,
    partner: &dyn OperatorFamily,
    point: &CriticalPoint,
    opts: &ScanOptions,
) -> Result<()> {
    let (_, pairs) = eigs(partner, point.lambda0, point.pair.mu, opts)?;
    let nearest = pairs
        .iter()
        .map(|p| p.mu)
        .min_by(|a, b| (a - point.pair.mu).norm().total_cmp(&(b - point.pair.mu).norm()));
    if let Some(mu) = nearest {
        let block = report.simplicity.as_ref().map_or(1, |s| s.geometric_multiplicity);
        let shared = (mu - point.pair.mu).norm() <= 1e-8 * point.pair.mu.norm().max(1.0);
        report.partner_mu = Some(mu);
        report.full_multiplicity = Some(block + usize::from(shared));
    }
    Ok(())
}

/// Compare λ₀ against a refined discretization and downgrade the status
/// when it moves by more than the resolution tolerance.
pub fn apply_refinement(report: &mut BifurcationReport, refined_lambda0: Option<f64>) {
    let Some(l0) = report.lambda0 else { return };
    match refined_lambda0 {
        Some(l1) => {
            let shift = (l1 - l0).abs() / l0;
            report.resolution_shift = Some(shift);
            if shift > report.tolerances.resolution {
                report.status = BifurcationStatus::NotResolved;
                report.notes.push(format!(
                    "not resolved at this resolution: refined critical value {l1} differs by {shift:.3e}"
                ));
            }
        }
        None => {
            report.status = BifurcationStatus::NotResolved;
            report
                .notes
                .push("not resolved at this resolution: no crossing at the refined discretization".into());
        }
    }
}
