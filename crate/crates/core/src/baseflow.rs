//! The steady axisymmetric free-fall branch.
//!
//! Unknowns are the coefficients of `v₀` over the axisymmetric, swirl-free
//! block of the `m = 0` basis, including the translational lifting field whose
//! coefficient is the fall speed `ξ₀`. The discrete momentum balance reads
//!
//! `R(c) = 2 S c - λ g - λ N(c) = 0`,
//!
//! and its row for the translational lifting field is the force balance on
//! the body. Rotational liftings are excluded, so `ω₀ = 0` by construction.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::basis::{build_basis, DiscreteField, ModalBasis, Parity, VectorField};
use crate::error::{Error, Result};
use crate::forms::{
    assemble_D1, assemble_S, assemble_g, assemble_trilinear, basis_grid, nonlinear_form,
    recover_force_torque, weak_residual, ForceTorque, FormMatrix, STRESS_FACTOR,
};
use crate::quadrature::QuadratureSpec;

/// Discretization of the axisymmetric problem at one resolution.
#[derive(Clone, Debug)]
pub struct BaseProblem {
    pub basis: Arc<ModalBasis>,
    pub quad: QuadratureSpec,
    pub s: FormMatrix,
    pub d1: FormMatrix,
    pub g: DVector<f64>,
    s_chol: Cholesky<f64, Dyn>,
}

impl BaseProblem {
    pub fn new(max_degree: u32, radial: u32, quad: QuadratureSpec) -> Result<Self> {
        let full = build_basis(0, max_degree, radial, &quad)?;
        let basis = Arc::new(full.block(Parity::Even).without_rotations());
        Self::from_basis(basis, quad)
    }

    pub fn from_basis(basis: Arc<ModalBasis>, quad: QuadratureSpec) -> Result<Self> {
        if basis.m != 0 {
            return Err(Error::IncompatibleModes(format!(
                "base flow needs an m = 0 basis, got m = {}",
                basis.m
            )));
        }
        let s = assemble_S(&basis, &quad)?;
        let d1 = assemble_D1(&basis, &quad)?;
        let g = assemble_g(&basis)?;
        let s_chol = Cholesky::new(s.matrix.clone())
            .ok_or_else(|| Error::SingularSystem("strain Gram matrix is not positive definite".into()))?;
        Ok(BaseProblem {
            basis,
            quad,
            s,
            d1,
            g,
            s_chol,
        })
    }

    pub fn fingerprint(&self) -> &str {
        self.basis.fingerprint()
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    /// `‖f‖_{S⁻¹} = √(fᵀ S⁻¹ f)`.
    pub fn dual_norm(&self, f: &DVector<f64>) -> f64 {
        f.dot(&self.s_chol.solve(f)).max(0.0).sqrt()
    }

    pub fn residual(&self, lambda: f64, c: &DVector<f64>) -> Result<DVector<f64>> {
        let n = nonlinear_form(&self.basis, c, &self.quad)?;
        Ok(&self.s.matrix * c * STRESS_FACTOR - &self.g * lambda - n * lambda)
    }

    /// `J = 2 S - λ (K_v + ξ D1)`.
    pub fn jacobian(&self, lambda: f64, c: &DVector<f64>) -> Result<DMatrix<f64>> {
        let v = self.field(c.clone())?;
        let k = assemble_trilinear(&self.basis, &self.basis, &v, &self.quad)?;
        let xi = self.g.dot(c);
        Ok(&self.s.matrix * STRESS_FACTOR - (k.matrix + &self.d1.matrix * xi) * lambda)
    }

    pub fn field(&self, c: DVector<f64>) -> Result<DiscreteField> {
        DiscreteField::new(self.basis.clone(), c)
    }

    /// Stokes-limit solution `c = (λ/2) S⁻¹ g`.
    pub fn stokes_guess(&self, lambda: f64) -> DVector<f64> {
        self.s_chol.solve(&self.g) * (lambda / STRESS_FACTOR)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    /// Residual tolerance in the `S⁻¹` norm, relative to `max(1, λ)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-10,
            max_iter: 30,
        }
    }
}

/// One converged point of the axisymmetric branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseFlow {
    pub lambda: f64,
    pub coeffs: Vec<f64>,
    pub xi0: f64,
    /// `‖D(v₀)‖₂²`
    pub dissipation: f64,
    /// Final residual in the `S⁻¹` norm.
    pub residual_norm: f64,
    pub newton_history: Vec<f64>,
    pub fingerprint: String,
}

impl BaseFlow {
    pub fn coefficients(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coeffs)
    }

    /// `2 ‖D(v₀)‖² - λ ξ₀`, zero for an exact discrete solution.
    pub fn energy_defect(&self) -> f64 {
        STRESS_FACTOR * self.dissipation - self.lambda * self.xi0
    }

    /// `‖D(v₀)‖² - λ ξ₀` (the identity with unit stress factor).
    pub fn unit_energy_defect(&self) -> f64 {
        self.dissipation - self.lambda * self.xi0
    }

    /// `C` in `r_{k+1} ≤ C r_k²` from the last two nontrivial residuals.
    pub fn quadratic_rate(&self) -> Option<f64> {
        let h: Vec<f64> = self.newton_history.iter().copied().filter(|r| *r > 0.0).collect();
        (h.len() >= 3).then(|| h[h.len() - 2] / (h[h.len() - 3] * h[h.len() - 3]))
    }
}

/// Newton solve of the axisymmetric problem at `lambda`.
pub fn solve_base(
    problem: &BaseProblem,
    lambda: f64,
    guess: Option<&BaseFlow>,
    opts: &NewtonOptions,
) -> Result<BaseFlow> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let c0 = match guess {
        Some(g) if g.fingerprint == problem.fingerprint() => g.coefficients(),
        Some(g) => {
            return Err(Error::FingerprintMismatch {
                expected: problem.fingerprint().to_string(),
                found: g.fingerprint.clone(),
            })
        }
        None => problem.stokes_guess(lambda),
    };
    newton(problem, lambda, c0, opts)
}

fn newton(problem: &BaseProblem, lambda: f64, mut c: DVector<f64>, opts: &NewtonOptions) -> Result<BaseFlow> {
    let tol = opts.tol * lambda.max(1.0);
    let mut history = Vec::new();
    for _ in 0..=opts.max_iter {
        let r = problem.residual(lambda, &c)?;
        let norm = problem.dual_norm(&r);
        history.push(norm);
        if !norm.is_finite() || (history.len() > 3 && norm > 1e3 * history[0].max(tol)) {
            break;
        }
        if norm <= tol {
            return Ok(finish(problem, lambda, c, history));
        }
        let j = problem.jacobian(lambda, &c)?;
        let lu = LU::new(j);
        let delta = lu
            .solve(&(-r))
            .filter(|d| d.iter().all(|x| x.is_finite()))
            .ok_or(Error::SingularJacobian { lambda })?;
        c += delta;
    }
    Err(Error::NewtonDivergence {
        lambda,
        history,
        last_iterate: c.as_slice().to_vec(),
    })
}

fn finish(problem: &BaseProblem, lambda: f64, c: DVector<f64>, history: Vec<f64>) -> BaseFlow {
    BaseFlow {
        lambda,
        xi0: problem.g.dot(&c),
        dissipation: c.dot(&(&problem.s.matrix * &c)),
        residual_norm: *history.last().unwrap_or(&0.0),
        newton_history: history,
        fingerprint: problem.fingerprint().to_string(),
        coeffs: c.as_slice().to_vec(),
    }
}

/// Adaptive step control for [`continue_branch`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepPolicy {
    pub initial: f64,
    pub min: f64,
    pub max: f64,
}

impl StepPolicy {
    /// Fixed spacing producing `points` points on `[start, end]`.
    pub fn uniform(start: f64, end: f64, points: usize) -> Self {
        let h = if points > 1 { (end - start) / (points - 1) as f64 } else { 1.0 };
        StepPolicy {
            initial: h,
            min: h * 1e-3,
            max: h,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub points: Vec<BaseFlow>,
    pub steps: Vec<f64>,
    pub iterations: Vec<usize>,
    /// Reason the branch stopped short of the requested end, if it did.
    pub truncated: Option<String>,
    pub fingerprint: String,
}

impl Branch {
    pub fn lambdas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.lambda).collect()
    }

    pub fn last(&self) -> Option<&BaseFlow> {
        self.points.last()
    }

    /// The stored point closest to `lambda`.
    pub fn nearest(&self, lambda: f64) -> Option<&BaseFlow> {
        self.points
            .iter()
            .min_by(|a, b| (a.lambda - lambda).abs().total_cmp(&(b.lambda - lambda).abs()))
    }

    /// Finite-difference estimates `(v₀′, v₀″)` at interior point `i`
    /// from the three-point nonuniform stencil.
    pub fn derivatives(&self, i: usize) -> Option<(DVector<f64>, DVector<f64>)> {
        if i == 0 || i + 1 >= self.points.len() {
            return None;
        }
        let (a, b, c) = (&self.points[i - 1], &self.points[i], &self.points[i + 1]);
        let (h0, h1) = (b.lambda - a.lambda, c.lambda - b.lambda);
        let (ya, yb, yc) = (a.coefficients(), b.coefficients(), c.coefficients());
        let d1 = (&yc - &yb) * (h0 / (h1 * (h0 + h1))) + (&yb - &ya) * (h1 / (h0 * (h0 + h1)));
        let d2 = ((&yc - &yb) / h1 - (&yb - &ya) / h0) * (2.0 / (h0 + h1));
        Some((d1, d2))
    }

    /// Extend the branch to `lambda_end`, resuming from its last point.
    pub fn extend(
        &mut self,
        problem: &BaseProblem,
        lambda_end: f64,
        policy: &StepPolicy,
        opts: &NewtonOptions,
    ) -> Result<()> {
        if self.fingerprint != problem.fingerprint() {
            return Err(Error::FingerprintMismatch {
                expected: problem.fingerprint().to_string(),
                found: self.fingerprint.clone(),
            });
        }
        let mut step = policy.initial.min(policy.max);
        self.truncated = None;
        while let Some(last) = self.points.last() {
            let lam0 = last.lambda;
            if lam0 >= lambda_end - 1e-12 * lambda_end.abs().max(1.0) {
                break;
            }
            let h = step.min(lambda_end - lam0);
            let target = if lambda_end - lam0 - h < 1e-9 * h { lambda_end } else { lam0 + h };
            let guess = self.predict(target);
            match newton(problem, target, guess, opts) {
                Ok(p) => {
                    let iters = p.newton_history.len() - 1;
                    self.steps.push(target - lam0);
                    self.iterations.push(iters);
                    self.points.push(p);
                    if iters <= 4 {
                        step = (step * 1.5).min(policy.max);
                    }
                }
                Err(e) => {
                    step *= 0.5;
                    if step < policy.min {
                        self.truncated = Some(format!("stopped at lambda = {lam0}: {e}"));
                        break;
                    }
                }
            }
        }
        Ok(())
    }

    /// Secant predictor from the last two points.
    fn predict(&self, target: f64) -> DVector<f64> {
        let n = self.points.len();
        let last = self.points[n - 1].coefficients();
        if n < 2 {
            return last;
        }
        let prev = &self.points[n - 2];
        let h = self.points[n - 1].lambda - prev.lambda;
        if h <= 0.0 {
            return last;
        }
        let slope = (&last - prev.coefficients()) / h;
        last + slope * (target - self.points[n - 1].lambda)
    }
}

/// Natural-parameter continuation of the base branch on `[lambda_start, lambda_end]`.
pub fn continue_branch(
    problem: &BaseProblem,
    lambda_start: f64,
    lambda_end: f64,
    policy: &StepPolicy,
    opts: &NewtonOptions,
) -> Result<Branch> {
    if !(lambda_start >= 0.0) || lambda_end < lambda_start {
        return Err(Error::InvalidInput(format!(
            "need 0 <= lambda_start <= lambda_end, got [{lambda_start}, {lambda_end}]"
        )));
    }
    if !(policy.initial > 0.0 && policy.min > 0.0 && policy.max >= policy.min) {
        return Err(Error::InvalidInput("step policy needs 0 < min <= max and initial > 0".into()));
    }
    let first = solve_base(problem, lambda_start, None, opts)?;
    let mut branch = Branch {
        iterations: vec![first.newton_history.len() - 1],
        steps: vec![],
        points: vec![first],
        truncated: None,
        fingerprint: problem.fingerprint().to_string(),
    };
    branch.extend(problem, lambda_end, policy, opts)?;
    Ok(branch)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisymmetryReport {
    /// `(m, max |residual|)` of the momentum residual tested in mode `m`.
    pub mode_residuals: Vec<(u32, f64)>,
    pub force_torque: ForceTorque,
}

impl AxisymmetryReport {
    pub fn max_nonaxisymmetric(&self) -> f64 {
        self.mode_residuals
            .iter()
            .filter(|(m, _)| *m != 0)
            .map(|(_, r)| *r)
            .fold(0.0, f64::max)
    }
}

/// Test the full momentum residual of `v₀ + extra` against the bases of
/// modes `1..=max_mode`; the residual in every `m ≠ 0` mode vanishes for an
/// axisymmetric input.
pub fn check_axisymmetry(
    problem: &BaseProblem,
    base: &BaseFlow,
    extra: Option<&DiscreteField>,
    max_mode: u32,
) -> Result<AxisymmetryReport> {
    let v0 = problem.field(base.coefficients())?;
    let mut parts: Vec<&dyn VectorField> = vec![&v0];
    let mut xi = base.xi0;
    if let Some(e) = extra {
        parts.push(e);
        xi += e.rigid().xi;
    }
    let total = crate::basis::Superposition(parts);
    let b = &problem.basis;
    let mut mode_residuals = Vec::new();
    for m in 1..=max_mode {
        let test = build_basis(m, b.max_degree.max(m), b.radial, &problem.quad)?;
        let modes = [m, 0, extra.map_or(0, |e| e.mode())];
        let grid = problem.quad.volume_grid(
            test.max_degree,
            test.radial,
            &[modes[0], modes[1].max(modes[2]), modes[1].max(modes[2])],
        )?;
        let r = weak_residual(&test, &total, xi, base.lambda, &grid);
        mode_residuals.push((m, r.amax()));
    }
    let grid = basis_grid(&problem.quad, b)?;
    let force_torque = recover_force_torque(&v0, base.xi0, base.lambda, &grid);
    Ok(AxisymmetryReport {
        mode_residuals,
        force_torque,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn problem() -> BaseProblem {
        BaseProblem::new(3, 6, QuadratureSpec::default()).unwrap()
    }

    #[test]
    fn zero_weight_gives_rest() {
        let p = problem();
        let b = solve_base(&p, 0.0, None, &NewtonOptions::default()).unwrap();
        assert_eq!(b.xi0, 0.0);
        assert!(b.coeffs.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn stokes_limit_fall_speed() {
        let p = problem();
        for lambda in [1e-4, 1e-3, 1e-2] {
            let b = solve_base(&p, lambda, None, &NewtonOptions::default()).unwrap();
            let stokes = lambda / (6.0 * PI);
            assert!((b.xi0 - stokes).abs() < 0.02 * stokes, "{} vs {stokes}", b.xi0);
            assert!(b.energy_defect().abs() <= 1e-8 * (lambda * b.xi0).max(1.0));
        }
    }

    #[test]
    fn newton_converges_and_energy_balances_at_moderate_weight() {
        let p = problem();
        let b = solve_base(&p, 5.0, None, &NewtonOptions::default()).unwrap();
        assert!(b.xi0 > 0.0);
        assert!(b.residual_norm <= 1e-10 * 5.0);
        assert!(b.energy_defect().abs() <= 1e-8 * (5.0 * b.xi0).max(1.0));
    }

    #[test]
    fn branch_is_monotone_in_the_stokes_regime() {
        let p = problem();
        let br = continue_branch(
            &p,
            0.0,
            0.01,
            &StepPolicy::uniform(0.0, 0.01, 5),
            &NewtonOptions::default(),
        )
        .unwrap();
        assert_eq!(br.points.len(), 5);
        for w in br.points.windows(2) {
            assert!(w[1].lambda > w[0].lambda && w[1].xi0 > w[0].xi0);
        }
        let slope = br.points[4].xi0 / br.points[4].lambda;
        assert!((slope * 6.0 * PI - 1.0).abs() < 0.02);
        assert!(br.derivatives(2).is_some() && br.derivatives(0).is_none());
    }

    #[test]
    fn degenerate_range_gives_single_point() {
        let p = problem();
        let br = continue_branch(&p, 0.5, 0.5, &StepPolicy::uniform(0.5, 0.5, 1), &NewtonOptions::default()).unwrap();
        assert_eq!(br.points.len(), 1);
    }

    #[test]
    fn axisymmetric_base_sources_no_other_modes() {
        let p = problem();
        let b = solve_base(&p, 2.0, None, &NewtonOptions::default()).unwrap();
        let rep = check_axisymmetry(&p, &b, None, 2).unwrap();
        assert!(rep.max_nonaxisymmetric() <= 1e-10, "{rep:?}");
        assert!((rep.force_torque.force[0] + 2.0).abs() < 1e-8);
        assert!(rep.force_torque.torque.iter().all(|t| t.abs() < 1e-8));

        let b1 = Arc::new(build_basis(1, 3, 6, &p.quad).unwrap());
        let mut c = DVector::zeros(b1.len());
        c[3] = 1e-3;
        let noise = DiscreteField::new(b1, c).unwrap();
        let rep = check_axisymmetry(&p, &b, Some(&noise), 1).unwrap();
        assert!(rep.max_nonaxisymmetric() > 1e-6);

        let rest = solve_base(&p, 0.0, None, &NewtonOptions::default()).unwrap();
        let rep = check_axisymmetry(&p, &rest, None, 2).unwrap();
        assert_eq!(rep.max_nonaxisymmetric(), 0.0);
    }
}
