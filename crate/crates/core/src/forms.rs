//! Galerkin forms on modal bases.
//!
//! All volume integrals use the tensor rules of [`crate::quadrature`]. Every
//! assembled matrix is a sum over quadrature blocks of `Fᵣᵀ W F꜀`, where each
//! block holds pointwise features (strain components, values, gradients) of
//! the row and column members.
//!
//! Conventions (real coefficients `c`, field `v = Σ cⱼ φⱼ`):
//! * `S[i][j] = (D(φᵢ), D(φⱼ))`;
//! * `D1[i][j] = (∂₁φⱼ, φᵢ)`, so `(D1 c)ᵢ = (∂₁v, φᵢ)`;
//! * `K_v[i][j] = c(φⱼ, v, φᵢ) + c(v, φⱼ, φᵢ) + ξ_{φⱼ} (∂₁v, φᵢ)` with the
//!   skew convective form `c(a, b, φ) = ½[(a·∇φ, b) - (a·∇b, φ)]`;
//! * `N(v)ᵢ = c(v, v, φᵢ) + ξ_v (∂₁v, φᵢ)`;
//! * `gᵢ = ξ_{φᵢ}`.
//!
//! The skew form agrees with `(a·D(φ), b)` for solenoidal fields whose traces
//! are rigid motions, because the surface term `∫ (a·n)(b·φ)` over the sphere
//! vanishes for such traces.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::basis::{
    FieldSample, Lifting, Member, ModalBasis, Rotlet, StokesTranslation, VectorField,
};
use crate::error::{Error, Result};
use crate::quadrature::{QuadratureSpec, SurfaceGrid, VolumeGrid};

/// Factor in the Cauchy stress `T = -p I + 2 D(v)`.
pub const STRESS_FACTOR: f64 = 2.0;

/// Relative tolerance for the doubled-order quadrature check.
pub const RESOLUTION_TOL: f64 = 1e-8;

const BLOCK: usize = 192;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FormKind {
    S,
    D1,
    K,
    G,
}

/// Outcome of recomputing part of a matrix row with doubled node counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolutionCheck {
    pub row: usize,
    pub columns: Vec<usize>,
    /// Largest entry change relative to the largest matrix entry.
    pub discrepancy: f64,
    pub tolerance: f64,
}

impl ResolutionCheck {
    pub fn underresolved(&self) -> bool {
        !(self.discrepancy <= self.tolerance)
    }
}

#[derive(Clone, Debug)]
pub struct FormMatrix {
    pub kind: FormKind,
    pub m: u32,
    pub matrix: DMatrix<f64>,
    pub fingerprint: String,
    pub resolution: Option<ResolutionCheck>,
}

impl FormMatrix {
    /// `max |A - Aᵀ|`.
    pub fn asymmetry(&self) -> f64 {
        (&self.matrix - self.matrix.transpose()).amax()
    }

    /// `max |A + Aᵀ|`.
    pub fn skewness(&self) -> f64 {
        (&self.matrix + self.matrix.transpose()).amax()
    }

    pub fn quadratic(&self, u: &DVector<f64>) -> f64 {
        u.dot(&(&self.matrix * u))
    }

    pub fn underresolved(&self) -> bool {
        self.resolution.as_ref().is_some_and(|r| r.underresolved())
    }

    /// Row-major CSV dump with a commented header line.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(
            out,
            "# kind={:?} m={} rows={} cols={} fingerprint={}",
            self.kind,
            self.m,
            self.matrix.nrows(),
            self.matrix.ncols(),
            self.fingerprint
        )?;
        for i in 0..self.matrix.nrows() {
            let row: Vec<String> = (0..self.matrix.ncols())
                .map(|j| format!("{:.16e}", self.matrix[(i, j)]))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn strain6(f: &FieldSample) -> [f64; 6] {
    let g = &f.grad;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    [
        g[0][0],
        g[1][1],
        g[2][2],
        s * (g[0][1] + g[1][0]),
        s * (g[0][2] + g[2][0]),
        s * (g[1][2] + g[2][1]),
    ]
}

fn value3(f: &FieldSample) -> [f64; 3] {
    f.value
}

fn d1_3(f: &FieldSample) -> [f64; 3] {
    [f.grad[0][0], f.grad[1][0], f.grad[2][0]]
}

/// Value followed by the gradient `∂_k φ_i` at index `3 + 3i + k`.
fn phi12(f: &FieldSample) -> [f64; 12] {
    let mut o = [0.0; 12];
    o[..3].copy_from_slice(&f.value);
    for i in 0..3 {
        o[3 + 3 * i..6 + 3 * i].copy_from_slice(&f.grad[i]);
    }
    o
}

/// Dual of `phi12` for `φ ↦ c(u, v, φ) + c(v, u, φ)`.
fn convect12(u: &FieldSample, v: &FieldSample) -> [f64; 12] {
    let mut o = [0.0; 12];
    for i in 0..3 {
        let mut adv = 0.0;
        for k in 0..3 {
            adv += u.value[k] * v.grad[i][k] + v.value[k] * u.grad[i][k];
            o[3 + 3 * i + k] = 0.5 * (u.value[k] * v.value[i] + v.value[k] * u.value[i]);
        }
        o[i] = -0.5 * adv;
    }
    o
}

fn dot<const A: usize>(a: &[f64; A], b: &[f64; A]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-point auxiliary field entering an integrand.
enum Aux<'a> {
    None,
    Field(&'a dyn VectorField),
    /// Expansion over the row basis.
    Coeffs(&'a DVector<f64>),
}

fn sample_block(basis: &ModalBasis, pts: &[[f64; 3]]) -> Vec<FieldSample> {
    let n = basis.len();
    let mut out = vec![FieldSample::default(); pts.len() * n];
    for (p, x) in pts.iter().enumerate() {
        basis.sample_into(x, &mut out[p * n..(p + 1) * n]);
    }
    out
}

fn aux_block(aux: &Aux, pts: &[[f64; 3]], rows: &[FieldSample], n: usize) -> Vec<FieldSample> {
    match aux {
        Aux::None => vec![FieldSample::default(); pts.len()],
        Aux::Field(f) => pts.iter().map(|x| f.sample(x)).collect(),
        Aux::Coeffs(c) => (0..pts.len())
            .map(|p| {
                let mut s = FieldSample::default();
                for (i, ci) in c.iter().enumerate() {
                    s.add_scaled(&rows[p * n + i], *ci);
                }
                s
            })
            .collect(),
    }
}

fn blocks(len: usize) -> Vec<std::ops::Range<usize>> {
    (0..len)
        .step_by(BLOCK)
        .map(|s| s..(s + BLOCK).min(len))
        .collect()
}

/// `M[i][j] = Σ_p w_p row_feat(φᵢ)·col_feat(ψⱼ, aux)` with a deterministic
/// ordered reduction over point blocks.
fn accumulate<const A: usize>(
    rows: &ModalBasis,
    cols: Option<&ModalBasis>,
    grid: &VolumeGrid,
    aux: &Aux,
    row_feat: impl Fn(&FieldSample) -> [f64; A] + Sync,
    col_feat: impl Fn(&FieldSample, &FieldSample) -> [f64; A] + Sync,
) -> DMatrix<f64> {
    let nr = rows.len();
    let nc = cols.map_or(nr, |c| c.len());
    let partials: Vec<DMatrix<f64>> = blocks(grid.len())
        .into_par_iter()
        .map(|range| {
            let pts = &grid.points[range.clone()];
            let np = pts.len();
            let rs = sample_block(rows, pts);
            let cs = cols.map(|c| sample_block(c, pts));
            let col_s = cs.as_deref().unwrap_or(&rs);
            let aux_s = aux_block(aux, pts, &rs, nr);
            let mut fr = DMatrix::<f64>::zeros(A * np, nr);
            let mut fc = DMatrix::<f64>::zeros(A * np, nc);
            for p in 0..np {
                let w = grid.weights[range.start + p];
                for i in 0..nr {
                    let f = row_feat(&rs[p * nr + i]);
                    fr.view_mut((p * A, i), (A, 1)).copy_from_slice(&f);
                }
                for j in 0..nc {
                    let mut f = col_feat(&col_s[p * nc + j], &aux_s[p]);
                    f.iter_mut().for_each(|v| *v *= w);
                    fc.view_mut((p * A, j), (A, 1)).copy_from_slice(&f);
                }
            }
            let mut out = DMatrix::zeros(nr, nc);
            out.gemm_tr(1.0, &fr, &fc, 0.0);
            out
        })
        .collect();
    partials
        .into_iter()
        .fold(DMatrix::zeros(nr, nc), |acc, m| acc + m)
}

/// `bᵢ = Σ_p w_p integrand(φᵢ, aux)`.
fn load(
    rows: &ModalBasis,
    grid: &VolumeGrid,
    aux: &Aux,
    integrand: impl Fn(&FieldSample, &FieldSample) -> f64 + Sync,
) -> DVector<f64> {
    let n = rows.len();
    let partials: Vec<DVector<f64>> = blocks(grid.len())
        .into_par_iter()
        .map(|range| {
            let pts = &grid.points[range.clone()];
            let rs = sample_block(rows, pts);
            let aux_s = aux_block(aux, pts, &rs, n);
            let mut b = DVector::zeros(n);
            for p in 0..pts.len() {
                let w = grid.weights[range.start + p];
                for i in 0..n {
                    b[i] += w * integrand(&rs[p * n + i], &aux_s[p]);
                }
            }
            b
        })
        .collect();
    partials.into_iter().fold(DVector::zeros(n), |acc, b| acc + b)
}

fn grid_for(quad: &QuadratureSpec, bases: &[&ModalBasis], modes: &[u32], factor: usize) -> Result<VolumeGrid> {
    let l = bases.iter().map(|b| b.max_degree).max().unwrap_or(1);
    let n = bases.iter().map(|b| b.radial).max().unwrap_or(2);
    quad.volume_grid_scaled(l, n, modes, factor)
}

/// Recompute one seeded random row (restricted to a few columns including
/// the diagonal) on a rule with doubled node counts.
fn resolution_check(
    rows: &ModalBasis,
    cols: &ModalBasis,
    assembled: &DMatrix<f64>,
    grid: &VolumeGrid,
    eval: impl Fn(&ModalBasis, &ModalBasis, &VolumeGrid) -> DMatrix<f64>,
) -> ResolutionCheck {
    let mut rng = ChaCha8Rng::seed_from_u64((rows.len() * 7919 + cols.len()) as u64);
    let row = rand::Rng::gen_range(&mut rng, 0..rows.len());
    let mut columns: Vec<usize> = sample(&mut rng, cols.len(), cols.len().min(5)).into_vec();
    if row < cols.len() && !columns.contains(&row) {
        columns.push(row);
    }
    columns.sort_unstable();
    let rmember = rows.members[row];
    let sub_rows = rows.filter(|m| *m == rmember);
    let wanted: Vec<Member> = columns.iter().map(|&j| cols.members[j]).collect();
    let sub_cols = cols.filter(|m| wanted.contains(m));
    let fine = eval(&sub_rows, &sub_cols, grid);
    let scale = assembled.amax().max(f64::MIN_POSITIVE);
    let discrepancy = columns
        .iter()
        .enumerate()
        .map(|(k, &j)| (fine[(0, k)] - assembled[(row, j)]).abs() / scale)
        .fold(0.0, f64::max);
    ResolutionCheck {
        row,
        columns,
        discrepancy,
        tolerance: RESOLUTION_TOL,
    }
}

/// Gram matrix of the strain inner product `(D(φᵢ), D(φⱼ))`.
#[allow(non_snake_case)]
pub fn assemble_S(basis: &ModalBasis, quad: &QuadratureSpec) -> Result<FormMatrix> {
    let modes = [basis.m, basis.m];
    let eval = |r: &ModalBasis, c: &ModalBasis, g: &VolumeGrid| {
        accumulate(r, Some(c), g, &Aux::None, strain6, |f, _| strain6(f))
    };
    let grid = grid_for(quad, &[basis], &modes, 1)?;
    let matrix = accumulate(basis, None, &grid, &Aux::None, strain6, |f, _| strain6(f));
    let fine = grid_for(quad, &[basis], &modes, 2)?;
    let check = resolution_check(basis, basis, &matrix, &fine, eval);
    Ok(FormMatrix {
        kind: FormKind::S,
        m: basis.m,
        matrix,
        fingerprint: basis.fingerprint().to_string(),
        resolution: Some(check),
    })
}

/// Matrix of the advective pairing `(∂₁φⱼ, φᵢ)`.
#[allow(non_snake_case)]
pub fn assemble_D1(basis: &ModalBasis, quad: &QuadratureSpec) -> Result<FormMatrix> {
    let modes = [basis.m, basis.m];
    let eval = |r: &ModalBasis, c: &ModalBasis, g: &VolumeGrid| {
        accumulate(r, Some(c), g, &Aux::None, value3, |f, _| d1_3(f))
    };
    let grid = grid_for(quad, &[basis], &modes, 1)?;
    let matrix = accumulate(basis, None, &grid, &Aux::None, value3, |f, _| d1_3(f));
    let fine = grid_for(quad, &[basis], &modes, 2)?;
    let check = resolution_check(basis, basis, &matrix, &fine, eval);
    Ok(FormMatrix {
        kind: FormKind::D1,
        m: basis.m,
        matrix,
        fingerprint: basis.fingerprint().to_string(),
        resolution: Some(check),
    })
}

fn check_selection_rule(m_test: u32, m_trial: u32, m_v: u32) -> Result<()> {
    if m_test == m_trial + m_v || m_test == m_trial.abs_diff(m_v) {
        Ok(())
    } else {
        Err(Error::IncompatibleModes(format!(
            "test mode {m_test} cannot couple trial mode {m_trial} with field mode {m_v}"
        )))
    }
}

fn trilinear_matrix(
    test: &ModalBasis,
    trial: &ModalBasis,
    v: &crate::basis::DiscreteField,
    grid: &VolumeGrid,
) -> DMatrix<f64> {
    let same = std::ptr::eq(test, trial) || test.fingerprint() == trial.fingerprint();
    let cols = if same { None } else { Some(trial) };
    let aux = if test.fingerprint() == v.basis.fingerprint() {
        Aux::Coeffs(&v.coeffs)
    } else {
        Aux::Field(v)
    };
    let mut k = accumulate(test, cols, grid, &aux, phi12, convect12);
    let xi: Vec<f64> = (0..trial.len()).map(|j| trial.trace(j).xi).collect();
    if xi.iter().any(|x| *x != 0.0) {
        let b = load(test, grid, &aux, |f, vs| dot(&f.value, &d1_3(vs)));
        for (j, x) in xi.iter().enumerate() {
            if *x != 0.0 {
                k.column_mut(j).axpy(*x, &b, 1.0);
            }
        }
    }
    k
}

/// Linearized convection matrix `K_v` between a test and a trial basis.
pub fn assemble_trilinear(
    test: &ModalBasis,
    trial: &ModalBasis,
    v: &crate::basis::DiscreteField,
    quad: &QuadratureSpec,
) -> Result<FormMatrix> {
    check_selection_rule(test.m, trial.m, v.mode())?;
    let modes = [test.m, trial.m, v.mode()];
    let grid = grid_for(quad, &[test, trial, &v.basis], &modes, 1)?;
    Ok(FormMatrix {
        kind: FormKind::K,
        m: test.m,
        matrix: trilinear_matrix(test, trial, v, &grid),
        fingerprint: test.fingerprint().to_string(),
        resolution: None,
    })
}

/// Doubled-order check for a trilinear matrix assembled by [`assemble_trilinear`].
pub fn trilinear_resolution_check(
    test: &ModalBasis,
    trial: &ModalBasis,
    v: &crate::basis::DiscreteField,
    assembled: &FormMatrix,
    quad: &QuadratureSpec,
) -> Result<ResolutionCheck> {
    let modes = [test.m, trial.m, v.mode()];
    let fine = grid_for(quad, &[test, trial, &v.basis], &modes, 2)?;
    Ok(resolution_check(test, trial, &assembled.matrix, &fine, |r, c, g| {
        trilinear_matrix(r, c, v, g)
    }))
}

/// `N(v)ᵢ = c(v, v, φᵢ) + ξ_v (∂₁v, φᵢ)` for `v` expanded over `basis`.
pub fn nonlinear_form(
    basis: &ModalBasis,
    coeffs: &DVector<f64>,
    quad: &QuadratureSpec,
) -> Result<DVector<f64>> {
    if coeffs.len() != basis.len() {
        return Err(Error::InvalidInput(format!(
            "coefficient vector has length {}, basis has {} members",
            coeffs.len(),
            basis.len()
        )));
    }
    let xi: f64 = (0..basis.len()).map(|j| coeffs[j] * basis.trace(j).xi).sum();
    let grid = grid_for(quad, &[basis], &[basis.m; 3], 1)?;
    Ok(load(basis, &grid, &Aux::Coeffs(coeffs), |phi, v| {
        let y = convect12(v, v);
        let d1 = d1_3(v);
        0.5 * dot(&phi12(phi), &y) + xi * dot(&phi.value, &d1)
    }))
}

/// `gᵢ = ξ_{φᵢ}`: the translational trace of each member.
pub fn assemble_g(basis: &ModalBasis) -> Result<DVector<f64>> {
    if basis.translation_index().is_none() {
        return Err(Error::MissingLifting("translational"));
    }
    Ok(DVector::from_fn(basis.len(), |i, _| basis.trace(i).xi))
}

/// Pointwise integrand of `(∂₁a, b)`.
pub fn advective_pairing(a: &dyn VectorField, b: &dyn VectorField, grid: &VolumeGrid) -> f64 {
    grid.points
        .iter()
        .zip(&grid.weights)
        .map(|(x, w)| w * dot(&d1_3(&a.sample(x)), &b.sample(x).value))
        .sum()
}

/// `⟨K_v u, φ⟩ = c(u, v, φ) + c(v, u, φ) + ξ_u (∂₁v, φ)` by quadrature.
pub fn convective_pairing(
    u: &dyn VectorField,
    xi_u: f64,
    v: &dyn VectorField,
    phi: &dyn VectorField,
    grid: &VolumeGrid,
) -> f64 {
    grid.points
        .iter()
        .zip(&grid.weights)
        .map(|(x, w)| {
            let (us, vs, ps) = (u.sample(x), v.sample(x), phi.sample(x));
            w * (dot(&phi12(&ps), &convect12(&us, &vs)) + xi_u * dot(&ps.value, &d1_3(&vs)))
        })
        .sum()
}

/// `(D(a), D(b))` by quadrature.
pub fn strain_pairing(a: &dyn VectorField, b: &dyn VectorField, grid: &VolumeGrid) -> f64 {
    grid.points
        .iter()
        .zip(&grid.weights)
        .map(|(x, w)| w * dot(&strain6(&a.sample(x)), &strain6(&b.sample(x))))
        .sum()
}

/// Discrete surface coupling `∫_{|x|=1} (u·n)(u·φ)`; `n = x` on the sphere.
pub fn surface_coupling(u: &dyn VectorField, phi: &dyn VectorField, surf: &SurfaceGrid) -> f64 {
    surf.points
        .iter()
        .zip(&surf.weights)
        .map(|(x, w)| {
            let a = u.sample(x).value;
            let b = phi.sample(x).value;
            w * dot(&a, x) * dot(&a, &b)
        })
        .sum()
}

/// [`surface_coupling`] of `u` against every member of its own basis.
pub fn surface_couplings(u: &crate::basis::DiscreteField, surf: &SurfaceGrid) -> DVector<f64> {
    let basis = &u.basis;
    let mut out = DVector::zeros(basis.len());
    let mut samples = vec![FieldSample::default(); basis.len()];
    for (x, w) in surf.points.iter().zip(&surf.weights) {
        basis.sample_into(x, &mut samples);
        let mut a = [0.0; 3];
        for (c, s) in u.coeffs.iter().zip(&samples) {
            for k in 0..3 {
                a[k] += c * s.value[k];
            }
        }
        let an = w * dot(&a, x);
        for (o, s) in out.iter_mut().zip(&samples) {
            *o += an * dot(&a, &s.value);
        }
    }
    out
}

/// Weak momentum residual of a field `v` (any azimuthal content) tested
/// against every member of `test`:
/// `2 (D(v), D(φ)) - λ ξ_φ - λ [c(v, v, φ) + ξ_v (∂₁v, φ)]`.
pub fn weak_residual(
    test: &ModalBasis,
    v: &dyn VectorField,
    xi_v: f64,
    lambda: f64,
    grid: &VolumeGrid,
) -> DVector<f64> {
    let mut r = load(test, grid, &Aux::Field(v), |phi, vs| {
        let visc = STRESS_FACTOR * dot(&strain6(phi), &strain6(vs));
        let inertia = 0.5 * dot(&phi12(phi), &convect12(vs, vs)) + xi_v * dot(&phi.value, &d1_3(vs));
        visc - lambda * inertia
    });
    for i in 0..test.len() {
        r[i] -= lambda * test.trace(i).xi;
    }
    r
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ForceTorque {
    pub force: [f64; 3],
    pub torque: [f64; 3],
}

/// Hydrodynamic force and torque on the body, recovered weakly by testing the
/// momentum balance with the Stokes translation and rotation fields `ψ`:
/// `-[2 (D(v), D(ψ)) - λ (c(v, v, ψ) + ξ_v (∂₁v, ψ))]`.
pub fn recover_force_torque(
    v: &dyn VectorField,
    xi_v: f64,
    lambda: f64,
    grid: &VolumeGrid,
) -> ForceTorque {
    let tests: Vec<Box<dyn VectorField>> = (0..6)
        .map(|k| -> Box<dyn VectorField> {
            if k < 3 {
                let mut a = [0.0; 3];
                a[k] = 1.0;
                Box::new(StokesTranslation { velocity: a })
            } else {
                Box::new(Rotlet { axis: k - 3 })
            }
        })
        .collect();
    let sums: Vec<[f64; 6]> = blocks(grid.len())
        .into_par_iter()
        .map(|range| {
            let mut acc = [0.0; 6];
            for p in range {
                let x = &grid.points[p];
                let w = grid.weights[p];
                let vs = v.sample(x);
                let dv = strain6(&vs);
                let conv = convect12(&vs, &vs);
                let d1v = d1_3(&vs);
                for (k, t) in tests.iter().enumerate() {
                    let ps = t.sample(x);
                    let visc = STRESS_FACTOR * dot(&dv, &strain6(&ps));
                    let inertia = 0.5 * dot(&phi12(&ps), &conv) + xi_v * dot(&ps.value, &d1v);
                    acc[k] += w * (visc - lambda * inertia);
                }
            }
            acc
        })
        .collect();
    let mut total = [0.0; 6];
    for s in sums {
        for k in 0..6 {
            total[k] += s[k];
        }
    }
    ForceTorque {
        force: [-total[0], -total[1], -total[2]],
        torque: [-total[3], -total[4], -total[5]],
    }
}

/// Rule adequate for the closed-form Stokes fields and low-order tests.
pub fn analytic_grid(quad: &QuadratureSpec) -> Result<VolumeGrid> {
    quad.volume_grid(4, 4, &[1, 1, 1])
}

/// Rule adequate for products of three fields drawn from `basis`, or from
/// `basis` and the Stokes test fields.
pub fn basis_grid(quad: &QuadratureSpec, basis: &ModalBasis) -> Result<VolumeGrid> {
    quad.volume_grid(basis.max_degree.max(2), basis.radial, &[basis.m, basis.m, 1])
}

/// Norms entering the discrete functional inequalities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldNorms {
    /// `‖∇u‖₂²`
    pub grad_sq: f64,
    /// `‖D(u)‖₂²`
    pub strain_sq: f64,
    /// `‖u‖₆`
    pub l6: f64,
    /// `|ξ_u| + |ω_u|`
    pub trace: f64,
}

impl FieldNorms {
    /// `|‖∇u‖² - 2‖D(u)‖²| / ‖∇u‖²`; zero for homogeneous traces.
    pub fn korn_defect(&self) -> f64 {
        (self.grad_sq - 2.0 * self.strain_sq).abs() / self.grad_sq.max(f64::MIN_POSITIVE)
    }

    /// `‖u‖₆ / ‖D(u)‖₂`.
    pub fn sobolev_ratio(&self) -> f64 {
        self.l6 / self.strain_sq.sqrt()
    }

    /// `(|ξ| + |ω|) / ‖D(u)‖₂`.
    pub fn trace_ratio(&self) -> f64 {
        self.trace / self.strain_sq.sqrt()
    }
}

pub fn field_norms(f: &crate::basis::DiscreteField, grid: &VolumeGrid) -> FieldNorms {
    let mut n = FieldNorms::default();
    let mut l6 = 0.0;
    for (x, w) in grid.points.iter().zip(&grid.weights) {
        let s = f.sample(x);
        n.grad_sq += w * s.grad.iter().flatten().map(|v| v * v).sum::<f64>();
        let d = strain6(&s);
        n.strain_sq += w * dot(&d, &d);
        l6 += w * dot(&s.value, &s.value).powi(3);
    }
    n.l6 = l6.powf(1.0 / 6.0);
    let r = f.rigid();
    n.trace = r.xi.abs() + r.omega.iter().map(|w| w * w).sum::<f64>().sqrt();
    n
}

/// Index of the rotational lifting about `e_axis` in `basis`, if present.
pub fn rotation_index(basis: &ModalBasis, axis: u8) -> Option<usize> {
    basis.index_of(Member::Lifting(Lifting::Rotation(axis)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis, rigid_extension, CutoffSpec, DiscreteField, RigidMotion};
    use crate::quadrature::{RadialGrid, RadialMap};
    use nalgebra::Cholesky;
    use rand::Rng;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn quad() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    #[test]
    fn rotlet_strain_norm_is_four_pi() {
        let b = build_basis(1, 2, 4, &quad()).unwrap();
        let s = assemble_S(&b, &quad()).unwrap();
        let i = rotation_index(&b, 2).unwrap();
        assert!((s.matrix[(i, i)] - 4.0 * PI).abs() < 1e-8 * 4.0 * PI);
        let g = analytic_grid(&quad()).unwrap();
        let direct = strain_pairing(&Rotlet::E3, &Rotlet::E3, &g);
        assert!((direct - 4.0 * PI).abs() < 1e-10);
    }

    #[test]
    fn stokes_translation_dissipation() {
        // (D(U), D(U)) = 3π for the unit translating sphere; drag 2·3π = 6π.
        let g = analytic_grid(&quad()).unwrap();
        let u = StokesTranslation::along_e1(1.0);
        assert!((strain_pairing(&u, &u, &g) - 3.0 * PI).abs() < 1e-10);
    }

    #[test]
    fn strain_gram_is_symmetric_positive_definite() {
        for m in 0..=2 {
            let b = build_basis(m, 3, 4, &quad()).unwrap();
            let s = assemble_S(&b, &quad()).unwrap();
            assert!(s.asymmetry() < 1e-10, "m={m}: {}", s.asymmetry());
            assert!(Cholesky::new(s.matrix.clone()).is_some());
            assert!(!s.underresolved(), "{:?}", s.resolution);
            let zero = DVector::zeros(b.len());
            assert_eq!(s.quadratic(&zero), 0.0);
        }
    }

    #[test]
    fn advection_matrix_is_skew() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for m in 0..=1 {
            let b = build_basis(m, 3, 5, &quad()).unwrap();
            let d1 = assemble_D1(&b, &quad()).unwrap();
            assert!(d1.skewness() <= 1e-12, "m={m}: {}", d1.skewness());
            for _ in 0..100 {
                let u = DVector::from_fn(b.len(), |_, _| rng.gen_range(-1.0..1.0));
                assert!(d1.quadratic(&u).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn advective_pairing_matches_independent_quadrature() {
        let cut = CutoffSpec::default();
        let a = rigid_extension(RigidMotion::new(1.0, [0.0, 0.3, -0.2]), cut).unwrap();
        let b = rigid_extension(RigidMotion::new(-0.5, [0.1, 0.0, 1.0]), cut).unwrap();
        let grid = VolumeGrid::new(&RadialGrid::new(RadialMap::Truncated { outer: 4.0 }, 40).unwrap(), 24, 24).unwrap();
        let q = advective_pairing(&a, &b, &grid);
        // Oracle: finite-difference x₁-derivative of values on a spherical-shell
        // midpoint rule in (r, cos θ, φ).
        let (nr, nc, np) = (240, 120, 64);
        let h = 1e-5;
        let mut oracle = 0.0;
        for ir in 0..nr {
            let r = 1.0 + 3.0 * (ir as f64 + 0.5) / nr as f64;
            for ic in 0..nc {
                let c = -1.0 + 2.0 * (ic as f64 + 0.5) / nc as f64;
                let s = (1.0 - c * c).sqrt();
                for ip in 0..np {
                    let phi = 2.0 * PI * (ip as f64 + 0.5) / np as f64;
                    let x = [r * c, r * s * phi.cos(), r * s * phi.sin()];
                    let xp = [x[0] + h, x[1], x[2]];
                    let xm = [x[0] - h, x[1], x[2]];
                    let (ap, am) = (a.sample(&xp).value, a.sample(&xm).value);
                    let bv = b.sample(&x).value;
                    let d: f64 = (0..3).map(|k| (ap[k] - am[k]) / (2.0 * h) * bv[k]).sum();
                    oracle += d * r * r * (3.0 / nr as f64) * (2.0 / nc as f64) * (2.0 * PI / np as f64);
                }
            }
        }
        assert!((q - oracle).abs() < 1e-3 * q.abs().max(1.0), "{q} vs {oracle}");
        let reverse = advective_pairing(&b, &a, &grid);
        assert!((q + reverse).abs() < 1e-10);
    }

    #[test]
    fn trilinear_vanishes_for_zero_field_and_on_the_diagonal() {
        let b = Arc::new(build_basis(0, 3, 4, &quad()).unwrap());
        let zero = DiscreteField::zeros(b.clone());
        let k = assemble_trilinear(&b, &b, &zero, &quad()).unwrap();
        assert_eq!(k.matrix.amax(), 0.0);
        let grid = VolumeGrid::new(&RadialGrid::new(RadialMap::Truncated { outer: 4.0 }, 40).unwrap(), 24, 16).unwrap();
        let v = rigid_extension(RigidMotion::new(1.0, [0.0; 3]), CutoffSpec::default()).unwrap();
        let skew = convective_pairing(&v, 1.0, &v, &v, &grid);
        // independent evaluation of 2 ∫ V·D(V)·V + ξ (∂₁V, V)
        let mut direct = 0.0;
        for (x, w) in grid.points.iter().zip(&grid.weights) {
            let s = v.sample(x);
            let d = s.strain();
            let mut t = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    t += s.value[i] * d[i][j] * s.value[j];
                }
            }
            direct += w * (2.0 * t + dot(&s.value, &d1_3(&s)));
        }
        assert!((skew - direct).abs() < 1e-8, "{skew} vs {direct}");
    }

    #[test]
    fn trilinear_matches_pointwise_pairing() {
        let b0 = Arc::new(build_basis(0, 2, 3, &quad()).unwrap());
        let b1 = build_basis(1, 2, 3, &quad()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = DVector::from_fn(b0.len(), |_, _| rng.gen_range(-1.0..1.0));
        let v = DiscreteField::new(b0.clone(), c).unwrap();
        let k = assemble_trilinear(&b1, &b1, &v, &quad()).unwrap();
        let grid = quad().volume_grid(2, 3, &[1, 1, 0]).unwrap();
        let samp = |i: usize| {
            let mut e = DVector::zeros(b1.len());
            e[i] = 1.0;
            DiscreteField::new(Arc::new(b1.clone()), e).unwrap()
        };
        for (i, j) in [(0, 0), (0, 3), (5, 2), (7, 9)] {
            let (phi, u) = (samp(i), samp(j));
            let direct = convective_pairing(&u, u.rigid().xi, &v, &phi, &grid);
            assert!((k.matrix[(i, j)] - direct).abs() < 1e-10);
        }
        let check = trilinear_resolution_check(&b1, &b1, &v, &k, &quad()).unwrap();
        assert!(!check.underresolved(), "{check:?}");
    }

    #[test]
    fn nonlinear_form_is_half_the_linearization_on_the_diagonal() {
        let b = Arc::new(build_basis(0, 2, 4, &quad()).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = DVector::from_fn(b.len(), |_, _| rng.gen_range(-1.0..1.0));
        let v = DiscreteField::new(b.clone(), c.clone()).unwrap();
        let n = nonlinear_form(&b, &c, &quad()).unwrap();
        let k = assemble_trilinear(&b, &b, &v, &quad()).unwrap();
        let d1 = assemble_D1(&b, &quad()).unwrap();
        let xi = v.rigid().xi;
        // K_v v = 2 c(v,v,·) + ξ D1 v, N(v) = c(v,v,·) + ξ D1 v
        let expect = (&k.matrix * &c + &d1.matrix * &c * xi) * 0.5;
        assert!((n.clone() - expect).amax() < 1e-10 * n.amax().max(1.0));
        // c(v, v, v) = 0 and vᵀ D1 v = 0 give vᵀ N(v) = 0
        assert!(c.dot(&n).abs() < 1e-10);
    }

    #[test]
    fn selection_rule_is_enforced() {
        let b0 = Arc::new(build_basis(0, 2, 3, &quad()).unwrap());
        let b1 = build_basis(1, 2, 3, &quad()).unwrap();
        let b2 = build_basis(2, 2, 3, &quad()).unwrap();
        let v = DiscreteField::zeros(b0);
        assert!(matches!(
            assemble_trilinear(&b1, &b2, &v, &quad()),
            Err(Error::IncompatibleModes(_))
        ));
    }

    #[test]
    fn g_vector_reads_translational_traces() {
        let b = build_basis(0, 2, 3, &quad()).unwrap();
        let g = assemble_g(&b).unwrap();
        let t = b.translation_index().unwrap();
        assert_eq!(g[t], 1.0);
        assert_eq!(g.iter().filter(|x| **x != 0.0).count(), 1);
        assert!(matches!(
            assemble_g(&build_basis(1, 2, 3, &quad()).unwrap()),
            Err(Error::MissingLifting(_))
        ));
    }

    #[test]
    fn surface_coupling_vanishes_for_rigid_traces() {
        let b = Arc::new(build_basis(1, 2, 3, &quad()).unwrap());
        let surf = SurfaceGrid::new(12, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let c = DVector::from_fn(b.len(), |_, _| rng.gen_range(-1.0..1.0));
            let u = DiscreteField::new(b.clone(), c).unwrap();
            for i in 0..b.len() {
                let mut e = DVector::zeros(b.len());
                e[i] = 1.0;
                let phi = DiscreteField::new(b.clone(), e).unwrap();
                assert!(surface_coupling(&u, &phi, &surf).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batched_surface_couplings_match_pairwise() {
        // off the body and for m = 0 the integrand does not vanish
        let b = Arc::new(build_basis(0, 2, 3, &quad()).unwrap());
        let mut surf = SurfaceGrid::new(6, 8);
        for p in &mut surf.points {
            p.iter_mut().for_each(|c| *c *= 1.7);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = DVector::from_fn(b.len(), |_, _| rng.gen_range(-1.0..1.0));
        let u = DiscreteField::new(b.clone(), c).unwrap();
        let batched = surface_couplings(&u, &surf);
        let scale = batched.amax().max(1e-3);
        for i in 0..b.len() {
            let mut e = DVector::zeros(b.len());
            e[i] = 1.0;
            let phi = DiscreteField::new(b.clone(), e).unwrap();
            assert!((surface_coupling(&u, &phi, &surf) - batched[i]).abs() <= 1e-12 * scale);
        }
        assert!(batched.amax() > 1e-6);
    }

    #[test]
    fn stokes_drag_and_rotlet_torque() {
        let g = analytic_grid(&quad()).unwrap();
        let xi = 0.7;
        let ft = recover_force_torque(&StokesTranslation::along_e1(xi), xi, 0.0, &g);
        assert!((ft.force[0] + 6.0 * PI * xi).abs() < 1e-10);
        assert!(ft.force[1].abs() < 1e-12 && ft.force[2].abs() < 1e-12);
        assert!(ft.torque.iter().all(|t| t.abs() < 1e-12));
        let ft = recover_force_torque(&Rotlet::E3, 0.0, 0.0, &g);
        assert!((ft.torque[2] + 8.0 * PI).abs() < 1e-8);
        assert!(ft.force.iter().all(|f| f.abs() < 1e-10));
        assert!(ft.torque[0].abs() < 1e-12 && ft.torque[1].abs() < 1e-12);
    }

    #[test]
    fn korn_identity_for_homogeneous_fields() {
        let b = Arc::new(build_basis(1, 3, 4, &quad()).unwrap());
        let grid = basis_grid(&quad(), &b).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let c = DVector::from_fn(b.len(), |i, _| match b.members[i] {
                Member::Modal(_) => rng.gen_range(-1.0..1.0),
                Member::Lifting(_) => 0.0,
            });
            let f = DiscreteField::new(b.clone(), c).unwrap();
            let n = field_norms(&f, &grid);
            assert!(n.korn_defect() < 1e-8, "{}", n.korn_defect());
        }
    }

    #[test]
    fn coarse_quadrature_is_flagged() {
        let coarse = QuadratureSpec::default().with_margin(-12);
        let b = build_basis(0, 6, 10, &coarse).unwrap();
        let s = assemble_S(&b, &coarse).unwrap();
        assert!(s.underresolved());
    }

    #[test]
    fn matrix_dump_has_header_and_rows() {
        let b = build_basis(0, 1, 2, &quad()).unwrap();
        let s = assemble_S(&b, &quad()).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().contains(b.fingerprint()));
        assert_eq!(lines.count(), b.len());
    }
}
