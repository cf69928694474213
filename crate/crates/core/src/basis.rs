//! Solenoidal modal bases on the exterior of the unit sphere.
//!
//! Coordinates use `e₁` as the polar axis: `x₁ = r cos θ`,
//! `x₂ = r sin θ cos φ`, `x₃ = r sin θ sin φ`. Every basis member is
//! divergence-free by construction:
//!
//! * toroidal members `u = ∇T × x` with `T = h_n(t) tˡ R_lm(x)`,
//! * poloidal members `u = ∇×∇×(P x)` with `P = f_n(t) tˡ R_lm(x)`,
//!
//! where `t = 1/r`, `R_lm` is a regular solid harmonic (a homogeneous
//! polynomial of degree `l`), and the radial profiles
//! `h_n = t²(1-t) P_n(2t-1)`, `f_n = t(1-t)² P_n(2t-1)` vanish on the sphere
//! to the order needed for a zero trace. Rigid boundary motions are carried
//! by lifting fields that are exact Stokes solutions: the translating-sphere
//! flow for `ξ e₁` and rotlets `ω × x / |x|³` for the angular velocity.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::jet::{self, cross, curl, grad, Jet, JetVec};
use crate::quadrature::{QuadratureSpec, VolumeGrid};

/// Velocity and velocity gradient at a point; `grad[i][k] = ∂_k u_i`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FieldSample {
    pub value: [f64; 3],
    pub grad: [[f64; 3]; 3],
}

impl FieldSample {
    pub fn divergence(&self) -> f64 {
        self.grad[0][0] + self.grad[1][1] + self.grad[2][2]
    }

    pub fn strain(&self) -> [[f64; 3]; 3] {
        let g = &self.grad;
        std::array::from_fn(|i| std::array::from_fn(|k| 0.5 * (g[i][k] + g[k][i])))
    }

    pub fn add_scaled(&mut self, other: &FieldSample, s: f64) {
        for i in 0..3 {
            self.value[i] += s * other.value[i];
            for k in 0..3 {
                self.grad[i][k] += s * other.grad[i][k];
            }
        }
    }

    fn from_jets(u: &JetVec) -> Self {
        let (value, grad) = jet::value_and_gradient(u);
        FieldSample { value, grad }
    }
}

/// Anything that can be sampled pointwise in the closure of the exterior domain.
pub trait VectorField: Sync {
    fn sample(&self, x: &[f64; 3]) -> FieldSample;
}

/// Rigid motion of the body: translation `xi e₁` plus rotation `omega`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RigidMotion {
    pub xi: f64,
    pub omega: [f64; 3],
}

impl RigidMotion {
    pub fn new(xi: f64, omega: [f64; 3]) -> Self {
        RigidMotion { xi, omega }
    }

    /// Boundary trace `xi e₁ + omega × x`.
    pub fn trace(&self, x: &[f64; 3]) -> [f64; 3] {
        let w = &self.omega;
        [
            self.xi + w[1] * x[2] - w[2] * x[1],
            w[2] * x[0] - w[0] * x[2],
            w[0] * x[1] - w[1] * x[0],
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.xi.is_finite() && self.omega.iter().all(|w| w.is_finite())
    }

    fn add_scaled(&mut self, other: &RigidMotion, s: f64) {
        self.xi += s * other.xi;
        for k in 0..3 {
            self.omega[k] += s * other.omega[k];
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Toroidal,
    Poloidal,
}

/// Azimuthal factor `cos(mφ)` or `sin(mφ)` of the potential.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trig {
    Cos,
    Sin,
}

/// Real azimuthal sub-block under the reflection `x₃ → -x₃`.
///
/// `Even` holds poloidal-cos and toroidal-sin members (it contains the base
/// flow for `m = 0` and the rotlet about `e₃` for `m = 1`); `Odd` holds the
/// complementary members.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn trig_for(self, family: Family) -> Trig {
        match (self, family) {
            (Parity::Even, Family::Poloidal) | (Parity::Odd, Family::Toroidal) => Trig::Cos,
            _ => Trig::Sin,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModalIndex {
    pub m: u32,
    pub l: u32,
    pub n: u32,
    pub family: Family,
    pub trig: Trig,
}

impl ModalIndex {
    pub fn parity(&self) -> Parity {
        if Parity::Even.trig_for(self.family) == self.trig {
            Parity::Even
        } else {
            Parity::Odd
        }
    }
}

/// Lifting fields that carry the rigid degrees of freedom.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lifting {
    /// Stokes flow of the unit sphere translating with velocity `e₁`.
    Translation,
    /// Rotlet `e_axis × x / |x|³` (axis 0, 1, 2 for `e₁, e₂, e₃`).
    Rotation(u8),
}

impl Lifting {
    fn parity(&self) -> Parity {
        match self {
            Lifting::Translation | Lifting::Rotation(2) => Parity::Even,
            _ => Parity::Odd,
        }
    }

    fn unit_motion(&self) -> RigidMotion {
        match *self {
            Lifting::Translation => RigidMotion::new(1.0, [0.0; 3]),
            Lifting::Rotation(a) => {
                let mut w = [0.0; 3];
                w[a as usize] = 1.0;
                RigidMotion::new(0.0, w)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Member {
    Modal(ModalIndex),
    Lifting(Lifting),
}

impl Member {
    pub fn parity(&self) -> Parity {
        match self {
            Member::Modal(ix) => ix.parity(),
            Member::Lifting(l) => l.parity(),
        }
    }
}

/// Solenoidal basis for one azimuthal wavenumber.
#[derive(Clone, Debug)]
pub struct ModalBasis {
    pub m: u32,
    pub max_degree: u32,
    pub radial: u32,
    pub members: Vec<Member>,
    /// Multiplier applied to each raw member.
    pub scales: Vec<f64>,
    fingerprint: String,
}

/// Build the modal basis for wavenumber `m`: poloidal and toroidal members
/// with `max(m,1) ≤ l ≤ max_degree`, `0 ≤ n < radial`, both azimuthal phases,
/// plus the lifting fields whose rigid motion belongs to mode `m`
/// (translation and axial rotation for `m = 0`, transversal rotations for
/// `m = 1`). Homogeneous members are normalized to `‖D(φ)‖₂ = 1`.
pub fn build_basis(
    m: u32,
    max_degree: u32,
    radial: u32,
    quad: &QuadratureSpec,
) -> Result<ModalBasis> {
    if max_degree < m.max(1) {
        return Err(Error::InvalidResolution(format!(
            "max degree {max_degree} must be at least max(m, 1) = {}",
            m.max(1)
        )));
    }
    if radial < 2 {
        return Err(Error::InvalidResolution(format!(
            "radial resolution must be at least 2, got {radial}"
        )));
    }
    let mut members = Vec::new();
    match m {
        0 => {
            members.push(Member::Lifting(Lifting::Translation));
            members.push(Member::Lifting(Lifting::Rotation(0)));
        }
        1 => {
            members.push(Member::Lifting(Lifting::Rotation(1)));
            members.push(Member::Lifting(Lifting::Rotation(2)));
        }
        _ => {}
    }
    let trigs: &[Trig] = if m == 0 { &[Trig::Cos] } else { &[Trig::Cos, Trig::Sin] };
    for family in [Family::Poloidal, Family::Toroidal] {
        for &trig in trigs {
            for l in m.max(1)..=max_degree {
                for n in 0..radial {
                    members.push(Member::Modal(ModalIndex {
                        m,
                        l,
                        n,
                        family,
                        trig,
                    }));
                }
            }
        }
    }
    let mut basis = ModalBasis::from_parts(m, max_degree, radial, members, None);
    let grid = quad.volume_grid(max_degree, radial, &[m, m])?;
    let norms = basis.strain_norms(&grid);
    for (i, mem) in basis.members.iter().enumerate() {
        if let Member::Modal(_) = mem {
            basis.scales[i] = 1.0 / norms[i].sqrt();
        }
    }
    basis.refresh_fingerprint();
    Ok(basis)
}

impl ModalBasis {
    fn from_parts(
        m: u32,
        max_degree: u32,
        radial: u32,
        members: Vec<Member>,
        scales: Option<Vec<f64>>,
    ) -> Self {
        let n = members.len();
        let mut b = ModalBasis {
            m,
            max_degree,
            radial,
            members,
            scales: scales.unwrap_or_else(|| vec![1.0; n]),
            fingerprint: String::new(),
        };
        b.refresh_fingerprint();
        b
    }

    fn refresh_fingerprint(&mut self) {
        let mut h = Sha256::new();
        h.update(format!("m={} L={} N={};", self.m, self.max_degree, self.radial));
        for (mem, s) in self.members.iter().zip(&self.scales) {
            h.update(format!("{mem:?}:{:016x};", s.to_bits()));
        }
        self.fingerprint = hex::encode(&h.finalize()[..12]);
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// The real sub-block of the given parity.
    pub fn block(&self, parity: Parity) -> ModalBasis {
        self.filter(|mem| mem.parity() == parity)
    }

    /// Drop rotational lifting fields (used for the non-spinning base flow).
    pub fn without_rotations(&self) -> ModalBasis {
        self.filter(|mem| !matches!(mem, Member::Lifting(Lifting::Rotation(_))))
    }

    pub fn filter(&self, keep: impl Fn(&Member) -> bool) -> ModalBasis {
        let (members, scales) = self
            .members
            .iter()
            .zip(&self.scales)
            .filter(|(m, _)| keep(m))
            .map(|(m, s)| (*m, *s))
            .unzip();
        ModalBasis::from_parts(self.m, self.max_degree, self.radial, members, Some(scales))
    }

    /// Same members, every one multiplied by `factor`.
    pub fn rescaled(&self, factor: f64) -> ModalBasis {
        let scales = self.scales.iter().map(|s| s * factor).collect();
        ModalBasis::from_parts(
            self.m,
            self.max_degree,
            self.radial,
            self.members.clone(),
            Some(scales),
        )
    }

    /// Rigid motion carried by member `i`.
    pub fn trace(&self, i: usize) -> RigidMotion {
        match self.members[i] {
            Member::Modal(_) => RigidMotion::default(),
            Member::Lifting(l) => {
                let mut r = RigidMotion::default();
                r.add_scaled(&l.unit_motion(), self.scales[i]);
                r
            }
        }
    }

    pub fn index_of(&self, target: Member) -> Option<usize> {
        self.members.iter().position(|m| *m == target)
    }

    pub fn translation_index(&self) -> Option<usize> {
        self.index_of(Member::Lifting(Lifting::Translation))
    }

    /// Sample every member at `x` into `out` (length `self.len()`).
    pub fn sample_into(&self, x: &[f64; 3], out: &mut [FieldSample]) {
        let ctx = PointContext::new(x, self.m, self.max_degree, self.radial);
        for (i, (mem, s)) in self.members.iter().zip(&self.scales).enumerate() {
            let mut f = match mem {
                Member::Modal(ix) => ctx.modal(ix),
                Member::Lifting(l) => ctx.lifting(*l),
            };
            if *s != 1.0 {
                f.value.iter_mut().for_each(|v| *v *= s);
                f.grad.iter_mut().flatten().for_each(|v| *v *= s);
            }
            out[i] = f;
        }
    }

    pub fn sample_all(&self, x: &[f64; 3]) -> Vec<FieldSample> {
        let mut out = vec![FieldSample::default(); self.len()];
        self.sample_into(x, &mut out);
        out
    }

    fn strain_norms(&self, grid: &VolumeGrid) -> Vec<f64> {
        let mut norms = vec![0.0; self.len()];
        let mut buf = vec![FieldSample::default(); self.len()];
        for (x, w) in grid.points.iter().zip(&grid.weights) {
            self.sample_into(x, &mut buf);
            for (n, f) in norms.iter_mut().zip(&buf) {
                let d = f.strain();
                *n += w * d.iter().flatten().map(|v| v * v).sum::<f64>();
            }
        }
        norms
    }
}

impl fmt::Display for ModalBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ModalBasis(m={}, L={}, N={}, {} members, {})",
            self.m,
            self.max_degree,
            self.radial,
            self.len(),
            self.fingerprint
        )
    }
}

/// Jets shared by all members at one point.
struct PointContext {
    x: JetVec,
    t: Jet,
    t_pows: Vec<Jet>,
    legendre: Vec<Jet>,
    /// Solid harmonics `(cos, sin)` for `l = 0..=max_degree` at fixed `m`.
    harmonics: Vec<(Jet, Jet)>,
}

impl PointContext {
    fn new(p: &[f64; 3], m: u32, max_degree: u32, radial: u32) -> Self {
        let x = [
            Jet::variable(0, p[0]),
            Jet::variable(1, p[1]),
            Jet::variable(2, p[2]),
        ];
        let s = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
        let t = s.inv_sqrt();
        let mut t_pows = vec![Jet::constant(1.0)];
        for k in 1..=(max_degree as usize + 5) {
            t_pows.push(t_pows[k - 1] * t);
        }
        let y = t.scale(2.0) - Jet::constant(1.0);
        let mut legendre = vec![Jet::constant(1.0), y];
        for n in 1..radial as usize {
            let next = (y * legendre[n]).scale((2 * n + 1) as f64) - legendre[n - 1].scale(n as f64);
            legendre.push(next.scale(1.0 / (n + 1) as f64));
        }
        legendre.truncate(radial as usize);
        let harmonics = solid_harmonics(&x, s, m, max_degree);
        PointContext {
            x,
            t,
            t_pows,
            legendre,
            harmonics,
        }
    }

    fn modal(&self, ix: &ModalIndex) -> FieldSample {
        let one = Jet::constant(1.0);
        let q = self.legendre[ix.n as usize];
        let (hc, hs) = self.harmonics[ix.l as usize];
        let angular = match ix.trig {
            Trig::Cos => hc,
            Trig::Sin => hs,
        } * self.t_pows[ix.l as usize];
        let omt = one - self.t;
        match ix.family {
            Family::Toroidal => {
                let h = self.t_pows[2] * omt * q;
                let pot = h * angular;
                FieldSample::from_jets(&cross(&grad(&pot), &self.x))
            }
            Family::Poloidal => {
                let f = self.t * omt * omt * q;
                let pot = f * angular;
                let g = grad(&pot);
                let radial_deriv = self.x[0] * g[0] + self.x[1] * g[1] + self.x[2] * g[2];
                let lap = g[0].d(0) + g[1].d(1) + g[2].d(2);
                let u = std::array::from_fn(|i| radial_deriv.d(i) + g[i] - self.x[i] * lap);
                FieldSample::from_jets(&u)
            }
        }
    }

    fn lifting(&self, l: Lifting) -> FieldSample {
        match l {
            Lifting::Translation => FieldSample::from_jets(&stokes_translation_jets(
                &self.x,
                &self.t_pows,
            )),
            Lifting::Rotation(a) => {
                FieldSample::from_jets(&rotlet_jets(&self.x, self.t_pows[3], a as usize))
            }
        }
    }
}

/// Regular solid harmonics `r^l P_l^m(cos θ) (cos mφ, sin mφ)` as polynomials.
fn solid_harmonics(x: &JetVec, s: Jet, m: u32, max_degree: u32) -> Vec<(Jet, Jet)> {
    let zero = Jet::ZERO;
    let mut out = vec![(zero, zero); max_degree as usize + 1];
    // (x₂ + i x₃)^m (2m-1)!!
    let (mut re, mut im) = (Jet::constant(1.0), Jet::ZERO);
    for _ in 0..m {
        let nre = re * x[1] - im * x[2];
        let nim = re * x[2] + im * x[1];
        re = nre;
        im = nim;
    }
    let dfact: f64 = (1..=m).map(|k| (2 * k - 1) as f64).product();
    let m_us = m as usize;
    if m_us > max_degree as usize {
        return out;
    }
    out[m_us] = (re.scale(dfact), im.scale(dfact));
    let mut prev = (zero, zero);
    for l in m_us..max_degree as usize {
        let cur = out[l];
        let a = (2 * l + 1) as f64;
        let b = (l + m_us) as f64;
        let c = 1.0 / (l - m_us + 1) as f64;
        let next = (
            ((x[0] * cur.0).scale(a) - (s * prev.0).scale(b)).scale(c),
            ((x[0] * cur.1).scale(a) - (s * prev.1).scale(b)).scale(c),
        );
        prev = cur;
        out[l + 1] = next;
    }
    out
}

fn stokes_translation_jets(x: &JetVec, t_pows: &[Jet]) -> JetVec {
    stokes_translation_along(x, t_pows, [1.0, 0.0, 0.0])
}

/// Stokes flow of the unit sphere translating with velocity `a`:
/// `¾ (a/r + (a·x) x/r³) + ¼ (a/r³ - 3 (a·x) x/r⁵)`.
fn stokes_translation_along(x: &JetVec, t_pows: &[Jet], a: [f64; 3]) -> JetVec {
    let (t1, t3, t5) = (t_pows[1], t_pows[3], t_pows[5]);
    let ax = x[0].scale(a[0]) + x[1].scale(a[1]) + x[2].scale(a[2]);
    let radial = ax * (t3.scale(0.75) - t5.scale(0.75));
    let iso = t1.scale(0.75) + t3.scale(0.25);
    std::array::from_fn(|i| x[i] * radial + iso.scale(a[i]))
}

fn rotlet_jets(x: &JetVec, t3: Jet, axis: usize) -> JetVec {
    let mut e = [Jet::ZERO; 3];
    e[axis] = Jet::constant(1.0);
    let c = cross(&e, x);
    [c[0] * t3, c[1] * t3, c[2] * t3]
}

fn point_jets(p: &[f64; 3]) -> (JetVec, Vec<Jet>) {
    let x = [
        Jet::variable(0, p[0]),
        Jet::variable(1, p[1]),
        Jet::variable(2, p[2]),
    ];
    let t = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).inv_sqrt();
    let mut pows = vec![Jet::constant(1.0)];
    for k in 1..=5 {
        pows.push(pows[k - 1] * t);
    }
    (x, pows)
}

/// Exact Stokes flow of the unit sphere translating with velocity `velocity`.
#[derive(Clone, Copy, Debug)]
pub struct StokesTranslation {
    pub velocity: [f64; 3],
}

impl StokesTranslation {
    /// Translation with speed `speed` along the fall direction `e₁`.
    pub fn along_e1(speed: f64) -> Self {
        StokesTranslation {
            velocity: [speed, 0.0, 0.0],
        }
    }
}

impl VectorField for StokesTranslation {
    fn sample(&self, p: &[f64; 3]) -> FieldSample {
        let (x, pows) = point_jets(p);
        FieldSample::from_jets(&stokes_translation_along(&x, &pows, self.velocity))
    }
}

/// Rotlet `H = e_axis × x / |x|³`: the Stokes flow of the unit sphere
/// rotating with unit angular velocity about `e_axis`.
#[derive(Clone, Copy, Debug)]
pub struct Rotlet {
    pub axis: usize,
}

impl Rotlet {
    /// The rotlet about `e₃` used by the symmetry-breaking criterion.
    pub const E3: Rotlet = Rotlet { axis: 2 };
}

impl Rotlet {
    /// `ΔH` at `x`; the rotlet solves the Stokes system with constant pressure.
    pub fn laplacian(&self, p: &[f64; 3]) -> [f64; 3] {
        let (x, pows) = point_jets(p);
        let h = rotlet_jets(&x, pows[3], self.axis);
        std::array::from_fn(|i| (0..3).map(|k| h[i].d(k).d(k).value()).sum())
    }
}

impl VectorField for Rotlet {
    fn sample(&self, p: &[f64; 3]) -> FieldSample {
        let (x, pows) = point_jets(p);
        FieldSample::from_jets(&rotlet_jets(&x, pows[3], self.axis))
    }
}

/// Cutoff `ζ(|x|)`: 1 on `[1, inner]`, 0 beyond `outer`, C³ polynomial blend.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub inner: f64,
    pub outer: f64,
}

impl Default for CutoffSpec {
    fn default() -> Self {
        CutoffSpec {
            inner: 2.0,
            outer: 4.0,
        }
    }
}

impl CutoffSpec {
    /// `ζ` and its first three derivatives in `r`.
    fn profile(&self, r: f64) -> [f64; 4] {
        if r <= self.inner {
            return [1.0, 0.0, 0.0, 0.0];
        }
        if r >= self.outer {
            return [0.0; 4];
        }
        let w = self.outer - self.inner;
        let s = (r - self.inner) / w;
        // 1 - (35 s⁴ - 84 s⁵ + 70 s⁶ - 20 s⁷)
        let p = 35.0 * s.powi(4) - 84.0 * s.powi(5) + 70.0 * s.powi(6) - 20.0 * s.powi(7);
        let d1 = 140.0 * s.powi(3) - 420.0 * s.powi(4) + 420.0 * s.powi(5) - 140.0 * s.powi(6);
        let d2 = 420.0 * s.powi(2) - 1680.0 * s.powi(3) + 2100.0 * s.powi(4) - 840.0 * s.powi(5);
        let d3 = 840.0 * s - 5040.0 * s.powi(2) + 8400.0 * s.powi(3) - 4200.0 * s.powi(4);
        [1.0 - p, -d1 / w, -d2 / (w * w), -d3 / (w * w * w)]
    }
}

/// Compactly supported solenoidal extension of a rigid boundary motion:
/// `V = -½ curl[curl(ζ ξ e₁ x₂²) + ζ |x|² ω]`.
#[derive(Clone, Copy, Debug)]
pub struct RigidExtension {
    pub rigid: RigidMotion,
    pub cutoff: CutoffSpec,
}

pub fn rigid_extension(rigid: RigidMotion, cutoff: CutoffSpec) -> Result<RigidExtension> {
    if !(cutoff.inner >= 1.0 && cutoff.inner < cutoff.outer) {
        return Err(Error::InvalidInput(format!(
            "cutoff needs 1 <= inner < outer, got inner = {}, outer = {}",
            cutoff.inner, cutoff.outer
        )));
    }
    if !rigid.is_finite() {
        return Err(Error::InvalidInput("rigid motion must be finite".into()));
    }
    Ok(RigidExtension { rigid, cutoff })
}

impl VectorField for RigidExtension {
    fn sample(&self, p: &[f64; 3]) -> FieldSample {
        let x = [
            Jet::variable(0, p[0]),
            Jet::variable(1, p[1]),
            Jet::variable(2, p[2]),
        ];
        let s = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
        let r0 = s.value().sqrt();
        let r = s.compose([
            r0,
            0.5 / r0,
            -0.25 / (r0 * r0 * r0),
            0.375 / (r0 * r0 * r0 * r0 * r0),
        ]);
        let zeta = r.compose(self.cutoff.profile(r0));
        let a = zeta * x[1] * x[1] * self.rigid.xi;
        // curl(a e₁) = (0, ∂₃a, -∂₂a)
        let inner_curl = [Jet::ZERO, a.d(2), -a.d(1)];
        let b = zeta * s;
        let w: JetVec = std::array::from_fn(|i| inner_curl[i] + b.scale(self.rigid.omega[i]));
        let v = curl(&w);
        FieldSample::from_jets(&[v[0].scale(-0.5), v[1].scale(-0.5), v[2].scale(-0.5)])
    }
}

/// A finite expansion over one modal basis.
#[derive(Clone, Debug)]
pub struct DiscreteField {
    pub basis: Arc<ModalBasis>,
    pub coeffs: DVector<f64>,
}

impl DiscreteField {
    pub fn new(basis: Arc<ModalBasis>, coeffs: DVector<f64>) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return Err(Error::InvalidInput(format!(
                "coefficient vector has length {}, basis has {} members",
                coeffs.len(),
                basis.len()
            )));
        }
        Ok(DiscreteField { basis, coeffs })
    }

    pub fn zeros(basis: Arc<ModalBasis>) -> Self {
        let n = basis.len();
        DiscreteField {
            basis,
            coeffs: DVector::zeros(n),
        }
    }

    pub fn mode(&self) -> u32 {
        self.basis.m
    }

    /// Rigid motion of the trace, read from the lifting coefficients.
    pub fn rigid(&self) -> RigidMotion {
        let mut r = RigidMotion::default();
        for (i, c) in self.coeffs.iter().enumerate() {
            if let Member::Lifting(_) = self.basis.members[i] {
                r.add_scaled(&self.basis.trace(i), *c);
            }
        }
        r
    }
}

impl VectorField for DiscreteField {
    fn sample(&self, x: &[f64; 3]) -> FieldSample {
        let samples = self.basis.sample_all(x);
        let mut out = FieldSample::default();
        for (f, c) in samples.iter().zip(self.coeffs.iter()) {
            if *c != 0.0 {
                out.add_scaled(f, *c);
            }
        }
        out
    }
}

/// Sum of fields, possibly from different azimuthal modes.
pub struct Superposition<'a>(pub Vec<&'a dyn VectorField>);

impl VectorField for Superposition<'_> {
    fn sample(&self, x: &[f64; 3]) -> FieldSample {
        let mut out = FieldSample::default();
        for f in &self.0 {
            out.add_scaled(&f.sample(x), 1.0);
        }
        out
    }
}

/// Pointwise velocities; points inside the body are rejected.
pub fn evaluate_field(f: &dyn VectorField, points: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
    points
        .iter()
        .map(|p| {
            let radius = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            if radius < 1.0 - 1e-14 {
                Err(Error::PointInsideBody { point: *p, radius })
            } else {
                Ok(f.sample(p).value)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::QuadratureSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, count: usize, rmin: f64, rmax: f64) -> Vec<[f64; 3]> {
        (0..count)
            .map(|_| {
                let r = rng.gen_range(rmin..rmax);
                let c: f64 = rng.gen_range(-1.0..1.0);
                let phi = rng.gen_range(0.0..std::f64::consts::TAU);
                let s = (1.0 - c * c).sqrt();
                [r * c, r * s * phi.cos(), r * s * phi.sin()]
            })
            .collect()
    }

    fn unit_sphere(rng: &mut ChaCha8Rng, count: usize) -> Vec<[f64; 3]> {
        random_points(rng, count, 1.0, 2.0)
            .into_iter()
            .map(|p| {
                let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                [p[0] / r, p[1] / r, p[2] / r]
            })
            .collect()
    }

    fn magnitude(f: &FieldSample) -> f64 {
        let v: f64 = f.value.iter().map(|x| x * x).sum::<f64>();
        let g: f64 = f.grad.iter().flatten().map(|x| x * x).sum::<f64>();
        (v + g).sqrt()
    }

    #[test]
    fn every_member_is_solenoidal() {
        let quad = QuadratureSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for m in 0..=2 {
            let b = build_basis(m, 3, 4, &quad).unwrap();
            for p in random_points(&mut rng, 100, 1.0, 6.0) {
                for f in b.sample_all(&p) {
                    assert!(f.divergence().abs() <= 1e-8 * magnitude(&f).max(1e-300));
                }
            }
        }
    }

    #[test]
    fn homogeneous_members_vanish_on_the_body_and_liftings_match_rigid_traces() {
        let quad = QuadratureSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in 0..=1 {
            let b = build_basis(m, 3, 4, &quad).unwrap();
            for p in unit_sphere(&mut rng, 50) {
                for (i, f) in b.sample_all(&p).iter().enumerate() {
                    let expect = b.trace(i).trace(&p);
                    for k in 0..3 {
                        assert!((f.value[k] - expect[k]).abs() < 1e-12, "{:?}", b.members[i]);
                    }
                }
            }
        }
    }

    #[test]
    fn lifting_field_counts_per_mode() {
        let quad = QuadratureSpec::default();
        let b0 = build_basis(0, 2, 8, &quad).unwrap();
        let count = |b: &ModalBasis| {
            b.members
                .iter()
                .filter(|m| matches!(m, Member::Lifting(_)))
                .count()
        };
        assert_eq!(count(&b0), 2);
        let b1 = build_basis(1, 2, 8, &quad).unwrap();
        assert_eq!(count(&b1), 2);
        assert!(b1
            .members
            .iter()
            .all(|m| !matches!(m, Member::Lifting(Lifting::Translation))));
        assert_eq!(count(&build_basis(2, 2, 3, &quad).unwrap()), 0);
    }

    #[test]
    fn invalid_resolution_is_rejected() {
        let quad = QuadratureSpec::default();
        assert!(build_basis(2, 1, 4, &quad).is_err());
        assert!(build_basis(0, 0, 4, &quad).is_err());
        assert!(build_basis(0, 2, 1, &quad).is_err());
    }

    #[test]
    fn smaller_basis_embeds_by_zero_padding() {
        let quad = QuadratureSpec::default();
        let small = build_basis(0, 2, 8, &quad).unwrap();
        let large = build_basis(0, 4, 16, &quad).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let pts = random_points(&mut rng, 20, 1.0, 8.0);
        for (i, mem) in small.members.iter().enumerate() {
            let j = large.index_of(*mem).expect("member present in larger basis");
            let ratio = small.scales[i] / large.scales[j];
            for p in &pts {
                let a = small.sample_all(p)[i].value;
                let b = large.sample_all(p)[j].value;
                for k in 0..3 {
                    assert!((a[k] - ratio * b[k]).abs() <= 1e-10 * a[k].abs().max(1e-3));
                }
            }
        }
    }

    #[test]
    fn rotlet_solves_stokes_with_constant_pressure() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for p in random_points(&mut rng, 50, 1.0, 10.0) {
            let lap = Rotlet::E3.laplacian(&p);
            assert!(lap.iter().all(|v| v.abs() < 1e-10));
            assert!(Rotlet::E3.sample(&p).divergence().abs() < 1e-12);
        }
        for p in unit_sphere(&mut rng, 50) {
            let v = Rotlet::E3.sample(&p).value;
            let e = [-p[1], p[0], 0.0];
            assert!((0..3).all(|k| (v[k] - e[k]).abs() < 1e-12));
        }
    }

    #[test]
    fn rotlet_values() {
        let h = Rotlet::E3;
        let v = evaluate_field(&h, &[[0.0, 0.0, 2.0], [2.0, 0.0, 0.0]]).unwrap();
        assert_eq!(v[0], [0.0, 0.0, 0.0]);
        assert!((v[1][1] - 0.25).abs() < 1e-15);
        assert!(v[1][0].abs() < 1e-15 && v[1][2].abs() < 1e-15);
        assert!(evaluate_field(&h, &[[0.5, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn zero_field_evaluates_to_zero() {
        let quad = QuadratureSpec::default();
        let b = Arc::new(build_basis(0, 2, 3, &quad).unwrap());
        let f = DiscreteField::zeros(b);
        for v in evaluate_field(&f, &[[1.5, 0.2, 0.3], [0.0, 3.0, 0.0]]).unwrap() {
            assert_eq!(v, [0.0; 3]);
        }
    }

    #[test]
    fn rigid_extension_traces_and_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cut = CutoffSpec::default();
        let e1 = rigid_extension(RigidMotion::new(1.0, [0.0; 3]), cut).unwrap();
        for p in unit_sphere(&mut rng, 20) {
            let v = e1.sample(&p).value;
            assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12 && v[2].abs() < 1e-12);
        }
        for p in random_points(&mut rng, 20, 4.0, 8.0) {
            assert_eq!(e1.sample(&p).value, [0.0; 3]);
        }
        let zero = rigid_extension(RigidMotion::default(), cut).unwrap();
        for p in random_points(&mut rng, 20, 1.0, 5.0) {
            assert_eq!(magnitude(&zero.sample(&p)), 0.0);
        }
        let spin = rigid_extension(RigidMotion::new(0.0, [0.0, 0.0, 1.0]), cut).unwrap();
        for p in unit_sphere(&mut rng, 20) {
            let v = spin.sample(&p).value;
            let expect = [-p[1], p[0], 0.0];
            for k in 0..3 {
                assert!((v[k] - expect[k]).abs() < 1e-12);
            }
        }
        for p in random_points(&mut rng, 200, 1.0, 4.5) {
            let f = spin.sample(&p);
            assert!(f.divergence().abs() <= 1e-8 * magnitude(&f).max(1.0));
        }
        assert!(rigid_extension(RigidMotion::default(), CutoffSpec { inner: 3.0, outer: 3.0 }).is_err());
    }

    #[test]
    fn random_rigid_traces_are_reproduced() {
        let quad = QuadratureSpec::default();
        let b0 = Arc::new(build_basis(0, 2, 3, &quad).unwrap());
        let b1 = Arc::new(build_basis(1, 2, 3, &quad).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let mut c0 = DVector::from_fn(b0.len(), |_, _| rng.gen_range(-1.0..1.0));
            let mut c1 = DVector::from_fn(b1.len(), |_, _| rng.gen_range(-1.0..1.0));
            let xi = rng.gen_range(-1.0..1.0);
            let w: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            c0[b0.translation_index().unwrap()] = xi;
            c0[b0.index_of(Member::Lifting(Lifting::Rotation(0))).unwrap()] = w[0];
            c1[b1.index_of(Member::Lifting(Lifting::Rotation(1))).unwrap()] = w[1];
            c1[b1.index_of(Member::Lifting(Lifting::Rotation(2))).unwrap()] = w[2];
            let f0 = DiscreteField::new(b0.clone(), c0).unwrap();
            let f1 = DiscreteField::new(b1.clone(), c1).unwrap();
            let total = Superposition(vec![&f0, &f1]);
            let rigid = RigidMotion::new(xi, w);
            for p in unit_sphere(&mut rng, 50) {
                let v = total.sample(&p).value;
                let e = rigid.trace(&p);
                for k in 0..3 {
                    assert!((v[k] - e[k]).abs() < 1e-8);
                }
            }
        }
    }
}
