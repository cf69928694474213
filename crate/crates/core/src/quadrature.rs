//! Gauss rules for the exterior of the unit sphere.
//!
//! The default radial treatment integrates in `t = 1/r ∈ (0, 1)`. Every basis
//! field is a polynomial in `t` times a polynomial in the unit direction, so
//! with enough nodes the volume rules below are exact for all form integrands.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// How the unbounded radial interval `(1, ∞)` is discretized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RadialMap {
    /// `r = 2 / (1 - s)`, `s ∈ (-1, 1)`; Gauss nodes in `s` (equivalently in `1/r`).
    Algebraic,
    /// Gauss nodes in `r` on `(1, outer)`; the tail beyond `outer` is dropped.
    Truncated { outer: f64 },
}

impl Default for RadialMap {
    fn default() -> Self {
        RadialMap::Algebraic
    }
}

/// Radial collocation radii with weights for `∫_1^∞ f(r) r² dr`.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialGrid {
    pub map: RadialMap,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl RadialGrid {
    pub fn new(map: RadialMap, points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::InvalidResolution(format!(
                "radial grid needs at least 2 points, got {points}"
            )));
        }
        let (s, w) = gauss_legendre(points);
        let (nodes, weights) = match map {
            RadialMap::Algebraic => s
                .iter()
                .zip(&w)
                .map(|(&s, &w)| {
                    // t = (1 - s)/2, dt = ds/2, r² dr = t⁻⁴ dt
                    let t = 0.5 * (1.0 - s);
                    (1.0 / t, 0.5 * w / t.powi(4))
                })
                .unzip(),
            RadialMap::Truncated { outer } => {
                if !(outer > 1.0) {
                    return Err(Error::InvalidResolution(format!(
                        "truncation radius must exceed 1, got {outer}"
                    )));
                }
                let half = 0.5 * (outer - 1.0);
                s.iter()
                    .zip(&w)
                    .map(|(&s, &w)| {
                        let r = 1.0 + half * (s + 1.0);
                        (r, half * w * r * r)
                    })
                    .unzip()
            }
        };
        Ok(RadialGrid {
            map,
            nodes,
            weights,
        })
    }

    /// `∫_1^∞ f(r) r² dr` by the rule.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&r, &w)| w * f(r))
            .sum()
    }
}

/// Tensor-product rule over the exterior domain: radial × Gauss in `cos θ`
/// (polar axis `e₁`) × trapezoid in the azimuth.
#[derive(Clone, Debug)]
pub struct VolumeGrid {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub shape: [usize; 3],
}

impl VolumeGrid {
    pub fn new(radial: &RadialGrid, polar: usize, azimuthal: usize) -> Result<Self> {
        if polar < 1 || azimuthal < 1 {
            return Err(Error::InvalidResolution(
                "angular rule needs at least one point per direction".into(),
            ));
        }
        let (c, wc) = gauss_legendre(polar);
        let dphi = 2.0 * PI / azimuthal as f64;
        let mut points = Vec::with_capacity(radial.nodes.len() * polar * azimuthal);
        let mut weights = Vec::with_capacity(points.capacity());
        for (&r, &wr) in radial.nodes.iter().zip(&radial.weights) {
            for (&ci, &wci) in c.iter().zip(&wc) {
                let si = (1.0 - ci * ci).sqrt();
                for k in 0..azimuthal {
                    let phi = (k as f64 + 0.5) * dphi;
                    points.push([r * ci, r * si * phi.cos(), r * si * phi.sin()]);
                    weights.push(wr * wci * dphi);
                }
            }
        }
        Ok(VolumeGrid {
            points,
            weights,
            shape: [radial.nodes.len(), polar, azimuthal],
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Sizing policy for volume rules.
///
/// Node counts are chosen to integrate products of three basis fields
/// exactly; `margin` adds (or, if negative, removes) radial and polar nodes.
/// The azimuthal rule is already exact, so only a negative margin changes it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    #[serde(default)]
    pub map: RadialMap,
    #[serde(default = "default_margin")]
    pub margin: i32,
}

fn default_margin() -> i32 {
    8
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            map: RadialMap::Algebraic,
            margin: default_margin(),
        }
    }
}

impl QuadratureSpec {
    pub fn with_margin(self, margin: i32) -> Self {
        QuadratureSpec { margin, ..self }
    }

    /// Node counts `[radial, polar, azimuthal]` for fields of degree up to
    /// `max_degree`, radial order `radial`, and azimuthal modes `modes`.
    pub fn counts(&self, max_degree: u32, radial: u32, modes: &[u32]) -> [usize; 3] {
        let clamp = |v: i64, lo: i64| v.max(lo) as usize;
        let nt = clamp(3 * radial as i64 / 2 + 6 + self.margin as i64, 2);
        let nth = clamp(3 * max_degree as i64 / 2 + 4 + self.margin as i64, 1);
        // Scalar contractions of fields with azimuthal wavenumbers mᵢ only carry
        // frequencies ±m₁±m₂±…, and the trapezoid is exact below nphi.
        let sum: i64 = modes.iter().map(|&m| m as i64).sum();
        let nphi = clamp(sum + 1 + self.margin.min(0) as i64 / 2, 1);
        [nt, nth, nphi]
    }

    pub fn volume_grid(&self, max_degree: u32, radial: u32, modes: &[u32]) -> Result<VolumeGrid> {
        self.volume_grid_scaled(max_degree, radial, modes, 1)
    }

    /// As [`Self::volume_grid`] with every node count multiplied by `factor`.
    pub fn volume_grid_scaled(
        &self,
        max_degree: u32,
        radial: u32,
        modes: &[u32],
        factor: usize,
    ) -> Result<VolumeGrid> {
        let [nt, nth, nphi] = self.counts(max_degree, radial, modes);
        VolumeGrid::new(
            &RadialGrid::new(self.map, (nt * factor).max(2))?,
            nth * factor,
            nphi * factor,
        )
    }
}

/// Rule on the unit sphere `|x| = 1`; the outward unit normal of the body is `x`.
#[derive(Clone, Debug)]
pub struct SurfaceGrid {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl SurfaceGrid {
    pub fn new(polar: usize, azimuthal: usize) -> Self {
        let (c, wc) = gauss_legendre(polar);
        let dphi = 2.0 * PI / azimuthal as f64;
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (&ci, &wci) in c.iter().zip(&wc) {
            let si = (1.0 - ci * ci).sqrt();
            for k in 0..azimuthal {
                let phi = (k as f64 + 0.5) * dphi;
                points.push([ci, si * phi.cos(), si * phi.sin()]);
                weights.push(wci * dphi);
            }
        }
        SurfaceGrid { points, weights }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(7);
        for deg in 0..14 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg)).sum();
            let exact = if deg % 2 == 0 { 2.0 / (deg as f64 + 1.0) } else { 0.0 };
            assert!((q - exact).abs() < 1e-14, "degree {deg}: {q} vs {exact}");
        }
    }

    #[test]
    fn radial_nodes_and_weights_are_admissible() {
        let g = RadialGrid::new(RadialMap::Algebraic, 12).unwrap();
        assert!(g.nodes.iter().all(|&r| r > 1.0));
        assert!(g.weights.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn inverse_powers_integrate_exactly() {
        let g = RadialGrid::new(RadialMap::Algebraic, 12).unwrap();
        // ∫_1^∞ r^{-4} dr = 1/3, written against the r² dr weights.
        let q = g.integrate(|r| r.powi(-6));
        assert!((q - 1.0 / 3.0).abs() < 1e-10);
        for k in 4..=26 {
            let q = g.integrate(|r| r.powi(-k));
            let exact = 1.0 / (k as f64 - 3.0);
            assert!((q - exact).abs() <= 1e-12 * exact, "r^-{k}");
        }
    }

    #[test]
    fn truncated_map_converges_for_fast_decay() {
        let a = RadialGrid::new(RadialMap::Truncated { outer: 50.0 }, 60).unwrap();
        let b = RadialGrid::new(RadialMap::Algebraic, 12).unwrap();
        let qa = a.integrate(|r| r.powi(-8));
        let qb = b.integrate(|r| r.powi(-8));
        assert!((qa - qb).abs() < 1e-8);
        assert!(RadialGrid::new(RadialMap::Truncated { outer: 0.5 }, 8).is_err());
    }

    #[test]
    fn volume_rule_measures_shell() {
        let g = RadialGrid::new(RadialMap::Algebraic, 8).unwrap();
        let v = VolumeGrid::new(&g, 6, 8).unwrap();
        // ∫_Ω |x|^{-6} = 4π/3
        let q: f64 = v
            .points
            .iter()
            .zip(&v.weights)
            .map(|(p, w)| w * (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).powi(-3))
            .sum();
        assert!((q - 4.0 * PI / 3.0).abs() < 1e-12);
    }
}
