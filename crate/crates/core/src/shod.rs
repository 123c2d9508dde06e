//! Complex spherical-harmonic basis for the synthesis element model, its
//! angular derivatives, and a product quadrature on the sphere.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::scene::Aod;
use crate::{Error, Result, C64};

/// Below this value of `1 − cos²θ_el` the elevation derivative is set to zero.
pub const POLE_THRESHOLD: f64 = 1e-10;

/// The first `Q` complex spherical harmonics in the order
/// `(0,0), (1,−1), (1,0), (1,1), (2,−2), …`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ShodBasisRepr", into = "ShodBasisRepr")]
pub struct ShodBasis {
    q: usize,
    ordering: Vec<(usize, i64)>,
}

#[derive(Serialize, Deserialize)]
struct ShodBasisRepr {
    q: usize,
}

impl TryFrom<ShodBasisRepr> for ShodBasis {
    type Error = Error;
    fn try_from(r: ShodBasisRepr) -> Result<Self> {
        ShodBasis::new(r.q)
    }
}

impl From<ShodBasis> for ShodBasisRepr {
    fn from(b: ShodBasis) -> Self {
        Self { q: b.q }
    }
}

impl ShodBasis {
    pub fn new(q: usize) -> Result<Self> {
        if q == 0 {
            return Err(Error::Domain("basis size Q must be positive".into()));
        }
        let mut ordering = Vec::with_capacity(q);
        let mut l = 0usize;
        'outer: loop {
            for m in -(l as i64)..=(l as i64) {
                if ordering.len() == q {
                    break 'outer;
                }
                ordering.push((l, m));
            }
            l += 1;
        }
        Ok(Self { q, ordering })
    }

    pub fn len(&self) -> usize {
        self.q
    }

    pub fn is_empty(&self) -> bool {
        self.q == 0
    }

    pub fn ordering(&self) -> &[(usize, i64)] {
        &self.ordering
    }

    pub fn max_degree(&self) -> usize {
        self.ordering.last().map(|p| p.0).unwrap_or(0)
    }

    /// True when `Q = (L+1)²`.
    pub fn is_complete_band(&self) -> bool {
        let l = self.max_degree();
        self.q == (l + 1) * (l + 1)
    }

    /// `b(θ)`.
    pub fn evaluate(&self, aod: &Aod) -> Vec<C64> {
        let table = LegendreTable::new(self.max_degree(), aod.el);
        self.ordering
            .iter()
            .map(|&(l, m)| harmonic(&table, l, m, aod.az).0)
            .collect()
    }

    /// `(∂b/∂θ_el, ∂b/∂θ_az)`.
    pub fn evaluate_partials(&self, aod: &Aod) -> (Vec<C64>, Vec<C64>) {
        let table = LegendreTable::new(self.max_degree(), aod.el);
        let mut d_el = Vec::with_capacity(self.q);
        let mut d_az = Vec::with_capacity(self.q);
        for &(l, m) in &self.ordering {
            let (y, dy) = harmonic(&table, l, m, aod.az);
            d_el.push(dy);
            d_az.push(C64::new(0.0, m as f64) * y);
        }
        (d_el, d_az)
    }

    /// Value and both partials in one pass.
    pub fn evaluate_all(&self, aod: &Aod) -> (Vec<C64>, Vec<C64>, Vec<C64>) {
        let table = LegendreTable::new(self.max_degree(), aod.el);
        let mut v = Vec::with_capacity(self.q);
        let mut d_el = Vec::with_capacity(self.q);
        let mut d_az = Vec::with_capacity(self.q);
        for &(l, m) in &self.ordering {
            let (y, dy) = harmonic(&table, l, m, aod.az);
            v.push(y);
            d_el.push(dy);
            d_az.push(C64::new(0.0, m as f64) * y);
        }
        (v, d_el, d_az)
    }

    /// `∫ b bᴴ dΩ` evaluated with the given quadrature.
    pub fn gram_matrix(&self, quad: &SphereQuadrature) -> DMatrix<C64> {
        let mut g = DMatrix::<C64>::zeros(self.q, self.q);
        for (node, &w) in quad.nodes.iter().zip(&quad.weights) {
            let b = self.evaluate(node);
            for i in 0..self.q {
                for j in 0..self.q {
                    g[(i, j)] += b[i] * b[j].conj() * w;
                }
            }
        }
        g
    }
}

/// Normalized associated Legendre values `P̄_ℓ^m(cos θ)` (no Condon–Shortley
/// phase, `∫|P̄_ℓ^m|² e^{…}` normalized to the unit sphere) and their
/// `θ`-derivatives for `0 ≤ m ≤ ℓ ≤ L`.
struct LegendreTable {
    p: Vec<f64>,
    dp: Vec<f64>,
}

fn tri(l: usize, m: usize) -> usize {
    l * (l + 1) / 2 + m
}

impl LegendreTable {
    fn new(lmax: usize, theta: f64) -> Self {
        let (s, x) = theta.sin_cos();
        let s = s.abs();
        let n = tri(lmax, lmax) + 1;
        let mut p = vec![0.0; n];
        p[0] = 1.0 / (4.0 * PI).sqrt();
        for m in 1..=lmax {
            let mf = m as f64;
            p[tri(m, m)] = ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * s * p[tri(m - 1, m - 1)];
        }
        for m in 0..lmax {
            p[tri(m + 1, m)] = (2.0 * m as f64 + 3.0).sqrt() * x * p[tri(m, m)];
        }
        for m in 0..=lmax {
            let mf = m as f64;
            for l in (m + 2)..=lmax {
                let lf = l as f64;
                let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
                let b = (((lf - 1.0).powi(2) - mf * mf) / (4.0 * (lf - 1.0).powi(2) - 1.0)).sqrt();
                p[tri(l, m)] = a * (x * p[tri(l - 1, m)] - b * p[tri(l - 2, m)]);
            }
        }
        let mut dp = vec![0.0; n];
        if (1.0 - x * x).abs() >= POLE_THRESHOLD {
            for l in 1..=lmax {
                let lf = l as f64;
                for m in 0..=l {
                    let mf = m as f64;
                    let lower = if m < l {
                        ((2.0 * lf + 1.0) / (2.0 * lf - 1.0) * (lf * lf - mf * mf)).sqrt()
                            * p[tri(l - 1, m)]
                    } else {
                        0.0
                    };
                    dp[tri(l, m)] = (lf * x * p[tri(l, m)] - lower) / s;
                }
            }
        }
        Self { p, dp }
    }
}

/// `Y_ℓ^m` and `∂Y_ℓ^m/∂θ_el`.
fn harmonic(table: &LegendreTable, l: usize, m: i64, az: f64) -> (C64, C64) {
    let ma = m.unsigned_abs() as usize;
    let idx = tri(l, ma);
    let phase = C64::from_polar(1.0, m as f64 * az);
    // Y_ℓ^m = (−1)^m P̄ e^{jmφ} for m ≥ 0 and Y_ℓ^{−m} = (−1)^m conj(Y_ℓ^m).
    let sign = if m > 0 && ma % 2 == 1 { -1.0 } else { 1.0 };
    (phase * (sign * table.p[idx]), phase * (sign * table.dp[idx]))
}

/// Product rule on the unit sphere: Gauss–Legendre in `cos θ_el` times a
/// uniform rule in `θ_az`.
#[derive(Clone, Debug)]
pub struct SphereQuadrature {
    pub nodes: Vec<Aod>,
    /// Steradians.
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl SphereQuadrature {
    /// Rule that integrates every spherical polynomial of degree `≤ degree` exactly.
    pub fn exact_to_degree(degree: usize) -> Self {
        let n_el = degree / 2 + 1;
        let n_az = degree + 1;
        let gl = GaussLegendre::new(NonZeroUsize::new(n_el).expect("at least one node"));
        let mut nodes = Vec::with_capacity(n_el * n_az);
        let mut weights = Vec::with_capacity(n_el * n_az);
        let daz = 2.0 * PI / n_az as f64;
        for &(x, w) in gl.as_node_weight_pairs() {
            let el = x.clamp(-1.0, 1.0).acos();
            for k in 0..n_az {
                nodes.push(Aod::new(el, -PI + daz * k as f64));
                weights.push(w * daz);
            }
        }
        Self { nodes, weights, degree }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: FnMut(&Aod) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(n, w)| w * f(n)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn fd_el(basis: &ShodBasis, aod: &Aod, h: f64) -> Vec<C64> {
        let p = basis.evaluate(&Aod::new(aod.el + h, aod.az));
        let m = basis.evaluate(&Aod::new(aod.el - h, aod.az));
        p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * h)).collect()
    }

    #[test]
    fn ordering() {
        let b = ShodBasis::new(6).unwrap();
        assert_eq!(b.ordering(), &[(0, 0), (1, -1), (1, 0), (1, 1), (2, -2), (2, -1)]);
        assert!(ShodBasis::new(9).unwrap().is_complete_band());
        assert!(!b.is_complete_band());
        assert!(ShodBasis::new(0).is_err());
    }

    #[test]
    fn known_values() {
        let q1 = ShodBasis::new(1).unwrap();
        let v = q1.evaluate(&Aod::new(1.1, -2.0));
        assert_relative_eq!(v[0].re, 0.282_094_791_773_878_1, epsilon = 1e-15);
        let b = ShodBasis::new(4).unwrap();
        let top = b.evaluate(&Aod::new(0.0, 0.3));
        assert_relative_eq!(top[2].re, (3.0 / (4.0 * PI)).sqrt(), epsilon = 1e-15);
        let side = b.evaluate(&Aod::new(PI / 2.0, 0.0));
        assert_relative_eq!(side[3].re, -(3.0 / (8.0 * PI)).sqrt(), epsilon = 1e-15);
        assert_relative_eq!(side[1].re, (3.0 / (8.0 * PI)).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn degree_two_closed_forms() {
        let b = ShodBasis::new(9).unwrap();
        let aod = Aod::new(0.7, 1.3);
        let v = b.evaluate(&aod);
        let (s, c) = aod.el.sin_cos();
        let y20 = (5.0 / (16.0 * PI)).sqrt() * (3.0 * c * c - 1.0);
        let y21 = -(15.0 / (8.0 * PI)).sqrt() * s * c * C64::from_polar(1.0, aod.az);
        let y22 = (15.0 / (32.0 * PI)).sqrt() * s * s * C64::from_polar(1.0, 2.0 * aod.az);
        assert!((v[6] - y20).norm() < 1e-14);
        assert!((v[7] - y21).norm() < 1e-14);
        assert!((v[8] - y22).norm() < 1e-14);
    }

    #[test]
    fn gram_is_identity() {
        for q in [1usize, 4, 9, 16, 25] {
            let b = ShodBasis::new(q).unwrap();
            let quad = SphereQuadrature::exact_to_degree(2 * b.max_degree());
            let g = b.gram_matrix(&quad);
            let err = (g - DMatrix::<C64>::identity(q, q)).iter().map(|x| x.norm()).fold(0.0, f64::max);
            assert!(err < 1e-12, "Q={q}: {err}");
        }
    }

    #[test]
    fn quadrature_weights_sum() {
        for d in [0usize, 3, 8, 16] {
            let q = SphereQuadrature::exact_to_degree(d);
            assert_relative_eq!(q.weights.iter().sum::<f64>(), 4.0 * PI, epsilon = 1e-12);
        }
    }

    #[test]
    fn derivatives_vanish_at_poles() {
        let b = ShodBasis::new(16).unwrap();
        let (d_el, _) = b.evaluate_partials(&Aod::new(0.0, 0.4));
        assert!(d_el.iter().all(|x| x.norm() == 0.0));
        let (d_el, _) = b.evaluate_partials(&Aod::new(PI, 0.4));
        assert!(d_el.iter().all(|x| x.norm() == 0.0));
    }

    proptest! {
        #[test]
        fn addition_theorem(el in 0.0..PI, az in -PI..PI, l in 0usize..4) {
            let q = (l + 1) * (l + 1);
            let b = ShodBasis::new(q).unwrap();
            let v = b.evaluate(&Aod::new(el, az));
            let norm: f64 = v.iter().map(|x| x.norm_sqr()).sum();
            prop_assert!((norm - q as f64 / (4.0 * PI)).abs() < 1e-10);
        }

        #[test]
        fn conjugation_symmetry(el in 0.0..PI, az in -PI..PI) {
            let b = ShodBasis::new(25).unwrap();
            let v = b.evaluate(&Aod::new(el, az));
            for (k, &(l, m)) in b.ordering().iter().enumerate() {
                if m > 0 {
                    let neg = b.ordering().iter().position(|&p| p == (l, -m)).unwrap();
                    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                    prop_assert!((v[neg] - v[k].conj() * sign).norm() < 1e-14);
                }
            }
        }

        #[test]
        fn partials_match_finite_differences(el in 5f64.to_radians()..175f64.to_radians(), az in -PI..PI) {
            let b = ShodBasis::new(16).unwrap();
            let aod = Aod::new(el, az);
            let (d_el, d_az) = b.evaluate_partials(&aod);
            let fd = fd_el(&b, &aod, 1e-6);
            let p = b.evaluate(&Aod::new(el, az + 1e-6));
            let m = b.evaluate(&Aod::new(el, az - 1e-6));
            let scale = b.evaluate(&aod).iter().map(|x| x.norm()).fold(0.0, f64::max);
            for k in 0..16 {
                prop_assert!((d_el[k] - fd[k]).norm() < 1e-5 * scale.max(d_el[k].norm()));
                let fa = (p[k] - m[k]) / 2e-6;
                prop_assert!((d_az[k] - fa).norm() < 1e-5 * scale.max(d_az[k].norm()));
            }
        }
    }
}
