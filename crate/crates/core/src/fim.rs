//! Fisher information of the LOS channel parameters, transformation to the
//! position domain and the position error bound.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3, Matrix5, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::response::{ResponseBundle, ResponseModel};
use crate::scene::{compute_aod, distance, dot_t, PathComponent, Scenario, SPEED_OF_LIGHT};
use crate::{Error, Result, C64};

/// Reciprocal condition number below which a FIM is treated as singular.
pub const RCOND_THRESHOLD: f64 = 1e-14;

/// The matrix `K[x][y] = c_xᵀ W c_y*` over the three response vectors; the
/// FIM depends on `W` only through it.
pub type ResponseGram = [[C64; 3]; 3];

/// `K` for a dense covariance `W`.
pub fn response_gram_dense(bundle: &ResponseBundle, w: &DMatrix<C64>) -> Result<ResponseGram> {
    let n = bundle.c1.len();
    if w.nrows() != n || w.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, found: w.nrows() });
    }
    let cs = bundle.all();
    let mut k = [[C64::new(0.0, 0.0); 3]; 3];
    for y in 0..3 {
        let wy: Vec<C64> = (0..n)
            .map(|r| (0..n).map(|c| w[(r, c)] * cs[y][c].conj()).sum())
            .collect();
        for x in 0..3 {
            k[x][y] = dot_t(cs[x], &wy);
        }
    }
    Ok(k)
}

/// `K` for `W = Σ_t w_t w_tᴴ`.
pub fn response_gram_codewords(bundle: &ResponseBundle, codewords: &[Vec<C64>]) -> Result<ResponseGram> {
    let n = bundle.c1.len();
    let cs = bundle.all();
    let mut k = [[C64::new(0.0, 0.0); 3]; 3];
    for w in codewords {
        if w.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: w.len() });
        }
        let proj = [dot_t(cs[0], w), dot_t(cs[1], w), dot_t(cs[2], w)];
        for x in 0..3 {
            for y in 0..3 {
                k[x][y] += proj[x] * proj[y].conj();
            }
        }
    }
    Ok(k)
}

/// LOS channel parameters `γ = [θ_el, θ_az, τ, ρ, φ]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LosParameters {
    pub el: f64,
    pub az: f64,
    pub tau: f64,
    pub rho: f64,
    pub phi: f64,
}

impl From<&PathComponent> for LosParameters {
    fn from(p: &PathComponent) -> Self {
        Self { el: p.aod.el, az: p.aod.az, tau: p.delay, rho: p.gain_modulus, phi: p.gain_phase }
    }
}

/// Channel-domain FIM from `K`, assembled entrywise from the derivatives
/// of `√P α d(τ) c(θ)ᵀ w_t`:
/// `J_ij = (2P/σ²) Re{κ_i* κ_j (v_iᴴ v_j) K[b_j][b_i]}`.
pub fn fim_channel_from_gram(k: &ResponseGram, scenario: &Scenario, los: &LosParameters) -> Result<Matrix5<f64>> {
    if !(los.rho > 0.0) {
        return Err(Error::SingularParameterization(
            "LOS gain modulus is zero; the phase is unidentifiable".into(),
        ));
    }
    let n = scenario.num_subcarriers as f64;
    let df = scenario.subcarrier_spacing;
    let ns_dot = C64::new(0.0, -2.0 * PI * df * n * (n - 1.0) / 2.0);
    let dd = (2.0 * PI * df).powi(2) * (n - 1.0) * n * (2.0 * n - 1.0) / 6.0;
    // (v = delay vector or its derivative, κ, response index) per parameter.
    let alpha = C64::from_polar(los.rho, los.phi);
    let spec: [(bool, C64, usize); 5] = [
        (false, alpha, 1),
        (false, alpha, 2),
        (true, alpha, 0),
        (false, C64::from_polar(1.0, los.phi), 0),
        (false, C64::new(0.0, 1.0) * alpha, 0),
    ];
    let inner = |di: bool, dj: bool| -> C64 {
        match (di, dj) {
            (false, false) => C64::new(n, 0.0),
            (false, true) => ns_dot,
            (true, false) => ns_dot.conj(),
            (true, true) => C64::new(dd, 0.0),
        }
    };
    let scale = 2.0 * scenario.transmit_power / scenario.noise_variance();
    let mut j = Matrix5::zeros();
    for a in 0..5 {
        for b in a..5 {
            let (va, ka, ra) = spec[a];
            let (vb, kb, rb) = spec[b];
            let v = scale * (ka.conj() * kb * inner(va, vb) * k[rb][ra]).re;
            j[(a, b)] = v;
            j[(b, a)] = v;
        }
    }
    Ok(j)
}

pub fn fim_channel_dense(
    bundle: &ResponseBundle,
    w: &DMatrix<C64>,
    scenario: &Scenario,
    los: &LosParameters,
) -> Result<Matrix5<f64>> {
    fim_channel_from_gram(&response_gram_dense(bundle, w)?, scenario, los)
}

pub fn fim_channel_codewords(
    bundle: &ResponseBundle,
    codewords: &[Vec<C64>],
    scenario: &Scenario,
    los: &LosParameters,
) -> Result<Matrix5<f64>> {
    fim_channel_from_gram(&response_gram_codewords(bundle, codewords)?, scenario, los)
}

/// `T[i][j] = ∂γ_j/∂η_i` with `η = [p_u, ρ, φ]`, for a UE at `ue`.
pub fn jacobian(scenario: &Scenario, ue: &[f64; 3]) -> Result<Matrix5<f64>> {
    let local = scenario.to_local(ue);
    let (x, y, z) = (local[0], local[1], local[2]);
    let r2 = x * x + y * y + z * z;
    let r = r2.sqrt();
    if !(r > 0.0) {
        return Err(Error::Domain("UE coincides with the array center".into()));
    }
    let rxy2 = x * x + y * y;
    let rxy = rxy2.sqrt();
    if rxy <= 1e-12 * r {
        return Err(Error::Boresight { elevation: (z / r).clamp(-1.0, 1.0).acos() });
    }
    let rot = scenario.rotation();
    let d_el = rot * Vector3::new(x * z / (r2 * rxy), y * z / (r2 * rxy), -rxy / r2);
    let d_az = rot * Vector3::new(-y / rxy2, x / rxy2, 0.0);
    let g = [ue[0] - scenario.bs_position[0], ue[1] - scenario.bs_position[1], ue[2] - scenario.bs_position[2]];
    let dist = distance(ue, &scenario.bs_position);
    let mut t = Matrix5::zeros();
    for i in 0..3 {
        t[(i, 0)] = d_el[i];
        t[(i, 1)] = d_az[i];
        t[(i, 2)] = g[i] / (dist * SPEED_OF_LIGHT);
    }
    t[(3, 3)] = 1.0;
    t[(4, 4)] = 1.0;
    Ok(t)
}

/// `T J_γ Tᵀ`.
pub fn to_position_domain(j_gamma: &Matrix5<f64>, t: &Matrix5<f64>) -> Matrix5<f64> {
    let j = t * j_gamma * t.transpose();
    (j + j.transpose()) * 0.5
}

/// Position error bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peb {
    /// `√tr([J⁻¹]_{1:3,1:3})` in meters; `+∞` when singular.
    pub meters: f64,
    /// `tr([J⁻¹]_{1:3,1:3})` in m².
    pub trace: f64,
    /// Reciprocal condition number of the equilibrated FIM.
    pub rcond: f64,
}

impl Peb {
    pub fn is_finite(&self) -> bool {
        self.meters.is_finite()
    }
}

/// Inverse of a symmetric PSD FIM after symmetric Jacobi scaling, with the
/// reciprocal condition number of the scaled matrix. `None` when singular.
pub fn invert_fim(j: &Matrix5<f64>) -> (Option<Matrix5<f64>>, f64) {
    let mut d = [0.0; 5];
    for i in 0..5 {
        let v = j[(i, i)];
        if !(v > 0.0) || !v.is_finite() {
            return (None, 0.0);
        }
        d[i] = 1.0 / v.sqrt();
    }
    let mut s = Matrix5::zeros();
    for a in 0..5 {
        for b in 0..5 {
            s[(a, b)] = d[a] * j[(a, b)] * d[b];
        }
    }
    s = (s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(s);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let rcond = if max > 0.0 { (min / max).max(0.0) } else { 0.0 };
    if rcond < RCOND_THRESHOLD {
        return (None, rcond);
    }
    let Some(chol) = s.cholesky() else {
        return (None, rcond);
    };
    let si = chol.inverse();
    let mut inv = Matrix5::zeros();
    for a in 0..5 {
        for b in 0..5 {
            inv[(a, b)] = d[a] * si[(a, b)] * d[b];
        }
    }
    (Some(inv), rcond)
}

pub fn peb(j_eta: &Matrix5<f64>) -> Peb {
    let (inv, rcond) = invert_fim(j_eta);
    match inv {
        Some(inv) => {
            let trace = inv[(0, 0)] + inv[(1, 1)] + inv[(2, 2)];
            Peb { meters: trace.max(0.0).sqrt(), trace, rcond }
        }
        None => {
            log::debug!("singular FIM, reciprocal condition number {rcond:.3e}");
            Peb { meters: f64::INFINITY, trace: f64::INFINITY, rcond }
        }
    }
}

/// Position block of the inverse, `[J⁻¹]_{1:3,1:3}`.
pub fn position_covariance_bound(j_eta: &Matrix5<f64>) -> Option<Matrix3<f64>> {
    invert_fim(j_eta).0.map(|inv| inv.fixed_view::<3, 3>(0, 0).into_owned())
}

/// All intermediate quantities for one UE position.
#[derive(Clone, Debug, PartialEq)]
pub struct FimResult {
    pub j_gamma: Matrix5<f64>,
    pub t: Matrix5<f64>,
    pub j_eta: Matrix5<f64>,
    pub peb: Peb,
}

/// Position-domain analysis for a UE at `ue` with LOS phase `phi`.
pub fn analyze_codewords(
    model: &ResponseModel,
    scenario: &Scenario,
    ue: &[f64; 3],
    codewords: &[Vec<C64>],
) -> Result<FimResult> {
    let los = PathComponent::los(scenario, ue, 0.0)?;
    let bundle = model.bundle(&los.aod);
    let j_gamma = fim_channel_codewords(&bundle, codewords, scenario, &LosParameters::from(&los))?;
    let t = jacobian(scenario, ue)?;
    let j_eta = to_position_domain(&j_gamma, &t);
    Ok(FimResult { j_gamma, t, j_eta, peb: peb(&j_eta) })
}

/// Position-domain FIM per unit-power codeword, so that the FIM of any
/// power split `δ` is `Σ_t δ_t J_t`.
pub fn per_codeword_fims(
    model: &ResponseModel,
    scenario: &Scenario,
    ue: &[f64; 3],
    unit_codewords: &[Vec<C64>],
) -> Result<Vec<Matrix5<f64>>> {
    let aod = compute_aod(ue, scenario)?;
    let los = PathComponent::los(scenario, ue, 0.0)?;
    let params = LosParameters::from(&los);
    let bundle = model.bundle(&aod);
    let t = jacobian(scenario, ue)?;
    unit_codewords
        .iter()
        .map(|w| {
            let jg = fim_channel_codewords(&bundle, std::slice::from_ref(w), scenario, &params)?;
            Ok(to_position_domain(&jg, &t))
        })
        .collect()
}
