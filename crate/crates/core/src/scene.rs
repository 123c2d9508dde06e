//! Link geometry, path parameters, array and delay responses, and synthesis
//! of the received OFDM observation.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::response::ResponseModel;
use crate::{Error, Result, C64};

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;

/// Noise power spectral density of the default scenario, −173.855 dBm/Hz.
pub const DEFAULT_NOISE_PSD_DBM_HZ: f64 = -173.855;

/// Two-dimensional angle of departure in the local frame of the array (rad).
///
/// Elevation is measured from the local `+z` axis, azimuth is
/// `atan2(y, x)` in the local frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aod {
    pub el: f64,
    pub az: f64,
}

impl Aod {
    pub fn new(el: f64, az: f64) -> Self {
        Self { el, az }
    }

    pub fn from_degrees(el_deg: f64, az_deg: f64) -> Self {
        Self::new(el_deg.to_radians(), az_deg.to_radians())
    }

    /// Unit direction `[sin el cos az, sin el sin az, cos el]`.
    pub fn unit_vector(&self) -> [f64; 3] {
        let (se, ce) = self.el.sin_cos();
        let (sa, ca) = self.az.sin_cos();
        [se * ca, se * sa, ce]
    }

    pub fn to_degrees(&self) -> (f64, f64) {
        (self.el.to_degrees(), self.az.to_degrees())
    }
}

/// Uniform planar array on the local YoZ plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    /// Number of rows `M_v` (vertical index).
    pub rows: usize,
    /// Number of columns `M_h` (horizontal index).
    pub cols: usize,
    /// Inter-element spacing (m).
    pub spacing: f64,
    /// Carrier wavelength (m).
    pub wavelength: f64,
}

impl ArrayGeometry {
    pub fn half_wavelength(rows: usize, cols: usize, wavelength: f64) -> Self {
        Self {
            rows,
            cols,
            spacing: wavelength / 2.0,
            wavelength,
        }
    }

    pub fn num_elements(&self) -> usize {
        self.rows * self.cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidScenario("array must have at least one element".into()));
        }
        if !(self.spacing > 0.0) || !(self.wavelength > 0.0) {
            return Err(Error::InvalidScenario(
                "array spacing and wavelength must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Axis-aligned box (m).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl BoxRegion {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        let region = Self { min, max };
        region.validate()?;
        Ok(region)
    }

    pub fn point(p: [f64; 3]) -> Self {
        Self { min: p, max: p }
    }

    pub fn validate(&self) -> Result<()> {
        for k in 0..3 {
            if !(self.min[k] <= self.max[k]) {
                return Err(Error::InvalidScenario(format!(
                    "region axis {k}: min {} exceeds max {}",
                    self.min[k], self.max[k]
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn clamp(&self, p: &[f64; 3]) -> [f64; 3] {
        [
            p[0].clamp(self.min[0], self.max[0]),
            p[1].clamp(self.min[1], self.max[1]),
            p[2].clamp(self.min[2], self.max[2]),
        ]
    }

    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }

    /// Regular lattice with `counts[k]` points along axis `k`, endpoints
    /// included. A count of one places the point at the axis midpoint.
    /// Ordered with `x` slowest and `z` fastest.
    pub fn lattice(&self, counts: [usize; 3]) -> Vec<[f64; 3]> {
        let axis = |k: usize| -> Vec<f64> {
            let n = counts[k].max(1);
            if n == 1 {
                vec![0.5 * (self.min[k] + self.max[k])]
            } else {
                (0..n)
                    .map(|i| self.min[k] + (self.max[k] - self.min[k]) * i as f64 / (n - 1) as f64)
                    .collect()
            }
        };
        let (xs, ys, zs) = (axis(0), axis(1), axis(2));
        let mut out = Vec::with_capacity(xs.len() * ys.len() * zs.len());
        for &x in &xs {
            for &y in &ys {
                for &z in &zs {
                    out.push([x, y, z]);
                }
            }
        }
        out
    }

    /// Uniformly distributed random point inside the box.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 3] {
        let mut p = [0.0; 3];
        for k in 0..3 {
            p[k] = self.min[k] + (self.max[k] - self.min[k]) * rng.random::<f64>();
        }
        p
    }

    /// Points on the surface of the box: a `per_edge × per_edge` grid on every face.
    pub fn surface_samples(&self, per_edge: usize) -> Vec<[f64; 3]> {
        let n = per_edge.max(2);
        let t = |k: usize, i: usize| self.min[k] + (self.max[k] - self.min[k]) * i as f64 / (n - 1) as f64;
        let mut out = Vec::with_capacity(6 * n * n);
        for fixed in 0..3 {
            let (a, b) = ((fixed + 1) % 3, (fixed + 2) % 3);
            for side in [self.min[fixed], self.max[fixed]] {
                for i in 0..n {
                    for j in 0..n {
                        let mut p = [0.0; 3];
                        p[fixed] = side;
                        p[a] = t(a, i);
                        p[b] = t(b, j);
                        out.push(p);
                    }
                }
            }
        }
        out
    }

    /// Smallest Euclidean distance from `p` to the box.
    pub fn min_distance(&self, p: &[f64; 3]) -> f64 {
        norm3(&sub3(&self.clamp(p), p))
    }

    /// Largest Euclidean distance from `p` to the box (attained at a corner).
    pub fn max_distance(&self, p: &[f64; 3]) -> f64 {
        let mut best: f64 = 0.0;
        for mask in 0..8u8 {
            let corner = [
                if mask & 1 == 0 { self.min[0] } else { self.max[0] },
                if mask & 2 == 0 { self.min[1] } else { self.max[1] },
                if mask & 4 == 0 { self.min[2] } else { self.max[2] },
            ];
            best = best.max(norm3(&sub3(&corner, p)));
        }
        best
    }
}

/// Geometry, radio, and uncertainty parameters of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub bs_position: [f64; 3],
    /// Row-major rotation from the array frame to the global frame.
    pub bs_rotation: [[f64; 3]; 3],
    pub ue_position: [f64; 3],
    pub uncertainty_region: BoxRegion,
    /// Hz.
    pub carrier_frequency: f64,
    /// Hz.
    pub subcarrier_spacing: f64,
    /// Hz.
    pub bandwidth: f64,
    pub num_subcarriers: usize,
    /// W/Hz.
    pub noise_psd: f64,
    /// W.
    pub transmit_power: f64,
    pub array: ArrayGeometry,
}

impl Default for Scenario {
    fn default() -> Self {
        Self::table_one()
    }
}

impl Scenario {
    /// Default system parameters: 30 GHz carrier, 5×5 half-wavelength UPA at
    /// `[0, 0, 5]`, UE at `[45, 5, 2]`, 100 MHz split into 200 kHz subcarriers.
    /// The transmit power is set for a 0 dB LOS SNR at the UE position.
    pub fn table_one() -> Self {
        let carrier_frequency = 30e9;
        let wavelength = SPEED_OF_LIGHT / carrier_frequency;
        let mut scenario = Self {
            bs_position: [0.0, 0.0, 5.0],
            bs_rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            ue_position: [45.0, 5.0, 2.0],
            uncertainty_region: BoxRegion {
                min: [30.0, -10.0, 0.0],
                max: [50.0, 10.0, 10.0],
            },
            carrier_frequency,
            subcarrier_spacing: 200e3,
            bandwidth: 100e6,
            num_subcarriers: 500,
            noise_psd: dbm_to_watts(DEFAULT_NOISE_PSD_DBM_HZ),
            transmit_power: 1.0,
            array: ArrayGeometry::half_wavelength(5, 5, wavelength),
        };
        scenario.transmit_power = scenario.transmit_power_for_snr(0.0);
        scenario
    }

    pub fn validate(&self) -> Result<()> {
        self.array.validate()?;
        self.uncertainty_region.validate()?;
        let r = self.rotation();
        let err = (r.transpose() * r - Matrix3::identity()).norm();
        if err >= 1e-12 || (r.determinant() - 1.0).abs() >= 1e-12 {
            return Err(Error::InvalidScenario(format!(
                "bs_rotation is not a proper rotation (orthogonality error {err:.3e}, det {:.12})",
                r.determinant()
            )));
        }
        if !(self.subcarrier_spacing > 0.0) || !(self.bandwidth > 0.0) {
            return Err(Error::InvalidScenario(
                "bandwidth and subcarrier spacing must be positive".into(),
            ));
        }
        let expected = (self.bandwidth / self.subcarrier_spacing).round() as usize;
        if self.num_subcarriers == 0 || self.num_subcarriers != expected {
            return Err(Error::InvalidScenario(format!(
                "num_subcarriers {} does not equal round(B/Δf) = {expected}",
                self.num_subcarriers
            )));
        }
        if !(self.noise_psd > 0.0) || !(self.transmit_power >= 0.0) {
            return Err(Error::InvalidScenario(
                "noise_psd must be positive and transmit_power non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        let r = &self.bs_rotation;
        Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        )
    }

    pub fn wavelength(&self) -> f64 {
        self.array.wavelength
    }

    /// Noise variance per subcarrier sample, `N_0 · B`.
    pub fn noise_variance(&self) -> f64 {
        self.noise_psd * self.bandwidth
    }

    /// `Rᵀ (p − p_b)`.
    pub fn to_local(&self, p: &[f64; 3]) -> [f64; 3] {
        let v = self.rotation().transpose() * Vector3::from(sub3(p, &self.bs_position));
        [v[0], v[1], v[2]]
    }

    /// `R p_local + p_b`.
    pub fn to_global(&self, local: &[f64; 3]) -> [f64; 3] {
        let v = self.rotation() * Vector3::from(*local);
        [v[0] + self.bs_position[0], v[1] + self.bs_position[1], v[2] + self.bs_position[2]]
    }

    /// LOS signal-to-noise ratio `P ρ² / (N_0 B)` at the UE position.
    pub fn snr_db(&self) -> f64 {
        let rho = los_path_gain(distance(&self.ue_position, &self.bs_position), self.wavelength())
            .unwrap_or(0.0);
        10.0 * (self.transmit_power * rho * rho / self.noise_variance()).log10()
    }

    /// Transmit power giving the requested LOS SNR at the UE position.
    pub fn transmit_power_for_snr(&self, snr_db: f64) -> f64 {
        let rho = los_path_gain(distance(&self.ue_position, &self.bs_position), self.wavelength())
            .unwrap_or(f64::NAN);
        10f64.powf(snr_db / 10.0) * self.noise_variance() / (rho * rho)
    }

    pub fn with_snr_db(mut self, snr_db: f64) -> Self {
        self.transmit_power = self.transmit_power_for_snr(snr_db);
        self
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub(crate) fn sub3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn norm3(a: &[f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    norm3(&sub3(a, b))
}

/// Angle of departure from the array towards `target`.
pub fn compute_aod(target: &[f64; 3], scenario: &Scenario) -> Result<Aod> {
    aod_from_local(&scenario.to_local(target))
}

pub fn aod_from_local(local: &[f64; 3]) -> Result<Aod> {
    let r = norm3(local);
    if !(r > 0.0) {
        return Err(Error::Domain("target coincides with the array center".into()));
    }
    let el = (local[2] / r).clamp(-1.0, 1.0).acos();
    let mut az = local[1].atan2(local[0]);
    if az >= PI {
        az -= 2.0 * PI;
    }
    Ok(Aod { el, az })
}

/// LOS delay `‖p_u − p_b‖ / c`.
pub fn los_delay(ue: &[f64; 3], bs: &[f64; 3]) -> f64 {
    distance(ue, bs) / SPEED_OF_LIGHT
}

/// Single-bounce delay `(‖p_u − p_s‖ + ‖p_s − p_b‖) / c`.
pub fn nlos_delay(ue: &[f64; 3], scatterer: &[f64; 3], bs: &[f64; 3]) -> f64 {
    (distance(ue, scatterer) + distance(scatterer, bs)) / SPEED_OF_LIGHT
}

/// Free-space LOS amplitude `λ / (4π d)`.
pub fn los_path_gain(dist: f64, wavelength: f64) -> Result<f64> {
    if !(dist > 0.0) {
        return Err(Error::Domain("LOS path gain needs a positive distance".into()));
    }
    Ok(wavelength / (4.0 * PI * dist))
}

/// Bistatic single-bounce amplitude `√(4π s) λ / (16 π² d₁ d₂)`.
pub fn nlos_path_gain(d_bs: f64, d_ue: f64, cross_section: f64, wavelength: f64) -> Result<f64> {
    if !(d_bs > 0.0) || !(d_ue > 0.0) {
        return Err(Error::Domain("NLOS path gain needs positive leg lengths".into()));
    }
    if cross_section < 0.0 {
        return Err(Error::Domain("negative scatterer cross-section".into()));
    }
    Ok((4.0 * PI * cross_section).sqrt() * wavelength / (16.0 * PI * PI * d_bs * d_ue))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PathKind {
    Los,
    Nlos { scatterer: [f64; 3] },
}

/// One propagation path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathComponent {
    pub kind: PathKind,
    pub gain_modulus: f64,
    pub gain_phase: f64,
    pub delay: f64,
    pub aod: Aod,
}

impl PathComponent {
    pub fn los(scenario: &Scenario, ue: &[f64; 3], phase: f64) -> Result<Self> {
        let aod = compute_aod(ue, scenario)?;
        Ok(Self {
            kind: PathKind::Los,
            gain_modulus: los_path_gain(distance(ue, &scenario.bs_position), scenario.wavelength())?,
            gain_phase: phase,
            delay: los_delay(ue, &scenario.bs_position),
            aod,
        })
    }

    pub fn nlos(
        scenario: &Scenario,
        ue: &[f64; 3],
        scatterer: &[f64; 3],
        cross_section: f64,
        phase: f64,
    ) -> Result<Self> {
        let aod = compute_aod(scatterer, scenario)?;
        let d_bs = distance(scatterer, &scenario.bs_position);
        let d_ue = distance(ue, scatterer);
        Ok(Self {
            kind: PathKind::Nlos { scatterer: *scatterer },
            gain_modulus: nlos_path_gain(d_bs, d_ue, cross_section, scenario.wavelength())?,
            gain_phase: phase,
            delay: nlos_delay(ue, scatterer, &scenario.bs_position),
            aod,
        })
    }

    pub fn complex_gain(&self) -> C64 {
        C64::from_polar(self.gain_modulus, self.gain_phase)
    }
}

fn spatial_frequencies(aod: &Aod, array: &ArrayGeometry) -> (f64, f64) {
    let r = array.spacing / array.wavelength;
    (r * aod.az.sin() * aod.el.sin(), r * aod.el.cos())
}

/// UPA response `e^{−j2πω_h k(M_h)} ⊗ e^{−j2πω_v k(M_v)}`; element
/// `h·M_v + v` carries horizontal index `h` and vertical index `v`.
pub fn steering_vector(aod: &Aod, array: &ArrayGeometry) -> Vec<C64> {
    let (wh, wv) = spatial_frequencies(aod, array);
    let mut out = Vec::with_capacity(array.num_elements());
    for h in 0..array.cols {
        for v in 0..array.rows {
            let phase = -2.0 * PI * (wh * h as f64 + wv * v as f64);
            out.push(C64::from_polar(1.0, phase));
        }
    }
    out
}

/// Elementwise derivatives of [`steering_vector`] with respect to elevation
/// and azimuth.
pub fn steering_partials(aod: &Aod, array: &ArrayGeometry) -> (Vec<C64>, Vec<C64>) {
    let (se, ce) = aod.el.sin_cos();
    let (sa, ca) = aod.az.sin_cos();
    let r = array.spacing / array.wavelength;
    let dwh_del = r * sa * ce;
    let dwv_del = -r * se;
    let dwh_daz = r * ca * se;
    let a = steering_vector(aod, array);
    let mut d_el = Vec::with_capacity(a.len());
    let mut d_az = Vec::with_capacity(a.len());
    let minus_j2pi = C64::new(0.0, -2.0 * PI);
    for h in 0..array.cols {
        for v in 0..array.rows {
            let m = h * array.rows + v;
            let (hf, vf) = (h as f64, v as f64);
            d_el.push(minus_j2pi * (hf * dwh_del + vf * dwv_del) * a[m]);
            d_az.push(minus_j2pi * (hf * dwh_daz) * a[m]);
        }
    }
    (d_el, d_az)
}

/// OFDM delay response `[d(τ)]_n = e^{−j2πnΔfτ}`.
pub fn delay_vector(tau: f64, num_subcarriers: usize, spacing: f64) -> Vec<C64> {
    (0..num_subcarriers)
        .map(|n| C64::from_polar(1.0, -2.0 * PI * n as f64 * spacing * tau))
        .collect()
}

/// `∂d/∂τ`, entries `−j2πnΔf [d(τ)]_n`.
pub fn delay_partial(tau: f64, num_subcarriers: usize, spacing: f64) -> Vec<C64> {
    delay_vector(tau, num_subcarriers, spacing)
        .into_iter()
        .enumerate()
        .map(|(n, d)| C64::new(0.0, -2.0 * PI * n as f64 * spacing) * d)
        .collect()
}

/// `d(τ)ᴴ ∂d(τ)/∂τ`, which does not depend on `τ`.
pub fn delay_inner_derivative(num_subcarriers: usize, spacing: f64) -> C64 {
    let n = num_subcarriers as f64;
    C64::new(0.0, -2.0 * PI * spacing * n * (n - 1.0) / 2.0)
}

/// Noise-free and noisy received signal, `N_s × N_t`:
/// `y_t = Σ_i √P α_i d(τ_i) c(θ_i)ᵀ w_t + v_t` with CN(0, N_0 B) noise
/// when `noise` is provided.
pub fn synthesize_received<R: Rng + ?Sized>(
    scenario: &Scenario,
    paths: &[PathComponent],
    codewords: &[Vec<C64>],
    model: &ResponseModel,
    noise: Option<&mut R>,
) -> Result<DMatrix<C64>> {
    let dim = model.dim();
    let total_power: f64 = codewords.iter().flat_map(|w| w.iter()).map(|x| x.norm_sqr()).sum();
    if !codewords.is_empty() && (total_power - 1.0).abs() > 1e-6 {
        log::warn!("codebook power {total_power} differs from unity");
    }
    for w in codewords {
        if w.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: w.len() });
        }
    }
    let n_s = scenario.num_subcarriers;
    let n_t = codewords.len();
    let sqrt_p = scenario.transmit_power.sqrt();
    let mut y = DMatrix::<C64>::zeros(n_s, n_t);
    for path in paths {
        let c = model.value(&path.aod);
        let d = delay_vector(path.delay, n_s, scenario.subcarrier_spacing);
        let amp = path.complex_gain() * sqrt_p;
        for (t, w) in codewords.iter().enumerate() {
            let beta = amp * dot_t(&c, w);
            for n in 0..n_s {
                y[(n, t)] += beta * d[n];
            }
        }
    }
    if let Some(rng) = noise {
        let sigma = (scenario.noise_variance() / 2.0).sqrt();
        for t in 0..n_t {
            for n in 0..n_s {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                y[(n, t)] += C64::new(sigma * re, sigma * im);
            }
        }
    }
    Ok(y)
}

/// Bilinear form `aᵀ b` without conjugation.
pub fn dot_t(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inner product `aᴴ b`.
pub fn dot_h(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm_sqr(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn table_one_is_valid() {
        let s = Scenario::table_one();
        s.validate().unwrap();
        assert_eq!(s.num_subcarriers, 500);
        assert_relative_eq!(s.snr_db(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn aod_of_default_ue() {
        let s = Scenario::table_one();
        let aod = compute_aod(&s.ue_position, &s).unwrap();
        // p_rel = [45, 5, -3]
        let r = 2059f64.sqrt();
        assert_relative_eq!(aod.el, (-3.0 / r).acos(), epsilon = 1e-14);
        assert!((aod.el.to_degrees() - 93.79).abs() < 0.01);
        assert!((aod.az.to_degrees() - 6.34).abs() < 0.01);
    }

    #[test]
    fn aod_axes() {
        let mut s = Scenario::table_one();
        s.bs_position = [0.0; 3];
        let a = compute_aod(&[3.0, 0.0, 0.0], &s).unwrap();
        assert_relative_eq!(a.el, PI / 2.0, epsilon = 1e-15);
        assert_eq!(a.az, 0.0);
        let b = compute_aod(&[0.0, 0.0, 2.0], &s).unwrap();
        assert_eq!(b.el, 0.0);
        let behind = compute_aod(&[-1.0, 0.0, 0.0], &s).unwrap();
        assert!(behind.az >= -PI && behind.az < PI);
        assert!(compute_aod(&[0.0; 3], &s).is_err());
    }

    #[test]
    fn rotated_frame_round_trip() {
        let mut s = Scenario::table_one();
        let (sn, cs) = 0.3f64.sin_cos();
        s.bs_rotation = [[cs, -sn, 0.0], [sn, cs, 0.0], [0.0, 0.0, 1.0]];
        s.validate().unwrap();
        let p = [12.0, -4.0, 1.0];
        let back = s.to_global(&s.to_local(&p));
        for k in 0..3 {
            assert_relative_eq!(back[k], p[k], epsilon = 1e-12);
        }
        s.bs_rotation[0][0] = 2.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn delays() {
        let s = Scenario::table_one();
        let tau = los_delay(&s.ue_position, &s.bs_position);
        assert_relative_eq!(tau, 2059f64.sqrt() / SPEED_OF_LIGHT, epsilon = 1e-20);
        assert!((tau * 1e9 - 151.36).abs() < 0.01);
        // scatterer on the segment
        let mid = [22.5, 2.5, 3.5];
        assert_relative_eq!(nlos_delay(&s.ue_position, &mid, &s.bs_position), tau, max_relative = 1e-14);
        let twice = los_delay(&[90.0, 10.0, 4.0], &[0.0, 0.0, 10.0]);
        assert_relative_eq!(twice, 2.0 * tau, max_relative = 1e-14);
    }

    #[test]
    fn path_gains() {
        let lambda = SPEED_OF_LIGHT / 30e9;
        let rho = los_path_gain(2059f64.sqrt(), lambda).unwrap();
        assert!((rho - 1.7526e-5).abs() < 1e-8);
        assert_relative_eq!(los_path_gain(20.0, lambda).unwrap(), 2.0 * los_path_gain(40.0, lambda).unwrap());
        assert_eq!(nlos_path_gain(3.0, 4.0, 0.0, lambda).unwrap(), 0.0);
        assert!(los_path_gain(0.0, lambda).is_err());
    }

    #[test]
    fn broadside_steering_is_all_ones() {
        let arr = ArrayGeometry::half_wavelength(4, 3, 0.01);
        let a = steering_vector(&Aod::new(PI / 2.0, 0.0), &arr);
        assert!(a.iter().all(|x| (x - C64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn steering_azimuth_partial_at_broadside() {
        let arr = ArrayGeometry::half_wavelength(3, 4, 0.01);
        let aod = Aod::new(PI / 2.0, 0.0);
        let a = steering_vector(&aod, &arr);
        let (_, d_az) = steering_partials(&aod, &arr);
        let step = 1e-6;
        let ap = steering_vector(&Aod::new(aod.el, aod.az + step), &arr);
        let am = steering_vector(&Aod::new(aod.el, aod.az - step), &arr);
        for h in 0..arr.cols {
            for v in 0..arr.rows {
                let m = h * arr.rows + v;
                let expected = C64::new(0.0, -2.0 * PI * 0.5 * h as f64) * a[m];
                assert!((d_az[m] - expected).norm() < 1e-12);
                let fd = (ap[m] - am[m]) / (2.0 * step);
                assert!((fd - expected).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn delay_vector_properties() {
        let d0 = delay_vector(0.0, 16, 1e5);
        assert!(d0.iter().all(|x| (x - C64::new(1.0, 0.0)).norm() < 1e-15));
        let d = delay_vector(1.234e-7, 16, 1e5);
        assert_relative_eq!(norm_sqr(&d), 16.0, epsilon = 1e-12);
        let dd = delay_partial(0.0, 16, 1e5);
        let ns_dot = dot_h(&d0, &dd);
        let scale = C64::new(0.0, -2.0 * PI * 1e5);
        assert_relative_eq!((ns_dot / scale).re, 16.0 * 15.0 / 2.0, epsilon = 1e-9);
        assert!((delay_inner_derivative(16, 1e5) - ns_dot).norm() < 1e-3);
    }

    #[test]
    fn region_helpers() {
        let r = Scenario::table_one().uncertainty_region;
        assert_eq!(r.lattice([5, 5, 3]).len(), 75);
        let p = [0.0, 0.0, 5.0];
        assert_relative_eq!(r.min_distance(&p), 30.0);
        assert_relative_eq!(r.max_distance(&p), (2500.0f64 + 100.0 + 25.0).sqrt());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            assert!(r.contains(&r.sample(&mut rng)));
        }
        assert!(BoxRegion::new([1.0, 0.0, 0.0], [0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn scenario_json_round_trip() {
        let s = Scenario::table_one();
        let back = Scenario::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(s, back);
        let mut bad = s.clone();
        bad.num_subcarriers = 499;
        assert!(Scenario::from_json(&bad.to_json().unwrap()).is_err());
    }
}
