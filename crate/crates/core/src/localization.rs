//! Two-stage maximum-likelihood localization from the received OFDM
//! observation: coarse delay and AOD grid searches composed into a position,
//! then a direct position search with Nelder–Mead.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::codebook::{angular_bounds, Codebook};
use crate::nelder_mead::{minimize, NelderMeadOptions};
use crate::response::ResponseModel;
use crate::scene::{compute_aod, dot_t, los_delay, Aod, BoxRegion, Scenario, SPEED_OF_LIGHT};
use crate::{Error, Result, C64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizerConfig {
    pub n_tau: usize,
    pub n_theta: usize,
    pub nelder_mead: NelderMeadOptions,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        Self { n_tau: 1000, n_theta: 500, nelder_mead: NelderMeadOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub coarse_tau: f64,
    pub coarse_aod: Aod,
    /// Coarse position, clamped into the region.
    pub coarse_position: [f64; 3],
    pub position: [f64; 3],
    pub coarse_objective: f64,
    pub objective: f64,
    pub evaluations: usize,
}

/// Grids and transmitted codewords for one experiment; shared read-only
/// across trials.
pub struct Localizer {
    scenario: Scenario,
    model: ResponseModel,
    codewords: Vec<Vec<C64>>,
    region: BoxRegion,
    config: LocalizerConfig,
    taus: Vec<f64>,
    /// `(θ, s(θ) = [c(θ)ᵀ w_t]_t, ‖s(θ)‖²)`.
    aod_grid: Vec<(Aod, Vec<C64>, f64)>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 || hi <= lo {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// `d(τ)ᴴ y = Σ_n y_n e^{j2πnΔfτ}` by Horner's rule.
pub fn delay_projection(y: &[C64], tau: f64, spacing: f64) -> C64 {
    let z = C64::from_polar(1.0, 2.0 * PI * spacing * tau);
    y.iter().rev().fold(C64::new(0.0, 0.0), |acc, v| acc * z + v)
}

impl Localizer {
    pub fn new(
        scenario: &Scenario,
        model: &ResponseModel,
        codebook: &Codebook,
        region: &BoxRegion,
        config: &LocalizerConfig,
    ) -> Result<Self> {
        if config.n_tau < 2 || config.n_theta < 2 {
            return Err(Error::Config("n_tau and n_theta must be at least 2".into()));
        }
        let codewords = codebook.weighted();
        if let Some(w) = codewords.iter().find(|w| w.len() != model.dim()) {
            return Err(Error::DimensionMismatch { expected: model.dim(), found: w.len() });
        }
        let tau_min = region.min_distance(&scenario.bs_position) / SPEED_OF_LIGHT;
        let tau_max = region.max_distance(&scenario.bs_position) / SPEED_OF_LIGHT;
        let taus = linspace(tau_min, tau_max, config.n_tau);

        let ((el_lo, el_hi), (az_lo, az_hi)) = angular_bounds(region, scenario)?;
        let (span_el, span_az) = (el_hi - el_lo, az_hi - az_lo);
        let n = config.n_theta as f64;
        let (n_el, n_az) = if span_el <= 0.0 && span_az <= 0.0 {
            (1, 1)
        } else if span_el <= 0.0 {
            (1, config.n_theta)
        } else if span_az <= 0.0 {
            (config.n_theta, 1)
        } else {
            let n_az = ((n * span_az / span_el).sqrt().round() as usize).clamp(1, config.n_theta);
            (config.n_theta.div_ceil(n_az), n_az)
        };
        let mut aod_grid = Vec::with_capacity(n_el * n_az);
        for &el in &linspace(el_lo, el_hi, n_el) {
            for &az in &linspace(az_lo, az_hi, n_az) {
                let aod = Aod::new(el, az);
                let c = model.value(&aod);
                let s: Vec<C64> = codewords.iter().map(|w| dot_t(&c, w)).collect();
                let norm: f64 = s.iter().map(|x| x.norm_sqr()).sum();
                if norm > 0.0 {
                    aod_grid.push((aod, s, norm));
                }
            }
        }
        Ok(Self {
            scenario: scenario.clone(),
            model: model.clone(),
            codewords,
            region: *region,
            config: config.clone(),
            taus,
            aod_grid,
        })
    }

    pub fn delay_grid(&self) -> &[f64] {
        &self.taus
    }

    pub fn aod_grid(&self) -> impl Iterator<Item = &Aod> {
        self.aod_grid.iter().map(|g| &g.0)
    }

    fn check(&self, y: &DMatrix<C64>) -> Result<()> {
        if y.nrows() != self.scenario.num_subcarriers || y.ncols() != self.codewords.len() {
            return Err(Error::DimensionMismatch { expected: self.codewords.len(), found: y.ncols() });
        }
        Ok(())
    }

    fn projections(&self, y: &DMatrix<C64>, tau: f64) -> Vec<C64> {
        let df = self.scenario.subcarrier_spacing;
        (0..y.ncols()).map(|t| delay_projection(y.column(t).as_slice(), tau, df)).collect()
    }

    /// Grid point maximizing `‖d(τ)ᴴ Y‖²`; ties go to the smallest delay.
    pub fn coarse_delay(&self, y: &DMatrix<C64>) -> Result<f64> {
        self.check(y)?;
        let mut best = (self.taus[0], f64::NEG_INFINITY);
        for &tau in &self.taus {
            let e: f64 = self.projections(y, tau).iter().map(|x| x.norm_sqr()).sum();
            if e > best.1 {
                best = (tau, e);
            }
        }
        Ok(best.0)
    }

    /// `β̂_t = d(τ̂)ᴴ y_t / N_s`.
    pub fn beta(&self, y: &DMatrix<C64>, tau: f64) -> Result<Vec<C64>> {
        self.check(y)?;
        let ns = self.scenario.num_subcarriers as f64;
        Ok(self.projections(y, tau).into_iter().map(|x| x / ns).collect())
    }

    /// Grid AOD maximizing `|s(θ)ᴴ β̂|² / ‖s(θ)‖²`.
    pub fn coarse_aod(&self, beta: &[C64]) -> Result<Aod> {
        let mut best: Option<(Aod, f64)> = None;
        for (aod, s, norm) in &self.aod_grid {
            let p: C64 = s.iter().zip(beta).map(|(a, b)| a.conj() * b).sum();
            let v = p.norm_sqr() / norm;
            if best.is_none_or(|b| v > b.1) {
                best = Some((*aod, v));
            }
        }
        best.map(|b| b.0).ok_or_else(|| Error::Domain("no usable AOD grid point".into()))
    }

    /// `R (c τ̂ û(θ̂)) + p_b`.
    pub fn coarse_position(&self, tau: f64, aod: &Aod) -> [f64; 3] {
        coarse_position(&self.scenario, tau, aod)
    }

    /// `|Σ_t s_t* d(τ)ᴴ y_t|² / (N_s Σ_t |s_t|²)` with `τ, θ` implied by `p`.
    pub fn objective(&self, y: &DMatrix<C64>, p: &[f64; 3]) -> f64 {
        let Ok(aod) = compute_aod(p, &self.scenario) else {
            return 0.0;
        };
        let tau = los_delay(p, &self.scenario.bs_position);
        let c = self.model.value(&aod);
        let mut num = C64::new(0.0, 0.0);
        let mut den = 0.0;
        let df = self.scenario.subcarrier_spacing;
        for (t, w) in self.codewords.iter().enumerate() {
            let s = dot_t(&c, w);
            num += s.conj() * delay_projection(y.column(t).as_slice(), tau, df);
            den += s.norm_sqr();
        }
        if !(den > 0.0) {
            return 0.0;
        }
        num.norm_sqr() / (self.scenario.num_subcarriers as f64 * den)
    }

    /// Nelder–Mead maximization of [`Localizer::objective`] from `start`
    /// (clamped into the region).
    pub fn refine(&self, y: &DMatrix<C64>, start: &[f64; 3]) -> (super::nelder_mead::NelderMeadResult, f64) {
        let start = self.region.clamp(start);
        let result = minimize(|p| -self.objective(y, p), start, Some(&self.region), &self.config.nelder_mead);
        let initial = self.objective(y, &start);
        (result, initial)
    }

    pub fn localize(&self, y: &DMatrix<C64>) -> Result<Estimate> {
        let tau = self.coarse_delay(y)?;
        let beta = self.beta(y, tau)?;
        let aod = self.coarse_aod(&beta)?;
        let coarse = self.region.clamp(&self.coarse_position(tau, &aod));
        let (nm, initial) = self.refine(y, &coarse);
        Ok(Estimate {
            coarse_tau: tau,
            coarse_aod: aod,
            coarse_position: coarse,
            position: nm.x,
            coarse_objective: initial,
            objective: -nm.value,
            evaluations: nm.evals,
        })
    }
}

pub fn coarse_position(scenario: &Scenario, tau: f64, aod: &Aod) -> [f64; 3] {
    let u = aod.unit_vector();
    let r = SPEED_OF_LIGHT * tau;
    scenario.to_global(&[r * u[0], r * u[1], r * u[2]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::synthesis;
    use crate::response::ElementModel;
    use crate::scene::{distance, synthesize_received, PathComponent};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Scenario, ResponseModel, Codebook) {
        let s = Scenario::table_one().with_snr_db(10.0);
        let m = ResponseModel::new(s.array.clone(), ElementModel::synthesis(4).unwrap());
        let cb = synthesis::build_codebook(&s.uncertainty_region, &s, &m).unwrap();
        (s, m, cb)
    }

    #[test]
    fn coarse_position_inverts_geometry() {
        let (s, ..) = setup();
        let aod = compute_aod(&s.ue_position, &s).unwrap();
        let tau = los_delay(&s.ue_position, &s.bs_position);
        let p = coarse_position(&s, tau, &aod);
        assert!(distance(&p, &s.ue_position) < 1e-9);
        let mut origin = s.clone();
        origin.bs_position = [0.0; 3];
        let q = coarse_position(&origin, 7.0 / SPEED_OF_LIGHT, &Aod::new(PI / 2.0, 0.0));
        assert!(distance(&q, &[7.0, 0.0, 0.0]) < 1e-12);
    }

    #[test]
    fn noiseless_round_trip() {
        let (s, m, cb) = setup();
        let loc = Localizer::new(&s, &m, &cb, &s.uncertainty_region, &LocalizerConfig::default()).unwrap();
        let los = PathComponent::los(&s, &s.ue_position, 0.7).unwrap();
        let y = synthesize_received::<ChaCha8Rng>(&s, &[los], &cb.weighted(), &m, None).unwrap();
        let tau = loc.coarse_delay(&y).unwrap();
        let step = loc.delay_grid()[1] - loc.delay_grid()[0];
        assert!((tau - los.delay).abs() <= 0.5 * step + 1e-18);
        let beta = loc.beta(&y, los.delay).unwrap();
        let c = m.value(&los.aod);
        for (b, w) in beta.iter().zip(cb.weighted()) {
            let expected = los.complex_gain() * s.transmit_power.sqrt() * dot_t(&c, &w);
            assert!((b - expected).norm() < 1e-9 * expected.norm().max(1e-30));
        }
        let est = loc.localize(&y).unwrap();
        assert!(distance(&est.position, &s.ue_position) < 1e-3, "{:?}", est);
        assert!(est.objective >= est.coarse_objective);
    }

    #[test]
    fn zero_signal_keeps_start() {
        let (s, m, cb) = setup();
        let loc = Localizer::new(&s, &m, &cb, &s.uncertainty_region, &LocalizerConfig::default()).unwrap();
        let y = DMatrix::<C64>::zeros(s.num_subcarriers, cb.len());
        let start = [40.0, 1.0, 3.0];
        let (r, _) = loc.refine(&y, &start);
        assert_eq!(r.x, start);
    }
}
