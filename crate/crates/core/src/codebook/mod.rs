//! Codebooks of `N_t` codewords shared by the synthesis, finite-state and
//! traditional designs, and the angular grids they are built on.

pub mod finite_state;
pub mod synthesis;
pub mod traditional;

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::scene::{aod_from_local, norm_sqr, Aod, BoxRegion, Scenario};
use crate::{Error, Result, C64};

/// Grid step of the robust codebook, in radians, for `M_h` columns.
pub fn grid_step(cols: usize) -> f64 {
    1.8 / cols as f64
}

/// Per-element part of a codeword.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmPrecoder {
    /// Fixed isotropic elements.
    Fixed,
    /// One unit-norm row of length `Q` per antenna.
    Continuous {
        #[serde(with = "interleaved_rows")]
        rows: Vec<Vec<C64>>,
    },
    /// One selected state index per antenna (0-based).
    Selection { states: Vec<usize> },
}

/// One codeword `w = Eᵀ f` with power share `δ = ‖w‖²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codeword {
    /// 1: value beam, 2: elevation-derivative beam, 3: azimuth-derivative beam.
    pub kind: u8,
    pub aod: Aod,
    pub delta: f64,
    #[serde(with = "interleaved")]
    pub f: Vec<C64>,
    pub em: EmPrecoder,
    #[serde(with = "interleaved")]
    pub w: Vec<C64>,
    /// Finite-state designs record the selection objective after every
    /// antenna update; empty otherwise.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objective_trace: Vec<f64>,
}

impl Codeword {
    /// Rescales `f` and `w` to a new power share. A codeword currently at
    /// zero power keeps its zero vectors.
    pub fn set_delta(&mut self, delta: f64) {
        let factor = if self.delta > 0.0 { (delta / self.delta).sqrt() } else { 0.0 };
        for x in self.f.iter_mut().chain(self.w.iter_mut()) {
            *x *= factor;
        }
        self.delta = delta;
    }

    /// `w/‖w‖`.
    pub fn unit_w(&self) -> Vec<C64> {
        let n = norm_sqr(&self.w).sqrt();
        if n > 0.0 {
            self.w.iter().map(|x| x / n).collect()
        } else {
            self.w.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub model: String,
    pub codewords: Vec<Codeword>,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.codewords.iter().map(|c| c.delta).collect()
    }

    pub fn set_deltas(&mut self, deltas: &[f64]) -> Result<()> {
        if deltas.len() != self.codewords.len() {
            return Err(Error::DimensionMismatch { expected: self.codewords.len(), found: deltas.len() });
        }
        for (c, &d) in self.codewords.iter_mut().zip(deltas) {
            c.set_delta(d);
        }
        Ok(())
    }

    pub fn with_uniform_power(mut self) -> Self {
        let n = self.codewords.len();
        let deltas = vec![1.0 / n as f64; n];
        self.set_deltas(&deltas).expect("matching length");
        self
    }

    /// Power-weighted codewords `w_t`.
    pub fn weighted(&self) -> Vec<Vec<C64>> {
        self.codewords.iter().map(|c| c.w.clone()).collect()
    }

    /// Unit-norm codewords, the rank-one covariances of power allocation.
    pub fn unit(&self) -> Vec<Vec<C64>> {
        self.codewords.iter().map(Codeword::unit_w).collect()
    }

    pub fn total_power(&self) -> f64 {
        self.codewords.iter().map(|c| norm_sqr(&c.w)).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Elevation and azimuth intervals subtended by the region, as seen from
/// the array, estimated from a dense sampling of the box surface.
pub fn angular_bounds(region: &BoxRegion, scenario: &Scenario) -> Result<((f64, f64), (f64, f64))> {
    let mut el = (f64::INFINITY, f64::NEG_INFINITY);
    let mut az = (f64::INFINITY, f64::NEG_INFINITY);
    let samples = if region.min == region.max {
        vec![region.min]
    } else {
        region.surface_samples(41)
    };
    for p in samples {
        let a = aod_from_local(&scenario.to_local(&p))?;
        el = (el.0.min(a.el), el.1.max(a.el));
        az = (az.0.min(a.az), az.1.max(a.az));
    }
    if az.1 - az.0 > PI {
        return Err(Error::InvalidScenario(
            "uncertainty region straddles the azimuth branch cut behind the array".into(),
        ));
    }
    Ok((el, az))
}

/// Points `mid + k·step` for `|k| ≤ ⌊half_width/step + ½⌋`.
fn centred_axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let mid = 0.5 * (lo + hi);
    let k = ((0.5 * (hi - lo)) / step + 0.5).floor() as i64;
    (-k..=k).map(|i| mid + i as f64 * step).collect()
}

/// AOD grid of the robust codebook: step `1.8/M_h` rad in both angles,
/// centred on the angular midpoint of the region. Elevation varies slowest.
pub fn aod_grid(region: &BoxRegion, scenario: &Scenario) -> Result<Vec<Aod>> {
    let ((el_lo, el_hi), (az_lo, az_hi)) = angular_bounds(region, scenario)?;
    let step = grid_step(scenario.array.cols);
    let els = centred_axis(el_lo, el_hi, step);
    let azs = centred_axis(az_lo, az_hi, step);
    let mut grid = Vec::with_capacity(els.len() * azs.len());
    for &e in &els {
        for &a in &azs {
            grid.push(Aod::new(e.clamp(0.0, PI), a));
        }
    }
    if grid.is_empty() {
        return Err(Error::InvalidScenario("empty AOD grid".into()));
    }
    Ok(grid)
}

/// `n` directions on a Fibonacci layout over the front (`+x`) hemisphere
/// of the array frame.
pub fn front_hemisphere_grid(n: usize) -> Vec<Aod> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let x = 1.0 - (i as f64 + 0.5) / n as f64;
            let r = (1.0 - x * x).max(0.0).sqrt();
            let ang = golden * i as f64;
            aod_from_local(&[x, r * ang.cos(), r * ang.sin()]).expect("unit vector")
        })
        .collect()
}

/// Unit-norm conjugate `√δ·c*/‖c‖`.
pub(crate) fn conjugate_beam(c: &[C64], delta: f64, what: &str) -> Result<Vec<C64>> {
    let n = norm_sqr(c).sqrt();
    if !(n > 1e-300) {
        return Err(Error::DegenerateCodeword(format!("{what} has zero norm")));
    }
    let s = delta.sqrt() / n;
    Ok(c.iter().map(|x| x.conj() * s).collect())
}

mod interleaved {
    use super::C64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[C64], s: S) -> Result<S::Ok, S::Error> {
        let flat: Vec<f64> = v.iter().flat_map(|c| [c.re, c.im]).collect();
        flat.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<C64>, D::Error> {
        let flat = Vec::<f64>::deserialize(d)?;
        if flat.len() % 2 != 0 {
            return Err(serde::de::Error::custom("interleaved complex array has odd length"));
        }
        Ok(flat.chunks(2).map(|p| C64::new(p[0], p[1])).collect())
    }
}

mod interleaved_rows {
    use super::C64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(rows: &[Vec<C64>], s: S) -> Result<S::Ok, S::Error> {
        let flat: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().flat_map(|c| [c.re, c.im]).collect()).collect();
        flat.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<C64>>, D::Error> {
        let flat = Vec::<Vec<f64>>::deserialize(d)?;
        flat.into_iter()
            .map(|r| {
                if r.len() % 2 != 0 {
                    return Err(serde::de::Error::custom("interleaved complex array has odd length"));
                }
                Ok(r.chunks(2).map(|p| C64::new(p[0], p[1])).collect())
            })
            .collect()
    }
}
