//! Joint array/element response vectors `c(θ) = a(θ) ⊗ b(θ)` and their
//! angular partials, plus beampatterns.

use serde::{Deserialize, Serialize};

use crate::patterns::PatternLibrary;
use crate::scene::{dot_t, norm_sqr, steering_partials, steering_vector, Aod, ArrayGeometry};
use crate::shod::ShodBasis;
use crate::{Error, Result, C64};

/// Per-element reconfigurability model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ElementModel {
    /// Fixed isotropic element of gain `1/√(4π)`: the traditional array.
    Omni,
    /// Continuous weights over a spherical-harmonic basis.
    Synthesis { basis: ShodBasis },
    /// One pattern per element chosen from a discrete library.
    FiniteState { library: PatternLibrary },
}

impl ElementModel {
    pub fn synthesis(q: usize) -> Result<Self> {
        Ok(Self::Synthesis { basis: ShodBasis::new(q)? })
    }

    /// Number of per-element coefficients (`1`, `Q` or `S`).
    pub fn dim(&self) -> usize {
        match self {
            Self::Omni => 1,
            Self::Synthesis { basis } => basis.len(),
            Self::FiniteState { library } => library.len(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Omni => "traditional",
            Self::Synthesis { .. } => "synthesis",
            Self::FiniteState { .. } => "finite-state",
        }
    }

    /// Element vector and its elevation/azimuth partials.
    pub fn evaluate_all(&self, aod: &Aod) -> (Vec<C64>, Vec<C64>, Vec<C64>) {
        match self {
            Self::Omni => (
                vec![C64::new(OMNI_GAIN, 0.0)],
                vec![C64::new(0.0, 0.0)],
                vec![C64::new(0.0, 0.0)],
            ),
            Self::Synthesis { basis } => basis.evaluate_all(aod),
            Self::FiniteState { library } => {
                let v = library.evaluate(aod);
                let (de, da) = library.evaluate_partials(aod);
                let to_c = |x: Vec<f64>| x.into_iter().map(|r| C64::new(r, 0.0)).collect();
                (to_c(v), to_c(de), to_c(da))
            }
        }
    }

    pub fn evaluate(&self, aod: &Aod) -> Vec<C64> {
        match self {
            Self::Omni => vec![C64::new(OMNI_GAIN, 0.0)],
            Self::Synthesis { basis } => basis.evaluate(aod),
            Self::FiniteState { library } => {
                library.evaluate(aod).into_iter().map(|r| C64::new(r, 0.0)).collect()
            }
        }
    }
}

/// `1/√(4π)`, the modulus of a unit-power isotropic pattern.
pub const OMNI_GAIN: f64 = 0.282_094_791_773_878_14;

/// `c(θ)` together with `∂c/∂θ_el` and `∂c/∂θ_az`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseBundle {
    pub c1: Vec<C64>,
    pub c2: Vec<C64>,
    pub c3: Vec<C64>,
}

impl ResponseBundle {
    /// Vector for codeword type 1, 2 or 3.
    pub fn by_type(&self, kind: usize) -> &[C64] {
        match kind {
            1 => &self.c1,
            2 => &self.c2,
            3 => &self.c3,
            _ => panic!("codeword type must be 1, 2 or 3"),
        }
    }

    pub fn all(&self) -> [&[C64]; 3] {
        [&self.c1, &self.c2, &self.c3]
    }
}

/// Array geometry combined with an element model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseModel {
    pub array: ArrayGeometry,
    pub element: ElementModel,
}

fn kron(a: &[C64], b: &[C64]) -> Vec<C64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            out.push(x * y);
        }
    }
    out
}

impl ResponseModel {
    pub fn new(array: ArrayGeometry, element: ElementModel) -> Self {
        Self { array, element }
    }

    pub fn num_antennas(&self) -> usize {
        self.array.num_elements()
    }

    /// Per-antenna block length.
    pub fn block(&self) -> usize {
        self.element.dim()
    }

    /// Length of `c(θ)`: `M·Q`, `M·S` or `M`.
    pub fn dim(&self) -> usize {
        self.num_antennas() * self.block()
    }

    pub fn value(&self, aod: &Aod) -> Vec<C64> {
        kron(&steering_vector(aod, &self.array), &self.element.evaluate(aod))
    }

    pub fn bundle(&self, aod: &Aod) -> ResponseBundle {
        let a = steering_vector(aod, &self.array);
        let (da_el, da_az) = steering_partials(aod, &self.array);
        let (b, db_el, db_az) = self.element.evaluate_all(aod);
        let add = |x: Vec<C64>, y: Vec<C64>| x.into_iter().zip(y).map(|(p, q)| p + q).collect();
        ResponseBundle {
            c1: kron(&a, &b),
            c2: add(kron(&da_el, &b), kron(&a, &db_el)),
            c3: add(kron(&da_az, &b), kron(&a, &db_az)),
        }
    }

    /// `|c(θ)ᵀ w|² / ‖w‖²`.
    pub fn beampattern(&self, w: &[C64], aod: &Aod) -> Result<f64> {
        if w.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: w.len() });
        }
        let n = norm_sqr(w);
        if !(n > 0.0) {
            return Err(Error::Domain("beampattern of a zero codeword".into()));
        }
        Ok(dot_t(&self.value(aod), w).norm_sqr() / n)
    }
}
