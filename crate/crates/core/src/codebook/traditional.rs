//! Conjugate array-response codebook for a conventional array of fixed
//! isotropic elements.

use crate::codebook::{aod_grid, conjugate_beam, Codebook, Codeword, EmPrecoder};
use crate::scene::{steering_partials, steering_vector, Aod, ArrayGeometry, BoxRegion, Scenario};
use crate::{Error, Result};

/// Beam matched to `a(θ)` (type 1) or to one of its angular partials.
pub fn codeword(array: &ArrayGeometry, aod: &Aod, kind: u8, delta: f64) -> Result<Codeword> {
    let v = match kind {
        1 => steering_vector(aod, array),
        2 => steering_partials(aod, array).0,
        3 => steering_partials(aod, array).1,
        _ => return Err(Error::Domain(format!("codeword type {kind} is not 1, 2 or 3"))),
    };
    let w = conjugate_beam(&v, delta, &format!("type-{kind} steering vector at {aod:?}"))?;
    Ok(Codeword { kind, aod: *aod, delta, f: w.clone(), em: EmPrecoder::Fixed, w, objective_trace: Vec::new() })
}

pub fn build_codebook(region: &BoxRegion, scenario: &Scenario) -> Result<Codebook> {
    let grid = aod_grid(region, scenario)?;
    let delta = 1.0 / (3 * grid.len()) as f64;
    let mut codewords = Vec::with_capacity(3 * grid.len());
    for aod in &grid {
        for kind in 1..=3u8 {
            codewords.push(codeword(&scenario.array, aod, kind, delta)?);
        }
    }
    Ok(Codebook { model: "traditional".into(), codewords })
}
