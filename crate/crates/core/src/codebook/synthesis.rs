//! Closed-form codebook for the synthesis element model.

use crate::codebook::{aod_grid, conjugate_beam, Codebook, Codeword, EmPrecoder};
use crate::response::{ElementModel, ResponseModel};
use crate::scene::{norm_sqr, Aod, BoxRegion, Scenario};
use crate::{Error, Result, C64};

/// `√δ·c^{(i)}(θ)*/‖c^{(i)}(θ)‖` for codeword type `kind`.
pub fn ideal_codeword(model: &ResponseModel, aod: &Aod, kind: u8, delta: f64) -> Result<Vec<C64>> {
    check_kind(kind)?;
    let bundle = model.bundle(aod);
    conjugate_beam(bundle.by_type(kind as usize), delta, &format!("type-{kind} response at {aod:?}"))
}

pub(crate) fn check_kind(kind: u8) -> Result<()> {
    if !(1..=3).contains(&kind) {
        return Err(Error::Domain(format!("codeword type {kind} is not 1, 2 or 3")));
    }
    Ok(())
}

/// Splits `w` into a per-antenna weight `f_m` and a unit-norm row `e_m`
/// with `w_m = f_m e_m`. Each row is rotated so that its first
/// non-negligible entry is real and positive; an all-zero block gets
/// `e_m = [1, 0, …]` and `f_m = 0`.
pub fn factor_codeword(w: &[C64], block: usize) -> Result<(Vec<C64>, Vec<Vec<C64>>)> {
    if block == 0 || w.len() % block != 0 {
        return Err(Error::DimensionMismatch { expected: block, found: w.len() });
    }
    let total = norm_sqr(w).sqrt();
    let mut f = Vec::with_capacity(w.len() / block);
    let mut rows = Vec::with_capacity(w.len() / block);
    for chunk in w.chunks(block) {
        let n = norm_sqr(chunk).sqrt();
        if !(n > 1e-15 * total) || n == 0.0 {
            let mut e = vec![C64::new(0.0, 0.0); block];
            e[0] = C64::new(1.0, 0.0);
            f.push(C64::new(0.0, 0.0));
            rows.push(e);
            continue;
        }
        let lead = chunk.iter().find(|x| x.norm() > 1e-12 * n).expect("nonzero block");
        let rot = C64::from_polar(1.0, -lead.arg());
        rows.push(chunk.iter().map(|x| x * rot / n).collect());
        f.push(rot.conj() * n);
    }
    Ok((f, rows))
}

/// `Eᵀ f` for block-diagonal `E` with the given rows.
pub fn reconstruct(f: &[C64], rows: &[Vec<C64>]) -> Vec<C64> {
    f.iter().zip(rows).flat_map(|(fm, e)| e.iter().map(move |x| fm * x)).collect()
}

/// Codeword of type `kind` at `aod`, factored into BB and EM parts.
pub fn codeword(model: &ResponseModel, aod: &Aod, kind: u8, delta: f64) -> Result<Codeword> {
    let w = ideal_codeword(model, aod, kind, delta)?;
    let (f, rows) = factor_codeword(&w, model.block())?;
    Ok(Codeword {
        kind,
        aod: *aod,
        delta,
        w: reconstruct(&f, &rows),
        f,
        em: EmPrecoder::Continuous { rows },
        objective_trace: Vec::new(),
    })
}

/// `3L` codewords over the AOD grid of `region`, at uniform power.
pub fn build_codebook(region: &BoxRegion, scenario: &Scenario, model: &ResponseModel) -> Result<Codebook> {
    if !matches!(model.element, ElementModel::Synthesis { .. }) {
        return Err(Error::Config("synthesis codebook needs a synthesis element model".into()));
    }
    let grid = aod_grid(region, scenario)?;
    let delta = 1.0 / (3 * grid.len()) as f64;
    let mut codewords = Vec::with_capacity(3 * grid.len());
    for aod in &grid {
        for kind in 1..=3u8 {
            codewords.push(codeword(model, aod, kind, delta)?);
        }
    }
    Ok(Codebook { model: "synthesis".into(), codewords })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{dot_t, steering_vector};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn model(q: usize) -> ResponseModel {
        ResponseModel::new(Scenario::table_one().array, ElementModel::synthesis(q).unwrap())
    }

    #[test]
    fn ideal_codeword_norms() {
        let m = model(4);
        let aod = Aod::new(1.6, 0.1);
        let w = ideal_codeword(&m, &aod, 1, 1.0).unwrap();
        assert_relative_eq!(norm_sqr(&w), 1.0, epsilon = 1e-12);
        let z = ideal_codeword(&m, &aod, 1, 0.0).unwrap();
        assert_eq!(norm_sqr(&z), 0.0);
        assert!(ideal_codeword(&m, &aod, 4, 1.0).is_err());
    }

    #[test]
    fn derivative_beam_maximizes_its_gain() {
        let m = model(4);
        let aod = Aod::new(1.4, -0.3);
        let b = m.bundle(&aod);
        let w = ideal_codeword(&m, &aod, 2, 1.0).unwrap();
        let best = dot_t(&b.c2, &w).norm_sqr();
        assert_relative_eq!(best, norm_sqr(&b.c2), max_relative = 1e-12);
        for k in 0..5 {
            let other = ideal_codeword(&m, &Aod::new(1.4 + 0.05 * k as f64, -0.2), 1, 1.0).unwrap();
            assert!(dot_t(&b.c2, &other).norm_sqr() <= best * (1.0 + 1e-12));
        }
    }

    #[test]
    fn q1_factors_to_conjugate_steering() {
        let m = model(1);
        let aod = Aod::new(1.5, 0.2);
        let cw = codeword(&m, &aod, 1, 0.5).unwrap();
        let a = steering_vector(&aod, &m.array);
        let EmPrecoder::Continuous { rows } = &cw.em else { panic!() };
        for (row, (fm, am)) in rows.iter().zip(cw.f.iter().zip(&a)) {
            assert!((row[0] - C64::new(1.0, 0.0)).norm() < 1e-14);
            assert!((fm - am.conj() * (0.5f64.sqrt() / 5.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn zero_block_handling() {
        let w = vec![C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.6, 0.0), C64::new(0.0, 0.8)];
        let (f, rows) = factor_codeword(&w, 2).unwrap();
        assert_eq!(f[0], C64::new(0.0, 0.0));
        assert_eq!(rows[0], vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        let back = reconstruct(&f, &rows);
        for (x, y) in back.iter().zip(&w) {
            assert!((x - y).norm() < 1e-15);
        }
    }

    #[test]
    fn default_codebook() {
        let s = Scenario::table_one();
        let m = model(4);
        let cb = build_codebook(&s.uncertainty_region, &s, &m).unwrap();
        assert_eq!(cb.len(), 9);
        assert_relative_eq!(cb.total_power(), 1.0, epsilon = 1e-12);
        for cw in &cb.codewords {
            let EmPrecoder::Continuous { rows } = &cw.em else { panic!() };
            for r in rows {
                assert_relative_eq!(norm_sqr(r), 1.0, epsilon = 1e-12);
            }
        }
        let json = cb.to_json().unwrap();
        let back = Codebook::from_json(&json).unwrap();
        assert_eq!(back, cb);
        let point = build_codebook(&crate::scene::BoxRegion::point(s.ue_position), &s, &m).unwrap();
        assert_eq!(point.len(), 3);
    }

    proptest! {
        #[test]
        fn factorization_reconstructs(el in 0.3..2.8f64, az in -1.2..1.2f64, kind in 1u8..4, delta in 0.01..1.0f64) {
            let m = model(9);
            let aod = Aod::new(el, az);
            let w = ideal_codeword(&m, &aod, kind, delta).unwrap();
            let (f, rows) = factor_codeword(&w, 9).unwrap();
            let back = reconstruct(&f, &rows);
            for (x, y) in back.iter().zip(&w) {
                prop_assert!((x - y).norm() < 1e-12);
            }
            prop_assert!((norm_sqr(&f) - delta).abs() < 1e-12);
            for r in &rows {
                prop_assert!((norm_sqr(r) - 1.0).abs() < 1e-12);
            }
        }
    }
}
