//! Codebook for the finite-state element model: ideal codewords, baseband
//! precoders for a fixed state selection, and block-coordinate-descent
//! state selection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::synthesis::check_kind;
use crate::codebook::{aod_grid, conjugate_beam, front_hemisphere_grid, Codebook, Codeword, EmPrecoder};
use crate::patterns::PatternLibrary;
use crate::response::{ElementModel, ResponseModel};
use crate::scene::{steering_vector, Aod, BoxRegion, Scenario};
use crate::{Error, Result, C64};

/// `√δ·c̄^{(i)}(θ)*/‖c̄^{(i)}(θ)‖`; generally not realizable with one state per antenna.
pub fn ideal_codeword(model: &ResponseModel, aod: &Aod, kind: u8, delta: f64) -> Result<Vec<C64>> {
    check_kind(kind)?;
    let bundle = model.bundle(aod);
    conjugate_beam(bundle.by_type(kind as usize), delta, &format!("type-{kind} response at {aod:?}"))
}

/// Entries of `c` kept by a selection: `Ē c`, one per antenna.
fn selected(c: &[C64], selection: &[usize], s: usize) -> Vec<C64> {
    selection.iter().enumerate().map(|(m, &k)| c[m * s + k]).collect()
}

/// `f̂ = √δ·Ē c̄^{(i)}(θ)*/‖Ē c̄^{(i)}(θ)‖`.
pub fn bb_precoder(
    model: &ResponseModel,
    aod: &Aod,
    kind: u8,
    selection: &[usize],
    delta: f64,
) -> Result<Vec<C64>> {
    check_kind(kind)?;
    let s = model.block();
    validate_selection(selection, model.num_antennas(), s)?;
    let bundle = model.bundle(aod);
    let picked = selected(bundle.by_type(kind as usize), selection, s);
    conjugate_beam(&picked, delta, &format!("selected type-{kind} response at {aod:?}"))
}

/// `w̄ = Ēᵀ f`.
pub fn admissible_codeword(f: &[C64], selection: &[usize], s: usize) -> Vec<C64> {
    let mut w = vec![C64::new(0.0, 0.0); f.len() * s];
    for (m, (&k, fm)) in selection.iter().zip(f).enumerate() {
        w[m * s + k] = *fm;
    }
    w
}

fn validate_selection(selection: &[usize], m: usize, s: usize) -> Result<()> {
    if selection.len() != m {
        return Err(Error::DimensionMismatch { expected: m, found: selection.len() });
    }
    if let Some(k) = selection.iter().find(|&&k| k >= s) {
        return Err(Error::Domain(format!("state index {k} out of range for {s} states")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BcdInit {
    /// Uniformly random states from the seeded generator.
    Random,
    /// Per antenna, the state with the largest ideal-codeword entry.
    Greedy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BcdConfig {
    /// Size of the angular grid the beampatterns are matched on.
    pub grid_points: usize,
    /// Stop when a sweep changes the objective by at most this much.
    pub tolerance: f64,
    pub max_sweeps: usize,
    pub init: BcdInit,
    /// Also start from the greedy selection and from every all-equal
    /// selection, keeping the best run.
    pub multistart: bool,
    /// Additional seeded random starts when `multistart` is set.
    pub random_restarts: usize,
    pub seed: u64,
}

impl Default for BcdConfig {
    fn default() -> Self {
        Self {
            grid_points: 1000,
            tolerance: 1e-10,
            max_sweeps: 100,
            init: BcdInit::Random,
            multistart: true,
            random_restarts: 8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BcdOutcome {
    pub selection: Vec<usize>,
    pub objective: f64,
    /// Objective before the first update and after every antenna update.
    pub trace: Vec<f64>,
    pub sweeps: usize,
}

/// Beampattern matching of one codeword over an angular grid:
/// `𝒢(Ē) = ‖C̄ᵀ ĒᵀĒ c̄* / ‖Ē c̄‖ − C̄ᵀ c̄* / ‖c̄‖‖²`.
pub struct SelectionProblem {
    m: usize,
    s: usize,
    n: usize,
    /// `a_m(θ_n)`, row-major `[n][m]`.
    steer: Vec<C64>,
    /// `b̄_s(θ_n)`, row-major `[n][s]`.
    pattern: Vec<f64>,
    /// `conj(c̄^{(i)}_{m,s})`, row-major `[m][s]`.
    g: Vec<C64>,
    target: Vec<C64>,
}

impl SelectionProblem {
    pub fn new(model: &ResponseModel, aod: &Aod, kind: u8, grid: &[Aod]) -> Result<Self> {
        check_kind(kind)?;
        let ElementModel::FiniteState { library } = &model.element else {
            return Err(Error::Config("state selection needs a finite-state element model".into()));
        };
        let (m, s, n) = (model.num_antennas(), library.len(), grid.len());
        if n == 0 {
            return Err(Error::Domain("angular grid is empty".into()));
        }
        let bundle = model.bundle(aod);
        let c = bundle.by_type(kind as usize);
        let norm = crate::scene::norm_sqr(c).sqrt();
        if !(norm > 1e-300) {
            return Err(Error::DegenerateCodeword(format!("type-{kind} response at {aod:?} has zero norm")));
        }
        let g: Vec<C64> = c.iter().map(|x| x.conj()).collect();
        let mut steer = Vec::with_capacity(n * m);
        let mut pattern = Vec::with_capacity(n * s);
        for th in grid {
            steer.extend(steering_vector(th, &model.array));
            pattern.extend(library.evaluate(th));
        }
        let mut target = vec![C64::new(0.0, 0.0); n];
        for (k, t) in target.iter_mut().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for mm in 0..m {
                let mut inner = C64::new(0.0, 0.0);
                for ss in 0..s {
                    inner += g[mm * s + ss] * pattern[k * s + ss];
                }
                acc += steer[k * m + mm] * inner;
            }
            *t = acc / norm;
        }
        Ok(Self { m, s, n, steer, pattern, g, target })
    }

    pub fn num_antennas(&self) -> usize {
        self.m
    }

    pub fn num_states(&self) -> usize {
        self.s
    }

    fn numerator(&self, selection: &[usize]) -> (Vec<C64>, f64) {
        let mut v = vec![C64::new(0.0, 0.0); self.n];
        let mut power = 0.0;
        for (mm, &k) in selection.iter().enumerate() {
            let gk = self.g[mm * self.s + k];
            power += gk.norm_sqr();
            for (nn, x) in v.iter_mut().enumerate() {
                *x += self.steer[nn * self.m + mm] * self.pattern[nn * self.s + k] * gk;
            }
        }
        (v, power)
    }

    fn mismatch(&self, v: &[C64], power: f64) -> f64 {
        if !(power > 0.0) {
            return f64::INFINITY;
        }
        let inv = 1.0 / power.sqrt();
        v.iter().zip(&self.target).map(|(x, t)| (x * inv - t).norm_sqr()).sum()
    }

    pub fn objective(&self, selection: &[usize]) -> f64 {
        let (v, p) = self.numerator(selection);
        self.mismatch(&v, p)
    }

    pub fn initial_selection(&self, init: BcdInit, rng: &mut impl Rng) -> Vec<usize> {
        match init {
            BcdInit::Random => (0..self.m).map(|_| rng.random_range(0..self.s)).collect(),
            BcdInit::Greedy => (0..self.m)
                .map(|mm| {
                    let row = &self.g[mm * self.s..(mm + 1) * self.s];
                    let mut best = 0;
                    for k in 1..self.s {
                        if row[k].norm() > row[best].norm() {
                            best = k;
                        }
                    }
                    best
                })
                .collect(),
        }
    }

    /// Per-antenna exhaustive sweeps from `start`. Each update keeps the
    /// current state unless another is at least as good, with ties going to
    /// the lowest index, so the trace never increases.
    pub fn bcd(&self, start: Vec<usize>, tolerance: f64, max_sweeps: usize) -> Result<BcdOutcome> {
        validate_selection(&start, self.m, self.s)?;
        let mut sel = start;
        let (mut v, mut power) = self.numerator(&sel);
        let mut current = self.mismatch(&v, power);
        let mut trace = vec![current];
        let mut buf = vec![C64::new(0.0, 0.0); self.n];
        let mut best_buf = vec![C64::new(0.0, 0.0); self.n];
        let mut sweeps = 0;
        while sweeps < max_sweeps.max(1) {
            sweeps += 1;
            let before = current;
            for mm in 0..self.m {
                let old = sel[mm];
                let g_old = self.g[mm * self.s + old];
                let mut best: Option<(usize, f64, f64)> = None;
                for k in 0..self.s {
                    let (value, p) = if k == old {
                        (current, power)
                    } else {
                        let gk = self.g[mm * self.s + k];
                        let p = power - g_old.norm_sqr() + gk.norm_sqr();
                        for nn in 0..self.n {
                            let a = self.steer[nn * self.m + mm];
                            let row = nn * self.s;
                            buf[nn] = v[nn] + a * (self.pattern[row + k] * gk - self.pattern[row + old] * g_old);
                        }
                        let value = self.mismatch(&buf, p);
                        (value, p)
                    };
                    let better = match best {
                        None => true,
                        Some((_, bv, _)) => value < bv,
                    };
                    if better {
                        best = Some((k, value, p));
                        if k != old {
                            std::mem::swap(&mut buf, &mut best_buf);
                        }
                    }
                }
                let (k, value, p) = best.expect("at least one state");
                if k != old {
                    sel[mm] = k;
                    std::mem::swap(&mut v, &mut best_buf);
                    power = p;
                    current = value;
                }
                trace.push(current);
            }
            if (before - current).abs() <= tolerance || (before.is_infinite() && current.is_infinite()) {
                break;
            }
        }
        Ok(BcdOutcome { objective: current, selection: sel, trace, sweeps })
    }

    /// Minimum over all `S^M` selections. Objectives within a relative
    /// `1e-12` count as equal and go to the lexicographically smaller selection.
    pub fn exhaustive(&self) -> Result<(Vec<usize>, f64)> {
        let total = (self.s as u128).checked_pow(self.m as u32).unwrap_or(u128::MAX);
        if total > 1 << 24 {
            return Err(Error::Domain(format!("{total} selections are too many to enumerate")));
        }
        let mut sel = vec![0usize; self.m];
        let mut best = (sel.clone(), self.objective(&sel));
        for _ in 1..total {
            // Odometer with the last antenna fastest, giving lexicographic order.
            for mm in (0..self.m).rev() {
                sel[mm] += 1;
                if sel[mm] < self.s {
                    break;
                }
                sel[mm] = 0;
            }
            let v = self.objective(&sel);
            if improves(v, &sel, best.1, &best.0) {
                best = (sel.clone(), v);
            }
        }
        Ok(best)
    }

    /// BCD from `primary`, from every extra start in `extra`, and from the
    /// restarts requested by `config`; returns the best run.
    pub fn optimize(
        &self,
        primary: Vec<usize>,
        extra: &[Vec<usize>],
        config: &BcdConfig,
        rng: &mut impl Rng,
    ) -> Result<BcdOutcome> {
        let mut starts = vec![primary];
        starts.extend(extra.iter().cloned());
        if config.multistart {
            starts.push(self.initial_selection(BcdInit::Greedy, rng));
            starts.extend((0..self.s).map(|k| vec![k; self.m]));
            for _ in 0..config.random_restarts {
                starts.push(self.initial_selection(BcdInit::Random, rng));
            }
        }
        let mut best: Option<BcdOutcome> = None;
        for start in starts {
            let run = self.bcd(start, config.tolerance, config.max_sweeps)?;
            let replace = match &best {
                None => true,
                Some(b) => improves(run.objective, &run.selection, b.objective, &b.selection),
            };
            if replace {
                best = Some(run);
            }
        }
        Ok(best.expect("at least one start"))
    }
}

fn improves(v: f64, sel: &[usize], best_v: f64, best_sel: &[usize]) -> bool {
    if best_v.is_infinite() && v.is_infinite() {
        return sel < best_sel;
    }
    let tol = 1e-12 * best_v.abs().max(v.abs());
    v < best_v - tol || ((v - best_v).abs() <= tol && sel < best_sel)
}

/// Generator for codeword `index` of a codebook, independent of scheduling.
fn codeword_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Selection by BCD followed by the matching baseband precoder.
pub fn codeword(
    model: &ResponseModel,
    aod: &Aod,
    kind: u8,
    delta: f64,
    grid: &[Aod],
    config: &BcdConfig,
    rng: &mut impl Rng,
) -> Result<Codeword> {
    let problem = SelectionProblem::new(model, aod, kind, grid)?;
    let primary = problem.initial_selection(config.init, rng);
    let outcome = problem.optimize(primary, &[], config, rng)?;
    codeword_from_outcome(model, aod, kind, delta, outcome)
}

pub fn codeword_from_outcome(
    model: &ResponseModel,
    aod: &Aod,
    kind: u8,
    delta: f64,
    outcome: BcdOutcome,
) -> Result<Codeword> {
    let f = bb_precoder(model, aod, kind, &outcome.selection, delta)?;
    let w = admissible_codeword(&f, &outcome.selection, model.block());
    Ok(Codeword {
        kind,
        aod: *aod,
        delta,
        f,
        w,
        em: EmPrecoder::Selection { states: outcome.selection },
        objective_trace: outcome.trace,
    })
}

/// `3L` codewords over the AOD grid of `region`. Codeword `j` draws its
/// random starts from stream `j` of a generator seeded with `config.seed`.
pub fn build_codebook(
    region: &BoxRegion,
    scenario: &Scenario,
    model: &ResponseModel,
    config: &BcdConfig,
) -> Result<Codebook> {
    build_codebook_with_starts(region, scenario, model, config, None)
}

/// Like [`build_codebook`], with one additional BCD start per codeword
/// (ordered as the codewords), e.g. the selections of a design on a
/// smaller nested library.
pub fn build_codebook_with_starts(
    region: &BoxRegion,
    scenario: &Scenario,
    model: &ResponseModel,
    config: &BcdConfig,
    warm: Option<&[Vec<usize>]>,
) -> Result<Codebook> {
    if !matches!(model.element, ElementModel::FiniteState { .. }) {
        return Err(Error::Config("finite-state codebook needs a finite-state element model".into()));
    }
    let aods = aod_grid(region, scenario)?;
    if let Some(w) = warm {
        if w.len() != 3 * aods.len() {
            return Err(Error::DimensionMismatch { expected: 3 * aods.len(), found: w.len() });
        }
    }
    let grid = front_hemisphere_grid(config.grid_points.max(1));
    let delta = 1.0 / (3 * aods.len()) as f64;
    let codewords = (0..3 * aods.len())
        .into_par_iter()
        .map(|j| {
            let aod = aods[j / 3];
            let kind = (j % 3 + 1) as u8;
            let mut rng = codeword_rng(config.seed, j);
            let problem = SelectionProblem::new(model, &aod, kind, &grid)?;
            let primary = problem.initial_selection(config.init, &mut rng);
            let extra: Vec<Vec<usize>> = warm.map(|w| vec![w[j].clone()]).unwrap_or_default();
            let outcome = problem.optimize(primary, &extra, config, &mut rng)?;
            codeword_from_outcome(model, &aod, kind, delta, outcome)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Codebook { model: "finite-state".into(), codewords })
}

/// Selections of a codebook, e.g. to warm-start a design on a larger nested library.
pub fn selections(codebook: &Codebook) -> Vec<Vec<usize>> {
    codebook
        .codewords
        .iter()
        .map(|c| match &c.em {
            EmPrecoder::Selection { states } => states.clone(),
            _ => Vec::new(),
        })
        .collect()
}

pub fn finite_state_model(scenario: &Scenario, library: PatternLibrary) -> ResponseModel {
    ResponseModel::new(scenario.array.clone(), ElementModel::FiniteState { library })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{norm_sqr, ArrayGeometry};
    use approx::assert_relative_eq;

    fn small_model(m: usize, s: usize, seed: u64) -> ResponseModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lib = PatternLibrary::default_library(s, &mut rng).unwrap();
        let arr = ArrayGeometry::half_wavelength(1, m, crate::scene::SPEED_OF_LIGHT / 30e9);
        ResponseModel::new(arr, ElementModel::FiniteState { library: lib })
    }

    #[test]
    fn single_state_is_forced() {
        let model = small_model(3, 1, 1);
        let aod = Aod::new(1.5, 0.2);
        let grid = front_hemisphere_grid(200);
        let p = SelectionProblem::new(&model, &aod, 1, &grid).unwrap();
        let out = p.bcd(vec![0; 3], 1e-10, 100).unwrap();
        assert_eq!(out.selection, vec![0, 0, 0]);
        assert_eq!(out.sweeps, 1);
        assert!(out.trace.windows(2).all(|w| w[1] == w[0]));
        assert!(out.objective < 1e-20);
        let ideal = ideal_codeword(&model, &aod, 1, 1.0).unwrap();
        let f = bb_precoder(&model, &aod, 1, &[0, 0, 0], 1.0).unwrap();
        let w = admissible_codeword(&f, &[0, 0, 0], 1);
        for (x, y) in w.iter().zip(&ideal) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn bb_precoder_power_and_identity() {
        let model = small_model(4, 6, 2);
        let aod = Aod::new(1.4, -0.2);
        let sel = vec![2, 0, 5, 1];
        for kind in 1..=3 {
            let f = bb_precoder(&model, &aod, kind, &sel, 0.3).unwrap();
            assert_relative_eq!(norm_sqr(&f), 0.3, epsilon = 1e-12);
            let w = admissible_codeword(&f, &sel, 6);
            assert_relative_eq!(norm_sqr(&w), 0.3, epsilon = 1e-12);
            assert_eq!(w.iter().filter(|x| x.norm() > 0.0).count(), 4);
        }
        assert!(bb_precoder(&model, &aod, 1, &[0, 0, 9, 0], 1.0).is_err());
    }

    #[test]
    fn single_antenna_precoder_is_unimodular() {
        let model = small_model(1, 4, 3);
        let f = bb_precoder(&model, &Aod::new(1.3, 0.4), 2, &[3], 0.25).unwrap();
        assert_relative_eq!(f[0].norm(), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn bcd_matches_exhaustive_small() {
        let grid = front_hemisphere_grid(300);
        for seed in 0..5u64 {
            let model = small_model(2, 4, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let aod = Aod::new(1.2 + 0.1 * seed as f64, -0.4 + 0.2 * seed as f64);
            for kind in 1..=3 {
                let p = SelectionProblem::new(&model, &aod, kind, &grid).unwrap();
                let start = p.initial_selection(BcdInit::Random, &mut rng);
                let single = p.bcd(start.clone(), 1e-12, 100).unwrap();
                assert!(single.trace.windows(2).all(|w| w[1] <= w[0]));
                let out = p.optimize(start, &[], &BcdConfig::default(), &mut rng).unwrap();
                let (best, value) = p.exhaustive().unwrap();
                assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
                assert_eq!(out.selection, best, "{} vs {value}", out.objective);
            }
        }
    }

    #[test]
    fn codebook_on_default_region() {
        let s = Scenario::table_one();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lib = PatternLibrary::default_library(8, &mut rng).unwrap();
        let model = finite_state_model(&s, lib);
        let config = BcdConfig { grid_points: 200, ..BcdConfig::default() };
        let cb = build_codebook(&s.uncertainty_region, &s, &model, &config).unwrap();
        assert_eq!(cb.len(), 9);
        assert_relative_eq!(cb.total_power(), 1.0, epsilon = 1e-12);
        for c in &cb.codewords {
            let EmPrecoder::Selection { states } = &c.em else { panic!() };
            assert_eq!(states.len(), 25);
            assert!(c.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        }
        let again = build_codebook(&s.uncertainty_region, &s, &model, &config).unwrap();
        assert_eq!(cb, again);
        let back = Codebook::from_json(&cb.to_json().unwrap()).unwrap();
        assert_eq!(back, cb);
    }
}
