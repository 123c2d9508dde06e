//! Finite-state radiation-pattern library: synthetic analytic states,
//! tabulated states loaded from CSV grids, unit-power normalization and
//! angular derivatives.

use std::f64::consts::PI;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use gauss_quad::legendre::GaussLegendre;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scene::Aod;
use crate::{Error, Result};

pub const CSV_HEADER: [&str; 3] = ["theta_el_deg", "theta_az_deg", "value"];

/// Pattern proportional to `(1 + u(θ)·μ)^p`, scaled to unit radiated power.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticState {
    /// Unit steering direction `μ` in the array frame.
    pub direction: [f64; 3],
    /// Concentration exponent `p ≥ 0`.
    pub exponent: f64,
    /// Multiplicative constant.
    pub amplitude: f64,
}

impl AnalyticState {
    /// Normalized state pointing along `direction` (not required to be unit length).
    pub fn new(direction: [f64; 3], exponent: f64) -> Result<Self> {
        let n = (direction[0].powi(2) + direction[1].powi(2) + direction[2].powi(2)).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Domain("steering direction must be nonzero".into()));
        }
        if !(exponent >= 0.0) || !exponent.is_finite() {
            return Err(Error::Domain(format!("invalid exponent {exponent}")));
        }
        Ok(Self {
            direction: [direction[0] / n, direction[1] / n, direction[2] / n],
            exponent,
            amplitude: Self::unit_power_amplitude(exponent),
        })
    }

    /// `K` with `∫ K² (1 + u·μ)^{2p} dΩ = 1`, using
    /// `∫ (1 + u·μ)^{2p} dΩ = 2π·2^{2p+1}/(2p+1)`.
    pub fn unit_power_amplitude(exponent: f64) -> f64 {
        ((2.0 * exponent + 1.0) / (2.0 * PI * 2f64.powf(2.0 * exponent + 1.0))).sqrt()
    }

    fn base(&self, aod: &Aod) -> f64 {
        let u = aod.unit_vector();
        let mu = &self.direction;
        (1.0 + u[0] * mu[0] + u[1] * mu[1] + u[2] * mu[2]).max(0.0)
    }

    pub fn value(&self, aod: &Aod) -> f64 {
        if self.exponent == 0.0 {
            return self.amplitude;
        }
        self.amplitude * self.base(aod).powf(self.exponent)
    }

    pub fn partials(&self, aod: &Aod) -> (f64, f64) {
        if self.exponent == 0.0 {
            return (0.0, 0.0);
        }
        let g = self.base(aod);
        let (se, ce) = aod.el.sin_cos();
        let (sa, ca) = aod.az.sin_cos();
        let mu = &self.direction;
        let du_el = ce * ca * mu[0] + ce * sa * mu[1] - se * mu[2];
        let du_az = -se * sa * mu[0] + se * ca * mu[1];
        let outer = if self.exponent == 1.0 {
            self.amplitude
        } else {
            self.amplitude * self.exponent * g.powf(self.exponent - 1.0)
        };
        (outer * du_el, outer * du_az)
    }
}

/// Pattern sampled on a regular `(θ_el, θ_az)` grid in degrees with
/// bilinear interpolation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabulatedState {
    el_deg: Vec<f64>,
    az_deg: Vec<f64>,
    /// Row-major `[el][az]` raw samples as provided.
    raw: Vec<f64>,
    /// Normalization factor applied to `raw`.
    scale: f64,
    wraps: bool,
}

/// Result of evaluating a tabulated state, with a flag set when the query
/// fell outside the grid and was clamped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lookup {
    pub value: f64,
    pub clamped: bool,
}

impl TabulatedState {
    /// Builds and normalizes a state. `raw` is row-major with the azimuth
    /// index fastest.
    pub fn new(el_deg: Vec<f64>, az_deg: Vec<f64>, raw: Vec<f64>) -> Result<Self> {
        let bad = |m: String| Error::PatternData { source_name: "<memory>".into(), message: m };
        if el_deg.is_empty() || az_deg.is_empty() {
            return Err(bad("empty grid".into()));
        }
        if raw.len() != el_deg.len() * az_deg.len() {
            return Err(bad(format!(
                "grid is {}×{} but {} samples were given",
                el_deg.len(),
                az_deg.len(),
                raw.len()
            )));
        }
        for axis in [&el_deg, &az_deg] {
            if axis.windows(2).any(|w| !(w[1] > w[0])) || axis.iter().any(|v| !v.is_finite()) {
                return Err(bad("grid axes must be finite and strictly increasing".into()));
            }
        }
        if el_deg[0] < 0.0 || *el_deg.last().unwrap() > 180.0 {
            return Err(bad("elevation grid must lie within [0, 180] degrees".into()));
        }
        if *az_deg.last().unwrap() - az_deg[0] >= 360.0 {
            return Err(bad("azimuth grid spans 360 degrees or more".into()));
        }
        if let Some(v) = raw.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(bad(format!("negative or non-finite sample {v}")));
        }
        let wraps = az_deg.len() >= 2 && {
            let step = az_deg[1] - az_deg[0];
            let uniform = az_deg.windows(2).all(|w| ((w[1] - w[0]) - step).abs() < 1e-9 * step.max(1.0));
            uniform && ((az_deg.last().unwrap() - az_deg[0] + step) - 360.0).abs() < 1e-6
        };
        let mut state = Self { el_deg, az_deg, raw, scale: 1.0, wraps };
        state.normalize()?;
        Ok(state)
    }

    /// Samples an arbitrary pattern on a grid.
    pub fn tabulate<F: Fn(&Aod) -> f64>(el_deg: Vec<f64>, az_deg: Vec<f64>, f: F) -> Result<Self> {
        let mut raw = Vec::with_capacity(el_deg.len() * az_deg.len());
        for &e in &el_deg {
            for &a in &az_deg {
                raw.push(f(&Aod::from_degrees(e, a)));
            }
        }
        Self::new(el_deg, az_deg, raw)
    }

    /// 1° grid: elevation 0..=180, azimuth −180..=179.
    pub fn degree_grid() -> (Vec<f64>, Vec<f64>) {
        ((0..=180).map(f64::from).collect(), (-180..180).map(f64::from).collect())
    }

    pub fn elevation_grid(&self) -> &[f64] {
        &self.el_deg
    }

    pub fn azimuth_grid(&self) -> &[f64] {
        &self.az_deg
    }

    pub fn raw_values(&self) -> &[f64] {
        &self.raw
    }

    pub fn scale_factor(&self) -> f64 {
        self.scale
    }

    pub fn wraps_azimuth(&self) -> bool {
        self.wraps
    }

    fn normalize(&mut self) -> Result<()> {
        self.scale = 1.0;
        let power = self.radiated_power();
        if !(power > 0.0) {
            return Err(Error::PatternData {
                source_name: "<memory>".into(),
                message: "pattern is identically zero".into(),
            });
        }
        self.scale = 1.0 / power.sqrt();
        Ok(())
    }

    fn raw_at(&self, i: usize, j: usize) -> f64 {
        self.raw[i * self.az_deg.len() + j]
    }

    /// Fractional position along the elevation axis: `(lower index, weight, clamped)`.
    fn locate_el(&self, el_deg: f64) -> (usize, f64, bool) {
        let g = &self.el_deg;
        if g.len() == 1 {
            return (0, 0.0, el_deg != g[0]);
        }
        if el_deg <= g[0] {
            return (0, 0.0, el_deg < g[0]);
        }
        if el_deg >= g[g.len() - 1] {
            return (g.len() - 2, 1.0, el_deg > g[g.len() - 1]);
        }
        let i = g.partition_point(|&v| v <= el_deg) - 1;
        (i, (el_deg - g[i]) / (g[i + 1] - g[i]), false)
    }

    /// `(j0, j1, weight, clamped)` along azimuth with wrap-around when the
    /// grid covers the full circle.
    fn locate_az(&self, az_deg: f64) -> (usize, usize, f64, bool) {
        let g = &self.az_deg;
        let n = g.len();
        let a = g[0] + (az_deg - g[0]).rem_euclid(360.0);
        if n == 1 {
            return (0, 0, 0.0, a != g[0]);
        }
        let last = g[n - 1];
        if a <= last {
            let j = (g.partition_point(|&v| v <= a) - 1).min(n - 2);
            return (j, j + 1, (a - g[j]) / (g[j + 1] - g[j]), false);
        }
        if self.wraps {
            let span = g[0] + 360.0 - last;
            return (n - 1, 0, (a - last) / span, false);
        }
        // Gap between the last sample and the first one, one turn later.
        if a - last <= g[0] + 360.0 - a {
            (n - 1, n - 1, 0.0, true)
        } else {
            (0, 0, 0.0, true)
        }
    }

    pub fn lookup(&self, aod: &Aod) -> Lookup {
        let (el, az) = aod.to_degrees();
        let (i, s, ce) = self.locate_el(el);
        let (j0, j1, t, ca) = self.locate_az(az);
        let i1 = (i + 1).min(self.el_deg.len() - 1);
        let v = (1.0 - s) * ((1.0 - t) * self.raw_at(i, j0) + t * self.raw_at(i, j1))
            + s * ((1.0 - t) * self.raw_at(i1, j0) + t * self.raw_at(i1, j1));
        Lookup { value: self.scale * v, clamped: ce || ca }
    }

    pub fn value(&self, aod: &Aod) -> f64 {
        self.lookup(aod).value
    }

    /// Central differences with the local grid step.
    pub fn partials(&self, aod: &Aod) -> (f64, f64) {
        let h_el = step_of(&self.el_deg).to_radians();
        let h_az = step_of(&self.az_deg).to_radians();
        let el_lo = (aod.el - h_el).max(0.0);
        let el_hi = (aod.el + h_el).min(PI);
        let d_el = if el_hi > el_lo {
            (self.value(&Aod::new(el_hi, aod.az)) - self.value(&Aod::new(el_lo, aod.az))) / (el_hi - el_lo)
        } else {
            0.0
        };
        let d_az = (self.value(&Aod::new(aod.el, aod.az + h_az)) - self.value(&Aod::new(aod.el, aod.az - h_az)))
            / (2.0 * h_az);
        (d_el, d_az)
    }

    /// `∫ |b̄|² dΩ` of the interpolant with clamping, integrated piecewise
    /// between grid lines with a 5-point Gauss rule per cell.
    pub fn radiated_power(&self) -> f64 {
        let mut el_breaks: Vec<f64> = vec![0.0, PI];
        el_breaks.extend(self.el_deg.iter().map(|d| d.to_radians()));
        let mut az_breaks: Vec<f64> = vec![-PI, PI];
        let to_input = |d: f64| (d + 180.0).rem_euclid(360.0) - 180.0;
        az_breaks.extend(self.az_deg.iter().map(|&d| to_input(d).to_radians()));
        if !self.wraps {
            let last = *self.az_deg.last().unwrap();
            let mid = 0.5 * (last + self.az_deg[0] + 360.0);
            az_breaks.push(to_input(mid).to_radians());
        }
        let clean = |mut v: Vec<f64>, lo: f64, hi: f64| {
            v.retain(|x| *x >= lo && *x <= hi);
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
            v
        };
        let el_breaks = clean(el_breaks, 0.0, PI);
        let az_breaks = clean(az_breaks, -PI, PI);
        let gl = GaussLegendre::new(NonZeroUsize::new(5).unwrap());
        let pairs = gl.as_node_weight_pairs();
        let mut total = 0.0;
        for e in el_breaks.windows(2) {
            let (ea, eb) = (e[0], e[1]);
            for a in az_breaks.windows(2) {
                let (aa, ab) = (a[0], a[1]);
                let mut cell = 0.0;
                for &(x, wx) in pairs {
                    let el = 0.5 * (eb - ea) * x + 0.5 * (ea + eb);
                    let sin_el = el.sin();
                    for &(y, wy) in pairs {
                        let az = 0.5 * (ab - aa) * y + 0.5 * (aa + ab);
                        let v = self.value(&Aod::new(el, az));
                        cell += wx * wy * v * v * sin_el;
                    }
                }
                total += cell * 0.25 * (eb - ea) * (ab - aa);
            }
        }
        total
    }
}

fn step_of(axis: &[f64]) -> f64 {
    if axis.len() < 2 {
        1.0
    } else {
        (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PatternState {
    Analytic(AnalyticState),
    Tabulated(TabulatedState),
}

impl PatternState {
    pub fn value(&self, aod: &Aod) -> f64 {
        match self {
            Self::Analytic(s) => s.value(aod),
            Self::Tabulated(s) => s.value(aod),
        }
    }

    pub fn partials(&self, aod: &Aod) -> (f64, f64) {
        match self {
            Self::Analytic(s) => s.partials(aod),
            Self::Tabulated(s) => s.partials(aod),
        }
    }

    /// Rescales the state to unit radiated power.
    pub fn normalized(self) -> Result<Self> {
        match self {
            Self::Analytic(s) => Ok(Self::Analytic(AnalyticState::new(s.direction, s.exponent)?)),
            Self::Tabulated(mut s) => {
                s.normalize()?;
                Ok(Self::Tabulated(s))
            }
        }
    }

    pub fn tabulated(&self) -> Result<TabulatedState> {
        match self {
            Self::Tabulated(s) => Ok(s.clone()),
            Self::Analytic(s) => {
                let (el, az) = TabulatedState::degree_grid();
                TabulatedState::tabulate(el, az, |a| s.value(a))
            }
        }
    }
}

/// Ordered set of `S` unit-power element patterns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternLibrary {
    states: Vec<PatternState>,
}

impl PatternLibrary {
    pub fn new(states: Vec<PatternState>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Domain("pattern library needs at least one state".into()));
        }
        let states = states.into_iter().map(PatternState::normalized).collect::<Result<_>>()?;
        Ok(Self { states })
    }

    /// `S` analytic states with directions on a Fibonacci layout of the
    /// front (`+x`) hemisphere of the array frame, ordered by farthest-point
    /// traversal from `+x` so that every prefix is spread out, and exponents
    /// cycling over 1, 2, 4, 8.
    pub fn default_library<R: Rng + ?Sized>(s: usize, rng: &mut R) -> Result<Self> {
        if s == 0 {
            return Err(Error::Domain("library size S must be positive".into()));
        }
        let golden = PI * (3.0 - 5f64.sqrt());
        let offset = rng.random::<f64>() * 2.0 * PI;
        let dirs: Vec<[f64; 3]> = (0..s)
            .map(|i| {
                let x = 1.0 - (i as f64 + 0.5) / s as f64;
                let r = (1.0 - x * x).max(0.0).sqrt();
                let ang = offset + golden * i as f64;
                [x, r * ang.cos(), r * ang.sin()]
            })
            .collect();
        let order = farthest_point_order(&dirs);
        let exponents = [1.0, 2.0, 4.0, 8.0];
        let states = order
            .iter()
            .enumerate()
            .map(|(k, &i)| AnalyticState::new(dirs[i], exponents[k % 4]).map(PatternState::Analytic))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { states })
    }

    pub fn omni() -> Self {
        Self {
            states: vec![PatternState::Analytic(AnalyticState::new([1.0, 0.0, 0.0], 0.0).unwrap())],
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[PatternState] {
        &self.states
    }

    /// First `s` states.
    pub fn truncated(&self, s: usize) -> Result<Self> {
        if s == 0 || s > self.states.len() {
            return Err(Error::Domain(format!("cannot take {s} of {} states", self.states.len())));
        }
        Ok(Self { states: self.states[..s].to_vec() })
    }

    pub fn evaluate(&self, aod: &Aod) -> Vec<f64> {
        self.states.iter().map(|s| s.value(aod)).collect()
    }

    pub fn evaluate_partials(&self, aod: &Aod) -> (Vec<f64>, Vec<f64>) {
        self.states.iter().map(|s| s.partials(aod)).unzip()
    }

    /// Writes one CSV per state (`state_000.csv`, …) into `dir`, tabulating
    /// analytic states on a 1° grid. Raw samples are written so that a
    /// reload reproduces them exactly.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (i, state) in self.states.iter().enumerate() {
            save_state(&state.tabulated()?, dir.join(format!("state_{i:03}.csv")))?;
        }
        Ok(())
    }

    /// Loads a directory written by [`PatternLibrary::save`] (files sorted by
    /// name) or a single CSV file as a one-state library.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let files: Vec<PathBuf> = if path.is_dir() {
            let mut v: Vec<PathBuf> = std::fs::read_dir(path)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "csv"))
                .collect();
            v.sort();
            v
        } else {
            vec![path.to_path_buf()]
        };
        if files.is_empty() {
            return Err(Error::PatternData {
                source_name: path.display().to_string(),
                message: "no CSV files found".into(),
            });
        }
        let states = files
            .iter()
            .map(|f| load_state(f).map(PatternState::Tabulated))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { states })
    }
}

fn farthest_point_order(dirs: &[[f64; 3]]) -> Vec<usize> {
    let n = dirs.len();
    let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let first = (0..n)
        .max_by(|&a, &b| dirs[a][0].partial_cmp(&dirs[b][0]).unwrap().then(b.cmp(&a)))
        .unwrap();
    let mut order = vec![first];
    let mut used = vec![false; n];
    used[first] = true;
    // Largest cosine to any chosen direction; smaller means farther.
    let mut closest: Vec<f64> = dirs.iter().map(|d| dot(d, &dirs[first])).collect();
    while order.len() < n {
        let mut best = usize::MAX;
        for i in 0..n {
            if !used[i] && (best == usize::MAX || closest[i] < closest[best]) {
                best = i;
            }
        }
        used[best] = true;
        order.push(best);
        for i in 0..n {
            closest[i] = closest[i].max(dot(&dirs[i], &dirs[best]));
        }
    }
    order
}

pub fn save_state(state: &TabulatedState, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for (i, e) in state.el_deg.iter().enumerate() {
        for (j, a) in state.az_deg.iter().enumerate() {
            w.write_record([format!("{e:?}"), format!("{a:?}"), format!("{:?}", state.raw_at(i, j))])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses a pattern CSV; the grid must be rectangular with every
/// `(θ_el, θ_az)` pair present exactly once.
pub fn load_state(path: impl AsRef<Path>) -> Result<TabulatedState> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let bad = |m: String| Error::PatternData { source_name: name.clone(), message: m };
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.iter().map(str::trim).collect::<Vec<_>>() != CSV_HEADER {
        return Err(bad(format!("expected header {}", CSV_HEADER.join(","))));
    }
    let mut rows: Vec<(f64, f64, f64)> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(bad(format!("row {}: expected 3 fields, found {}", line + 2, rec.len())));
        }
        let parse = |k: usize| -> Result<f64> {
            rec[k]
                .trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("row {}: cannot parse {:?}", line + 2, &rec[k])))
        };
        let (e, a, v) = (parse(0)?, parse(1)?, parse(2)?);
        if !(v >= 0.0) || !v.is_finite() {
            return Err(bad(format!("row {}: negative or non-finite value {v}", line + 2)));
        }
        rows.push((e, a, v));
    }
    let mut els: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let mut azs: Vec<f64> = rows.iter().map(|r| r.1).collect();
    for axis in [&mut els, &mut azs] {
        axis.sort_by(|a, b| a.partial_cmp(b).unwrap());
        axis.dedup();
    }
    if els.len() * azs.len() != rows.len() {
        return Err(bad(format!(
            "non-rectangular grid: {} rows for {} elevations × {} azimuths",
            rows.len(),
            els.len(),
            azs.len()
        )));
    }
    let mut raw = vec![f64::NAN; rows.len()];
    for &(e, a, v) in &rows {
        let i = els.binary_search_by(|x| x.partial_cmp(&e).unwrap()).unwrap();
        let j = azs.binary_search_by(|x| x.partial_cmp(&a).unwrap()).unwrap();
        let slot = &mut raw[i * azs.len() + j];
        if !slot.is_nan() {
            return Err(bad(format!("duplicate sample at ({e}, {a})")));
        }
        *slot = v;
    }
    TabulatedState::new(els, azs, raw).map_err(|e| match e {
        Error::PatternData { message, .. } => bad(message),
        other => other,
    })
}
