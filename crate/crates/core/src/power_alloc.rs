//! Minimax power allocation over codewords: choose `δ` on the simplex to
//! minimize the largest PEB over a set of candidate UE positions.
//!
//! Every FIM entry is affine in `δ`, so the worst-case PEB is a convex
//! function of `δ`. It is minimized by projected gradient descent on a
//! log-sum-exp smoothing of the maximum, with the smoothing width shrunk in
//! stages and the best exact worst-case value kept as the incumbent. A level
//! bundle method on the (convex) traces `tr(P J⁻¹)` then closes the gap to a
//! certified lower bound.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus, SupportedConeT, ZeroConeT,
};
use nalgebra::Matrix5;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fim::{invert_fim, per_codeword_fims, peb, Peb};
use crate::response::ResponseModel;
use crate::scene::Scenario;
use crate::{Error, Result, C64};

/// Position-domain FIMs of unit-power codewords at each candidate position.
#[derive(Clone, Debug)]
pub struct AllocationProblem {
    points: Vec<[f64; 3]>,
    /// `fims[i][t]`: FIM at point `i` when all power goes to codeword `t`.
    fims: Vec<Vec<Matrix5<f64>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    /// Meters.
    pub tolerance: f64,
    pub max_iters: usize,
    pub max_bundle_iters: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tolerance: 1e-6, max_iters: 5000, max_bundle_iters: 300 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub deltas: Vec<f64>,
    pub worst_peb: f64,
    pub worst_index: usize,
    /// Certified lower bound on the optimal worst-case PEB (0 if unknown).
    pub lower_bound: f64,
    pub per_point: Vec<f64>,
    pub iterations: usize,
    /// Incumbent worst-case PEB after every accepted step.
    pub history: Vec<f64>,
}

/// Euclidean projection onto `{δ ≥ 0, Σδ = 1}`.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &x) in u.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

impl AllocationProblem {
    pub fn new(
        model: &ResponseModel,
        scenario: &Scenario,
        points: Vec<[f64; 3]>,
        unit_codewords: &[Vec<C64>],
    ) -> Result<Self> {
        let fims = points
            .par_iter()
            .map(|p| per_codeword_fims(model, scenario, p, unit_codewords))
            .collect::<Result<Vec<_>>>()?;
        Self::from_fims(points, fims)
    }

    pub fn from_fims(points: Vec<[f64; 3]>, fims: Vec<Vec<Matrix5<f64>>>) -> Result<Self> {
        if points.is_empty() || points.len() != fims.len() {
            return Err(Error::Domain("allocation needs one FIM list per point and at least one point".into()));
        }
        let nt = fims[0].len();
        if nt == 0 || fims.iter().any(|f| f.len() != nt) {
            return Err(Error::Domain("every point needs one FIM per codeword".into()));
        }
        Ok(Self { points, fims })
    }

    pub fn num_codewords(&self) -> usize {
        self.fims[0].len()
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn fim_at(&self, i: usize, deltas: &[f64]) -> Matrix5<f64> {
        self.fims[i].iter().zip(deltas).fold(Matrix5::zeros(), |acc, (j, &d)| acc + j * d)
    }

    pub fn peb_at(&self, i: usize, deltas: &[f64]) -> Peb {
        peb(&self.fim_at(i, deltas))
    }

    pub fn per_point_pebs(&self, deltas: &[f64]) -> Vec<f64> {
        (0..self.num_points()).map(|i| self.peb_at(i, deltas).meters).collect()
    }

    /// Largest PEB and the first point attaining it.
    pub fn worst_case_peb(&self, deltas: &[f64]) -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, v) in self.per_point_pebs(deltas).into_iter().enumerate() {
            if v > best.0 || (v.is_nan() && !best.0.is_nan()) {
                best = (v, i);
            }
        }
        best
    }

    /// PEBs and their gradients in `δ`, or `None` if any FIM is singular.
    fn pebs_and_gradients(&self, deltas: &[f64]) -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
        let nt = self.num_codewords();
        let mut values = Vec::with_capacity(self.num_points());
        let mut grads = Vec::with_capacity(self.num_points());
        for i in 0..self.num_points() {
            let (inv, _) = invert_fim(&self.fim_at(i, deltas));
            let inv = inv?;
            let trace = inv[(0, 0)] + inv[(1, 1)] + inv[(2, 2)];
            if !(trace > 0.0) {
                return None;
            }
            let v = trace.sqrt();
            // ∂tr(P J⁻¹)/∂δ_t = −⟨J⁻¹ P J⁻¹, J_t⟩.
            let cols = inv.fixed_columns::<3>(0);
            let x = cols * cols.transpose();
            let g: Vec<f64> = (0..nt).map(|t| -x.component_mul(&self.fims[i][t]).sum() / (2.0 * v)).collect();
            values.push(v);
            grads.push(g);
        }
        Some((values, grads))
    }

    pub fn solve(&self, options: &SolveOptions) -> Result<Allocation> {
        let nt = self.num_codewords();
        let uniform = vec![1.0 / nt as f64; nt];
        let (start_worst, start_idx) = self.worst_case_peb(&uniform);
        if !start_worst.is_finite() {
            return Err(Error::InfeasibleAllocation { index: start_idx, position: self.points[start_idx] });
        }
        let finish = |deltas: Vec<f64>, iterations: usize, history: Vec<f64>, lower_bound: f64| {
            let per_point = self.per_point_pebs(&deltas);
            let (worst_peb, worst_index) = self.worst_case_peb(&deltas);
            let lower_bound = lower_bound.min(worst_peb);
            Allocation { deltas, worst_peb, worst_index, lower_bound, per_point, iterations, history }
        };
        if nt == 1 {
            return Ok(finish(vec![1.0], 0, vec![start_worst], start_worst));
        }

        let scale = start_worst;
        let smoothed = |deltas: &[f64], mu: f64| -> Option<(f64, Vec<f64>, f64)> {
            let (values, grads) = self.pebs_and_gradients(deltas)?;
            let g: Vec<f64> = values.iter().map(|v| v / scale).collect();
            let gmax = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = g.iter().map(|x| ((x - gmax) / mu).exp()).collect();
            let z: f64 = weights.iter().sum();
            let value = gmax + mu * z.ln();
            let mut grad = vec![0.0; nt];
            for (w, gi) in weights.iter().zip(&grads) {
                for t in 0..nt {
                    grad[t] += w / z * gi[t] / scale;
                }
            }
            Some((value, grad, gmax * scale))
        };

        let mut deltas = uniform;
        let mut incumbent = (deltas.clone(), start_worst);
        let mut history = vec![start_worst];
        let mut iterations = 0;
        let mut step = f64::NAN;
        let levels = [0.3, 0.1, 0.03, 0.01, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5, 3e-6];
        'outer: for &mu in &levels {
            let Some((mut value, mut grad, _)) = smoothed(&deltas, mu) else { break };
            if step.is_nan() {
                let gmax = grad.iter().fold(0.0f64, |a, b| a.max(b.abs()));
                step = if gmax > 0.0 { 0.1 / gmax } else { 1.0 };
            }
            loop {
                if iterations >= options.max_iters {
                    break 'outer;
                }
                let mut accepted = None;
                for _ in 0..60 {
                    let cand: Vec<f64> =
                        project_simplex(&deltas.iter().zip(&grad).map(|(d, g)| d - step * g).collect::<Vec<_>>());
                    let decrease: f64 = grad.iter().zip(cand.iter().zip(&deltas)).map(|(g, (c, d))| g * (c - d)).sum();
                    if decrease.abs() < 1e-300 {
                        break;
                    }
                    if let Some((v, g, worst)) = smoothed(&cand, mu) {
                        if v <= value + 1e-4 * decrease {
                            accepted = Some((cand, v, g, worst));
                            break;
                        }
                    }
                    step *= 0.5;
                }
                let Some((cand, v, g, worst)) = accepted else { break };
                iterations += 1;
                let improvement = (value - v) * scale;
                deltas = cand;
                value = v;
                grad = g;
                step *= 2.0;
                if worst < incumbent.1 {
                    incumbent = (deltas.clone(), worst);
                }
                history.push(incumbent.1);
                if improvement < options.tolerance * 1e-3 {
                    break;
                }
            }
        }
        let (deltas, lower_bound, extra) = self.refine(incumbent.0, options, &mut history);
        Ok(finish(deltas, iterations + extra, history, lower_bound))
    }

    /// Proximal level bundle on `max_i tr_i(δ)`, started from `start`.
    /// Returns the incumbent, a lower bound on the optimal worst PEB, and
    /// the number of iterations spent.
    fn refine(&self, start: Vec<f64>, options: &SolveOptions, history: &mut Vec<f64>) -> (Vec<f64>, f64, usize) {
        let nt = self.num_codewords();
        let Some((values, _)) = self.pebs_and_gradients(&start) else { return (start, 0.0, 0) };
        let scale = values.iter().fold(0.0f64, |a, v| a.max(v * v));
        // Traces and trace gradients, divided by `scale`.
        let traces = |d: &[f64]| {
            self.pebs_and_gradients(d).map(|(v, g)| {
                let t: Vec<f64> = v.iter().map(|x| x * x / scale).collect();
                let g: Vec<Vec<f64>> =
                    v.iter().zip(g).map(|(x, gi)| gi.iter().map(|y| 2.0 * x * y / scale).collect()).collect();
                (t, g)
            })
        };
        let to_peb = |t: f64| (t.max(0.0) * scale).sqrt();

        let mut cuts: Vec<(Vec<f64>, f64)> = Vec::new();
        let mut incumbent = (start.clone(), f64::INFINITY);
        let mut lower = f64::NEG_INFINITY;
        let mut point = start;
        let mut iterations = 0;
        while iterations < options.max_bundle_iters {
            let mut evaluated = None;
            for _ in 0..40 {
                if let Some(e) = traces(&point) {
                    evaluated = Some(e);
                    break;
                }
                point = point.iter().zip(&incumbent.0).map(|(a, b)| 0.5 * (a + b)).collect();
            }
            let Some((t, g)) = evaluated else { break };
            iterations += 1;
            let worst = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if worst < incumbent.1 {
                incumbent = (point.clone(), worst);
                history.push(to_peb(worst).min(*history.last().unwrap_or(&f64::INFINITY)));
            }
            for (ti, gi) in t.iter().zip(g) {
                let offset = gi.iter().zip(&point).map(|(a, b)| a * b).sum::<f64>() - ti;
                cuts.push((gi, offset));
            }
            let Some(lb) = bundle_lower_bound(nt, &cuts) else { break };
            lower = lower.max(lb);
            if to_peb(incumbent.1) - to_peb(lower) <= options.tolerance {
                break;
            }
            let level = lower + 0.3 * (incumbent.1 - lower);
            let Some(next) = level_projection(nt, &cuts, &incumbent.0, level) else { break };
            point = next;
        }
        let lb = if lower.is_finite() { to_peb(lower) } else { 0.0 };
        (incumbent.0, lb, iterations)
    }
}

/// Simplex constraints plus one row per cut, either `gᵀδ − t ≤ offset`
/// (`epigraph`) or `gᵀδ ≤ offset + level`.
fn bundle_constraints(
    nt: usize,
    cuts: &[(Vec<f64>, f64)],
    epigraph: bool,
    level: f64,
) -> (CscMatrix<f64>, Vec<f64>, Vec<SupportedConeT<f64>>) {
    let n = nt + usize::from(epigraph);
    let (mut rows, mut cols, mut vals) = (Vec::new(), Vec::new(), Vec::new());
    let mut b = Vec::with_capacity(1 + cuts.len() + nt);
    for t in 0..nt {
        rows.push(0);
        cols.push(t);
        vals.push(1.0);
    }
    b.push(1.0);
    for (k, (g, offset)) in cuts.iter().enumerate() {
        for (t, &v) in g.iter().enumerate() {
            rows.push(1 + k);
            cols.push(t);
            vals.push(v);
        }
        if epigraph {
            rows.push(1 + k);
            cols.push(nt);
            vals.push(-1.0);
            b.push(*offset);
        } else {
            b.push(offset + level);
        }
    }
    for t in 0..nt {
        rows.push(1 + cuts.len() + t);
        cols.push(t);
        vals.push(-1.0);
        b.push(0.0);
    }
    let a = CscMatrix::new_from_triplets(b.len(), n, rows, cols, vals);
    (a, b, vec![ZeroConeT(1), NonnegativeConeT(cuts.len() + nt)])
}

fn run_solver(p: CscMatrix<f64>, q: Vec<f64>, a: CscMatrix<f64>, b: Vec<f64>, cones: Vec<SupportedConeT<f64>>) -> Option<Vec<f64>> {
    let settings = DefaultSettingsBuilder::default().verbose(false).build().ok()?;
    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings).ok()?;
    solver.solve();
    matches!(solver.solution.status, SolverStatus::Solved | SolverStatus::AlmostSolved).then(|| solver.solution.x.clone())
}

/// Minimum of the cutting-plane model over the simplex.
fn bundle_lower_bound(nt: usize, cuts: &[(Vec<f64>, f64)]) -> Option<f64> {
    let (a, b, cones) = bundle_constraints(nt, cuts, true, 0.0);
    let mut q = vec![0.0; nt + 1];
    q[nt] = 1.0;
    let x = run_solver(CscMatrix::zeros((nt + 1, nt + 1)), q, a, b, cones)?;
    // Slack for the interior-point tolerance.
    Some(x[nt] - 1e-9)
}

/// Closest simplex point to `center` where the model is at most `level`.
fn level_projection(nt: usize, cuts: &[(Vec<f64>, f64)], center: &[f64], level: f64) -> Option<Vec<f64>> {
    let (a, b, cones) = bundle_constraints(nt, cuts, false, level);
    let p = CscMatrix::new_from_triplets(nt, nt, (0..nt).collect(), (0..nt).collect(), vec![1.0; nt]);
    let q: Vec<f64> = center.iter().map(|c| -c).collect();
    run_solver(p, q, a, b, cones).map(|x| project_simplex(&x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector5;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(rng: &mut ChaCha8Rng, rank: usize) -> Matrix5<f64> {
        let mut m = Matrix5::zeros();
        for _ in 0..rank {
            let v = Vector5::from_fn(|_, _| rng.random::<f64>() - 0.5);
            m += v * v.transpose();
        }
        m
    }

    fn toy(seed: u64, nt: usize, nu: usize) -> AllocationProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fims = (0..nu).map(|_| (0..nt).map(|_| random_psd(&mut rng, 3)).collect()).collect();
        AllocationProblem::from_fims(vec![[0.0; 3]; nu], fims).unwrap()
    }

    #[test]
    fn projection() {
        let p = project_simplex(&[0.5, 0.5, 0.5]);
        for x in &p {
            assert_relative_eq!(*x, 1.0 / 3.0, epsilon = 1e-15);
        }
        assert_eq!(project_simplex(&[3.0, 0.0]), vec![1.0, 0.0]);
        let q = project_simplex(&[0.2, -1.0, 0.9]);
        assert_relative_eq!(q.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert!(q.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn single_codeword() {
        let p = toy(1, 1, 3);
        let mut p2 = p.clone();
        p2.fims.iter_mut().for_each(|f| f[0] += Matrix5::identity());
        let a = p2.solve(&SolveOptions::default()).unwrap();
        assert_eq!(a.deltas, vec![1.0]);
        assert!(p.solve(&SolveOptions::default()).is_err());
    }

    #[test]
    fn identical_codewords_are_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let j = random_psd(&mut rng, 5) + Matrix5::identity() * 0.1;
        let p = AllocationProblem::from_fims(vec![[0.0; 3]], vec![vec![j, j]]).unwrap();
        let a = p.solve(&SolveOptions::default()).unwrap();
        assert_relative_eq!(a.deltas.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(a.worst_peb, p.worst_case_peb(&[1.0, 0.0]).0, max_relative = 1e-9);
    }

    #[test]
    fn matches_simplex_grid() {
        for seed in 0..4 {
            let p = toy(10 + seed, 3, 2);
            let a = p.solve(&SolveOptions::default()).unwrap();
            let mut best = f64::INFINITY;
            for i in 0..=100 {
                for j in 0..=(100 - i) {
                    let d = [i as f64 / 100.0, j as f64 / 100.0, (100 - i - j) as f64 / 100.0];
                    best = best.min(p.worst_case_peb(&d).0);
                }
            }
            assert!(a.worst_peb <= best * 1.01, "seed {seed}: {} vs {best}", a.worst_peb);
            assert!(a.history.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn lower_bound_certifies_gap() {
        for seed in 0..4 {
            let p = toy(30 + seed, 5, 6);
            let a = p.solve(&SolveOptions::default()).unwrap();
            assert!(a.lower_bound <= a.worst_peb);
            assert!(a.worst_peb - a.lower_bound <= 1e-6, "seed {seed}: {} {}", a.worst_peb, a.lower_bound);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..200 {
                let d = project_simplex(&(0..5).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
                assert!(p.worst_case_peb(&d).0 >= a.lower_bound);
            }
        }
    }

    #[test]
    fn duplicate_point_is_harmless() {
        let p = toy(5, 4, 3);
        let d = [0.1, 0.2, 0.3, 0.4];
        let (v, _) = p.worst_case_peb(&d);
        let mut pts = p.points.clone();
        let mut fims = p.fims.clone();
        pts.push(pts[1]);
        fims.push(fims[1].clone());
        let q = AllocationProblem::from_fims(pts, fims).unwrap();
        assert_eq!(q.worst_case_peb(&d).0, v);
    }

    proptest! {
        #[test]
        fn worst_case_is_convex(seed in 0u64..1000, lambda in 0.0..1.0f64) {
            let p = toy(seed, 4, 3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
            let a = project_simplex(&(0..4).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
            let b = project_simplex(&(0..4).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
            let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect();
            let (fa, fb, fm) = (p.worst_case_peb(&a).0, p.worst_case_peb(&b).0, p.worst_case_peb(&mix).0);
            prop_assume!(fa.is_finite() && fb.is_finite());
            prop_assert!(fm <= lambda * fa + (1.0 - lambda) * fb + 1e-9 * (1.0 + fa.max(fb)));
        }
    }
}
