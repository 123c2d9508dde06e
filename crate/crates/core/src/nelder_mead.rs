//! Derivative-free Nelder–Mead minimization with optional box constraints.

use serde::{Deserialize, Serialize};

use crate::scene::BoxRegion;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NelderMeadOptions {
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    /// Edge length of the initial axis-aligned simplex.
    pub initial_step: f64,
    /// Stop when the largest vertex distance from the best vertex drops below this.
    pub tolerance: f64,
    pub max_evals: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            initial_step: 0.5,
            tolerance: 1e-4,
            max_evals: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NelderMeadResult {
    pub x: [f64; 3],
    pub value: f64,
    pub evals: usize,
}

/// Minimizes `f` starting from `x0`. Vertices are clamped into `bounds`.
/// The returned point is the best one evaluated; it replaces `x0` only on
/// strict improvement.
pub fn minimize<F: FnMut(&[f64; 3]) -> f64>(
    mut f: F,
    x0: [f64; 3],
    bounds: Option<&BoxRegion>,
    opts: &NelderMeadOptions,
) -> NelderMeadResult {
    let clamp = |p: [f64; 3]| bounds.map_or(p, |b| b.clamp(&p));
    let x0 = clamp(x0);
    let mut evals = 0usize;
    let mut best = (x0, f64::NAN);
    let mut eval = |p: [f64; 3], evals: &mut usize, best: &mut ([f64; 3], f64)| -> f64 {
        *evals += 1;
        let v = f(&p);
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if best.1.is_nan() || v < best.1 {
            *best = (p, v);
        }
        v
    };

    let mut simplex: Vec<([f64; 3], f64)> = Vec::with_capacity(4);
    let v0 = eval(x0, &mut evals, &mut best);
    simplex.push((x0, v0));
    for k in 0..3 {
        let mut p = x0;
        p[k] += opts.initial_step;
        let mut q = clamp(p);
        if q[k] == x0[k] {
            p[k] = x0[k] - opts.initial_step;
            q = clamp(p);
        }
        let v = eval(q, &mut evals, &mut best);
        simplex.push((q, v));
    }

    let lerp = |a: &[f64; 3], b: &[f64; 3], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])];
    while evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let diameter = simplex[1..]
            .iter()
            .map(|(p, _)| crate::scene::distance(p, &simplex[0].0))
            .fold(0.0, f64::max);
        if diameter < opts.tolerance {
            break;
        }
        let mut centroid = [0.0; 3];
        for (p, _) in &simplex[..3] {
            for k in 0..3 {
                centroid[k] += p[k] / 3.0;
            }
        }
        let worst = simplex[3];
        let reflected = clamp(lerp(&centroid, &worst.0, -opts.reflection));
        let fr = eval(reflected, &mut evals, &mut best);
        if fr < simplex[0].1 {
            let expanded = clamp(lerp(&centroid, &worst.0, -opts.expansion));
            let fe = eval(expanded, &mut evals, &mut best);
            simplex[3] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            continue;
        }
        if fr < simplex[2].1 {
            simplex[3] = (reflected, fr);
            continue;
        }
        let (contracted, fc) = if fr < worst.1 {
            let c = clamp(lerp(&centroid, &reflected, opts.contraction));
            (c, eval(c, &mut evals, &mut best))
        } else {
            let c = clamp(lerp(&centroid, &worst.0, opts.contraction));
            (c, eval(c, &mut evals, &mut best))
        };
        if fc < worst.1.min(fr) {
            simplex[3] = (contracted, fc);
            continue;
        }
        let anchor = simplex[0].0;
        for vtx in simplex.iter_mut().skip(1) {
            let p = clamp(lerp(&anchor, &vtx.0, opts.shrink));
            *vtx = (p, eval(p, &mut evals, &mut best));
        }
    }
    NelderMeadResult { x: best.0, value: best.1, evals }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_quadratic_minimum() {
        let target = [1.0, -2.0, 0.5];
        let r = minimize(
            |p| (p[0] - target[0]).powi(2) + 2.0 * (p[1] - target[1]).powi(2) + 3.0 * (p[2] - target[2]).powi(2),
            [0.0; 3],
            None,
            &NelderMeadOptions { max_evals: 2000, tolerance: 1e-8, ..Default::default() },
        );
        for k in 0..3 {
            assert!((r.x[k] - target[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn respects_bounds_and_flat_objective() {
        let b = BoxRegion::new([0.0; 3], [1.0; 3]).unwrap();
        let r = minimize(|p| -p[0] - p[1] - p[2], [0.5; 3], Some(&b), &NelderMeadOptions::default());
        assert!(b.contains(&r.x));
        assert!(r.value < -2.9);
        let flat = minimize(|_| 0.0, [0.2, 0.3, 0.4], Some(&b), &NelderMeadOptions::default());
        assert_eq!(flat.x, [0.2, 0.3, 0.4]);
    }
}
