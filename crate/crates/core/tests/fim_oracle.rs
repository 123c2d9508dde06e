//! FIM, Jacobian and PEB against independent numerical oracles.

use approx::assert_relative_eq;
use erfas_core::codebook::synthesis;
use erfas_core::fim::{analyze_codewords, fim_channel_codewords, jacobian, peb, LosParameters};
use erfas_core::response::{ElementModel, ResponseModel};
use erfas_core::scene::{compute_aod, delay_vector, dot_t, los_delay, Aod, PathComponent, Scenario};
use erfas_core::C64;
use nalgebra::{DMatrix, Matrix5};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_scenario() -> Scenario {
    let mut s = Scenario::table_one();
    s.num_subcarriers = 64;
    s
}

/// Noise-free received samples for all codewords, stacked.
fn signal(model: &ResponseModel, s: &Scenario, g: &[f64; 5], ws: &[Vec<C64>]) -> Vec<C64> {
    let c = model.value(&Aod::new(g[0], g[1]));
    let d = delay_vector(g[2], s.num_subcarriers, s.subcarrier_spacing);
    let amp = C64::from_polar(g[3], g[4]) * s.transmit_power.sqrt();
    let mut out = Vec::new();
    for w in ws {
        let beta = amp * dot_t(&c, w);
        out.extend(d.iter().map(|x| x * beta));
    }
    out
}

fn numerical_fim(model: &ResponseModel, s: &Scenario, g: [f64; 5], ws: &[Vec<C64>]) -> Matrix5<f64> {
    let steps = [1e-6, 1e-6, 1e-14, 1e-6 * g[3], 1e-6];
    let derivs: Vec<Vec<C64>> = (0..5)
        .map(|i| {
            let (mut p, mut m) = (g, g);
            p[i] += steps[i];
            m[i] -= steps[i];
            let (xp, xm) = (signal(model, s, &p, ws), signal(model, s, &m, ws));
            xp.iter().zip(&xm).map(|(a, b)| (a - b) / (2.0 * steps[i])).collect()
        })
        .collect();
    let mut j = Matrix5::zeros();
    for a in 0..5 {
        for b in 0..5 {
            let v: C64 = derivs[a].iter().zip(&derivs[b]).map(|(x, y)| x.conj() * y).sum();
            j[(a, b)] = 2.0 * v.re / s.noise_variance();
        }
    }
    j
}

#[test]
fn channel_fim_matches_numerical_derivatives() {
    let s = small_scenario();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for q in [1, 4] {
        let model = ResponseModel::new(s.array.clone(), ElementModel::synthesis(q).unwrap());
        for _ in 0..4 {
            let ue = s.uncertainty_region.sample(&mut rng);
            let los = PathComponent::los(&s, &ue, rng.random_range(-3.0..3.0)).unwrap();
            let params = LosParameters::from(&los);
            let ws: Vec<Vec<C64>> = (0..3)
                .map(|_| (0..model.dim()).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect())
                .collect();
            let j = fim_channel_codewords(&model.bundle(&los.aod), &ws, &s, &params).unwrap();
            let g = [params.el, params.az, params.tau, params.rho, params.phi];
            let jn = numerical_fim(&model, &s, g, &ws);
            for a in 0..5 {
                for b in 0..5 {
                    let scale = (j[(a, a)] * j[(b, b)]).sqrt();
                    assert!((j[(a, b)] - jn[(a, b)]).abs() <= 1e-6 * scale, "entry ({a},{b}): {} vs {}", j[(a, b)], jn[(a, b)]);
                }
            }
        }
    }
}

#[test]
fn jacobian_matches_finite_differences() {
    let s = Scenario::table_one();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..10 {
        let ue = s.uncertainty_region.sample(&mut rng);
        let t = jacobian(&s, &ue).unwrap();
        let h = 1e-5;
        for i in 0..3 {
            let (mut p, mut m) = (ue, ue);
            p[i] += h;
            m[i] -= h;
            let (ap, am) = (compute_aod(&p, &s).unwrap(), compute_aod(&m, &s).unwrap());
            let fd = [
                (ap.el - am.el) / (2.0 * h),
                (ap.az - am.az) / (2.0 * h),
                (los_delay(&p, &s.bs_position) - los_delay(&m, &s.bs_position)) / (2.0 * h),
            ];
            for (k, v) in fd.iter().enumerate() {
                let scale = (0..3).map(|r| t[(r, k)].abs()).fold(0.0, f64::max);
                assert!((t[(i, k)] - v).abs() <= 1e-5 * scale, "T[{i}][{k}] = {} vs {v}", t[(i, k)]);
            }
        }
        let dtau = (t[(0, 2)].powi(2) + t[(1, 2)].powi(2) + t[(2, 2)].powi(2)).sqrt();
        assert_relative_eq!(dtau * erfas_core::scene::SPEED_OF_LIGHT, 1.0, max_relative = 1e-12);
        assert_eq!(t.fixed_view::<2, 2>(3, 3).into_owned(), nalgebra::Matrix2::identity());
        assert!(t.fixed_view::<3, 2>(0, 3).iter().all(|v| *v == 0.0));
    }
}

#[test]
fn peb_matches_explicit_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let a = DMatrix::<f64>::from_fn(5, 7, |_, _| rng.random_range(-1.0..1.0));
        let j: Matrix5<f64> = Matrix5::from_iterator((&a * a.transpose()).iter().cloned());
        let inv = j.try_inverse().unwrap();
        let expected = (inv[(0, 0)] + inv[(1, 1)] + inv[(2, 2)]).sqrt();
        assert_relative_eq!(peb(&j).meters, expected, max_relative = 1e-10);
    }
    let rank_deficient = Matrix5::from_diagonal(&nalgebra::Vector5::new(1.0, 1.0, 1.0, 1.0, 0.0));
    assert!(peb(&rank_deficient).meters.is_infinite());
}

#[test]
fn quadrupled_power_halves_peb() {
    let s = Scenario::table_one();
    let model = ResponseModel::new(s.array.clone(), ElementModel::synthesis(4).unwrap());
    let cb = synthesis::build_codebook(&s.uncertainty_region, &s, &model).unwrap().with_uniform_power();
    let mut s4 = s.clone();
    s4.transmit_power *= 4.0;
    let a = analyze_codewords(&model, &s, &s.ue_position, &cb.weighted()).unwrap().peb.meters;
    let b = analyze_codewords(&model, &s4, &s.ue_position, &cb.weighted()).unwrap().peb.meters;
    assert_relative_eq!(b, a / 2.0, max_relative = 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn extra_codeword_never_increases_peb(seed in any::<u64>(), ue_seed in any::<u64>()) {
        let s = Scenario::table_one();
        let model = ResponseModel::new(s.array.clone(), ElementModel::synthesis(4).unwrap());
        let cb = synthesis::build_codebook(&s.uncertainty_region, &s, &model).unwrap().with_uniform_power();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ue = s.uncertainty_region.sample(&mut ChaCha8Rng::seed_from_u64(ue_seed));
        let base = cb.weighted();
        let mut more = base.clone();
        more.push((0..model.dim()).map(|_| C64::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3))).collect());
        let a = analyze_codewords(&model, &s, &ue, &base).unwrap().peb.meters;
        let b = analyze_codewords(&model, &s, &ue, &more).unwrap().peb.meters;
        prop_assert!(b <= a * (1.0 + 1e-12));
    }
}
