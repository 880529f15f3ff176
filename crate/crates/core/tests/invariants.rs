mod common;

use common::{lattice_family, GridModel, MOVES};
use egf_core::data::{gen_toy, Toy};
use egf_core::eval::{tv_grid, DensityGrid};
use egf_core::flow::{defect_parts, stop_probability};
use egf_core::sampler::{sample_forward_batch, trajectory_rngs, ChainOptions};
use egf_core::transforms::{build_family, FamilySpec, Preset};
use egf_core::{Egf, InitDensity, Manifold, Point};
use proptest::prelude::*;

fn torus_point() -> impl Strategy<Value = [f64; 2]> {
    [0.0..1.0f64, 0.0..1.0f64]
}

fn sphere_point() -> impl Strategy<Value = [f64; 3]> {
    [-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64]
        .prop_filter("away from the origin", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-4)
        .prop_map(|v| {
            let r = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            [v[0] / r, v[1] / r, v[2] / r]
        })
}

fn torus_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (x - y).rem_euclid(1.0);
            d.min(1.0 - d)
        })
        .fold(0.0, f64::max)
}

/// Cellwise flow on an `n x n` grid with arbitrary positive values.
fn grid_egf(n: usize, logits: &[f64], fstar: &[f64]) -> Egf<GridModel> {
    let p = MOVES.len();
    let mut alpha = Vec::with_capacity(n * n * p);
    for c in 0..n * n {
        let row = &logits[c * p..(c + 1) * p];
        let z: f64 = row.iter().map(|x| x.exp()).sum();
        alpha.extend(row.iter().map(|x| x.exp() / z));
    }
    let model = GridModel { n, alpha, fstar: fstar.to_vec() };
    Egf::new(lattice_family(n), model, InitDensity::Uniform).unwrap()
}

const N: usize = 4;

fn grid_values() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(-3.0..3.0f64, N * N * MOVES.len()),
        prop::collection::vec(0.01..10.0f64, N * N),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn torus_transforms_invert(s in torus_point(), preset in prop::sample::select(vec![Preset::TorusIl4, Preset::TorusRl16])) {
        let fam = build_family(Manifold::torus(2), &FamilySpec::preset(preset)).unwrap();
        let mut a = [0.0; 2];
        let mut b = [0.0; 2];
        for i in 0..fam.len() {
            fam.apply_into(i, &s, &mut a);
            prop_assert!(a.iter().all(|x| (0.0..1.0).contains(x)));
            fam.apply_inverse_into(i, &a, &mut b);
            prop_assert!(torus_dist(&b, &s) < 1e-12);
            fam.apply_into(fam.inverse_index()[i], &a, &mut b);
            prop_assert!(torus_dist(&b, &s) < 1e-12);
        }
    }

    #[test]
    fn sphere_transforms_invert(s in sphere_point()) {
        let fam = build_family(Manifold::sphere(2), &FamilySpec::preset(Preset::Sphere6)).unwrap();
        let mut a = [0.0; 3];
        let mut b = [0.0; 3];
        for i in 0..fam.len() {
            fam.apply_into(i, &s, &mut a);
            prop_assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
            fam.apply_inverse_into(i, &a, &mut b);
            prop_assert!(b.iter().zip(&s).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }

    #[test]
    fn wrap_is_canonical(raw in [-50.0..50.0f64, -50.0..50.0f64]) {
        let m = Manifold::torus(2);
        let p = m.wrap(&raw).unwrap();
        prop_assert!(m.contains(&p));
        let mut q = p.clone();
        m.canonicalize(&mut q);
        prop_assert_eq!(p, q);
    }

    #[test]
    fn defect_splits_into_parts(fi in 0.0..5.0f64, inflow in 0.0..5.0f64, fs in 0.0..10.0f64) {
        let (pos, neg) = defect_parts(fi, inflow, fs);
        prop_assert!(pos >= 0.0 && neg <= 0.0);
        prop_assert!(pos == 0.0 || neg == 0.0);
        prop_assert!((pos + neg - (fi + inflow - fs)).abs() < 1e-12);
    }

    #[test]
    fn stop_probability_is_a_probability(term in 0.0..100.0f64, fs in 0.0..100.0f64) {
        let p = stop_probability(term, fs).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn policies_are_distributions(s in torus_point(), (logits, fstar) in grid_values()) {
        let egf = grid_egf(N, &logits, &fstar);
        let st = egf.local_state(&s).unwrap();
        prop_assert!((st.alpha_fwd.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let bwd = st.alpha_bwd.unwrap();
        prop_assert!(bwd.iter().all(|&a| a >= 0.0));
        prop_assert!((bwd.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn backward_policy_ignores_outflow_scale(s in torus_point(), (logits, fstar) in grid_values(), c in 0.01..100.0f64) {
        let a = grid_egf(N, &logits, &fstar).backward_policy(&s).unwrap();
        let scaled: Vec<f64> = fstar.iter().map(|f| f * c).collect();
        let b = grid_egf(N, &logits, &scaled).backward_policy(&s).unwrap();
        prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
        let ia = grid_egf(N, &logits, &fstar).inflow_density(&s).unwrap();
        let ib = grid_egf(N, &logits, &scaled).inflow_density(&s).unwrap();
        prop_assert!((ib - c * ia).abs() <= 1e-12 * ib.abs().max(1.0));
    }

    /// Under a uniform policy, translations carry a constant outflow onto itself.
    #[test]
    fn uniform_translation_flow_is_balanced(s in torus_point(), f in 0.01..10.0f64) {
        let logits = vec![0.0; N * N * MOVES.len()];
        let egf = grid_egf(N, &logits, &[f; N * N]);
        let st = egf.local_state(&s).unwrap();
        prop_assert!((st.fstar_bwd - f).abs() < 1e-12 * f);
        prop_assert!((st.f_hat_term - 1.0).abs() < 1e-12);
        prop_assert_eq!(st.delta_init, 0.0);
    }

    #[test]
    fn tv_is_a_metric(
        a in prop::collection::vec(0.0..1.0f64, 16),
        b in prop::collection::vec(0.0..1.0f64, 16),
        c in prop::collection::vec(0.0..1.0f64, 16),
    ) {
        prop_assume!(a.iter().sum::<f64>() > 0.0 && b.iter().sum::<f64>() > 0.0 && c.iter().sum::<f64>() > 0.0);
        let grid = |v: &[f64]| DensityGrid::torus(2, 4).unwrap().filled(&|s: &[f64]| v[common::cell_index(4, s)]);
        let (ga, gb, gc) = (grid(&a), grid(&b), grid(&c));
        let ab = tv_grid(&ga, &gb).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        prop_assert!((ab - tv_grid(&gb, &ga).unwrap()).abs() < 1e-12);
        prop_assert!(tv_grid(&ga, &ga).unwrap() < 1e-12);
        prop_assert!(ab <= tv_grid(&ga, &gc).unwrap() + tv_grid(&gc, &gb).unwrap() + 1e-12);
    }

    #[test]
    fn split_partitions_the_dataset(n in 1usize..400, frac in 0.0..0.9f64, seed in any::<u64>()) {
        let d = gen_toy(Toy::FourCircles, n, seed).unwrap().split(frac, seed).unwrap();
        prop_assert_eq!(d.val.len(), (n as f64 * frac).round() as usize);
        let mut all: Vec<usize> = d.train.iter().chain(&d.val).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn sampling_is_seed_deterministic(seed in any::<u64>()) {
        let egf = common::random_egf(Preset::TorusIl4, &[8], 3);
        let vt = egf.virtual_terminal(None);
        let opts = ChainOptions::stopping(16);
        let a = sample_forward_batch(&egf, &vt, &opts, &mut trajectory_rngs(seed, 1, 0, 0, 8));
        let b = sample_forward_batch(&egf, &vt, &opts, &mut trajectory_rngs(seed, 1, 0, 0, 8));
        let last = |t: &[egf_core::sampler::Trajectory]| t.iter().map(|x| x.last().clone()).collect::<Vec<Point>>();
        prop_assert_eq!(last(&a), last(&b));
        // streams are per trajectory: a longer batch extends a shorter one
        let c = sample_forward_batch(&egf, &vt, &opts, &mut trajectory_rngs(seed, 1, 0, 0, 12));
        prop_assert_eq!(last(&a), last(&c[..8]));
    }
}
