mod common;

use common::*;
use hybrid_ik::bench::{
    gen_targets, halton, halton_point, mmd, pose_error, run_benchmark, BenchConfig,
    DEFAULT_HALTON_SKIP,
};
use hybrid_ik::model::builtin;
use hybrid_ik::Pose;
use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

#[test]
fn halton_matches_digit_reversal() {
    for base in [2, 3, 5, 7] {
        for index in 1..=200 {
            assert_eq!(halton(index, base).unwrap(), digit_reversal(index, base));
        }
    }
    assert_eq!(digit_reversal(5, 3), 7.0 / 9.0);
}

#[test]
fn halton_point_uses_prime_bases() {
    let p = halton_point(3, 3).unwrap();
    assert_eq!(p, vec![0.75, 1.0 / 9.0, 0.6]);
}

#[test]
fn targets_are_feasible_and_in_reach() {
    let model = builtin::panda();
    let set = gen_targets(&model, 100, DEFAULT_HALTON_SKIP).unwrap();
    assert_eq!(set.targets.len(), 100);
    assert_eq!(set.source_configs.len(), 100);
    let reach = model.max_reach();
    for (target, theta) in set.targets.iter().zip(&set.source_configs) {
        assert!(model.within_limits(theta));
        let (p, _) = split(&fk_matrix(&model, theta));
        assert!((p - target.position).norm() < 1e-12);
        assert!(target.position.norm() <= reach);
    }
}

#[test]
fn pose_error_matches_elementwise_oracle() {
    let mut rng = rng(31);
    for _ in 0..200 {
        let p1 = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let p2 = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let q1 = UnitQuaternion::from_scaled_axis(Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)));
        let q2 = UnitQuaternion::from_scaled_axis(Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)));
        let e = pose_error(&Pose::new(p1, q1), &Pose::new(p2, q2));
        let dx: f64 = (0..3).map(|i| (p2[i] - p1[i]).powi(2)).sum::<f64>().sqrt();
        assert!((e.position_mm - 1000.0 * dx).abs() < 1e-9);
        let rel = q2.to_rotation_matrix().into_inner() * q1.to_rotation_matrix().into_inner().transpose();
        assert!((e.orientation_rad - log_so3(&rel).norm()).abs() < 1e-9);
    }
}

fn cluster(rng: &mut impl Rng, n: usize, dim: usize, offset: f64, sigma: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..dim)
                .map(|d| {
                    let z: f64 = rng.sample(StandardNormal);
                    sigma * z + if d == 0 { offset } else { 0.0 }
                })
                .collect()
        })
        .collect()
}

fn mean_kernel(a: &[Vec<f64>], b: &[Vec<f64>], h: f64) -> f64 {
    let mut s = 0.0;
    for x in a {
        for y in b {
            let d2: f64 = x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum();
            s += (-d2 / (2.0 * h * h)).exp();
        }
    }
    s / (a.len() * b.len()) as f64
}

#[test]
fn mmd_far_clusters_reduce_to_self_similarity() {
    let mut rng = rng(32);
    let x = cluster(&mut rng, 30, 3, 0.0, 0.3);
    let y = cluster(&mut rng, 30, 3, 50.0, 0.3);
    let score = mmd(&x, &y, Some(1.0)).unwrap();
    let cross = mean_kernel(&x, &y, 1.0);
    assert!(cross < 1e-6);
    let expected = mean_kernel(&x, &x, 1.0) + mean_kernel(&y, &y, 1.0);
    assert!((score.mmd_squared - expected).abs() < 1e-6);
    assert_eq!(score.kernel_bandwidth, 1.0);
}

#[test]
fn mmd_estimator_matches_direct_sum() {
    let mut rng = rng(33);
    let x = cluster(&mut rng, 20, 4, 0.0, 1.0);
    let y = cluster(&mut rng, 25, 4, 1.0, 1.0);
    let s = mmd(&x, &y, Some(1.7)).unwrap();
    let direct = mean_kernel(&x, &x, 1.7) + mean_kernel(&y, &y, 1.7) - 2.0 * mean_kernel(&x, &y, 1.7);
    assert!((s.mmd_squared - direct).abs() < 1e-12);
    assert!((s.mmd - s.mmd_squared.sqrt()).abs() < 1e-12);
}

#[test]
fn mmd_median_bandwidth() {
    let x = vec![vec![0.0], vec![1.0]];
    let y = vec![vec![3.0]];
    // pairwise distances 1, 2, 3
    assert_eq!(mmd(&x, &y, None).unwrap().kernel_bandwidth, 2.0);
    let same = vec![vec![1.0], vec![1.0]];
    assert_eq!(mmd(&same, &same, None).unwrap().kernel_bandwidth, 1.0);
}

#[test]
fn benchmark_is_deterministic_modulo_timing() {
    let model = builtin::panda();
    let set = gen_targets(&model, 3, DEFAULT_HALTON_SKIP).unwrap();
    let cfg = BenchConfig {
        retained: 5,
        reference_starts: 8,
        ..BenchConfig::default()
    };
    let a = run_benchmark(&model, &set, &[1, 4], &cfg).unwrap();
    let b = run_benchmark(&model, &set, &[1, 4], &cfg).unwrap();
    assert_eq!(a.rows.len(), 2);
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        assert_eq!(
            (ra.median_position_mm, ra.median_combined, ra.success_rate),
            (rb.median_position_mm, rb.median_combined, rb.success_rate)
        );
    }
    assert_eq!(a.diversity, b.diversity);
    for (oa, ob) in a.outcomes.iter().zip(&b.outcomes) {
        assert_eq!((oa.error, &oa.theta), (ob.error, &ob.theta));
    }
    assert!(run_benchmark(&model, &set, &[], &cfg).is_err());
}
