mod common;

use common::*;
use hybrid_ik::bench::{halton, mmd};
use hybrid_ik::ccd::{ccd_position_step, Anneal, CcdConfig};
use hybrid_ik::kinematics::{forward_kinematics, frame_set};
use hybrid_ik::model::{builtin, parse_native, parse_robot, to_native_string, to_urdf_string};
use hybrid_ik::model::{extend_dof, JointSpec, Limits};
use hybrid_ik::polish::{pj_ik, PolishConfig};
use hybrid_ik::{po_ccd_batch, JointNoise, Pose, RobotModel};
use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;

fn vec3(range: f64) -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-range..range).prop_map(Vector3::from)
}

fn unit_vec3() -> impl Strategy<Value = Vector3<f64>> {
    vec3(1.0).prop_filter("nonzero", |v| v.norm() > 1e-3).prop_map(|v| v.normalize())
}

fn configs(n: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0..3.0f64, dim), 1..n)
}

/// Random serial chain with up to six revolute joints and a fixed link.
fn chain() -> impl Strategy<Value = RobotModel> {
    let joint = (vec3(0.5), vec3(1.5), unit_vec3(), -3.0..0.0f64, 0.1..3.0f64);
    prop::collection::vec(joint, 1..7).prop_map(|specs| {
        let mut joints = Vec::new();
        for (i, (xyz, rpy, axis, lo, width)) in specs.into_iter().enumerate() {
            let origin = Isometry3::from_parts(
                Translation3::from(xyz),
                UnitQuaternion::from_euler_angles(rpy.x, rpy.y, rpy.z),
            );
            if i == 1 {
                joints.push(JointSpec::fixed("spacer", Isometry3::translation(0.0, 0.0, 0.1)));
            }
            joints.push(
                JointSpec::revolute(format!("j{i}"), origin, axis, Limits::new(lo, lo + width).unwrap())
                    .unwrap(),
            );
        }
        RobotModel::new("random", joints, Isometry3::translation(0.1, 0.0, 0.05)).unwrap()
    })
}

fn projected_angle(u: &Vector3<f64>, v: &Vector3<f64>, axis: &Vector3<f64>) -> f64 {
    let up = u - axis * u.dot(axis);
    let vp = v - axis * v.dot(axis);
    (up.dot(&vp) / (up.norm() * vp.norm())).clamp(-1.0, 1.0).acos()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ccd_step_never_widens_projected_angle(
        joint in vec3(1.0),
        axis in unit_vec3(),
        ee in vec3(2.0),
        target in vec3(2.0),
    ) {
        let model = RobotModel::new(
            "probe",
            vec![JointSpec::revolute("j", Isometry3::translation(joint.x, joint.y, joint.z), axis, Limits::full_turn()).unwrap()],
            Isometry3::translation(ee.x - joint.x, ee.y - joint.y, ee.z - joint.z),
        ).unwrap();
        let frames = frame_set(&model, &[0.0]).unwrap();
        let goal = Pose::new(target, UnitQuaternion::identity());
        let step = ccd_position_step(&frames, &goal, 0).unwrap();
        let u = ee - joint;
        let v = target - joint;
        let up = u - axis * u.dot(&axis);
        let vp = v - axis * v.dot(&axis);
        prop_assume!(up.norm() > 1e-6 && vp.norm() > 1e-6);
        let before = projected_angle(&u, &v, &axis);
        let turned = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), step) * u;
        let after = projected_angle(&turned, &v, &axis);
        prop_assert!(after <= before + 1e-9);
        prop_assert!(after < 1e-6, "after {after}");
    }

    #[test]
    fn anneal_is_non_increasing(rate in 0.5..1.0f64, floor in 0.01..0.5f64, k in 0usize..500) {
        let a = Anneal { initial: 1.0, rate, floor };
        prop_assert!(a.factor(k + 1) <= a.factor(k));
        prop_assert!(a.factor(k) >= floor);
    }

    #[test]
    fn perturbation_respects_limits(seed in any::<u64>(), std in 0.0..2.0f64) {
        let model = builtin::panda();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut theta = uniform_config(&model, &mut rng);
        JointNoise::isotropic(0.0, std).perturb(&model, &mut theta, &mut rng);
        prop_assert!(model.within_limits(&theta));
    }

    #[test]
    fn halton_in_open_interval_and_distinct(base in prop::sample::select(vec![2u64, 3, 5, 7, 11, 13]), i in 1u64..100_000, j in 1u64..100_000) {
        let a = halton(i, base).unwrap();
        prop_assert!(a > 0.0 && a < 1.0);
        if i != j {
            prop_assert_ne!(a, halton(j, base).unwrap());
        }
    }

    #[test]
    fn mmd_symmetric_and_permutation_invariant(x in configs(12, 3), y in configs(12, 3), rot in 0usize..12) {
        let a = mmd(&x, &y, None).unwrap();
        let b = mmd(&y, &x, None).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(a.mmd_squared >= 0.0);
        prop_assert!((a.mmd - a.mmd_squared.max(0.0).sqrt()).abs() <= 1e-12);
        let mut shuffled = x.clone();
        let r = rot % shuffled.len();
        shuffled.rotate_left(r);
        shuffled.reverse();
        prop_assert_eq!(mmd(&shuffled, &y, None).unwrap(), a);
        prop_assert!(mmd(&x, &x, None).unwrap().mmd_squared < 1e-12);
    }

    #[test]
    fn urdf_round_trip(model in chain()) {
        let back = parse_robot(&to_urdf_string(&model)).unwrap();
        prop_assert!(back.approx_eq(&model, 1e-9));
        let native = parse_native(&to_native_string(&model)).unwrap();
        prop_assert!(native.approx_eq(&model, 1e-12));
    }

    #[test]
    fn fk_oracle_on_random_chains(model in chain(), seed in any::<u64>()) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let theta = uniform_config(&model, &mut rng);
        let pose = forward_kinematics(&model, &theta).unwrap();
        let (p, r) = split(&fk_matrix(&model, &theta));
        prop_assert!((pose.position - p).norm() < 1e-12);
        prop_assert!((pose.orientation().to_rotation_matrix().into_inner() - r).abs().max() < 1e-12);
        let jac = hybrid_ik::jacobian(&model, &theta).unwrap();
        let fd = fd_jacobian(&model, &theta, 1e-6);
        for (a, b) in jac.iter().zip(fd.iter()) {
            prop_assert!(close(*a, *b, 1e-5, 1e-8));
        }
    }

    #[test]
    fn extension_preserves_prefix(extra in 0usize..10, seed in any::<u64>()) {
        let panda = builtin::panda();
        let big = extend_dof(&panda, 7 + extra).unwrap();
        prop_assert_eq!(big.dof(), 7 + extra);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let theta = uniform_config(&big, &mut rng);
        prop_assert!(big.within_limits(&theta));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ccd_batch_within_limits_and_improving(seed in any::<u64>(), t in 1u64..500) {
        let model = builtin::panda();
        let target = hybrid_ik::bench::gen_targets(&model, 1, t).unwrap().targets[0];
        let cfg = CcdConfig { rng_master_seed: seed, ..CcdConfig::default() };
        for (i, s) in po_ccd_batch(&model, &target, 8, &cfg).unwrap().iter().enumerate() {
            prop_assert!(model.within_limits(&s.theta));
            let mut log = Vec::new();
            hybrid_ik::ccd::po_ccd_solve_one_logged(&model, &target, i as u64, &cfg, &mut log);
            for step in log.iter().filter(|s| s.accepted) {
                prop_assert!(step.before.0 - step.candidate.0 > cfg.min_improvement
                    || step.before.1 - step.candidate.1 > cfg.min_improvement);
            }
        }
    }

    #[test]
    fn polish_stays_within_limits(seed in any::<u64>()) {
        let model = builtin::fetch_arm();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let seeds: Vec<Vec<f64>> = (0..4).map(|_| uniform_config(&model, &mut rng)).collect();
        let target = forward_kinematics(&model, &uniform_config(&model, &mut rng)).unwrap();
        let batch = pj_ik(&model, &target, &seeds, &PolishConfig::default()).unwrap();
        for r in &batch.all {
            prop_assert!(model.within_limits(&r.theta));
            prop_assert!(r.weighted_norm >= batch.best.weighted_norm);
        }
    }
}
