use pdr_core::adapter::{AdapterWeights, LearnedAdapter, NoiseAdapter};
use pdr_core::dataset::{self, body_velocity_labels, ImuSample, PoseRecord};
use pdr_core::eval::{self, ate, rte, Trajectory, TrajectorySample};
use pdr_core::geometry::{exp_so3, orthonormality_error, wxyz_from_rotation, Rotation, Vec3};
use pdr_core::iekf::{
    build_pseudo_measurement, min_eigenvalue, observation_model, run_sequence, update,
    FilterConfig, FilterState, Iekf, InitialCondition, MeasurementConfig, ObservationMode,
    PositionHistory, PseudoObservation, StateCovariance,
};
use pdr_core::sim::{
    generate_trajectory, synthesize_imu, GroundTruthSample, ImuNoiseSpec, Segment, TrajectorySpec,
};
use pdr_core::ConstantAdapter;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DT_NS: i64 = 5_000_000;

fn vec3(scale: f64) -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-scale..scale).prop_map(Vec3::from)
}

fn rotation() -> impl Strategy<Value = Rotation> {
    vec3(1.7).prop_map(|w| exp_so3(&w))
}

fn state() -> impl Strategy<Value = FilterState> {
    (
        rotation(),
        vec3(2.0),
        vec3(20.0),
        vec3(0.05),
        vec3(0.2),
        rotation(),
    )
        .prop_map(
            |(rotation, velocity, position, gyro_bias, accel_bias, misalignment)| FilterState {
                rotation,
                velocity,
                position,
                gyro_bias,
                accel_bias,
                misalignment,
            },
        )
}

fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
    Vec3::from_fn(|_, _| rng.random_range(-scale..scale))
}

fn random_imu(rng: &mut ChaCha8Rng, n: usize) -> Vec<ImuSample> {
    (0..n as i64)
        .map(|k| ImuSample {
            t_ns: k * DT_NS,
            gyro: random_vec(rng, 1.0),
            accel: random_vec(rng, 2.0),
        })
        .collect()
}

fn start(orientation: Rotation, velocity: Vec3) -> InitialCondition {
    InitialCondition {
        pose: GroundTruthSample {
            t_ns: 0,
            position: Vec3::zeros(),
            orientation,
            velocity,
        },
        velocity,
    }
}

fn covariance(scale: f64) -> StateCovariance {
    FilterConfig::default().initial_covariance.matrix() + StateCovariance::identity() * scale
}

fn state_components(s: &FilterState) -> Vec<f64> {
    s.rotation
        .matrix()
        .iter()
        .chain(s.misalignment.matrix().iter())
        .chain(s.velocity.iter())
        .chain(s.position.iter())
        .chain(s.gyro_bias.iter())
        .chain(s.accel_bias.iter())
        .copied()
        .collect()
}

fn segments() -> impl Strategy<Value = Vec<Segment>> {
    prop::collection::vec(
        (2.0..15.0f64, 0.3..1.8f64, -0.4..0.4f64).prop_map(|(duration, speed, turn_rate)| {
            Segment {
                duration,
                speed,
                turn_rate,
            }
        }),
        1..5,
    )
}

fn trajectory(points: &[Vec3]) -> Trajectory {
    Trajectory::new(
        points
            .iter()
            .enumerate()
            .map(|(k, p)| TrajectorySample::at(k as i64 * DT_NS, *p))
            .collect(),
    )
    .unwrap()
}

fn random_weights(rng: &mut ChaCha8Rng, scale: f64) -> AdapterWeights {
    let mut w = AdapterWeights::zeros();
    let mut fill = |v: &mut f64| *v = rng.random_range(-scale..scale);
    w.conv1
        .weight
        .iter_mut()
        .flatten()
        .flatten()
        .for_each(&mut fill);
    w.conv1.bias.iter_mut().for_each(&mut fill);
    w.conv2
        .weight
        .iter_mut()
        .flatten()
        .flatten()
        .for_each(&mut fill);
    w.conv2.bias.iter_mut().for_each(&mut fill);
    w.fc.weight.iter_mut().flatten().for_each(&mut fill);
    w.fc.bias.iter_mut().for_each(&mut fill);
    w
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_speed_is_clamped_and_lateral_rows_are_zero(
        steps in prop::collection::vec(vec3(0.05), 1..2000),
        v0 in vec3(3.0),
        max_speed in 0.5..3.0f64,
    ) {
        let cfg = MeasurementConfig { max_speed, ..MeasurementConfig::default() };
        let mut history = PositionHistory::new(cfg.window_s);
        let mut p = Vec3::zeros();
        for (k, d) in steps.iter().enumerate() {
            let t = k as i64 * DT_NS;
            let y = build_pseudo_measurement(&history, &p, t, &v0, &cfg);
            prop_assert!(y[0] >= 0.0 && y[0] <= max_speed);
            prop_assert_eq!(y[1], 0.0);
            prop_assert_eq!(y[2], 0.0);
            history.push(t, p);
            p += d;
        }
    }

    #[test]
    fn zero_innovation_leaves_the_state_unchanged(s in state(), scale in 1e-6..1.0f64, noise in vec3(1.0)) {
        let (y_hat, _) = observation_model(&s);
        let obs = PseudoObservation { y: y_hat, noise: noise.map(|x| x.abs() + 1e-3) };
        for mode in [ObservationMode::Full, ObservationMode::LateralVertical] {
            let (s2, _) = update(&s, &covariance(scale), &obs, mode).unwrap();
            prop_assert_eq!(s2, s);
        }
    }

    #[test]
    fn huge_noise_is_the_same_as_no_update(s in state(), y in 0.0..2.0f64, scale in 1e-6..1e-2f64) {
        let sigma0 = Vec3::new(3.0, 2.0, 0.2);
        let obs = PseudoObservation { y: Vec3::new(y, 0.0, 0.0), noise: sigma0 * 1e6 };
        let (s2, _) = update(&s, &covariance(scale), &obs, ObservationMode::Full).unwrap();
        for (a, b) in state_components(&s).iter().zip(state_components(&s2)) {
            prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{} vs {}", a, b);
        }
    }

    #[test]
    fn ate_is_zero_only_for_identical_trajectories(
        points in prop::collection::vec(vec3(50.0), 1..200),
        k in any::<prop::sample::Index>(),
        bump in vec3(1.0),
    ) {
        let gt = trajectory(&points);
        prop_assert_eq!(ate(&gt, &gt).unwrap(), 0.0);
        let mut moved = points.clone();
        moved[k.index(points.len())] += bump;
        let e = ate(&trajectory(&moved), &gt).unwrap();
        prop_assert!(e >= 0.0);
        prop_assert_eq!(e == 0.0, bump == Vec3::zeros());
    }

    #[test]
    fn rte_ignores_a_constant_offset(
        points in prop::collection::vec(vec3(50.0), 1..300),
        noise in prop::collection::vec(vec3(0.5), 300),
        offset in vec3(100.0),
        interval in 0.05..1.0f64,
    ) {
        let gt = trajectory(&points);
        let est: Vec<Vec3> = points.iter().zip(&noise).map(|(p, n)| p + n).collect();
        let shifted: Vec<Vec3> = est.iter().map(|p| p + offset).collect();
        let a = rte(&trajectory(&est), &gt, interval).unwrap();
        let b = rte(&trajectory(&shifted), &gt, interval).unwrap();
        prop_assert!(a.value >= 0.0);
        if !a.fell_back {
            prop_assert!((a.value - b.value).abs() <= 1e-9 * (1.0 + offset.norm()));
        }
    }

    #[test]
    fn adapter_noise_stays_within_three_decades(seed in any::<u64>(), scale in 0.01..5.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = random_weights(&mut rng, scale);
        let sigma0 = Vec3::from_column_slice(&weights.sigma0);
        let imu = random_imu(&mut rng, 60);
        let mut a = LearnedAdapter::new(weights.clone()).unwrap();
        let mut b = LearnedAdapter::new(weights).unwrap();
        for s in &imu {
            let n = a.noise(s);
            prop_assert_eq!(n, b.noise(s));
            for k in 0..3 {
                prop_assert!(n[k] >= 1e-3 * sigma0[k] && n[k] <= 1e3 * sigma0[k]);
            }
        }
    }

    #[test]
    fn constant_windows_do_not_depend_on_earlier_samples(seed in any::<u64>(), c in vec3(3.0)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = random_weights(&mut rng, 1.0);
        let constant = ImuSample { t_ns: 0, gyro: c, accel: -c };
        let mut fresh = LearnedAdapter::new(weights.clone()).unwrap();
        let mut used = LearnedAdapter::new(weights).unwrap();
        for s in random_imu(&mut rng, 40) {
            used.push_and_infer(&s);
        }
        let mut z = (Vec3::zeros(), Vec3::zeros());
        for _ in 0..fresh.weights().window {
            z = (fresh.push_and_infer(&constant), used.push_and_infer(&constant));
        }
        prop_assert_eq!(z.0, z.1);
    }

    #[test]
    fn ndi_matches_the_filter_without_updates(seed in any::<u64>(), v in vec3(1.5), q in rotation()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let imu = random_imu(&mut rng, 400);
        let init = start(q, v);
        let cfg = FilterConfig::default();
        let ndi = eval::ndi_baseline(&imu, &init, &cfg).unwrap();
        let out = run_sequence(&imu, &init, &cfg.with_mode(ObservationMode::None), &mut ConstantAdapter::default())
            .unwrap();
        prop_assert_eq!(ndi.len(), out.len());
        for (a, o) in ndi.samples.iter().zip(&out) {
            prop_assert_eq!(o.state.gyro_bias, Vec3::zeros());
            prop_assert_eq!(o.state.accel_bias, Vec3::zeros());
            prop_assert_eq!(a.position, o.state.position);
            prop_assert_eq!(a.velocity, Some(o.state.velocity));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn synchronize_is_idempotent_and_never_extrapolates(
        seed in any::<u64>(),
        imu_start in 0i64..50_000_000,
        imu_step in 2_000_000i64..12_000_000,
        pose_start in 0i64..50_000_000,
        pose_step in 4_000_000i64..12_000_000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let imu: Vec<ImuSample> = (0..400)
            .map(|k| ImuSample { t_ns: imu_start + k * imu_step, gyro: random_vec(&mut rng, 1.0), accel: random_vec(&mut rng, 2.0) })
            .collect();
        let poses: Vec<PoseRecord> = (0..300)
            .map(|k| PoseRecord {
                t_ns: pose_start + k * pose_step,
                position: random_vec(&mut rng, 10.0),
                orientation: wxyz_from_rotation(&exp_so3(&random_vec(&mut rng, 1.5))),
            })
            .collect();
        let seq = dataset::synchronize(&imu, &poses).unwrap();
        let (lo, hi) = (imu_start.max(pose_start), (imu_start + 399 * imu_step).min(pose_start + 299 * pose_step));
        for f in &seq.frames {
            prop_assert!(f.imu.t_ns >= lo && f.imu.t_ns <= hi);
            prop_assert_eq!(f.imu.t_ns, f.gt.t_ns);
        }
        let again = dataset::synchronize(&seq.imu(), &seq.poses()).unwrap();
        prop_assert_eq!(again.frames.len(), seq.frames.len());
        for (a, b) in again.frames.iter().zip(&seq.frames) {
            prop_assert_eq!(a.imu, b.imu);
            prop_assert_eq!(a.gt.position, b.gt.position);
            prop_assert!((a.gt.orientation.matrix() - b.gt.orientation.matrix()).amax() < 1e-12);
        }
        for label in body_velocity_labels(&seq) {
            prop_assert_eq!(label[1], 0.0);
        }
    }

    #[test]
    fn noiseless_readings_reproduce_the_walk_velocity(
        segs in segments(),
        heading in -3.0..3.0f64,
        mount in vec3(0.8),
    ) {
        let mut spec = TrajectorySpec::new(segs).with_mount(mount);
        spec.initial_heading = heading;
        let scale = 60.0 / spec.duration();
        spec.segments.iter_mut().for_each(|s| s.duration *= scale);
        let gt = generate_trajectory(&spec).unwrap();
        let imu = synthesize_imu(&gt, &ImuNoiseSpec::noiseless(), 0).unwrap();
        let init = InitialCondition { pose: gt[0], velocity: gt[0].velocity };
        let cfg = FilterConfig::default().with_mode(ObservationMode::None);
        let out = run_sequence(&imu.samples, &init, &cfg, &mut ConstantAdapter::default()).unwrap();
        let worst = out.iter().zip(&gt).map(|(o, g)| (o.state.velocity - g.velocity).norm()).fold(0.0, f64::max);
        prop_assert!(worst < 1e-3, "worst velocity error {worst:e} m/s");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn covariance_and_rotations_stay_healthy_on_random_input(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = start(exp_so3(&random_vec(&mut rng, 1.7)), random_vec(&mut rng, 1.5));
        let mut filter = Iekf::new(&init, &FilterConfig::default()).unwrap();
        let sigma0 = Vec3::new(3.0, 2.0, 0.2);
        for k in 0..12_000 {
            let imu = ImuSample { t_ns: k * DT_NS, gyro: random_vec(&mut rng, 1.0), accel: random_vec(&mut rng, 2.0) };
            let noise = sigma0.component_mul(&random_vec(&mut rng, 3.0).map(|z| 10f64.powf(z)));
            let out = filter.step(&imu, noise).unwrap();
            let p = &out.covariance;
            prop_assert!((p - p.transpose()).amax() < 1e-9);
            prop_assert!(min_eigenvalue(p) >= -1e-9);
            prop_assert!(orthonormality_error(out.state.rotation.matrix()) < 1e-6);
            prop_assert!(orthonormality_error(out.state.misalignment.matrix()) < 1e-6);
        }
    }
}
