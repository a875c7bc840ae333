use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use nalgebra::SMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use feeding_core::bridge::{run_headless, CommandScript};
use feeding_core::control::mpc::{mpc_step, MpcProblem};
use feeding_core::control::pid::PidGains;
use feeding_core::geometry::{PoseSE3, UnitQuaternion, Vec3};
use feeding_core::monitor::{train_from_sequences, TrainConfig};
use feeding_core::perception::food::{select_scoop_site, BowlGeometry, FoodCloud, FoodEstimatorConfig, ScoopSiteSet};
use feeding_core::perception::mouth::{estimate_mouth_pose, LandmarkFilter, MouthConfig};
use feeding_core::scenario::Scenario;
use feeding_core::sim::arm::{ArmModel, JointVector};
use feeding_core::sim::face::{emit_landmarks, look_at, FaceScene, Intrinsics, LandmarkNoise};
use feeding_core::task::{CommandKind, Subtask};

fn control(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = MpcProblem {
        dp: Vec3::new(0.01, -0.005, 0.002),
        dq: Vec3::new(0.02, 0.0, -0.01),
        jacobian: SMatrix::from_fn(|_, _| rng.random_range(-1.0..1.0)),
        stiffness: JointVector::from(PidGains::default().k),
        contacts: Vec::new(),
        lower: JointVector::from_element(-0.02),
        upper: JointVector::from_element(0.02),
        lambda: 1e-6,
    };
    c.bench_function("mpc_step", |b| b.iter(|| mpc_step(std::hint::black_box(&p)).unwrap()));

    let arm = ArmModel::pr2_like();
    let theta = JointVector::from([0.2, 0.3, -0.4, -1.2, 0.5, -0.6, 0.1]);
    let tool = PoseSE3::from_translation(Vec3::new(0.12, 0.0, -0.03));
    c.bench_function("tool_jacobian", |b| b.iter(|| arm.tool_jacobian(std::hint::black_box(&theta), &tool).unwrap()));
}

fn perception(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = FoodEstimatorConfig::default();
    let bowl = BowlGeometry { pose: PoseSE3::from_translation(Vec3::new(0.6, -0.2, 0.0)), diameter: 0.15, guard_height: 0.03 };
    let r = bowl.radius();
    let points = (0..2000)
        .map(|_| bowl.to_world(&Vec3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(0.0..0.03))))
        .collect();
    let cloud = FoodCloud { points, bowl };
    let sites = ScoopSiteSet::standard(&cloud.bowl, &cfg);
    c.bench_function("select_scoop_site_2000", |b| b.iter(|| select_scoop_site(&cloud, &sites, &cfg).unwrap()));

    let base = UnitQuaternion::from_axes(&Vec3::new(0.0, -1.0, 0.0), &Vec3::z(), &Vec3::new(-1.0, 0.0, 0.0));
    let mouth = PoseSE3::new(Vec3::new(0.90, 0.22, 0.10), base);
    let camera = look_at(Vec3::new(0.45, 0.22, 0.18), mouth.position);
    let k = Intrinsics::default();
    let scene = FaceScene { timestamp: 0.0, mouth: &mouth, mouth_open: false, camera: &camera, intrinsics: &k, utensil: None, face_blocked: false };
    let frame = emit_landmarks(&scene, &LandmarkNoise { sigma: 0.002, ..Default::default() }, &mut rng);
    let mcfg = MouthConfig::default();
    c.bench_function("mouth_estimate", |b| {
        b.iter(|| {
            let acc = LandmarkFilter::new().filter(&frame, None, &mcfg).unwrap();
            estimate_mouth_pose(&acc, None, &mcfg).unwrap()
        })
    });
}

fn monitor(c: &mut Criterion) {
    let sc = Scenario::standard();
    let mut seqs = Vec::new();
    for seed in 0..10 {
        seqs.extend(run_headless(&sc.clone().with_seed(seed), &CommandScript::sequence([CommandKind::Scoop])).unwrap().features);
    }
    let model = train_from_sequences(&seqs, Subtask::Scoop, &TrainConfig::default()).unwrap();
    let seq = seqs[0].features.clone();
    c.bench_function("score_scoop_sequence", |b| b.iter(|| model.score_sequence(&seq)));
}

fn simulation(c: &mut Criterion) {
    let sc = Scenario::standard();
    c.bench_function("world_tick", |b| {
        b.iter_batched_ref(
            || sc.executive().unwrap().world,
            |w| {
                let tau = w.gravity_torque();
                w.step(&tau).unwrap()
            },
            BatchSize::LargeInput,
        )
    });
    let mut g = c.benchmark_group("headless");
    g.sample_size(10);
    g.bench_function("scoop", |b| b.iter(|| run_headless(&sc, &CommandScript::sequence([CommandKind::Scoop])).unwrap()));
    g.finish();
}

criterion_group!(benches, control, perception, monitor, simulation);
criterion_main!(benches);
