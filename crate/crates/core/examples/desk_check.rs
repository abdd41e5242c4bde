//! End-to-end desk-scale check: train on a cylinder, inspect sample quality.
use hgdiffuser::constraints::{extract_constraints, loss_total, Thresholds};
use hgdiffuser::diffusion::*;
use hgdiffuser::eval::*;
use hgdiffuser::gripper::GripperSpec;
use hgdiffuser::network::NetworkConfig;
use hgdiffuser::scenes::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let spec = ObjectSpec::new_cylinder("cyl0", 0.025, 0.12);
    let (cloud, surface) = make_object(&spec, 512, &mut rng).unwrap();
    let gripper = GripperSpec::desk_default();
    let labels = sample_antipodal_grasps(&cloud, &surface, &gripper, 200, 0.5, &mut rng).unwrap();
    println!("[{:6.1?}] dataset: {} grasps (exhausted={})", t0.elapsed(), labels.labels.len(), labels.exhausted);
    let (demo, _seed_pose) = synthesize_demo(&spec, &cloud, &surface, &gripper, &spec.task_region, &Thresholds::default(), 0.5, &mut rng).unwrap();

    let mut grasps = BTreeMap::new();
    grasps.insert("cyl0".to_string(), labels.labels);
    let dataset = Dataset {
        meta: DatasetMeta { version: DATASET_VERSION, seed: 7, object_count: 1, grasp_count: grasps["cyl0"].len(), demo_count: 1 },
        objects: vec![ObjectEntry { spec: spec.clone(), cloud: cloud.clone() }],
        grasps, demos: vec![demo.clone()],
    };

    let set = TrainingSet::from_dataset(&dataset, &gripper).unwrap();
    let net_cfg = NetworkConfig::desk();
    let schedule = NoiseSchedule::default();
    let tc = TrainConfig::desk();
    let t1 = Instant::now();
    let outcome = train(&set, &net_cfg, &schedule, &tc, true, None, None, |e, l| {
        if e % 10 == 0 || e == 1 || e == 49 { println!("  epoch {e:3}: loss {l:.4}"); }
    }).unwrap();
    println!("[{:6.1?}] training took {:?}; epoch1 {:.4} epoch50 {:.4} ratio {:.3}", t0.elapsed(), t1.elapsed(),
        outcome.loss_curve[0], outcome.loss_curve[49], outcome.loss_curve[49]/outcome.loss_curve[0]);

    let model = ScoreModel::new(outcome.params, net_cfg, gripper.clone());

    // Unguided force-closure rate over 100 samples.
    let t2 = Instant::now();
    let samples = sample_many(&cloud, &model, &schedule, None, 100, 99).unwrap();
    let dt_unguided = t2.elapsed();
    let fc_pass = samples.iter().filter(|h| force_closure(&cloud.frame.denormalize_pose(h), &surface, &gripper, 0.5).ok).count();
    println!("[{:6.1?}] unguided 100: force closure {fc_pass}/100  ({dt_unguided:?})", t0.elapsed());
    // Failure breakdown
    let mut reasons = BTreeMap::new();
    for h in &samples {
        let v = force_closure(&cloud.frame.denormalize_pose(h), &surface, &gripper, 0.5);
        if let Some(r) = v.reason { *reasons.entry(format!("{r:?}")).or_insert(0) += 1; }
    }
    println!("  failure reasons: {reasons:?}");

    // Guided: constraint satisfaction + joint.
    let constraint = extract_constraints(&demo, &cloud, &gripper, &Thresholds::default()).unwrap();
    let gcfg = hgdiffuser::constraints::GuidanceConfig::default();
    let guidance = Guidance { constraint: &constraint, config: &gcfg };
    let t3 = Instant::now();
    let guided = sample_many(&cloud, &model, &schedule, Some(&guidance), 100, 123).unwrap();
    let dt_guided = t3.elapsed();
    let sat = guided.iter().filter(|h| constraint_satisfied(h, &constraint)).count();
    let joint = guided.iter().filter(|h| constraint_satisfied(h, &constraint)
        && force_closure(&cloud.frame.denormalize_pose(h), &surface, &gripper, 0.5).ok).count();
    println!("[{:6.1?}] guided 100: constraint {sat}/100, joint {joint}/100  ({dt_guided:?})", t0.elapsed());

    // Paired loss comparison.
    let mut g_loss = 0.0; let mut u_loss = 0.0;
    for i in 0..100u64 {
        let g = sample_many(&cloud, &model, &schedule, Some(&guidance), 1, 1000 + i).unwrap()[0];
        let u = sample_many(&cloud, &model, &schedule, None, 1, 1000 + i).unwrap()[0];
        g_loss += loss_total(&g, &constraint, &gcfg);
        u_loss += loss_total(&u, &constraint, &gcfg);
    }
    println!("[{:6.1?}] mean loss_total guided {:.4} vs unguided {:.4}", t0.elapsed(), g_loss/100.0, u_loss/100.0);

    // Timing ratio: guided@1 vs two-stage@500.
    let t4 = Instant::now();
    for i in 0..5 { let _ = sample_many(&cloud, &model, &schedule, Some(&guidance), 1, 7000 + i).unwrap(); }
    let guided1 = t4.elapsed().as_secs_f64() / 5.0;
    let t5 = Instant::now();
    let _ = two_stage_baseline(&cloud, &model, &schedule, &constraint, &gcfg, 500, 31).unwrap();
    let ts500 = t5.elapsed().as_secs_f64();
    println!("[{:6.1?}] guided@1 {guided1:.3}s vs two-stage@500 {ts500:.3}s → ratio {:.1}x", t0.elapsed(), ts500/guided1);

    // Two-stage success at 100 vs 500 over 6 seeds (quick trend look).
    let mut s100 = 0; let mut s500 = 0;
    for seed in 0..6u64 {
        for (n, acc) in [(100usize, &mut s100), (500usize, &mut s500)] {
            if let Some(h) = two_stage_baseline(&cloud, &model, &schedule, &constraint, &gcfg, n, 40_000 + seed * 7 + n as u64).unwrap() {
                if constraint_satisfied(&h, &constraint) && force_closure(&cloud.frame.denormalize_pose(&h), &surface, &gripper, 0.5).ok { *acc += 1; }
            }
        }
    }
    println!("[{:6.1?}] two-stage joint success over 6 seeds: @100 {s100}/6, @500 {s500}/6", t0.elapsed());
}
