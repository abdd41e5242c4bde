//! Subcommand implementations wiring the library end to end.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hgdiffuser::constraints::{extract_constraints, loss_total};
use hgdiffuser::diffusion::{
    sample_many, sample_with_trajectory, train, Guidance, ScoreModel, TrainingSet,
};
use hgdiffuser::error::{Error, Result};
use hgdiffuser::eval::{
    force_closure, run_benchmark, write_records_csv, write_summary_json, BenchConfig, BenchMethod,
};
use hgdiffuser::network::{load_params, save_params, Checkpoint};
use hgdiffuser::scenes::{
    make_object, read_dataset, sample_antipodal_grasps, synthesize_demo, write_dataset, write_ply,
    Dataset, DatasetMeta, DemoRecord, ObjectEntry, ObjectKind, ObjectSpec, DATASET_VERSION,
};

use crate::config::RunConfig;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic size table: variant `v` of `variants` interpolates each
/// dimension across a pinchable desk-scale range.
fn object_spec_for(kind: ObjectKind, variant: usize, variants: usize) -> ObjectSpec {
    let t = if variants <= 1 {
        0.0
    } else {
        variant as f64 / (variants - 1) as f64
    };
    let lerp = |a: f64, b: f64| a + (b - a) * t;
    let id = format!("{}{variant:02}", kind.name());
    match kind {
        ObjectKind::Box => ObjectSpec::new_box(
            id,
            lerp(0.030, 0.055),
            lerp(0.040, 0.060),
            lerp(0.080, 0.150),
        ),
        ObjectKind::Cylinder => ObjectSpec::new_cylinder(id, lerp(0.015, 0.035), lerp(0.080, 0.160)),
        ObjectKind::Lshape => ObjectSpec::new_lshape(
            id,
            lerp(0.022, 0.035),
            lerp(0.100, 0.160),
            lerp(0.060, 0.090),
            lerp(0.030, 0.040),
            lerp(0.028, 0.040),
        ),
    }
}

pub fn gen_data(cfg: &RunConfig, out: &Path, force: bool, ply: bool) -> Result<()> {
    if out.exists() && fs::read_dir(out)?.next().is_some() {
        if !force {
            return Err(Error::InvalidArgument(format!(
                "output directory {} is not empty (use --force to overwrite)",
                out.display()
            )));
        }
        fs::remove_dir_all(out)?;
    }

    let kinds: Vec<ObjectKind> = cfg
        .dataset
        .kinds
        .iter()
        .map(|k| ObjectKind::parse(k))
        .collect::<Result<_>>()?;

    let mut objects = Vec::new();
    let mut grasps = BTreeMap::new();
    let mut demos = Vec::new();
    let mut grasp_count = 0usize;

    for (kind_idx, kind) in kinds.iter().enumerate() {
        for variant in 0..cfg.dataset.variants {
            let spec = object_spec_for(*kind, variant, cfg.dataset.variants);
            let obj_seed = splitmix64(cfg.seed ^ ((kind_idx as u64) << 40) ^ (variant as u64));
            let mut rng = ChaCha8Rng::seed_from_u64(obj_seed);
            let (cloud, surface) = make_object(&spec, cfg.dataset.points_per_cloud, &mut rng)?;
            let outcome = sample_antipodal_grasps(
                &cloud,
                &surface,
                &cfg.gripper,
                cfg.dataset.grasps_per_object,
                cfg.dataset.mu,
                &mut rng,
            )?;
            if outcome.exhausted {
                eprintln!(
                    "warning: object {} yielded only {} of {} grasps",
                    spec.id,
                    outcome.labels.len(),
                    cfg.dataset.grasps_per_object
                );
            }
            for _ in 0..cfg.dataset.demos_per_object {
                let (demo, _) = synthesize_demo(
                    &spec,
                    &cloud,
                    &surface,
                    &cfg.gripper,
                    &spec.task_region,
                    &cfg.thresholds,
                    cfg.dataset.mu,
                    &mut rng,
                )?;
                demos.push(demo);
            }
            if ply {
                let raw: Vec<_> = cloud
                    .points
                    .iter()
                    .map(|p| cloud.frame.denormalize_point(*p))
                    .collect();
                write_ply(
                    &out.join("ply").join(format!("{}.ply", spec.id)),
                    &raw,
                    Some(&cloud.normals),
                )?;
            }
            grasp_count += outcome.labels.len();
            grasps.insert(spec.id.clone(), outcome.labels);
            objects.push(ObjectEntry { spec, cloud });
        }
    }

    let dataset = Dataset {
        meta: DatasetMeta {
            version: DATASET_VERSION,
            seed: cfg.seed,
            object_count: objects.len(),
            grasp_count,
            demo_count: demos.len(),
        },
        objects,
        grasps,
        demos,
    };
    write_dataset(out, &dataset)?;
    cfg.echo(out)?;
    println!(
        "wrote {} objects, {} grasps, {} demos to {}",
        dataset.meta.object_count,
        dataset.meta.grasp_count,
        dataset.meta.demo_count,
        out.display()
    );
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig, data: &Path, out: &Path, resume: bool) -> Result<()> {
    if !data.exists() {
        return Err(Error::InvalidArgument(format!(
            "data directory {} does not exist",
            data.display()
        )));
    }
    let dataset = read_dataset(data)?;
    let set = TrainingSet::from_dataset(&dataset, &cfg.gripper)?;

    let resume_state = if resume {
        let ckpt = load_params(out)?;
        if ckpt.config != cfg.network {
            return Err(Error::ShapeMismatch(
                "checkpoint network config differs from the requested one".into(),
            ));
        }
        let state = ckpt.train_state.ok_or_else(|| {
            Error::InvalidArgument("checkpoint carries no optimizer state to resume".into())
        })?;
        Some((ckpt.params, state))
    } else {
        None
    };

    let outcome = train(
        &set,
        &cfg.network,
        &cfg.schedule,
        &cfg.train,
        true,
        resume_state,
        Some(out),
        |epoch, loss| {
            println!("epoch {epoch}: loss {loss:.6}");
        },
    )?;

    save_params(
        out,
        &Checkpoint {
            config: cfg.network.clone(),
            params: outcome.params,
            train_state: Some(outcome.state.clone()),
        },
    )?;

    let start_epoch = outcome.state.epoch - outcome.loss_curve.len();
    let loss_csv = out.with_extension("loss.csv");
    let mut f = fs::File::create(&loss_csv)?;
    writeln!(f, "epoch,loss")?;
    for (i, loss) in outcome.loss_curve.iter().enumerate() {
        writeln!(f, "{},{}", start_epoch + i, loss)?;
    }
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            cfg.echo(parent)?;
        }
    }
    println!(
        "trained to epoch {}; checkpoint at {}",
        outcome.state.epoch,
        out.display()
    );
    Ok(())
}

fn load_object(path: &Path) -> Result<ObjectEntry> {
    let text = fs::read_to_string(path)?;
    let entry: ObjectEntry = serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        message: e.to_string(),
    })?;
    entry.spec.validate()?;
    entry.cloud.validate()?;
    Ok(entry)
}

fn load_demo(path: &Path) -> Result<DemoRecord> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        message: e.to_string(),
    })
}

pub struct SampleArgs {
    pub ckpt: PathBuf,
    pub object: PathBuf,
    pub demo: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub n: usize,
    pub out: PathBuf,
    pub trajectory: Option<PathBuf>,
    pub ply: Option<PathBuf>,
}

pub fn sample_cmd(cfg: &RunConfig, args: &SampleArgs) -> Result<()> {
    let ckpt = load_params(&args.ckpt)?;
    let model = ScoreModel::from_checkpoint(ckpt, cfg.gripper.clone());
    let entry = load_object(&args.object)?;

    let mut guidance_cfg = cfg.guidance;
    if let Some(alpha) = args.alpha {
        guidance_cfg.alpha = alpha;
    }
    let constraint = match &args.demo {
        Some(demo_path) => {
            let demo = load_demo(demo_path)?;
            if demo.object_id != entry.spec.id {
                return Err(Error::InvalidArgument(format!(
                    "demo is for object `{}` but the cloud is `{}`: frames do not match",
                    demo.object_id, entry.spec.id
                )));
            }
            Some(extract_constraints(
                &demo,
                &entry.cloud,
                &cfg.gripper,
                &cfg.thresholds,
            )?)
        }
        None => None,
    };
    let guidance = constraint.as_ref().map(|c| Guidance {
        constraint: c,
        config: &guidance_cfg,
    });

    let poses = sample_many(
        &entry.cloud,
        &model,
        &cfg.schedule,
        guidance.as_ref(),
        args.n,
        cfg.seed,
    )?;

    // Pose list alone in the main output so guided runs with alpha = 0 are
    // byte-identical to unguided ones; diagnostics go to a sidecar.
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut f = fs::File::create(&args.out)?;
    serde_json::to_writer(&mut f, &poses)?;
    f.write_all(b"\n")?;

    let surface = entry.spec.surface();
    let diag: Vec<serde_json::Value> = poses
        .iter()
        .map(|h| {
            let v = force_closure(
                &entry.cloud.frame.denormalize_pose(h),
                &surface,
                &cfg.gripper,
                cfg.dataset.mu,
            );
            serde_json::json!({
                "force_closure": v,
                "loss_total": constraint.as_ref().map(|c| loss_total(h, c, &guidance_cfg)),
            })
        })
        .collect();
    fs::write(
        args.out.with_extension("diag.json"),
        serde_json::to_string_pretty(&diag)?,
    )?;

    if let Some(traj_path) = &args.trajectory {
        let mut f = fs::File::create(traj_path)?;
        for chain in 0..args.n {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ chain as u64);
            let (_, traj) = sample_with_trajectory(
                &entry.cloud,
                &model,
                &cfg.schedule,
                guidance.as_ref(),
                &mut rng,
            )?;
            for point in traj {
                let mut row = serde_json::to_value(&point)?;
                row["chain"] = serde_json::json!(chain);
                writeln!(f, "{row}")?;
            }
        }
    }

    if let Some(ply_path) = &args.ply {
        let mut pts: Vec<_> = entry
            .cloud
            .points
            .iter()
            .map(|p| entry.cloud.frame.denormalize_point(*p))
            .collect();
        for h in &poses {
            let h_raw = entry.cloud.frame.denormalize_pose(h);
            pts.extend(hgdiffuser::gripper::gripper_points(&h_raw, &cfg.gripper));
        }
        write_ply(ply_path, &pts, None)?;
    }

    println!("wrote {} poses to {}", poses.len(), args.out.display());
    Ok(())
}

pub fn extract_cmd(cfg: &RunConfig, demo: &Path, object: &Path, out: &Path) -> Result<()> {
    let entry = load_object(object)?;
    let demo = load_demo(demo)?;
    if demo.object_id != entry.spec.id {
        return Err(Error::InvalidArgument(format!(
            "demo is for object `{}` but the cloud is `{}`: frames do not match",
            demo.object_id, entry.spec.id
        )));
    }
    let constraint = extract_constraints(&demo, &entry.cloud, &cfg.gripper, &cfg.thresholds)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(out, serde_json::to_string_pretty(&constraint)?)?;
    println!("wrote constraint to {}", out.display());
    Ok(())
}

fn bench_config(cfg: &RunConfig, methods: Vec<BenchMethod>) -> BenchConfig {
    BenchConfig {
        methods,
        seeds: cfg.bench.seeds.clone(),
        thresholds: cfg.thresholds,
        guidance: cfg.guidance,
        mu: cfg.dataset.mu,
        warmup_calls: cfg.bench.warmup_calls,
    }
}

pub fn eval_cmd(
    cfg: &RunConfig,
    ckpt: &Path,
    data: &Path,
    method: &str,
    n_samples: usize,
    out: &Path,
) -> Result<()> {
    let guided = match method {
        "guided" => true,
        "two-stage" => false,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown method `{other}`; valid methods: guided, two-stage"
            )))
        }
    };
    let methods = vec![BenchMethod { guided, n_samples }];
    run_report(cfg, ckpt, data, methods, out)
}

pub fn bench_cmd(cfg: &RunConfig, ckpt: &Path, data: &Path, out: &Path) -> Result<()> {
    let mut methods = Vec::new();
    for &n in &cfg.bench.two_stage_counts {
        methods.push(BenchMethod {
            guided: false,
            n_samples: n,
        });
    }
    for &n in &cfg.bench.guided_counts {
        methods.push(BenchMethod {
            guided: true,
            n_samples: n,
        });
    }
    run_report(cfg, ckpt, data, methods, out)
}

fn run_report(
    cfg: &RunConfig,
    ckpt: &Path,
    data: &Path,
    methods: Vec<BenchMethod>,
    out: &Path,
) -> Result<()> {
    let checkpoint = load_params(ckpt)?;
    let model = ScoreModel::from_checkpoint(checkpoint, cfg.gripper.clone());
    let dataset = read_dataset(data)?;
    let bench = bench_config(cfg, methods);
    let report = run_benchmark(&dataset, &model, &cfg.schedule, &bench)?;
    fs::create_dir_all(out)?;
    write_records_csv(&out.join("records.csv"), &report.records)?;
    write_summary_json(&out.join("summary.json"), &report)?;
    cfg.echo(out)?;
    for agg in &report.aggregates {
        println!(
            "{}@{}: success {:.2}% (constraint {:.2}%, force closure {:.2}%), time {:.3}s ± {:.3}s over {} runs",
            agg.method,
            agg.n_samples,
            agg.success_rate,
            agg.constraint_rate,
            agg.force_closure_rate,
            agg.time_mean_s,
            agg.time_std_s,
            agg.runs
        );
    }
    Ok(())
}

/// Dump one of the built-in presets as a TOML config file.
pub fn dump_config(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let text = toml::to_string_pretty(cfg).map_err(|e| Error::Parse {
        file: "<config>".into(),
        message: e.to_string(),
    })?;
    match out {
        Some(path) => {
            fs::write(path, text)?;
            println!("wrote config to {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

