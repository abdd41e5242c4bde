//! Benchmark harness: runs each method over every (object, demonstration)
//! pair and seed, timing only the grasp-generation call, and emits per-grasp
//! CSV records plus aggregate rates. Joint success requires force closure
//! AND constraint satisfaction.
//!
//! Everything runs single-threaded; timed calls are never overlapped.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::constraints::{extract_constraints, loss_total, GuidanceConfig, Thresholds};
use crate::diffusion::{sample_many, train, Guidance, NoiseSchedule, ScoreModel, TrainConfig, TrainingSet};
use crate::error::{Error, Result};
use crate::gripper::GripperSpec;
use crate::lie::GraspPose;
use crate::network::{Backbone, NetworkConfig};
use crate::scenes::Dataset;

use super::{constraint_satisfied, force_closure, two_stage_baseline};

/// One benchmarked method: the guided single-stage sampler or the two-stage
/// baseline, at a given sample count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchMethod {
    pub guided: bool,
    pub n_samples: usize,
}

impl BenchMethod {
    pub fn name(&self) -> &'static str {
        if self.guided {
            "guided"
        } else {
            "two_stage"
        }
    }
}

/// Benchmark configuration; the default mirrors the sampling-quantity study
/// (two-stage at 100/200/500/1000 samples, guided at 1 and 100).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub methods: Vec<BenchMethod>,
    pub seeds: Vec<u64>,
    pub thresholds: Thresholds,
    pub guidance: GuidanceConfig,
    pub mu: f64,
    /// Discarded generation calls before the timed runs.
    pub warmup_calls: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            methods: vec![
                BenchMethod { guided: false, n_samples: 100 },
                BenchMethod { guided: false, n_samples: 200 },
                BenchMethod { guided: false, n_samples: 500 },
                BenchMethod { guided: false, n_samples: 1000 },
                BenchMethod { guided: true, n_samples: 1 },
                BenchMethod { guided: true, n_samples: 100 },
            ],
            seeds: vec![0],
            thresholds: Thresholds::default(),
            guidance: GuidanceConfig::default(),
            mu: 0.5,
            warmup_calls: 3,
        }
    }
}

/// One generation attempt: outcome, compliance, and wall time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspRecord {
    pub method: String,
    pub n_samples: usize,
    pub object_id: String,
    pub task: String,
    pub success: bool,
    pub constraint_ok: bool,
    pub force_closure_ok: bool,
    pub loss_total: Option<f64>,
    pub time_s: f64,
    pub seed: u64,
}

/// Per-method aggregate over all records; rates are percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: String,
    pub n_samples: usize,
    pub runs: usize,
    pub success_rate: f64,
    pub constraint_rate: f64,
    pub force_closure_rate: f64,
    pub time_mean_s: f64,
    pub time_std_s: f64,
}

/// Execution environment captured alongside the results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvRecord {
    pub threads: usize,
    pub seeds: Vec<u64>,
    pub config_hash: String,
    /// Timing note: generation call only, model load and evaluation
    /// excluded.
    pub timing_protocol: String,
}

/// Full benchmark output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<GraspRecord>,
    pub aggregates: Vec<MethodAggregate>,
    pub environment: EnvRecord,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic seed stream per (seed, method, pair).
fn derive_seed(seed: u64, method_idx: usize, pair_idx: usize) -> u64 {
    splitmix64(seed ^ splitmix64((method_idx as u64) << 32 | pair_idx as u64))
}

/// Recompute aggregates from records, grouped by (method, n_samples) in
/// first-appearance order.
pub fn aggregate_records(records: &[GraspRecord]) -> Vec<MethodAggregate> {
    let mut keys: Vec<(String, usize)> = Vec::new();
    for r in records {
        let key = (r.method.clone(), r.n_samples);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(method, n_samples)| {
            let group: Vec<&GraspRecord> = records
                .iter()
                .filter(|r| r.method == method && r.n_samples == n_samples)
                .collect();
            let runs = group.len();
            let pct = |f: &dyn Fn(&GraspRecord) -> bool| {
                100.0 * group.iter().filter(|r| f(r)).count() as f64 / runs as f64
            };
            let times: Vec<f64> = group.iter().map(|r| r.time_s).collect();
            let mean = times.iter().sum::<f64>() / runs as f64;
            let var = if runs > 1 {
                times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (runs - 1) as f64
            } else {
                0.0
            };
            MethodAggregate {
                method,
                n_samples,
                runs,
                success_rate: pct(&|r| r.success),
                constraint_rate: pct(&|r| r.constraint_ok),
                force_closure_rate: pct(&|r| r.force_closure_ok),
                time_mean_s: mean,
                time_std_s: var.sqrt(),
            }
        })
        .collect()
}

/// Run every configured method over every (object, demo) pair and seed.
/// Only the grasp-generation call is timed; constraint extraction and
/// evaluation happen outside the clock.
pub fn run_benchmark(
    dataset: &Dataset,
    model: &ScoreModel,
    schedule: &NoiseSchedule,
    cfg: &BenchConfig,
) -> Result<EvalReport> {
    if cfg.methods.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "benchmark needs at least one method and one seed".into(),
        ));
    }
    // Pairs of (object entry, demo, extracted constraint, surface).
    let mut pairs = Vec::new();
    for demo in &dataset.demos {
        let entry = dataset.object(&demo.object_id).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "demo references unknown object `{}`",
                demo.object_id
            ))
        })?;
        let constraint = extract_constraints(demo, &entry.cloud, &model.gripper, &cfg.thresholds)?;
        pairs.push((entry, demo, constraint, entry.spec.surface()));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(
            "dataset contains no demonstrations to benchmark".into(),
        ));
    }

    // Warm the model: discarded guided single-sample calls.
    for w in 0..cfg.warmup_calls {
        let (entry, _, constraint, _) = &pairs[0];
        let guidance = Guidance {
            constraint,
            config: &cfg.guidance,
        };
        let _ = sample_many(
            &entry.cloud,
            model,
            schedule,
            Some(&guidance),
            1,
            splitmix64(0xDEAD_BEEF ^ w as u64),
        )?;
    }

    let mut records = Vec::new();
    for (method_idx, method) in cfg.methods.iter().enumerate() {
        for &seed in &cfg.seeds {
            for (pair_idx, (entry, demo, constraint, surface)) in pairs.iter().enumerate() {
                let base_seed = derive_seed(seed, method_idx, pair_idx);
                let start = Instant::now();
                let pose: Option<GraspPose> = if method.guided {
                    let guidance = Guidance {
                        constraint,
                        config: &cfg.guidance,
                    };
                    let samples = sample_many(
                        &entry.cloud,
                        model,
                        schedule,
                        Some(&guidance),
                        method.n_samples,
                        base_seed,
                    )?;
                    samples.into_iter().min_by(|a, b| {
                        loss_total(a, constraint, &cfg.guidance)
                            .total_cmp(&loss_total(b, constraint, &cfg.guidance))
                    })
                } else {
                    two_stage_baseline(
                        &entry.cloud,
                        model,
                        schedule,
                        constraint,
                        &cfg.guidance,
                        method.n_samples,
                        base_seed,
                    )?
                };
                let time_s = start.elapsed().as_secs_f64();

                let (success, constraint_ok, fc_ok, loss) = match pose {
                    None => (false, false, false, None),
                    Some(h) => {
                        let sat = constraint_satisfied(&h, constraint);
                        let v = force_closure(
                            &entry.cloud.frame.denormalize_pose(&h),
                            surface,
                            &model.gripper,
                            cfg.mu,
                        );
                        (
                            sat && v.ok,
                            sat,
                            v.ok,
                            Some(loss_total(&h, constraint, &cfg.guidance)),
                        )
                    }
                };
                records.push(GraspRecord {
                    method: method.name().to_string(),
                    n_samples: method.n_samples,
                    object_id: entry.spec.id.clone(),
                    task: demo.task_name.clone(),
                    success,
                    constraint_ok,
                    force_closure_ok: fc_ok,
                    loss_total: loss,
                    time_s,
                    seed,
                });
            }
        }
    }

    let aggregates = aggregate_records(&records);
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(cfg)?);
    let config_hash = hex_prefix(&hasher.finalize(), 16);
    Ok(EvalReport {
        records,
        aggregates,
        environment: EnvRecord {
            threads: 1,
            seeds: cfg.seeds.clone(),
            config_hash,
            timing_protocol: format!(
                "single-threaded; generation call only (model load and evaluation excluded); {} warm-up calls discarded",
                cfg.warmup_calls
            ),
        },
    })
}

fn hex_prefix(bytes: &[u8], chars: usize) -> String {
    let mut s = String::new();
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
        if s.len() >= chars {
            break;
        }
    }
    s.truncate(chars);
    s
}

pub const CSV_HEADER: &str =
    "method,n_samples,object_id,task,success,constraint_ok,force_closure_ok,loss_total,time_s,seed";

/// Write per-grasp records as CSV with the documented column set.
pub fn write_records_csv(path: &Path, records: &[GraspRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    writeln!(f, "{CSV_HEADER}")?;
    for r in records {
        let loss = r.loss_total.map(|l| l.to_string()).unwrap_or_default();
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{}",
            r.method,
            r.n_samples,
            r.object_id,
            r.task,
            r.success,
            r.constraint_ok,
            r.force_closure_ok,
            loss,
            r.time_s,
            r.seed
        )?;
    }
    Ok(())
}

/// Summary JSON with aggregates and the environment record.
pub fn write_summary_json(path: &Path, report: &EvalReport) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let summary = serde_json::json!({
        "aggregates": report.aggregates,
        "environment": report.environment,
        "records": report.records.len(),
    });
    fs::write(path, serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

/// Feature-backbone ablation: train the DiT variant and the flat MLP
/// variant on the same dataset and seed, then compare task-agnostic
/// force-closure rates over `n_eval` unguided samples per object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub dit_success_rate: f64,
    pub mlp_success_rate: f64,
    pub dit_final_loss: f64,
    pub mlp_final_loss: f64,
    pub n_eval: usize,
    pub train_seed: u64,
}

#[allow(clippy::too_many_arguments)]
pub fn ablation_backbone(
    dataset: &Dataset,
    base_cfg: &NetworkConfig,
    schedule: &NoiseSchedule,
    train_cfg: &TrainConfig,
    gripper: &GripperSpec,
    mu: f64,
    n_eval: usize,
    eval_seed: u64,
) -> Result<AblationReport> {
    let set = TrainingSet::from_dataset(dataset, gripper)?;
    let mut rates = [0.0f64; 2];
    let mut losses = [0.0f64; 2];
    for (slot, backbone) in [Backbone::Dit, Backbone::Mlp].into_iter().enumerate() {
        let cfg = NetworkConfig {
            backbone,
            ..base_cfg.clone()
        };
        let outcome = train(&set, &cfg, schedule, train_cfg, true, None, None, |_, _| {})?;
        losses[slot] = *outcome.loss_curve.last().unwrap();
        let model = ScoreModel::new(outcome.params, cfg, gripper.clone());

        let mut passed = 0usize;
        let mut total = 0usize;
        for entry in &dataset.objects {
            let surface = entry.spec.surface();
            let samples = sample_many(&entry.cloud, &model, schedule, None, n_eval, eval_seed)?;
            for pose in samples {
                let v = force_closure(
                    &entry.cloud.frame.denormalize_pose(&pose),
                    &surface,
                    gripper,
                    mu,
                );
                passed += usize::from(v.ok);
                total += 1;
            }
        }
        rates[slot] = 100.0 * passed as f64 / total as f64;
    }
    Ok(AblationReport {
        dit_success_rate: rates[0],
        mlp_success_rate: rates[1],
        dit_final_loss: losses[0],
        mlp_final_loss: losses[1],
        n_eval,
        train_seed: train_cfg.seed,
    })
}
