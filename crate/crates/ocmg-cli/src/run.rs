//! Subcommand implementations behind the `ocmg` binary.

use std::fmt;
use std::path::{Path as FsPath, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Result};
use clap::Args;

use ocmg_core::dataset::{
    downsample_path, generate_cuboid, generate_window, CuboidSpec, GenParams, WindowSpec,
};
use ocmg_core::evalsim::{metric_pcd, nop_metrics, paint_coverage, simulate_paint, GunModel};
use ocmg_core::geom::{
    normalize_samples, normalize_samples_with_scale, Category, MetricConfig, ObjectSample, Path,
    Pose, Vec3,
};
use ocmg_core::learner::{
    fit_cloud, infer, train_from, EpochRecord, ModelConfig, TrainConfig, TrainObserver,
    TrainState, TrainSample,
};
use ocmg_core::losses::CurriculumSchedule;
use ocmg_core::postprocess::{postprocess_all, PostprocessConfig, RdpParams};
use ocmg_core::segments::{extract_segments, path_points};

use crate::checkpoint::{
    metrics_row, read_checkpoint, write_checkpoint, Checkpoint, METRICS_HEADER,
};
use crate::parallel::{default_workers, run_ordered, ParallelRunner};
use crate::store::{
    g17, load_entry_sample, read_manifest, read_paths, write_atomic, write_manifest, write_paths,
    write_sample, Manifest, ManifestEntry, MetaValue,
};
use crate::svg::{render_paths, write_coverage_mesh, Projection};

/// Configuration mistakes exit with code 2; runtime failures with 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub const DATA_DIR_ENV: &str = "OCMG_DATA_DIR";

fn env_data_dir() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)
}

fn parse_on_off(value: &str, flag: &str) -> Result<bool> {
    match value {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(usage(format!("--{flag} takes on|off, got {other:?}"))),
    }
}

fn write_config_echo(dir: &FsPath, entries: &[(&str, String)]) -> Result<()> {
    let mut out = String::new();
    for (k, v) in entries {
        out.push_str(&format!("{k} {v}\n"));
    }
    write_atomic(&dir.join("run-config.txt"), out.as_bytes())
}

// ---------------------------------------------------------------------------
// generate

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Object category: cuboids or windows.
    #[arg(long)]
    pub category: String,
    /// Number of samples to generate.
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output dataset root; defaults to $OCMG_DATA_DIR/<category>.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Surface points per sample cloud.
    #[arg(long, default_value_t = 5120)]
    pub points: usize,
    /// Raster pass pitch, meters. The default keeps the spray footprint of
    /// the default gun (12 cm standoff, 30 degree cone) overlapping
    /// adjacent passes even midway between 5 cm waypoints:
    /// sqrt((pitch/2)^2 + (spacing/2)^2) <= 0.12 * tan(30 deg).
    #[arg(long, default_value_t = 0.125)]
    pub pitch: f64,
    /// Waypoint spacing after downsampling, meters.
    #[arg(long, default_value_t = 0.05)]
    pub spacing: f64,
    /// Waypoint spacing along passes before downsampling, meters.
    #[arg(long, default_value_t = 0.025)]
    pub pass_step: f64,
    /// Mesh tessellation cell target, meters.
    #[arg(long, default_value_t = 0.1)]
    pub tess: f64,
    /// Window frame member breadth, meters.
    #[arg(long, default_value_t = 0.08)]
    pub breadth: f64,
    /// Segment length used for the manifest's segment counts.
    #[arg(long, default_value_t = 4)]
    pub lambda: usize,
    #[arg(long)]
    pub workers: Option<usize>,
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    let category: Category =
        args.category.parse().map_err(|_| usage(format!("unknown category {:?}", args.category)))?;
    if args.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let out = args
        .out
        .clone()
        .or_else(|| env_data_dir().map(|d| d.join(args.category.clone())))
        .ok_or_else(|| usage(format!("--out not given and {DATA_DIR_ENV} unset")))?;
    std::fs::create_dir_all(&out)?;
    let workers = args.workers.unwrap_or_else(default_workers);
    let gen = GenParams { pass_step: args.pass_step, cloud_points: args.points, tess_cell: args.tess };

    let prefix = match category {
        Category::Cuboids => "c",
        Category::Windows => "w",
    };
    let indices: Vec<usize> = (0..args.count).collect();
    let built: Vec<Result<(ObjectSample, Vec<(String, MetaValue)>, usize)>> =
        run_ordered(&indices, workers, |_, &i| {
            let seed = args.seed.wrapping_add(i as u64);
            let (mut sample, mut meta) = match category {
                Category::Cuboids => {
                    let spec = CuboidSpec::sample(seed, args.pitch).map_err(|e| anyhow!("{e}"))?;
                    let s = generate_cuboid(&spec, &gen).map_err(|e| anyhow!("{e}"))?;
                    let meta = vec![
                        ("seed".to_string(), MetaValue::Int(seed as i64)),
                        ("height".to_string(), MetaValue::Float(spec.height)),
                        ("depth".to_string(), MetaValue::Float(spec.depth)),
                        ("raster_pitch".to_string(), MetaValue::Float(spec.raster_pitch)),
                    ];
                    (s, meta)
                }
                Category::Windows => {
                    let spec = WindowSpec::sample(seed, args.breadth, args.pitch)
                        .map_err(|e| anyhow!("{e}"))?;
                    let s = generate_window(&spec, &gen).map_err(|e| anyhow!("{e}"))?;
                    let meta = vec![
                        ("seed".to_string(), MetaValue::Int(seed as i64)),
                        ("width".to_string(), MetaValue::Float(spec.width)),
                        ("height".to_string(), MetaValue::Float(spec.height)),
                        ("h_bars".to_string(), MetaValue::Int(spec.h_bars as i64)),
                        ("v_bars".to_string(), MetaValue::Int(spec.v_bars as i64)),
                        ("member_breadth".to_string(), MetaValue::Float(spec.member_breadth)),
                        ("raster_pitch".to_string(), MetaValue::Float(spec.raster_pitch)),
                    ];
                    (s, meta)
                }
            };
            let dense = std::mem::take(&mut sample.paths);
            for p in dense {
                sample.paths.push(downsample_path(&p, args.spacing).map_err(|e| anyhow!("{e}"))?);
            }
            let k = ocmg_core::segments::count_segments(&sample.paths, args.lambda)
                .map_err(|e| anyhow!("{e}"))?;
            meta.push(("pass_step".to_string(), MetaValue::Float(gen.pass_step)));
            meta.push(("tess_cell".to_string(), MetaValue::Float(gen.tess_cell)));
            meta.push(("cloud_points".to_string(), MetaValue::Int(gen.cloud_points as i64)));
            meta.push(("spacing".to_string(), MetaValue::Float(args.spacing)));
            Ok((sample, meta, k))
        });

    let mut samples = Vec::with_capacity(args.count);
    for r in built {
        samples.push(r?);
    }

    let n_train = (args.count * 4).div_ceil(5);
    // normalization scale frozen from the training split
    let mut train_clones: Vec<ObjectSample> =
        samples.iter().take(n_train).map(|(s, _, _)| s.clone()).collect();
    let scale = normalize_samples(&mut train_clones).map_err(|e| anyhow!("{e}"))?;
    drop(train_clones);

    let mut entries = Vec::with_capacity(args.count);
    for (i, (sample, meta, k)) in samples.iter().enumerate() {
        let id = format!("{prefix}{i:04}");
        write_sample(&out, &id, sample, meta.clone())?;
        entries.push(ManifestEntry {
            id,
            train: i < n_train,
            n_paths: sample.n_paths(),
            k_segments: *k,
            centroid: sample.cloud_centroid(),
        });
    }
    let k_max = entries.iter().filter(|e| e.train).map(|e| e.k_segments).max().unwrap_or(0);
    let n_max = entries.iter().filter(|e| e.train).map(|e| e.n_paths).max().unwrap_or(0);
    let manifest = Manifest {
        category,
        lambda: args.lambda,
        scale,
        k_max,
        n_max,
        spacing: args.spacing,
        gen_params: vec![
            ("seed".into(), args.seed.to_string()),
            ("count".into(), args.count.to_string()),
            ("points".into(), args.points.to_string()),
            ("pitch".into(), g17(args.pitch)),
            ("pass_step".into(), g17(args.pass_step)),
            ("tess".into(), g17(args.tess)),
            ("breadth".into(), g17(args.breadth)),
        ],
        entries,
    };
    write_manifest(&out.join("manifest.txt"), &manifest)?;
    write_config_echo(
        &out,
        &[
            ("command", "generate".into()),
            ("category", args.category.clone()),
            ("count", args.count.to_string()),
            ("seed", args.seed.to_string()),
            ("points", args.points.to_string()),
            ("pitch", g17(args.pitch)),
            ("spacing", g17(args.spacing)),
            ("pass_step", g17(args.pass_step)),
            ("tess", g17(args.tess)),
            ("breadth", g17(args.breadth)),
            ("lambda", args.lambda.to_string()),
        ],
    )?;
    println!(
        "generated {} {} samples into {} (train {}, test {}, scale {:.6})",
        args.count,
        category,
        out.display(),
        n_train,
        args.count - n_train,
        scale
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset manifest; defaults to $OCMG_DATA_DIR/manifest.txt.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Input points fed to the encoder.
    #[arg(long, default_value_t = 256)]
    pub points: usize,
    #[arg(long, default_value_t = 64)]
    pub enc_hidden: usize,
    #[arg(long, default_value_t = 128)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 256)]
    pub dec_hidden: usize,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Resume from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

fn resolve_manifest(arg: &Option<PathBuf>) -> Result<PathBuf> {
    arg.clone()
        .or_else(|| env_data_dir().map(|d| d.join("manifest.txt")))
        .ok_or_else(|| usage(format!("--manifest not given and {DATA_DIR_ENV} unset")))
}

/// Loads, normalizes, and segments the requested split.
fn load_split(
    manifest_path: &FsPath,
    train_split: bool,
    input_points: usize,
) -> Result<(Manifest, Vec<TrainSample>, Vec<String>)> {
    let manifest = read_manifest(manifest_path)?;
    let root = manifest_path.parent().unwrap_or_else(|| FsPath::new("."));
    let entries: Vec<&ManifestEntry> =
        manifest.entries.iter().filter(|e| e.train == train_split).collect();
    if entries.is_empty() {
        bail!("manifest has no {} samples", if train_split { "train" } else { "test" });
    }
    let mut out = Vec::with_capacity(entries.len());
    let mut ids = Vec::with_capacity(entries.len());
    for entry in entries {
        let mut sample = load_entry_sample(root, entry)?;
        let mut batch = [&mut sample];
        normalize_one(&mut batch, manifest.scale)?;
        let gt = extract_segments(&sample.paths, manifest.lambda).map_err(|e| anyhow!("{e}"))?;
        let cloud = fit_cloud(&sample.point_cloud, input_points);
        out.push(TrainSample { cloud, gt_segments: gt, n_paths: sample.n_paths() });
        ids.push(entry.id.clone());
    }
    Ok((manifest, out, ids))
}

fn normalize_one(batch: &mut [&mut ObjectSample], scale: f64) -> Result<()> {
    // normalize_samples_with_scale wants a slice of owned samples
    let mut tmp = vec![std::mem::replace(
        batch[0],
        ObjectSample {
            point_cloud: vec![Vec3::ZERO],
            paths: vec![],
            mesh: None,
            category: Category::Cuboids,
            norm: None,
        },
    )];
    normalize_samples_with_scale(&mut tmp, scale).map_err(|e| anyhow!("{e}"))?;
    *batch[0] = tmp.pop().unwrap();
    Ok(())
}

struct TrainLogger {
    csv: String,
    out_dir: PathBuf,
    model: ModelConfig,
    train: TrainConfig,
    milestones: [usize; 2],
    checkpoints_written: usize,
}

impl TrainObserver for TrainLogger {
    fn on_epoch(&mut self, record: &EpochRecord) {
        self.csv.push_str(&metrics_row(record));
        self.csv.push('\n');
    }

    fn on_checkpoint(&mut self, state: &TrainState) {
        let ck = Checkpoint {
            model: self.model,
            train: self.train,
            milestones: self.milestones,
            state: state.clone(),
        };
        let file = self.out_dir.join(format!("checkpoint-e{}.txt", state.next_epoch));
        if let Err(e) = write_checkpoint(&file, &ck) {
            eprintln!("warning: could not write {}: {e}", file.display());
        }
        self.checkpoints_written += 1;
    }
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let manifest_path = resolve_manifest(&args.manifest)?;
    if !manifest_path.is_file() {
        return Err(usage(format!("manifest {} does not exist", manifest_path.display())));
    }
    std::fs::create_dir_all(&args.out)?;
    let workers = args.workers.unwrap_or_else(default_workers);
    let metric = MetricConfig::default();

    let (model, tcfg, milestones, mut state, prior_csv) = match &args.resume {
        Some(ck_path) => {
            let ck = read_checkpoint(ck_path)?;
            let prior = std::fs::read_to_string(args.out.join("metrics.csv")).unwrap_or_default();
            (ck.model, ck.train, ck.milestones, ck.state, prior)
        }
        None => {
            let manifest = read_manifest(&manifest_path)?;
            let (_, samples, _) = load_split(&manifest_path, true, args.points)?;
            let k_actual = samples.iter().map(|s| s.gt_segments.len()).max().unwrap_or(0);
            let n_actual = samples.iter().map(|s| s.n_paths).max().unwrap_or(0);
            let model = ModelConfig {
                input_points: args.points,
                enc_hidden: args.enc_hidden,
                feature_dim: args.feature_dim,
                dec_hidden: args.dec_hidden,
                lambda: manifest.lambda,
                segment_slots: k_actual.max(manifest.k_max),
                mask_slots: n_actual.max(manifest.n_max),
            };
            let tcfg = TrainConfig {
                learning_rate: args.lr,
                ..TrainConfig::standard(args.epochs, args.seed)
            };
            let schedule =
                CurriculumSchedule::standard(args.epochs).map_err(|e| anyhow!("{e}"))?;
            let state = TrainState::init(&model, tcfg.seed);
            (model, tcfg, schedule.milestones, state, String::new())
        }
    };

    let (_, samples, _) = load_split(&manifest_path, true, model.input_points)?;
    let mut schedule =
        CurriculumSchedule::standard(tcfg.total_epochs).map_err(|e| anyhow!("{e}"))?;
    schedule.milestones = milestones;

    println!(
        "training on {} samples: K = {}, N = {}, {} epochs, lr {}, {} workers",
        samples.len(),
        model.segment_slots,
        model.mask_slots,
        tcfg.total_epochs,
        tcfg.learning_rate,
        workers
    );

    let start_epoch = state.next_epoch;
    let mut logger = TrainLogger {
        csv: if prior_csv.is_empty() {
            format!("{METRICS_HEADER}\n")
        } else {
            prior_csv
        },
        out_dir: args.out.clone(),
        model,
        train: tcfg,
        milestones,
        checkpoints_written: 0,
    };
    let mut runner = ParallelRunner { workers };
    let t0 = Instant::now();
    state = {
        let (state, records) = train_from(
            &model, &tcfg, &schedule, &samples, state, &metric, &mut runner, &mut logger,
        )
        .map_err(|e| anyhow!("{e}"))?;
        if let Some(last) = records.last() {
            println!(
                "epochs {}..{} done in {:.1}s: loss_p2s {:.6}, loss_mask {:.6}",
                start_epoch,
                last.epoch,
                t0.elapsed().as_secs_f64(),
                last.loss_p2s,
                last.loss_mask
            );
        }
        state
    };

    write_atomic(&args.out.join("metrics.csv"), logger.csv.as_bytes())?;
    let final_ck = Checkpoint { model, train: tcfg, milestones, state };
    write_checkpoint(&args.out.join("checkpoint.txt"), &final_ck)?;
    write_config_echo(
        &args.out,
        &[
            ("command", "train".into()),
            ("manifest", manifest_path.display().to_string()),
            ("epochs", tcfg.total_epochs.to_string()),
            ("lr", g17(tcfg.learning_rate)),
            ("seed", tcfg.seed.to_string()),
            ("points", model.input_points.to_string()),
            ("k", model.segment_slots.to_string()),
            ("n", model.mask_slots.to_string()),
            ("mask_activation", tcfg.mask_activation.to_string()),
            ("milestones", format!("{} {}", milestones[0], milestones[1])),
        ],
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// infer

#[derive(Args, Debug)]
pub struct InferArgs {
    /// Trained checkpoint; not needed with --gt-oracle.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Sample directory to predict for.
    #[arg(long)]
    pub sample: PathBuf,
    /// Dataset manifest (normalization and lambda).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub knn: usize,
    #[arg(long, default_value_t = 1.0)]
    pub wv: f64,
    #[arg(long, default_value_t = 0.05)]
    pub dup_threshold: f64,
    /// Confidence threshold for keeping path masks.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Polyline simplification: on|off. Defaults to on, or off in
    /// --gt-oracle mode.
    #[arg(long)]
    pub rdp: Option<String>,
    /// Optional fixed-spacing resampling of the output paths, meters
    /// (normalized units).
    #[arg(long)]
    pub resample: Option<f64>,
    /// Run the postprocessor on ground-truth segments and labels instead of
    /// model output.
    #[arg(long, default_value_t = false)]
    pub gt_oracle: bool,
}

pub fn infer_cmd(args: &InferArgs) -> Result<()> {
    let manifest_path = resolve_manifest(&args.manifest)?;
    let manifest = read_manifest(&manifest_path)?;
    let mut sample = crate::store::read_sample(&args.sample)?;
    let gt_path_count = sample.n_paths();
    normalize_one(&mut [&mut sample], manifest.scale)?;
    let norm = sample.norm.ok_or_else(|| anyhow!("normalization record missing"))?;

    let rdp_on = match (&args.rdp, args.gt_oracle) {
        (Some(v), _) => parse_on_off(v, "rdp")?,
        (None, true) => false,
        (None, false) => true,
    };
    let pp_cfg = PostprocessConfig {
        dup_threshold: args.dup_threshold,
        direction_weight: args.wv,
        knn: args.knn,
        orientation_in_cost: false,
        rdp: if rdp_on { Some(RdpParams::default()) } else { None },
        resample_spacing: args.resample,
        metric: MetricConfig::default(),
    };

    let (forward_ms, post_ms, n_masks, paths) = if args.gt_oracle {
        let gt = extract_segments(&sample.paths, manifest.lambda).map_err(|e| anyhow!("{e}"))?;
        let ids: Vec<usize> = gt.path_ids().unwrap().to_vec();
        let t0 = Instant::now();
        let rebuilt = postprocess_all(&gt, &ids, &pp_cfg).map_err(|e| anyhow!("{e}"))?;
        let post_ms = t0.elapsed().as_secs_f64() * 1e3;
        (0.0, post_ms, gt_path_count, rebuilt.into_iter().map(|(_, p)| p).collect::<Vec<_>>())
    } else {
        let ck_path = args
            .checkpoint
            .as_ref()
            .ok_or_else(|| usage("--checkpoint required unless --gt-oracle is set"))?;
        let ck = read_checkpoint(ck_path)?;
        let cloud = fit_cloud(&sample.point_cloud, ck.model.input_points);
        let t0 = Instant::now();
        let result =
            infer(&ck.model, &ck.state.params, &cloud, args.threshold).map_err(|e| anyhow!("{e}"))?;
        let forward_ms = t0.elapsed().as_secs_f64() * 1e3;
        let t1 = Instant::now();
        let (n_masks, paths) = match &result.assignment {
            None => {
                eprintln!("empty prediction: no mask reached confidence {}", args.threshold);
                (0, Vec::new())
            }
            Some(assign) => {
                let rebuilt = postprocess_all(&result.segments, &assign.mask_of_segment, &pp_cfg)
                    .map_err(|e| anyhow!("{e}"))?;
                (assign.n_paths, rebuilt.into_iter().map(|(_, p)| p).collect())
            }
        };
        let post_ms = t1.elapsed().as_secs_f64() * 1e3;
        (forward_ms, post_ms, n_masks, paths)
    };

    // back to raw units for the interchange file
    let denorm_paths: Vec<Path> = paths
        .iter()
        .map(|p| {
            Path::new(
                p.poses()
                    .iter()
                    .map(|pose| Pose {
                        position: pose.position * norm.scale + norm.centroid,
                        orientation: pose.orientation,
                    })
                    .collect(),
            )
            .map_err(|e| anyhow!("{e}"))
        })
        .collect::<Result<_>>()?;

    std::fs::create_dir_all(&args.out)?;
    write_paths(&args.out.join("paths.txt"), &denorm_paths)?;
    let report = format!(
        "forward_ms {forward_ms:.3}\npostprocess_ms {post_ms:.3}\nn_masks {n_masks}\nn_paths {}\n",
        denorm_paths.len()
    );
    write_atomic(&args.out.join("report.txt"), report.as_bytes())?;
    write_config_echo(
        &args.out,
        &[
            ("command", "infer".into()),
            ("sample", args.sample.display().to_string()),
            ("gt_oracle", args.gt_oracle.to_string()),
            ("knn", args.knn.to_string()),
            ("wv", g17(args.wv)),
            ("dup_threshold", g17(args.dup_threshold)),
            ("rdp", if rdp_on { "on".into() } else { "off".into() }),
            ("threshold", g17(args.threshold)),
        ],
    )?;
    println!(
        "{} paths ({} masks), forward {forward_ms:.1} ms, postprocess {post_ms:.1} ms",
        denorm_paths.len(),
        n_masks
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Directory holding one `<id>/paths.txt` per evaluated sample.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Occlusion ray test in the paint simulator: on|off.
    #[arg(long, default_value = "on")]
    pub occlusion: String,
    /// Which split to evaluate: test (default) or train.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub workers: Option<usize>,
}

struct SampleScores {
    id: String,
    pcd: f64,
    n_pred: usize,
    n_gt: usize,
    coverage: f64,
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let occlusion = parse_on_off(&args.occlusion, "occlusion")?;
    let train_split = match args.split.as_str() {
        "test" => false,
        "train" => true,
        other => return Err(usage(format!("--split takes test|train, got {other:?}"))),
    };
    let manifest_path = resolve_manifest(&args.manifest)?;
    let manifest = read_manifest(&manifest_path)?;
    let root = manifest_path.parent().unwrap_or_else(|| FsPath::new("."));
    let entries: Vec<&ManifestEntry> =
        manifest.entries.iter().filter(|e| e.train == train_split).collect();
    if entries.is_empty() {
        bail!("manifest has no {} samples", args.split);
    }

    let missing: Vec<&str> = entries
        .iter()
        .filter(|e| !args.pred.join(&e.id).join("paths.txt").is_file())
        .map(|e| e.id.as_str())
        .collect();
    if !missing.is_empty() {
        bail!("predictions missing for sample ids: {}", missing.join(", "));
    }

    let workers = args.workers.unwrap_or_else(default_workers);
    let metric = MetricConfig::default();
    let gun = GunModel::default();
    let scored: Vec<Result<SampleScores>> = run_ordered(&entries, workers, |_, entry| {
        let raw = load_entry_sample(root, entry)?;
        let pred_paths = read_paths(&args.pred.join(&entry.id).join("paths.txt"))?;
        let mesh = raw
            .mesh
            .as_ref()
            .ok_or_else(|| anyhow!("sample {} has no mesh for coverage", entry.id))?;

        let gt_raw_points = path_points(&raw.paths);
        let pred_raw_points = path_points(&pred_paths);
        let coverage =
            paint_coverage(mesh, &gt_raw_points, &pred_raw_points, &gun, occlusion)
                .map_err(|e| anyhow!("{e}"))?
                .percentage;

        let mut norm_sample = raw.clone();
        normalize_one(&mut [&mut norm_sample], manifest.scale)?;
        let rec = norm_sample.norm.unwrap();
        let gt_points = path_points(&norm_sample.paths);
        let pred_points: Vec<Pose> = pred_raw_points
            .iter()
            .map(|p| Pose {
                position: (p.position - rec.centroid) * (1.0 / rec.scale),
                orientation: p.orientation,
            })
            .collect();
        let pcd = metric_pcd(&[(pred_points, gt_points)], &metric).map_err(|e| anyhow!("{e}"))?;
        Ok(SampleScores {
            id: entry.id.clone(),
            pcd,
            n_pred: pred_paths.len(),
            n_gt: raw.n_paths(),
            coverage,
        })
    });
    let mut rows = Vec::with_capacity(scored.len());
    for r in scored {
        rows.push(r?);
    }

    let pcd_mean: f64 = rows.iter().map(|r| r.pcd).sum::<f64>() / rows.len() as f64;
    let (acc, mae) = nop_metrics(
        &rows.iter().map(|r| r.n_pred).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.n_gt).collect::<Vec<_>>(),
    )
    .map_err(|e| anyhow!("{e}"))?;
    let cov_mean: f64 = rows.iter().map(|r| r.coverage).sum::<f64>() / rows.len() as f64;

    let mut csv = String::from("id,pcd,n_pred,n_gt,coverage\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.id,
            g17(r.pcd),
            r.n_pred,
            r.n_gt,
            g17(r.coverage)
        ));
    }
    csv.push_str(&format!("mean,{},,,{}\n", g17(pcd_mean), g17(cov_mean)));
    std::fs::create_dir_all(&args.out)?;
    write_atomic(&args.out.join("metrics.csv"), csv.as_bytes())?;
    write_config_echo(
        &args.out,
        &[
            ("command", "evaluate".into()),
            ("manifest", manifest_path.display().to_string()),
            ("pred", args.pred.display().to_string()),
            ("occlusion", args.occlusion.clone()),
            ("split", args.split.clone()),
        ],
    )?;

    println!("{:<8} {:>12} {:>7} {:>6} {:>10}", "id", "pcd", "n_pred", "n_gt", "coverage");
    for r in &rows {
        println!(
            "{:<8} {:>12.6} {:>7} {:>6} {:>9.2}%",
            r.id, r.pcd, r.n_pred, r.n_gt, r.coverage
        );
    }
    println!(
        "mean     PCD {pcd_mean:.6}  Acc-NoP {acc:.3}  MAE-NoP {mae:.3}  coverage {cov_mean:.2}%"
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// plot

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Sample directory (paths, mesh).
    #[arg(long)]
    pub sample: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Plot this predicted paths file instead of the sample's own paths.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Also write a vertex-colored coverage mesh.
    #[arg(long, default_value_t = false)]
    pub coverage: bool,
    #[arg(long, default_value = "on")]
    pub occlusion: String,
}

pub fn plot(args: &PlotArgs) -> Result<()> {
    let occlusion = parse_on_off(&args.occlusion, "occlusion")?;
    let sample = crate::store::read_sample(&args.sample)?;
    let paths = match &args.pred {
        Some(f) => read_paths(f)?,
        None => sample.paths.clone(),
    };
    std::fs::create_dir_all(&args.out)?;
    for proj in Projection::ALL {
        render_paths(&args.out.join(format!("paths-{}.svg", proj.name())), &paths, proj)?;
    }
    if args.coverage {
        let mesh = sample
            .mesh
            .as_ref()
            .ok_or_else(|| anyhow!("sample has no mesh; cannot plot coverage"))?;
        let gun = GunModel::default();
        let gt_points = path_points(&sample.paths);
        let pred_points = path_points(&paths);
        let report = paint_coverage(mesh, &gt_points, &pred_points, &gun, occlusion)
            .map_err(|e| anyhow!("{e}"))?;
        write_coverage_mesh(
            &args.out.join("coverage.obj"),
            mesh,
            &report.pred_field,
            report.threshold,
        )?;
        let mut csv = String::from("face_index,thickness\n");
        for (f, t) in report.pred_field.per_face.iter().enumerate() {
            csv.push_str(&format!("{f},{}\n", g17(*t)));
        }
        write_atomic(&args.out.join("thickness.csv"), csv.as_bytes())?;
        println!("coverage {:.2}% (threshold {:.6})", report.percentage, report.threshold);
    }
    write_config_echo(
        &args.out,
        &[
            ("command", "plot".into()),
            ("sample", args.sample.display().to_string()),
            (
                "pred",
                args.pred.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "-".into()),
            ),
            ("coverage", args.coverage.to_string()),
        ],
    )?;
    Ok(())
}

/// Quick self-check used by tests: simulate a sample's own paths.
pub fn coverage_of_sample(sample: &ObjectSample, occlusion: bool) -> Result<f64> {
    let mesh = sample.mesh.as_ref().ok_or_else(|| anyhow!("no mesh"))?;
    let pts = path_points(&sample.paths);
    let report = paint_coverage(mesh, &pts, &pts, &GunModel::default(), occlusion)
        .map_err(|e| anyhow!("{e}"))?;
    let _ = simulate_paint(mesh, &pts, &GunModel::default(), occlusion);
    Ok(report.percentage)
}
