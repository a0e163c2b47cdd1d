use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use log::info;
use serde::Serialize;
use serde_json::json;

use liftpose::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointStatus};
use liftpose::config::RunConfig;
use liftpose::data::{self, insert_root, sample_input, sample_pose, Dataset, Skeleton, TargetFrame};
use liftpose::eval::{
    self, evaluate_oracle, evaluate_with_frames, frame_error, frame_sse, predict_mm, EvalOptions, Protocol, Variant,
};
use liftpose::geometry::NormStats;
use liftpose::gradcheck::{self as gc, GradcheckOptions};
use liftpose::model::Network;
use liftpose::optim::{self, StepLog, TrainObserver};
use liftpose::pipeline::setup_training;
use liftpose::{Error, Matrix, Result, Rng};

use crate::{ModelFlags, RunFlags};

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    write_text(path, &(text + "\n"))
}

/// Loads the dataset filtered to the configured actions, split by subject
/// into `(train, test)`.
fn load_split(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let mut ds = data::load(&cfg.dataset, &cfg.cameras)?;
    if !cfg.actions.is_empty() {
        ds = ds.filter_actions(&cfg.actions);
    }
    data::split(&ds, &cfg.train_subjects, &cfg.test_subjects)
}

/// The target frame a checkpoint was trained with.
fn checkpoint_frame(ckpt: &Checkpoint) -> TargetFrame {
    serde_json::from_value::<RunConfig>(ckpt.run.clone())
        .map(|r| r.target_frame)
        .unwrap_or_default()
}

fn default_checkpoint(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("model.ckpt")
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    run: RunFlags,
    /// Number of frames (one camera view each).
    #[arg(long, default_value_t = 50_000)]
    frames: usize,
    /// Number of cameras on the ring.
    #[arg(long, default_value_t = 4)]
    cameras: usize,
    /// Overwrite existing files.
    #[arg(long)]
    force: bool,
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let cfg = a.run.resolve(None)?;
    if a.frames == 0 {
        return Err(Error::Argument("--frames must be at least 1".into()));
    }
    for p in [&cfg.dataset, &cfg.cameras] {
        if p.exists() && !a.force {
            return Err(Error::Argument(format!(
                "{} already exists; pass --force to overwrite",
                p.display()
            )));
        }
        if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
    }
    let skeleton = Skeleton::h36m17();
    let ds = data::synth_generate(&skeleton, a.frames, a.cameras, &mut Rng::new(cfg.seed))?;
    data::save(&ds, &cfg.dataset, &cfg.cameras)?;
    println!(
        "wrote {} frames, {} joints ({} observed in 2d), {} cameras, {} subjects, {} actions",
        ds.len(),
        skeleton.n_joints(),
        skeleton.n_input_joints(),
        ds.cameras.len(),
        ds.subjects().len(),
        ds.actions().len()
    );
    println!("dataset: {}\ncameras: {}", cfg.dataset.display(), cfg.cameras.display());
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    run: RunFlags,
    #[command(flatten)]
    model: ModelFlags,
}

struct TrainLogger<'a> {
    log: BufWriter<std::fs::File>,
    log_path: PathBuf,
    stats: &'a NormStats,
    run: serde_json::Value,
    checkpoint_dir: PathBuf,
    checkpoint_every: usize,
    last_step: u64,
    epoch_loss: f64,
    epoch_steps: usize,
    started: Instant,
}

impl TrainObserver for TrainLogger<'_> {
    fn on_step(&mut self, l: &StepLog, _net: &Network) -> Result<()> {
        writeln!(self.log, "{} {} {}", l.step, l.lr, l.loss).map_err(|e| Error::io(&self.log_path, e))?;
        self.last_step = l.step;
        self.epoch_loss += l.loss;
        self.epoch_steps += 1;
        Ok(())
    }

    fn on_epoch_end(&mut self, epoch: usize, net: &Network) -> Result<()> {
        info!(
            "epoch {epoch}: mean loss {:.6}, {:.0}s elapsed",
            self.epoch_loss / self.epoch_steps.max(1) as f64,
            self.started.elapsed().as_secs_f64()
        );
        self.epoch_loss = 0.0;
        self.epoch_steps = 0;
        if self.checkpoint_every > 0 && epoch.is_multiple_of(self.checkpoint_every) {
            create_dir(&self.checkpoint_dir)?;
            let path = self.checkpoint_dir.join(format!("epoch-{epoch:04}.ckpt"));
            save_checkpoint(
                &path,
                net,
                self.stats,
                &self.run,
                CheckpointStatus::Complete,
                epoch,
                self.last_step + 1,
            )?;
        }
        Ok(())
    }
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = a.run.resolve(Some(&a.model))?;
    let (train_ds, _) = load_split(&cfg)?;
    info!("training on {} frames from {:?}", train_ds.len(), cfg.train_subjects);
    let mut setup = setup_training(&train_ds, cfg.target_frame, &cfg.network, cfg.seed)?;
    info!("{} trainable parameters", setup.net.param_count());

    create_dir(&cfg.output_dir)?;
    write_text(&cfg.output_dir.join("config.toml"), &cfg.to_toml())?;
    let log_path = cfg.output_dir.join("loss.log");
    let file = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let run = cfg.to_json();
    let stats = setup.stats.clone();
    let mut logger = TrainLogger {
        log: BufWriter::new(file),
        log_path: log_path.clone(),
        stats: &stats,
        run: run.clone(),
        checkpoint_dir: cfg.output_dir.join("checkpoints"),
        checkpoint_every: cfg.checkpoint_every,
        last_step: 0,
        epoch_loss: 0.0,
        epoch_steps: 0,
        started: Instant::now(),
    };
    let result = optim::train(&mut setup.net, &setup.x, &setup.y, &cfg.train, &mut logger);
    logger.log.flush().map_err(|e| Error::io(&log_path, e))?;
    match result {
        Ok(outcome) => {
            let path = default_checkpoint(&cfg);
            let steps = outcome.history.len() as u64;
            let fp = save_checkpoint(
                &path,
                &setup.net,
                &stats,
                &run,
                CheckpointStatus::Complete,
                cfg.train.epochs,
                steps,
            )?;
            let last = outcome.history.last().map_or(f64::NAN, |l| l.loss);
            println!("trained {steps} steps, final loss {last:.6}");
            println!("checkpoint: {} (fingerprint {fp})", path.display());
            Ok(())
        }
        Err(e @ Error::Numeric(_)) => {
            let path = cfg.output_dir.join("model.partial.ckpt");
            save_checkpoint(
                &path,
                &setup.net,
                &stats,
                &run,
                CheckpointStatus::Partial,
                0,
                logger.last_step,
            )?;
            eprintln!("training aborted; partial checkpoint written to {}", path.display());
            Err(e)
        }
        Err(e) => Err(e),
    }
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    run: RunFlags,
    /// Checkpoint to evaluate (default: <output-dir>/model.ckpt).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// 1 = root-aligned, 2 = rigidly aligned.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    protocol: u8,
    /// Score the ground truth against itself instead of a model.
    #[arg(long)]
    oracle: bool,
    /// Also assert per-frame protocol-2 SSE never exceeds protocol-1 SSE.
    #[arg(long)]
    verify: bool,
    /// Align with a similarity transform (rotation, translation and scale).
    #[arg(long)]
    with_scale: bool,
    /// Report path (default: <output-dir>/eval-p<N>.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let cfg = a.run.resolve(None)?;
    let (_, test) = load_split(&cfg)?;
    if test.is_empty() {
        return Err(Error::Argument(format!(
            "no test frames for subjects {:?}",
            cfg.test_subjects
        )));
    }
    let mut opts = EvalOptions {
        protocol: Protocol::try_from(a.protocol)?,
        include_root: cfg.include_root,
        with_scale: a.with_scale,
        target_frame: cfg.target_frame,
    };
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join(format!("eval-p{}.json", a.protocol)));

    let (report, per_frame, ckpt_path, fp) = if a.oracle {
        let r = evaluate_oracle(&test, &opts)?;
        (r, None, None, "oracle".to_string())
    } else {
        let path = a.checkpoint.clone().unwrap_or_else(|| default_checkpoint(&cfg));
        let ckpt = load_checkpoint(&path)?;
        if ckpt.meta.status == CheckpointStatus::Partial {
            log::warn!("{} is a partial checkpoint from an aborted run", path.display());
        }
        opts.target_frame = checkpoint_frame(&ckpt);
        let (r, frames) = evaluate_with_frames(&ckpt.network, &test, &ckpt.stats, &opts)?;
        if a.verify {
            verify_sse(&ckpt, &test, &opts)?;
        }
        (r, Some(frames), Some(path), ckpt.meta.fingerprint)
    };
    print!("{}", report.to_table());
    println!("frames: {}  fingerprint: {}", report.n_frames, report.fingerprint);
    write_json(
        &out,
        &json!({
            "command": "eval",
            "run": cfg,
            "checkpoint": ckpt_path,
            "checkpoint_fingerprint": fp,
            "report": report,
            "per_frame": per_frame,
        }),
    )?;
    write_text(&out.with_extension("txt"), &report.to_table())?;
    Ok(())
}

fn verify_sse(ckpt: &Checkpoint, test: &Dataset, opts: &EvalOptions) -> Result<()> {
    let pairs = data::prepare_pairs(test, opts.target_frame)?;
    let pred = predict_mm(&ckpt.network, &ckpt.stats, &pairs.x2d)?;
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for i in 0..pred.rows() {
        let (p1, p2) = frame_sse(&test.skeleton, pred.row(i), pairs.y3d.row(i), opts)?;
        if p2 > p1 {
            violations += 1;
            worst = worst.max(p2 - p1);
        }
    }
    println!(
        "verify: {violations} of {} frames with protocol-2 SSE above protocol-1 SSE",
        pred.rows()
    );
    if violations > 0 {
        return Err(Error::Numeric(format!(
            "rigid alignment increased the error on {violations} frames (worst by {worst:e})"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct NoiseSweepArgs {
    #[command(flatten)]
    run: RunFlags,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Noise standard deviations in pixels.
    #[arg(long, value_delimiter = ',', default_value = "0,5,10,15,20")]
    sigmas: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn noise_sweep(a: &NoiseSweepArgs) -> Result<()> {
    let cfg = a.run.resolve(None)?;
    let (_, test) = load_split(&cfg)?;
    let path = a.checkpoint.clone().unwrap_or_else(|| default_checkpoint(&cfg));
    let ckpt = load_checkpoint(&path)?;
    let opts = EvalOptions {
        include_root: cfg.include_root,
        target_frame: checkpoint_frame(&ckpt),
        ..EvalOptions::default()
    };
    let mut rng = Rng::new(cfg.seed).child(0x401e);
    let sweep = eval::noise_sweep(&ckpt.network, &test, &ckpt.stats, &a.sigmas, &mut rng, &opts)?;
    print!("{}", sweep.to_table());
    if !sweep.is_nondecreasing() {
        log::warn!("error is not monotone in sigma");
    }
    let out = a.out.clone().unwrap_or_else(|| cfg.output_dir.join("noise-sweep.json"));
    write_json(
        &out,
        &json!({"command": "noise-sweep", "run": cfg, "checkpoint": path, "sweep": sweep}),
    )?;
    write_text(&out.with_extension("txt"), &sweep.to_table())
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    run: RunFlags,
    #[command(flatten)]
    model: ModelFlags,
    /// Variants to train (default: the full standard list).
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<String>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let cfg = a.run.resolve(Some(&a.model))?;
    let variants = match &a.variants {
        Some(v) => eval::parse_variants(v)?,
        None => Variant::standard(),
    };
    let (train_ds, test_ds) = load_split(&cfg)?;
    let table = eval::ablate(
        &cfg.network,
        &cfg.train,
        cfg.seed,
        &train_ds,
        &test_ds,
        &variants,
        &mut |r| info!("{}: {:.2} mm ({:+.1}%)", r.variant, r.mpjpe, r.delta_pct),
    )?;
    print!("{}", table.to_table());
    let out = a.out.clone().unwrap_or_else(|| cfg.output_dir.join("ablation.json"));
    write_json(&out, &json!({"command": "ablate", "run": cfg, "table": table}))?;
    write_text(&out.with_extension("txt"), &table.to_table())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitChoice {
    Train,
    Test,
    All,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    run: RunFlags,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Which frames `--index` counts into.
    #[arg(long, value_enum, default_value = "test")]
    split: SplitChoice,
    /// First frame to predict.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write skeleton plot data (joint coordinates and bone list).
    #[arg(long)]
    plot: Option<PathBuf>,
}

fn rows3(m: &Matrix) -> Vec<[f64; 3]> {
    m.row_iter().map(|r| [r[0], r[1], r[2]]).collect()
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let cfg = a.run.resolve(None)?;
    let path = a.checkpoint.clone().unwrap_or_else(|| default_checkpoint(&cfg));
    let ckpt = load_checkpoint(&path)?;
    let (train_ds, test_ds) = load_split(&cfg)?;
    let ds = match a.split {
        SplitChoice::Train => train_ds,
        SplitChoice::Test => test_ds,
        SplitChoice::All => {
            let mut all = data::load(&cfg.dataset, &cfg.cameras)?;
            if !cfg.actions.is_empty() {
                all = all.filter_actions(&cfg.actions);
            }
            all
        }
    };
    let end = a.index.checked_add(a.count).filter(|&e| e <= ds.len()).ok_or_else(|| {
        Error::Argument(format!(
            "frames {}..{} out of range for {} frames",
            a.index,
            a.index.saturating_add(a.count),
            ds.len()
        ))
    })?;
    let sk = &ds.skeleton;
    eval::check_compatible(&ckpt.network, &ckpt.stats, sk)?;
    let frame = checkpoint_frame(&ckpt);
    let opts = EvalOptions {
        include_root: cfg.include_root,
        target_frame: frame,
        ..EvalOptions::default()
    };
    let mut frames = Vec::new();
    let mut plot_frames = Vec::new();
    for i in a.index..end {
        let s = &ds.samples[i];
        let cam = ds
            .camera(&s.camera_id)
            .ok_or_else(|| Error::Schema(format!("unknown camera ids: {}", s.camera_id)))?;
        let x = Matrix::row_vector(&sample_input(sk, s, cam)?);
        let pred_flat = predict_mm(&ckpt.network, &ckpt.stats, &x)?;
        let pred = insert_root(sk, pred_flat.row(0))?;
        let gt = sample_pose(sk, s, cam, frame)?;
        let gt_flat = data::drop_root(sk, &gt);
        let err = frame_error(sk, pred_flat.row(0), &gt_flat, &opts)?;
        frames.push(json!({
            "index": i,
            "subject": s.subject,
            "action": s.action,
            "camera": s.camera_id,
            "frame": s.frame,
            "pred": rows3(&pred),
            "gt": rows3(&gt),
            "mpjpe_p1": err,
        }));
        plot_frames.push(json!({"index": i, "pred": rows3(&pred), "gt": rows3(&gt)}));
        println!("frame {i} ({} {} {}): {err:.3} mm", s.subject, s.action, s.camera_id);
    }
    let out = a.out.clone().unwrap_or_else(|| cfg.output_dir.join("predictions.json"));
    write_json(
        &out,
        &json!({
            "command": "predict",
            "run": cfg,
            "checkpoint": path,
            "checkpoint_fingerprint": ckpt.meta.fingerprint,
            "target_frame": frame,
            "joints": sk.names,
            "frames": frames,
        }),
    )?;
    if let Some(plot) = &a.plot {
        write_json(
            plot,
            &json!({
                "units": "mm",
                "joints": sk.names,
                "edges": sk.edges(),
                "frames": plot_frames,
            }),
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    hidden: usize,
    #[arg(long, default_value_t = 1)]
    blocks: usize,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    threshold: f64,
    /// Also write the full report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    let opts = GradcheckOptions {
        hidden_dim: a.hidden,
        n_blocks: a.blocks,
        batch: a.batch,
        seed: a.seed,
        step: a.step,
        threshold: a.threshold,
        ..GradcheckOptions::default()
    };
    let report = gc::gradcheck(&opts)?;
    let mut by_type: Vec<(String, f64)> = Vec::new();
    for e in &report.entries {
        let kind = match e.name.strip_prefix("network:") {
            Some(rest) => format!("network {}", rest.rsplit('.').next().unwrap_or(rest)),
            None => e.name.clone(),
        };
        match by_type.iter_mut().find(|(k, _)| *k == kind) {
            Some((_, m)) => *m = m.max(e.max_rel_error),
            None => by_type.push((kind, e.max_rel_error)),
        }
    }
    println!("{:<24} {:>14}", "layer", "max rel error");
    for (k, m) in &by_type {
        println!("{k:<24} {m:>14.3e}");
    }
    let worst = report.max_rel_error();
    println!(
        "overall max relative error {worst:.3e} (threshold {:e})",
        report.threshold
    );
    if let Some(out) = &a.out {
        write_json(out, &json!({"command": "gradcheck", "options": opts, "report": report}))?;
    }
    if !report.passed() {
        return Err(Error::Numeric(format!(
            "gradient check failed: max relative error {worst:e} >= {:e}",
            report.threshold
        )));
    }
    Ok(())
}
