//! Command-line front end: `generate`, `train`, `reconstruct`, `evaluate`.
//!
//! Every command resolves its parameters as defaults, then `--config`, then
//! flags, then `--set key=value`, and writes the resolved set to
//! `config.txt` in its output directory. Feeding that file back through
//! `--config` repeats the run.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::geometry::io;
use crate::kv::KvDoc;
use crate::pipeline::{
    evaluate_checkpoint, evaluate_ground_truth, run_color_stage, run_implicit_stage, run_voxel_stage, Checkpoint, Clip,
    FrameReport, TrainConfig,
};
use crate::synthgen::{export_dataset, generate_sequence, load_dataset, SequenceSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Default output root when `-o` is not given.
pub const OUTPUT_ROOT_ENV: &str = "TRECON_OUTPUT_ROOT";
pub const SNAPSHOT_NAME: &str = "config.txt";
pub const METRICS_HEADER: &str = "frame,chamfer_cm,iou,flicker_occ,flicker_color";

#[derive(Parser, Debug)]
#[command(name = "trecon", version, about = "Synthetic bodies, temporally consistent training and reconstruction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic sequence dataset.
    Generate(GenerateArgs),
    /// Train one stage, or all of them in cascade order.
    Train(TrainArgs),
    /// Reconstruct textured meshes for every clip frame.
    Reconstruct(ReconArgs),
    /// Score reconstructions against the ground truth.
    Evaluate(EvalArgs),
}

#[derive(Args, Debug, Default)]
pub struct Common {
    /// key=value file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Extra `key=value` overrides applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    /// Voxel grid cells per axis.
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Square image side in pixels.
    #[arg(long)]
    pub image_size: Option<usize>,
    /// per-region, two-tone or uniform.
    #[arg(long)]
    pub palette: Option<String>,
    /// Camera orbit in degrees per frame.
    #[arg(long)]
    pub orbit: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Voxel,
    Implicit,
    Color,
    All,
}

impl Stage {
    fn tag(self) -> &'static str {
        match self {
            Stage::Voxel => "voxel",
            Stage::Implicit => "implicit",
            Stage::Color => "color",
            Stage::All => "all",
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    pub stage: Stage,
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory or manifest.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint holding the earlier stages; defaults to the output directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Required, here or in the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Clip length N.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Learning rate of the trained stage(s).
    #[arg(long)]
    pub lr: Option<f64>,
    /// Optimization steps of the trained stage(s).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Clip frame whose supervision is partly withheld.
    #[arg(long)]
    pub occlude_frame: Option<usize>,
    /// Condition the decoders on ground-truth grids.
    #[arg(long)]
    pub teacher_forcing: bool,
}

#[derive(Args, Debug)]
pub struct ReconArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Evaluation grid cells per axis; defaults to eval_factor times the voxel resolution.
    #[arg(long)]
    pub eval_resolution: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub eval_resolution: Option<usize>,
    /// Score the ground truth against itself.
    #[arg(long)]
    pub gt_as_prediction: bool,
    /// Frames scored with --gt-as-prediction.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical { .. } => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate(a) => cmd_generate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Reconstruct(a) => cmd_reconstruct(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
    }
}

/// Config file, then `flags`, then `--set`.
fn layered(common: &Common, flags: KvDoc) -> Result<KvDoc> {
    let mut doc = match &common.config {
        Some(p) => KvDoc::load(p)?,
        None => KvDoc::new(),
    };
    doc.merge(&flags);
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("--set expects KEY=VALUE, got `{s}`")))?;
        doc.set(k.trim(), v.trim());
    }
    Ok(doc)
}

fn check_command(doc: &KvDoc, command: &str, stage: Option<&str>) -> Result<()> {
    if let Some(c) = doc.get("command") {
        if c != command {
            return Err(Error::invalid(format!("config is for `{c}`, not `{command}`")));
        }
    }
    if let (Some(s), Some(want)) = (doc.get("stage"), stage) {
        if s != want {
            return Err(Error::invalid(format!("config is for stage `{s}`, not `{want}`")));
        }
    }
    Ok(())
}

fn output_dir(common: &Common, doc: &KvDoc, name: &str) -> PathBuf {
    if let Some(o) = &common.output {
        return o.clone();
    }
    if let Some(o) = doc.get("output") {
        return PathBuf::from(o);
    }
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("trecon-out"))
        .join(name)
}

fn require_path(doc: &KvDoc, key: &str) -> Result<PathBuf> {
    doc.get(key)
        .map(PathBuf::from)
        .ok_or_else(|| Error::invalid(format!("--{key} is required")))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// The output directory is left out so the snapshot reproduces itself.
fn write_snapshot(dir: &Path, header: &[(&str, String)], body: &KvDoc) -> Result<()> {
    let mut doc = KvDoc::new();
    for (k, v) in header {
        doc.set(*k, v);
    }
    doc.merge(body);
    doc.save(&dir.join(SNAPSHOT_NAME))
}

fn set_opt<T: std::fmt::Display>(doc: &mut KvDoc, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        doc.set(key, v);
    }
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let mut flags = KvDoc::new();
    set_opt(&mut flags, "frame_count", &a.frames);
    set_opt(&mut flags, "seed", &a.seed);
    set_opt(&mut flags, "amplitude", &a.amplitude);
    set_opt(&mut flags, "voxel_resolution", &a.resolution);
    set_opt(&mut flags, "image_width", &a.image_size);
    set_opt(&mut flags, "image_height", &a.image_size);
    set_opt(&mut flags, "palette", &a.palette);
    set_opt(&mut flags, "camera.orbit_deg_per_frame", &a.orbit);
    let doc = layered(&a.common, flags)?;
    check_command(&doc, "generate", None)?;
    let spec = SequenceSpec::from_kv(&doc, a.common.config.as_deref().unwrap_or(Path::new("<flags>")))?;
    let out = output_dir(&a.common, &doc, "data");
    let seq = generate_sequence(&spec)?;
    let manifest = export_dataset(&seq, &out)?;
    write_snapshot(&out, &[("command", "generate".into())], &spec.to_kv())?;
    eprintln!("wrote {} frames to {}", seq.len(), manifest.display());
    Ok(())
}

fn train_config(a: &TrainArgs, doc: &KvDoc) -> Result<TrainConfig> {
    if doc.get("seed").is_none() {
        return Err(Error::invalid("--seed is required for training"));
    }
    let cfg = TrainConfig::from_kv(doc, a.common.config.as_deref().unwrap_or(Path::new("<flags>")))?;
    Ok(cfg)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut flags = KvDoc::new();
    set_opt(&mut flags, "data", &a.data.as_ref().map(|p| p.display().to_string()));
    set_opt(&mut flags, "checkpoint", &a.checkpoint.as_ref().map(|p| p.display().to_string()));
    set_opt(&mut flags, "seed", &a.seed);
    set_opt(&mut flags, "frames", &a.frames);
    set_opt(&mut flags, "lambda", &a.lambda);
    set_opt(&mut flags, "mu", &a.mu);
    set_opt(&mut flags, "gamma", &a.gamma);
    set_opt(&mut flags, "occlude_frame", &a.occlude_frame);
    if a.teacher_forcing {
        flags.set("teacher_forcing", true);
    }
    let stages: &[&str] = match a.stage {
        Stage::Voxel => &["voxel"],
        Stage::Implicit => &["implicit"],
        Stage::Color => &["color"],
        Stage::All => &["voxel", "implicit", "color"],
    };
    for s in stages {
        set_opt(&mut flags, &format!("{s}_lr"), &a.lr);
        set_opt(&mut flags, &format!("{s}_steps"), &a.steps);
    }
    let doc = layered(&a.common, flags)?;
    check_command(&doc, "train", Some(a.stage.tag()))?;
    let cfg = train_config(a, &doc)?;
    let data = require_path(&doc, "data")?;
    let out = output_dir(&a.common, &doc, "run");
    let seq = load_dataset(&data)?;
    let clip = Clip::new(&seq, &cfg)?;

    let mut ckpt = match a.stage {
        Stage::Voxel | Stage::All => Checkpoint::new(cfg.clone()),
        _ => {
            let from = doc.get("checkpoint").map_or_else(|| out.clone(), PathBuf::from);
            let mut c = Checkpoint::load(&from)?;
            if c.config.frames != cfg.frames {
                return Err(Error::shape(format!(
                    "checkpoint clip has {} frames, config asks for {}",
                    c.config.frames, cfg.frames
                )));
            }
            c.config = cfg.clone();
            c
        }
    };
    create_dir(&out)?;
    let mut summary = KvDoc::new();
    if matches!(a.stage, Stage::Voxel | Stage::All) {
        let v = run_voxel_stage(&seq, &clip, &cfg)?;
        let mut csv = String::from("step,bce,temporal,total\n");
        for r in &v.history {
            let _ = writeln!(csv, "{},{},{},{}", r.step, r.bce, r.temporal, r.total);
        }
        write_text(&out.join("voxel_loss.csv"), &csv)?;
        for (k, &f) in clip.frames.iter().enumerate() {
            let iou = crate::geometry::voxel_iou(&v.predictor.binary(k), &seq.frames[f].gt_voxels)?;
            summary.set(format!("voxel.iou.{f:04}"), iou);
        }
        ckpt.predictor = Some(v.predictor);
        ckpt.occupancy = None;
        ckpt.color = None;
    }
    if matches!(a.stage, Stage::Implicit | Stage::All) {
        let predictor = ckpt
            .predictor
            .as_ref()
            .ok_or_else(|| Error::invalid("the implicit stage needs a trained voxel stage"))?;
        let o = run_implicit_stage(&seq, &clip, predictor, &cfg)?;
        let mut csv = String::from("step,mse\n");
        for (i, l) in o.history.iter().enumerate() {
            let _ = writeln!(csv, "{i},{l}");
        }
        write_text(&out.join("implicit_loss.csv"), &csv)?;
        summary.set("implicit.heldout_accuracy", o.heldout_accuracy);
        summary.set("implicit.heldout_count", o.heldout_count);
        ckpt.occupancy = Some(o.decoder);
        ckpt.color = None;
    }
    if matches!(a.stage, Stage::Color | Stage::All) {
        let (predictor, occupancy) = match (&ckpt.predictor, &ckpt.occupancy) {
            (Some(p), Some(o)) => (p, o),
            _ => return Err(Error::invalid("the color stage needs trained voxel and implicit stages")),
        };
        let o = run_color_stage(&seq, &clip, predictor, occupancy, &cfg)?;
        let mut csv = String::from("step,l1,temporal,total\n");
        for r in &o.history {
            let _ = writeln!(csv, "{},{},{},{}", r.step, r.l1, r.temporal, r.total);
        }
        write_text(&out.join("color_loss.csv"), &csv)?;
        summary.set("color.heldout_mae", o.heldout_mae);
        ckpt.color = Some(o.decoder);
    }
    ckpt.save(&out)?;
    summary.save(&out.join("summary.txt"))?;
    let mut header = vec![
        ("command", "train".to_string()),
        ("stage", a.stage.tag().to_string()),
        ("data", data.display().to_string()),
    ];
    if let Some(c) = doc.get("checkpoint") {
        header.push(("checkpoint", c.to_string()));
    }
    write_snapshot(&out, &header, &cfg.to_kv())?;
    for (k, v) in summary.iter() {
        eprintln!("{k} = {v}");
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn eval_resolution(flag: Option<usize>, doc: &KvDoc, cfg: &TrainConfig, voxel_res: usize) -> Result<usize> {
    match flag {
        Some(r) => Ok(r),
        None => doc.parse_or("eval_resolution", cfg.eval_factor * voxel_res),
    }
}

fn load_checkpoint_for(doc: &KvDoc) -> Result<(PathBuf, Checkpoint)> {
    let dir = require_path(doc, "checkpoint")?;
    let ckpt = Checkpoint::load(&dir)?;
    Ok((dir, ckpt))
}

fn cmd_reconstruct(a: &ReconArgs) -> Result<()> {
    let mut flags = KvDoc::new();
    set_opt(&mut flags, "data", &a.data.as_ref().map(|p| p.display().to_string()));
    set_opt(&mut flags, "checkpoint", &a.checkpoint.as_ref().map(|p| p.display().to_string()));
    set_opt(&mut flags, "eval_resolution", &a.eval_resolution);
    let doc = layered(&a.common, flags)?;
    check_command(&doc, "reconstruct", None)?;
    let data = require_path(&doc, "data")?;
    let (ckpt_dir, ckpt) = load_checkpoint_for(&doc)?;
    let seq = load_dataset(&data)?;
    let res = eval_resolution(None, &doc, &ckpt.config, seq.spec.voxel_resolution)?;
    let out = output_dir(&a.common, &doc, "recon");
    let ev = evaluate_checkpoint(&seq, &ckpt, res)?;
    create_dir(&out)?;
    for (r, rep) in ev.results.iter().zip(&ev.reports) {
        if r.empty {
            eprintln!("frame {}: empty surface", rep.frame);
        }
        io::write_obj(&r.mesh, &out.join(format!("frame_{:04}.obj", rep.frame)))?;
        io::write_grid(&r.occupancy, &out.join(format!("frame_{:04}_occupancy.grid", rep.frame)))?;
    }
    write_text(&out.join("metrics.csv"), &metrics_csv(&ev.reports))?;
    write_snapshot(
        &out,
        &[
            ("command", "reconstruct".into()),
            ("data", data.display().to_string()),
            ("checkpoint", ckpt_dir.display().to_string()),
            ("eval_resolution", res.to_string()),
        ],
        &KvDoc::new(),
    )?;
    eprint!("{}", summary_table(&ev.reports));
    Ok(())
}

fn cmd_evaluate(a: &EvalArgs) -> Result<()> {
    let mut flags = KvDoc::new();
    set_opt(&mut flags, "data", &a.data.as_ref().map(|p| p.display().to_string()));
    set_opt(&mut flags, "checkpoint", &a.checkpoint.as_ref().map(|p| p.display().to_string()));
    set_opt(&mut flags, "eval_resolution", &a.eval_resolution);
    set_opt(&mut flags, "frames", &a.frames);
    set_opt(&mut flags, "seed", &a.seed);
    if a.gt_as_prediction {
        flags.set("gt_as_prediction", true);
    }
    let doc = layered(&a.common, flags)?;
    check_command(&doc, "evaluate", None)?;
    let data = require_path(&doc, "data")?;
    let seq = load_dataset(&data)?;
    let out = output_dir(&a.common, &doc, "eval");
    let mut header = vec![("command", "evaluate".to_string()), ("data", data.display().to_string())];
    let reports = if doc.parse_or("gt_as_prediction", false)? {
        let n: usize = doc.parse_or("frames", seq.len())?;
        let seed: u64 = doc.parse_or("seed", 0)?;
        if n == 0 || n > seq.len() {
            return Err(Error::invalid(format!("--frames must lie in 1..={}", seq.len())));
        }
        header.push(("gt_as_prediction", "true".into()));
        header.push(("frames", n.to_string()));
        header.push(("seed", seed.to_string()));
        evaluate_ground_truth(&seq, &(0..n).collect::<Vec<_>>(), seed)?
    } else {
        let (dir, ckpt) = load_checkpoint_for(&doc)?;
        let res = eval_resolution(None, &doc, &ckpt.config, seq.spec.voxel_resolution)?;
        header.push(("checkpoint", dir.display().to_string()));
        header.push(("eval_resolution", res.to_string()));
        evaluate_checkpoint(&seq, &ckpt, res)?.reports
    };
    create_dir(&out)?;
    write_text(&out.join("metrics.csv"), &metrics_csv(&reports))?;
    let mut snap = KvDoc::new();
    for (k, v) in &header {
        snap.set(*k, v);
    }
    write_snapshot(&out, &[], &snap)?;
    print!("{}", summary_table(&reports));
    Ok(())
}

fn mean_report(reports: &[FrameReport]) -> [f64; 4] {
    let n = reports.len().max(1) as f64;
    let mut m = [0.0; 4];
    for r in reports {
        m[0] += r.chamfer_cm / n;
        m[1] += r.iou / n;
        m[2] += r.flicker_occ / n;
        m[3] += r.flicker_color / n;
    }
    m
}

/// One row per frame, then a `mean` row.
pub fn metrics_csv(reports: &[FrameReport]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in reports {
        let _ = writeln!(s, "{},{},{},{},{}", r.frame, r.chamfer_cm, r.iou, r.flicker_occ, r.flicker_color);
    }
    let m = mean_report(reports);
    let _ = writeln!(s, "mean,{},{},{},{}", m[0], m[1], m[2], m[3]);
    s
}

pub fn summary_table(reports: &[FrameReport]) -> String {
    let mut s = format!(
        "{:>6} {:>11} {:>8} {:>12} {:>13}\n",
        "frame", "chamfer_cm", "iou", "flicker_occ", "flicker_color"
    );
    let mut row = |label: String, v: [f64; 4]| {
        let _ = writeln!(s, "{label:>6} {:>11.4} {:>8.4} {:>12.3e} {:>13.3e}", v[0], v[1], v[2], v[3]);
    };
    for r in reports {
        row(r.frame.to_string(), [r.chamfer_cm, r.iou, r.flicker_occ, r.flicker_color]);
    }
    row("mean".into(), mean_report(reports));
    s
}
