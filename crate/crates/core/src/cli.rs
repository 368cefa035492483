//! `owtrack` command line: filter, track, eval, simulate, report.
//!
//! Stages talk through files. A TOML file given with `--config` supplies
//! defaults: top-level keys apply to every subcommand that has a flag of that
//! name, keys under a `[subcommand]` table to that subcommand only. Flags on
//! the command line always win.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::assoc::{AssocWeights, CHI2_95_4DOF};
use crate::detset::{self, FormatError};
use crate::eval::{self, EvalConfig, EvalError, EvalResult, IouKind, ReportFormat};
use crate::filters::{self, FilterPolicy};
use crate::sim::{self, SequenceSpec, SimError};
use crate::tracker::{self, TrackerConfig, TrackerError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) => m,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrackerError> for CliError {
    fn from(e: TrackerError) -> Self {
        match e {
            TrackerError::Config(_) | TrackerError::Filter(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Invalid(_) => CliError::Usage(e.to_string()),
            SimError::Placement { .. } => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "owtrack",
    version,
    about = "Detection filtering, multi-object tracking and class-agnostic AR evaluation",
    args_override_self = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter a results file per image (NMS, then threshold or topK).
    Filter(FilterArgs),
    /// Track the detections of every video listed in an annotation file.
    Track(TrackArgs),
    /// Class-agnostic AR@K of a results file against ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic ground-truth file and a matching detections file.
    Simulate(SimulateArgs),
    /// Tabulate saved evaluation results.
    Report(ReportArgs),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Filter(a) => &a.common,
            Command::Track(a) => &a.common,
            Command::Eval(a) => &a.common,
            Command::Simulate(a) => &a.common,
            Command::Report(a) => &a.common,
        }
    }

    fn resolved_config(&self) -> Result<String, toml::ser::Error> {
        match self {
            Command::Filter(a) => toml::to_string(a),
            Command::Track(a) => toml::to_string(a),
            Command::Eval(a) => toml::to_string(a),
            Command::Simulate(a) => toml::to_string(a),
            Command::Report(a) => toml::to_string(a),
        }
    }
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct Common {
    /// TOML file with default flag values
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Print the resolved configuration as TOML and exit
    #[arg(long)]
    #[serde(skip)]
    pub print_config: bool,
    /// Worker threads (0 = one per core)
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Threshold,
    Topk,
}

fn policy(kind: PolicyKind, tau: f64, k: usize) -> Result<FilterPolicy, CliError> {
    let p = match kind {
        PolicyKind::Threshold => FilterPolicy::threshold(tau),
        PolicyKind::Topk => FilterPolicy::topk(k),
    };
    p.map_err(|e| CliError::Usage(e.to_string()))
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct FilterArgs {
    /// Input results file
    #[serde(skip)]
    pub input: PathBuf,
    /// Output results file
    #[serde(skip)]
    pub output: PathBuf,
    /// Per-image selection rule
    #[arg(long, value_enum, default_value_t = PolicyKind::Topk)]
    pub policy: PolicyKind,
    /// Score threshold for --policy threshold (keeps score >= tau)
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    /// Detections kept per image for --policy topk
    #[arg(long, default_value_t = filters::PSEUDO_LABEL_TOPK)]
    pub k: usize,
    /// Greedy NMS IoU threshold applied before the policy (default: no NMS)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nms_iou: Option<f64>,
    /// Rewrite every category to 1 before filtering
    #[arg(long)]
    pub class_agnostic: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrackArgs {
    /// Input detections (results file, optionally with embeddings)
    #[serde(skip)]
    pub input: PathBuf,
    /// Output results file with track_id on every record
    #[serde(skip)]
    pub output: PathBuf,
    /// Annotation file supplying the image and video tables
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub ann: PathBuf,
    /// Detections scoring below this are ignored
    #[arg(long, default_value_t = 0.8)]
    pub score_thresh: f64,
    /// Extra per-frame filter after the score threshold (default: none)
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyKind>,
    /// Threshold for --policy threshold
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    /// K for --policy topk
    #[arg(long, default_value_t = filters::PSEUDO_LABEL_TOPK)]
    pub k: usize,
    /// NMS IoU threshold on incoming detections (1.0 removes only exact duplicates)
    #[arg(long, default_value_t = 1.0)]
    pub nms_iou: f64,
    /// Consecutive matches needed to confirm a track
    #[arg(long, default_value_t = 3)]
    pub n_init: u32,
    /// Frames a confirmed track survives without a match
    #[arg(long, default_value_t = 30)]
    pub max_age: u32,
    /// Embeddings kept per track
    #[arg(long, default_value_t = 100)]
    pub gallery_budget: usize,
    /// Weight of the motion cost against appearance
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Mahalanobis gate (chi-square, 4 dof)
    #[arg(long, default_value_t = CHI2_95_4DOF)]
    pub gate_chi2: f64,
    /// Largest admissible appearance distance
    #[arg(long, default_value_t = 0.2)]
    pub max_appearance: f64,
    /// Largest admissible 1 - IoU in IoU association
    #[arg(long, default_value_t = 0.7)]
    pub max_iou_cost: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

impl TrackArgs {
    fn tracker_config(&self) -> Result<TrackerConfig, CliError> {
        let cfg = TrackerConfig {
            nms_iou: self.nms_iou,
            score_thresh: self.score_thresh,
            policy: self.policy.map(|p| policy(p, self.tau, self.k)).transpose()?,
            n_init: self.n_init,
            max_age: self.max_age,
            gallery_budget: self.gallery_budget,
            assoc: AssocWeights {
                lambda: self.lambda,
                gate_chi2: self.gate_chi2,
                max_appearance: self.max_appearance,
                max_iou_cost: self.max_iou_cost,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Per-image instances
    Frame,
    /// Per-video tracks, spatio-temporal IoU
    Track,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouType {
    Box,
    Mask,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalArgs {
    /// Ground-truth annotation file
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub gt: PathBuf,
    /// Results file
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub pred: PathBuf,
    /// Predictions considered per image (frame) or per video (track)
    #[arg(long, default_value_t = 100)]
    pub max_dets: usize,
    #[arg(long, value_enum, default_value_t = EvalMode::Frame)]
    pub mode: EvalMode,
    #[arg(long, value_enum, default_value_t = IouType::Box)]
    pub iou_type: IouType,
    /// Comma-separated IoU thresholds; a match needs IoU strictly above
    #[arg(long, value_delimiter = ',', default_values_t = eval::default_iou_thresholds())]
    pub thresholds: Vec<f64>,
    /// Only match predictions and ground truth of the same category
    #[arg(long)]
    pub class_aware: bool,
    /// Row label (default: stem of the results file)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Also save the full result as JSON (input to `report`)
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// Print CSV instead of an aligned table
    #[arg(long)]
    pub csv: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SimulateArgs {
    /// Output annotation file
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub gt_out: PathBuf,
    /// Output detections file
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub det_out: PathBuf,
    /// RNG seed (video v uses seed + v)
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub videos: usize,
    #[arg(long, default_value_t = 5)]
    pub n_objects: usize,
    #[arg(long, default_value_t = 100)]
    pub n_frames: usize,
    #[arg(long, default_value_t = 640)]
    pub width: u32,
    #[arg(long, default_value_t = 480)]
    pub height: u32,
    /// px/frame
    #[arg(long, default_value_t = 0.5)]
    pub speed_min: f64,
    /// px/frame
    #[arg(long, default_value_t = 3.0)]
    pub speed_max: f64,
    #[arg(long, default_value_t = 20.0)]
    pub box_min: f64,
    #[arg(long, default_value_t = 60.0)]
    pub box_max: f64,
    /// Detection position noise (px)
    #[arg(long, default_value_t = 0.0)]
    pub jitter_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    pub score_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    pub drop_rate: f64,
    /// Expected false detections per frame
    #[arg(long, default_value_t = 0.0)]
    pub clutter_rate: f64,
    #[arg(long, default_value_t = 16)]
    pub embedding_dim: usize,
    #[arg(long, default_value_t = 0.0)]
    pub embedding_noise: f64,
    /// Heading change per frame (radians)
    #[arg(long, default_value_t = 0.0)]
    pub turn_rate: f64,
    /// Minimum gap between ground-truth boxes on every frame (default: none)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_separation: Option<f64>,
    /// Attach filled-box RLE masks
    #[arg(long)]
    pub masks: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

impl SimulateArgs {
    fn spec(&self) -> SequenceSpec {
        SequenceSpec {
            n_objects: self.n_objects,
            n_frames: self.n_frames,
            width: self.width,
            height: self.height,
            speed_min: self.speed_min,
            speed_max: self.speed_max,
            box_min: self.box_min,
            box_max: self.box_max,
            jitter_sigma: self.jitter_sigma,
            score_sigma: self.score_sigma,
            drop_rate: self.drop_rate,
            clutter_rate: self.clutter_rate,
            embedding_dim: self.embedding_dim,
            embedding_noise: self.embedding_noise,
            turn_rate: self.turn_rate,
            min_separation: self.min_separation,
            masks: self.masks,
            seed: self.seed,
            video_id: 1,
            first_image_id: 1,
        }
    }
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ReportArgs {
    /// Result files written by `eval --out`
    #[arg(required = true)]
    #[serde(skip)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub csv: bool,
    /// Write the report here instead of standard output
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

/// File written by `eval --out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedEval {
    pub label: String,
    pub result: EvalResult,
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn run_filter(a: &FilterArgs) -> Result<(), CliError> {
    let p = policy(a.policy, a.tau, a.k)?;
    if let Some(t) = a.nms_iou {
        if !(0.0..=1.0).contains(&t) {
            return Err(CliError::Usage(format!("--nms-iou {t} outside [0, 1]")));
        }
    }
    let mut set = detset::load_results(&a.input, None)?;
    if a.class_agnostic {
        set = set.class_agnostic();
    }
    let out = set.map_images(|dets| {
        let dets = match a.nms_iou {
            Some(t) => filters::nms(dets, t),
            None => dets.to_vec(),
        };
        filters::pseudo_label(&dets, &p)
    });
    detset::save_results(&out, &a.output)?;
    Ok(())
}

fn run_track(a: &TrackArgs) -> Result<(), CliError> {
    let cfg = a.tracker_config()?;
    let gt = detset::load_annotations(&a.ann)?;
    if gt.table.videos.is_empty() {
        return Err(CliError::Data(format!("{}: no videos table", a.ann.display())));
    }
    let set = detset::load_results(&a.input, Some(&gt.table))?;
    let tracks = tracker::run_all(&cfg, &set)?;
    detset::save_results(&tracker::tracks_to_results(&gt.table, &tracks), &a.output)?;
    Ok(())
}

fn run_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = EvalConfig {
        max_dets: a.max_dets,
        iou_thresholds: a.thresholds.clone(),
        iou_kind: match a.iou_type {
            IouType::Box => IouKind::Box,
            IouType::Mask => IouKind::Mask,
        },
        class_agnostic: !a.class_aware,
    };
    cfg.validate()?;
    let gt = detset::load_annotations(&a.gt)?;
    let preds = detset::load_results(&a.pred, Some(&gt.table))?;
    let result = match a.mode {
        EvalMode::Frame => eval::ar_at_k(&preds, &gt, &cfg)?,
        EvalMode::Track => {
            let tracks = eval::pred_tracks_from_results(&preds, &gt.table)?;
            eval::track_ar(&tracks, &gt, &cfg)?
        }
    };
    let label = a.label.clone().unwrap_or_else(|| {
        a.pred
            .file_stem()
            .map_or_else(|| "pred".to_string(), |s| s.to_string_lossy().into_owned())
    });
    if let Some(path) = &a.out {
        let saved = SavedEval { label: label.clone(), result: result.clone() };
        let mut s = serde_json::to_string(&saved).expect("eval result serialises");
        s.push('\n');
        write_file(path, &s)?;
    }
    let format = if a.csv { ReportFormat::Csv } else { ReportFormat::Table };
    emit(out, &eval::report(&[(label, result)], format))
}

fn run_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let (gt, dets) = sim::simulate_videos(&a.spec(), a.videos)?;
    detset::save_annotations(&gt, &a.gt_out)?;
    detset::save_results(&dets, &a.det_out)?;
    Ok(())
}

fn run_report(a: &ReportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut rows = Vec::with_capacity(a.inputs.len());
    for path in &a.inputs {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let saved: SavedEval = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        rows.push((saved.label, saved.result));
    }
    let format = if a.csv { ReportFormat::Csv } else { ReportFormat::Table };
    let text = eval::report(&rows, format);
    match &a.out {
        Some(path) => write_file(path, &text),
        None => emit(out, &text),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Data(format!("writing output: {e}")))
}

fn dispatch(cmd: &Command, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Filter(a) => run_filter(a),
        Command::Track(a) => run_track(a),
        Command::Eval(a) => run_eval(a, out),
        Command::Simulate(a) => run_simulate(a),
        Command::Report(a) => run_report(a, out),
    }
}

/// Flags spelled out from the configuration file, to be placed ahead of the
/// user's own arguments.
fn config_tokens(path: &Path, sub: &clap::Command, all: &clap::Command) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let known_anywhere = |key: &str| {
        all.get_subcommands()
            .any(|s| s.get_arguments().any(|a| a.get_long() == Some(key)))
    };
    let mut tokens = Vec::new();
    let mut section = None;
    for (key, value) in &table {
        if let toml::Value::Table(t) = value {
            if key == sub.get_name() {
                section = Some(t);
            } else if all.find_subcommand(key).is_none() {
                return Err(CliError::Usage(format!("{}: unknown section [{key}]", path.display())));
            }
            continue;
        }
        let flag = key.replace('_', "-");
        match sub.get_arguments().find(|a| a.get_long() == Some(flag.as_str())) {
            Some(arg) => push_value(&mut tokens, arg, &flag, value, path)?,
            None if known_anywhere(&flag) => {}
            None => return Err(CliError::Usage(format!("{}: unknown key `{key}`", path.display()))),
        }
    }
    if let Some(t) = section {
        for (key, value) in t {
            let flag = key.replace('_', "-");
            let arg = sub
                .get_arguments()
                .find(|a| a.get_long() == Some(flag.as_str()))
                .ok_or_else(|| {
                    CliError::Usage(format!(
                        "{}: `{key}` is not an option of `{}`",
                        path.display(),
                        sub.get_name()
                    ))
                })?;
            push_value(&mut tokens, arg, &flag, value, path)?;
        }
    }
    Ok(tokens)
}

fn push_value(
    tokens: &mut Vec<String>,
    arg: &clap::Arg,
    flag: &str,
    value: &toml::Value,
    path: &Path,
) -> Result<(), CliError> {
    if flag == "config" || flag == "print-config" {
        return Err(CliError::Usage(format!("{}: `{flag}` cannot be set from a config file", path.display())));
    }
    let scalar = |v: &toml::Value| match v {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        toml::Value::Boolean(b) => Ok(b.to_string()),
        _ => Err(CliError::Usage(format!("{}: unsupported value for `{flag}`", path.display()))),
    };
    let takes_value = arg.get_action().takes_values();
    match value {
        toml::Value::Boolean(b) if !takes_value => {
            if *b {
                tokens.push(format!("--{flag}"));
            }
        }
        toml::Value::Array(items) => {
            let parts = items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?;
            tokens.push(format!("--{flag}={}", parts.join(",")));
        }
        v => tokens.push(format!("--{flag}={}", scalar(v)?)),
    }
    Ok(())
}

/// Splice configuration-file flags in front of the user's arguments.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let all = Cli::command();
    let Some(pos) = args.iter().skip(1).position(|a| {
        a.to_str().is_some_and(|s| all.find_subcommand(s).is_some())
    }) else {
        return Ok(args);
    };
    let pos = pos + 1;
    let mut config = None;
    let mut i = pos + 1;
    while i < args.len() {
        let s = args[i].to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            config = args.get(i + 1).map(PathBuf::from);
            i += 1;
        } else if let Some(p) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        }
        i += 1;
    }
    let Some(path) = config else { return Ok(args) };
    let name = args[pos].to_string_lossy().into_owned();
    let sub = all.find_subcommand(&name).expect("subcommand located above");
    let tokens = config_tokens(&path, sub, &all)?;
    let mut out: Vec<OsString> = args[..=pos].to_vec();
    out.extend(tokens.into_iter().map(OsString::from));
    out.extend(args[pos + 1..].iter().cloned());
    Ok(out)
}

/// Run the command line with explicit output streams; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            return e.code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    EXIT_OK
                }
                _ => {
                    let _ = err.write_all(text.as_bytes());
                    EXIT_USAGE
                }
            };
        }
    };
    let common = cli.command.common();
    if common.print_config {
        return match cli.command.resolved_config() {
            Ok(s) => match emit(out, &s) {
                Ok(()) => EXIT_OK,
                Err(e) => {
                    let _ = writeln!(err, "error: {}", e.message());
                    e.code()
                }
            },
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                EXIT_USAGE
            }
        };
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(common.jobs).build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: thread pool: {e}");
            return EXIT_USAGE;
        }
    };
    let mut buf = Vec::new();
    let result = pool
        .install(|| dispatch(&cli.command, &mut buf))
        .and_then(|()| out.write_all(&buf).map_err(|e| CliError::Data(format!("writing output: {e}"))));
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.code()
        }
    }
}

/// Entry point used by the binary.
pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}
