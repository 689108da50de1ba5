//! Command-line front end: `detect`, `synth`, `score` and `fit`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::flow;
use crate::imaging::{self, ImagingError};
use crate::mixtures::FitDump;
use crate::pipeline::{self, Detector, FrameOutput, PipelineConfig, PipelineError, DEFAULT_MODEL};
use crate::synth::{self, SynthError, SynthSpec};

/// Exit code for bad input: missing files, invalid flags or specs.
pub const EXIT_INPUT: i32 = 1;
/// Exit code for failures inside the computation or while writing output.
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::UnknownModel { .. }
            | PipelineError::Config(_)
            | PipelineError::TooFewFrames(_)
            | PipelineError::Imaging(_) => CliError::Input(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<ImagingError> for CliError {
    fn from(e: ImagingError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Io { .. } => CliError::Internal(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

fn write_err(path: &Path, e: io::Error) -> CliError {
    CliError::Internal(format!("failed to write {}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "cloud-layers", version, about = "Detect the number of cloud layers in thermal image sequences")]
pub struct Cli {
    /// Print per-frame progress to standard error.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the sequential detector over a sequence and write JSON lines.
    Detect(DetectArgs),
    /// Generate a labeled synthetic sequence.
    Synth(SynthArgs),
    /// Compare detector output with ground truth.
    Score(ScoreArgs),
    /// Fit the model to one frame pair under a fixed layer count.
    Fit(FitArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Model composition, e.g. beta_T+vm_phi.
    #[arg(long, default_value = DEFAULT_MODEL)]
    pub model: String,
    /// Dirichlet concentration of the temperature mixture.
    #[arg(long, default_value_t = 1.0)]
    pub alpha0: f64,
    /// Dirichlet concentration of the velocity mixtures.
    #[arg(long, default_value_t = 10.0)]
    pub alpha1: f64,
    /// Stickiness of the layer-count chain.
    #[arg(long, default_value_t = 650.0)]
    pub beta: f64,
    /// Half width of the flow window.
    #[arg(long, default_value_t = 8)]
    pub window: usize,
    /// Ridge regularization of the flow solve.
    #[arg(long, default_value_t = 1e-8)]
    pub tau: f64,
    /// Temporal kernel amplitude.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// EM restarts per fit.
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Layer count assumed before the first frame.
    #[arg(long, default_value_t = 1)]
    pub initial_layers: usize,
}

impl ModelArgs {
    pub fn config(&self) -> PipelineConfig {
        PipelineConfig {
            model: self.model.clone(),
            alpha0: self.alpha0,
            alpha1: self.alpha1,
            beta: self.beta,
            window_half_width: self.window,
            tau: self.tau,
            sigma: self.sigma,
            restarts: self.restarts,
            seed: self.seed,
            initial_layers: self.initial_layers,
        }
    }
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Sequence manifest (manifest.json).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output JSON-lines file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for per-frame flow and posterior CSV dumps.
    #[arg(long)]
    pub dump_dir: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON synthetic spec; overrides the shape flags below.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 31)]
    pub frames: usize,
    #[arg(long, default_value_t = 60)]
    pub height: usize,
    #[arg(long, default_value_t = 80)]
    pub width: usize,
    /// Sensor noise standard deviation (K).
    #[arg(long)]
    pub noise: Option<f64>,
    /// Frame at which the second layer appears.
    #[arg(long)]
    pub change_point: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// JSON-lines output of `detect`.
    #[arg(long)]
    pub records: PathBuf,
    /// Ground truth written by `synth`.
    #[arg(long)]
    pub truth: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Frame index to fit; the preceding frame supplies the flow.
    #[arg(long)]
    pub frame: usize,
    /// Number of layers to fit.
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    /// Output JSON file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Detect(a) => detect(a, cli.verbose),
        Command::Synth(a) => synth_cmd(a),
        Command::Score(a) => score(a),
        Command::Fit(a) => fit(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::Input(format!("cannot create {}: {e}", p.display())))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn dump_frame(dir: &Path, output: &FrameOutput, mask: &imaging::SegmentationMask) -> Result<(), CliError> {
    let t = output.record.t;
    for art in &output.artifacts {
        let path = dir.join(format!("flow_{t:04}_L{}.csv", art.l));
        fs::write(&path, flow::flow_to_csv(&art.flow, mask)).map_err(|e| write_err(&path, e))?;
        if art.weights.len() > 1 {
            let mut csv = String::from("i,j");
            for k in 1..=art.weights.len() {
                csv.push_str(&format!(",gamma{k}"));
            }
            csv.push('\n');
            for (i, j) in mask.pixels() {
                csv.push_str(&format!("{i},{j}"));
                for w in &art.weights {
                    csv.push_str(&format!(",{}", w.get(i, j)));
                }
                csv.push('\n');
            }
            let path = dir.join(format!("posterior_{t:04}_L{}.csv", art.l));
            fs::write(&path, csv).map_err(|e| write_err(&path, e))?;
        }
    }
    Ok(())
}

fn detect(args: &DetectArgs, verbose: u8) -> Result<(), CliError> {
    let cfg = args.model.config();
    cfg.validate()?;
    let seq = imaging::load_sequence(&args.manifest)?;
    if let Some(dir) = &args.dump_dir {
        fs::create_dir_all(dir).map_err(|e| write_err(dir, e))?;
    }
    let out_path = args.out.clone().unwrap_or_else(|| PathBuf::from("<stdout>"));
    let mut out = open_output(args.out.as_deref())?;
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    let (mut frames, mut skipped) = (0usize, 0usize);
    let masks: BTreeMap<usize, &imaging::SegmentationMask> = seq.iter().map(|(f, m)| (f.index, m)).collect();
    pipeline::run_sequence(&seq, &cfg, |output: FrameOutput| -> Result<(), CliError> {
        let rec = &output.record;
        frames += 1;
        if rec.error.is_some() {
            skipped += 1;
        }
        *histogram.entry(rec.chosen).or_default() += 1;
        if verbose > 0 {
            eprintln!("frame {}: L={}{}", rec.t, rec.chosen, rec.error.as_ref().map_or(String::new(), |e| format!(" ({e})")));
        }
        if let Some(dir) = &args.dump_dir {
            dump_frame(dir, &output, masks[&rec.t])?;
        }
        let mut line = serde_json::to_string(rec).map_err(|e| CliError::Internal(e.to_string()))?;
        line.push('\n');
        out.write_all(line.as_bytes()).map_err(|e| write_err(&out_path, e))?;
        out.flush().map_err(|e| write_err(&out_path, e))
    })?;
    let hist: Vec<String> = histogram.iter().map(|(l, n)| format!("L={l}: {n}")).collect();
    eprintln!("processed {frames} frames ({skipped} skipped); {}", hist.join(", "));
    Ok(())
}

fn synth_spec(args: &SynthArgs) -> Result<SynthSpec, CliError> {
    if let Some(path) = &args.spec {
        let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        return serde_json::from_str(&text).map_err(|e| CliError::Input(format!("invalid spec {}: {e}", path.display())));
    }
    let mut spec = match args.layers {
        1 => SynthSpec::one_layer(args.seed),
        _ => SynthSpec::two_layer(args.seed),
    };
    // Extra layers are kept so validation reports the unsupported count.
    while spec.layers.len() < args.layers {
        let extra = spec.layers[spec.layers.len() - 1].clone();
        spec.layers.push(extra);
    }
    spec.frames = args.frames;
    spec.height = args.height;
    spec.width = args.width;
    spec.change_point = args.change_point;
    if let Some(noise) = args.noise {
        spec.noise_sigma = noise;
    }
    Ok(spec)
}

fn synth_cmd(args: &SynthArgs) -> Result<(), CliError> {
    let spec = synth_spec(args)?;
    let frames = synth::generate(&spec)?;
    let manifest = synth::write_sequence(&args.out, &spec, &frames)?;
    eprintln!("wrote {} frames to {} (manifest: {})", frames.len(), args.out.display(), manifest.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct ScoreReport {
    accuracy: f64,
    correct: usize,
    frames: usize,
}

fn score(args: &ScoreArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.records)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", args.records.display())))?;
    let mut chosen = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| CliError::Input(format!("{} line {}: {e}", args.records.display(), n + 1)))?;
        let field = |k: &str| {
            v.get(k)
                .and_then(serde_json::Value::as_u64)
                .ok_or_else(|| CliError::Input(format!("{} line {}: missing {k:?}", args.records.display(), n + 1)))
        };
        chosen.push((field("t")? as usize, field("chosen")? as usize));
    }
    let truth = synth::read_truth(&args.truth)?;
    let first = chosen.iter().map(|&(t, _)| t).min().unwrap_or(0);
    let expected = truth.frames.iter().filter(|e| e.t >= first).count();
    if chosen.is_empty() || expected != chosen.len() {
        return Err(CliError::Input(format!(
            "{} records but {expected} ground-truth frames to compare",
            chosen.len()
        )));
    }
    let mut correct = 0;
    for &(t, l) in &chosen {
        let want = truth
            .layers_at(t)
            .ok_or_else(|| CliError::Input(format!("no ground truth for frame {t}")))?;
        correct += (want == l) as usize;
    }
    let report = ScoreReport {
        accuracy: 100.0 * correct as f64 / chosen.len() as f64,
        correct,
        frames: chosen.len(),
    };
    println!("{}", serde_json::to_string(&report).map_err(|e| CliError::Internal(e.to_string()))?);
    Ok(())
}

#[derive(Debug, Serialize)]
struct GroupDump {
    group: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<FitDump>,
}

#[derive(Debug, Serialize)]
struct FitReport {
    model: String,
    t: usize,
    layers: usize,
    groups: Vec<GroupDump>,
}

fn fit(args: &FitArgs) -> Result<(), CliError> {
    let cfg = args.model.config();
    let detector = Detector::new(cfg)?;
    let seq = imaging::load_sequence(&args.manifest)?;
    let k = seq
        .iter()
        .position(|(f, _)| f.index == args.frame)
        .ok_or_else(|| CliError::Input(format!("frame {} is not in the manifest", args.frame)))?;
    if k == 0 {
        return Err(CliError::Input(format!("frame {} has no preceding frame for the flow", args.frame)));
    }
    let (prev, cur) = (&seq[k - 1], &seq[k]);
    let fits = detector
        .fit_frame((&prev.0, &prev.1), (&cur.0, &cur.1), args.layers)
        .map_err(|e| match e {
            PipelineError::InsufficientMask { .. } => CliError::Input(e.to_string()),
            e => CliError::from(e),
        })?;
    let report = FitReport {
        model: detector.model().id.clone(),
        t: args.frame,
        layers: args.layers,
        groups: fits
            .into_iter()
            .map(|(group, fit)| GroupDump {
                group,
                fit: fit.map(|f| f.dump()),
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    let path = args.out.clone().unwrap_or_else(|| PathBuf::from("<stdout>"));
    let mut out = open_output(args.out.as_deref())?;
    out.write_all(text.as_bytes()).and_then(|()| out.flush()).map_err(|e| write_err(&path, e))
}
