//! The `rdvc` command line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::augment::{apply, AugmentationKind, AugmentationSpec};
use crate::convert::{convert, reconstruct, synthesize, ConversionRequest, SpeakerUtterance};
use crate::data::{generate_corpus, ingest_directory, Corpus, ToyCorpusConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, write_plots};
use crate::nets::{DecoderConfig, EncoderConfig};
use crate::signal::{melfile, wav};
use crate::train::{train_decoder, train_encoders, ModelBundle, Preset, Stage, TrainConfig, TrainLogRecord};

pub const ENCODERS_FILE: &str = "encoders.bin";
pub const MODEL_FILE: &str = "model.bin";
pub const ENCODERS_LOG: &str = "encoders.jsonl";
pub const DECODER_LOG: &str = "decoder.jsonl";

#[derive(Debug, Parser)]
#[command(name = "rdvc", version, about = "Speech disentanglement voice conversion toolkit")]
pub struct Cli {
    /// Worker threads for featurization and evaluation (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic corpus with known speaker, content, rhythm and pitch.
    SynthCorpus(SynthArgs),
    /// Build a manifest from a directory laid out as <speaker>/<utt>.wav.
    IngestCorpus(IngestArgs),
    /// Apply one pitch or rhythm augmentation to a waveform.
    Augment(AugmentArgs),
    /// Stage one: train the encoders and rank heads.
    TrainEncoders(TrainArgs),
    /// Stage two: train the decoder against frozen encoders.
    TrainDecoder(TrainArgs),
    /// Convert a source utterance towards a target utterance.
    Convert(ConvertArgs),
    /// Encode and decode an utterance with its own speaker.
    Reconstruct(ReconstructArgs),
    /// Write an evaluation report for a trained model.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    pub speakers: usize,
    #[arg(long, default_value_t = 200)]
    pub per_speaker: usize,
    #[arg(long, default_value_t = 12)]
    pub vocab: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; receives wavs/ and manifest.jsonl.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub root: PathBuf,
    /// Manifest to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Pitch,
    Rhythm,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub kind: KindArg,
    /// Intensity in (0, 1); 0.5 leaves the signal untouched.
    #[arg(long)]
    pub tau: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Resample inputs that are not 16 kHz instead of rejecting them.
    #[arg(long)]
    pub resample: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PresetArg {
    Paper,
    Desk,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SizeArg {
    Default,
    Tiny,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus manifest (JSON lines).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory for the checkpoint and the JSON-lines log.
    #[arg(long)]
    pub out: PathBuf,
    /// Flat TOML file with training keys; explicit flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Encoder checkpoint to start from (decoder stage; defaults to
    /// <out>/encoders.bin).
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Continue from the checkpoint already in <out> if there is one.
    #[arg(long)]
    pub resume: bool,
    /// Network size.
    #[arg(long, value_enum, default_value = "default")]
    pub size: SizeArg,
    #[arg(long)]
    pub resample: bool,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Source as <wav>:<speaker>, e.g. a.wav:spk3.
    #[arg(long)]
    pub source: String,
    /// Target as <wav>:<speaker>.
    #[arg(long)]
    pub target: String,
    /// Components taken from the target, e.g. pitch,rhythm.
    #[arg(long)]
    pub combo: String,
    /// Griffin-Lim waveform output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Binary mel spectrogram output.
    #[arg(long)]
    pub emit_mel: Option<PathBuf>,
    #[arg(long)]
    pub resample: bool,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Utterance as <wav>:<speaker>.
    #[arg(long)]
    pub input: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub emit_mel: Option<PathBuf>,
    #[arg(long)]
    pub resample: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report path (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for SVG bar charts.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    #[arg(long)]
    pub resample: bool,
}

/// Parses `path:spk3` or `path:3`.
pub fn parse_speaker_arg(s: &str) -> Result<(PathBuf, usize)> {
    let (path, spk) = s
        .rsplit_once(':')
        .ok_or_else(|| Error::invalid(format!("expected <wav>:<speaker>, got {s:?}")))?;
    let digits = spk.strip_prefix("spk").unwrap_or(spk);
    let id = digits
        .parse()
        .map_err(|_| Error::invalid(format!("bad speaker id {spk:?}")))?;
    Ok((PathBuf::from(path), id))
}

fn load_utterance(arg: &str, resample: bool) -> Result<SpeakerUtterance> {
    let (path, speaker_id) = parse_speaker_arg(arg)?;
    Ok(SpeakerUtterance {
        waveform: wav::read_wav(path, resample)?,
        speaker_id,
    })
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn train_config(stage: Stage, a: &TrainArgs) -> Result<TrainConfig> {
    let mut c = TrainConfig::preset(stage, Preset::Desk);
    if let Some(p) = &a.config {
        c = c.merge_file(p)?;
        if c.stage != stage {
            return Err(Error::Config(format!("config is for stage {:?}", c.stage)));
        }
    }
    if let Some(p) = a.preset {
        let preset = match p {
            PresetArg::Paper => Preset::Paper,
            PresetArg::Desk => Preset::Desk,
        };
        let base = TrainConfig::preset(stage, preset);
        c.preset = preset;
        c.learning_rate = base.learning_rate;
        c.iterations = base.iterations;
    }
    if let Some(v) = a.iterations {
        c.iterations = v;
    }
    if let Some(v) = a.learning_rate {
        c.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.checkpoint_every {
        c.checkpoint_every = v;
    }
    c.validate()?;
    Ok(c)
}

/// Log writer plus periodic checkpointing for a training hook.
struct Progress {
    log: BufWriter<File>,
    ckpt: PathBuf,
    every: usize,
}

impl Progress {
    fn new(log: PathBuf, ckpt: PathBuf, every: usize, append: bool) -> Result<Self> {
        let f = std::fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(&log)
            .map_err(|e| Error::io(&log, e))?;
        Ok(Progress {
            log: BufWriter::new(f),
            ckpt,
            every,
        })
    }

    fn record(&mut self, b: &ModelBundle, r: &TrainLogRecord) -> Result<()> {
        r.write_jsonl(&mut self.log)?;
        if self.every > 0 && r.iteration % self.every == 0 {
            self.log.flush().map_err(|e| Error::io(&self.ckpt, e))?;
            b.save(&self.ckpt)?;
        }
        Ok(())
    }
}

fn cmd_train_encoders(a: &TrainArgs) -> Result<()> {
    let cfg = train_config(Stage::Encoders, a)?;
    let corpus = Corpus::load_manifest(&a.corpus, a.resample)?;
    create_dir(&a.out)?;
    let ckpt = a.out.join(ENCODERS_FILE);
    let resume = a.resume && ckpt.exists();
    let mut bundle = if resume {
        ModelBundle::load(&ckpt)?
    } else {
        let enc = match a.size {
            SizeArg::Default => EncoderConfig::default(),
            SizeArg::Tiny => EncoderConfig::tiny(),
        };
        ModelBundle::for_corpus(&corpus, enc, cfg.seed)?
    };
    let mut p = Progress::new(a.out.join(ENCODERS_LOG), ckpt.clone(), cfg.checkpoint_every, resume)?;
    train_encoders(&mut bundle, &corpus, &cfg, &mut |b, r| p.record(b, r))?;
    p.log.flush().map_err(|e| Error::io(&ckpt, e))?;
    bundle.save(&ckpt)?;
    eprintln!("wrote {}", ckpt.display());
    Ok(())
}

fn cmd_train_decoder(a: &TrainArgs) -> Result<()> {
    let cfg = train_config(Stage::Decoder, a)?;
    let corpus = Corpus::load_manifest(&a.corpus, a.resample)?;
    create_dir(&a.out)?;
    let out = a.out.join(MODEL_FILE);
    let resume = a.resume && out.exists();
    let src = if resume {
        out.clone()
    } else {
        a.ckpt.clone().unwrap_or_else(|| a.out.join(ENCODERS_FILE))
    };
    let mut bundle = ModelBundle::load(&src)?;
    let dec = match a.size {
        SizeArg::Default => DecoderConfig::default(),
        SizeArg::Tiny => DecoderConfig::tiny(bundle.n_speakers),
    };
    let mut p = Progress::new(a.out.join(DECODER_LOG), out.clone(), cfg.checkpoint_every, resume)?;
    train_decoder(&mut bundle, &corpus, &cfg, dec, &mut |b, r| p.record(b, r))?;
    p.log.flush().map_err(|e| Error::io(&out, e))?;
    bundle.save(&out)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn emit(mel: &crate::signal::MelSpectrogram, out: &Option<PathBuf>, emit_mel: &Option<PathBuf>) -> Result<()> {
    if out.is_none() && emit_mel.is_none() {
        return Err(Error::invalid("nothing to write: pass --out and/or --emit-mel"));
    }
    if let Some(p) = emit_mel {
        melfile::write(p, mel)?;
    }
    if let Some(p) = out {
        wav::write_wav(p, &synthesize(mel)?)?;
    }
    Ok(())
}

fn run_command(cmd: &Command) -> Result<()> {
    match cmd {
        Command::SynthCorpus(a) => {
            let cfg = ToyCorpusConfig {
                speakers: a.speakers,
                per_speaker: a.per_speaker,
                vocab: a.vocab,
                seed: a.seed,
            };
            let manifest = generate_corpus(&cfg, &a.out)?;
            eprintln!("wrote {}", manifest.display());
        }
        Command::IngestCorpus(a) => {
            let n = ingest_directory(&a.root, &a.out)?;
            eprintln!("wrote {} ({n} utterances)", a.out.display());
        }
        Command::Augment(a) => {
            let w = wav::read_wav(&a.input, a.resample)?;
            let kind = match a.kind {
                KindArg::Pitch => AugmentationKind::Pitch,
                KindArg::Rhythm => AugmentationKind::Rhythm,
            };
            let spec = AugmentationSpec::new(kind, a.tau)?;
            wav::write_wav(&a.out, &apply(&w, &spec, &Default::default())?)?;
        }
        Command::TrainEncoders(a) => cmd_train_encoders(a)?,
        Command::TrainDecoder(a) => cmd_train_decoder(a)?,
        Command::Convert(a) => {
            let model = ModelBundle::load(&a.ckpt)?;
            let req = ConversionRequest {
                source: load_utterance(&a.source, a.resample)?,
                target: load_utterance(&a.target, a.resample)?,
                combination: a.combo.parse()?,
            };
            emit(&convert(&model, &req)?, &a.out, &a.emit_mel)?;
        }
        Command::Reconstruct(a) => {
            let model = ModelBundle::load(&a.ckpt)?;
            let u = load_utterance(&a.input, a.resample)?;
            emit(&reconstruct(&model, &u)?, &a.out, &a.emit_mel)?;
        }
        Command::Evaluate(a) => {
            let model = ModelBundle::load(&a.ckpt)?;
            let corpus = Corpus::load_manifest(&a.corpus, a.resample)?;
            let report = evaluate(&model, &corpus, a.pairs, a.seed)?;
            std::fs::write(&a.out, report.to_json() + "\n").map_err(|e| Error::io(&a.out, e))?;
            if let Some(dir) = &a.plot {
                write_plots(&report, dir)?;
            }
            eprintln!("wrote {}", a.out.display());
        }
    }
    Ok(())
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code: 0 success, 1 usage or validation error, 2 runtime
/// failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return 1;
        }
        // Fails only if a global pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run_command(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
