//! Command-line front end. Every command reads the run configuration (desk
//! profile when `--config` is absent), writes one `*.run.json` manifest next
//! to its outputs and reports failures as a single `class: message` line.
//!
//! File conventions: a feature cache `F` comes with its split manifest
//! `F.manifest`; a checkpoint directory holds `<stage>.ckpt` and
//! `<stage>.log` for each training stage.

use std::ffi::OsString;
use std::fs::{File, OpenOptions};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::conversion::{convert, convert_wav, ConversionRequest, ConversionStage};
use crate::corpus::toy::{make_toy_corpus, ToyCorpusConfig};
use crate::corpus::{manifest_for, read_manifest, split_dataset, write_manifest, Dataset, SpeakerTable, Split};
use crate::dsp::{griffin_lim, stft_logmag, Spectrogram};
use crate::error::{Error, Result};
use crate::evaluation::{
    collect_latents, disentanglement_probe, gv_by_direction, gv_compare, gv_table, plot_spectrograms, ProbeConfig,
};
use crate::features::{extract_corpus, read_cache, to_dataset, write_cache};
use crate::model::{Checkpoint, Networks};
use crate::training::{Stage, StageIo, Trainer};
use crate::wav::{read_wav, write_wav};

#[derive(Debug, Parser)]
#[command(name = "vc-adv", version, about = "Multi-target voice conversion with adversarial disentanglement")]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Run configuration (flat `key = value` file); desk profile if absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes a synthetic multi-speaker corpus at the configured sample rate.
    MakeToyCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        speakers: usize,
        #[arg(long, default_value_t = 40)]
        utterances: usize,
        #[arg(long, default_value_t = 2.0)]
        min_secs: f64,
        #[arg(long, default_value_t = 4.0)]
        max_secs: f64,
    },
    /// Analyzes a corpus into a feature cache plus a train/test manifest.
    ExtractFeatures {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
    },
    /// Runs one training stage, resuming from the stage's own checkpoint or
    /// starting from the previous stage's.
    Train {
        #[arg(long)]
        stage: Stage,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        checkpoint_dir: PathBuf,
    },
    /// Converts a WAV file to a target speaker.
    Convert {
        #[arg(long)]
        source: PathBuf,
        /// Speaker name or numeric id.
        #[arg(long)]
        target_speaker: String,
        #[arg(long)]
        stage: ConversionStage,
        #[arg(long)]
        checkpoint_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also plot source and converted spectrograms.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Global variance of test-set conversions per gender direction.
    EvalGv {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        checkpoint_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains a fresh speaker classifier on a checkpoint's latent codes.
    Probe {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = ProbeConfig::default().steps)]
        steps: usize,
    },
    /// Plots the spectrograms of one or more WAV files on a shared scale.
    PlotSpec {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub config: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    pub command: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub seed: u64,
}

impl RunManifest {
    fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Process exit code for an error class.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::ConfigMismatch(_) | Error::MissingStage2Checkpoint(_) => 3,
        _ => 1,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Usage errors exit with 2.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let command_line = args.iter().map(|a| a.to_string_lossy().into_owned()).collect::<Vec<_>>().join(" ");
    match dispatch(&cli, &command_line) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}: {}", e.class(), e.to_string().replace('\n', " "));
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli, command_line: &str) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::preset(crate::config::Profile::Desk),
    };
    let manifest = |corpus: Option<&Path>, ckpt: Option<&Path>| RunManifest {
        config: cli.config.clone(),
        corpus: corpus.map(Path::to_path_buf),
        checkpoint_dir: ckpt.map(Path::to_path_buf),
        command: command_line.to_string(),
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        seed: cli.seed,
    };
    match &cli.command {
        Command::MakeToyCorpus { out, speakers, utterances, min_secs, max_secs } => {
            let toy = ToyCorpusConfig {
                sample_rate_hz: cfg.dsp.sample_rate_hz,
                min_secs: *min_secs,
                max_secs: *max_secs,
                ..ToyCorpusConfig::new(*speakers, *utterances, cli.seed)
            };
            make_toy_corpus(&toy, out)?;
            manifest(Some(out), None).write(&out.join("run.json"))
        }
        Command::ExtractFeatures { corpus, out, train_fraction } => {
            let (table, records) = extract_corpus(corpus, &cfg.dsp)?;
            write_cache(out, &cfg.dsp.fingerprint(), &records)?;
            let ds = to_dataset(records, table.len())?;
            let (train, test) = split_dataset(&ds, *train_fraction, cli.seed)?;
            write_manifest(&manifest_path(out), &manifest_for(&table, &train, &test))?;
            println!("{} utterances, {} speakers, {} train / {} test", ds.len(), table.len(), train.len(), test.len());
            manifest(Some(corpus), None).write(&run_path(out))
        }
        Command::Train { stage, features, checkpoint_dir } => {
            train(&cfg, *stage, features, checkpoint_dir, cli.seed)?;
            manifest(None, Some(checkpoint_dir)).write(&checkpoint_dir.join(format!("{stage}.run.json")))
        }
        Command::Convert { source, target_speaker, stage, checkpoint_dir, out, plot } => {
            let nets = load_for_conversion(&cfg, checkpoint_dir, *stage)?;
            let table = SpeakerTable::new(nets.1.clone())?;
            let target = table.resolve(target_speaker)?;
            let clip = read_wav(source)?;
            if clip.sample_rate_hz != cfg.dsp.sample_rate_hz {
                return Err(Error::ConfigMismatch(format!(
                    "source sampled at {} Hz, configuration expects {} Hz",
                    clip.sample_rate_hz, cfg.dsp.sample_rate_hz
                )));
            }
            let req = ConversionRequest { source: clip, target_speaker: target, stage: *stage, dsp: cfg.dsp.clone() };
            let converted = convert_wav(&req, &nets.0)?;
            write_wav(out, &converted)?;
            if let Some(png) = plot {
                let before = stft_logmag(&req.source, &cfg.dsp)?;
                let after = convert(&nets.0, &before, target, *stage)?;
                plot_spectrograms(&[&before, &after], png, None)?;
            }
            manifest(None, Some(checkpoint_dir)).write(&run_path(out))
        }
        Command::EvalGv { features, checkpoint_dir, out } => {
            let data = load_features(&cfg, features)?;
            std::fs::create_dir_all(out)?;
            let mut reports = Vec::new();
            let ae = checkpoint_dir.join(format!("{}.ckpt", Stage::PretrainAe));
            if ae.exists() {
                let nets = networks(&cfg, &Checkpoint::load(&ae)?, &data.table)?;
                reports.extend(gv_by_direction(&nets, &data.test, ConversionStage::V1, "autoencoder")?);
            }
            let (v1, _) = load_for_conversion(&cfg, checkpoint_dir, ConversionStage::V1)?;
            reports.extend(gv_by_direction(&v1, &data.test, ConversionStage::V1, "stage1")?);
            let (v2, _) = load_for_conversion(&cfg, checkpoint_dir, ConversionStage::V2)?;
            reports.extend(gv_by_direction(&v2, &data.test, ConversionStage::V2, "proposed")?);
            for r in &reports {
                let mut w = BufWriter::new(File::create(out.join(format!("gv_{}.txt", r.condition_tag.replace('/', "_"))))?);
                r.write_table(&mut w)?;
            }
            let table = gv_table(&reports);
            std::fs::write(out.join("gv_table.txt"), &table)?;
            gv_compare(&reports, &out.join("gv_compare.png"))?;
            print!("{table}");
            manifest(None, Some(checkpoint_dir)).write(&out.join("run.json"))
        }
        Command::Probe { features, checkpoint, out, steps } => {
            let data = load_features(&cfg, features)?;
            let ckpt = Checkpoint::load(checkpoint)?;
            let nets = networks(&cfg, &ckpt, &data.table)?;
            let train = collect_latents(&nets, &data.train)?;
            let test = collect_latents(&nets, &data.test)?;
            let pcfg = ProbeConfig { steps: *steps, adam: cfg.train.adam, seed: cli.seed, ..ProbeConfig::default() };
            let condition = checkpoint.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let report = disentanglement_probe(&nets.cfg, &train, &test, &pcfg, &condition)?;
            std::fs::write(out, report.line() + "\n")?;
            println!("{}", report.line());
            manifest(None, checkpoint.parent()).write(&run_path(out))
        }
        Command::PlotSpec { input, out } => {
            let specs =
                input.iter().map(|p| stft_logmag(&read_wav(p)?, &cfg.dsp)).collect::<Result<Vec<Spectrogram>>>()?;
            plot_spectrograms(&specs.iter().collect::<Vec<_>>(), out, None)?;
            manifest(None, None).write(&run_path(out))
        }
    }
}

fn manifest_path(features: &Path) -> PathBuf {
    let mut s = features.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

fn run_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}

struct Features {
    table: SpeakerTable,
    train: Dataset,
    test: Dataset,
}

/// Reads a feature cache and its manifest, checking the analysis fingerprint.
fn load_features(cfg: &RunConfig, path: &Path) -> Result<Features> {
    let (_, records) = read_cache(path, Some(&cfg.dsp.fingerprint()))?;
    let entries = read_manifest(&manifest_path(path))?;
    let mut names: Vec<String> = entries.iter().map(|e| e.speaker.clone()).collect();
    names.sort();
    names.dedup();
    let table = SpeakerTable::new(names)?;
    let ds = to_dataset(records, table.len())?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for u in ds.entries {
        let e = entries
            .iter()
            .find(|e| e.utt_id == u.id)
            .ok_or_else(|| Error::InvalidCorpus(format!("utterance {} missing from the manifest", u.id)))?;
        if table.id(&e.speaker) != Some(u.speaker) {
            return Err(Error::InvalidCorpus(format!("manifest speaker of {} disagrees with the cache", u.id)));
        }
        match e.split {
            Split::Train => train.push(u),
            Split::Test => test.push(u),
        }
    }
    let n = table.len();
    Ok(Features { table, train: Dataset::new(train, n)?, test: Dataset::new(test, n)? })
}

/// Networks of a checkpoint after checking it against the configuration and
/// the corpus speakers.
fn networks(cfg: &RunConfig, ckpt: &Checkpoint, table: &SpeakerTable) -> Result<Networks> {
    check_compatible(cfg, ckpt, table.names())?;
    let mut nets = Networks::new(&ckpt.meta.model, 0)?;
    for (net, st) in &ckpt.nets {
        nets.params_mut(*net).load_from(&st.params)?;
    }
    Ok(nets)
}

fn check_compatible(cfg: &RunConfig, ckpt: &Checkpoint, speakers: &[String]) -> Result<()> {
    if ckpt.meta.dsp_fingerprint != cfg.dsp.fingerprint() {
        return Err(Error::ConfigMismatch("checkpoint was trained with other analysis settings".into()));
    }
    if ckpt.meta.model != cfg.model_for(speakers.len()) {
        return Err(Error::ConfigMismatch("checkpoint architecture differs from the configuration".into()));
    }
    if ckpt.meta.speakers != speakers {
        return Err(Error::ConfigMismatch("checkpoint speakers differ from the corpus".into()));
    }
    Ok(())
}

/// Stage-1 networks for V1, completed stage-2 networks for V2, with the
/// speaker names they were trained on.
fn load_for_conversion(cfg: &RunConfig, dir: &Path, stage: ConversionStage) -> Result<(Networks, Vec<String>)> {
    let (file, needed) = match stage {
        ConversionStage::V1 => (Stage::Stage1, Stage::Stage1),
        ConversionStage::V2 => (Stage::Stage2, Stage::Stage2),
    };
    let path = dir.join(format!("{file}.ckpt"));
    let missing = |what: String| match stage {
        ConversionStage::V1 => Error::MissingCheckpoint(what),
        ConversionStage::V2 => Error::MissingStage2Checkpoint(what),
    };
    if !path.exists() {
        return Err(missing(format!("{} not found", path.display())));
    }
    let ckpt = Checkpoint::load(&path)?;
    if ckpt.meta.stage != needed.name() {
        return Err(missing(format!("{} has not finished {needed}", path.display())));
    }
    let speakers = ckpt.meta.speakers.clone();
    let nets = networks(cfg, &ckpt, &SpeakerTable::new(speakers.clone())?)?;
    Ok((nets, speakers))
}

fn train(cfg: &RunConfig, stage: Stage, features: &Path, dir: &Path, seed: u64) -> Result<()> {
    let data = load_features(cfg, features)?;
    std::fs::create_dir_all(dir)?;
    let own = dir.join(format!("{stage}.ckpt"));
    let sched = cfg.schedule(seed);
    let (mut trainer, resuming) = if own.exists() {
        (Trainer::from_checkpoint(&Checkpoint::load(&own)?, sched)?, true)
    } else if let Some(prev) = stage.previous() {
        let path = dir.join(format!("{prev}.ckpt"));
        if !path.exists() {
            return Err(Error::MissingCheckpoint(format!("{stage} starts from {}", path.display())));
        }
        let ckpt = Checkpoint::load(&path)?;
        if ckpt.meta.stage != prev.name() {
            return Err(Error::MissingCheckpoint(format!("{} has not finished {prev}", path.display())));
        }
        (Trainer::from_checkpoint(&ckpt, sched)?, false)
    } else {
        let model = cfg.model_for(data.table.len());
        (Trainer::new(&model, sched, &cfg.dsp.fingerprint(), data.table.names().to_vec())?, false)
    };
    check_compatible(cfg, &trainer.to_checkpoint(), data.table.names())?;

    let log_path = dir.join(format!("{stage}.log"));
    let log = OpenOptions::new().create(true).write(true).append(resuming).truncate(!resuming).open(&log_path)?;
    let mut io = StageIo { log: Some(Box::new(BufWriter::new(log))), checkpoint_path: Some(own.clone()), ..StageIo::default() };
    if cfg.sample_every > 0 {
        if let Some(source) = data.test.entries.first().cloned() {
            let samples = dir.join("samples");
            std::fs::create_dir_all(&samples)?;
            let dsp = cfg.dsp.clone();
            let n = data.table.len();
            io.sample_every = cfg.sample_every;
            io.on_sample = Some(Box::new(move |nets: &Networks, stage: Stage, step: u64| {
                let how = if stage == Stage::Stage2 { ConversionStage::V2 } else { ConversionStage::V1 };
                let target = (source.speaker + 1) % n;
                let out = convert(nets, &source.spec, target, how)?;
                let base = samples.join(format!("{stage}_{step:06}"));
                write_wav(&base.with_extension("wav"), &griffin_lim(&out, &dsp)?)?;
                plot_spectrograms(&[&source.spec, &out], &base.with_extension("png"), None)
            }));
        }
    }
    trainer.run_stage(stage, &data.train, &mut io)?;
    trainer.to_checkpoint().save(&own)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(run(["vc-adv", "frobnicate"]), 2);
        assert_eq!(run(["vc-adv", "train", "--stage", "stage9", "--features", "f", "--checkpoint-dir", "d"]), 2);
        assert_eq!(run(["vc-adv", "convert", "--bogus"]), 2);
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(exit_code(&Error::ConfigMismatch("x".into())), 3);
        assert_eq!(exit_code(&Error::MissingStage2Checkpoint("x".into())), 3);
        assert_eq!(exit_code(&Error::MissingCheckpoint("x".into())), 1);
    }

    #[test]
    fn side_file_names() {
        assert_eq!(manifest_path(Path::new("a/feats.bin")), PathBuf::from("a/feats.bin.manifest"));
        assert_eq!(run_path(Path::new("out.wav")), PathBuf::from("out.wav.run.json"));
    }
}
