mod config;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use audiopred::analysis::{analyze, per_sequence_rows, write_per_sequence_csv, write_report, StimulusData, Which};
use audiopred::checkpoint::{check_shapes, load_checkpoint, save_checkpoint};
use audiopred::dsp::{save_spectrogram, write_wav};
use audiopred::stimuli::{generate_corpus, generate_set, load_ratings, read_stimulus_manifest, synthesize, write_stimulus_manifest, GenerateOptions};
use audiopred::training::{build_manifest, load_clip_spectrogram, load_split, train, write_loss_log, Manifest, Split};
use audiopred::{Error, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use config::RunConfig;

const STIMULUS_MANIFEST: &str = "stimuli.csv";

#[derive(Parser)]
#[command(name = "audiopred", version, about = "Predictive-coding prediction error on mel spectrograms")]
#[command(after_help = config::keys_help())]
struct Cli {
    /// `key = value` config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; 1 forces the deterministic single-worker path
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Seed for every random choice
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output (repeat for debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cache spectrograms of every WAV in a corpus directory and write a manifest
    Prepare {
        corpus_dir: PathBuf,
        /// Output directory (default: <corpus_dir>/prepared)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate random in-key pitch sequences as WAVs plus a manifest
    GenStimuli {
        #[arg(long)]
        out: PathBuf,
        /// Number of sequences (overrides stimuli.n)
        #[arg(long)]
        n: Option<usize>,
        /// Key, e.g. "C major" (overrides stimuli.key)
        #[arg(long)]
        key: Option<String>,
    },
    /// Generate a synthetic tonal training corpus
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train a model on a prepared manifest
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Checkpoint to write; loss log and resolved config go next to it
        #[arg(long)]
        out: PathBuf,
    },
    /// Total prediction error per stimulus
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory written by `gen-stimuli`
        #[arg(long)]
        stimuli: PathBuf,
        /// `stimulus_id,mean_rating,rank` CSV; default ranking is by interval size
        #[arg(long)]
        ratings: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the analyses and write their CSVs plus regressions.csv
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        stimuli: PathBuf,
        /// `stimulus_id,mean_rating,rank` CSV
        #[arg(long)]
        ratings: Option<PathBuf>,
        /// all | timelapse | interval | context
        #[arg(long, default_value = "all")]
        which: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot two CSV columns as SVG
    Plot {
        csv: PathBuf,
        out: PathBuf,
        #[arg(long)]
        x: Option<String>,
        #[arg(long)]
        y: Option<String>,
        /// Column whose values split the rows into separate series
        #[arg(long)]
        group: Option<String>,
        #[arg(long, value_enum, default_value = "line")]
        style: plot::Style,
        #[arg(long)]
        title: Option<String>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence { .. } => 4,
        Error::Config(_) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}: {}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::from(exit_code(&e))
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.set("seed", &s.to_string())?;
    }
    if let Some(w) = cli.workers {
        cfg.set("workers", &w.to_string())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::InvalidInput(format!("cannot create {}: {e}", dir.display())))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve(&cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Prepare { corpus_dir, out } => {
            let out = out.unwrap_or_else(|| corpus_dir.join("prepared"));
            prepare(&cfg, &corpus_dir, &out)
        }
        Command::GenStimuli { out, n, key } => {
            if let Some(n) = n {
                cfg.stimuli.n = n;
            }
            if let Some(k) = key {
                cfg.stimuli.key = k.parse()?;
            }
            gen_stimuli(&cfg, &out)
        }
        Command::GenCorpus { out, n } => {
            if let Some(n) = n {
                cfg.corpus_n = n;
            }
            gen_corpus(&cfg, &out)
        }
        Command::Train { manifest, out } => train_cmd(&cfg, &manifest, &out),
        Command::Evaluate {
            checkpoint,
            stimuli,
            ratings,
            out,
        } => evaluate_cmd(&cfg, &checkpoint, &stimuli, ratings.as_deref(), &out),
        Command::Analyze {
            checkpoint,
            stimuli,
            ratings,
            which,
            out,
        } => {
            let which: Which = which.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
            analyze_cmd(&cfg, &checkpoint, &stimuli, ratings.as_deref(), which, &out)
        }
        Command::Plot {
            csv,
            out,
            x,
            y,
            group,
            style,
            title,
        } => {
            let svg = plot::render(
                &csv,
                &plot::PlotSpec {
                    x: x.as_deref(),
                    y: y.as_deref(),
                    group: group.as_deref(),
                    style,
                    title: title.as_deref(),
                },
            )?;
            audiopred::atomic_write(&out, svg.as_bytes())
        }
    })
}

fn prepare(cfg: &RunConfig, corpus: &Path, out: &Path) -> Result<()> {
    let mut wavs: Vec<PathBuf> = std::fs::read_dir(corpus)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", corpus.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    if wavs.is_empty() {
        return Err(Error::EmptyCorpus(corpus.to_path_buf()));
    }
    wavs.sort();
    create_dir(out)?;
    wavs.par_iter()
        .map(|p| {
            let spec = load_clip_spectrogram(p, &cfg.dsp)?;
            save_spectrogram(&out.join(format!("{}.mels", spec.clip_id)), &spec)
        })
        .collect::<Result<Vec<()>>>()?;
    let manifest = build_manifest(out, cfg.train.val_fraction, cfg.seed)?;
    manifest.write(&out.join("manifest.csv"))?;
    cfg.write_resolved(out)?;
    log::info!(
        "prepared {} clips ({} train, {} val) in {}",
        manifest.entries.len(),
        manifest.count(Split::Train),
        manifest.count(Split::Val),
        out.display()
    );
    Ok(())
}

fn gen_stimuli(cfg: &RunConfig, out: &Path) -> Result<()> {
    let s = &cfg.stimuli;
    let set = generate_set(&GenerateOptions {
        n: s.n,
        key: s.key,
        range: (s.low, s.high),
        note_duration: s.note_duration,
        seed: cfg.seed,
    })?;
    create_dir(out)?;
    set.sequences
        .par_iter()
        .map(|seq| write_wav(&out.join(format!("{}.wav", seq.id)), &synthesize(seq, &s.timbre)?))
        .collect::<Result<Vec<()>>>()?;
    write_stimulus_manifest(&out.join(STIMULUS_MANIFEST), &set)?;
    cfg.write_resolved(out)
}

fn gen_corpus(cfg: &RunConfig, out: &Path) -> Result<()> {
    create_dir(out)?;
    let clips = generate_corpus(cfg.corpus_n, cfg.seed, cfg.corpus_steady_every)?;
    clips
        .par_iter()
        .map(|c| write_wav(&out.join(format!("{}.wav", c.id)), &c.clip))
        .collect::<Result<Vec<()>>>()?;
    cfg.write_resolved(out)
}

fn parent_dir(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn train_cmd(cfg: &RunConfig, manifest_path: &Path, out: &Path) -> Result<()> {
    let manifest = Manifest::read(manifest_path)?;
    let base = parent_dir(manifest_path);
    let train_specs = load_split(&manifest, &base, Split::Train, &cfg.dsp)?;
    let val_specs = load_split(&manifest, &base, Split::Val, &cfg.dsp)?;
    if train_specs.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no train clips", manifest_path.display())));
    }
    let dir = parent_dir(out);
    create_dir(&dir)?;
    let outcome = train(&train_specs, &val_specs, &cfg.train)?;
    save_checkpoint(out, &outcome.best)?;
    write_loss_log(&dir.join("loss_log.csv"), &outcome.log)?;
    cfg.write_resolved(&dir)?;
    if let Some(e) = outcome.best_epoch {
        log::info!("best epoch {e}; checkpoint {}", out.display());
    }
    Ok(())
}

fn load_stimuli(cfg: &RunConfig, dir: &Path, ratings: Option<&Path>) -> Result<StimulusData> {
    let mut set = read_stimulus_manifest(&dir.join(STIMULUS_MANIFEST))?;
    if let Some(r) = ratings {
        set = load_ratings(r, &set)?;
    }
    StimulusData::load(set, dir, &cfg.dsp)
}

fn load_model(cfg: &RunConfig, path: &Path) -> Result<audiopred::PredNetModel<f32>> {
    let ck = load_checkpoint(path)?;
    let mut expected = ck.model.config().clone();
    expected.height = cfg.dsp.n_mels;
    check_shapes(&ck.model, &expected)?;
    Ok(ck.model)
}

fn evaluate_cmd(cfg: &RunConfig, ckpt: &Path, stimuli: &Path, ratings: Option<&Path>, out: &Path) -> Result<()> {
    let model = load_model(cfg, ckpt)?;
    let data = load_stimuli(cfg, stimuli, ratings)?;
    let evals = audiopred::analysis::evaluate_set(&model, &data.specs, cfg.analysis.eval_hop)?;
    let ranking = data.ranking();
    let rows: Vec<(String, f64, usize)> = evals
        .iter()
        .map(|e| (e.id.clone(), e.total(), ranking.get(&e.id).copied().unwrap_or(0)))
        .collect();
    create_dir(out)?;
    write_per_sequence_csv(&out.join("per_sequence.csv"), &rows)?;
    cfg.write_resolved(out)
}

fn analyze_cmd(cfg: &RunConfig, ckpt: &Path, stimuli: &Path, ratings: Option<&Path>, which: Which, out: &Path) -> Result<()> {
    let model = load_model(cfg, ckpt)?;
    let data = load_stimuli(cfg, stimuli, ratings)?;
    let report = analyze(&model, &data, which, &cfg.analysis)?;
    write_report(out, &report, &data, which, &cfg.analysis)?;
    if which == Which::All {
        write_per_sequence_csv(&out.join("per_sequence.csv"), &per_sequence_rows(&report))?;
        if let Some(rho) = report.musicality_spearman {
            log::info!("spearman rho(rank, total error) = {rho:.4}");
        }
    }
    cfg.write_resolved(out)
}
