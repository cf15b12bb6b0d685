use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use apnea_core::corrupt::{corrupt_study, write_log, CorruptionMode, CorruptionSpec};
use apnea_core::dataio::{
    bundle_from_epochs, epochs_from_bundle, list_studies, load_bundle, load_dataset, prepare_study, save_bundle, synth_study, DataError,
    EcgInput, PrepareOptions, SynthParams,
};
use apnea_core::eval::{gradsuite, grid_csv, grid_rows, run_scenario, EvalOptions, MetricsReport, Scenario};
use apnea_core::trainer::{run_fusion, run_pretrain, Layout, TrainConfig};
use apnea_core::EpochStudy;

#[derive(Parser)]
#[command(name = "apnea", version, about = "Multimodal sleep-apnea detection pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum EcgArg {
    Waveform,
    Rr,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Omit,
    Noise,
    Both,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic multi-rate studies with planted apnea signatures.
    Synth {
        #[arg(long)]
        studies: usize,
        #[arg(long)]
        epochs_per_study: usize,
        #[arg(long, default_value_t = 0.5)]
        apnea_rate: f64,
        #[arg(long, default_value_t = 1.0)]
        separability: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Resample to 128 Hz, filter, normalize and write 30 s epoch bundles.
    Prepare {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "waveform")]
        ecg_input: EcgArg,
        /// Mains notch for ECG, EEG and EOG.
        #[arg(long)]
        notch_hz: Option<f64>,
        /// Baseline high-pass for ECG, EEG and EOG.
        #[arg(long)]
        highpass_hz: Option<f64>,
    },
    /// Omit epoch-channels and/or add white Gaussian noise to prepared data.
    Corrupt {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long, default_value_t = 0.0)]
        omission_ratio: f64,
        #[arg(long, default_value_t = 20.0)]
        snr_db: f64,
        #[arg(long, default_value_t = 1.0)]
        noise_chance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the per-modality autoencoders and classifiers for every fold.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        /// JSON training configuration; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Corrupt the training data with this scenario first.
        #[arg(long)]
        corrupt_train: Option<String>,
    },
    /// Train the fusion head on frozen pretrained models.
    TrainFusion {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pretrained: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        corrupt_train: Option<String>,
    },
    /// Score every test fold under a scenario and write a JSON report.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "clean")]
        scenario: String,
        #[arg(long)]
        report: PathBuf,
        /// Seed of the scenario's corruption draws; defaults to the training seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Finite-difference checks of every op and both training losses.
    Gradcheck,
    /// Collect JSON reports into a missing-ratio × SNR table.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_prepared(dir: &Path) -> Result<Vec<EpochStudy<f32>>> {
    let studies = load_dataset(dir)?.iter().map(epochs_from_bundle).collect::<Result<Vec<_>, _>>()?;
    if studies.is_empty() {
        bail!("no studies under {}", dir.display());
    }
    Ok(studies)
}

fn corrupt_all(studies: &mut [EpochStudy<f32>], spec: Option<&str>, seed: u64) -> Result<()> {
    if let Some(s) = spec {
        let sc: Scenario = s.parse()?;
        for st in studies.iter_mut() {
            sc.apply(st, seed)?;
        }
    }
    Ok(())
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Synth { studies, epochs_per_study, apnea_rate, separability, seed, out } => {
            let p = SynthParams { num_studies: studies, epochs_per_study, apnea_rate, seed, separability };
            p.validate()?;
            for i in 0..studies {
                let b = synth_study(&p, i)?;
                save_bundle(&b, &out.join(&b.study_id))?;
            }
            println!("wrote {studies} studies to {}", out.display());
        }
        Cmd::Prepare { input, out, ecg_input, notch_hz, highpass_hz } => {
            let opts = PrepareOptions {
                ecg_input: match ecg_input {
                    EcgArg::Waveform => EcgInput::Waveform,
                    EcgArg::Rr => EcgInput::RrSeries,
                },
                notch_hz,
                highpass_hz,
                ..PrepareOptions::default()
            };
            let dirs = list_studies(&input)?;
            for d in &dirs {
                let b = load_bundle(d)?;
                let e: EpochStudy<f32> = prepare_study(&b, &opts)?;
                save_bundle(&bundle_from_epochs(&e), &out.join(&b.study_id))?;
            }
            println!("prepared {} studies into {}", dirs.len(), out.display());
        }
        Cmd::Corrupt { input, out, mode, omission_ratio, snr_db, noise_chance, seed } => {
            let mode = match mode {
                ModeArg::Omit => CorruptionMode::Omit,
                ModeArg::Noise => CorruptionMode::Noise,
                ModeArg::Both => CorruptionMode::Both,
            };
            let spec = CorruptionSpec { mode, omission_ratio, target_snr_db: snr_db, noise_occurrence_chance: noise_chance, seed };
            spec.validate()?;
            let mut log = Vec::new();
            let mut studies = load_prepared(&input)?;
            for s in &mut studies {
                corrupt_study(s, &spec, &mut log)?;
                save_bundle(&bundle_from_epochs(s), &out.join(&s.study_id))?;
            }
            write_log(&out.join("corruption_log.jsonl"), &log)?;
            println!("corrupted {} studies ({} epoch-channel actions) into {}", studies.len(), log.len(), out.display());
        }
        Cmd::Pretrain { data, config, out, corrupt_train } => {
            let cfg: TrainConfig = match config {
                Some(p) => serde_json::from_slice(&fs::read(&p).with_context(|| format!("reading {}", p.display()))?)
                    .with_context(|| format!("parsing {}", p.display()))?,
                None => TrainConfig::default(),
            };
            cfg.validate()?;
            let mut studies = load_prepared(&data)?;
            corrupt_all(&mut studies, corrupt_train.as_deref(), cfg.seed)?;
            let plan = run_pretrain(&studies, &cfg, &Layout::new(&out))?;
            println!("pretrained {} folds into {}", plan.k, out.display());
        }
        Cmd::TrainFusion { data, pretrained, out, corrupt_train } => {
            let pre = Layout::new(&pretrained);
            let mut studies = load_prepared(&data)?;
            corrupt_all(&mut studies, corrupt_train.as_deref(), pre.read_config()?.seed)?;
            run_fusion(&studies, &pre, &Layout::new(&out))?;
            println!("fusion checkpoints written to {}", out.display());
        }
        Cmd::Evaluate { data, ckpt, scenario, report, seed, threshold } => {
            let sc: Scenario = scenario.parse()?;
            let layout = Layout::new(&ckpt);
            let seed = match seed {
                Some(s) => s,
                None => layout.read_config()?.seed,
            };
            let studies = load_prepared(&data)?;
            let (r, _) = run_scenario(&sc, &studies, &layout, &EvalOptions { seed, threshold })?;
            r.write(&report)?;
            println!("{}: AUROC {:.4} ± {:.4}, F1 {:.4} ± {:.4}", r.scenario, r.mean.auroc, r.std.auroc, r.mean.f1, r.std.f1);
        }
        Cmd::Gradcheck => {
            let checks = gradsuite::run_suite()?;
            let mut failed = Vec::new();
            for c in &checks {
                let ok = c.passes(gradsuite::TOLERANCE);
                println!("{:<24} {:>6} entries  max rel err {:.3e}  {}", c.name, c.entries, c.max_rel_err, if ok { "ok" } else { "FAIL" });
                if !ok {
                    failed.push(c.name.clone());
                }
            }
            if !failed.is_empty() {
                bail!("gradient checks failed: {}", failed.join(", "));
            }
            println!("all {} gradient checks passed", checks.len());
        }
        Cmd::Report { runs, out } => {
            let mut paths: Vec<PathBuf> = fs::read_dir(&runs)
                .with_context(|| format!("reading {}", runs.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            paths.sort();
            let reports = paths
                .iter()
                .map(|p| MetricsReport::read(p).with_context(|| format!("reading report {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            let rows = grid_rows(&reports)?;
            fs::write(&out, grid_csv(&rows))?;
            println!("{} rows from {} reports written to {}", rows.len(), reports.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<DataError>().map_or(1, DataError::code);
            ExitCode::from(code)
        }
    }
}
