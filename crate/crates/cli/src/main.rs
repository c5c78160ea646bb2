//! `fbkws`: train and compare learnable-filterbank keyword spotters.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fbkws_core::autodiff::GradCheckConfig;
use fbkws_core::backend::{EpochRecord, Fusion};
use fbkws_core::data::synth::{write_corpus, SynthConfig};
use fbkws_core::data::SubsetSpec;
use fbkws_core::experiments::{
    ci_overlap, emit_plots, emit_removal_plots, parse_ranges, pipeline_gradcheck, run_experiment,
    run_filter_removal, run_fusion, ExperimentData, ExperimentReport, ExperimentSpec, ProbeResult,
    RemovalReport,
};
use fbkws_core::frontends::{CochleagramMode, InitScale};

#[derive(Parser)]
#[command(name = "fbkws", version, about = "Learnable filterbank front-ends for keyword spotting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Repeated trials of one training regime, e.g. `FfBt_26` or `GC[t]_Ic-Mel`.
    Run {
        name: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Two front-ends feeding one back-end.
    Fuse {
        a: String,
        b: String,
        #[arg(long, value_enum, default_value_t = FusionArg::Stack)]
        fusion: FusionArg,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Retrain with channel ranges of a fixed front-end zeroed.
    Removal {
        name: String,
        /// Comma-separated 1-based inclusive ranges; `none` is the baseline.
        #[arg(long, default_value = "none,20:26")]
        ranges: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Regenerate CSVs and SVG plots from a report.json or removal.json.
    Plot {
        report: PathBuf,
        /// Defaults to the report's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the full loss gradient.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Gradients below this magnitude are compared in absolute terms.
        #[arg(long, default_value_t = 1e-6)]
        abs_floor: f64,
        /// Write the full result as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Confidence-interval overlap verdict of two reports.
    Compare { a: PathBuf, b: PathBuf },
    /// Write a synthetic Speech-Commands-style corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        speakers: usize,
        /// Keywords every speaker says once.
        #[arg(long, value_delimiter = ',', default_value = "yes,no,up")]
        keywords: Vec<String>,
        #[arg(long, default_value_t = 1)]
        fillers_per_speaker: usize,
        #[arg(long, default_value_t = 2)]
        noise_files: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// Dataset root: one directory per word plus `_background_noise_`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "small")]
    preset: String,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    /// First trial seed; trials use `seed..seed + reps`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// e.g. `all`, `3kw+filler,cap=200/class`, `yes/no+filler`.
    #[arg(long, default_value = "all")]
    subset: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed of the speaker split, shared by every trial.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long, default_value_t = 40)]
    channels: usize,
    #[arg(long, value_enum, default_value_t = ScaleArg::Mel)]
    matrix_init: ScaleArg,
    #[arg(long, default_value = "parseval_rect")]
    cochleagram: String,
    #[arg(long)]
    kernel_length: Option<usize>,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long)]
    no_augment: bool,
    /// Skip per-epoch validation.
    #[arg(long)]
    no_validate: bool,
    /// No per-epoch progress on stderr.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum FusionArg {
    Stack,
    FreqConcat,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Mel,
    Linear,
}

impl CommonArgs {
    fn spec(&self, name: &str) -> Result<ExperimentSpec> {
        let mut spec = ExperimentSpec::new(name, &self.preset).with_context(|| format!("experiment {name:?}"))?;
        spec.repetitions = self.reps;
        spec.base_seed = self.seed;
        spec.frontend.num_channels = self.channels;
        spec.frontend.matrix_init = match self.matrix_init {
            ScaleArg::Mel => InitScale::Mel,
            ScaleArg::Linear => InitScale::Linear,
        };
        spec.frontend.cochleagram = self.cochleagram.parse::<CochleagramMode>()?;
        if let Some(l) = self.kernel_length {
            spec.frontend.kernel_length = l;
        }
        spec.train.batch_size = self.batch_size;
        spec.train.adam.lr = self.lr;
        spec.train.augment.enabled = !self.no_augment;
        spec.train.validate = !self.no_validate;
        if spec.repetitions == 0 {
            bail!("--reps must be at least 1");
        }
        Ok(spec)
    }

    fn data(&self) -> Result<ExperimentData> {
        let subset: SubsetSpec = self.subset.parse().with_context(|| format!("subset {:?}", self.subset))?;
        let (data, skipped) = ExperimentData::load(&self.data, &subset, self.split_seed)
            .with_context(|| format!("loading {}", self.data.display()))?;
        for (path, e) in &skipped {
            eprintln!("skipped {}: {e}", path.display());
        }
        eprintln!(
            "{} clips, {} classes ({})",
            data.clips.len(),
            data.labels.num_classes(),
            self.subset
        );
        Ok(data)
    }
}

fn progress(quiet: bool) -> impl Fn(u64, &EpochRecord) + Sync {
    move |seed, r| {
        if !quiet {
            let val = r.val_accuracy.map(|v| format!(" val {v:.3}")).unwrap_or_default();
            eprintln!(
                "seed {seed} epoch {:>3} loss {:.4} train {:.3}{val}",
                r.epoch, r.train_loss, r.train_accuracy
            );
        }
    }
}

fn print_report(report: &ExperimentReport, out: &Path) {
    println!("{}: {}", report.name, report.headline());
    for (seed, acc) in report.seeds.iter().zip(&report.accuracies) {
        println!("  seed {seed}: {acc:.4}");
    }
    println!("report: {}", out.join("report.json").display());
}

fn write_plots(paths: Vec<PathBuf>) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn print_probes(title: &str, probes: &[ProbeResult]) {
    println!("{title}");
    for p in probes {
        let verdict = if p.passed { "ok" } else { "FAIL" };
        println!(
            "  {:<12} analytic {:+.6e} numeric {:+.6e} rel {:.2e} relu/argmax switches {:>3} {verdict}",
            p.label, p.analytic, p.numeric, p.rel_error, p.branch_switches
        );
        for r in &p.smaller_steps {
            println!(
                "      step {:.0e}: numeric {:+.6e} rel {:.2e} switches {}",
                r.step, r.numeric, r.rel_error, r.branch_switches
            );
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { name, common } => {
            let spec = common.spec(&name)?;
            let data = common.data()?;
            let started = Instant::now();
            let report = run_experiment(&spec, &data, &common.out, &progress(common.quiet))?;
            write_plots(emit_plots(&report, &common.out)?);
            print_report(&report, &common.out);
            eprintln!("finished in {:.1?}", started.elapsed());
        }
        Command::Fuse { a, b, fusion, common } => {
            let (sa, sb) = (common.spec(&a)?, common.spec(&b)?);
            let data = common.data()?;
            let fusion = match fusion {
                FusionArg::Stack => Fusion::Stack,
                FusionArg::FreqConcat => Fusion::FreqConcat,
            };
            let report = run_fusion(&sa, &sb, fusion, &data, &common.out, &progress(common.quiet))?;
            write_plots(emit_plots(&report, &common.out)?);
            print_report(&report, &common.out);
        }
        Command::Removal { name, ranges, common } => {
            let spec = common.spec(&name)?;
            let ranges = parse_ranges(&ranges).with_context(|| format!("ranges {ranges:?}"))?;
            let data = common.data()?;
            let report = run_filter_removal(&spec, &ranges, &data, &common.out, &progress(common.quiet))?;
            write_plots(emit_removal_plots(&report, &common.out)?);
            for p in &report.points {
                let range = p.range.map_or("none".to_string(), |(a, b)| format!("{a}:{b}"));
                let hz = p
                    .center_hz
                    .map(|(lo, hi)| format!(" ({lo:.0}-{hi:.0} Hz)"))
                    .unwrap_or_default();
                let ci = p.summary.ci95.map_or("undefined".to_string(), |h| format!("{h:.4}"));
                println!("{range}{hz}: mean {:.4} ci95 {ci}", p.summary.mean);
            }
        }
        Command::Plot { report, out } => {
            let dir = out.unwrap_or_else(|| report.parent().map(Path::to_path_buf).unwrap_or_default());
            let text = std::fs::read(&report).with_context(|| format!("reading {}", report.display()))?;
            let paths = match serde_json::from_slice::<ExperimentReport>(&text) {
                Ok(r) => emit_plots(&r, &dir)?,
                Err(_) => {
                    let r = RemovalReport::load(&report)
                        .with_context(|| format!("{} is neither an experiment nor a removal report", report.display()))?;
                    emit_removal_plots(&r, &dir)?
                }
            };
            write_plots(paths);
        }
        Command::Gradcheck {
            seed,
            step,
            tolerance,
            abs_floor,
            json,
        } => {
            let cfg = GradCheckConfig {
                step,
                tolerance,
                abs_floor,
                ..GradCheckConfig::default()
            };
            let r = pipeline_gradcheck(seed, &cfg)?;
            print_probes("filterbank matrix W[60..70, 20..25]", &r.matrix);
            print_probes("gammachirp", &r.gammachirp);
            println!(
                "{} of {} entries within {tolerance:e} at step {step:e}; max rel error {:.2e}",
                r.all().filter(|p| p.passed).count(),
                r.all().count(),
                r.max_rel_error()
            );
            if !r.passed() {
                println!(
                    "failing entries agree at a smaller step without relu/argmax switches: {}",
                    r.failures_converge()
                );
            }
            if let Some(path) = json {
                std::fs::write(&path, serde_json::to_vec_pretty(&r)?)?;
            }
            return Ok(r.passed());
        }
        Command::Compare { a, b } => {
            let ra = ExperimentReport::load(&a).with_context(|| format!("reading {}", a.display()))?;
            let rb = ExperimentReport::load(&b).with_context(|| format!("reading {}", b.display()))?;
            println!("{}: {}", ra.name, ra.headline());
            println!("{}: {}", rb.name, rb.headline());
            println!("{}", ci_overlap(&ra.summary, &rb.summary).verdict());
        }
        Command::Synth {
            out,
            speakers,
            keywords,
            fillers_per_speaker,
            noise_files,
            seed,
        } => {
            let cfg = SynthConfig {
                speakers,
                keywords,
                fillers_per_speaker,
                noise_files,
                seed,
                ..SynthConfig::default()
            };
            let n = write_corpus(&out, &cfg)?;
            println!("wrote {n} clips under {}", out.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
