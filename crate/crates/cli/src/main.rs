//! `lowfpr`: command-line front end for calibrating and evaluating ensemble
//! detectors at very low false-positive rates.
//!
//! Exit status: 0 success, 1 usage error, 2 data validation error,
//! 3 numeric or fit failure.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use lowfpr::adjust::{self, CalibrationResult, Features, FitConfig, Variant};
use lowfpr::analysis::{self, GroupSplit, HistogramSpec, Normalization};
use lowfpr::data::{self, Format, PredictionDataset, Split};
use lowfpr::error::ErrorKind;
use lowfpr::protocol;
use lowfpr::roc;
use lowfpr::synth::{self, SynthConfig};
use lowfpr::uncertainty::{self, Measure};

const DEFAULT_TARGETS: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];

#[derive(Parser)]
#[command(name = "lowfpr", version, about = "Low-FPR calibration and evaluation for ensemble detectors")]
struct Cli {
    /// Worker threads for data-parallel steps (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Input {
    /// Prediction dataset (CSV or JSONL).
    #[arg(long)]
    input: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long)]
    format: Option<Format>,
}

impl Input {
    fn load(&self) -> anyhow::Result<PredictionDataset> {
        let format = self.format.unwrap_or_else(|| Format::from_path(&self.input));
        data::load_dataset(&self.input, format).with_context(|| format!("loading {}", self.input.display()))
    }
}

#[derive(Args)]
struct OutDir {
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,
}

impl OutDir {
    fn create(&self, name: &str) -> anyhow::Result<(PathBuf, BufWriter<File>)> {
        fs::create_dir_all(&self.output_dir)
            .with_context(|| format!("creating output directory {}", self.output_dir.display()))?;
        let path = self.output_dir.join(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok((path, BufWriter::new(file)))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check a dataset and report row counts per split and class.
    Validate {
        #[command(flatten)]
        input: Input,
    },
    /// Generate a synthetic dataset.
    Synth {
        /// JSON config; fields left out take their defaults.
        #[arg(long, conflicts_with = "scenario")]
        config: Option<PathBuf>,
        /// Named preset: default, heteroscedastic, novelty, separable.
        #[arg(long)]
        scenario: Option<String>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        format: Option<Format>,
    },
    /// Per-sample ensemble mean and uncertainty decomposition.
    Uncertainties {
        #[command(flatten)]
        input: Input,
        /// Restrict to one split.
        #[arg(long)]
        split: Option<Split>,
        #[command(flatten)]
        out: OutDir,
    },
    /// ROC curve of the ensemble mean.
    Roc {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long, default_value_t = 1e-3)]
        fpr_max: f64,
        #[command(flatten)]
        out: OutDir,
    },
    /// Histogram of one uncertainty measure over [0, ln 2].
    Hist {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        split: Option<Split>,
        #[arg(long, default_value = "epistemic")]
        measure: Measure,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        /// Report densities instead of counts.
        #[arg(long)]
        density: bool,
        #[command(flatten)]
        out: OutDir,
    },
    /// Fit a calibration on the validation split.
    Fit {
        #[command(flatten)]
        input: Input,
        /// g, g+l, g+lv2 or g+lv3.
        #[arg(long)]
        variant: Variant,
        #[arg(long)]
        target_fpr: f64,
        #[arg(long, default_value_t = 0.9)]
        multiplier: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        max_sweeps: usize,
        /// Calibration path; defaults to <output-dir>/calibration.json.
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Apply a calibration to the test split.
    Eval {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        calibration: PathBuf,
        /// Real target FPR; defaults to the calibration's own target.
        #[arg(long)]
        target_fpr: Option<f64>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Run one of the evaluation studies.
    Study(StudyArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StudyKind {
    /// Valid versus invalid threshold protocol.
    Protocol,
    /// Protocol comparison on shrunken validation sets.
    Subsample,
    /// Ensemble against its members.
    Table1,
    /// Uncertainty of correct versus incorrect predictions.
    Errors,
    /// Uncertainty of seen versus unseen malware families.
    Novelty,
    /// Fit every variant on validation and score it on test.
    Pipeline,
}

#[derive(Args)]
struct StudyArgs {
    kind: StudyKind,
    #[command(flatten)]
    input: Input,
    #[command(flatten)]
    out: OutDir,
    /// Repeatable; defaults to 1e-2, 1e-3, 1e-4, 1e-5.
    #[arg(long = "target-fpr")]
    target_fprs: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1,0.1,0.01")]
    fractions: Vec<f64>,
    /// Number of subsampling seeds.
    #[arg(long, default_value_t = 20)]
    study_seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// False positives a validation set must be able to show for a target
    /// to count as attainable.
    #[arg(long, default_value_t = 1)]
    min_fp_count: usize,
    #[arg(long, default_value_t = 1e-3)]
    fpr_max: f64,
    /// Decision threshold for accuracy and correctness.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value = "epistemic")]
    measure: Measure,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    /// Variants for the pipeline study (repeatable; default all).
    #[arg(long = "variant")]
    variants: Vec<Variant>,
    #[arg(long, default_value_t = 0.9)]
    multiplier: f64,
}

/// Invalid flag values detected after parsing.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return 1;
    }
    match err.downcast_ref::<lowfpr::Error>().map(lowfpr::Error::kind) {
        Some(ErrorKind::Usage) => 1,
        Some(ErrorKind::Numeric) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Validate { input } => validate(&input),
        Command::Synth {
            config,
            scenario,
            seed,
            output,
            format,
        } => synth_cmd(config.as_deref(), scenario.as_deref(), seed, &output, format),
        Command::Uncertainties { input, split, out } => uncertainties(&input, split, &out),
        Command::Roc {
            input,
            split,
            fpr_max,
            out,
        } => roc_cmd(&input, split, fpr_max, &out),
        Command::Hist {
            input,
            split,
            measure,
            bins,
            density,
            out,
        } => hist(&input, split, measure, bins, density, &out),
        Command::Fit {
            input,
            variant,
            target_fpr,
            multiplier,
            seed,
            max_sweeps,
            output,
            out,
        } => {
            let config = FitConfig {
                multiplier,
                max_sweeps,
                ..FitConfig::default()
            };
            fit_cmd(&input, variant, target_fpr, seed, &config, output, &out)
        }
        Command::Eval {
            input,
            calibration,
            target_fpr,
            out,
        } => eval_cmd(&input, &calibration, target_fpr, &out),
        Command::Study(args) => study(&args),
    }
}

fn check_target(t: f64) -> anyhow::Result<()> {
    if !(t > 0.0 && t < 1.0) {
        return Err(usage(format!("target FPR {t} must lie in (0, 1)")));
    }
    Ok(())
}

/// Defaults to the standard grid; explicit lists must descend strictly.
fn target_list(given: &[f64]) -> anyhow::Result<Vec<f64>> {
    if given.is_empty() {
        return Ok(DEFAULT_TARGETS.to_vec());
    }
    for &t in given {
        check_target(t)?;
    }
    if given.windows(2).any(|w| w[1] >= w[0]) {
        return Err(usage("target FPRs must be listed in strictly descending order"));
    }
    Ok(given.to_vec())
}

fn nonempty_split(ds: &PredictionDataset, split: Split) -> anyhow::Result<PredictionDataset> {
    let part = ds.filter_split(split);
    if part.is_empty() {
        bail!(lowfpr::Error::InvalidData(format!("dataset has no {split} rows")));
    }
    Ok(part)
}

fn print_counts(ds: &PredictionDataset) {
    let c = ds.counts();
    println!("member count: {}", ds.member_count());
    println!("{:<12}{:>10}{:>11}", "split", "benign", "malicious");
    for (i, split) in Split::ALL.iter().enumerate() {
        println!("{:<12}{:>10}{:>11}", split.as_str(), c.benign[i], c.malicious[i]);
    }
    let (b, m): (usize, usize) = (c.benign.iter().sum(), c.malicious.iter().sum());
    println!("{:<12}{:>10}{:>11}", "total", b, m);
}

fn finish(path: &Path, mut w: BufWriter<File>) -> anyhow::Result<()> {
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn validate(input: &Input) -> anyhow::Result<()> {
    let ds = input.load()?;
    println!("{}: valid, {} rows", input.input.display(), ds.len());
    print_counts(&ds);
    Ok(())
}

fn synth_cmd(
    config: Option<&Path>,
    scenario: Option<&str>,
    seed: Option<u64>,
    output: &Path,
    format: Option<Format>,
) -> anyhow::Result<()> {
    let mut cfg = match config {
        Some(path) => SynthConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => SynthConfig::scenario(scenario.unwrap_or("default"), 0)?,
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let ds = synth::generate(&cfg)?;
    let format = format.unwrap_or_else(|| Format::from_path(output));
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    data::save_dataset(&ds, output, format).with_context(|| format!("writing {}", output.display()))?;
    println!("wrote {} ({} rows, seed {})", output.display(), ds.len(), cfg.seed);
    print_counts(&ds);
    Ok(())
}

fn uncertainties(input: &Input, split: Option<Split>, out: &OutDir) -> anyhow::Result<()> {
    let mut ds = input.load()?;
    if let Some(s) = split {
        ds = nonempty_split(&ds, s)?;
    }
    let rows = uncertainty::compute_uncertainties(&ds)?;
    let (path, mut w) = out.create("uncertainties.csv")?;
    uncertainty::write_uncertainties_csv(&rows, &mut w)?;
    finish(&path, w)
}

fn roc_cmd(input: &Input, split: Split, fpr_max: f64, out: &OutDir) -> anyhow::Result<()> {
    let ds = nonempty_split(&input.load()?, split)?;
    let curve = roc::roc_curve(&uncertainty::ensemble_scores(&ds), &ds.labels())?;
    println!("auc: {:?}", roc::auc(&curve));
    println!("partial auc (fpr <= {fpr_max:e}): {:?}", roc::partial_auc(&curve, fpr_max)?);
    let (path, mut w) = out.create("roc.csv")?;
    roc::write_curve_csv(&curve, &mut w)?;
    finish(&path, w)
}

fn measure_values(ds: &PredictionDataset, measure: Measure) -> anyhow::Result<Vec<f64>> {
    Ok(uncertainty::compute_uncertainties(ds)?
        .iter()
        .map(|r| r.triple.get(measure))
        .collect())
}

fn entropy_spec(bins: usize, density: bool) -> anyhow::Result<HistogramSpec> {
    if bins == 0 {
        return Err(usage("--bins must be at least 1"));
    }
    let norm = if density { Normalization::Density } else { Normalization::Count };
    Ok(HistogramSpec::entropy_range(bins, norm))
}

fn hist(
    input: &Input,
    split: Option<Split>,
    measure: Measure,
    bins: usize,
    density: bool,
    out: &OutDir,
) -> anyhow::Result<()> {
    let spec = entropy_spec(bins, density)?;
    let mut ds = input.load()?;
    if let Some(s) = split {
        ds = nonempty_split(&ds, s)?;
    }
    let h = analysis::histogram(&measure_values(&ds, measure)?, spec)?;
    println!("{} values, underflow {}, overflow {}", h.total, h.underflow, h.overflow);
    let (path, mut w) = out.create("histogram.csv")?;
    h.write_csv(&mut w)?;
    finish(&path, w)
}

fn print_point(what: &str, tpr: f64, fpr: f64, threshold: f64) {
    println!("{what}: tpr {tpr:?}, fpr {fpr:?}, threshold {}", roc::format_threshold(threshold));
}

fn fit_cmd(
    input: &Input,
    variant: Variant,
    target_fpr: f64,
    seed: u64,
    config: &FitConfig,
    output: Option<PathBuf>,
    out: &OutDir,
) -> anyhow::Result<()> {
    check_target(target_fpr)?;
    let val = nonempty_split(&input.load()?, Split::Validation)?;
    let result = adjust::fit(&val, target_fpr, variant, seed, config)?;
    print_point(
        &format!("{} validation", variant.label()),
        result.achieved_val.tpr,
        result.achieved_val.fpr,
        result.global_threshold,
    );
    println!("alpha: {:?}, sweeps: {}", result.params.alpha, result.sweeps_used);
    let path = match output {
        Some(p) => p,
        None => {
            fs::create_dir_all(&out.output_dir)?;
            out.output_dir.join("calibration.json")
        }
    };
    fs::write(&path, result.to_json()?).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn eval_cmd(input: &Input, calibration: &Path, target_fpr: Option<f64>, out: &OutDir) -> anyhow::Result<()> {
    let text = fs::read_to_string(calibration).with_context(|| format!("reading {}", calibration.display()))?;
    let cal = CalibrationResult::from_json(&text).with_context(|| format!("parsing {}", calibration.display()))?;
    let target = target_fpr.unwrap_or(cal.target_fpr);
    check_target(target)?;
    let test = nonempty_split(&input.load()?, Split::Test)?;
    let e = adjust::evaluate_calibration(&test, &cal, target)?;
    println!(
        "{} test at target {target:e}: tpr {:?}, fpr {:?}, combined {:?}",
        cal.params.variant.label(),
        e.tpr,
        e.fpr,
        e.combined
    );
    let (path, mut w) = out.create("eval.csv")?;
    writeln!(w, "variant,target_fpr,tpr,fpr,combined")?;
    writeln!(w, "{},{target:?},{:?},{:?},{:?}", cal.params.variant.label(), e.tpr, e.fpr, e.combined)?;
    finish(&path, w)
}

fn study(args: &StudyArgs) -> anyhow::Result<()> {
    let targets = target_list(&args.target_fprs)?;
    let ds = args.input.load()?;
    match args.kind {
        StudyKind::Protocol => {
            let val = nonempty_split(&ds, Split::Validation)?;
            let test = nonempty_split(&ds, Split::Test)?;
            let points = protocol::relative_error_curve_with(&val, &test, &targets, args.min_fp_count)?;
            for p in &points {
                let err = p.rel_error.map_or("undefined".to_string(), |e| format!("{e:.4}"));
                println!(
                    "target {:e}: valid tpr {:.4}, invalid tpr {:.4}, rel error {err}{}",
                    p.target_fpr,
                    p.valid_tpr,
                    p.invalid_tpr,
                    if p.attainable { "" } else { " (unattainable)" }
                );
            }
            let (path, mut w) = args.out.create("protocol.csv")?;
            protocol::write_curve_csv(&points, &mut w)?;
            finish(&path, w)
        }
        StudyKind::Subsample => {
            if args.fractions.is_empty() {
                return Err(usage("--fractions needs at least one value"));
            }
            for &f in &args.fractions {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(usage(format!("fraction {f} must lie in (0, 1]")));
                }
            }
            let val = nonempty_split(&ds, Split::Validation)?;
            let test = nonempty_split(&ds, Split::Test)?;
            let seeds: Vec<u64> = (0..args.study_seeds).map(|i| lowfpr::mix_seed(args.seed, i)).collect();
            let rows =
                protocol::subsampling_study(&val, &test, &args.fractions, &targets, &seeds, args.min_fp_count)?;
            println!(
                "{} rows ({} fractions x {} seeds x {} targets)",
                rows.len(),
                args.fractions.len(),
                seeds.len(),
                targets.len()
            );
            let (path, mut w) = args.out.create("subsample.csv")?;
            protocol::write_study_csv(&rows, &mut w)?;
            finish(&path, w)
        }
        StudyKind::Table1 => {
            let test = nonempty_split(&ds, Split::Test)?;
            if !(args.fpr_max > 0.0 && args.fpr_max <= 1.0) {
                return Err(usage(format!("--fpr-max {} must lie in (0, 1]", args.fpr_max)));
            }
            let (ens, mem) = analysis::ensemble_vs_members(&test, args.fpr_max, args.threshold)?;
            for r in [&ens, &mem] {
                println!(
                    "{}: accuracy {:.4}, auc {:.4}, partial auc {:.3e}",
                    r.model_name, r.accuracy, r.auc, r.partial_auc
                );
            }
            let (path, mut w) = args.out.create("table1.csv")?;
            analysis::write_comparison_csv(&[ens, mem], &mut w)?;
            finish(&path, w)
        }
        StudyKind::Errors => {
            let test = nonempty_split(&ds, Split::Test)?;
            let groups = analysis::uncertainty_by_correctness(&test, args.threshold, args.measure)?;
            write_groups(args, "errors", &groups)
        }
        StudyKind::Novelty => {
            let known = analysis::observed_families(&ds.filter(|r| r.split != Split::Test));
            let test = nonempty_split(&ds, Split::Test)?;
            println!("{} families seen outside the test split", known.len());
            let groups = analysis::uncertainty_by_novelty(&test, &known, args.measure)?;
            write_groups(args, "novelty", &groups)
        }
        StudyKind::Pipeline => pipeline(args, &ds, &targets),
    }
}

/// Group values plus one histogram per group.
fn write_groups(args: &StudyArgs, stem: &str, groups: &GroupSplit) -> anyhow::Result<()> {
    let spec = entropy_spec(args.bins, true)?;
    for (g, name) in groups.names.iter().enumerate() {
        match groups.mean(g) {
            Some(m) => println!("{name}: {} samples, mean {m:.6}", groups.groups[g].len()),
            None => println!("warning: group `{name}` is empty"),
        }
    }
    let (path, mut w) = args.out.create(&format!("{stem}.csv"))?;
    groups.write_csv(&mut w)?;
    finish(&path, w)?;
    for (g, name) in groups.names.iter().enumerate() {
        let h = analysis::histogram(&groups.values(g), spec)?;
        let (path, mut w) = args.out.create(&format!("{stem}_hist_{name}.csv"))?;
        h.write_csv(&mut w)?;
        finish(&path, w)?;
    }
    Ok(())
}

fn pipeline(args: &StudyArgs, ds: &PredictionDataset, targets: &[f64]) -> anyhow::Result<()> {
    let val = nonempty_split(ds, Split::Validation)?;
    let test = nonempty_split(ds, Split::Test)?;
    let fv = Features::from_dataset(&val)?;
    let ft = Features::from_dataset(&test)?;
    let variants = if args.variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        args.variants.clone()
    };
    let config = FitConfig {
        multiplier: args.multiplier,
        ..FitConfig::default()
    };
    let (path, mut w) = args.out.create("pipeline.csv")?;
    writeln!(w, "target_fpr,variant,val_tpr,val_fpr,test_tpr,test_fpr,combined")?;
    for &t in targets {
        for &v in &variants {
            let cal = adjust::fit_features(&fv, val.member_count(), t, v, args.seed, &config)?;
            let e = adjust::evaluate_features(&ft, &cal, t)?;
            println!(
                "target {t:e} {:<6} tpr {:.4} fpr {:.3e} combined {:.4}",
                v.label(),
                e.tpr,
                e.fpr,
                e.combined
            );
            writeln!(
                w,
                "{t:?},{},{:?},{:?},{:?},{:?},{:?}",
                v.label(),
                cal.achieved_val.tpr,
                cal.achieved_val.fpr,
                e.tpr,
                e.fpr,
                e.combined
            )?;
        }
    }
    finish(&path, w)
}
