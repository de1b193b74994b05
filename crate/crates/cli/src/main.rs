use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use segmetrics::analysis::DEFAULT_BINS;
use segmetrics::jml::check::{run_suite, CheckConfig};
use segmetrics::report::{self, EvalOptions, DEFAULT_TOP_WORST};
use segmetrics::{DatasetManifest, Error, NullSemantics};

#[derive(Parser)]
#[command(name = "segmetrics", version, about = "Per-image and per-class segmentation metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate predictions against ground truth and write a JSON report.
    Compute(ComputeArgs),
    /// Check ground truth against instance annotations; writes CSV.
    Audit(AuditArgs),
    /// Histogram of per-image mIoU as JSON.
    Histogram(HistogramArgs),
    /// Run the loss property suites.
    JmlCheck(JmlCheckArgs),
}

#[derive(Args)]
struct Common {
    /// Dataset manifest (JSON). Relative paths inside resolve against its directory.
    manifest: PathBuf,
    /// Worker threads for decoding and per-image counting.
    #[arg(long, env = "SEGMETRICS_JOBS", default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: u16,
    /// Write here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ComputeArgs {
    #[command(flatten)]
    common: Common,
    /// Override the manifest's NULL semantics.
    #[arg(long, value_parser = parse_semantics)]
    semantics: Option<NullSemantics>,
    #[arg(long, default_value_t = DEFAULT_BINS, value_parser = positive)]
    bins: usize,
    #[arg(long, default_value_t = DEFAULT_TOP_WORST, value_parser = positive)]
    top_worst: usize,
    /// Ignore instance annotations (mIoU^K is reported as null).
    #[arg(long)]
    no_instances: bool,
    /// Also write score_matrix.csv, per_class.csv, worst_images.csv,
    /// audit.csv and instances.csv into this directory.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct HistogramArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_parser = parse_semantics)]
    semantics: Option<NullSemantics>,
    #[arg(long, default_value_t = DEFAULT_BINS, value_parser = positive)]
    bins: usize,
}

#[derive(Args)]
struct JmlCheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trials for each value property.
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    #[arg(long, default_value_t = 1_000)]
    gradient_trials: usize,
    /// Offset added to the analytic gradient; exercises the failure path.
    #[arg(long, hide = true, default_value_t = 0.0)]
    perturb_gradient: f64,
}

fn parse_semantics(s: &str) -> Result<NullSemantics, String> {
    match s {
        "ours" => Ok(NullSemantics::Ours),
        "csurka" => Ok(NullSemantics::Csurka),
        other => Err(format!("unknown semantics '{other}' (expected ours or csurka)")),
    }
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

/// Exit status: 1 for anything wrong with the inputs, 2 when a file could not
/// be read or written.
fn exit_code(err: &anyhow::Error) -> u8 {
    let io = err.chain().any(|cause| {
        cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<Error>().is_some_and(Error::is_io)
    });
    if io {
        2
    } else {
        1
    }
}

/// The error chain joined with ": ", skipping causes whose text the previous
/// message already includes.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn base_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn emit(output: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match output {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn compute(args: ComputeArgs) -> anyhow::Result<bool> {
    let manifest = DatasetManifest::load(&args.common.manifest)?;
    let opts = EvalOptions {
        semantics: args.semantics,
        bins: args.bins,
        top_worst: args.top_worst,
        instances: !args.no_instances,
        jobs: args.common.jobs.into(),
    };
    let label = args.common.manifest.display().to_string();
    let eval = report::evaluate(&manifest, &base_dir(&args.common.manifest), &label, &opts)?;
    emit(args.common.output.as_deref(), &eval.to_json())?;

    if let Some(dir) = &args.csv {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut files = vec![
            ("score_matrix.csv", eval.score_matrix_csv()?),
            ("per_class.csv", eval.per_class_csv()?),
            ("worst_images.csv", eval.worst_images_csv()?),
            ("audit.csv", report::audit_csv(&eval.audit, &eval.class_names)?),
        ];
        if let Some(text) = eval.instances_csv()? {
            files.push(("instances.csv", text));
        }
        for (name, text) in files {
            let path = dir.join(name);
            fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(true)
}

fn audit(args: AuditArgs) -> anyhow::Result<bool> {
    let manifest = DatasetManifest::load(&args.common.manifest)?;
    let findings = report::audit(&manifest, &base_dir(&args.common.manifest), args.common.jobs.into())?;
    if !findings.is_empty() {
        log::warn!("{} label discrepancies", findings.len());
    }
    emit(
        args.common.output.as_deref(),
        &report::audit_csv(&findings, &manifest.class_names)?,
    )?;
    Ok(true)
}

fn histogram(args: HistogramArgs) -> anyhow::Result<bool> {
    let manifest = DatasetManifest::load(&args.common.manifest)?;
    let opts = EvalOptions {
        semantics: args.semantics,
        bins: args.bins,
        jobs: args.common.jobs.into(),
        ..EvalOptions::default()
    };
    let h = report::histogram_only(&manifest, &base_dir(&args.common.manifest), &opts)?;
    emit(args.common.output.as_deref(), &report::histogram_json(&h))?;
    Ok(true)
}

fn jml_check(args: JmlCheckArgs) -> anyhow::Result<bool> {
    let config = CheckConfig {
        seed: args.seed,
        trials: args.trials,
        gradient_trials: args.gradient_trials,
        gradient_perturbation: args.perturb_gradient,
    };
    let outcomes = run_suite(&config);
    for o in &outcomes {
        println!("{o}");
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed()).map(|o| o.name).collect();
    if failed.is_empty() {
        println!("all {} properties passed (seed {})", outcomes.len(), args.seed);
        Ok(true)
    } else {
        println!("FAILED: {}", failed.join(", "));
        Ok(false)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Compute(a) => compute(a),
        Command::Audit(a) => audit(a),
        Command::Histogram(a) => histogram(a),
        Command::JmlCheck(a) => jml_check(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {}", describe(&err));
            ExitCode::from(exit_code(&err))
        }
    }
}
