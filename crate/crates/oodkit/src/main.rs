use std::error::Error;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;

use oodkit::prompts::read_lines;
use oodkit::report::{self, json_string};
use oodkit::store::{read_bundle, read_bundle_unvalidated, write_bundle, BundleError};
use oodkit::sweep_config::{run_sweep, SweepSpec};
use oodkit::ParallelScorer;
use oodkit_core::insight::{
    check_alignment, check_contrast_with, check_separation_with, AlignmentReport, ContrastReport, DistributionExport,
    InsightConfig, InsightError, SeparationReport,
};
use oodkit_core::metrics::evaluate;
use oodkit_core::prompt::{complexity, load_ood_prompts, render_id_prompts};
use oodkit_core::synth::{generate, perturb_embeddings, OodPromptPlacement, PerturbTarget, SynthConfig};
use oodkit_core::{BundleScorer, MetricResult, ScoreParams, ScoringRule, DEFAULT_TPR_TARGET};

type BoxError = Box<dyn Error>;

/// Prompt-based out-of-distribution scoring over precomputed VLM embedding bundles.
#[derive(Parser, Debug)]
#[command(name = "oodkit", version, propagate_version = true)]
struct Cli {
    /// Worker threads for scoring. Output does not depend on this value.
    #[arg(long, short = 'j', global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: u16,
    /// More log output on stderr (-v info, -vv debug). RUST_LOG also works.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a bundle directory and list every violation (exit 1 if any).
    Validate {
        /// Bundle directory.
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Score every image of a bundle; CSV with columns population,index,score.
    Score {
        #[arg(long)]
        bundle: PathBuf,
        /// score_id, score_id_ood, msp, maxlogit, energy or odin.
        #[arg(long, default_value = "score_id_ood")]
        rule: ScoringRule,
        #[command(flatten)]
        params: ParamArgs,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// AUROC and FPR at the TPR target per OOD dataset, as JSON.
    Metrics {
        /// Bundle to score (with --rule).
        #[arg(long, conflicts_with = "scores", required_unless_present = "scores")]
        bundle: Option<PathBuf>,
        /// Scores CSV written by `score`.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Rule(s) used with --bundle; repeat or comma-separate.
        #[arg(long, value_delimiter = ',', default_value = "score_id,score_id_ood")]
        rule: Vec<ScoringRule>,
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, default_value_t = DEFAULT_TPR_TARGET)]
        tpr_target: f64,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Alignment, contrast and separation checks; writes insights.json and distributions.csv.
    Insights {
        #[arg(long)]
        bundle: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
        /// Histogram bins.
        #[arg(long, default_value_t = 50)]
        bins: usize,
        /// Coverage level for the OOD quantile in the contrast check.
        #[arg(long, default_value_t = 0.95)]
        coverage: f64,
        #[arg(long, default_value_t = DEFAULT_TPR_TARGET)]
        tpr_target: f64,
        /// Output directory [env: OODKIT_OUT_DIR].
        #[arg(long, env = "OODKIT_OUT_DIR", hide_env = true)]
        out: PathBuf,
    },
    /// Generate a synthetic bundle.
    Synth {
        /// SynthConfig JSON; flags below override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dim: Option<usize>,
        /// ID classes.
        #[arg(long)]
        k: Option<usize>,
        /// OOD prompts.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        placement: Option<Placement>,
        /// Output bundle directory [env: OODKIT_OUT_DIR].
        #[arg(long, env = "OODKIT_OUT_DIR", hide_env = true)]
        out: PathBuf,
    },
    /// Add seeded Gaussian noise to the images or prompts of a bundle.
    Perturb {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        target: Target,
        /// Noise scale; per-coordinate standard deviation is scale / sqrt(d).
        #[arg(long)]
        scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output bundle directory [env: OODKIT_OUT_DIR].
        #[arg(long, env = "OODKIT_OUT_DIR", hide_env = true)]
        out: PathBuf,
    },
    /// Run a sweep from a JSON config; writes report.json, report.csv and points.csv.
    Sweep {
        /// Sweep config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's rules.
        #[arg(long, value_delimiter = ',')]
        rules: Vec<ScoringRule>,
        /// Override the config's temperature.
        #[arg(long)]
        tau: Option<f64>,
        /// Override the config's TPR target.
        #[arg(long)]
        tpr_target: Option<f64>,
        /// Output directory; overrides the config's `output` [env: OODKIT_OUT_DIR].
        #[arg(long, env = "OODKIT_OUT_DIR", hide_env = true)]
        out: Option<PathBuf>,
    },
    /// Prompt rendering and complexity statistics.
    #[command(subcommand)]
    Prompts(PromptsCommand),
}

#[derive(Subcommand, Debug)]
enum PromptsCommand {
    /// Render ID prompts, label-major, one per line on standard output.
    Render {
        /// Class labels, one per line.
        #[arg(long)]
        labels: PathBuf,
        /// Templates containing `{label}`, one per line.
        #[arg(long)]
        templates: PathBuf,
    },
    /// Average word count and unique word ratio of a prompt file, as JSON.
    Complexity {
        /// Prompts, one per line.
        #[arg(long)]
        file: PathBuf,
    },
}

#[derive(Args, Debug, Clone, Copy)]
struct ParamArgs {
    /// Softmax temperature for score_id / score_id_ood.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// ODIN temperature.
    #[arg(long, default_value_t = 1000.0)]
    tau_odin: f64,
    /// Decision threshold; adds an id/ood decision column to score output.
    #[arg(long)]
    lambda: Option<f64>,
}

impl ParamArgs {
    fn params(self) -> ScoreParams {
        ScoreParams { tau: self.tau, tau_odin: self.tau_odin, lambda: self.lambda, ..ScoreParams::default() }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Placement {
    AtOodMean,
    Random,
    AtIdSuperclass,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Target {
    Images,
    Prompts,
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), BoxError> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, BoxError> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn load(path: &Path) -> Result<oodkit_core::Bundle, BoxError> {
    read_bundle(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

enum Outcome {
    Ok,
    Invalid,
}

fn validate(bundle: &Path) -> Result<Outcome, BoxError> {
    let b = match read_bundle_unvalidated(bundle) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("invalid: {}: {e}", bundle.display());
            return Ok(Outcome::Invalid);
        }
    };
    let violations = b.validate();
    if violations.is_empty() {
        println!(
            "ok: d={} K={} M={} id_images={} ood_datasets={} labels={} logits={}",
            b.dim(),
            b.k(),
            b.m(),
            b.id_images.rows(),
            b.ood_images.len(),
            b.id_labels.is_some(),
            b.logits.is_some()
        );
        return Ok(Outcome::Ok);
    }
    eprintln!("invalid: {}: {} violation(s)", bundle.display(), violations.len());
    for v in &violations {
        eprintln!("  {v}");
    }
    Ok(Outcome::Invalid)
}

fn score(scorer: &ParallelScorer, bundle: &Path, rule: ScoringRule, params: ScoreParams, out: Option<&Path>) -> Result<(), BoxError> {
    let b = load(bundle)?;
    let scores = scorer.score_bundle(&b, rule, &params)?;
    let text = report::scores_csv(&scores, params.lambda)?;
    emit(out, &text)
}

#[derive(Serialize)]
struct MetricsEntry {
    rule: Option<ScoringRule>,
    dataset: String,
    #[serde(flatten)]
    metrics: MetricResult,
}

#[derive(Serialize)]
struct MetricsOutput {
    source: String,
    bundle_digest: Option<String>,
    params: Option<ScoreParams>,
    tpr_target: f64,
    results: Vec<MetricsEntry>,
}

fn metrics(
    scorer: &ParallelScorer,
    bundle: Option<&Path>,
    scores: Option<&Path>,
    rules: &[ScoringRule],
    params: ScoreParams,
    tpr_target: f64,
    out: Option<&Path>,
) -> Result<(), BoxError> {
    let mut results = Vec::new();
    let output = if let Some(path) = scores {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut pops = report::parse_scores_csv(&text)?;
        let id = pops.remove("id").ok_or("scores file has no `id` population")?;
        for (dataset, ood) in pops {
            results.push(MetricsEntry { rule: None, dataset, metrics: evaluate(&id, &ood, tpr_target)? });
        }
        MetricsOutput { source: path.display().to_string(), bundle_digest: None, params: None, tpr_target, results }
    } else {
        let path = bundle.expect("clap requires --bundle without --scores");
        let b = load(path)?;
        for &rule in rules {
            let s = scorer.score_bundle(&b, rule, &params)?;
            for (dataset, ood) in &s.ood {
                results.push(MetricsEntry { rule: Some(rule), dataset: dataset.clone(), metrics: evaluate(&s.id, ood, tpr_target)? });
            }
        }
        MetricsOutput {
            source: path.display().to_string(),
            bundle_digest: Some(b.content_digest_hex()),
            params: Some(params),
            tpr_target,
            results,
        }
    };
    emit(out, &json_string(&output)?)
}

#[derive(Serialize)]
struct InsightsOutput {
    bundle_digest: String,
    params: ScoreParams,
    config: InsightConfig,
    alignment: Option<AlignmentReport>,
    contrast: ContrastReport,
    separation: Option<SeparationReport>,
    skipped: Vec<String>,
}

fn insights(scorer: &ParallelScorer, bundle: &Path, params: ScoreParams, config: InsightConfig, out: &Path) -> Result<(), BoxError> {
    let b = load(bundle)?;
    let mut skipped = Vec::new();
    let mut optional = |name: &str, e: InsightError| -> Result<(), BoxError> {
        match e {
            InsightError::MissingLabels | InsightError::TooFewClasses(_) | InsightError::NoOodPrompts => {
                warn!("{name} check skipped: {e}");
                skipped.push(format!("{name}: {e}"));
                Ok(())
            }
            other => Err(other.into()),
        }
    };
    let alignment = match check_alignment(&b, &config) {
        Ok(r) => Some(r),
        Err(e) => optional("alignment", e).map(|_| None)?,
    };
    let contrast = check_contrast_with(scorer, &b, &params, &config)?;
    let separation = match check_separation_with(scorer, &b, &params, &config) {
        Ok(r) => Some(r),
        Err(e) => optional("separation", e).map(|_| None)?,
    };
    let mut rows = Vec::new();
    if let Some(a) = &alignment {
        rows.extend(a.distribution_rows());
    }
    rows.extend(contrast.distribution_rows());
    if let Some(s) = &separation {
        rows.extend(s.distribution_rows());
    }
    let output = InsightsOutput { bundle_digest: b.content_digest_hex(), params, config, alignment, contrast, separation, skipped };
    fs::create_dir_all(out)?;
    report::write_json(&out.join("insights.json"), &output)?;
    fs::write(out.join("distributions.csv"), report::distributions_csv(&rows)?)?;
    info!("wrote insights.json and distributions.csv to {}", out.display());
    Ok(())
}

fn write_out(bundle: &oodkit_core::Bundle, out: &Path) -> Result<(), BoxError> {
    write_bundle(bundle, out).map_err(|e: BundleError| format!("{}: {e}", out.display()))?;
    info!("wrote bundle {} ({})", out.display(), bundle.content_digest_hex());
    Ok(())
}

fn sweep(scorer: &ParallelScorer, config: &Path, rules: Vec<ScoringRule>, tau: Option<f64>, tpr: Option<f64>, out: Option<PathBuf>) -> Result<(), BoxError> {
    let mut spec: SweepSpec = read_json(config)?;
    if !rules.is_empty() {
        spec.rules = rules;
    }
    if let Some(t) = tau {
        spec.params.tau = t;
    }
    if let Some(t) = tpr {
        spec.tpr_target = t;
    }
    let base = config.parent().unwrap_or(Path::new("."));
    let out = match (out, &spec.output) {
        (Some(o), _) => o,
        (None, Some(o)) if o.is_absolute() => o.clone(),
        (None, Some(o)) => base.join(o),
        (None, None) => return Err("no output directory: pass --out, set OODKIT_OUT_DIR, or set `output` in the config".into()),
    };
    let r = run_sweep(scorer, &spec, base)?;
    for w in &r.warnings {
        warn!("{w}");
    }
    fs::create_dir_all(&out)?;
    report::write_json(&out.join("report.json"), &r)?;
    fs::write(out.join("report.csv"), report::report_csv(&r)?)?;
    fs::write(out.join("points.csv"), report::points_csv(&r)?)?;
    info!("{} sweep: {} points, wrote {}", r.kind.name(), r.points.len(), out.display());
    Ok(())
}

fn prompts(cmd: PromptsCommand) -> Result<(), BoxError> {
    match cmd {
        PromptsCommand::Render { labels, templates } => {
            let labels = read_lines(&labels).map_err(|e| format!("{}: {e}", labels.display()))?;
            let templates = read_lines(&templates).map_err(|e| format!("{}: {e}", templates.display()))?;
            let set = render_id_prompts(&labels, &templates)?;
            let mut text = set.rendered.join("\n");
            text.push('\n');
            emit(None, &text)
        }
        PromptsCommand::Complexity { file } => {
            let lines = read_lines(&file).map_err(|e| format!("{}: {e}", file.display()))?;
            let c = complexity(&load_ood_prompts(&lines)?)?;
            emit(None, &json_string(&c)?)
        }
    }
}

fn run(cli: Cli) -> Result<Outcome, BoxError> {
    let scorer = ParallelScorer::new(cli.jobs as usize)?;
    match cli.command {
        Command::Validate { bundle } => return validate(&bundle),
        Command::Score { bundle, rule, params, out } => score(&scorer, &bundle, rule, params.params(), out.as_deref())?,
        Command::Metrics { bundle, scores, rule, params, tpr_target, out } => metrics(
            &scorer,
            bundle.as_deref(),
            scores.as_deref(),
            &rule,
            params.params(),
            tpr_target,
            out.as_deref(),
        )?,
        Command::Insights { bundle, params, bins, coverage, tpr_target, out } => {
            insights(&scorer, &bundle, params.params(), InsightConfig { bins, coverage, tpr_target }, &out)?
        }
        Command::Synth { config, seed, dim, k, m, placement, out } => {
            let mut c: SynthConfig = match config {
                Some(path) => read_json(&path)?,
                None => SynthConfig::default(),
            };
            c.seed = seed.unwrap_or(c.seed);
            c.dim = dim.unwrap_or(c.dim);
            c.k = k.unwrap_or(c.k);
            c.m = m.unwrap_or(c.m);
            if let Some(p) = placement {
                c.ood_prompt_placement = match p {
                    Placement::AtOodMean => OodPromptPlacement::AtOodMean,
                    Placement::Random => OodPromptPlacement::Random,
                    Placement::AtIdSuperclass => OodPromptPlacement::AtIdSuperclass,
                };
            }
            write_out(&generate(&c)?, &out)?
        }
        Command::Perturb { bundle, target, scale, seed, out } => {
            let target = match target {
                Target::Images => PerturbTarget::Images,
                Target::Prompts => PerturbTarget::Prompts,
            };
            write_out(&perturb_embeddings(&load(&bundle)?, target, scale, seed)?, &out)?
        }
        Command::Sweep { config, rules, tau, tpr_target, out } => sweep(&scorer, &config, rules, tau, tpr_target, out)?,
        Command::Prompts(cmd) => prompts(cmd)?,
    }
    Ok(Outcome::Ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Invalid) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
