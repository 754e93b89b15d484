use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use coh::eval::{apply_filter, metrics_csv, run_leakage_check, write_query_results, FilterList, MetricsRow};
use coh::fusion::GraphScoreTable;
use coh::gateway::Gateway;
use coh::kg::{load_dataset, queries_from_test, DatasetPaths};
use coh::pipeline::{
    ablate, content_hash, explain, read_run, run_coh, score_traces, sweep, write_run, AblationKind, CohConfig,
    Dataset, RunLabels, RunManifest, ScoreSettings, SweepParam,
};

/// Temporal knowledge-graph forecasting by LLM-guided history chains.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a dataset, report its size and content hash, and optionally
    /// write a canonical copy.
    Prepare {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the prompting phase and cache one trace per query.
    RunCoh(RunArgs),
    /// Like run-coh, with one ablation applied to the config.
    Ablate {
        #[arg(long, value_parser = parse_ablation)]
        kind: AblationKind,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score cached traces, optionally fused with graph-model scores.
    FuseEval {
        #[command(flatten)]
        score: ScoreArgs,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        w: Option<f64>,
        /// Where to write the metrics CSV (default: <run-dir>/metrics.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-score cached traces over a grid of alpha or w values.
    Sweep {
        #[command(flatten)]
        score: ScoreArgs,
        #[arg(long, value_parser = parse_sweep_param)]
        param: SweepParam,
        /// Comma-separated values, e.g. 0.1,0.3,0.5.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Default: <run-dir>/sweep_<param>.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ask the model whether it already knows each test fact.
    LeakageCheck {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        dataset: PathBuf,
        /// Filter list to write, one known fact per line.
        #[arg(long)]
        out: PathBuf,
    },
    /// Ask the model to justify its answers for one cached query.
    Explain {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        query: usize,
        /// Backend override; defaults to the config stored with the run.
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides a single key, e.g. --set n=10. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn is_empty(&self) -> bool {
        self.config.is_none() && self.overrides.is_empty() && self.seed.is_none()
    }

    fn apply(&self, mut cfg: CohConfig) -> Result<CohConfig> {
        if let Some(path) = &self.config {
            cfg = CohConfig::from_file(path)?;
        }
        for o in &self.overrides {
            let (k, v) = o.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {o:?}"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.reseed(seed);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn load(&self) -> Result<CohConfig> {
        self.apply(CohConfig::default())
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    dataset: PathBuf,
    /// Directory for the manifest, traces and transcripts.
    #[arg(long)]
    run_dir: PathBuf,
    /// Drop queries derived from facts in this filter list.
    #[arg(long)]
    filter: Option<PathBuf>,
    /// Only run the first N queries.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    run_id: Option<String>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    run_dir: PathBuf,
    /// Graph-model scores: `query<TAB>entity<TAB>score` per line.
    #[arg(long)]
    graph: Option<PathBuf>,
}

fn parse_ablation(s: &str) -> Result<AblationKind, String> {
    s.parse().map_err(|e: coh::pipeline::PipelineError| e.to_string())
}

fn parse_sweep_param(s: &str) -> Result<SweepParam, String> {
    s.parse().map_err(|e: coh::pipeline::PipelineError| e.to_string())
}

fn prepare(dataset: &Path, out: Option<&Path>) -> Result<()> {
    let (kg, vocab) = load_dataset(&DatasetPaths::from_dir(dataset))?;
    let c = kg.counts();
    println!(
        "{} entities, {} relations; train {}, valid {}, test {}",
        vocab.num_entities(),
        vocab.num_relations(),
        c.train,
        c.valid,
        c.test
    );
    println!("content hash {}", content_hash(&kg, &vocab));
    if let Some(out) = out {
        kg.write_canonical(&vocab, out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn run(args: &RunArgs, ablation: Option<AblationKind>) -> Result<()> {
    let mut cfg = args.config.load()?;
    if let Some(kind) = ablation {
        cfg = ablate(kind, &cfg)?;
    }
    let data = Dataset::open(&args.dataset).with_context(|| format!("loading {}", args.dataset.display()))?;
    let mut queries = queries_from_test(&data.kg)?;
    if let Some(path) = &args.filter {
        let before = queries.len();
        queries = apply_filter(&queries, &FilterList::read(path)?, &data.kg)?;
        log::info!("filter removed {} of {before} queries", before - queries.len());
    }
    if let Some(n) = args.limit {
        queries.truncate(n);
    }
    fs::create_dir_all(&args.run_dir)?;
    let gateway = Gateway::from_config(&cfg.backend, cfg.generation, &data.vocab)?
        .with_transcript_log(&args.run_dir.join("transcripts.jsonl"))?;
    let verbalizer = data.verbalizer(&cfg);
    log::info!("running {} queries with {} workers", queries.len(), cfg.max_in_flight);
    let traces = run_coh(&verbalizer, &gateway, &queries, &cfg)?;
    let variant = ablation.map_or_else(|| "coh".to_string(), |k| k.to_string());
    let manifest = RunManifest {
        run_id: args.run_id.clone().unwrap_or_else(|| format!("{}-{variant}-{}", data.name, cfg.seed)),
        dataset: data.name.clone(),
        variant,
        config_kv: cfg.to_kv(),
        config: cfg,
        input_hash: content_hash(&data.kg, &data.vocab),
        num_entities: data.vocab.num_entities(),
        queries: traces.len(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
    };
    write_run(&args.run_dir, &manifest, &traces)?;
    let failed = traces.iter().filter(|t| !t.errors.is_empty()).count();
    println!(
        "{} traces written to {} ({} model calls, {failed} queries with fallbacks)",
        traces.len(),
        args.run_dir.display(),
        gateway.calls()
    );
    Ok(())
}

fn load_scoring(args: &ScoreArgs) -> Result<(RunManifest, Vec<coh::pipeline::QueryTrace>, Option<GraphScoreTable>)> {
    let (manifest, traces) = read_run(&args.run_dir)?;
    let graph = args.graph.as_deref().map(GraphScoreTable::from_tsv).transpose()?;
    Ok((manifest, traces, graph))
}

fn labels(m: &RunManifest) -> RunLabels<'_> {
    RunLabels { run_id: &m.run_id, dataset: &m.dataset, variant: &m.variant }
}

fn fuse_eval(args: &ScoreArgs, alpha: Option<f64>, w: Option<f64>, out: Option<&Path>) -> Result<()> {
    let (manifest, traces, graph) = load_scoring(args)?;
    let mut settings = ScoreSettings::from_config(&manifest.config, manifest.num_entities);
    if graph.is_none() && w.is_none() && settings.fusion.w > 0.0 {
        log::warn!("no graph scores given; fusing with w = {} against an empty graph", settings.fusion.w);
    }
    settings.fusion.alpha = alpha.unwrap_or(settings.fusion.alpha);
    settings.fusion.w = w.unwrap_or(settings.fusion.w);
    let scored = score_traces(&traces, graph.as_ref(), &settings)?;
    let f = settings.fusion;
    let l = labels(&manifest);
    let row = MetricsRow::new(l.run_id, l.dataset, l.variant, f.alpha, f.w, &scored.metrics);
    let csv = metrics_csv(&[row]);
    let out = out.map_or_else(|| args.run_dir.join("metrics.csv"), Path::to_path_buf);
    fs::write(&out, &csv).with_context(|| format!("writing {}", out.display()))?;
    write_query_results(&args.run_dir.join("per_query.jsonl"), &scored.per_query)?;
    print!("{csv}");
    Ok(())
}

fn run_sweep(args: &ScoreArgs, param: SweepParam, values: &[f64], out: Option<&Path>) -> Result<()> {
    let (manifest, traces, graph) = load_scoring(args)?;
    let settings = ScoreSettings::from_config(&manifest.config, manifest.num_entities);
    let rows = sweep(param, values, &traces, graph.as_ref(), &settings, labels(&manifest))?;
    let csv = metrics_csv(&rows);
    let name = match param {
        SweepParam::Alpha => "sweep_alpha.csv",
        SweepParam::W => "sweep_w.csv",
    };
    let out = out.map_or_else(|| args.run_dir.join(name), Path::to_path_buf);
    fs::write(&out, &csv).with_context(|| format!("writing {}", out.display()))?;
    print!("{csv}");
    Ok(())
}

fn leakage(config: &ConfigArgs, dataset: &Path, out: &Path) -> Result<()> {
    let cfg = config.load()?;
    let data = Dataset::open(dataset)?;
    let gateway = Gateway::from_config(&cfg.backend, cfg.generation, &data.vocab)?;
    let report = run_leakage_check(&data.kg, &data.verbalizer(&cfg), &gateway, cfg.max_in_flight)?;
    report.filter.write(out)?;
    println!(
        "{} facts checked, {} known, {} ambiguous, {} unchecked; filter written to {}",
        report.checked,
        report.filter.len(),
        report.ambiguous.len(),
        report.unchecked.len(),
        out.display()
    );
    Ok(())
}

fn run_explain(dataset: &Path, run_dir: &Path, query: usize, config: &ConfigArgs) -> Result<()> {
    let (manifest, traces) = read_run(run_dir)?;
    let data = Dataset::open(dataset)?;
    if content_hash(&data.kg, &data.vocab) != manifest.input_hash {
        bail!("{} is not the dataset run {} was made from", dataset.display(), manifest.run_id);
    }
    let cfg = if config.is_empty() { manifest.config.clone() } else { config.apply(manifest.config.clone())? };
    let trace = traces
        .iter()
        .find(|t| t.query.id == query)
        .ok_or(coh::pipeline::PipelineError::MissingTrace(query))?;
    let gateway = Gateway::from_config(&cfg.backend, cfg.generation, &data.vocab)?;
    let ex = explain(trace, &data.verbalizer(&cfg), &gateway)?;
    println!("{}", serde_json::to_string_pretty(&ex)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Prepare { dataset, out } => prepare(dataset, out.as_deref()),
        Command::RunCoh(args) => run(args, None),
        Command::Ablate { kind, run: args } => run(args, Some(*kind)),
        Command::FuseEval { score, alpha, w, out } => fuse_eval(score, *alpha, *w, out.as_deref()),
        Command::Sweep { score, param, values, out } => run_sweep(score, *param, values, out.as_deref()),
        Command::LeakageCheck { config, dataset, out } => leakage(config, dataset, out),
        Command::Explain { dataset, run_dir, query, config } => run_explain(dataset, run_dir, *query, config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
