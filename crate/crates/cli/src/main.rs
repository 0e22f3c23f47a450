use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use kfuse_core::attention::masked_attention_parts;
use kfuse_core::embedding::DEFAULT_HASH_DIM;
use kfuse_core::pipeline::ProviderSettings;
use kfuse_core::stats::load_runs;
use kfuse_core::{
    aggregate, ingest_wikidata, load_allowlist, load_kg, render_csv, render_report, t_test_one_tailed,
    Ablation, Category, Direction, EmbeddingProvider, InjectionConfig, InputRecord, ManualOverrideTable,
    OutputRecord, PackedVisibleMatrix, Pipeline, PipelineRunManifest, ReportRow, RunCounts, RunSeries,
};

#[derive(Parser)]
#[command(name = "kfuse", version, about = "Knowledge-graph fusion preprocessing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter a raw entity-per-line dump into the compact KG format.
    Ingest {
        #[arg(long)]
        raw: PathBuf,
        /// One class id per line (e.g. Q5 for humans).
        #[arg(long)]
        allowlist: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inject knowledge into a JSONL corpus and emit model-ready records.
    Inject(InjectArgs),
    /// Masked attention map of one output record, as CSV.
    Attend {
        #[arg(long)]
        record: PathBuf,
        /// Zero-based line of the record file.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_HASH_DIM)]
        dim: usize,
    },
    /// One-tailed t-test between two run files.
    Stats {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        treatment: PathBuf,
        #[arg(long)]
        direction: DirectionArg,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Higher,
    Lower,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProviderArg {
    Hash,
    Remote,
}

#[derive(clap::Args)]
struct InjectArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    kg: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Defaults to `<output>.manifest.json`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Cosine cutoff (default 0.5 for pairs, 0.6 for single texts).
    #[arg(long, allow_hyphen_values = true)]
    threshold: Option<f64>,
    /// Content-token budget (default 256 for pairs, 128 for single texts).
    #[arg(long)]
    max_length: Option<usize>,
    #[arg(long, default_value_t = 3)]
    max_triplets: usize,
    #[arg(long, default_value_t = kfuse_core::matcher::DEFAULT_MAX_SPAN)]
    max_span: usize,
    /// Comma list of alias, cat, desc.
    #[arg(long, value_delimiter = ',')]
    ablate: Vec<String>,
    #[arg(long)]
    gating: bool,
    #[arg(long, value_enum, default_value_t = ProviderArg::Hash)]
    provider: ProviderArg,
    #[arg(long, env = "KFUSE_ENDPOINT")]
    endpoint: Option<String>,
    #[arg(long, default_value_t = DEFAULT_HASH_DIM)]
    dim: usize,
    #[arg(long, default_value_t = 30)]
    timeout_secs: u64,
    #[arg(long)]
    overrides: Option<PathBuf>,
    /// Recorded in the manifest; processing itself is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(io::stderr)
        .init();

    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { raw, allowlist, out } => {
            let allow = load_allowlist(&allowlist)?;
            let stats = ingest_wikidata(&raw, &allow, &out)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Inject(args) => cmd_inject(args)?,
        Command::Attend {
            record,
            index,
            seed,
            dim,
        } => cmd_attend(&record, index, seed, dim)?,
        Command::Stats {
            baseline,
            treatment,
            direction,
            format,
        } => {
            let direction = match direction {
                DirectionArg::Higher => Direction::HigherBetter,
                DirectionArg::Lower => Direction::LowerBetter,
            };
            let rows = stats_rows(&baseline, &treatment, direction)?;
            match format {
                Format::Table => print!("{}", render_report(&rows)),
                Format::Csv => print!("{}", render_csv(&rows)),
            }
        }
    }
    Ok(())
}

fn first_record(path: &Path) -> Result<Option<InputRecord>> {
    let reader = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            return Ok(Some(serde_json::from_str(&line).context("parsing first input record")?));
        }
    }
    Ok(None)
}

fn build_config(args: &InjectArgs) -> Result<InjectionConfig> {
    let pairs = first_record(&args.input)?.is_some_and(|r| r.is_pair());
    let mut config = if pairs {
        InjectionConfig::for_pairs()
    } else {
        InjectionConfig::for_single()
    };
    if let Some(t) = args.threshold {
        config.threshold = t;
    }
    if let Some(m) = args.max_length {
        config.max_length = m;
    }
    config.max_triplets_per_entity = args.max_triplets;
    config.max_span = args.max_span;
    config.gating = args.gating;
    config.ablation = args
        .ablate
        .iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<Category>())
        .collect::<Result<Ablation, _>>()?;
    config.validate()?;
    Ok(config)
}

fn build_provider(args: &InjectArgs) -> Result<(EmbeddingProvider, ProviderSettings)> {
    match args.provider {
        ProviderArg::Hash => Ok((
            EmbeddingProvider::hash(args.dim),
            ProviderSettings {
                kind: "hash".into(),
                dim: Some(args.dim),
                endpoint: None,
                normalize: true,
            },
        )),
        ProviderArg::Remote => {
            let Some(endpoint) = args.endpoint.clone() else {
                bail!("--provider remote needs --endpoint or KFUSE_ENDPOINT");
            };
            let provider = EmbeddingProvider::remote(&endpoint, Duration::from_secs(args.timeout_secs))?;
            Ok((
                provider,
                ProviderSettings {
                    kind: "remote".into(),
                    dim: None,
                    endpoint: Some(endpoint),
                    normalize: true,
                },
            ))
        }
    }
}

const CHUNK_PER_JOB: usize = 256;

fn cmd_inject(args: InjectArgs) -> Result<()> {
    let config = build_config(&args)?;
    let (provider, provider_settings) = build_provider(&args)?;
    let store = load_kg(&args.kg)?;
    let overrides = args.overrides.as_ref().map(ManualOverrideTable::load).transpose()?;
    let pipeline = Pipeline {
        store: &store,
        provider: &provider,
        config: &config,
        overrides: overrides.as_ref(),
    };
    let jobs = args.jobs.max(1);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;

    let input = BufReader::new(File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?);
    let mut out = BufWriter::new(File::create(&args.output).with_context(|| format!("creating {}", args.output.display()))?);
    let mut counts = RunCounts::default();
    let mut lines = input.lines().enumerate();
    let chunk_size = CHUNK_PER_JOB * jobs;
    loop {
        let mut chunk = Vec::with_capacity(chunk_size);
        for (i, line) in lines.by_ref() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            chunk.push((i + 1, line));
            if chunk.len() == chunk_size {
                break;
            }
        }
        if chunk.is_empty() {
            break;
        }
        let results: Vec<Result<_>> = pool.install(|| {
            chunk
                .par_iter()
                .map(|(line_no, line)| {
                    let record: InputRecord = serde_json::from_str(line)
                        .with_context(|| format!("{}:{line_no}: malformed input", args.input.display()))?;
                    pipeline
                        .process(&record)
                        .with_context(|| format!("sentence {} (line {line_no})", record.id))
                })
                .collect()
        });
        for result in results {
            let processed = result?;
            counts.record(&processed);
            serde_json::to_writer(&mut out, &processed.record)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;

    let manifest = PipelineRunManifest {
        config,
        kg_path: args.kg.clone(),
        input_path: args.input.clone(),
        output_path: args.output.clone(),
        overrides_path: args.overrides.clone(),
        provider: provider_settings,
        counts,
    };
    let manifest_path = args.manifest.clone().unwrap_or_else(|| {
        let mut p = args.output.clone().into_os_string();
        p.push(".manifest.json");
        p.into()
    });
    let mut value = serde_json::to_value(&manifest)?;
    value["seed"] = args.seed.into();
    value["jobs"] = jobs.into();
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&value)?)
        .with_context(|| format!("writing {}", manifest_path.display()))?;
    eprintln!(
        "{} records: {} injected, {} gated, {} uninjected, {} truncated",
        counts.sentences, counts.injected, counts.gated, counts.uninjected, counts.truncated
    );
    Ok(())
}

fn cmd_attend(path: &Path, index: usize, seed: u64, dim: usize) -> Result<()> {
    let reader = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let line = reader
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .nth(index)
        .with_context(|| format!("{} has no record at index {index}", path.display()))??;
    let record: OutputRecord = serde_json::from_str(&line).context("parsing output record")?;
    let visible = PackedVisibleMatrix::from_base64(record.n, &record.packed_visible)?;
    let map = masked_attention_parts(&record.tokens, &record.soft_positions, &visible, dim, seed)?;
    print!("{}", map.to_csv());
    Ok(())
}

fn stats_rows(baseline: &Path, treatment: &Path, direction: Direction) -> Result<Vec<ReportRow>> {
    let base = load_runs(baseline)?;
    let treat = load_runs(treatment)?;
    let name = |p: &Path| p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let (bname, tname) = (name(baseline), name(treatment));
    let mut rows = Vec::new();
    for (metric, bvalues) in &base {
        let Some(tvalues) = treat.get(metric) else {
            continue;
        };
        // Spearman is shown as a percentage, the way results tables print it.
        let display = if metric.to_ascii_lowercase().contains("spearman") { 100.0 } else { 1.0 };
        let b = RunSeries::new(format!("{bname} {metric}"), bvalues.clone(), direction);
        let t = RunSeries::new(format!("{tname} {metric}"), tvalues.clone(), direction);
        for s in [&b, &t] {
            if let Ok((mean, sd)) = aggregate(s) {
                rows.push(ReportRow::Aggregate {
                    label: s.label.clone(),
                    mean: mean * display,
                    sd: sd * display,
                    n: s.values.len(),
                });
            }
        }
        rows.push(ReportRow::TTest {
            label: format!("{tname} vs {bname} {metric}"),
            result: t_test_one_tailed(&b, &t)?,
        });
    }
    if rows.is_empty() {
        bail!("no metric appears in both {} and {}", baseline.display(), treatment.display());
    }
    Ok(rows)
}
