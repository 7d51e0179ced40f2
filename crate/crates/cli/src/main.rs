//! Pipeline entry point: ingest or synthesize rallies, build the experience
//! index, train agents, roll them out and score them.

mod config;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use rallynet::agents::{one_hot, ActMode, Agent, BcAgent, BcModel, HbcAgent, HbcModel, RandomAgent, RuleAgent};
use rallynet::checkpoint::{Checkpoint, Model};
use rallynet::data::synth::{generate_synthetic_dataset, SynthConfig};
use rallynet::data::{
    dataset_hash, ingest_csv, normalize_coordinates, read_jsonl, split_dataset, to_hitter_frame, write_jsonl,
    CourtRanges, CsvSchema, Dataset, ShotType,
};
use rallynet::engine::{RolloutMode, RolloutTrace, StrokeMeta};
use rallynet::eval::{
    build_report, case_study_agent, case_study_dataset, evaluate_agent, render_heatmap, rollout_test_set,
    score_traces, win_rate_consistency, AgentRun, EvalOptions, MetricReport, StateFilter,
};
use rallynet::experience::{build_index, ExperienceIndex};
use rallynet::model::{train, RallyNetAgent};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "rallynet", version, about = "Imitation agents for turn-based rally play")]
struct Cli {
    /// Seed for training, synthesis and evaluation; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML run configuration with [model], [hbc], [engine] and [eval] tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Rollout initialization; overrides the config file.
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    InitOnly,
    TwoStep,
}

impl From<ModeArg> for RolloutMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::InitOnly => RolloutMode::InitOnly,
            ModeArg::TwoStep => RolloutMode::TwoStep,
        }
    }
}

#[derive(Args)]
struct SplitArgs {
    /// Fraction of rallies kept in the main output; the rest go to --test-out.
    #[arg(long, requires = "test_out")]
    split: Option<f64>,
    #[arg(long)]
    test_out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a stroke-per-row CSV export into a normalized, hitter-relative dataset.
    Ingest {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// TOML file renaming the expected CSV columns.
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long, num_args = 2, value_names = ["MIN", "MAX"], default_values_t = [0.0, 610.0])]
        court_x: Vec<f64>,
        #[arg(long, num_args = 2, value_names = ["MIN", "MAX"], default_values_t = [0.0, 1340.0])]
        court_y: Vec<f64>,
        #[command(flatten)]
        split: SplitArgs,
    },
    /// Generate rallies from the two-mode synthetic expert.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        rallies: usize,
        #[arg(long, default_value_t = 6.0)]
        mean_length: f64,
        #[command(flatten)]
        split: SplitArgs,
    },
    /// Build the experience index of a training set.
    Index {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write its checkpoint.
    Train {
        #[arg(value_enum)]
        kind: TrainKind,
        #[arg(long)]
        data: PathBuf,
        /// Experience index of --data; required for rallynet.
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// JSON-lines loss log, one record per optimizer step.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Roll an agent out from every initial state of a dataset.
    Rollout {
        #[command(flatten)]
        agent: AgentArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score agents against a test set, normalized by the random and rule anchors.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        /// Experience index; drives the rule anchor and any rallynet checkpoint.
        #[arg(long)]
        index: PathBuf,
        /// Model checkpoints to evaluate besides the anchors.
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
        /// Pre-generated rallies in dataset format, matched to the test set by rally id.
        #[arg(long)]
        predictions: Vec<PathBuf>,
        /// Player pairs `A,B` whose simulated win rate is compared with the recorded one.
        #[arg(long)]
        matchup: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the table of a saved report.
    Report {
        #[arg(long)]
        report: PathBuf,
    },
    /// Landing and move densities at states receiving a given shot.
    CaseStudy {
        #[arg(long)]
        data: PathBuf,
        /// Incoming shot name, e.g. "clear".
        #[arg(long)]
        shot: String,
        /// Agent to query; without it the recorded actions are used.
        #[arg(long)]
        agent: Option<String>,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Writes the sampled points as JSON too.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainKind {
    Rallynet,
    Bc,
    Hbc,
}

#[derive(Args)]
struct AgentArgs {
    /// `random`, `rule` or a checkpoint path.
    #[arg(long)]
    agent: String,
    #[arg(long)]
    index: Option<PathBuf>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    }
    .with_overrides(cli.seed, cli.mode.map(RolloutMode::from));
    let seed = cfg.eval.base_seed;

    match cli.command {
        Command::Ingest { csv, out, schema, court_x, court_y, split } => {
            let schema: CsvSchema = match schema {
                Some(p) => toml::from_str(&std::fs::read_to_string(&p)?)?,
                None => CsvSchema::default(),
            };
            let mut court = CourtRanges::default();
            (court.x.min, court.x.max) = (court_x[0], court_x[1]);
            (court.y.min, court.y.max) = (court_y[0], court_y[1]);
            let raw = ingest_csv(&csv, &schema, court)?;
            let d = to_hitter_frame(&normalize_coordinates(&raw)?)?;
            write_split(&d, &out, &split)?;
        }
        Command::Synth { out, rallies, mean_length, split } => {
            let d = generate_synthetic_dataset(&SynthConfig::two_mode(rallies, mean_length), seed)?;
            write_split(&d, &out, &split)?;
        }
        Command::Index { data, out } => {
            let d = read_jsonl(&data)?;
            let idx = build_index(&d, cfg.eval.index_cap)?;
            idx.save(&out)?;
            log::info!("indexed {} sequences from {}", idx.sequences.len(), data.display());
        }
        Command::Train { kind, data, index, out, log } => {
            let d = read_jsonl(&data)?;
            let hash = dataset_hash(&d);
            let mut log_file = log.map(|p| File::create(p).map(BufWriter::new)).transpose()?;
            let sink = log_file.as_mut().map(|w| w as &mut dyn Write);
            let ck = match kind {
                TrainKind::Rallynet => {
                    let path = index.ok_or_else(|| anyhow!("training rallynet needs --index"))?;
                    let idx = ExperienceIndex::load(&path, Some(&hash))?;
                    Checkpoint::of_rallynet(&train(&d, &idx, &cfg.model, sink)?.0, &hash)?
                }
                TrainKind::Bc => Checkpoint::of_bc(&BcModel::train(&d, &cfg.model, sink)?.0, &hash)?,
                TrainKind::Hbc => Checkpoint::of_hbc(&HbcModel::train(&d, &cfg.model, &cfg.hbc, sink)?.0, &hash)?,
            };
            if let Some(w) = log_file.as_mut() {
                w.flush()?;
            }
            ck.save(&out)?;
            log::info!("wrote {:?} checkpoint to {}", ck.kind, out.display());
        }
        Command::Rollout { agent, data, out } => {
            let d = read_jsonl(&data)?;
            let idx = agent.index.as_deref().map(load_index).transpose()?;
            let mut a = make_agent(&agent.agent, idx, seed)?;
            let traces = rollout_test_set(a.as_mut(), &d, cfg.engine.mode, seed, cfg.engine.max_len);
            let mut w = BufWriter::new(File::create(&out)?);
            for t in &traces {
                serde_json::to_writer(&mut w, t)?;
                writeln!(w)?;
            }
            w.flush()?;
            log::info!("wrote {} traces to {}", traces.len(), out.display());
        }
        Command::Evaluate { data, index, checkpoints, predictions, matchup, out } => {
            let report = evaluate(&cfg, &data, &index, &checkpoints, &predictions, &matchup)?;
            serde_json::to_writer_pretty(BufWriter::new(File::create(&out)?), &report)?;
            print!("{}", report.render_table());
        }
        Command::Report { report } => {
            let r: MetricReport = serde_json::from_reader(BufReader::new(File::open(&report)?))?;
            print!("{}", r.render_table());
        }
        Command::CaseStudy { data, shot, agent, index, out, json } => {
            let d = read_jsonl(&data)?;
            let shot = ShotType::from_name(&shot).ok_or_else(|| anyhow!("unknown shot type `{shot}`"))?;
            let filter = StateFilter::shot(shot);
            let cs = match agent {
                None => case_study_dataset(&d, &filter)?,
                Some(spec) => {
                    let idx = index.as_deref().map(load_index).transpose()?;
                    let mut a = make_agent(&spec, idx, seed)?;
                    case_study_agent(a.as_mut(), &d, &filter, cfg.eval.case_samples, seed)?
                }
            };
            render_heatmap(&cs, &out)?;
            if let Some(p) = json {
                serde_json::to_writer_pretty(BufWriter::new(File::create(p)?), &cs)?;
            }
            log::info!("{} matching states, heat map at {}", cs.n_states, out.display());
        }
    }
    Ok(())
}

fn write_split(d: &Dataset, out: &Path, split: &SplitArgs) -> Result<()> {
    match (split.split, &split.test_out) {
        (Some(ratio), Some(test_out)) => {
            let (train, test) = split_dataset(d, ratio)?;
            write_jsonl(&train, out)?;
            write_jsonl(&test, test_out)?;
            log::info!("wrote {} + {} rallies", train.rallies.len(), test.rallies.len());
        }
        (None, Some(_)) => bail!("--test-out needs --split"),
        _ => {
            write_jsonl(d, out)?;
            log::info!("wrote {} rallies", d.rallies.len());
        }
    }
    Ok(())
}

fn load_index(path: &Path) -> Result<Arc<ExperienceIndex>> {
    Ok(Arc::new(ExperienceIndex::load(path, None).with_context(|| format!("loading {}", path.display()))?))
}

/// Builds an agent from `random`, `rule` or a checkpoint path.
fn make_agent(spec: &str, idx: Option<Arc<ExperienceIndex>>, seed: u64) -> Result<Box<dyn Agent>> {
    let need_index = |what: &str| idx.clone().ok_or_else(|| anyhow!("{what} needs --index"));
    Ok(match spec {
        "random" => Box::new(RandomAgent::new(seed)),
        "rule" => Box::new(RuleAgent::new(need_index("the rule agent")?, seed)),
        path => {
            let ck = Checkpoint::load(path, None).with_context(|| format!("loading {path}"))?;
            let hash = ck.dataset_hash.clone();
            match ck.into_model()? {
                Model::RallyNet(m) => {
                    let idx = need_index("a rallynet checkpoint")?;
                    if idx.dataset_hash != hash {
                        bail!(rallynet::Error::StaleArtifact { expected: hash, found: idx.dataset_hash.clone() });
                    }
                    Box::new(RallyNetAgent::new(Arc::new(m), idx, ActMode::Sample, seed))
                }
                Model::Bc(m) => Box::new(BcAgent::new(Arc::new(m), ActMode::Sample, seed)),
                Model::Hbc(m) => Box::new(HbcAgent::new(Arc::new(m), ActMode::Sample, seed)),
            }
        }
    })
}

/// Reads generated rallies and wraps them as traces with one-hot shot frames.
fn prediction_traces(path: &Path) -> Result<(String, Vec<RolloutTrace>)> {
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("predictions").to_string();
    let mut traces = Vec::new();
    let reader = BufReader::new(File::open(path)?);
    let d = match read_jsonl(path) {
        Ok(d) => d,
        Err(e) => {
            // Also accept the trace lines written by `rollout`.
            for line in reader.lines() {
                let line = line?;
                if !line.trim().is_empty() {
                    traces.push(serde_json::from_str(&line).with_context(|| format!("{}: {e}", path.display()))?);
                }
            }
            return Ok((name, traces));
        }
    };
    for r in d.rallies {
        let meta = r
            .strokes
            .iter()
            .map(|s| StrokeMeta { shot_probs: one_hot(s.action.shot), forced: false, decision: Default::default() })
            .collect();
        let loser = Some(r.other(&r.winner).to_string());
        traces.push(RolloutTrace { rally: r, meta, seed: 0, termination: None, loser, aborted: None });
    }
    Ok((name, traces))
}

fn evaluate(
    cfg: &RunConfig,
    data: &Path,
    index: &Path,
    checkpoints: &[PathBuf],
    predictions: &[PathBuf],
    matchups: &[String],
) -> Result<MetricReport> {
    let test = read_jsonl(data)?;
    let idx = load_index(index)?;
    let seed = cfg.eval.base_seed;
    let opts = EvalOptions { max_len: cfg.engine.max_len, ..EvalOptions::with_base_seed(cfg.engine.mode, seed) };
    let pairs = matchups
        .iter()
        .map(|m| m.split_once(',').map(|(a, b)| (a.trim().to_string(), b.trim().to_string())))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| anyhow!("--matchup takes `A,B`"))?;

    let mut specs = vec!["random".to_string(), "rule".to_string()];
    specs.extend(checkpoints.iter().map(|p| p.display().to_string()));
    let mut runs: Vec<AgentRun> = Vec::new();
    let mut win_rates = Vec::new();
    for spec in &specs {
        let mut agent = make_agent(spec, Some(idx.clone()), seed)?;
        let run = evaluate_agent(agent.as_mut(), &test, &opts)?;
        if runs.iter().any(|r| r.agent == run.agent) {
            bail!("two evaluated agents are both named `{}`", run.agent);
        }
        let mut diffs = Vec::new();
        for (a, b) in &pairs {
            diffs.push(win_rate_consistency(
                agent.as_mut(),
                &test,
                a,
                b,
                opts.mode,
                cfg.eval.n_per_init,
                seed,
                opts.max_len,
            )?);
        }
        win_rates.push((run.agent.clone(), diffs));
        log::info!("evaluated {}", run.agent);
        runs.push(run);
    }
    for p in predictions {
        let (name, traces) = prediction_traces(p)?;
        let per_seed = opts.seeds.iter().map(|&s| score_traces(&test, &traces, s)).collect::<rallynet::Result<_>>()?;
        runs.push(AgentRun { agent: name, per_seed });
    }

    let mut report = build_report(&test, &opts, &runs)?;
    for (name, diffs) in win_rates {
        if let Some(a) = report.agents.iter_mut().find(|a| a.agent == name) {
            a.win_rate_diffs = diffs;
        }
    }
    Ok(report)
}
