//! Command implementations behind the `relpolicy` binary.
//!
//! Every command takes a [`RunConfig`] and writes its artifacts below
//! `config.out`. Errors carry an exit code: 2 for configuration problems,
//! 3 for numeric failures during learning, 1 for anything else.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use relpolicy::envs::{
    builtin, evaluate, mix_seed, permutation_test, score, Agent, Document, Dynamics,
    EnvInstance, EvalConfig, InstanceReturns, LoadedDomain, PermutationResult, ScoreNormalizer, SplitPlan,
};
use relpolicy::graph::build_graph;
use relpolicy::model::{Model, ModelConfig};
use relpolicy::policy::value_estimate;
use relpolicy::training::{
    agreement, collect_expert, imitation_update, train, ExpertRecord, ExpertSample, ImitationConfig, PpoConfig,
    PreparedDataset, TrainEvent,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] relpolicy::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use relpolicy::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(
                E::InvalidConfig(_)
                | E::CheckpointMismatch(_)
                | E::ChecksumMismatch
                | E::Format(_)
                | E::Json(_)
                | E::InvalidLanguage(_)
                | E::LabelNotLegal { .. },
            ) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Train,
    Imitate,
    Eval,
    Score,
    Inspect,
    CollectExpert,
    Generate,
}

/// Optional JSON file of hyperparameter overrides; omitted fields keep
/// their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Overrides {
    pub model: ModelConfig,
    pub ppo: PpoConfig,
    pub imitation: ImitationConfig,
}

/// Everything a run depends on. Serialized verbatim into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// Path of a domain document, or `builtin:sysadmin` / `builtin:gridnav`.
    pub domain: String,
    pub split_seed: u64,
    /// Instances in the training split.
    pub train_size: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    /// Second agent for `score`: a checkpoint path, `expert`, `noop` or
    /// `random`.
    pub compare: Option<String>,
    pub dataset: Option<PathBuf>,
    pub episodes: Option<usize>,
    pub instance: Option<String>,
    pub permutations: usize,
    #[serde(flatten)]
    pub hyper: Overrides,
}

impl RunConfig {
    pub fn new(mode: Mode, domain: &str, out: &Path) -> Self {
        Self {
            mode,
            domain: domain.to_string(),
            split_seed: 0,
            train_size: 5,
            seed: 0,
            out: out.to_path_buf(),
            checkpoint: None,
            compare: None,
            dataset: None,
            episodes: None,
            instance: None,
            permutations: 1_000_000,
            hyper: Overrides::default(),
        }
    }

    pub fn load_overrides(path: &Path) -> CliResult<Overrides> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    fn validate(&self) -> CliResult<()> {
        self.hyper
            .ppo
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let m = &self.hyper.model;
        if m.embed_dim == 0 || m.critic_heads == 0 {
            return Err(CliError::Config("model dimensions must be positive".into()));
        }
        let dataset = self.dataset.as_ref().filter(|_| self.mode == Mode::Imitate);
        for p in [self.checkpoint.as_ref(), dataset].into_iter().flatten() {
            if !p.exists() {
                return Err(CliError::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

/// Domain document named by `source`: a builtin name or a path.
pub fn read_domain(source: &str) -> CliResult<Document> {
    match source {
        "builtin:sysadmin" => Ok(builtin(Dynamics::Sysadmin)),
        "builtin:gridnav" => Ok(builtin(Dynamics::Gridnav)),
        path => {
            let p = Path::new(path);
            if !p.exists() {
                return Err(CliError::Config(format!("domain file {path} does not exist")));
            }
            Document::read(p).map_err(|e| CliError::Config(format!("{path}: {e}")))
        }
    }
}

/// Loaded domain plus the resolved train/test split.
pub struct Setup {
    pub domain: LoadedDomain,
    pub split: SplitPlan,
}

impl Setup {
    pub fn new(config: &RunConfig) -> CliResult<Self> {
        config.validate()?;
        let doc = read_domain(&config.domain)?;
        let domain = doc.load().map_err(|e| CliError::Config(e.to_string()))?;
        let ids = domain.instance_ids();
        if config.train_size == 0 || config.train_size > ids.len() {
            return Err(CliError::Config(format!(
                "train size {} does not fit {} instances",
                config.train_size,
                ids.len()
            )));
        }
        let split = SplitPlan::new(&ids, config.train_size, config.split_seed);
        Ok(Self { domain, split })
    }

    fn pick(&self, ids: &[String]) -> Vec<&EnvInstance> {
        ids.iter()
            .map(|id| self.domain.instance(id).expect("split ids come from the domain"))
            .collect()
    }

    pub fn train(&self) -> Vec<&EnvInstance> {
        self.pick(&self.split.train)
    }

    pub fn test(&self) -> Vec<&EnvInstance> {
        self.pick(&self.split.test)
    }

    pub fn all(&self) -> Vec<&EnvInstance> {
        self.domain.instances.iter().collect()
    }
}

/// `git describe` of the working tree, or `unknown` outside a repository.
pub fn code_version() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub code_version: String,
    pub crate_version: String,
    pub split: SplitPlan,
    pub language: String,
}

fn prepare_out(config: &RunConfig) -> CliResult<()> {
    fs::create_dir_all(&config.out).map_err(io_err(&config.out))
}

fn write_manifest(config: &RunConfig, setup: &Setup) -> CliResult<()> {
    let manifest = RunManifest {
        config: config.clone(),
        code_version: code_version(),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        split: setup.split.clone(),
        language: format!("{:016x}", setup.domain.language.fingerprint()),
    };
    write_json(&config.out.join("manifest.json"), &manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(relpolicy::Error::from)?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn jsonl_writer(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn write_line<T: Serialize>(w: &mut impl Write, path: &Path, value: &T) -> CliResult<()> {
    let line = serde_json::to_string(value).map_err(relpolicy::Error::from)?;
    writeln!(w, "{line}").map_err(io_err(path))
}

fn load_model(path: &Path, setup: &Setup) -> CliResult<Model> {
    Ok(Model::load(path, &setup.domain.language)?)
}

/// Paths written by [`cmd_train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainArtifacts {
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
    pub stage_checkpoints: Vec<PathBuf>,
    pub samples: u64,
}

/// PPO on the training split. Writes `manifest.json`, `metrics.jsonl`,
/// `stage{k}.ckpt` at every schedule boundary and `model.ckpt` at the end.
pub fn cmd_train(config: &RunConfig, total_steps: Option<u64>) -> CliResult<TrainArtifacts> {
    let mut config = config.clone();
    if let Some(t) = total_steps {
        config.hyper.ppo.total_steps = t;
    }
    let setup = Setup::new(&config)?;
    prepare_out(&config)?;
    write_manifest(&config, &setup)?;
    let mut model = match &config.checkpoint {
        Some(p) => load_model(p, &setup)?,
        None => Model::new(&setup.domain.language, config.hyper.model, config.seed),
    };
    let metrics_path = config.out.join("metrics.jsonl");
    let mut metrics = jsonl_writer(&metrics_path)?;
    let mut stage_checkpoints = Vec::new();
    let mut sink_error = None;
    let train_instances = setup.train();
    let result = train(&mut model, &train_instances, &config.hyper.ppo, config.seed, |m, event| {
        let outcome = match event {
            TrainEvent::Metrics(record) => {
                log::info!(
                    "iteration {} samples {} entropy {:.3} value loss {:.4}",
                    record.iteration,
                    record.samples,
                    record.update.entropy,
                    record.update.value_loss
                );
                write_line(&mut metrics, &metrics_path, &record)
            }
            TrainEvent::StageBoundary { stage, samples } => {
                let path = config.out.join(format!("stage{stage}.ckpt"));
                log::info!("stage {stage} reached after {samples} samples");
                stage_checkpoints.push(path.clone());
                m.save(&path).map_err(CliError::from)
            }
        };
        outcome.map_err(|e| {
            let msg = e.to_string();
            sink_error = Some(e);
            relpolicy::Error::Format(msg)
        })
    });
    if let Some(e) = sink_error {
        return Err(e);
    }
    let samples = result?;
    metrics.flush().map_err(io_err(&metrics_path))?;
    let checkpoint = config.out.join("model.ckpt");
    model.save(&checkpoint)?;
    Ok(TrainArtifacts {
        metrics: metrics_path,
        checkpoint,
        stage_checkpoints,
        samples,
    })
}

/// Runs the scripted expert on the training split and writes one
/// [`ExpertRecord`] per line to `path`.
pub fn cmd_collect_expert(config: &RunConfig, path: &Path) -> CliResult<usize> {
    let setup = Setup::new(config)?;
    let samples = collect_expert(&setup.train(), config.episodes.unwrap_or(10), config.seed)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    write_dataset(path, &samples)?;
    Ok(samples.len())
}

pub fn write_dataset(path: &Path, samples: &[ExpertSample]) -> CliResult<()> {
    let mut w = jsonl_writer(path)?;
    for s in samples {
        write_line(&mut w, path, &s.to_record())?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_dataset(path: &Path, domain: &LoadedDomain) -> CliResult<Vec<ExpertSample>> {
    let file = File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |e: String| CliError::Config(format!("{} line {}: {e}", path.display(), i + 1));
        let record: ExpertRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let sample = ExpertSample::from_record(&domain.language, &record).map_err(|e| bad(e.to_string()))?;
        out.push(sample);
    }
    Ok(out)
}

/// Agreement of the greedy policy with the expert.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    /// Greedy action is one of the expert's equally good choices.
    pub train: f64,
    pub held_out: f64,
    /// Greedy action equals the recorded expert label.
    pub train_strict: f64,
    pub held_out_strict: f64,
    pub samples: usize,
    pub unique_samples: usize,
    pub held_out_samples: usize,
    pub final_nll: f64,
}

fn tie_aware(domain: &LoadedDomain) -> impl FnMut(&ExpertSample, &relpolicy::schema::GroundAction) -> bool + '_ {
    move |s, a| {
        domain
            .instance(&s.instance)
            .is_some_and(|inst| inst.expert_actions(&s.state).contains(a))
    }
}

/// Agreement on `train` and `held_out` samples.
pub fn agreement_report(
    model: &Model,
    domain: &LoadedDomain,
    train: &[ExpertSample],
    held_out: &[ExpertSample],
) -> CliResult<(f64, f64, f64, f64)> {
    let lang = &domain.language;
    let strict = |s: &ExpertSample, a: &relpolicy::schema::GroundAction| a == &s.action;
    Ok((
        agreement(model, lang, train, tie_aware(domain))?,
        agreement(model, lang, held_out, tie_aware(domain))?,
        agreement(model, lang, train, strict)?,
        agreement(model, lang, held_out, strict)?,
    ))
}

/// Behaviour cloning on `config.dataset`. Held-out states come from expert
/// episodes on the test split. Writes `imitation.jsonl` (loss per epoch),
/// `agreement.json` and `model.ckpt`.
pub fn cmd_imitate(config: &RunConfig) -> CliResult<AgreementReport> {
    let setup = Setup::new(config)?;
    let path = config
        .dataset
        .as_ref()
        .ok_or_else(|| CliError::Config("imitation needs --dataset".into()))?;
    let samples = read_dataset(path, &setup.domain)?;
    prepare_out(config)?;
    write_manifest(config, &setup)?;
    let lang = &setup.domain.language;
    let data = PreparedDataset::new(lang, &samples, config.hyper.imitation.chunk)?;
    let mut model = match &config.checkpoint {
        Some(p) => load_model(p, &setup)?,
        None => Model::new(lang, config.hyper.model, config.seed),
    };
    let curve_path = config.out.join("imitation.jsonl");
    let curve = imitation_update(&mut model, &data, &config.hyper.imitation, |epoch, nll| {
        if epoch % 100 == 0 {
            log::info!("epoch {epoch} nll {nll:.5}");
        }
    })?;
    let mut w = jsonl_writer(&curve_path)?;
    for (epoch, nll) in curve.iter().enumerate() {
        write_line(&mut w, &curve_path, &serde_json::json!({ "epoch": epoch, "nll": nll }))?;
    }
    w.flush().map_err(io_err(&curve_path))?;
    let held_out = collect_expert(
        &setup.test(),
        config.episodes.unwrap_or(10),
        mix_seed(config.seed, 0x6865_6c64),
    )?;
    let (train_a, held_a, train_s, held_s) = agreement_report(&model, &setup.domain, &samples, &held_out)?;
    let report = AgreementReport {
        train: train_a,
        held_out: held_a,
        train_strict: train_s,
        held_out_strict: held_s,
        samples: samples.len(),
        unique_samples: data.unique(),
        held_out_samples: held_out.len(),
        final_nll: data.nll(&model)?,
    };
    write_json(&config.out.join("agreement.json"), &report)?;
    model.save(&config.out.join("model.ckpt"))?;
    Ok(report)
}

/// One row of a score table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub split: String,
    pub instance: String,
    pub agent: String,
    pub episodes: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub r_low: f64,
    pub r_max: f64,
    pub score: f64,
}

/// Returns and normalized scores of several agents on one instance set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
    pub normalizer: ScoreNormalizer,
}

impl ScoreTable {
    /// Mean score of `agent` over the instances in this table.
    pub fn mean_score(&self, agent: &str) -> f64 {
        let s: Vec<f64> = self.rows.iter().filter(|r| r.agent == agent).map(|r| r.score).collect();
        s.iter().sum::<f64>() / s.len().max(1) as f64
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<6} {:<16} {:<16} {:>8} {:>10} {:>9} {:>10} {:>10} {:>6}",
            "split", "instance", "agent", "episodes", "mean", "std", "r_low", "r_max", "score"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<6} {:<16} {:<16} {:>8} {:>10.3} {:>9.3} {:>10.3} {:>10.3} {:>6.3}",
                r.split, r.instance, r.agent, r.episodes, r.mean_return, r.std_return, r.r_low, r.r_max, r.score
            );
        }
        out
    }
}

/// Evaluates `agents` plus the random and noop baselines on `instances`.
/// The expert always takes part as a reference for `R_max`, so that a
/// single weak agent cannot define the top of the scale.
pub fn score_table(
    split: &str,
    instances: &[&EnvInstance],
    agents: &[(String, Agent<'_>)],
    eval: &EvalConfig,
) -> CliResult<(ScoreTable, Vec<Vec<InstanceReturns>>)> {
    let random = evaluate(Agent::Random, instances, eval, None)?;
    let noop = evaluate(Agent::Noop, instances, eval, None)?;
    let expert = evaluate(Agent::Expert, instances, eval, None)?;
    let mut named: Vec<(String, Vec<InstanceReturns>)> = vec![
        ("random".into(), random.clone()),
        ("noop".into(), noop.clone()),
        ("expert".into(), expert),
    ];
    for (name, agent) in agents {
        named.push((name.clone(), evaluate(*agent, instances, eval, None)?));
    }
    let refs: Vec<&[InstanceReturns]> = named.iter().map(|(_, r)| r.as_slice()).collect();
    let normalizer = ScoreNormalizer::new(&random, &noop, &refs);
    let mut rows = Vec::new();
    for (name, returns) in &named {
        for (i, r) in returns.iter().enumerate() {
            rows.push(ScoreRow {
                split: split.to_string(),
                instance: r.instance.clone(),
                agent: name.clone(),
                episodes: r.returns.len(),
                mean_return: r.mean,
                std_return: r.std,
                r_low: normalizer.r_low[i],
                r_max: normalizer.r_max[i],
                score: score(r.mean, normalizer.r_low[i], normalizer.r_max[i]),
            });
        }
    }
    Ok((ScoreTable { rows, normalizer }, named.into_iter().map(|(_, r)| r).collect()))
}

fn eval_config(config: &RunConfig) -> EvalConfig {
    EvalConfig {
        episodes: config.episodes.unwrap_or(100),
        seed: config.seed,
        ..EvalConfig::default()
    }
}

fn write_table(path: &Path, tables: &[&ScoreTable]) -> CliResult<()> {
    let mut w = jsonl_writer(path)?;
    for t in tables {
        for row in &t.rows {
            write_line(&mut w, path, row)?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Greedy evaluation of `config.checkpoint` on both splits. Writes
/// `scores.jsonl` and `scores.txt` and returns the two tables.
pub fn cmd_eval(config: &RunConfig) -> CliResult<(ScoreTable, ScoreTable)> {
    let setup = Setup::new(config)?;
    let path = config
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Config("eval needs --checkpoint".into()))?;
    let model = load_model(path, &setup)?;
    prepare_out(config)?;
    write_manifest(config, &setup)?;
    let eval = eval_config(config);
    let agents = [("model".to_string(), Agent::Model { model: &model, greedy: true })];
    let (train_t, _) = score_table("train", &setup.train(), &agents, &eval)?;
    let (test_t, _) = score_table("test", &setup.test(), &agents, &eval)?;
    write_table(&config.out.join("scores.jsonl"), &[&train_t, &test_t])?;
    let text = format!("{}{}", train_t.render(), test_t.render());
    fs::write(config.out.join("scores.txt"), &text).map_err(io_err(&config.out))?;
    print!("{text}");
    Ok((train_t, test_t))
}

/// Result of [`cmd_score`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreComparison {
    pub a: String,
    pub b: String,
    /// Per-episode normalized scores over all instances.
    pub test: PermutationResult,
    pub mean_a: f64,
    pub mean_b: f64,
}

fn episode_scores(returns: &[InstanceReturns], normalizer: &ScoreNormalizer) -> Vec<f64> {
    returns
        .iter()
        .enumerate()
        .flat_map(|(i, r)| {
            r.returns
                .iter()
                .map(move |&x| score(x, normalizer.r_low[i], normalizer.r_max[i]))
        })
        .collect()
}

/// Scores `config.checkpoint` against `config.compare` on all instances
/// and runs a permutation test on their per-episode scores. Writes
/// `scores.jsonl`, `scores.txt` and `comparison.json`.
pub fn cmd_score(config: &RunConfig) -> CliResult<ScoreComparison> {
    let setup = Setup::new(config)?;
    let a_path = config
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Config("score needs --checkpoint".into()))?;
    let a_model = load_model(a_path, &setup)?;
    let compare = config.compare.clone().unwrap_or_else(|| "expert".into());
    let b_model = match compare.as_str() {
        "expert" | "noop" | "random" => None,
        p => Some(load_model(Path::new(p), &setup)?),
    };
    let b_agent = match (compare.as_str(), &b_model) {
        (_, Some(m)) => Agent::Model { model: m, greedy: true },
        ("noop", _) => Agent::Noop,
        ("random", _) => Agent::Random,
        _ => Agent::Expert,
    };
    prepare_out(config)?;
    write_manifest(config, &setup)?;
    let eval = eval_config(config);
    let agents = [
        ("a".to_string(), Agent::Model { model: &a_model, greedy: true }),
        ("b".to_string(), b_agent),
    ];
    let (table, returns) = score_table("all", &setup.all(), &agents, &eval)?;
    let sa = episode_scores(&returns[3], &table.normalizer);
    let sb = episode_scores(&returns[4], &table.normalizer);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0x7065_726d));
    let test = permutation_test(&sa, &sb, config.permutations, &mut rng);
    let comparison = ScoreComparison {
        a: a_path.display().to_string(),
        b: compare,
        test,
        mean_a: table.mean_score("a"),
        mean_b: table.mean_score("b"),
    };
    write_table(&config.out.join("scores.jsonl"), &[&table])?;
    let text = table.render();
    fs::write(config.out.join("scores.txt"), &text).map_err(io_err(&config.out))?;
    write_json(&config.out.join("comparison.json"), &comparison)?;
    print!("{text}");
    println!(
        "mean score a {:.3}, b {:.3}; permutation p = {:.4}",
        comparison.mean_a, comparison.mean_b, comparison.test.p_value
    );
    Ok(comparison)
}

/// Factor graph and action distribution of the initial state of each
/// selected instance, as text.
pub fn cmd_inspect(config: &RunConfig) -> CliResult<String> {
    let setup = Setup::new(config)?;
    let lang = &setup.domain.language;
    let model = match &config.checkpoint {
        Some(p) => load_model(p, &setup)?,
        None => Model::new(lang, config.hyper.model, config.seed),
    };
    let mut out = String::new();
    for inst in setup.all() {
        if config.instance.as_ref().is_some_and(|id| id != &inst.id) {
            continue;
        }
        let graph = build_graph(&inst.initial, lang);
        let dist = model.distributions(&[&graph])?.remove(0);
        let diag = dist.diagnostic(&graph, lang);
        let _ = writeln!(out, "== {} ({} objects, {} factors)", inst.id, graph.num_objects(), graph.num_factors());
        out.push_str(&graph.render(lang));
        let _ = writeln!(out, "value {:.6}", value_estimate(&dist));
        let _ = writeln!(
            out,
            "{}",
            serde_json::to_string_pretty(&diag).map_err(relpolicy::Error::from)?
        );
    }
    if out.is_empty() {
        return Err(CliError::Config(format!(
            "no instance named {}",
            config.instance.as_deref().unwrap_or("")
        )));
    }
    Ok(out)
}

/// Writes a built-in domain document to `path`.
pub fn cmd_generate(domain: &str, path: &Path) -> CliResult<()> {
    let doc = match domain {
        "sysadmin" | "builtin:sysadmin" => builtin(Dynamics::Sysadmin),
        "gridnav" | "builtin:gridnav" => builtin(Dynamics::Gridnav),
        other => return Err(CliError::Config(format!("no built-in domain {other}"))),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, doc.to_json()? + "\n").map_err(io_err(path))
}
