//! Command-line driver. Every subcommand reads an optional TOML config file
//! (see [`CliConfig`]) and applies flag overrides on top of it.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{parse_corpus, read_corpus, read_parsed_corpus};
use crate::error::{Error, Result};
use crate::objectives::{
    grpo_loss, la_grpo_loss, sparsity_stats, GrpoForm, Rollout, RolloutGroup, SequenceCounts,
};
use crate::policy::PolicyParameters;
use crate::reward::{composite_reward, ModelOutput, RewardConfig};
use crate::trajectory::{build_trajectory, read_dataset, DatasetRecord, TemplateTable};

use super::ablation::{run_ablation, RewardTerm};
use super::efficiency::{efficiency_report, with_latencies};
use super::task::HintWorld;
use super::train::{run_training, stream_seed, Objective, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub min_ops: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { min_ops: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Record `i` renders its transitions with seed `template_seed + i`.
    pub template_seed: u64,
    /// Optional template table (JSON); the built-in table otherwise.
    pub templates: Option<PathBuf>,
}

/// Top-level config file. `[reward]` drives `score`; the hint task uses
/// `[train.reward]`, whose defaults are scaled to its short answers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub corpus: CorpusConfig,
    pub dataset: DatasetConfig,
    pub reward: RewardConfig,
    pub train: TrainConfig,
}

impl CliConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: CliConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.corpus.min_ops == 0 {
            return Err(Error::Config("corpus.min_ops must be >= 1".into()));
        }
        self.reward.validate()?;
        self.train.validate()
    }
}

/// One model output for `score` and `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputLine {
    pub text: String,
    #[serde(default)]
    pub gold: Option<String>,
    /// Wall-clock seconds, if measured.
    #[serde(default)]
    pub latency: Option<f64>,
}

pub fn read_output_lines(input: &str) -> Result<Vec<OutputLine>> {
    input
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::parse(n + 1, e.to_string())))
        .collect()
}

#[derive(Debug, Parser)]
#[command(name = "functok", version, about = "Functional-token reasoning toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract functional operations from a code corpus.
    Parse(ParseArgs),
    /// Turn parsed records into trajectory dataset records.
    BuildDataset(BuildArgs),
    /// Score model outputs with the composite reward.
    Score(ScoreArgs),
    /// Train a policy on the hint task.
    Train(TrainArgs),
    /// Train once per disabled reward term and compare.
    Ablate(AblateArgs),
    /// Token sparsity of a dataset and gradient share of a policy.
    Diagnose(DiagnoseArgs),
    /// Per-query token accounting.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> anyhow::Result<CliConfig> {
        match &self.config {
            None => Ok(CliConfig::default()),
            Some(p) => {
                let s = read(p)?;
                CliConfig::from_toml(&s).with_context(|| format!("invalid config {}", p.display()))
            }
        }
    }
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub input: PathBuf,
    /// Retained records, one per line. Stdout if omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub min_ops: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub template_seed: Option<u64>,
    #[arg(long)]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ObjectiveArg {
    Sft,
    Grpo,
    LaGrpo,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Sft => Objective::Sft,
            ObjectiveArg::Grpo => Objective::Grpo,
            ObjectiveArg::LaGrpo => Objective::LaGrpo,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GrpoFormArg {
    StandardClip,
    PaperLiteral,
}

#[derive(Debug, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum)]
    pub objective: Option<ObjectiveArg>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub tasks_per_step: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub eval_episodes: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub clip_eps: Option<f64>,
    #[arg(long, value_enum)]
    pub grpo_form: Option<GrpoFormArg>,
}

impl TrainOverrides {
    fn apply(&self, cfg: &mut TrainConfig) {
        cfg.seed = self.seed;
        if let Some(o) = self.objective {
            cfg.objective = o.into();
        }
        set(&mut cfg.steps, self.steps);
        set(&mut cfg.group_size, self.group_size);
        set(&mut cfg.tasks_per_step, self.tasks_per_step);
        set(&mut cfg.learning_rate, self.lr);
        set(&mut cfg.max_len, self.max_len);
        set(&mut cfg.eval_episodes, self.eval_episodes);
        set(&mut cfg.rl.anchor_alpha, self.alpha);
        set(&mut cfg.rl.kl_beta, self.beta);
        set(&mut cfg.rl.clip_eps, self.clip_eps);
        if let Some(f) = self.grpo_form {
            cfg.rl.grpo_form = match f {
                GrpoFormArg::StandardClip => GrpoForm::StandardClip,
                GrpoFormArg::PaperLiteral => GrpoForm::PaperLiteral,
            };
        }
    }
}

fn set<T: Copy>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    /// Metrics log, one record per step. Stdout if omitted.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Held-out evaluation summary (JSON).
    #[arg(long)]
    pub eval: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    /// Terms to disable, one run each.
    #[arg(long, value_delimiter = ',', default_values_t = vec!["fmt".to_string(), "len".to_string(), "spam".to_string()])]
    pub disable: Vec<String>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Dataset records for the sparsity statistics.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Hint-task policy for the gradient-share diagnostic.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub groups: usize,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn read(p: &Path) -> anyhow::Result<String> {
    fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))
}

fn emit(path: Option<&Path>, content: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, content).with_context(|| format!("cannot write {}", p.display())),
        None => {
            std::io::stdout().write_all(content.as_bytes())?;
            Ok(())
        }
    }
}

fn jsonl<T: Serialize>(items: &[T]) -> anyhow::Result<String> {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it)?);
        out.push('\n');
    }
    Ok(out)
}

fn pretty<T: Serialize>(v: &T) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Parse(a) => cmd_parse(a),
        Command::BuildDataset(a) => cmd_build(a),
        Command::Score(a) => cmd_score(a),
        Command::Train(a) => cmd_train(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn cmd_parse(a: ParseArgs) -> anyhow::Result<()> {
    let mut cfg = a.config.load()?;
    set(&mut cfg.corpus.min_ops, a.min_ops);
    cfg.validate()?;
    let records = read_corpus(&read(&a.input)?)?;
    let (retained, report) = parse_corpus(&records, cfg.corpus.min_ops)?;
    emit(a.output.as_deref(), &jsonl(&retained)?)?;
    if let Some(p) = &a.report {
        emit(Some(p), &pretty(&report)?)?;
    }
    Ok(())
}

fn cmd_build(a: BuildArgs) -> anyhow::Result<()> {
    let mut cfg = a.config.load()?;
    set(&mut cfg.dataset.template_seed, a.template_seed);
    if a.templates.is_some() {
        cfg.dataset.templates = a.templates;
    }
    let table = match &cfg.dataset.templates {
        Some(p) => TemplateTable::from_json(&read(p)?)?,
        None => TemplateTable::builtin(),
    };
    let parsed = read_parsed_corpus(&read(&a.input)?)?;
    let records: Vec<DatasetRecord> = parsed
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let seed = cfg.dataset.template_seed.wrapping_add(i as u64);
            let t = build_trajectory(&table, &r.problem_text, &r.ops, &r.answer, seed);
            DatasetRecord::from_trajectory(&r.id, &t, &r.answer)
        })
        .collect();
    emit(a.output.as_deref(), &jsonl(&records)?)
}

/// Scores each line; errors if a line has no gold answer.
pub fn score_lines(lines: &[OutputLine], cfg: &RewardConfig) -> Result<Vec<crate::reward::RewardBreakdown>> {
    lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let gold = l
                .gold
                .as_deref()
                .ok_or_else(|| Error::parse(i + 1, "missing `gold`"))?;
            Ok(composite_reward(&ModelOutput::from_text(&l.text), gold, cfg))
        })
        .collect()
}

fn cmd_score(a: ScoreArgs) -> anyhow::Result<()> {
    let cfg = a.config.load()?;
    let lines = read_output_lines(&read(&a.input)?)?;
    let scored = score_lines(&lines, &cfg.reward)?;
    emit(a.output.as_deref(), &jsonl(&scored)?)
}

fn train_config(config: &ConfigArg, overrides: &TrainOverrides) -> anyhow::Result<TrainConfig> {
    let mut cfg = config.load()?.train;
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let cfg = train_config(&a.config, &a.overrides)?;
    let world = HintWorld::new(cfg.n_answers)?;
    let out = run_training(&cfg, &world.all_tasks())?;
    emit(a.metrics.as_deref(), &out.metrics_jsonl())?;
    if let Some(p) = &a.checkpoint {
        emit(Some(p), &out.params.to_checkpoint())?;
    }
    if let Some(p) = &a.eval {
        emit(Some(p), &pretty(&out.eval)?)?;
    }
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> anyhow::Result<()> {
    let cfg = train_config(&a.config, &a.overrides)?;
    let disable = a
        .disable
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<RewardTerm>())
        .collect::<Result<BTreeSet<_>>>()?;
    let world = HintWorld::new(cfg.n_answers)?;
    let report = run_ablation(&cfg, &disable, &world.all_tasks())?;
    emit(a.output.as_deref(), &pretty(&report)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientShareSummary {
    pub groups: usize,
    /// Groups with at least one functional token.
    pub groups_with_functional: usize,
    pub mean_share_grpo: Option<f64>,
    pub mean_share_la_grpo: Option<f64>,
}

/// Samples groups from `params` on the hint task and averages the
/// functional gradient share under both objectives. The policy serves as
/// both current and old policy; the reference is uniform.
pub fn gradient_share_summary(
    world: &HintWorld,
    params: &PolicyParameters,
    cfg: &TrainConfig,
    groups: usize,
) -> Result<GradientShareSummary> {
    if params.vocab_size() != world.vocab.len() {
        return Err(Error::LengthMismatch {
            what: "checkpoint vocabulary",
            expected: world.vocab.len(),
            got: params.vocab_size(),
        });
    }
    let reference = world.initial_policy();
    let mut task_rng = ChaCha8Rng::seed_from_u64(stream_seed(&[cfg.seed, 0xD1A6]));
    let (mut n, mut sum_g, mut sum_la) = (0usize, 0.0, 0.0);
    for gi in 0..groups {
        let task = world.sample_task(&mut task_rng);
        let mut rollouts = Vec::with_capacity(cfg.group_size);
        for g in 0..cfg.group_size {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[cfg.seed, 0xD1A6, gi as u64, g as u64]));
            let ep = world.sample_episode(params, &task, cfg.max_len, &mut rng)?;
            let out = ep.output(&world.vocab)?;
            let reward = composite_reward(&out, &task.gold_answer_text, &cfg.reward).total;
            rollouts.push(Rollout::from_policies(&world.vocab, ep.generated, ep.contexts, params, &reference, reward)?);
        }
        let group = RolloutGroup::new(format!("diag:{gi}"), rollouts)?;
        if group.functional_count() == 0 {
            continue;
        }
        let g = grpo_loss(params, &world.vocab, &group, &cfg.rl)?;
        let la = la_grpo_loss(params, &world.vocab, &group, &cfg.rl)?;
        if let (Some(a), Some(b)) = (g.grad_share_func, la.grad_share_func) {
            n += 1;
            sum_g += a;
            sum_la += b;
        }
    }
    let mean = |s: f64| (n > 0).then(|| s / n as f64);
    Ok(GradientShareSummary {
        groups,
        groups_with_functional: n,
        mean_share_grpo: mean(sum_g),
        mean_share_la_grpo: mean(sum_la),
    })
}

fn cmd_diagnose(a: DiagnoseArgs) -> anyhow::Result<()> {
    if a.dataset.is_none() && a.checkpoint.is_none() {
        bail!("diagnose needs --dataset and/or --checkpoint");
    }
    let mut cfg = a.config.load()?.train;
    cfg.seed = a.seed;
    let mut out = serde_json::Map::new();
    let mut text = String::new();
    if let Some(p) = &a.dataset {
        let records = read_dataset(&read(p)?)?;
        let counts: Vec<SequenceCounts> = records.iter().map(SequenceCounts::from_record).collect();
        let s = sparsity_stats(&counts)?;
        text += &format!(
            "sequences {}\nmean total tokens {:.2}\nmean functional tokens {:.2}\nratio {:.2}%\n",
            counts.len(),
            s.mean_total_tokens,
            s.mean_func_tokens,
            100.0 * s.ratio
        );
        out.insert("sparsity".into(), serde_json::to_value(s)?);
    }
    if let Some(p) = &a.checkpoint {
        let params = PolicyParameters::from_checkpoint(&read(p)?)?;
        let world = HintWorld::new(cfg.n_answers)?;
        let s = gradient_share_summary(&world, &params, &cfg, a.groups)?;
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{:.4}", v));
        text += &format!(
            "gradient share grpo {}\ngradient share la-grpo {}\n",
            fmt(s.mean_share_grpo),
            fmt(s.mean_share_la_grpo)
        );
        out.insert("gradient_share".into(), serde_json::to_value(s)?);
    }
    match &a.output {
        Some(p) => emit(Some(p), &pretty(&out)?),
        None => emit(None, &text),
    }
}

fn cmd_report(a: ReportArgs) -> anyhow::Result<()> {
    let lines = read_output_lines(&read(&a.input)?)?;
    let counts: Vec<SequenceCounts> = lines.iter().map(|l| SequenceCounts::from_text(&l.text)).collect();
    let mut report = efficiency_report(&counts)?;
    let latencies: Option<Vec<f64>> = lines.iter().map(|l| l.latency).collect();
    if let Some(lat) = latencies {
        report = with_latencies(report, &lat)?;
    }
    emit(a.output.as_deref(), &pretty(&report)?)
}
