use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Args, Subcommand};
use serde::{Deserialize, Serialize};

use tempoprobe::analysis::{
    ablation_mask_from_grid, analyze_model, downstream_crp, layer_matched_control, DownstreamCrp,
};
use tempoprobe::probes::{build_freerecall_prompts, load_token_pool, TokenPool};
use tempoprobe::seeding::{rng_for, Stream};
use tempoprobe::trainer::{checkpoint_file_name, train_run_observed, CheckpointSeries, TrainEvent, SERIES_FILE};
use tempoprobe::transformer::{read_archive, AblationMask, Model, ScoreSource};

use crate::config::ExperimentConfig;
use crate::golden::{max_abs_logit_diff, read_golden_logits};
use crate::manifest::{compare_outputs, digest_outputs, sha256_file, write_atomic, RunManifest};
use crate::report::{self, CheckpointReport};
use crate::svg;
use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `train.total_iters`.
    #[arg(long)]
    pub iters: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct ProbeArgs {
    /// Token-pool file; the first `task.pool_size` ids when absent.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Lag-CRP list length.
    #[arg(long = "n")]
    pub n: Option<usize>,
    #[arg(long)]
    pub perms: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct AnalyzeArgs {
    /// A weight archive or a training run directory.
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub probe: ProbeArgs,
    #[arg(long)]
    pub lags: Option<usize>,
    #[arg(long)]
    pub exclusion: Option<usize>,
    /// pre|post
    #[arg(long)]
    pub source: Option<ScoreSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct DownstreamArgs {
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub probe: ProbeArgs,
    /// Ablate heads whose induction score exceeds this value.
    #[arg(long, conflicts_with = "no_ablate")]
    pub ablate_threshold: Option<f64>,
    /// Also run the layer-matched control ablation.
    #[arg(long, conflicts_with = "no_ablate")]
    pub ablate_control: bool,
    #[arg(long)]
    pub no_ablate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated positional-encoding multipliers.
    #[arg(long, value_delimiter = ',', required = true)]
    pub magnitudes: Vec<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iters: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct MakePoolArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub size: usize,
    /// Whitespace- or comma-separated `id count` lines; ids `0..size` when absent.
    #[arg(long)]
    pub counts: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct GoldenArgs {
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub golden: PathBuf,
    /// Comma-separated prompt token ids.
    #[arg(long, value_delimiter = ',', required = true)]
    pub prompt: Vec<u32>,
    #[arg(long, default_value_t = 1e-2)]
    pub tolerance: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Subcommand)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Train a model on the repeat task, checkpointing along the way.
    Train(TrainArgs),
    /// Lag-CRP, induction and temporal metrics of one or more checkpoints.
    Analyze(AnalyzeArgs),
    /// Free-recall next-token probabilities, optionally with head ablation.
    Downstream(DownstreamArgs),
    /// Train and analyze one model per positional-encoding magnitude.
    SweepPos(SweepArgs),
    /// Write a token-pool file.
    MakePool(MakePoolArgs),
    /// Compare final-position logits against a golden sidecar.
    CheckGolden(GoldenArgs),
}

/// Files a command read and wrote (the latter relative to its output dir).
#[derive(Debug, Default)]
pub struct RunOutcome {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<String>,
}

fn absolute(p: &mut PathBuf) {
    if let Ok(a) = std::path::absolute(&*p) {
        *p = a;
    }
}

fn absolute_opt(p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        absolute(p);
    }
}

fn read_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    ExperimentConfig::load(path)
}

impl ProbeArgs {
    fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load_or_toy(self.config.as_deref())?;
        if let Some(s) = self.seed {
            cfg.set_seed(s);
        }
        if let Some(n) = self.n {
            cfg.probe.n = n;
        }
        if let Some(m) = self.perms {
            cfg.probe.perms = m;
        }
        Ok(cfg)
    }

    fn pool(&self, cfg: &ExperimentConfig) -> anyhow::Result<TokenPool> {
        match &self.pool {
            Some(p) => Ok(load_token_pool(p, None)?),
            None => Ok(TokenPool::range(cfg.task.pool_size as u32)),
        }
    }

    fn inputs(&self) -> Vec<PathBuf> {
        self.pool.iter().chain(&self.config).cloned().collect()
    }
}

impl Command {
    pub fn out_dir(&self) -> &Path {
        match self {
            Command::Train(a) => &a.out,
            Command::Analyze(a) => &a.out,
            Command::Downstream(a) => &a.out,
            Command::SweepPos(a) => &a.out,
            Command::MakePool(a) => &a.out,
            Command::CheckGolden(a) => &a.out,
        }
    }

    pub fn with_out_dir(&self, out: &Path) -> Command {
        let mut c = self.clone();
        let slot = match &mut c {
            Command::Train(a) => &mut a.out,
            Command::Analyze(a) => &mut a.out,
            Command::Downstream(a) => &mut a.out,
            Command::SweepPos(a) => &mut a.out,
            Command::MakePool(a) => &mut a.out,
            Command::CheckGolden(a) => &mut a.out,
        };
        *slot = out.to_path_buf();
        c
    }

    /// Makes every path absolute so a manifest replays from any directory.
    pub fn absolutize(&mut self) {
        match self {
            Command::Train(a) => {
                absolute(&mut a.config);
                absolute(&mut a.out);
            }
            Command::Analyze(AnalyzeArgs { checkpoint, out, probe, .. })
            | Command::Downstream(DownstreamArgs { checkpoint, out, probe, .. }) => {
                absolute(checkpoint);
                absolute(out);
                absolute_opt(&mut probe.pool);
                absolute_opt(&mut probe.config);
            }
            Command::SweepPos(a) => {
                absolute(&mut a.config);
                absolute(&mut a.out);
            }
            Command::MakePool(a) => {
                absolute(&mut a.out);
                absolute_opt(&mut a.counts);
            }
            Command::CheckGolden(a) => {
                absolute(&mut a.checkpoint);
                absolute(&mut a.golden);
                absolute(&mut a.out);
            }
        }
    }

    /// Config file (or toy defaults) with command-line overrides applied.
    pub fn resolve_config(&self) -> anyhow::Result<ExperimentConfig> {
        let cfg = match self {
            Command::Train(a) => {
                let mut cfg = read_config(&a.config)?;
                if let Some(s) = a.seed {
                    cfg.set_seed(s);
                }
                if let Some(n) = a.iters {
                    cfg.train.total_iters = n;
                }
                cfg
            }
            Command::Analyze(a) => {
                let mut cfg = a.probe.resolve()?;
                if let Some(l) = a.lags {
                    cfg.analysis.lags = l;
                }
                if let Some(e) = a.exclusion {
                    cfg.analysis.exclusion = e;
                }
                if let Some(s) = a.source {
                    cfg.analysis.source = s;
                }
                cfg
            }
            Command::Downstream(a) => a.probe.resolve()?,
            Command::SweepPos(a) => {
                let mut cfg = read_config(&a.config)?;
                if let Some(s) = a.seed {
                    cfg.set_seed(s);
                }
                if let Some(n) = a.iters {
                    cfg.train.total_iters = n;
                }
                if let Some(m) = a.magnitudes.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
                    return Err(UsageError(format!("magnitude {m} must be a non-negative number")).into());
                }
                cfg
            }
            Command::MakePool(_) | Command::CheckGolden(_) => ExperimentConfig::toy(),
        };
        Ok(cfg)
    }

    pub fn execute(&self, cfg: &ExperimentConfig) -> anyhow::Result<RunOutcome> {
        let out = self.out_dir();
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        match self {
            Command::Train(a) => train(a, cfg),
            Command::Analyze(a) => analyze(a, cfg),
            Command::Downstream(a) => downstream(a, cfg),
            Command::SweepPos(a) => sweep_pos(a, cfg),
            Command::MakePool(a) => make_pool(a),
            Command::CheckGolden(a) => check_golden(a),
        }
    }
}

/// Resolves, runs and records `cmd`, writing `manifest.json` last.
pub fn run(cmd: &Command) -> anyhow::Result<RunManifest> {
    let mut cmd = cmd.clone();
    cmd.absolutize();
    let cfg = cmd.resolve_config()?;
    run_resolved(&cmd, &cfg)
}

fn run_resolved(cmd: &Command, cfg: &ExperimentConfig) -> anyhow::Result<RunManifest> {
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let outcome = cmd.execute(cfg)?;
    let mut input_digests = BTreeMap::new();
    for p in &outcome.inputs {
        let d = sha256_file(p).with_context(|| format!("hashing input {}", p.display()))?;
        input_digests.insert(p.display().to_string(), d);
    }
    let manifest = RunManifest {
        command: cmd.clone(),
        config: cfg.clone(),
        seed: cfg.seed,
        input_digests,
        outputs: digest_outputs(cmd.out_dir(), &outcome.outputs)?,
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    manifest.write(cmd.out_dir())?;
    Ok(manifest)
}

/// Re-runs a recorded command into `out` from its config snapshot and
/// returns the outputs whose bytes differ from the recording.
pub fn replay(manifest_path: &Path, out: &Path) -> anyhow::Result<Vec<String>> {
    let recorded = RunManifest::load(manifest_path)?;
    recorded.check_inputs()?;
    let mut out = out.to_path_buf();
    absolute(&mut out);
    let cmd = recorded.command.with_out_dir(&out);
    let fresh = run_resolved(&cmd, &recorded.config)?;
    Ok(compare_outputs(&recorded.outputs, &fresh.outputs))
}

fn train(a: &TrainArgs, cfg: &ExperimentConfig) -> anyhow::Result<RunOutcome> {
    let model = Model::init(cfg.model.clone(), &mut rng_for(cfg.seed, Stream::Init))?;
    let mut window = Vec::with_capacity(100);
    let mut log_rows = Vec::new();
    let mut observer = |ev: TrainEvent<'_>| match ev {
        TrainEvent::Step { step, loss, lr } => {
            window.push(loss);
            let done = step + 1;
            if done % 100 == 0 || done == cfg.train.total_iters {
                let mean = window.iter().sum::<f64>() / window.len() as f64;
                println!("iter {done:>6}  loss {mean:.4}  lr {lr:.3e}");
                log_rows.push(vec![done.to_string(), mean.to_string(), lr.to_string()]);
                window.clear();
            }
        }
        TrainEvent::Checkpoint(e) => {
            log::info!("checkpoint {} val_loss {:.4}", e.iteration, e.val_loss);
        }
    };
    let (_, series) = train_run_observed(model, &cfg.train, &cfg.task, &a.out, &mut observer)?;
    report::write_csv(&a.out.join("train_log.csv"), &["iteration", "mean_loss", "lr"], &log_rows)?;
    let mut outputs = vec![SERIES_FILE.to_string(), "train_log.csv".to_string()];
    outputs.extend(series.iterations().into_iter().map(checkpoint_file_name));
    Ok(RunOutcome {
        inputs: vec![a.config.clone()],
        outputs,
    })
}

fn checkpoint_inputs(path: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if path.is_dir() {
        let series = CheckpointSeries::load(path)?;
        let mut v = vec![path.join(SERIES_FILE)];
        v.extend(series.iterations().into_iter().map(|it| series.get(it).expect("listed").path.clone()));
        Ok(v)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

fn analyze(a: &AnalyzeArgs, cfg: &ExperimentConfig) -> anyhow::Result<RunOutcome> {
    let pool = a.probe.pool(cfg)?;
    let reports = report::analyze_path(&a.checkpoint, &pool, cfg)
        .with_context(|| format!("analyzing {}", a.checkpoint.display()))?;
    let first = reports.first().context("no checkpoints to analyze")?;
    let (layers, heads) = (first.analysis.grid.n_layers, first.analysis.grid.n_heads);
    let outputs = report::write_analysis(&a.out, &reports, layers, heads)?;
    let mut inputs = checkpoint_inputs(&a.checkpoint)?;
    inputs.extend(a.probe.inputs());
    Ok(RunOutcome { inputs, outputs })
}

fn load_model(path: &Path) -> anyhow::Result<Model> {
    let (model, _) = read_archive(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(model)
}

pub const DEFAULT_ABLATION_THRESHOLD: f64 = 0.01;
pub const CONTROL_LABEL: &str = "layer-matched control";

pub fn threshold_label(threshold: f64) -> String {
    format!("induction>{threshold}")
}

fn downstream(a: &DownstreamArgs, cfg: &ExperimentConfig) -> anyhow::Result<RunOutcome> {
    let model = load_model(&a.checkpoint)?;
    let pool = a.probe.pool(cfg)?;
    let ctx = model.config().ctx_len;
    let recall = build_freerecall_prompts(&pool, cfg.probe.recall_n, cfg.probe.recall_prompts, cfg.seed, ctx, cfg.probe.middle)?;
    let prepared = model.prepare();

    let mut runs: Vec<(DownstreamCrp, AblationMask)> = Vec::new();
    let none = AblationMask::empty();
    runs.push((downstream_crp(&prepared, &recall, &none, "none")?, none));
    let mut grid = None;
    if !a.no_ablate {
        let prompts = report::lag_prompts(cfg, &pool, ctx)?;
        let g = analyze_model(&model, &prompts, &cfg.analysis)?.grid;
        let threshold = a.ablate_threshold.unwrap_or(DEFAULT_ABLATION_THRESHOLD);
        let mask = ablation_mask_from_grid(&g, threshold);
        if mask.is_empty() {
            log::warn!("no head has induction score above {threshold}; the ablated series is unablated");
        }
        let label = threshold_label(threshold);
        runs.push((downstream_crp(&prepared, &recall, &mask, &label)?, mask.clone()));
        if a.ablate_control {
            match layer_matched_control(&g, &mask) {
                Ok(control) => runs.push((downstream_crp(&prepared, &recall, &control, CONTROL_LABEL)?, control)),
                Err(e) => log::warn!("skipping the control series: {e}"),
            }
        }
        grid = Some(g);
    }

    let curve_rows: Vec<Vec<String>> = runs
        .iter()
        .flat_map(|(d, _)| {
            d.lags
                .iter()
                .zip(&d.probs)
                .map(|(l, p)| vec![d.label.clone(), l.to_string(), p.to_string()])
        })
        .collect();
    report::write_csv(&a.out.join("downstream.csv"), &["ablation_label", "lag", "prob"], &curve_rows)?;

    let summary_rows: Vec<Vec<String>> = runs
        .iter()
        .map(|(d, mask)| {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            vec![
                d.label.clone(),
                mask.len().to_string(),
                opt(d.prob(1)),
                opt(d.mean_over(2, 10)),
                d.non_list_mass.to_string(),
            ]
        })
        .collect();
    report::write_csv(
        &a.out.join("downstream_summary.csv"),
        &["ablation_label", "n_ablated", "crp_plus1", "crp_mean_2_10", "non_list_mass"],
        &summary_rows,
    )?;

    let mut head_rows = Vec::new();
    for (d, mask) in &runs {
        for h in mask.iter() {
            let score = grid.as_ref().map(|g| g.get(*h).to_string()).unwrap_or_default();
            head_rows.push(vec![d.label.clone(), h.layer.to_string(), h.head.to_string(), score]);
        }
    }
    report::write_csv(
        &a.out.join("ablated_heads.csv"),
        &["ablation_label", "layer", "head", "induction_score"],
        &head_rows,
    )?;

    let curves: Vec<DownstreamCrp> = runs.into_iter().map(|(d, _)| d).collect();
    write_atomic(&a.out.join("downstream.svg"), report::downstream_figure(&curves).as_bytes())?;

    let mut inputs = vec![a.checkpoint.clone()];
    inputs.extend(a.probe.inputs());
    Ok(RunOutcome {
        inputs,
        outputs: ["downstream.csv", "downstream_summary.csv", "ablated_heads.csv", "downstream.svg"]
            .map(String::from)
            .to_vec(),
    })
}

/// One trained and analyzed model of a positional-encoding sweep.
#[derive(Debug, Clone)]
pub struct MagnitudeRun {
    pub magnitude: f64,
    pub init_digest: String,
    pub reports: Vec<CheckpointReport>,
    /// Positional embedding before and after training.
    pub initial_wpe: Vec<f32>,
    pub final_wpe: Vec<f32>,
}

pub fn magnitude_dir_name(magnitude: f64) -> String {
    format!("mag_{magnitude}")
}

/// Trains `cfg` with `pos_scale = magnitude` into `dir` and analyzes every
/// checkpoint. The initial weights depend only on the seed.
pub fn run_magnitude(cfg: &ExperimentConfig, magnitude: f64, dir: &Path, pool: &TokenPool) -> anyhow::Result<MagnitudeRun> {
    let mut model_cfg = cfg.model.clone();
    model_cfg.pos_scale = magnitude;
    let model = Model::init(model_cfg, &mut rng_for(cfg.seed, Stream::Init))?;
    let init_digest = model.weights_digest();
    let wpe = |m: &Model| m.tensor_slice("wpe").expect("positional embedding").to_vec();
    let initial_wpe = wpe(&model);
    log::info!("training magnitude {magnitude} into {}", dir.display());
    let (trained, series) = train_run_observed(model, &cfg.train, &cfg.task, dir, &mut |ev| {
        if let TrainEvent::Checkpoint(e) = ev {
            log::info!("magnitude {magnitude}: checkpoint {} val_loss {:.4}", e.iteration, e.val_loss);
        }
    })?;
    let reports = report::analyze_series(&series, pool, cfg)?;
    Ok(MagnitudeRun {
        magnitude,
        init_digest,
        reports,
        initial_wpe,
        final_wpe: wpe(&trained),
    })
}

pub const POSENC_HEADER: [&str; 5] = ["magnitude", "avg_induction", "avg_tau", "avg_slope", "n_induction"];

pub fn posenc_row(run: &MagnitudeRun) -> Vec<String> {
    let s = &run.reports.last().expect("at least one checkpoint").analysis.summary;
    let opt = |v: Option<f64>| v.unwrap_or(f64::NAN).to_string();
    vec![
        run.magnitude.to_string(),
        opt(s.avg_induction),
        opt(s.avg_tau),
        opt(s.avg_slope),
        s.n_induction.to_string(),
    ]
}

fn sweep_pos(a: &SweepArgs, cfg: &ExperimentConfig) -> anyhow::Result<RunOutcome> {
    let pool = TokenPool::range(cfg.task.pool_size as u32);
    let mut runs = Vec::new();
    let mut outputs = Vec::new();
    for &m in &a.magnitudes {
        let sub = magnitude_dir_name(m);
        let run = run_magnitude(cfg, m, &a.out.join(&sub), &pool)?;
        if let Some(first) = runs.first() {
            let first: &MagnitudeRun = first;
            if first.init_digest != run.init_digest {
                bail!("magnitudes {} and {m} started from different weights", first.magnitude);
            }
        }
        if m == 0.0 && run.initial_wpe != run.final_wpe {
            bail!("positional embedding changed during training at magnitude 0");
        }
        let series = CheckpointSeries::load(&a.out.join(&sub))?;
        outputs.push(format!("{sub}/{SERIES_FILE}"));
        outputs.extend(series.iterations().into_iter().map(|it| format!("{sub}/{}", checkpoint_file_name(it))));
        runs.push(run);
    }

    let rows: Vec<Vec<String>> = runs.iter().map(posenc_row).collect();
    report::write_csv(&a.out.join("posenc_summary.csv"), &POSENC_HEADER, &rows)?;
    outputs.push("posenc_summary.csv".into());

    let mut series_rows = Vec::new();
    let mut profile_rows = Vec::new();
    for run in &runs {
        for row in report::summary_rows(&run.reports) {
            series_rows.push(std::iter::once(run.magnitude.to_string()).chain(row).collect());
        }
        for r in &run.reports {
            for (d, v) in r.positional.distance_profile().into_iter().enumerate() {
                profile_rows.push(vec![
                    run.magnitude.to_string(),
                    r.iteration.map(|i| i.to_string()).unwrap_or_default(),
                    d.to_string(),
                    v.map(|x| x.to_string()).unwrap_or_default(),
                ]);
            }
        }
    }
    report::write_csv(
        &a.out.join("posenc_series.csv"),
        &["magnitude", "checkpoint", "iteration", "metric", "value"],
        &series_rows,
    )?;
    report::write_csv(
        &a.out.join("posenc_correlation.csv"),
        &["magnitude", "iteration", "distance", "mean_corr"],
        &profile_rows,
    )?;
    outputs.push("posenc_series.csv".into());
    outputs.push("posenc_correlation.csv".into());

    // Rows are magnitudes, columns are up to four evenly spaced checkpoints.
    let mut panels = Vec::new();
    let mut cols = 1;
    for run in &runs {
        let k = run.reports.len();
        let picks: Vec<usize> = if k <= 4 { (0..k).collect() } else { (0..4).map(|i| i * (k - 1) / 3).collect() };
        cols = cols.max(picks.len());
        for &i in &picks {
            let r = &run.reports[i];
            panels.push(report::correlation_panel(
                &r.positional,
                format!("c={} it={}", run.magnitude, r.iteration.unwrap_or(0)),
                32,
            ));
        }
    }
    let fig = svg::render_grid("Positional-embedding correlation", &panels, cols, 240.0, 240.0);
    write_atomic(&a.out.join("posenc_correlation.svg"), fig.as_bytes())?;
    outputs.push("posenc_correlation.svg".into());

    Ok(RunOutcome {
        inputs: vec![a.config.clone()],
        outputs,
    })
}

/// Top `size` ids by descending count, ties by ascending id.
pub fn pool_from_counts(text: &str, size: usize) -> anyhow::Result<TokenPool> {
    let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|f| !f.is_empty()).collect();
        let [id, count] = fields[..] else {
            bail!("line {}: expected `id count`, got {line:?}", k + 1);
        };
        let id: u32 = id.parse().with_context(|| format!("line {}: bad token id", k + 1))?;
        let count: u64 = count.parse().with_context(|| format!("line {}: bad count", k + 1))?;
        if counts.insert(id, count).is_some() {
            bail!("line {}: token {id} listed twice", k + 1);
        }
    }
    if counts.len() < size {
        bail!("only {} distinct ids, fewer than pool size {size}", counts.len());
    }
    let mut ranked: Vec<(u32, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(TokenPool::new(ranked.into_iter().take(size).map(|(id, _)| id).collect())?)
}

pub const POOL_FILE: &str = "pool.txt";

fn make_pool(a: &MakePoolArgs) -> anyhow::Result<RunOutcome> {
    let (pool, inputs) = match &a.counts {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            (pool_from_counts(&text, a.size).with_context(|| format!("counts file {}", p.display()))?, vec![p.clone()])
        }
        None => (TokenPool::range(a.size as u32), vec![]),
    };
    write_atomic(&a.out.join(POOL_FILE), pool.to_text().as_bytes())?;
    Ok(RunOutcome {
        inputs,
        outputs: vec![POOL_FILE.into()],
    })
}

fn check_golden(a: &GoldenArgs) -> anyhow::Result<RunOutcome> {
    let model = load_model(&a.checkpoint)?;
    let golden = read_golden_logits(&a.golden, model.config().vocab_size)?;
    let diff = max_abs_logit_diff(&model, &a.prompt, &golden)?;
    let pass = diff <= a.tolerance;
    report::write_csv(
        &a.out.join("parity.csv"),
        &["max_abs_diff", "tolerance", "pass"],
        &[vec![diff.to_string(), a.tolerance.to_string(), pass.to_string()]],
    )?;
    if !pass {
        bail!("logit parity failed: max |diff| {diff} exceeds {}", a.tolerance);
    }
    println!("logit parity ok: max |diff| {diff}");
    Ok(RunOutcome {
        inputs: vec![a.checkpoint.clone(), a.golden.clone()],
        outputs: vec!["parity.csv".into()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_rank_by_count_then_id() {
        let pool = pool_from_counts("5 100\n2 50\n9 200\n", 2).unwrap();
        assert_eq!(pool.to_text(), "9\n5\n");
        let pool = pool_from_counts("# header\n7,3\n1,3\n4,9\n", 3).unwrap();
        assert_eq!(pool.ids(), &[4, 1, 7]);
        assert!(pool_from_counts("1 2\n", 2).is_err());
        assert!(pool_from_counts("1 2\n1 3\n", 1).is_err());
        assert!(pool_from_counts("1\n", 1).is_err());
    }

    #[test]
    fn command_serializes_with_tag() {
        let cmd = Command::MakePool(MakePoolArgs {
            out: "o".into(),
            size: 3,
            counts: None,
        });
        let json = serde_json::to_string(&cmd).unwrap();
        assert!(json.contains(r#""command":"make-pool""#));
        assert_eq!(serde_json::from_str::<Command>(&json).unwrap(), cmd);
        assert_eq!(cmd.with_out_dir(Path::new("p")).out_dir(), Path::new("p"));
    }

    #[test]
    fn labels() {
        assert_eq!(threshold_label(DEFAULT_ABLATION_THRESHOLD), "induction>0.01");
        assert_eq!(magnitude_dir_name(0.0), "mag_0");
        assert_eq!(magnitude_dir_name(1.5), "mag_1.5");
    }
}
