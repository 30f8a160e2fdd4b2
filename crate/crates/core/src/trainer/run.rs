use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{lr_schedule, AdamW, Batch, RepeatTask, TrainConfig, TrainError};
use crate::seeding::{rng_for, Stream};
use crate::transformer::engine::{next_token_loss, Engine};
use crate::transformer::{read_archive, write_archive, AblationMask, Layout, Model, ModelConfig, TransformerError};

fn check_batch(config: &ModelConfig, batch: &Batch) -> Result<usize, TransformerError> {
    let mut positions = 0;
    for seq in &batch.inputs {
        if seq.len() < 2 {
            return Err(TransformerError::SequenceTooShort { len: seq.len(), min: 2 });
        }
        crate::transformer::check_tokens(config, seq)?;
        positions += seq.len() - 1;
    }
    Ok(positions)
}

/// Mean next-token cross-entropy of a batch under `f64` parameters.
pub fn batch_loss(config: &ModelConfig, params: &[f64], batch: &Batch) -> Result<f64, TransformerError> {
    let positions = check_batch(config, batch)?;
    let layout = Layout::new(config);
    let engine = Engine {
        cfg: config,
        layout: &layout,
        params,
    };
    let none = AblationMask::empty();
    let total: f64 = batch
        .inputs
        .iter()
        .map(|seq| {
            let cache = engine.forward(seq, &none, false);
            next_token_loss(&cache.logits, seq, config.vocab_size, 0.0).0
        })
        .sum();
    Ok(total / positions as f64)
}

/// Mean next-token cross-entropy and its gradient with respect to every
/// parameter. Sequences are processed in parallel and their gradients summed
/// in batch order, so the result does not depend on the thread count.
pub fn loss_and_grad(config: &ModelConfig, params: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>), TransformerError> {
    let positions = check_batch(config, batch)?;
    let layout = Layout::new(config);
    if params.len() != layout.total() {
        return Err(TransformerError::InvalidConfig(format!(
            "expected {} parameters, got {}",
            layout.total(),
            params.len()
        )));
    }
    let engine = Engine {
        cfg: config,
        layout: &layout,
        params,
    };
    let scale = 1.0 / positions as f64;
    let none = AblationMask::empty();
    let per_seq: Vec<(f64, Vec<f64>)> = batch
        .inputs
        .par_iter()
        .map(|seq| {
            let cache = engine.forward(seq, &none, false);
            let (loss, dlogits) = next_token_loss(&cache.logits, seq, config.vocab_size, scale);
            let mut g = vec![0.0; params.len()];
            engine.backward(&cache, &dlogits, &mut g);
            (loss, g)
        })
        .collect();
    let mut grads = vec![0.0; params.len()];
    let mut total = 0.0;
    for (loss, g) in per_seq {
        total += loss;
        for (a, b) in grads.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((total / positions as f64, grads))
}

/// `f64` master weights plus optimizer state.
#[derive(Debug, Clone)]
pub struct TrainState {
    config: ModelConfig,
    params: Vec<f64>,
    opt: AdamW,
    grad_clip: f64,
    step: usize,
}

impl TrainState {
    pub fn new(model: &Model, weight_decay: f64, grad_clip: f64) -> Self {
        Self {
            config: model.config().clone(),
            params: model.to_f64(),
            opt: AdamW::for_layout(model.layout(), weight_decay),
            grad_clip,
            step: 0,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Number of optimizer steps taken.
    pub fn step(&self) -> usize {
        self.step
    }

    /// `f32` snapshot of the master weights.
    pub fn snapshot(&self) -> Model {
        Model::from_f64(self.config.clone(), &self.params).expect("state matches its config")
    }
}

/// One AdamW update on `batch` at learning rate `lr`; returns the pre-update
/// mean loss.
pub fn train_step(state: &mut TrainState, batch: &Batch, lr: f64) -> Result<f64, TrainError> {
    let (loss, mut grads) = loss_and_grad(&state.config, &state.params, batch)?;
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !loss.is_finite() || !norm.is_finite() {
        return Err(TrainError::NonFiniteLoss {
            step: state.step,
            loss,
            lr,
            grad_norm: norm,
        });
    }
    if norm > state.grad_clip {
        let s = state.grad_clip / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    state.opt.step(&mut state.params, &grads, lr);
    state.step += 1;
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub iteration: usize,
    pub val_loss: f64,
    pub path: PathBuf,
}

impl CheckpointEntry {
    pub fn load(&self) -> Result<Model, TrainError> {
        read_archive(&self.path)
            .map(|(m, _)| m)
            .map_err(|source| TrainError::Checkpoint {
                iteration: self.iteration,
                source,
            })
    }
}

/// Checkpoints of one run, ordered by strictly increasing iteration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckpointSeries {
    pub entries: Vec<CheckpointEntry>,
}

pub const SERIES_FILE: &str = "series.csv";

pub fn checkpoint_file_name(iteration: usize) -> String {
    format!("ckpt_{iteration}.tpw")
}

impl CheckpointSeries {
    pub fn push(&mut self, entry: CheckpointEntry) -> Result<(), TrainError> {
        if let Some(last) = self.entries.last() {
            if entry.iteration <= last.iteration {
                return Err(TrainError::Series {
                    path: entry.path,
                    message: format!("iteration {} does not follow {}", entry.iteration, last.iteration),
                });
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn get(&self, iteration: usize) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| e.iteration == iteration)
    }

    pub fn last(&self) -> Option<&CheckpointEntry> {
        self.entries.last()
    }

    pub fn iterations(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.iteration).collect()
    }

    /// Writes `series.csv` into `dir` with paths relative to `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), TrainError> {
        let path = dir.join(SERIES_FILE);
        let err = |message: String| TrainError::Series {
            path: path.clone(),
            message,
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["iteration", "val_loss", "path"]).map_err(|e| err(e.to_string()))?;
        for e in &self.entries {
            let rel = e.path.strip_prefix(dir).unwrap_or(&e.path);
            w.write_record([
                e.iteration.to_string(),
                e.val_loss.to_string(),
                rel.display().to_string(),
            ])
            .map_err(|e| err(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| err(e.to_string()))?;
        let tmp = dir.join(format!("{SERIES_FILE}.tmp"));
        let last = self.entries.last().map_or(0, |e| e.iteration);
        let io = |source| TrainError::Io {
            iteration: last,
            path: path.clone(),
            source,
        };
        fs::write(&tmp, bytes).map_err(io)?;
        fs::rename(&tmp, &path).map_err(io)
    }

    /// Reads `dir/series.csv`, resolving relative paths against `dir`.
    pub fn load(dir: &Path) -> Result<Self, TrainError> {
        let path = dir.join(SERIES_FILE);
        let err = |message: String| TrainError::Series {
            path: path.clone(),
            message,
        };
        let mut r = csv::Reader::from_path(&path).map_err(|e| err(e.to_string()))?;
        let headers = r.headers().map_err(|e| err(e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["iteration", "val_loss", "path"] {
            return Err(err(format!("unexpected header {headers:?}")));
        }
        let mut series = Self::default();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| err(e.to_string()))?;
            let bad = |what: &str| err(format!("row {}: bad {what}", line + 2));
            let iteration = rec[0].parse().map_err(|_| bad("iteration"))?;
            let val_loss = rec[1].parse().map_err(|_| bad("val_loss"))?;
            let p = PathBuf::from(&rec[2]);
            let p = if p.is_absolute() { p } else { dir.join(p) };
            series.push(CheckpointEntry {
                iteration,
                val_loss,
                path: p,
            })?;
        }
        Ok(series)
    }
}

/// Progress notifications from [`train_run_observed`].
#[derive(Debug)]
pub enum TrainEvent<'a> {
    Step { step: usize, loss: f64, lr: f64 },
    Checkpoint(&'a CheckpointEntry),
}

/// Trains `model` on `task`, writing `ckpt_<iteration>.tpw` and
/// `series.csv` into `out_dir` at every checkpoint iteration (including 0).
/// Returns the final `f32` model and the series.
pub fn train_run(
    model: Model,
    cfg: &TrainConfig,
    task: &RepeatTask,
    out_dir: &Path,
) -> Result<(Model, CheckpointSeries), TrainError> {
    train_run_observed(model, cfg, task, out_dir, &mut |_| {})
}

pub fn train_run_observed(
    model: Model,
    cfg: &TrainConfig,
    task: &RepeatTask,
    out_dir: &Path,
    observer: &mut dyn FnMut(TrainEvent<'_>),
) -> Result<(Model, CheckpointSeries), TrainError> {
    cfg.validate()?;
    task.validate(cfg.seq_len, model.config().vocab_size)?;
    if cfg.seq_len > model.config().ctx_len {
        return Err(TrainError::InvalidConfig(format!(
            "seq_len {} exceeds ctx_len {}",
            cfg.seq_len,
            model.config().ctx_len
        )));
    }
    fs::create_dir_all(out_dir).map_err(|source| TrainError::Io {
        iteration: 0,
        path: out_dir.to_path_buf(),
        source,
    })?;

    let mut val_rng = rng_for(cfg.seed, Stream::Validation);
    let val: Vec<Batch> = (0..cfg.val_batches)
        .map(|_| task.sample(cfg.batch_size, cfg.seq_len, &mut val_rng))
        .collect::<Result<_, _>>()?;
    let mut data_rng = rng_for(cfg.seed, Stream::Data);

    let mut state = TrainState::new(&model, cfg.weight_decay, cfg.grad_clip);
    let mut series = CheckpointSeries::default();
    let checkpoints = cfg.checkpoint_iterations();
    let mut next_ckpt = 0;
    let mut current = model;

    for step in 0..=cfg.total_iters {
        if checkpoints.get(next_ckpt) == Some(&step) {
            next_ckpt += 1;
            if step > 0 {
                current = state.snapshot();
            }
            // Validation runs on the f32 snapshot so the loss matches what a
            // reloaded checkpoint reports.
            let params = current.to_f64();
            let mut val_loss = 0.0;
            for b in &val {
                val_loss += batch_loss(current.config(), &params, b)?;
            }
            val_loss /= val.len() as f64;
            let path = out_dir.join(checkpoint_file_name(step));
            write_archive(&path, &current, &format!("repeat-task iteration {step}"))
                .map_err(|source| TrainError::Checkpoint { iteration: step, source })?;
            series.push(CheckpointEntry {
                iteration: step,
                val_loss,
                path,
            })?;
            series.write(out_dir)?;
            observer(TrainEvent::Checkpoint(series.last().expect("just pushed")));
        }
        if step == cfg.total_iters {
            break;
        }
        let batch = task.sample(cfg.batch_size, cfg.seq_len, &mut data_rng)?;
        let lr = lr_schedule(step, cfg);
        let loss = train_step(&mut state, &batch, lr)?;
        observer(TrainEvent::Step { step, loss, lr });
    }
    Ok((current, series))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::RepeatLayout;
    use crate::trainer::generate_repeat_batch;

    fn grad_model(seed: u64) -> Model {
        let cfg = ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 16,
            d_mlp: 32,
            vocab_size: 50,
            ctx_len: 16,
            pos_scale: 1.0,
            tied_embeddings: true,
        };
        Model::init(cfg, &mut rng_for(seed, Stream::Init)).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences_on_sample() {
        let m = grad_model(4);
        let mut rng = rng_for(4, Stream::Data);
        let batch = generate_repeat_batch(2, 16, 50, 5, &mut rng).unwrap();
        let params = m.to_f64();
        let (_, grads) = loss_and_grad(m.config(), &params, &batch).unwrap();
        let h = 1e-3;
        let mut p = params.clone();
        for i in (0..params.len()).step_by(17) {
            p[i] = params[i] + h;
            let up = batch_loss(m.config(), &p, &batch).unwrap();
            p[i] = params[i] - h;
            let down = batch_loss(m.config(), &p, &batch).unwrap();
            p[i] = params[i];
            let numeric = (up - down) / (2.0 * h);
            let err = (numeric - grads[i]).abs() / numeric.abs().max(grads[i].abs()).max(1e-8);
            assert!(err < 1e-2, "param {i}: analytic {} numeric {numeric}", grads[i]);
        }
    }

    #[test]
    fn zero_lr_step_leaves_parameters() {
        let m = grad_model(1);
        let batch = generate_repeat_batch(2, 16, 50, 4, &mut rng_for(1, Stream::Data)).unwrap();
        let mut state = TrainState::new(&m, 0.1, 1.0);
        let expected = batch_loss(m.config(), &m.to_f64(), &batch).unwrap();
        let loss = train_step(&mut state, &batch, 0.0).unwrap();
        assert_eq!(loss, expected);
        assert_eq!(state.params(), m.to_f64().as_slice());
    }

    #[test]
    fn overfits_one_batch() {
        let m = grad_model(2);
        let batch = generate_repeat_batch(4, 16, 50, 6, &mut rng_for(2, Stream::Data)).unwrap();
        let mut state = TrainState::new(&m, 0.0, 1.0);
        let first = train_step(&mut state, &batch, 3e-3).unwrap();
        let mut last = first;
        for _ in 0..49 {
            last = train_step(&mut state, &batch, 3e-3).unwrap();
        }
        assert!(last < 0.5 * first, "{first} -> {last}");
    }

    #[test]
    fn run_writes_series_and_is_deterministic() {
        let mut model_cfg = ModelConfig::toy_induction();
        model_cfg.d_model = 16;
        model_cfg.ctx_len = 32;
        model_cfg.vocab_size = 20;
        let cfg = TrainConfig {
            total_iters: 30,
            checkpoint_every: 10,
            warmup_iters: 5,
            batch_size: 2,
            seq_len: 32,
            val_batches: 1,
            ..TrainConfig::toy()
        };
        let task = RepeatTask {
            pool_size: 20,
            min_prefix: 4,
            max_prefix: 16,
            layout: RepeatLayout::Cycled,
        };
        let run = |dir: &Path| {
            let init = Model::init(model_cfg.clone(), &mut rng_for(cfg.seed, Stream::Init)).unwrap();
            train_run(init, &cfg, &task, dir).unwrap()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let (ma, sa) = run(a.path());
        let (mb, _) = run(b.path());
        assert_eq!(sa.iterations(), vec![0, 10, 20, 30]);
        assert_eq!(ma, mb);
        let ckpt = |d: &Path| fs::read(d.join("ckpt_10.tpw")).unwrap();
        assert_eq!(ckpt(a.path()), ckpt(b.path()));
        let loaded = CheckpointSeries::load(a.path()).unwrap();
        assert_eq!(loaded, sa);
        assert_eq!(loaded.last().unwrap().load().unwrap(), ma);
        let text = fs::read_to_string(a.path().join(SERIES_FILE)).unwrap();
        assert!(text.starts_with("iteration,val_loss,path\n0,"));
        assert!(text.contains(",ckpt_30.tpw"));
    }

    #[test]
    fn series_rejects_non_increasing() {
        let mut s = CheckpointSeries::default();
        let e = |i| CheckpointEntry {
            iteration: i,
            val_loss: 1.0,
            path: PathBuf::from("x"),
        };
        s.push(e(0)).unwrap();
        s.push(e(5)).unwrap();
        assert!(s.push(e(5)).is_err());
    }
}

