use std::fs;

use tempoprobe::seeding::{rng_for, Stream};
use tempoprobe::trainer::{train_run, RepeatLayout, RepeatTask, TrainConfig};
use tempoprobe::transformer::{Model, ModelConfig};

fn attention_only() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 32,
        d_mlp: 0,
        vocab_size: 16,
        ctx_len: 32,
        pos_scale: 1.0,
        tied_embeddings: true,
    }
}

fn train_cfg(total: usize, every: usize) -> TrainConfig {
    TrainConfig {
        max_lr: 3e-3,
        warmup_iters: 50.min(total - 1),
        batch_size: 4,
        seq_len: 32,
        total_iters: total,
        checkpoint_every: every,
        val_batches: 2,
        seed: 17,
        ..TrainConfig::toy()
    }
}

fn task() -> RepeatTask {
    RepeatTask {
        pool_size: 16,
        min_prefix: 4,
        max_prefix: 12,
        layout: RepeatLayout::Cycled,
    }
}

#[test]
fn checkpoint_schedule_and_replay() {
    let cfg = train_cfg(300, 100);
    let run = |dir: &std::path::Path| {
        let init = Model::init(attention_only(), &mut rng_for(cfg.seed, Stream::Init)).unwrap();
        train_run(init, &cfg, &task(), dir).unwrap().1
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let series = run(a.path());
    assert_eq!(series.iterations(), vec![0, 100, 200, 300]);
    run(b.path());
    let ckpt = |d: &std::path::Path| fs::read(d.join("ckpt_100.tpw")).unwrap();
    assert_eq!(ckpt(a.path()), ckpt(b.path()));
}

#[test]
fn attention_only_model_learns_the_repeat_task() {
    let cfg = train_cfg(2000, 1000);
    let dir = tempfile::tempdir().unwrap();
    let init = Model::init(attention_only(), &mut rng_for(cfg.seed, Stream::Init)).unwrap();
    let (_, series) = train_run(init, &cfg, &task(), dir.path()).unwrap();
    let first = series.get(0).unwrap().val_loss;
    let last = series.get(2000).unwrap().val_loss;
    assert!(last < first, "{first} -> {last}");
}
