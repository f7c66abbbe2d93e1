//! Adam training loop over a byte corpus, checkpointing into a WTS1 series.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lm::model::{loss_and_grad, Token};
use crate::lm::params::{ModelConfig, ModelParams};
use crate::rng::{tags, StreamRng};
use crate::store::{self, CheckpointSeries};

pub const CONFIG_FILE: &str = "config.json";

#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub steps: usize,
    pub checkpoint_every: usize,
    pub batch_size: usize,
    pub lr: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { steps: 2000, checkpoint_every: 100, batch_size: 8, lr: 1e-3 }
    }
}

const BETA1: f32 = 0.9;
const BETA2: f32 = 0.999;
const ADAM_EPS: f32 = 1e-8;

struct Adam {
    m: ModelParams<f32>,
    v: ModelParams<f32>,
    t: i32,
}

impl Adam {
    fn new(params: &ModelParams<f32>) -> Self {
        Adam { m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }

    fn step(&mut self, params: &mut ModelParams<f32>, grads: &ModelParams<f32>, lr: f32) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t);
        let bc2 = 1.0 - BETA2.powi(self.t);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = BETA1 * m.data[i] + (1.0 - BETA1) * gi;
                v.data[i] = BETA2 * v.data[i] + (1.0 - BETA2) * gi * gi;
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                p.data[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
    }
}

fn write_step_checkpoint(params: &ModelParams<f32>, step: u64, out_dir: &Path) -> Result<()> {
    let tensors = params.to_tensor_map();
    store::write_checkpoint(step, &tensors, &out_dir.join(store::checkpoint_filename(step)))
}

/// Train the byte-level toy LM and checkpoint it into `out_dir`.
///
/// Byte tokenization fixes v = 256. Batches are drawn deterministically
/// from the config seed; per-item gradients are evaluated in parallel but
/// summed in item order, so identical seeds give byte-identical checkpoint
/// files. Checkpoints land at step 0, every `checkpoint_every` steps and
/// the final step; `config.json` is written alongside them.
pub fn train(
    config: &ModelConfig,
    train_cfg: &TrainConfig,
    corpus: &[u8],
    out_dir: &Path,
) -> Result<CheckpointSeries> {
    config.validate()?;
    if config.vocab != 256 {
        return Err(Error::InvalidConfig(format!(
            "byte-level training needs v = 256, config has v = {}",
            config.vocab
        )));
    }
    if corpus.len() < config.n_ctx + 1 {
        return Err(Error::CorpusTooShort { got: corpus.len(), want: config.n_ctx + 1 });
    }
    if train_cfg.checkpoint_every == 0 || train_cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("checkpoint_every and batch_size must be >= 1".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    std::fs::write(out_dir.join(CONFIG_FILE), config.to_json())
        .map_err(|e| Error::io(out_dir.join(CONFIG_FILE), e))?;

    let mut params = ModelParams::<f32>::init(config)?;
    let mut adam = Adam::new(&params);
    let rng = StreamRng::new(config.seed);
    let window = config.n_ctx + 1;
    let max_start = corpus.len() - window;

    write_step_checkpoint(&params, 0, out_dir)?;

    for step in 1..=train_cfg.steps {
        let batch_stream = rng.stream(tags::LM_BATCH, step as u64);
        let starts: Vec<usize> = (0..train_cfg.batch_size)
            .map(|i| batch_stream.index_at(i as u64, max_start + 1))
            .collect();

        let results: Vec<Result<(f64, ModelParams<f32>)>> = starts
            .par_iter()
            .map(|&start| {
                let tokens: Vec<Token> =
                    corpus[start..start + window].iter().map(|&b| b as Token).collect();
                loss_and_grad(&params, &tokens)
            })
            .collect();

        // fixed-order reduction keeps the update bitwise stable
        let mut total = params.zeros_like();
        let scale = 1.0 / train_cfg.batch_size as f32;
        for r in results {
            let (_, g) = r?;
            for (acc, src) in total.tensors_mut().into_iter().zip(g.tensors()) {
                for (a, &b) in acc.data.iter_mut().zip(&src.data) {
                    *a += b * scale;
                }
            }
        }

        adam.step(&mut params, &total, train_cfg.lr);

        if step % train_cfg.checkpoint_every == 0 || step == train_cfg.steps {
            write_step_checkpoint(&params, step as u64, out_dir)?;
        }
    }

    store::open_series(out_dir)
}
