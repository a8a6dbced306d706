//! Loss, condition dropout, the optimization loop and checkpoints.

mod checkpoint;
mod loss;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::diffusion::{forward_noise, NoiseSchedule, NoiseTensor};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::nn::{AdamConfig, AdamState, Graph, ParamGrads};
use crate::scenegen::TrainingPair;
use crate::seed::{derive_indexed, rng, standard_normal_vec};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use loss::{loss, smooth_l1, LossBreakdown};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_halving_period_epochs: usize,
    pub weight_decay: f64,
    pub lambda: f64,
    pub p_uncond: f64,
    pub rate: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 2,
            lr: 1e-4,
            lr_halving_period_epochs: 5,
            weight_decay: 1e-4,
            lambda: 1.0,
            p_uncond: 0.1,
            rate: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |field: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(field, "must be positive"))
            }
        };
        pos("train.epochs", self.epochs > 0)?;
        pos("train.batch_size", self.batch_size > 0)?;
        pos("train.lr", self.lr.is_finite() && self.lr > 0.0)?;
        pos("train.lr_halving_period_epochs", self.lr_halving_period_epochs > 0)?;
        pos("train.rate", self.rate > 0)?;
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("train.weight_decay", "must be finite and >= 0"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config("train.lambda", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.p_uncond) {
            return Err(Error::config("train.p_uncond", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Learning rate halved every `lr_halving_period_epochs` epochs.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let halvings = (epoch / self.lr_halving_period_epochs).min(1000) as i32;
        self.lr * 0.5f64.powi(halvings)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { weight_decay: self.weight_decay, ..AdamConfig::default() }
    }

    pub fn steps_per_epoch(&self, dataset: usize) -> usize {
        dataset.div_ceil(self.batch_size)
    }
}

/// Loss and parameter gradients for one fixed draw of `(t, eps)`.
pub fn loss_and_grads(
    model: &Denoiser,
    clean: &PointCloud,
    condition: Option<&PointCloud>,
    t: usize,
    eps: &NoiseTensor,
    sched: &NoiseSchedule,
    lambda: f64,
) -> Result<(LossBreakdown, ParamGrads)> {
    let noisy = forward_noise(clean, t, sched, eps)?;
    let mut g = Graph::new();
    let trace = model.record(&mut g, &noisy, condition, t)?;
    let (root, parts) = g.eps_loss(trace.eps, eps.flat(), lambda);
    let grads = g.backward(root, model.params());
    Ok((
        LossBreakdown { total: parts.total, mse: parts.mse, std_reg: parts.std_reg, observed_std: parts.std },
        grads,
    ))
}

/// The randomness consumed by one pair in one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDraw {
    pub t: usize,
    pub eps: NoiseTensor,
    pub unconditional: bool,
}

pub fn draw_step(rng: &mut ChaCha8Rng, points: usize, sched: &NoiseSchedule, p_uncond: f64) -> Result<StepDraw> {
    let t = rng.random_range(0..sched.len());
    let eps = NoiseTensor::from_flat(&standard_normal_vec(rng, 3 * points))?;
    let unconditional = rng.random::<f64>() < p_uncond;
    Ok(StepDraw { t, eps, unconditional })
}

/// One optimizer update over `batch`; loss terms and gradients are batch means.
pub fn train_step(
    model: &mut Denoiser,
    adam: &mut AdamState,
    batch: &[&TrainingPair],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut parts = Vec::with_capacity(batch.len());
    let mut total: Option<Vec<Vec<f64>>> = None;
    for pair in batch {
        let d = draw_step(rng, pair.input().len(), sched, cfg.p_uncond)?;
        let cond = (!d.unconditional).then(|| pair.condition());
        let (l, ParamGrads(g)) = loss_and_grads(model, pair.input(), cond, d.t, &d.eps, sched, cfg.lambda)?;
        parts.push(l);
        match &mut total {
            None => total = Some(g),
            Some(acc) => {
                for (a, b) in acc.iter_mut().flatten().zip(g.iter().flatten()) {
                    *a += b;
                }
            }
        }
    }
    let mut grads = total.expect("non-empty batch");
    let scale = 1.0 / batch.len() as f64;
    grads.iter_mut().flatten().for_each(|x| *x *= scale);
    adam.update(model.params_mut(), &grads, lr, &cfg.adam());
    Ok(LossBreakdown::mean(&parts))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

pub const HISTORY_HEADER: &str = "step,epoch,lr,mse,std_reg,observed_std,total";

impl HistoryRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:e},{:e},{:e},{:e},{:e}",
            self.step, self.epoch, self.lr, self.loss.mse, self.loss.std_reg, self.loss.observed_std, self.loss.total
        )
    }
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

/// Mutable training state; `epoch` counts completed epochs.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Denoiser,
    pub adam: AdamState,
    pub step: u64,
    pub epoch: usize,
}

impl TrainState {
    pub fn new(model: Denoiser) -> Self {
        let adam = AdamState::new(model.params());
        Self { model, adam, step: 0, epoch: 0 }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { model: self.model.clone(), adam: self.adam.clone(), train_step: self.step, epoch: self.epoch }
    }
}

impl From<Checkpoint> for TrainState {
    fn from(c: Checkpoint) -> Self {
        Self { model: c.model, adam: c.adam, step: c.train_step, epoch: c.epoch }
    }
}

/// Runs the remaining epochs of `cfg` from `state.epoch`. Every step's randomness
/// derives from the root seed and the global step index, so a run resumed from a
/// checkpoint repeats the uninterrupted run exactly. With `checkpoint` set the
/// state is saved there after each epoch.
pub fn train(
    state: &mut TrainState,
    data: &[TrainingPair],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
    mut on_step: impl FnMut(&HistoryRow),
) -> Result<Vec<HistoryRow>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if let Some(p) = data.iter().find(|p| p.rate() != cfg.rate) {
        return Err(Error::config(
            "train.rate",
            format!("dataset pairs use rate {}, config says {}", p.rate(), cfg.rate),
        ));
    }
    let mut history = Vec::new();
    while state.epoch < cfg.epochs {
        let epoch = state.epoch;
        let lr = cfg.lr_at_epoch(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng(derive_indexed(cfg.seed, "train/epoch", epoch as u64)));
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainingPair> = chunk.iter().map(|&i| &data[i]).collect();
            let mut r = rng(derive_indexed(cfg.seed, "train/step", state.step));
            let l = train_step(&mut state.model, &mut state.adam, &batch, sched, cfg, lr, &mut r)?;
            let row = HistoryRow { step: state.step, epoch, lr, loss: l };
            state.step += 1;
            on_step(&row);
            history.push(row);
        }
        state.epoch += 1;
        if let Some(path) = checkpoint {
            save_checkpoint(&state.checkpoint(), path)?;
        }
    }
    Ok(history)
}
