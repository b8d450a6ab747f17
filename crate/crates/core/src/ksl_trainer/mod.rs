//! Kinematics-guided self-paced training: per-sample composite losses, the
//! threshold selection of easy samples, the pace schedule, and the Adam loop
//! that alternates between the selection vector and the weights.

use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Adam, Mat, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::forecaster::{Maker, ModelOutput, PreparedSample, Targets, TrainingState};
use crate::harness::metrics::error_table;
use crate::masked_encoder::MaskPlan;

/// Which per-sample terms the selection variable multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateScope {
    /// Reconstruction and kinematic terms; prediction always trains.
    ReconKinematic,
    All,
}

impl FromStr for GateScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "recon_kinematic" => Ok(Self::ReconKinematic),
            "all" => Ok(Self::All),
            other => Err(Error::Config(format!(
                "gate_scope must be `recon_kinematic` or `all`, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for GateScope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ReconKinematic => "recon_kinematic",
            Self::All => "all",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda0: f64,
    pub growth: f64,
    pub alpha_vel: f64,
    pub beta_acc: f64,
    pub gate_scope: GateScope,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            lr: 1e-3,
            lambda0: 0.2,
            growth: 1.0003,
            alpha_vel: 1.0,
            beta_acc: 1.0,
            gate_scope: GateScope::ReconKinematic,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.lambda0 > 0.0) || !(self.growth >= 1.0) {
            return Err(Error::Config(format!(
                "need lr > 0, lambda0 > 0 and growth ≥ 1 (got {}, {}, {})",
                self.lr, self.lambda0, self.growth
            )));
        }
        if !(self.alpha_vel >= 0.0) || !(self.beta_acc >= 0.0) {
            return Err(Error::Config("kinematic loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pred_mae: f64,
    pub recon_mae: f64,
    pub vel_mae: f64,
    pub acc_mae: f64,
    pub easiness_loss: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EasinessState {
    pub lambda: f64,
    pub growth: f64,
    pub v: Vec<bool>,
}

impl EasinessState {
    pub fn new(lambda0: f64, growth: f64) -> Self {
        Self {
            lambda: lambda0,
            growth,
            v: Vec::new(),
        }
    }
}

fn mae(a: impl IntoIterator<Item = f64>, b: &[f64]) -> f64 {
    let s: f64 = a.into_iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    s / b.len() as f64
}

/// Loss components of one sample with unit selection weight.
pub fn sample_losses(out: &ModelOutput, targets: &Targets, alpha_vel: f64, beta_acc: f64) -> LossBreakdown {
    let p = out.pred_positions.nrows();
    let h = out.recon_positions.nrows();
    let pred_mae = mae((0..2).flat_map(|c| (0..p).map(move |k| (c, k))).map(|(c, k)| out.pred_positions[[k, c]]), &targets.future_norm);
    let recon_mae = mae((0..2).flat_map(|c| (0..h).map(move |k| (c, k))).map(|(c, k)| out.recon_positions[[k, c]]), &targets.recon);
    let vel_mae = mae(out.pred_velocity.iter().copied(), &targets.velocity);
    let acc_mae = mae(out.pred_acceleration.iter().copied(), &targets.acceleration);
    let easiness_loss = recon_mae + alpha_vel * vel_mae + beta_acc * acc_mae;
    LossBreakdown {
        pred_mae,
        recon_mae,
        vel_mae,
        acc_mae,
        easiness_loss,
        total: pred_mae + easiness_loss,
    }
}

/// `v_i = 1` iff `loss_i < λ`.
pub fn easiness(losses: &[f64], lambda: f64) -> Vec<bool> {
    losses.iter().map(|&l| l < lambda).collect()
}

/// `Σ v_i loss_i − λ Σ v_i`.
pub fn spl_objective(losses: &[f64], v: &[bool], lambda: f64) -> f64 {
    losses
        .iter()
        .zip(v)
        .filter(|(_, &sel)| sel)
        .map(|(&l, _)| l - lambda)
        .sum()
}

pub fn advance_pace(state: EasinessState) -> EasinessState {
    EasinessState {
        lambda: state.lambda * state.growth,
        ..state
    }
}

/// Selection with the fallback: when nothing is easy enough, the single
/// sample with the smallest loss (first on ties) is selected.
pub fn select_with_fallback(losses: &[f64], lambda: f64) -> (Vec<bool>, bool) {
    let mut v = easiness(losses, lambda);
    if v.iter().any(|&x| x) || losses.is_empty() {
        return (v, false);
    }
    let best = losses
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    v[best] = true;
    (v, true)
}

/// Seed of the mask drawn for batch element `index` at optimizer step `step`.
pub fn mask_seed(seed: u64, step: u64, index: usize) -> u64 {
    let mut z = seed
        ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (index as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-sample loss columns (`B × 1`) on the tape.
#[derive(Debug, Clone, Copy)]
pub struct BatchLosses {
    pub pred: Var,
    pub recon: Var,
    pub vel: Var,
    pub acc: Var,
    pub easiness: Var,
}

fn stack(batch: &[&PreparedSample], get: impl Fn(&Targets) -> &[f64]) -> Mat {
    let n = get(&batch[0].targets).len();
    Array2::from_shape_fn((batch.len(), n), |(r, c)| get(&batch[r].targets)[c])
}

fn row_mae(t: &mut Tape, a: Var, target: Mat) -> Var {
    let target = t.constant(target);
    let d = t.sub(a, target);
    let d = t.abs(d);
    t.mean_cols(d)
}

pub fn batch_losses(
    model: &Maker,
    t: &mut Tape,
    batch: &[&PreparedSample],
    masks: &[Option<&MaskPlan>],
    alpha_vel: f64,
    beta_acc: f64,
) -> BatchLosses {
    let inputs: Vec<_> = batch.iter().map(|s| &s.input).collect();
    let f = model.forward_batch(t, &inputs, masks);
    let pred = row_mae(t, f.pred, stack(batch, |x| &x.future_norm));
    let recon = row_mae(t, f.recon, stack(batch, |x| &x.recon));
    // Heads are in normalized units per mean interval; convert to m/s, m/s².
    let p = model.cfg.p;
    let kv = Array2::from_shape_fn((batch.len(), p - 1), |(r, _)| batch[r].input.m_per_unit / batch[r].input.tau);
    let ka = Array2::from_shape_fn((batch.len(), p - 2), |(r, _)| {
        batch[r].input.m_per_unit / (batch[r].input.tau * batch[r].input.tau)
    });
    let kv = t.constant(kv);
    let ka = t.constant(ka);
    let vel = t.mul(f.vel, kv);
    let acc = t.mul(f.acc, ka);
    let vel = row_mae(t, vel, stack(batch, |x| &x.velocity));
    let acc = row_mae(t, acc, stack(batch, |x| &x.acceleration));
    let va = t.scale(vel, alpha_vel);
    let ab = t.scale(acc, beta_acc);
    let easiness = t.sum(&[recon, va, ab]);
    BatchLosses {
        pred,
        recon,
        vel,
        acc,
        easiness,
    }
}

/// `mean_i [pred_i + v_i · easiness_i]`, or `mean_i v_i (pred_i + easiness_i)`
/// when the gate covers everything.
pub fn gated_objective(t: &mut Tape, losses: &BatchLosses, v: &[bool], scope: GateScope) -> Var {
    let col = t.constant(Array2::from_shape_fn((v.len(), 1), |(r, _)| if v[r] { 1.0 } else { 0.0 }));
    match scope {
        GateScope::ReconKinematic => {
            let gated = t.mul(losses.easiness, col);
            let per = t.add(losses.pred, gated);
            t.mean_all(per)
        }
        GateScope::All => {
            let per = t.add(losses.pred, losses.easiness);
            let gated = t.mul(per, col);
            t.mean_all(gated)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    /// Pace used for this step's selection.
    pub lambda: f64,
    pub selected_fraction: f64,
    pub forced_selection: bool,
    pub losses: LossBreakdown,
    pub objective: f64,
    pub easiness: Vec<f64>,
    pub selected: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub lambda: f64,
    pub train_total: f64,
    pub val_mae_deg: Option<f64>,
    pub val_mae_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step(StepRecord),
    Epoch(EpochRecord),
}

pub struct Trainer {
    pub model: Maker,
    pub cfg: TrainConfig,
    pub state: EasinessState,
    adam: Adam,
    step: u64,
    epoch: usize,
}

impl Trainer {
    pub fn new(model: Maker, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = Adam::new(&model.params, cfg.lr);
        let state = EasinessState::new(cfg.lambda0, cfg.growth);
        Ok(Self {
            model,
            cfg,
            state,
            adam,
            step: 0,
            epoch: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn training_state(&self) -> TrainingState {
        TrainingState {
            seed: self.cfg.seed,
            step: self.step,
            epoch: self.epoch,
            lambda: self.state.lambda,
        }
    }

    pub fn mask_plans(&self, n: usize) -> Result<Vec<Option<MaskPlan>>> {
        let (q, c) = (self.model.encoder().q(), self.model.cfg.channels);
        (0..n)
            .map(|i| MaskPlan::draw(q, c, self.model.cfg.mask_ratio, mask_seed(self.cfg.seed, self.step, i)))
            .collect()
    }

    /// Forward, select, one Adam step, advance the pace.
    pub fn batch_step(&mut self, batch: &[&PreparedSample]) -> Result<StepRecord> {
        if batch.is_empty() {
            return Err(Error::Precondition("empty batch".into()));
        }
        let plans = self.mask_plans(batch.len())?;
        let masks: Vec<Option<&MaskPlan>> = plans.iter().map(Option::as_ref).collect();
        let use_ksl = self.model.flags().use_ksl;
        let lambda = self.state.lambda;
        let (record, grads) = {
            let mut t = Tape::new(&self.model.params);
            let l = batch_losses(&self.model, &mut t, batch, &masks, self.cfg.alpha_vel, self.cfg.beta_acc);
            let col = |v: Var| t.value(v).column(0).to_vec();
            let (pred, recon, vel, acc, easy) = (col(l.pred), col(l.recon), col(l.vel), col(l.acc), col(l.easiness));
            let (v, forced) = if use_ksl {
                select_with_fallback(&easy, lambda)
            } else {
                (vec![true; batch.len()], false)
            };
            let objective = gated_objective(&mut t, &l, &v, self.cfg.gate_scope);
            let total = t.scalar(objective);
            let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
            let losses = LossBreakdown {
                pred_mae: mean(&pred),
                recon_mae: mean(&recon),
                vel_mae: mean(&vel),
                acc_mae: mean(&acc),
                easiness_loss: mean(&easy),
                total,
            };
            if !total.is_finite() || easy.iter().chain(&pred).any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "step {}: losses {losses:?}, per-sample easiness {easy:?}",
                    self.step
                )));
            }
            let grads = t.backward(objective).into_params();
            if let Some((i, _)) = grads
                .iter()
                .enumerate()
                .find(|(_, g)| g.as_ref().is_some_and(|g| g.iter().any(|x| !x.is_finite())))
            {
                return Err(Error::NonFinite(format!(
                    "step {}: non-finite gradient for `{}`",
                    self.step,
                    self.model.params.name(crate::autograd::ParamId(i))
                )));
            }
            let selected = v.iter().filter(|&&x| x).count();
            let record = StepRecord {
                step: self.step,
                epoch: self.epoch,
                lambda,
                selected_fraction: selected as f64 / batch.len() as f64,
                forced_selection: forced,
                losses,
                objective: spl_objective(&easy, &v, lambda),
                easiness: easy,
                selected: v,
            };
            (record, grads)
        };
        self.adam.step(&mut self.model.params, &grads);
        self.state.v = record.selected.clone();
        if use_ksl {
            self.state = advance_pace(std::mem::take(&mut self.state));
        }
        self.step += 1;
        Ok(record)
    }

    /// One shuffled pass over `train`.
    pub fn run_epoch(
        &mut self,
        train: &[PreparedSample],
        sink: &mut dyn FnMut(&LogRecord) -> Result<()>,
    ) -> Result<f64> {
        let order = epoch_order(train.len(), self.cfg.seed, self.epoch);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<&PreparedSample> = chunk.iter().map(|&i| &train[i]).collect();
            let rec = self.batch_step(&batch)?;
            total += rec.losses.total;
            batches += 1;
            sink(&LogRecord::Step(rec))?;
        }
        self.epoch += 1;
        Ok(total / batches.max(1) as f64)
    }
}

impl Default for EasinessState {
    fn default() -> Self {
        Self::new(0.2, 1.0003)
    }
}

/// Sample order of epoch `epoch`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed(seed ^ 0x5e_ed0f_e90c, epoch as u64, usize::MAX));
    order.shuffle(&mut rng);
    order
}

pub struct TrainOutcome {
    pub model: Maker,
    pub state: TrainingState,
    pub best_params: ParamStore,
    pub best_state: TrainingState,
    pub final_val_mae_deg: Option<f64>,
    pub best_val_mae_deg: Option<f64>,
}

/// Trains for `cfg.epochs` epochs, validating after each. The best
/// parameters are those with the lowest validation MAE (degrees); without a
/// validation split they are the final ones.
pub fn train(
    model: Maker,
    train: &[PreparedSample],
    val: &[PreparedSample],
    cfg: &TrainConfig,
    sink: &mut dyn FnMut(&LogRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let eval_batch = cfg.batch_size;
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let mut best: Option<(f64, ParamStore, TrainingState)> = None;
    let mut last_val = None;
    for _ in 0..cfg.epochs {
        let train_total = trainer.run_epoch(train, sink)?;
        let (val_deg, val_norm) = if val.is_empty() {
            (None, None)
        } else {
            let table = error_table(&trainer.model, val, eval_batch)?;
            let all = table.bands().pop().unwrap();
            (Some(all.mae_deg), Some(all.mae_norm))
        };
        last_val = val_deg;
        sink(&LogRecord::Epoch(EpochRecord {
            epoch: trainer.epoch - 1,
            step: trainer.step,
            lambda: trainer.state.lambda,
            train_total,
            val_mae_deg: val_deg,
            val_mae_norm: val_norm,
        }))?;
        if let Some(v) = val_deg {
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, trainer.model.params.clone(), trainer.training_state()));
            }
        }
    }
    let state = trainer.training_state();
    let (best_val, best_params, best_state) = match best {
        Some((v, p, s)) => (Some(v), p, s),
        None => (None, trainer.model.params.clone(), state.clone()),
    };
    Ok(TrainOutcome {
        model: trainer.model,
        state,
        best_params,
        best_state,
        final_val_mae_deg: last_val,
        best_val_mae_deg: best_val,
    })
}

#[cfg(test)]
mod tests;
