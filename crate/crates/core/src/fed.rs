//! The federated round loop: selection, local training, clipping and noise,
//! FedAvg (optionally through secure aggregation), meta-adaptation and
//! evaluation.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fewshot::Shard;
use crate::metrics::{self, ConfusionMatrix};
use crate::model::{ParamVec, Params};
use crate::privacy;
use crate::rng::{self, derive_seed, Purpose};
use crate::sched::{self, Scheduler, TraceRow};
use crate::secure_agg::{self, MaskSession};
use crate::train::{self, Init, ModelSpec, TrainConfig};

/// Sensitivity used by the accountant when no clip norm is configured.
pub const NOMINAL_SENSITIVITY: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    pub rounds: usize,
    pub model: ModelSpec,
    pub noise_std: f64,
    pub clip_norm: Option<f64>,
    pub delta: f64,
    pub meta_eta: f64,
    pub train: TrainConfig,
    pub fraction_bits: u32,
    pub master_seed: u64,
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Param("rounds must be >= 1".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Param("noise_std must be non-negative".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Param("clip_norm must be positive".into()));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Param("delta must be in (0, 1)".into()));
        }
        if !(self.meta_eta >= 0.0 && self.meta_eta.is_finite()) {
            return Err(Error::Param("meta_eta must be non-negative".into()));
        }
        self.train.validate()
    }

    /// Cumulative ε after `round` rounds; infinite without noise.
    pub fn epsilon_after(&self, round: usize) -> Result<f64> {
        if self.noise_std == 0.0 {
            return Ok(f64::INFINITY);
        }
        privacy::rdp_epsilon(
            self.noise_std,
            round,
            self.delta,
            self.clip_norm.unwrap_or(NOMINAL_SENSITIVITY),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundLog {
    pub round: usize,
    pub global_accuracy: f64,
    pub selected_clients: Vec<usize>,
    pub completed_clients: Vec<usize>,
    pub dropped_clients: Vec<usize>,
    pub epsilon_spent: f64,
    pub notes: Vec<String>,
}

/// Everything `run_training` reads.
#[derive(Debug, Clone)]
pub struct FedData<'a> {
    pub train: &'a Dataset,
    pub shards: &'a [Shard],
    pub test: &'a Dataset,
    /// Server-held support split for meta-adaptation.
    pub support: Option<&'a Dataset>,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub logs: Vec<RoundLog>,
    pub global: ParamVec,
    pub trace: Vec<TraceRow>,
    pub final_confusion: ConfusionMatrix,
}

/// Elementwise mean, summed in the given order and divided by the count.
pub fn fedavg(vecs: &[ParamVec]) -> Result<ParamVec> {
    let first = vecs
        .first()
        .ok_or_else(|| Error::Param("fedavg of an empty list".into()))?;
    let mut sum = vec![0.0; first.len()];
    for v in vecs {
        if v.layout != first.layout || v.len() != first.len() {
            return Err(Error::Shape("fedavg inputs have different layouts".into()));
        }
        for (s, x) in sum.iter_mut().zip(&v.values) {
            *s += x;
        }
    }
    let n = vecs.len() as f64;
    first.with_values(sum.into_iter().map(|s| s / n).collect())
}

/// Scales `vec` onto the L2 ball of radius `clip_norm` if it lies outside.
pub fn clip_update(vec: &ParamVec, clip_norm: f64) -> ParamVec {
    let norm = vec.norm();
    if norm <= clip_norm {
        return vec.clone();
    }
    let scale = clip_norm / norm;
    let mut out = vec.clone();
    out.values.iter_mut().for_each(|v| *v *= scale);
    out
}

/// Adds i.i.d. `N(0, σ²)` to every coordinate. `σ = 0` returns the input unchanged.
pub fn inject_noise<R: Rng + ?Sized>(vec: &ParamVec, noise_std: f64, rng: &mut R) -> ParamVec {
    if noise_std == 0.0 {
        return vec.clone();
    }
    let mut out = vec.clone();
    for v in out.values.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += noise_std * z;
    }
    out
}

/// One gradient step on the support split: `Θ⁺ = Θ̄ − η ∇L(Θ̄)`.
pub fn meta_adapt(global: &ParamVec, support: Option<(ArrayView2<f64>, &[usize])>, meta_eta: f64, l2_lambda: f64) -> Result<ParamVec> {
    let Some((x, y)) = support else {
        return Ok(global.clone());
    };
    if meta_eta == 0.0 || y.is_empty() {
        return Ok(global.clone());
    }
    let params = Params::unflatten(global)?;
    let (_, grad) = train::loss_grad(&params, x, y, l2_lambda)?;
    global.with_values(
        global
            .values
            .iter()
            .zip(&grad.values)
            .map(|(p, g)| p - meta_eta * g)
            .collect(),
    )
}

fn evaluate(global: &ParamVec, test: &Dataset) -> Result<(f64, Vec<usize>)> {
    let pred = Params::unflatten(global)?.predict(test.features().view())?;
    Ok((metrics::accuracy(test.labels(), &pred)?, pred))
}

struct ClientData {
    x: Array2<f64>,
    y: Vec<usize>,
}

/// Runs all rounds. Client work within a round runs in parallel; results are
/// reduced in client-id order, so the output does not depend on scheduling.
pub fn run_training(config: &FedConfig, data: &FedData<'_>, scheduler: &mut Scheduler, secure_agg_on: bool) -> Result<TrainingOutcome> {
    config.validate()?;
    if data.shards.len() != scheduler.num_clients() {
        return Err(Error::Param(format!(
            "{} shards for {} scheduled clients",
            data.shards.len(),
            scheduler.num_clients()
        )));
    }
    let clients: Vec<ClientData> = data
        .shards
        .iter()
        .map(|s| {
            let (x, y) = data.train.gather(&s.sample_indices);
            ClientData { x, y }
        })
        .collect();
    let support = data.support.map(|s| (s.features().view(), s.labels()));

    let init_seed = derive_seed(config.master_seed, Purpose::Init, 0, 0);
    let mut global = config.model.init(init_seed).flatten();
    let est_cost = sched::estimated_cost(&scheduler.cost, &config.train, global.len());
    let (mut accuracy, mut predictions) = evaluate(&global, data.test)?;

    let mut logs = Vec::with_capacity(config.rounds);
    let mut trace = Vec::new();
    for round in 1..=config.rounds {
        let participation = scheduler.run_round(round, est_cost);
        trace.extend(participation.trace);
        let mut notes = Vec::new();
        let completed = participation.completed;

        if completed.is_empty() {
            notes.push("no client completed; global model unchanged".to_string());
        } else {
            let wrap = |e: Error| Error::Round { round, source: Box::new(e) };
            let current = Params::unflatten(&global)?;
            let updates: Vec<(usize, ParamVec)> = completed
                .par_iter()
                .map(|&k| {
                    let seed = derive_seed(config.master_seed, Purpose::Train, round as u64, k as u64);
                    let client = &clients[k];
                    let fit = train::fit_local(Init::From(&current), client.x.view(), &client.y, &config.train, seed, k)?;
                    let mut local = fit.params.flatten();
                    if let Some(clip) = config.clip_norm {
                        let delta = local.with_values(local.values.iter().zip(&global.values).map(|(a, b)| a - b).collect())?;
                        let clipped = clip_update(&delta, clip);
                        local = local.with_values(global.values.iter().zip(&clipped.values).map(|(g, d)| g + d).collect())?;
                    }
                    let mut noise_rng = rng::stream(config.master_seed, Purpose::Noise, round as u64, k as u64);
                    Ok((k, inject_noise(&local, config.noise_std, &mut noise_rng)))
                })
                .collect::<Result<_>>()
                .map_err(wrap)?;

            let averaged = if secure_agg_on {
                secure_average(config, round, &participation.selected, &updates, &mut notes).map_err(wrap)?
            } else {
                let vecs: Vec<ParamVec> = updates.into_iter().map(|(_, v)| v).collect();
                fedavg(&vecs).map_err(wrap)?
            };
            global = meta_adapt(&averaged, support, config.meta_eta, config.train.l2_lambda).map_err(wrap)?;
            if !global.is_finite() {
                return Err(wrap(Error::GlobalNonFinite));
            }
            (accuracy, predictions) = evaluate(&global, data.test)?;
        }
        logs.push(RoundLog {
            round,
            global_accuracy: accuracy,
            selected_clients: participation.selected,
            completed_clients: completed,
            dropped_clients: participation.dropped,
            epsilon_spent: config.epsilon_after(round)?,
            notes,
        });
    }
    let final_confusion = metrics::confusion(data.test.labels(), &predictions, data.test.num_classes())?;
    Ok(TrainingOutcome {
        logs,
        global,
        trace,
        final_confusion,
    })
}

/// Masks over the selected set first; if anyone dropped, that aggregate
/// aborts and a fresh session over the survivors is used.
fn secure_average(
    config: &FedConfig,
    round: usize,
    selected: &[usize],
    updates: &[(usize, ParamVec)],
    notes: &mut Vec<String>,
) -> Result<ParamVec> {
    let survivors: Vec<usize> = updates.iter().map(|(k, _)| *k).collect();
    let first = MaskSession::new(config.master_seed, round as u64, 0, selected, config.fraction_bits)?;
    match secure_agg::secure_mean(updates, &first) {
        Ok(v) => return Ok(v),
        Err(Error::ProtocolAbort(msg)) => notes.push(format!("secure aggregation aborted ({msg}); retrying over survivors")),
        Err(e) => return Err(e),
    }
    let retry = MaskSession::new(config.master_seed, round as u64, 1, &survivors, config.fraction_bits)?;
    secure_agg::secure_mean(updates, &retry)
}

/// Splits a server-held support set off the training pool, stratified.
/// Returns `(client_pool, support)`; a zero fraction yields no support.
pub fn carve_support(train: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Option<Dataset>)> {
    if fraction == 0.0 {
        return Ok((train.clone(), None));
    }
    let (pool, support) = crate::data::train_test_split(train, fraction, derive_seed(seed, Purpose::Support, 0, 0))?;
    Ok((pool, Some(support)))
}
