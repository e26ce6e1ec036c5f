//! FedAvg round engine.
//!
//! Each round the server samples a cohort, the cohort trains from the
//! current global model on local data, and the server replaces the global
//! model by the sample-count-weighted mean of the returned models.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DataShard, Dataset};
use crate::error::{Error, Result};
use crate::model::{self, Hyperparams, ModelSpec, ParamVector};
use crate::seed::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlConfig {
    pub num_users: usize,
    /// Fraction of users selected each round.
    pub fraction: f64,
    pub hyper: Hyperparams,
    pub max_rounds: usize,
    /// Broadcast the global model to every user instead of the cohort only.
    pub broadcast_all: bool,
}

impl Default for FlConfig {
    fn default() -> Self {
        FlConfig {
            num_users: 100,
            fraction: 0.02,
            hyper: Hyperparams::default(),
            max_rounds: 100,
            broadcast_all: false,
        }
    }
}

impl FlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_users == 0 {
            return Err(Error::invalid("num_users must be at least 1"));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "fraction must be in (0, 1], got {}",
                self.fraction
            )));
        }
        self.hyper.validate()
    }

    pub fn cohort_size(&self) -> usize {
        cohort_size(self.num_users, self.fraction)
    }
}

/// `max(1, round(θ·U))`, never more than `U`.
pub fn cohort_size(num_users: usize, fraction: f64) -> usize {
    ((fraction * num_users as f64).round() as usize).clamp(1, num_users.max(1))
}

/// Uniform sample without replacement, returned in ascending id order.
pub fn select_clients<R: rand::Rng + ?Sized>(num_users: usize, fraction: f64, rng: &mut R) -> Vec<usize> {
    let mut ids = index::sample(rng, num_users, cohort_size(num_users, fraction)).into_vec();
    ids.sort_unstable();
    ids
}

/// Sample-count-weighted coordinate mean of the given models.
pub fn aggregate<'a, I>(updates: I) -> Result<ParamVector>
where
    I: IntoIterator<Item = (&'a ParamVector, usize)>,
{
    let updates: Vec<(&ParamVector, usize)> = updates.into_iter().collect();
    let Some(&(first, _)) = updates.first() else {
        return Err(Error::Empty("update list"));
    };
    if let Some(&(bad, _)) = updates.iter().find(|(p, _)| p.len() != first.len()) {
        return Err(Error::DimensionMismatch {
            expected: first.len(),
            actual: bad.len(),
        });
    }
    if updates.iter().any(|&(_, n)| n == 0) {
        return Err(Error::invalid("every update must carry at least one sample"));
    }
    let total: f64 = updates.iter().map(|&(_, n)| n as f64).sum();
    let mut out = ParamVector::zeros(first.len());
    for (params, n) in updates {
        let weight = n as f64 / total;
        for (o, v) in out.as_mut_slice().iter_mut().zip(params.as_slice()) {
            *o += weight * v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlState {
    pub global: ParamVector,
    /// Rounds completed so far.
    pub round: usize,
    pub master_seed: u64,
    pub repeat: u64,
}

impl FlState {
    pub fn new(global: ParamVector, master_seed: u64, repeat: u64) -> Self {
        FlState {
            global,
            round: 0,
            master_seed,
            repeat,
        }
    }

    /// Seed for stream `purpose` of `user` in the upcoming round.
    pub fn seed(&self, user: usize, purpose: Purpose) -> u64 {
        seed::derive(self.master_seed, self.repeat, self.round as u64, user as u64, purpose)
    }

    /// Cohort of the upcoming round.
    pub fn select(&self, config: &FlConfig) -> Vec<usize> {
        let mut rng = seed::rng(self.seed(0, Purpose::Selection));
        select_clients(config.num_users, config.fraction, &mut rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub user: usize,
    pub params: ParamVector,
    pub num_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutput {
    pub state: FlState,
    pub selected: Vec<usize>,
    pub updates: Vec<LocalUpdate>,
}

/// Trains `selected` from the current global model and aggregates.
/// Client training runs in parallel; results do not depend on scheduling.
pub fn train_cohort(
    state: &FlState,
    selected: &[usize],
    config: &FlConfig,
    data: &Dataset,
    shards: &[DataShard],
    spec: &ModelSpec,
) -> Result<RoundOutput> {
    if shards.len() != config.num_users {
        return Err(Error::invalid(format!(
            "{} shards for {} users",
            shards.len(),
            config.num_users
        )));
    }
    let updates = selected
        .par_iter()
        .map(|&user| {
            let shard = shards
                .get(user)
                .ok_or_else(|| Error::invalid(format!("no shard for user {user}")))?;
            let params = model::local_train(
                spec,
                &state.global,
                data,
                shard,
                &config.hyper,
                state.seed(user, Purpose::LocalTraining),
            )?;
            Ok(LocalUpdate {
                user,
                params,
                num_samples: shard.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let global = aggregate(updates.iter().map(|u| (&u.params, u.num_samples)))?;
    Ok(RoundOutput {
        state: FlState {
            global,
            round: state.round + 1,
            ..state.clone()
        },
        selected: selected.to_vec(),
        updates,
    })
}

/// One full FedAvg round: select, broadcast, train locally, aggregate.
pub fn run_round(
    state: &FlState,
    config: &FlConfig,
    data: &Dataset,
    shards: &[DataShard],
    spec: &ModelSpec,
) -> Result<RoundOutput> {
    config.validate()?;
    let selected = state.select(config);
    train_cohort(state, &selected, config, data, shards, spec)
}
