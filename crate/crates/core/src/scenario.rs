//! Experiment orchestration.
//!
//! A [`Scenario`] fixes everything about an experiment; [`run_scenario`]
//! executes `repeats` independent instances of it in parallel and averages
//! their per-round metrics. Every random choice in a repeat (user layout, CPU
//! speeds, data split, hovering point, cohorts, local shuffles) comes from a
//! stream keyed by `(master_seed, repeat, round, user, purpose)`, so two
//! scenarios that differ only in placement scheme see identical users,
//! cohorts and training trajectories.

use std::io::{self, Write};
use std::path::PathBuf;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelParams};
use crate::data::{self, DataShard, Dataset, PartitionScheme};
use crate::energy::{
    self, apply_budget, BudgetDecision, ClientTiming, EnergyLedger, Entity, NodeProfile, RoundEnergy, UavProfile,
    UserRoundEnergy,
};
use crate::error::{Error, Result};
use crate::fedavg::{self, FlConfig, FlState};
use crate::model::{self, ModelKind, ModelSpec};
use crate::placement::{self, Area, Placement, Site};
use crate::seed::{self, Purpose};

/// Who hosts the parameter server and who trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    /// Terrestrial clients, aerial server.
    G2A,
    /// Aerial clients, terrestrial server.
    A2G,
    /// Aerial clients and server.
    A2A,
    /// Aerial server; a share of the clients is aerial, the rest terrestrial.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementScheme {
    MinSumDist,
    Random,
    Fixed { x: f64, y: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hidden_dim: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Logistic,
            hidden_dim: 32,
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserConfig {
    pub cpu_min_hz: f64,
    pub cpu_max_hz: f64,
    pub cycles_per_bit: u64,
    /// Altitude of aerial clients (A2G, A2A, Mixed).
    pub aerial_altitude_m: f64,
    /// Share of aerial clients in the Mixed form.
    pub aerial_fraction: f64,
    /// Fixed ground positions; drawn uniformly over the area when absent.
    pub positions: Option<Vec<[f64; 2]>>,
    /// Charge CPU energy `κ·f²·cycles` to users.
    pub compute_energy: bool,
    pub kappa: f64,
}

impl Default for UserConfig {
    fn default() -> Self {
        UserConfig {
            cpu_min_hz: 1.8e9,
            cpu_max_hz: 2.0e9,
            cycles_per_bit: 10,
            aerial_altitude_m: 100.0,
            aerial_fraction: 0.5,
            positions: None,
            compute_energy: false,
            kappa: energy::DEFAULT_KAPPA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyConfig {
    /// Server budget in joules; infinite means unlimited.
    pub budget_j: f64,
    /// Per-user budget in joules.
    pub user_budget_j: f64,
    /// One-off cost of flying to the hover point, charged in the first round.
    pub flight_energy_j: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        EnergyConfig {
            budget_j: f64::INFINITY,
            user_budget_j: f64::INFINITY,
            flight_energy_j: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub test_samples_per_class: usize,
    pub input_dim: usize,
    pub spread: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_classes: 10,
            samples_per_class: 600,
            test_samples_per_class: 100,
            input_dim: 784,
            spread: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub enum DataSource {
    Synthetic(SyntheticConfig),
    /// Directory holding the standard MNIST file names.
    Mnist {
        dir: PathBuf,
        train_limit: Option<usize>,
        test_limit: Option<usize>,
    },
    Provided {
        train: Arc<Dataset>,
        test: Arc<Dataset>,
    },
}

impl DataSource {
    /// Returns `(train, test)`.
    pub fn load(&self) -> Result<(Arc<Dataset>, Arc<Dataset>)> {
        match self {
            DataSource::Synthetic(cfg) => {
                let train = data::synth_blobs(
                    cfg.num_classes,
                    cfg.samples_per_class,
                    cfg.input_dim,
                    cfg.spread,
                    cfg.seed,
                )?;
                let test = data::synth_blobs(
                    cfg.num_classes,
                    cfg.test_samples_per_class.max(1),
                    cfg.input_dim,
                    cfg.spread,
                    seed::mix(&[cfg.seed, 0x7e57]),
                )?;
                Ok((Arc::new(train), Arc::new(test)))
            }
            DataSource::Mnist {
                dir,
                train_limit,
                test_limit,
            } => {
                let mut train =
                    data::load_idx(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))?;
                let mut test = data::load_idx(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"))?;
                if let Some(n) = train_limit {
                    train = train.truncated(*n);
                }
                if let Some(n) = test_limit {
                    test = test.truncated(*n);
                }
                Ok((Arc::new(train), Arc::new(test)))
            }
            DataSource::Provided { train, test } => Ok((train.clone(), test.clone())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub form: Form,
    pub fl: FlConfig,
    pub model: ModelConfig,
    pub channel: ChannelParams,
    /// Per-user uplink bandwidth; defaults to the total split over the cohort.
    pub uplink_bandwidth_hz: Option<f64>,
    pub bits_per_param: u64,
    pub uav: UavProfile,
    pub users: UserConfig,
    pub area: Area,
    pub placement: PlacementScheme,
    pub placement_tol_m: f64,
    pub energy: EnergyConfig,
    pub data: DataSource,
    pub partition: PartitionScheme,
    pub repeats: usize,
    pub master_seed: u64,
    /// Evaluate the global model every this many rounds (and after the last).
    pub eval_every: usize,
    /// Skip local training and evaluation; timing and energy only.
    pub timing_only: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            form: Form::G2A,
            fl: FlConfig::default(),
            model: ModelConfig::default(),
            channel: ChannelParams::default(),
            uplink_bandwidth_hz: None,
            bits_per_param: 32,
            uav: UavProfile::default(),
            users: UserConfig::default(),
            area: Area::default(),
            placement: PlacementScheme::MinSumDist,
            placement_tol_m: placement::DEFAULT_TOL_M,
            energy: EnergyConfig::default(),
            data: DataSource::Synthetic(SyntheticConfig::default()),
            partition: PartitionScheme::Sharded { shards_per_user: 2 },
            repeats: 20,
            master_seed: 0,
            eval_every: 1,
            timing_only: false,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.fl.validate()?;
        self.channel.validate()?;
        self.uav.validate()?;
        self.area.validate()?;
        if self.repeats == 0 {
            return Err(Error::invalid("repeats must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("eval_every must be at least 1"));
        }
        if self.bits_per_param == 0 {
            return Err(Error::invalid("bits_per_param must be at least 1"));
        }
        if let Some(b) = self.uplink_bandwidth_hz {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::invalid(format!("uplink bandwidth must be positive, got {b}")));
            }
        }
        if !(self.placement_tol_m > 0.0) {
            return Err(Error::invalid("placement tolerance must be positive"));
        }
        let u = &self.users;
        if !(u.cpu_min_hz > 0.0 && u.cpu_min_hz <= u.cpu_max_hz && u.cpu_max_hz.is_finite()) {
            return Err(Error::invalid(format!(
                "cpu range [{}, {}] is not a positive interval",
                u.cpu_min_hz, u.cpu_max_hz
            )));
        }
        if u.cycles_per_bit == 0 {
            return Err(Error::invalid("cycles_per_bit must be at least 1"));
        }
        for (name, b) in [
            ("budget_j", self.energy.budget_j),
            ("user_budget_j", self.energy.user_budget_j),
        ] {
            if !(b > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {b}")));
            }
        }
        if !(self.energy.flight_energy_j >= 0.0 && self.energy.flight_energy_j.is_finite()) {
            return Err(Error::invalid("flight_energy_j must be non-negative"));
        }
        if let Some(p) = &u.positions {
            if p.len() != self.fl.num_users {
                return Err(Error::Topology(format!(
                    "{} user positions for {} users",
                    p.len(),
                    self.fl.num_users
                )));
            }
        }
        match self.form {
            Form::G2A => {}
            Form::A2G | Form::A2A => {
                if !(u.aerial_altitude_m > 0.0) {
                    return Err(Error::Topology(format!(
                        "{:?} needs aerial clients at a positive altitude",
                        self.form
                    )));
                }
            }
            Form::Mixed => {
                if !(u.aerial_altitude_m > 0.0) || !(0.0..=1.0).contains(&u.aerial_fraction) {
                    return Err(Error::Topology(
                        "mixed form needs a positive aerial altitude and an aerial fraction in [0, 1]".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn server_altitude(&self) -> f64 {
        match self.form {
            Form::A2G => 0.0,
            _ => self.uav.altitude_m,
        }
    }

    fn aerial_clients(&self) -> usize {
        let n = self.fl.num_users;
        match self.form {
            Form::G2A => 0,
            Form::A2G | Form::A2A => n,
            Form::Mixed => ((self.users.aerial_fraction * n as f64).round() as usize).min(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Server,
    Client,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    pub user: usize,
    pub vertical_m: f64,
    pub horizontal_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub server: Placement,
    pub server_aerial: bool,
    pub users: Vec<NodeProfile>,
    /// Server-to-user link geometry, indexed by user id.
    pub links: Vec<LinkGeometry>,
}

impl Topology {
    pub fn role(&self, node: Option<usize>) -> Role {
        match node {
            None => Role::Server,
            Some(_) => Role::Client,
        }
    }
}

/// Places users and the server for one repeat.
///
/// Users are drawn uniformly over the area (unless positions are fixed),
/// with CPU speeds uniform over the configured range. Link vertical offsets
/// are altitude differences, so equal-altitude aerial links are purely
/// horizontal.
pub fn build_topology(scenario: &Scenario, repeat: u64) -> Result<Topology> {
    scenario.validate()?;
    let n = scenario.fl.num_users;
    let master = scenario.master_seed;
    let positions: Vec<[f64; 2]> = match &scenario.users.positions {
        Some(p) => p.clone(),
        None => {
            let mut rng = seed::rng(seed::derive(master, repeat, 0, 0, Purpose::UserPositions));
            (0..n)
                .map(|_| {
                    [
                        rng.random::<f64>() * scenario.area.width_m,
                        rng.random::<f64>() * scenario.area.height_m,
                    ]
                })
                .collect()
        }
    };
    let mut cpu_rng = seed::rng(seed::derive(master, repeat, 0, 0, Purpose::CpuFrequency));
    let aerial = scenario.aerial_clients();
    let users: Vec<NodeProfile> = positions
        .iter()
        .enumerate()
        .map(|(id, &[x, y])| {
            let cpu_freq_hz = if scenario.users.cpu_min_hz < scenario.users.cpu_max_hz {
                cpu_rng.random_range(scenario.users.cpu_min_hz..=scenario.users.cpu_max_hz)
            } else {
                scenario.users.cpu_min_hz
            };
            NodeProfile {
                cpu_freq_hz,
                cycles_per_bit: scenario.users.cycles_per_bit,
                tx_power_w: scenario.channel.user_tx_power_w,
                x,
                y,
                altitude_m: if id < aerial {
                    scenario.users.aerial_altitude_m
                } else {
                    0.0
                },
            }
        })
        .collect();

    let server_altitude = scenario.server_altitude();
    let sites: Vec<Site> = users
        .iter()
        .map(|u| Site {
            x: u.x,
            y: u.y,
            vertical_m: (server_altitude - u.altitude_m).abs(),
        })
        .collect();
    let (x, y) = match scenario.placement {
        PlacementScheme::Fixed { x, y } => (x, y),
        PlacementScheme::Random => {
            let mut rng = seed::rng(seed::derive(master, repeat, 0, 0, Purpose::Placement));
            let p = placement::random_placement(&scenario.area, server_altitude, &mut rng);
            (p.x, p.y)
        }
        PlacementScheme::MinSumDist => {
            let s = placement::solve_sites(&sites, scenario.placement_tol_m, placement::DEFAULT_MAX_ITERATIONS)?;
            (s.placement.x, s.placement.y)
        }
    };
    let links = sites
        .iter()
        .enumerate()
        .map(|(user, s)| LinkGeometry {
            user,
            vertical_m: s.vertical_m,
            horizontal_m: (x - s.x).hypot(y - s.y),
        })
        .collect::<Vec<_>>();
    if let Some(l) = links.iter().find(|l| l.vertical_m == 0.0 && l.horizontal_m == 0.0) {
        return Err(Error::Topology(format!("server coincides with user {}", l.user)));
    }
    Ok(Topology {
        server: Placement {
            x,
            y,
            altitude_m: server_altitude,
        },
        server_aerial: server_altitude > 0.0,
        users,
        links,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    /// 1-based round number.
    pub round: usize,
    pub duration_s: f64,
    pub uav_energy_j: f64,
    pub cumulative_uav_energy_j: f64,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub selected: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltReason {
    Budget,
    MaxRounds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatResult {
    pub repeat: usize,
    pub topology: Topology,
    pub metrics: Vec<RoundMetrics>,
    pub halt: HaltReason,
    pub ledger: EnergyLedger,
}

impl RepeatResult {
    /// Highest test accuracy reached before halting.
    pub fn best_accuracy(&self) -> Option<f64> {
        best_accuracy(&self.metrics)
    }
}

/// Per-round statistics across repeats.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundSummary {
    pub round: usize,
    pub duration_s: Stat,
    pub uav_energy_j: Stat,
    pub cumulative_uav_energy_j: Stat,
    pub test_loss: Option<Stat>,
    pub test_accuracy: Option<Stat>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Stat { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub repeats: Vec<RepeatResult>,
    /// Rounds completed by every repeat, averaged over all of them.
    pub summary: Vec<RoundSummary>,
}

impl ExperimentResult {
    pub fn mean_best_accuracy(&self) -> Option<f64> {
        let best: Option<Vec<f64>> = self.repeats.iter().map(RepeatResult::best_accuracy).collect();
        best.map(|b| Stat::of(&b).mean)
    }
}

pub fn best_accuracy(metrics: &[RoundMetrics]) -> Option<f64> {
    metrics.iter().filter_map(|m| m.test_accuracy).reduce(f64::max)
}

/// Best accuracy a run would reach if halted by a server budget of
/// `budget_j`: only the rounds whose cumulative server energy fits count.
pub fn best_accuracy_within_budget(metrics: &[RoundMetrics], budget_j: f64) -> Option<f64> {
    best_accuracy(
        &metrics
            .iter()
            .take_while(|m| m.cumulative_uav_energy_j <= budget_j)
            .cloned()
            .collect::<Vec<_>>(),
    )
}

/// Runs every repeat of the scenario on the current rayon pool.
pub fn run_scenario(scenario: &Scenario) -> Result<ExperimentResult> {
    scenario.validate()?;
    let (train, test) = scenario.data.load()?;
    run_scenario_on(scenario, &train, &test)
}

/// As [`run_scenario`] with already-loaded data.
pub fn run_scenario_on(scenario: &Scenario, train: &Dataset, test: &Dataset) -> Result<ExperimentResult> {
    scenario.validate()?;
    let repeats = (0..scenario.repeats)
        .into_par_iter()
        .map(|r| run_repeat(scenario, r, train, test))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&repeats);
    Ok(ExperimentResult { repeats, summary })
}

fn model_spec(scenario: &Scenario, repeat: usize, train: &Dataset, test: &Dataset) -> Result<ModelSpec> {
    if train.input_dim() != test.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: train.input_dim(),
            actual: test.input_dim(),
        });
    }
    let spec = ModelSpec {
        kind: scenario.model.kind,
        input_dim: train.input_dim(),
        num_classes: train.num_classes().max(test.num_classes()),
        hidden_dim: scenario.model.hidden_dim,
        init_seed: seed::mix(&[
            scenario.model.init_seed,
            seed::derive(scenario.master_seed, repeat as u64, 0, 0, Purpose::ModelInit),
        ]),
    };
    spec.validate()?;
    Ok(spec)
}

/// One seeded instance of the scenario.
pub fn run_repeat(scenario: &Scenario, repeat: usize, train: &Dataset, test: &Dataset) -> Result<RepeatResult> {
    let r = repeat as u64;
    let topology = build_topology(scenario, r)?;
    let spec = model_spec(scenario, repeat, train, test)?;
    let shards = data::partition(
        train,
        scenario.fl.num_users,
        scenario.partition,
        seed::derive(scenario.master_seed, r, 0, 0, Purpose::Partition),
    )?;
    let payload = channel::payload_bits(spec.param_count(), scenario.bits_per_param);
    let uplink_bw = scenario
        .uplink_bandwidth_hz
        .unwrap_or_else(|| scenario.channel.uplink_bandwidth(scenario.fl.cohort_size()));

    let mut state = FlState::new(model::init_model(&spec)?, scenario.master_seed, r);
    let mut ledger = EnergyLedger::new(scenario.fl.num_users);
    let mut metrics = Vec::new();
    let mut halt = HaltReason::MaxRounds;

    for round in 0..scenario.fl.max_rounds {
        let selected = state.select(&scenario.fl);
        let energy = round_energy(
            scenario,
            &topology,
            &shards,
            train,
            &selected,
            payload,
            uplink_bw,
            round == 0,
        )?;
        let over_budget = std::iter::once(apply_budget(
            &ledger,
            &energy.breakdown,
            scenario.energy.budget_j,
            Entity::Server,
        ))
        .chain(selected.iter().map(|&u| {
            apply_budget(
                &ledger,
                &energy.breakdown,
                scenario.energy.user_budget_j,
                Entity::User(u),
            )
        }))
        .any(|d| d == BudgetDecision::Halt);
        if over_budget {
            halt = HaltReason::Budget;
            break;
        }
        let server_j = energy.breakdown.server_j();
        ledger.record(energy.breakdown)?;

        state = if scenario.timing_only {
            FlState {
                round: state.round + 1,
                ..state
            }
        } else {
            fedavg::train_cohort(&state, &selected, &scenario.fl, train, &shards, &spec)?.state
        };

        let number = round + 1;
        let evaluate = !scenario.timing_only && (number % scenario.eval_every == 0 || number == scenario.fl.max_rounds);
        let eval = if evaluate {
            Some(model::evaluate(&spec, &state.global, test)?)
        } else {
            None
        };
        metrics.push(RoundMetrics {
            round: number,
            duration_s: energy.duration_s,
            uav_energy_j: server_j,
            cumulative_uav_energy_j: ledger.cumulative(Entity::Server),
            test_loss: eval.map(|e| e.loss),
            test_accuracy: eval.map(|e| e.accuracy),
            selected,
        });
    }

    // A budget halt can land between evaluation strides.
    if !scenario.timing_only {
        if let Some(last) = metrics.last_mut() {
            if last.test_accuracy.is_none() {
                let e = model::evaluate(&spec, &state.global, test)?;
                last.test_loss = Some(e.loss);
                last.test_accuracy = Some(e.accuracy);
            }
        }
    }

    Ok(RepeatResult {
        repeat,
        topology,
        metrics,
        halt,
        ledger,
    })
}

struct TimedRound {
    duration_s: f64,
    breakdown: RoundEnergy,
}

#[allow(clippy::too_many_arguments)]
fn round_energy(
    scenario: &Scenario,
    topology: &Topology,
    shards: &[DataShard],
    train: &Dataset,
    selected: &[usize],
    payload: u64,
    uplink_bw: f64,
    first_round: bool,
) -> Result<TimedRound> {
    let epochs = scenario.fl.hyper.local_epochs;
    let mut timings = Vec::with_capacity(selected.len());
    let mut users = Vec::with_capacity(selected.len());
    for &u in selected {
        let node = &topology.users[u];
        let link = &topology.links[u];
        let samples = shards[u].len();
        let compute_s = energy::user_compute_time(
            samples,
            train.bits_per_sample(),
            node.cycles_per_bit,
            node.cpu_freq_hz,
            epochs,
        );
        let up = channel::LinkBudget::new(uplink_bw, node.tx_power_w, link.vertical_m, link.horizontal_m)?;
        let upload_s = channel::tx_time(payload, channel::link_rate(&up, &scenario.channel))?;
        timings.push(ClientTiming { compute_s, upload_s });
        let compute_j = if scenario.users.compute_energy {
            let cycles = energy::compute_cycles(samples, train.bits_per_sample(), node.cycles_per_bit, epochs);
            energy::user_compute_energy(scenario.users.kappa, node.cpu_freq_hz, cycles)
        } else {
            0.0
        };
        users.push(UserRoundEnergy {
            user: u,
            compute_j,
            tx_j: node.tx_power_w * upload_s,
            propulsion_j: 0.0,
        });
    }

    // One broadcast, paced by the weakest recipient.
    let recipients: Vec<usize> = if scenario.fl.broadcast_all {
        (0..topology.users.len()).collect()
    } else {
        selected.to_vec()
    };
    let mut worst_rate = f64::INFINITY;
    for &u in &recipients {
        let link = &topology.links[u];
        let down = channel::LinkBudget::new(
            scenario.channel.uav_downlink_bandwidth_hz,
            scenario.uav.tx_power_w,
            link.vertical_m,
            link.horizontal_m,
        )?;
        worst_rate = worst_rate.min(channel::link_rate(&down, &scenario.channel));
    }
    let t_down = channel::tx_time(payload, worst_rate)?;
    let duration_s = energy::round_duration(t_down, &timings)?;

    let hover_j = if topology.server_aerial {
        scenario.uav.propulsion_power_w * duration_s
    } else {
        0.0
    };
    let uav_tx_j = scenario.uav.tx_power_w * t_down;
    let hover_j = if first_round && topology.server_aerial {
        hover_j + scenario.energy.flight_energy_j
    } else {
        hover_j
    };

    // Aerial clients hover for the whole round whether selected or not.
    let propulsion_j = scenario.uav.propulsion_power_w * duration_s;
    for id in (0..topology.users.len()).filter(|&i| topology.users[i].is_aerial()) {
        match users.iter_mut().find(|e| e.user == id) {
            Some(e) => e.propulsion_j = propulsion_j,
            None => users.push(UserRoundEnergy {
                user: id,
                propulsion_j,
                ..Default::default()
            }),
        }
    }

    Ok(TimedRound {
        duration_s,
        breakdown: RoundEnergy {
            hover_j,
            uav_tx_j,
            users,
        },
    })
}

fn summarize(repeats: &[RepeatResult]) -> Vec<RoundSummary> {
    let rounds = repeats.iter().map(|r| r.metrics.len()).min().unwrap_or(0);
    (0..rounds)
        .map(|i| {
            let column = |f: &dyn Fn(&RoundMetrics) -> f64| -> Stat {
                Stat::of(&repeats.iter().map(|r| f(&r.metrics[i])).collect::<Vec<_>>())
            };
            let optional = |f: &dyn Fn(&RoundMetrics) -> Option<f64>| -> Option<Stat> {
                repeats
                    .iter()
                    .map(|r| f(&r.metrics[i]))
                    .collect::<Option<Vec<f64>>>()
                    .map(|v| Stat::of(&v))
            };
            RoundSummary {
                round: i + 1,
                duration_s: column(&|m| m.duration_s),
                uav_energy_j: column(&|m| m.uav_energy_j),
                cumulative_uav_energy_j: column(&|m| m.cumulative_uav_energy_j),
                test_loss: optional(&|m| m.test_loss),
                test_accuracy: optional(&|m| m.test_accuracy),
            }
        })
        .collect()
}

pub const CSV_HEADER: &str = "round,duration_s,uav_energy_j,cum_uav_energy_j,test_loss,test_acc,selected";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-round rows of one repeat. Selected ids are `;`-separated; metrics
/// that were not evaluated are left empty.
pub fn write_metrics_csv<W: Write>(mut out: W, metrics: &[RoundMetrics]) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for m in metrics {
        let selected = m.selected.iter().map(usize::to_string).collect::<Vec<_>>().join(";");
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            m.round,
            m.duration_s,
            m.uav_energy_j,
            m.cumulative_uav_energy_j,
            opt(m.test_loss),
            opt(m.test_accuracy),
            selected
        )?;
    }
    Ok(())
}

/// Means across repeats, same columns as [`write_metrics_csv`] with an empty
/// `selected` column.
pub fn write_summary_csv<W: Write>(mut out: W, summary: &[RoundSummary]) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for s in summary {
        writeln!(
            out,
            "{},{},{},{},{},{},",
            s.round,
            s.duration_s.mean,
            s.uav_energy_j.mean,
            s.cumulative_uav_energy_j.mean,
            opt(s.test_loss.map(|x| x.mean)),
            opt(s.test_accuracy.map(|x| x.mean)),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Scenario {
        Scenario {
            fl: FlConfig {
                num_users: 10,
                fraction: 0.2,
                max_rounds: 4,
                ..FlConfig::default()
            },
            data: DataSource::Synthetic(SyntheticConfig {
                num_classes: 3,
                samples_per_class: 20,
                test_samples_per_class: 10,
                input_dim: 5,
                spread: 0.1,
                seed: 1,
            }),
            repeats: 2,
            ..Scenario::default()
        }
    }

    #[test]
    fn fixed_placement_passes_through() {
        let s = Scenario {
            placement: PlacementScheme::Fixed { x: 500.0, y: 500.0 },
            ..small()
        };
        let t = build_topology(&s, 0).unwrap();
        assert_eq!(
            t.server,
            Placement {
                x: 500.0,
                y: 500.0,
                altitude_m: 100.0
            }
        );
        assert!(t.server_aerial);
        assert!(t.links.iter().all(|l| l.vertical_m == 100.0));
        assert_eq!(t.role(None), Role::Server);
        assert_eq!(t.role(Some(3)), Role::Client);
    }

    #[test]
    fn a2a_links_are_horizontal() {
        let s = Scenario {
            form: Form::A2A,
            placement: PlacementScheme::Fixed { x: -1.0, y: -1.0 },
            ..small()
        };
        let t = build_topology(&s, 0).unwrap();
        assert!(t.links.iter().all(|l| l.vertical_m == 0.0 && l.horizontal_m > 0.0));
        assert!(t.users.iter().all(NodeProfile::is_aerial));
    }

    #[test]
    fn a2g_server_is_on_the_ground() {
        let s = Scenario {
            form: Form::A2G,
            ..small()
        };
        let t = build_topology(&s, 0).unwrap();
        assert_eq!(t.server.altitude_m, 0.0);
        assert!(!t.server_aerial);
        assert!(t.links.iter().all(|l| l.vertical_m == 100.0));
    }

    #[test]
    fn mixed_form_splits_clients() {
        let s = Scenario {
            form: Form::Mixed,
            users: UserConfig {
                aerial_fraction: 0.3,
                aerial_altitude_m: 60.0,
                ..UserConfig::default()
            },
            ..small()
        };
        let t = build_topology(&s, 1).unwrap();
        assert_eq!(t.users.iter().filter(|u| u.is_aerial()).count(), 3);
        assert!(t.links[..3].iter().all(|l| l.vertical_m == 40.0));
        assert!(t.links[3..].iter().all(|l| l.vertical_m == 100.0));
    }

    #[test]
    fn min_sum_dist_server_matches_placement_module() {
        let users = vec![[0.0, 0.0], [300.0, 40.0], [120.0, 500.0]];
        let s = Scenario {
            fl: FlConfig {
                num_users: 3,
                fraction: 1.0,
                ..small().fl
            },
            users: UserConfig {
                positions: Some(users.clone()),
                ..UserConfig::default()
            },
            ..small()
        };
        let t = build_topology(&s, 0).unwrap();
        let p = placement::min_sum_dist(&users, 100.0, placement::DEFAULT_TOL_M).unwrap();
        assert_eq!(t.server, p.placement);
    }

    #[test]
    fn inconsistent_topologies_fail() {
        let wrong_count = Scenario {
            users: UserConfig {
                positions: Some(vec![[0.0, 0.0]]),
                ..UserConfig::default()
            },
            ..small()
        };
        assert!(matches!(build_topology(&wrong_count, 0), Err(Error::Topology(_))));
        let grounded = Scenario {
            form: Form::A2G,
            users: UserConfig {
                aerial_altitude_m: 0.0,
                ..UserConfig::default()
            },
            ..small()
        };
        assert!(matches!(build_topology(&grounded, 0), Err(Error::Topology(_))));
        let colocated = Scenario {
            form: Form::A2A,
            fl: FlConfig {
                num_users: 1,
                fraction: 1.0,
                ..small().fl
            },
            users: UserConfig {
                positions: Some(vec![[5.0, 5.0]]),
                ..UserConfig::default()
            },
            placement: PlacementScheme::Fixed { x: 5.0, y: 5.0 },
            ..small()
        };
        assert!(matches!(build_topology(&colocated, 0), Err(Error::Topology(_))));
    }

    #[test]
    fn zero_rounds_gives_empty_result() {
        let s = Scenario {
            repeats: 1,
            fl: FlConfig {
                max_rounds: 0,
                ..small().fl
            },
            ..small()
        };
        let r = run_scenario(&s).unwrap();
        assert_eq!(r.repeats.len(), 1);
        assert!(r.repeats[0].metrics.is_empty());
        assert_eq!(r.repeats[0].halt, HaltReason::MaxRounds);
        assert!(r.summary.is_empty());
    }

    #[test]
    fn tiny_budget_gives_zero_rounds() {
        let s = Scenario {
            energy: EnergyConfig {
                budget_j: 1e-6,
                ..EnergyConfig::default()
            },
            ..small()
        };
        let r = run_scenario(&s).unwrap();
        assert!(r
            .repeats
            .iter()
            .all(|x| x.metrics.is_empty() && x.halt == HaltReason::Budget));
    }

    #[test]
    fn runs_are_reproducible_and_sane() {
        let s = small();
        let a = run_scenario(&s).unwrap();
        assert_eq!(a, run_scenario(&s).unwrap());
        for rep in &a.repeats {
            assert_eq!(rep.metrics.len(), 4);
            let mut previous = 0.0;
            for (i, m) in rep.metrics.iter().enumerate() {
                assert_eq!(m.round, i + 1);
                assert!(m.duration_s > 0.0);
                assert!(m.cumulative_uav_energy_j >= previous);
                previous = m.cumulative_uav_energy_j;
                let acc = m.test_accuracy.unwrap();
                assert!((0.0..=1.0).contains(&acc));
                assert_eq!(m.selected.len(), 2);
            }
        }
        assert_eq!(a.summary.len(), 4);
    }

    #[test]
    fn eval_stride_and_budget_evaluate_last_round() {
        let s = Scenario {
            eval_every: 3,
            fl: FlConfig {
                max_rounds: 5,
                ..small().fl
            },
            ..small()
        };
        let r = run_scenario(&s).unwrap();
        let evaluated: Vec<usize> = r.repeats[0]
            .metrics
            .iter()
            .filter(|m| m.test_accuracy.is_some())
            .map(|m| m.round)
            .collect();
        assert_eq!(evaluated, vec![3, 5]);

        let full = run_scenario(&Scenario {
            eval_every: 100,
            ..small()
        })
        .unwrap();
        let budget = full.repeats[0].metrics[1].cumulative_uav_energy_j;
        let halted = run_scenario(&Scenario {
            eval_every: 100,
            energy: EnergyConfig {
                budget_j: budget,
                ..EnergyConfig::default()
            },
            ..small()
        })
        .unwrap();
        let rep = &halted.repeats[0];
        assert_eq!(rep.halt, HaltReason::Budget);
        assert_eq!(rep.metrics.len(), 2);
        assert!(rep.metrics[1].test_accuracy.is_some());
    }

    #[test]
    fn budget_truncation_matches_budgeted_run() {
        let full = run_scenario(&small()).unwrap();
        for k in 0..4 {
            let budget = full.repeats[0].metrics[k].cumulative_uav_energy_j * 1.0000001;
            let halted = run_scenario(&Scenario {
                energy: EnergyConfig {
                    budget_j: budget,
                    ..EnergyConfig::default()
                },
                ..small()
            })
            .unwrap();
            for (f, h) in full.repeats.iter().zip(&halted.repeats) {
                assert_eq!(best_accuracy_within_budget(&f.metrics, budget), h.best_accuracy());
            }
        }
    }

    #[test]
    fn flight_energy_charged_once() {
        let base = run_scenario(&small()).unwrap();
        let with_flight = run_scenario(&Scenario {
            energy: EnergyConfig {
                flight_energy_j: 500.0,
                ..EnergyConfig::default()
            },
            ..small()
        })
        .unwrap();
        let a = &base.repeats[0].metrics;
        let b = &with_flight.repeats[0].metrics;
        assert!((b[0].uav_energy_j - a[0].uav_energy_j - 500.0).abs() < 1e-9);
        assert_eq!(b[1].uav_energy_j, a[1].uav_energy_j);
    }

    #[test]
    fn aerial_clients_pay_propulsion() {
        let r = run_scenario(&Scenario {
            form: Form::A2G,
            ..small()
        })
        .unwrap();
        let rep = &r.repeats[0];
        let round = &rep.ledger.rounds()[0];
        assert_eq!(round.hover_j, 0.0);
        assert_eq!(round.users.len(), 10);
        assert!(round
            .users
            .iter()
            .all(|u| (u.propulsion_j - 100.0 * rep.metrics[0].duration_s).abs() < 1e-9));
    }

    #[test]
    fn csv_layout() {
        let metrics = vec![RoundMetrics {
            round: 1,
            duration_s: 0.5,
            uav_energy_j: 50.0,
            cumulative_uav_energy_j: 50.0,
            test_loss: None,
            test_accuracy: Some(0.25),
            selected: vec![3, 17],
        }];
        let mut out = Vec::new();
        write_metrics_csv(&mut out, &metrics).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            format!("{CSV_HEADER}\n1,0.5,50,50,,0.25,3;17\n")
        );
    }
}
