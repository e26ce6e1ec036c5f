//! File form of a scenario.
//!
//! A TOML document with one table per concern. Every key is optional and
//! falls back to the library default; unknown keys are rejected.

use agifl_core::channel::{db_to_linear, dbm_to_watts, ChannelParams};
use agifl_core::data::PartitionScheme;
use agifl_core::energy::UavProfile;
use agifl_core::fedavg::FlConfig;
use agifl_core::model::{Hyperparams, ModelKind};
use agifl_core::placement::Area;
use agifl_core::scenario::{
    DataSource, EnergyConfig, Form, ModelConfig, PlacementScheme, Scenario, SyntheticConfig, UserConfig,
};
use serde::Deserialize;
use std::path::{Path, PathBuf};
use toml::{Table, Value};

pub const MNIST_ENV: &str = "AGIFL_MNIST_DIR";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioSection,
    pub fl: FlSection,
    pub model: ModelSection,
    pub channel: ChannelSection,
    pub uav: UavSection,
    pub users: UsersSection,
    pub area: AreaSection,
    pub energy: EnergySection,
    pub data: DataSection,
    pub compare: CompareSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementName {
    MinSumDist,
    Random,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionName {
    Iid,
    Sharded,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub form: Form,
    pub placement: PlacementName,
    pub fixed_x_m: f64,
    pub fixed_y_m: f64,
    pub placement_tol_m: f64,
    pub partition: PartitionName,
    pub shards_per_user: usize,
    pub repeats: usize,
    pub seed: u64,
    pub eval_every: usize,
    pub timing_only: bool,
    pub bits_per_param: u64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let s = Scenario::default();
        ScenarioSection {
            form: s.form,
            placement: PlacementName::MinSumDist,
            fixed_x_m: s.area.width_m / 2.0,
            fixed_y_m: s.area.height_m / 2.0,
            placement_tol_m: s.placement_tol_m,
            partition: PartitionName::Sharded,
            shards_per_user: 2,
            repeats: s.repeats,
            seed: s.master_seed,
            eval_every: s.eval_every,
            timing_only: s.timing_only,
            bits_per_param: s.bits_per_param,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlSection {
    pub num_users: usize,
    pub fraction: f64,
    pub max_rounds: usize,
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub broadcast_all: bool,
}

impl Default for FlSection {
    fn default() -> Self {
        let f = FlConfig::default();
        FlSection {
            num_users: f.num_users,
            fraction: f.fraction,
            max_rounds: f.max_rounds,
            learning_rate: f.hyper.learning_rate,
            local_epochs: f.hyper.local_epochs,
            batch_size: f.hyper.batch_size,
            broadcast_all: f.broadcast_all,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub hidden_dim: usize,
    pub init_seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            kind: m.kind,
            hidden_dim: m.hidden_dim,
            init_seed: m.init_seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    /// Total uplink spectrum shared by the cohort.
    pub bandwidth_hz: f64,
    /// Overrides the equal split of `bandwidth_hz` over the cohort.
    pub uplink_bandwidth_hz: Option<f64>,
    pub downlink_bandwidth_hz: f64,
    pub alpha0_db: f64,
    pub noise_dbm: f64,
    pub user_tx_power_w: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        ChannelSection {
            bandwidth_hz: 1e6,
            uplink_bandwidth_hz: None,
            downlink_bandwidth_hz: 1e6,
            alpha0_db: -50.0,
            noise_dbm: -90.0,
            user_tx_power_w: 0.1,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UavSection {
    pub altitude_m: f64,
    pub tx_power_w: f64,
    pub propulsion_power_w: f64,
}

impl Default for UavSection {
    fn default() -> Self {
        let u = UavProfile::default();
        UavSection {
            altitude_m: u.altitude_m,
            tx_power_w: u.tx_power_w,
            propulsion_power_w: u.propulsion_power_w,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UsersSection {
    pub cpu_min_hz: f64,
    pub cpu_max_hz: f64,
    pub cycles_per_bit: u64,
    pub aerial_altitude_m: f64,
    pub aerial_fraction: f64,
    pub positions: Option<Vec<[f64; 2]>>,
    pub compute_energy: bool,
    pub kappa: f64,
}

impl Default for UsersSection {
    fn default() -> Self {
        let u = UserConfig::default();
        UsersSection {
            cpu_min_hz: u.cpu_min_hz,
            cpu_max_hz: u.cpu_max_hz,
            cycles_per_bit: u.cycles_per_bit,
            aerial_altitude_m: u.aerial_altitude_m,
            aerial_fraction: u.aerial_fraction,
            positions: u.positions,
            compute_energy: u.compute_energy,
            kappa: u.kappa,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AreaSection {
    pub width_m: f64,
    pub height_m: f64,
}

impl Default for AreaSection {
    fn default() -> Self {
        let a = Area::default();
        AreaSection {
            width_m: a.width_m,
            height_m: a.height_m,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergySection {
    pub budget_j: f64,
    pub user_budget_j: f64,
    pub flight_energy_j: f64,
}

impl Default for EnergySection {
    fn default() -> Self {
        let e = EnergyConfig::default();
        EnergySection {
            budget_j: e.budget_j,
            user_budget_j: e.user_budget_j,
            flight_energy_j: e.flight_energy_j,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceName {
    Mnist,
    Synthetic,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: SourceName,
    /// Falls back to the environment variable, then to synthetic data.
    pub mnist_dir: Option<PathBuf>,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub classes: usize,
    pub samples_per_class: usize,
    pub test_samples_per_class: usize,
    pub input_dim: usize,
    pub spread: f64,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SyntheticConfig::default();
        DataSection {
            source: SourceName::Mnist,
            mnist_dir: None,
            train_limit: None,
            test_limit: None,
            classes: s.num_classes,
            samples_per_class: s.samples_per_class,
            test_samples_per_class: s.test_samples_per_class,
            input_dim: s.input_dim,
            spread: s.spread,
            seed: s.seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    /// UAV energy budgets for the accuracy-versus-budget panel.
    pub budgets_j: Vec<f64>,
    /// Placement schemes compared on paired seeds.
    pub placements: Vec<PlacementName>,
}

impl Default for CompareSection {
    fn default() -> Self {
        CompareSection {
            budgets_j: vec![1000.0, 2000.0, 4000.0, 8000.0, 16000.0, 32000.0],
            placements: vec![PlacementName::MinSumDist, PlacementName::Random],
        }
    }
}

/// A `section.key=value` flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub section: String,
    pub key: String,
    pub value: String,
}

impl Override {
    /// Parses `section.key=value`; `None` if the text has another shape.
    pub fn parse(text: &str) -> Option<Override> {
        let (path, value) = text.split_once('=')?;
        let (section, key) = path.split_once('.')?;
        if section.is_empty() || key.is_empty() || key.contains('.') {
            return None;
        }
        Some(Override {
            section: section.to_string(),
            key: key.to_string(),
            value: value.to_string(),
        })
    }
}

/// TOML literal if it parses as one, bare string otherwise.
fn override_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

impl RunConfig {
    /// Parses a document and applies overrides on top of it.
    pub fn from_toml(text: &str, overrides: &[Override]) -> Result<RunConfig, String> {
        let mut table: Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
        for o in overrides {
            let section = table
                .entry(o.section.clone())
                .or_insert_with(|| Value::Table(Table::new()));
            let Value::Table(section) = section else {
                return Err(format!("`{}` is not a section", o.section));
            };
            section.insert(o.key.clone(), override_value(&o.value));
        }
        RunConfig::deserialize(table).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path, overrides: &[Override]) -> Result<RunConfig, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        RunConfig::from_toml(&text, overrides).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Resolves the data source. The second value is a warning to show the user.
    pub fn data_source(&self, env_dir: Option<PathBuf>) -> (DataSource, Option<String>) {
        let d = &self.data;
        let synthetic = DataSource::Synthetic(SyntheticConfig {
            num_classes: d.classes,
            samples_per_class: d.samples_per_class,
            test_samples_per_class: d.test_samples_per_class,
            input_dim: d.input_dim,
            spread: d.spread,
            seed: d.seed,
        });
        match d.source {
            SourceName::Synthetic => (synthetic, None),
            SourceName::Mnist => match d.mnist_dir.clone().or(env_dir) {
                Some(dir) => (
                    DataSource::Mnist {
                        dir,
                        train_limit: d.train_limit,
                        test_limit: d.test_limit,
                    },
                    None,
                ),
                None => (
                    synthetic,
                    Some(format!(
                        "no MNIST directory configured (data.mnist_dir or {MNIST_ENV}); using synthetic blobs"
                    )),
                ),
            },
        }
    }

    pub fn placement(&self) -> PlacementScheme {
        self.scheme(self.scenario.placement)
    }

    /// Fixed placements use the configured hover point.
    pub fn scheme(&self, name: PlacementName) -> PlacementScheme {
        match name {
            PlacementName::MinSumDist => PlacementScheme::MinSumDist,
            PlacementName::Random => PlacementScheme::Random,
            PlacementName::Fixed => PlacementScheme::Fixed {
                x: self.scenario.fixed_x_m,
                y: self.scenario.fixed_y_m,
            },
        }
    }

    pub fn to_scenario(&self, data: DataSource) -> Scenario {
        let (s, fl, c) = (&self.scenario, &self.fl, &self.channel);
        Scenario {
            form: s.form,
            fl: FlConfig {
                num_users: fl.num_users,
                fraction: fl.fraction,
                hyper: Hyperparams {
                    learning_rate: fl.learning_rate,
                    local_epochs: fl.local_epochs,
                    batch_size: fl.batch_size,
                },
                max_rounds: fl.max_rounds,
                broadcast_all: fl.broadcast_all,
            },
            model: ModelConfig {
                kind: self.model.kind,
                hidden_dim: self.model.hidden_dim,
                init_seed: self.model.init_seed,
            },
            channel: ChannelParams {
                total_bandwidth_hz: c.bandwidth_hz,
                ref_gain: db_to_linear(c.alpha0_db),
                noise_power_w: dbm_to_watts(c.noise_dbm),
                user_tx_power_w: c.user_tx_power_w,
                uav_tx_power_w: self.uav.tx_power_w,
                uav_downlink_bandwidth_hz: c.downlink_bandwidth_hz,
            },
            uplink_bandwidth_hz: c.uplink_bandwidth_hz,
            bits_per_param: s.bits_per_param,
            uav: UavProfile {
                tx_power_w: self.uav.tx_power_w,
                propulsion_power_w: self.uav.propulsion_power_w,
                altitude_m: self.uav.altitude_m,
            },
            users: UserConfig {
                cpu_min_hz: self.users.cpu_min_hz,
                cpu_max_hz: self.users.cpu_max_hz,
                cycles_per_bit: self.users.cycles_per_bit,
                aerial_altitude_m: self.users.aerial_altitude_m,
                aerial_fraction: self.users.aerial_fraction,
                positions: self.users.positions.clone(),
                compute_energy: self.users.compute_energy,
                kappa: self.users.kappa,
            },
            area: Area {
                width_m: self.area.width_m,
                height_m: self.area.height_m,
            },
            placement: self.placement(),
            placement_tol_m: s.placement_tol_m,
            energy: EnergyConfig {
                budget_j: self.energy.budget_j,
                user_budget_j: self.energy.user_budget_j,
                flight_energy_j: self.energy.flight_energy_j,
            },
            data,
            partition: match s.partition {
                PartitionName::Iid => PartitionScheme::Iid,
                PartitionName::Sharded => PartitionScheme::Sharded {
                    shards_per_user: s.shards_per_user,
                },
            },
            repeats: s.repeats,
            master_seed: s.seed,
            eval_every: s.eval_every,
            timing_only: s.timing_only,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_library_defaults() {
        let cfg = RunConfig::from_toml("", &[]).unwrap();
        let s = cfg.to_scenario(DataSource::Synthetic(SyntheticConfig::default()));
        let d = Scenario::default();
        assert_eq!(s.fl, d.fl);
        assert_eq!(s.uav, d.uav);
        assert_eq!(s.users, d.users);
        assert_eq!(s.partition, d.partition);
        assert_eq!(s.placement, d.placement);
        assert_eq!(
            (s.repeats, s.master_seed, s.eval_every),
            (d.repeats, d.master_seed, d.eval_every)
        );
        let (c, dc) = (s.channel, d.channel);
        assert!((c.ref_gain - dc.ref_gain).abs() < 1e-18);
        assert!((c.noise_power_w - dc.noise_power_w).abs() < 1e-24);
        assert_eq!(c.total_bandwidth_hz, dc.total_bandwidth_hz);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::from_toml("[channel]\nbandwith = 3\n", &[]).unwrap_err();
        assert!(err.contains("bandwith"), "{err}");
        let err = RunConfig::from_toml("[chanel]\n", &[]).unwrap_err();
        assert!(err.contains("chanel"), "{err}");
    }

    #[test]
    fn overrides_win_over_file() {
        let o = [
            "fl.max_rounds=7",
            "scenario.placement=random",
            "data.source=synthetic",
            "energy.budget_j=inf",
        ]
        .map(|t| Override::parse(t).unwrap());
        let cfg = RunConfig::from_toml("[fl]\nmax_rounds = 3\n", &o).unwrap();
        assert_eq!(cfg.fl.max_rounds, 7);
        assert_eq!(cfg.scenario.placement, PlacementName::Random);
        assert_eq!(cfg.data.source, SourceName::Synthetic);
        assert!(cfg.energy.budget_j.is_infinite());
    }

    #[test]
    fn override_shape() {
        assert_eq!(
            Override::parse("uav.altitude_m=50"),
            Some(Override {
                section: "uav".into(),
                key: "altitude_m".into(),
                value: "50".into()
            })
        );
        assert_eq!(Override::parse("seed=3"), None);
        assert_eq!(Override::parse("a.b.c=3"), None);
        assert!(RunConfig::from_toml("", &[Override::parse("fl.fraction=abc").unwrap()]).is_err());
    }

    #[test]
    fn missing_mnist_falls_back_with_warning() {
        let cfg = RunConfig::default();
        let (src, warn) = cfg.data_source(None);
        assert!(matches!(src, DataSource::Synthetic(_)));
        assert!(warn.unwrap().contains(MNIST_ENV));
        let (src, warn) = cfg.data_source(Some("/tmp/m".into()));
        assert!(matches!(src, DataSource::Mnist { .. }));
        assert!(warn.is_none());
    }

    #[test]
    fn fixed_placement_reads_coordinates() {
        let cfg = RunConfig::from_toml(
            "[scenario]\nplacement = \"fixed\"\nfixed_x_m = 10\nfixed_y_m = 20.5\n",
            &[],
        )
        .unwrap();
        assert_eq!(cfg.placement(), PlacementScheme::Fixed { x: 10.0, y: 20.5 });
    }
}
