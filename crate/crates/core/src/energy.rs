//! Round timing and energy accounting.
//!
//! A round lasts the broadcast time plus the slowest selected client's
//! compute-and-upload time (clients work in parallel and upload on orthogonal
//! sub-bands). The UAV hovers for the whole round and transmits only during
//! the broadcast.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Effective switched capacitance for the CPU energy model `κ·f²·cycles`.
pub const DEFAULT_KAPPA: f64 = 1e-28;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UavProfile {
    pub tx_power_w: f64,
    pub propulsion_power_w: f64,
    pub altitude_m: f64,
}

impl Default for UavProfile {
    fn default() -> Self {
        UavProfile {
            tx_power_w: 0.01,
            propulsion_power_w: 100.0,
            altitude_m: 100.0,
        }
    }
}

impl UavProfile {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("uav tx_power_w", self.tx_power_w),
            ("uav propulsion_power_w", self.propulsion_power_w),
            ("uav altitude_m", self.altitude_m),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// A training participant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeProfile {
    pub cpu_freq_hz: f64,
    pub cycles_per_bit: u64,
    pub tx_power_w: f64,
    pub x: f64,
    pub y: f64,
    /// Zero for terrestrial users.
    pub altitude_m: f64,
}

impl NodeProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.cpu_freq_hz > 0.0 && self.cpu_freq_hz.is_finite()) {
            return Err(Error::invalid(format!(
                "cpu frequency must be positive, got {}",
                self.cpu_freq_hz
            )));
        }
        if self.cycles_per_bit == 0 {
            return Err(Error::invalid("cycles_per_bit must be at least 1"));
        }
        if !(self.tx_power_w > 0.0) {
            return Err(Error::invalid("user tx power must be positive"));
        }
        if !(self.altitude_m >= 0.0) {
            return Err(Error::invalid("altitude must be non-negative"));
        }
        Ok(())
    }

    pub fn is_aerial(&self) -> bool {
        self.altitude_m > 0.0
    }
}

/// Time for `epochs` passes over `samples` samples.
pub fn user_compute_time(
    samples: usize,
    bits_per_sample: u64,
    cycles_per_bit: u64,
    cpu_freq_hz: f64,
    epochs: usize,
) -> f64 {
    compute_cycles(samples, bits_per_sample, cycles_per_bit, epochs) / cpu_freq_hz
}

pub fn compute_cycles(samples: usize, bits_per_sample: u64, cycles_per_bit: u64, epochs: usize) -> f64 {
    epochs as f64 * samples as f64 * bits_per_sample as f64 * cycles_per_bit as f64
}

/// CPU energy `κ · f² · cycles`.
pub fn user_compute_energy(kappa: f64, cpu_freq_hz: f64, cycles: f64) -> f64 {
    kappa * cpu_freq_hz * cpu_freq_hz * cycles
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientTiming {
    pub compute_s: f64,
    pub upload_s: f64,
}

pub fn round_duration(t_down: f64, clients: &[ClientTiming]) -> Result<f64> {
    if clients.is_empty() {
        return Err(Error::Empty("client list"));
    }
    if !(t_down >= 0.0) || clients.iter().any(|c| !(c.compute_s >= 0.0 && c.upload_s >= 0.0)) {
        return Err(Error::invalid("round times must be non-negative"));
    }
    let slowest = clients.iter().map(|c| c.compute_s + c.upload_s).fold(0.0, f64::max);
    Ok(t_down + slowest)
}

/// Hover propulsion for the whole round plus transmit power for the broadcast.
pub fn uav_round_energy(t_round: f64, t_down: f64, profile: &UavProfile) -> Result<f64> {
    if !(t_down >= 0.0 && t_round >= 0.0) {
        return Err(Error::invalid("round times must be non-negative"));
    }
    if t_down > t_round {
        return Err(Error::invalid(format!(
            "broadcast time {t_down} s exceeds round time {t_round} s"
        )));
    }
    Ok(profile.propulsion_power_w * t_round + profile.tx_power_w * t_down)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Entity {
    Server,
    User(usize),
}

/// One user's share of a round.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UserRoundEnergy {
    pub user: usize,
    pub compute_j: f64,
    pub tx_j: f64,
    /// Hovering cost of an aerial client.
    pub propulsion_j: f64,
}

impl UserRoundEnergy {
    pub fn total(&self) -> f64 {
        self.compute_j + self.tx_j + self.propulsion_j
    }
}

/// Energy breakdown of a single round.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoundEnergy {
    /// Server propulsion (zero for a terrestrial server).
    pub hover_j: f64,
    /// Server broadcast transmission.
    pub uav_tx_j: f64,
    pub users: Vec<UserRoundEnergy>,
}

impl RoundEnergy {
    pub fn server_j(&self) -> f64 {
        self.hover_j + self.uav_tx_j
    }

    pub fn user_compute_j(&self) -> f64 {
        self.users.iter().map(|u| u.compute_j).sum()
    }

    pub fn user_tx_j(&self) -> f64 {
        self.users.iter().map(|u| u.tx_j).sum()
    }

    pub fn entity_j(&self, entity: Entity) -> f64 {
        match entity {
            Entity::Server => self.server_j(),
            Entity::User(id) => self
                .users
                .iter()
                .filter(|u| u.user == id)
                .map(UserRoundEnergy::total)
                .sum(),
        }
    }
}

/// Cumulative per-entity energy, appended to once per completed round.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnergyLedger {
    server_j: f64,
    user_j: Vec<f64>,
    rounds: Vec<RoundEnergy>,
}

impl EnergyLedger {
    pub fn new(num_users: usize) -> Self {
        EnergyLedger {
            server_j: 0.0,
            user_j: vec![0.0; num_users],
            rounds: Vec::new(),
        }
    }

    pub fn record(&mut self, round: RoundEnergy) -> Result<()> {
        let negative = round.hover_j < 0.0
            || round.uav_tx_j < 0.0
            || round
                .users
                .iter()
                .any(|u| u.compute_j < 0.0 || u.tx_j < 0.0 || u.propulsion_j < 0.0);
        if negative {
            return Err(Error::invalid("energy entries must be non-negative"));
        }
        if let Some(u) = round.users.iter().find(|u| u.user >= self.user_j.len()) {
            return Err(Error::invalid(format!("unknown user {}", u.user)));
        }
        self.server_j += round.server_j();
        for u in &round.users {
            self.user_j[u.user] += u.total();
        }
        self.rounds.push(round);
        Ok(())
    }

    pub fn cumulative(&self, entity: Entity) -> f64 {
        match entity {
            Entity::Server => self.server_j,
            Entity::User(id) => self.user_j.get(id).copied().unwrap_or(0.0),
        }
    }

    pub fn rounds(&self) -> &[RoundEnergy] {
        &self.rounds
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetDecision {
    Continue,
    Halt,
}

/// Decides whether the pending round fits in `budget` for `entity`.
///
/// A round that would push the entity's cumulative energy past the budget is
/// not run. An infinite budget never halts.
pub fn apply_budget(ledger: &EnergyLedger, pending: &RoundEnergy, budget: f64, entity: Entity) -> BudgetDecision {
    if ledger.cumulative(entity) + pending.entity_j(entity) > budget {
        BudgetDecision::Halt
    } else {
        BudgetDecision::Continue
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn server_round(j: f64) -> RoundEnergy {
        RoundEnergy {
            hover_j: j,
            ..Default::default()
        }
    }

    #[test]
    fn compute_time_by_hand() {
        // 5 * 600 * 6280 * 10 / 2e9
        assert!((user_compute_time(600, 6280, 10, 2.0e9, 5) - 0.0942).abs() < 1e-12);
        assert_eq!(user_compute_time(0, 6280, 10, 2.0e9, 5), 0.0);
        assert_eq!(
            user_compute_time(600, 6280, 10, 1.0e9, 5),
            2.0 * user_compute_time(600, 6280, 10, 2.0e9, 5)
        );
    }

    #[test]
    fn compute_energy_is_quadratic_in_frequency() {
        let cycles = compute_cycles(600, 6280, 10, 5);
        let e1 = user_compute_energy(DEFAULT_KAPPA, 1.0e9, cycles);
        let e2 = user_compute_energy(DEFAULT_KAPPA, 2.0e9, cycles);
        assert!((e2 / e1 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn round_duration_max_rule() {
        let clients = [
            ClientTiming {
                compute_s: 0.09,
                upload_s: 0.08,
            },
            ClientTiming {
                compute_s: 0.05,
                upload_s: 0.06,
            },
        ];
        assert!((round_duration(0.07, &clients).unwrap() - 0.24).abs() < 1e-12);
        let one = [ClientTiming {
            compute_s: 0.3,
            upload_s: 0.2,
        }];
        assert_eq!(round_duration(0.1, &one).unwrap(), 0.1 + (0.3 + 0.2));
        assert_eq!(
            round_duration(
                0.0,
                &[ClientTiming {
                    compute_s: 0.0,
                    upload_s: 0.0
                }]
            )
            .unwrap(),
            0.0
        );
        assert!(round_duration(0.1, &[]).is_err());
    }

    #[test]
    fn uav_energy_by_hand() {
        let uav = UavProfile::default();
        assert!((uav_round_energy(1.0, 0.1, &uav).unwrap() - 100.001).abs() < 1e-12);
        assert_eq!(uav_round_energy(0.0, 0.0, &uav).unwrap(), 0.0);
        assert!(uav_round_energy(2.0, 0.1, &uav).unwrap() > uav_round_energy(1.0, 0.1, &uav).unwrap());
        assert!(uav_round_energy(0.1, 0.2, &uav).is_err());
    }

    #[test]
    fn budget_halts_after_fourth_round() {
        let mut ledger = EnergyLedger::new(0);
        let mut completed = 0;
        while apply_budget(&ledger, &server_round(24.0), 100.0, Entity::Server) == BudgetDecision::Continue {
            ledger.record(server_round(24.0)).unwrap();
            completed += 1;
        }
        assert_eq!(completed, 4);
        assert_eq!(ledger.cumulative(Entity::Server), 96.0);
    }

    #[test]
    fn budget_edge_cases() {
        let ledger = EnergyLedger::new(1);
        assert_eq!(
            apply_budget(&ledger, &server_round(1e12), f64::INFINITY, Entity::Server),
            BudgetDecision::Continue
        );
        assert_eq!(
            apply_budget(&ledger, &server_round(5.0), 4.0, Entity::Server),
            BudgetDecision::Halt
        );
        let user_round = RoundEnergy {
            users: vec![UserRoundEnergy {
                user: 0,
                tx_j: 3.0,
                ..Default::default()
            }],
            ..Default::default()
        };
        assert_eq!(
            apply_budget(&ledger, &user_round, 2.0, Entity::User(0)),
            BudgetDecision::Halt
        );
        assert_eq!(
            apply_budget(&ledger, &user_round, 2.0, Entity::Server),
            BudgetDecision::Continue
        );
    }

    #[test]
    fn ledger_is_additive() {
        let mut ledger = EnergyLedger::new(2);
        let rounds: Vec<RoundEnergy> = (0..7)
            .map(|r| RoundEnergy {
                hover_j: 10.0 + r as f64 * 0.37,
                uav_tx_j: 0.001 * r as f64,
                users: vec![UserRoundEnergy {
                    user: r % 2,
                    compute_j: 0.5,
                    tx_j: 0.01 * r as f64,
                    propulsion_j: 0.0,
                }],
            })
            .collect();
        let mut previous = 0.0;
        for r in &rounds {
            ledger.record(r.clone()).unwrap();
            assert!(ledger.cumulative(Entity::Server) >= previous);
            previous = ledger.cumulative(Entity::Server);
        }
        let mut sum = 0.0;
        for r in ledger.rounds() {
            sum += r.server_j();
        }
        assert_eq!(ledger.cumulative(Entity::Server), sum);
        let mut user0 = 0.0;
        for r in ledger.rounds() {
            user0 += r.entity_j(Entity::User(0));
        }
        assert_eq!(ledger.cumulative(Entity::User(0)), user0);
    }

    #[test]
    fn ledger_rejects_negative_and_unknown() {
        let mut ledger = EnergyLedger::new(1);
        assert!(ledger.record(server_round(-1.0)).is_err());
        let stranger = RoundEnergy {
            users: vec![UserRoundEnergy {
                user: 3,
                ..Default::default()
            }],
            ..Default::default()
        };
        assert!(ledger.record(stranger).is_err());
    }
}
