//! Air-ground link model.
//!
//! Line-of-sight path loss with a reference gain at 1 m and free-space
//! exponent 2, so the achievable rate of a link is
//!
//! ```text
//! r = B · log2(1 + α0 · p / (σ² · (H² + R²)))
//! ```
//!
//! with `H` the vertical and `R` the horizontal separation. All quantities are
//! SI linear units; dB and dBm are converted at the configuration boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm) * 1e-3
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    linear_to_db(watts * 1e3)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Uplink spectrum shared by the selected cohort, Hz.
    pub total_bandwidth_hz: f64,
    /// Channel power gain at the 1 m reference distance (linear).
    pub ref_gain: f64,
    /// Receiver noise power, W.
    pub noise_power_w: f64,
    pub user_tx_power_w: f64,
    pub uav_tx_power_w: f64,
    pub uav_downlink_bandwidth_hz: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            total_bandwidth_hz: 1e6,
            ref_gain: db_to_linear(-50.0),
            noise_power_w: dbm_to_watts(-90.0),
            user_tx_power_w: 0.1,
            uav_tx_power_w: 0.01,
            uav_downlink_bandwidth_hz: 1e6,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("total_bandwidth_hz", self.total_bandwidth_hz),
            ("ref_gain", self.ref_gain),
            ("noise_power_w", self.noise_power_w),
            ("user_tx_power_w", self.user_tx_power_w),
            ("uav_tx_power_w", self.uav_tx_power_w),
            ("uav_downlink_bandwidth_hz", self.uav_downlink_bandwidth_hz),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Per-user uplink bandwidth when `cohort` users split the spectrum
    /// into orthogonal sub-bands.
    pub fn uplink_bandwidth(&self, cohort: usize) -> f64 {
        self.total_bandwidth_hz / cohort.max(1) as f64
    }

    pub fn uplink(&self, bandwidth_hz: f64, vertical_m: f64, horizontal_m: f64) -> Result<LinkBudget> {
        LinkBudget::new(bandwidth_hz, self.user_tx_power_w, vertical_m, horizontal_m)
    }

    pub fn downlink(&self, vertical_m: f64, horizontal_m: f64) -> Result<LinkBudget> {
        LinkBudget::new(
            self.uav_downlink_bandwidth_hz,
            self.uav_tx_power_w,
            vertical_m,
            horizontal_m,
        )
    }
}

/// Physical quantities of one link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub bandwidth_hz: f64,
    pub tx_power_w: f64,
    /// Altitude difference between the endpoints.
    pub vertical_m: f64,
    pub horizontal_m: f64,
}

impl LinkBudget {
    /// Co-located endpoints (zero total distance) are rejected: the path-loss
    /// model is singular there.
    pub fn new(bandwidth_hz: f64, tx_power_w: f64, vertical_m: f64, horizontal_m: f64) -> Result<Self> {
        if !(bandwidth_hz > 0.0 && bandwidth_hz.is_finite()) {
            return Err(Error::invalid(format!(
                "bandwidth must be positive, got {bandwidth_hz}"
            )));
        }
        if !(tx_power_w > 0.0 && tx_power_w.is_finite()) {
            return Err(Error::invalid(format!("tx power must be positive, got {tx_power_w}")));
        }
        if !(vertical_m >= 0.0 && horizontal_m >= 0.0) {
            return Err(Error::invalid("link distances must be non-negative"));
        }
        if vertical_m == 0.0 && horizontal_m == 0.0 {
            return Err(Error::invalid("link endpoints coincide"));
        }
        Ok(LinkBudget {
            bandwidth_hz,
            tx_power_w,
            vertical_m,
            horizontal_m,
        })
    }

    pub fn distance_sq(&self) -> f64 {
        self.vertical_m * self.vertical_m + self.horizontal_m * self.horizontal_m
    }

    pub fn snr(&self, params: &ChannelParams) -> f64 {
        params.ref_gain * self.tx_power_w / (params.noise_power_w * self.distance_sq())
    }
}

/// Shannon rate of the link in bit/s.
pub fn link_rate(link: &LinkBudget, params: &ChannelParams) -> f64 {
    link.bandwidth_hz * link.snr(params).ln_1p() / std::f64::consts::LN_2
}

/// Seconds needed to push `payload_bits` through a link of `rate` bit/s.
pub fn tx_time(payload_bits: u64, rate: f64) -> Result<f64> {
    if !(rate > 0.0) || rate.is_nan() {
        return Err(Error::invalid(format!("rate must be positive, got {rate}")));
    }
    Ok(payload_bits as f64 / rate)
}

/// Size of a serialized model update.
pub fn payload_bits(param_count: usize, bits_per_param: u64) -> u64 {
    param_count as u64 * bits_per_param
}
