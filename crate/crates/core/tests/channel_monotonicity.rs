use agifl_core::channel::{self, link_rate, ChannelParams, LinkBudget};
use agifl_core::oracle;
use proptest::prelude::*;

fn rate(b: f64, p: f64, h: f64, r: f64, params: &ChannelParams) -> f64 {
    link_rate(&LinkBudget::new(b, p, h, r).unwrap(), params)
}

proptest! {
    #[test]
    fn rate_monotonicity(
        b in 1e3f64..1e7, p in 1e-3f64..1.0, h in 1.0f64..500.0, r in 0.0f64..2000.0,
        k in 1.01f64..3.0,
    ) {
        let params = ChannelParams::default();
        let base = rate(b, p, h, r, &params);
        prop_assert!(base > 0.0);
        prop_assert!(rate(b, p, h, r * k + 1.0, &params) < base);
        prop_assert!(rate(b, p, h * k, r, &params) < base);
        prop_assert!(rate(b * k, p, h, r, &params) > base);
        prop_assert!(rate(b, p * k, h, r, &params) > base);
        let louder = ChannelParams { noise_power_w: params.noise_power_w * k, ..params };
        prop_assert!(rate(b, p, h, r, &louder) < base);
        let stronger = ChannelParams { ref_gain: params.ref_gain * k, ..params };
        prop_assert!(rate(b, p, h, r, &stronger) > base);
    }

    #[test]
    fn rate_is_linear_in_bandwidth(b in 1e3f64..1e7, k in 0.1f64..10.0, r in 0.0f64..2000.0) {
        let params = ChannelParams::default();
        let scaled = rate(b * k, 0.1, 100.0, r, &params);
        let expected = k * rate(b, 0.1, 100.0, r, &params);
        prop_assert!((scaled - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn matches_direct_formula(b in 1e3f64..1e7, p in 1e-3f64..1.0, h in 1.0f64..500.0, r in 0.0f64..2000.0) {
        let params = ChannelParams::default();
        let direct = oracle::shannon_rate(b, p, params.ref_gain, params.noise_power_w, h, r);
        let ours = rate(b, p, h, r, &params);
        prop_assert!((ours - direct).abs() <= 1e-9 * direct);
    }

    #[test]
    fn dbm_round_trip(w in 1e-15f64..1e3) {
        let back = channel::dbm_to_watts(channel::watts_to_dbm(w));
        prop_assert!((back - w).abs() <= 1e-12 * w);
    }
}

#[test]
fn rate_vanishes_with_distance() {
    let params = ChannelParams::default();
    let mut previous = f64::INFINITY;
    for r in [1e2, 1e4, 1e6, 1e8, 1e10] {
        let v = rate(1e6, 0.1, 100.0, r, &params);
        assert!(v > 0.0 && v < previous);
        previous = v;
    }
    assert!(previous < 1e-6);
}
