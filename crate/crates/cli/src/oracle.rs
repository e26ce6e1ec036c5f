//! Front end for the brute-force reference computations.

use crate::commands::Failure;
use agifl_core::channel::{db_to_linear, dbm_to_watts};
use agifl_core::oracle;

pub fn rate(
    bandwidth_hz: f64,
    tx_power_w: f64,
    alpha0_db: f64,
    noise_dbm: f64,
    altitude_m: f64,
    horizontal_m: f64,
) -> Result<String, Failure> {
    let all = [bandwidth_hz, tx_power_w, alpha0_db, noise_dbm, altitude_m, horizontal_m];
    if all.iter().any(|v| !v.is_finite()) || bandwidth_hz <= 0.0 || tx_power_w <= 0.0 {
        return Err(Failure::config(
            "rate needs finite values with positive bandwidth and power",
        ));
    }
    if altitude_m == 0.0 && horizontal_m == 0.0 {
        return Err(Failure::config("rate needs a non-zero link distance"));
    }
    let r = oracle::shannon_rate(
        bandwidth_hz,
        tx_power_w,
        db_to_linear(alpha0_db),
        dbm_to_watts(noise_dbm),
        altitude_m,
        horizontal_m,
    );
    Ok(format!("{r}"))
}

fn parse_point(text: &str) -> Result<[f64; 2], Failure> {
    let bad = || Failure::config(format!("expected a user position `x,y`, got `{text}`"));
    let (x, y) = text.split_once(',').ok_or_else(bad)?;
    let x: f64 = x.trim().parse().map_err(|_| bad())?;
    let y: f64 = y.trim().parse().map_err(|_| bad())?;
    if !(x.is_finite() && y.is_finite()) {
        return Err(bad());
    }
    Ok([x, y])
}

pub fn placement(users: &[String], altitude_m: f64, coarse_m: f64, fine_m: f64) -> Result<String, Failure> {
    if users.is_empty() {
        return Err(Failure::config("placement needs at least one user position"));
    }
    if !(coarse_m > 0.0 && fine_m > 0.0 && altitude_m.is_finite()) {
        return Err(Failure::config("grid steps must be positive and the altitude finite"));
    }
    let pts = users.iter().map(|u| parse_point(u)).collect::<Result<Vec<_>, _>>()?;
    let g = oracle::grid_placement(&pts, altitude_m, coarse_m, fine_m);
    Ok(format!("({}, {}) objective={}", g.x, g.y, g.objective))
}

/// Parses `[w1,w2,...]xN` items separated by whitespace.
fn parse_updates(text: &str) -> Result<Vec<(Vec<f64>, u64)>, Failure> {
    text.split_whitespace()
        .map(|item| {
            let bad = || Failure::config(format!("expected `[w1,w2,...]xN`, got `{item}`"));
            let body = item.strip_prefix('[').ok_or_else(bad)?;
            let (vec, count) = body.split_once("]x").ok_or_else(bad)?;
            let w = vec
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
                .collect::<Result<Vec<_>, _>>()?;
            let n = count.parse::<u64>().map_err(|_| bad())?;
            Ok((w, n))
        })
        .collect()
}

pub fn aggregate(items: &[String]) -> Result<String, Failure> {
    let updates = parse_updates(&items.join(" "))?;
    let mean = oracle::weighted_mean(&updates)
        .ok_or_else(|| Failure::config("aggregate needs equal-length vectors and a positive total count"))?;
    let parts: Vec<String> = mean.iter().map(|v| format!("{v}")).collect();
    Ok(format!("[{}]", parts.join(", ")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_by_hand() {
        assert_eq!(aggregate(&["[0]x1 [4]x3".into()]).unwrap(), "[3]");
        assert_eq!(aggregate(&["[1,2]x1".into(), "[3,4]x1".into()]).unwrap(), "[2, 3]");
        assert!(aggregate(&["[1]x0".into()]).is_err());
        assert!(aggregate(&["1x2".into()]).is_err());
        assert!(aggregate(&["[1,2]x1 [3]x1".into()]).is_err());
    }

    #[test]
    fn placement_single_user() {
        assert_eq!(
            placement(&["12,34".into()], 100.0, 1.0, 0.01).unwrap(),
            "(12, 34) objective=100"
        );
        assert!(placement(&["12;34".into()], 100.0, 1.0, 0.01).is_err());
    }

    #[test]
    fn rate_with_uplink_defaults() {
        let r: f64 = rate(5e5, 0.1, -50.0, -90.0, 100.0, 0.0).unwrap().parse().unwrap();
        assert!((r - 3.3291e6).abs() < 100.0, "{r}");
        assert!(rate(5e5, 0.1, -50.0, -90.0, 0.0, 0.0).is_err());
    }
}
