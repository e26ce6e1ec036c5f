//! Brute-force reference computations.
//!
//! Each function here recomputes a quantity from its defining formula
//! without going through the production code path, for cross-checking and
//! for the `oracle` CLI subcommand.

/// Direct evaluation of `B · log2(1 + α0·p / (σ²·(H² + R²)))`.
pub fn shannon_rate(
    bandwidth_hz: f64,
    tx_power_w: f64,
    ref_gain: f64,
    noise_w: f64,
    altitude_m: f64,
    horizontal_m: f64,
) -> f64 {
    let snr = ref_gain * tx_power_w / (noise_w * (altitude_m.powi(2) + horizontal_m.powi(2)));
    bandwidth_hz * (1.0 + snr).log2()
}

/// `Σ n_k w_k / Σ n_k`, coordinate by coordinate.
pub fn weighted_mean(updates: &[(Vec<f64>, u64)]) -> Option<Vec<f64>> {
    let len = updates.first()?.0.len();
    if updates.iter().any(|(w, _)| w.len() != len) {
        return None;
    }
    let total: f64 = updates.iter().map(|&(_, n)| n as f64).sum();
    if total <= 0.0 {
        return None;
    }
    Some(
        (0..len)
            .map(|i| updates.iter().map(|(w, n)| w[i] * *n as f64).sum::<f64>() / total)
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOptimum {
    pub x: f64,
    pub y: f64,
    pub objective: f64,
}

fn sum_of_distances(users: &[[f64; 2]], altitude_m: f64, x: f64, y: f64) -> f64 {
    let h2 = altitude_m * altitude_m;
    users
        .iter()
        .map(|&[ux, uy]| ((x - ux).powi(2) + (y - uy).powi(2) + h2).sqrt())
        .sum()
}

/// Exhaustive search for the minimum sum-of-distances hovering point:
/// a `coarse`-spaced grid over the users' bounding box, then a `fine`-spaced
/// grid over the ±`coarse` window around the best coarse point.
///
/// # Panics
///
/// If `users` is empty or a step is not positive.
pub fn grid_placement(users: &[[f64; 2]], altitude_m: f64, coarse: f64, fine: f64) -> GridOptimum {
    assert!(!users.is_empty(), "grid search needs at least one user");
    assert!(coarse > 0.0 && fine > 0.0, "grid steps must be positive");
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &[x, y] in users {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let best = scan(users, altitude_m, (x0, x1), (y0, y1), coarse, None);
    scan(
        users,
        altitude_m,
        (best.x - coarse, best.x + coarse),
        (best.y - coarse, best.y + coarse),
        fine,
        Some(best),
    )
}

fn scan(
    users: &[[f64; 2]],
    altitude_m: f64,
    (x0, x1): (f64, f64),
    (y0, y1): (f64, f64),
    step: f64,
    seed: Option<GridOptimum>,
) -> GridOptimum {
    let nx = ((x1 - x0) / step).ceil() as usize;
    let ny = ((y1 - y0) / step).ceil() as usize;
    let mut best = seed.unwrap_or(GridOptimum {
        x: x0,
        y: y0,
        objective: f64::INFINITY,
    });
    for i in 0..=nx {
        let x = (x0 + i as f64 * step).min(x1);
        for j in 0..=ny {
            let y = (y0 + j as f64 * step).min(y1);
            let f = sum_of_distances(users, altitude_m, x, y);
            if f < best.objective {
                best = GridOptimum { x, y, objective: f };
            }
        }
    }
    best
}
