//! Hovering-location selection for the aerial parameter server.
//!
//! `MinSumDist` minimizes the sum of 3-D distances from the server to every
//! user. With a strictly positive altitude offset the objective
//! `Σ sqrt(|P − p_u|² + h_u²)` is smooth and strictly convex, and the
//! Weiszfeld fixed point `P ← Σ p_u/d_u / Σ 1/d_u` is a majorize-minimize
//! step, so it never increases the objective in exact arithmetic. Iterations
//! that fail to decrease it in floating point fall back to a backtracking
//! gradient step; when that also fails the solver has reached machine
//! precision and stops.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOL_M: f64 = 1e-6;
pub const DEFAULT_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub width_m: f64,
    pub height_m: f64,
}

impl Default for Area {
    fn default() -> Self {
        Area {
            width_m: 1000.0,
            height_m: 1000.0,
        }
    }
}

impl Area {
    pub fn validate(&self) -> Result<()> {
        if !(self.width_m > 0.0 && self.height_m > 0.0 && self.width_m.is_finite() && self.height_m.is_finite()) {
            return Err(Error::invalid(format!(
                "area must have positive size, got {} x {}",
                self.width_m, self.height_m
            )));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (0.0..=self.width_m).contains(&x) && (0.0..=self.height_m).contains(&y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub x: f64,
    pub y: f64,
    pub altitude_m: f64,
}

/// A user as seen from the server: ground coordinates plus the altitude
/// difference to the server.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Site {
    pub x: f64,
    pub y: f64,
    pub vertical_m: f64,
}

impl Site {
    fn distance(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.x;
        let dy = y - self.y;
        (dx * dx + dy * dy + self.vertical_m * self.vertical_m).sqrt()
    }
}

fn sites(users: &[[f64; 2]], altitude_m: f64) -> Vec<Site> {
    users
        .iter()
        .map(|&[x, y]| Site {
            x,
            y,
            vertical_m: altitude_m,
        })
        .collect()
}

/// Sum of server-to-user distances with the server at `(x, y, altitude_m)`.
pub fn objective(users: &[[f64; 2]], altitude_m: f64, x: f64, y: f64) -> Result<f64> {
    if users.is_empty() {
        return Err(Error::Empty("user set"));
    }
    if !(altitude_m > 0.0) {
        return Err(Error::invalid(format!("altitude must be positive, got {altitude_m}")));
    }
    Ok(site_objective(&sites(users, altitude_m), x, y))
}

pub fn site_objective(sites: &[Site], x: f64, y: f64) -> f64 {
    sites.iter().map(|s| s.distance(x, y)).sum()
}

/// `∂/∂(X, Y)` of the objective. Sites at zero distance contribute nothing.
pub fn objective_gradient(sites: &[Site], x: f64, y: f64) -> [f64; 2] {
    sites.iter().fold([0.0, 0.0], |[gx, gy], s| {
        let d = s.distance(x, y);
        if d > 0.0 {
            [gx + (x - s.x) / d, gy + (y - s.y) / d]
        } else {
            [gx, gy]
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub placement: Placement,
    pub objective: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit before the step fell below `tol`.
    pub converged: bool,
    /// Objective at the start point and after every iteration.
    pub trace: Vec<f64>,
}

/// Minimum sum-of-distances hovering point at a fixed altitude.
pub fn min_sum_dist(users: &[[f64; 2]], altitude_m: f64, tol: f64) -> Result<Solution> {
    if !(altitude_m > 0.0) {
        return Err(Error::invalid(format!("altitude must be positive, got {altitude_m}")));
    }
    let mut solution = solve_sites(&sites(users, altitude_m), tol, DEFAULT_MAX_ITERATIONS)?;
    solution.placement.altitude_m = altitude_m;
    Ok(solution)
}

/// Minimum sum-of-distances point for users with individual altitude
/// offsets. Offsets may be zero (co-altitude aerial users); the iterate can
/// then land on a user, where the subgradient optimality test decides
/// whether to stop. The returned placement has `altitude_m = 0`; callers set
/// the server altitude.
pub fn solve_sites(sites: &[Site], tol: f64, max_iterations: usize) -> Result<Solution> {
    if sites.is_empty() {
        return Err(Error::Empty("user set"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    if sites
        .iter()
        .any(|s| !(s.vertical_m >= 0.0) || !s.x.is_finite() || !s.y.is_finite())
    {
        return Err(Error::invalid(
            "site coordinates must be finite with non-negative offsets",
        ));
    }

    let n = sites.len() as f64;
    let mut x = sites.iter().map(|s| s.x).sum::<f64>() / n;
    let mut y = sites.iter().map(|s| s.y).sum::<f64>() / n;
    let mut f = site_objective(sites, x, y);
    let mut trace = vec![f];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iterations {
        iterations += 1;
        let Some((nx, ny, nf)) = weiszfeld_step(sites, x, y, f).or_else(|| descent_step(sites, x, y, f)) else {
            converged = true;
            break;
        };
        let moved = (nx - x).hypot(ny - y);
        x = nx;
        y = ny;
        f = nf;
        trace.push(f);
        if moved < tol {
            converged = true;
            break;
        }
    }

    Ok(Solution {
        placement: Placement { x, y, altitude_m: 0.0 },
        objective: f,
        iterations,
        converged,
        trace,
    })
}

/// One fixed-point update, accepted only if it does not increase the
/// objective. `None` if a site coincides with the iterate or the step fails.
fn weiszfeld_step(sites: &[Site], x: f64, y: f64, f: f64) -> Option<(f64, f64, f64)> {
    let (mut wx, mut wy, mut w) = (0.0, 0.0, 0.0);
    for s in sites {
        let d = s.distance(x, y);
        if d == 0.0 {
            return None;
        }
        wx += s.x / d;
        wy += s.y / d;
        w += 1.0 / d;
    }
    let (nx, ny) = (wx / w, wy / w);
    let nf = site_objective(sites, nx, ny);
    (nf <= f).then_some((nx, ny, nf))
}

/// Backtracking step along the negative (sub)gradient. Returns `None` at a
/// stationary point or when no step decreases the objective.
fn descent_step(sites: &[Site], x: f64, y: f64, f: f64) -> Option<(f64, f64, f64)> {
    // Sites sitting exactly on the iterate contribute a unit ball to the
    // subdifferential; the point is optimal if the rest pulls with norm ≤ that.
    let pinned = sites.iter().filter(|s| s.distance(x, y) == 0.0).count() as f64;
    let [gx, gy] = objective_gradient(sites, x, y);
    let norm = gx.hypot(gy);
    if norm <= pinned || norm == 0.0 {
        return None;
    }
    let scale: f64 = sites
        .iter()
        .map(|s| s.distance(x, y))
        .filter(|&d| d > 0.0)
        .map(|d| 1.0 / d)
        .sum();
    let mut step = 1.0 / scale.max(f64::MIN_POSITIVE);
    let shrink = (norm - pinned) / norm;
    for _ in 0..64 {
        let nx = x - step * gx * shrink;
        let ny = y - step * gy * shrink;
        let nf = site_objective(sites, nx, ny);
        if nf < f {
            return Some((nx, ny, nf));
        }
        step *= 0.5;
    }
    None
}

/// Uniform hovering point over the area.
pub fn random_placement<R: Rng + ?Sized>(area: &Area, altitude_m: f64, rng: &mut R) -> Placement {
    Placement {
        x: rng.random::<f64>() * area.width_m,
        y: rng.random::<f64>() * area.height_m,
        altitude_m,
    }
}
