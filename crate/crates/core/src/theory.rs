//! Closed-form convergence bounds. All logarithms are natural.
//!
//! The bounds are reported next to empirical results; the simulator never
//! waits for them.

use crate::error::{Error, Result};

fn check_gap(delta_min: f64) -> Result<()> {
    if delta_min > 0.0 && delta_min <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("gap {delta_min} outside (0, 1]")))
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("epsilon {epsilon} outside (0, 1)")))
    }
}

/// `(32 K / Δ²)²`: slots after which the UCB rankings are reliable.
pub fn t_min_bound(channels: usize, delta_min: f64) -> Result<f64> {
    check_gap(delta_min)?;
    if channels == 0 {
        return Err(Error::Domain("K must be positive".into()));
    }
    Ok((32.0 * channels as f64 / (delta_min * delta_min)).powi(2))
}

/// `8 ln T / Δ²`: samples per channel needed to separate the means.
pub fn s_min_bound(horizon: f64, delta_min: f64) -> Result<f64> {
    check_gap(delta_min)?;
    if horizon.is_nan() || horizon < 2.0 {
        return Err(Error::Domain(format!("horizon {horizon} below 2")));
    }
    Ok(8.0 * horizon.ln() / (delta_min * delta_min))
}

/// Election probability net of the ranking-error slack.
fn net_election(users: usize, epsilon: f64, t_min: f64) -> f64 {
    epsilon * (1.0 - epsilon).powi(users as i32 - 1) - 2.0 * t_min.powi(-4)
}

fn bound_with_potential(
    channels: usize,
    users: usize,
    epsilon: f64,
    delta: f64,
    t_min: f64,
    potential_term: f64,
) -> Result<f64> {
    check_epsilon(epsilon)?;
    if channels == 0 || users == 0 {
        return Err(Error::Domain("K and N must be positive".into()));
    }
    if t_min.is_nan() || t_min <= 0.0 {
        return Err(Error::Domain(format!("t_min {t_min} not positive")));
    }
    let slack = delta - 6.0 * t_min.powi(-4);
    if slack.is_nan() || slack <= 0.0 || delta >= 1.0 {
        return Err(Error::InvalidBound(format!(
            "delta {delta} must lie in (6 t_min^-4, 1)"
        )));
    }
    let p = net_election(users, epsilon, t_min);
    if p.is_nan() || p <= 0.0 {
        return Err(Error::InvalidBound(format!(
            "election probability {p} not positive"
        )));
    }
    let frame = 2.0 * channels as f64;
    Ok(t_min + frame / p * ((1.0 / slack).ln() / (4.0 * p) + potential_term))
}

/// Slots until the static system is in a stable configuration with
/// probability at least `1 − δ`.
pub fn t_delta_static(
    channels: usize,
    users: usize,
    epsilon: f64,
    delta: f64,
    t_min: f64,
) -> Result<f64> {
    let term = 2.0 * users as f64 * (channels as f64 - 1.0);
    bound_with_potential(channels, users, epsilon, delta, t_min, term)
}

/// Like [`t_delta_static`] but starting from a configuration whose
/// potential is at most [`phi_max`], as after a departure.
pub fn t_delta_departure(
    channels: usize,
    users: usize,
    epsilon: f64,
    delta: f64,
    t_min: f64,
) -> Result<f64> {
    let term = users as f64 * (users as f64 - 1.0);
    bound_with_potential(channels, users, epsilon, delta, t_min, term)
}

/// Arrival settling bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrivalBound {
    pub slots: f64,
    /// The bracket was negative and the bound was clamped to 0.
    pub clamped: bool,
}

/// `((4/Δ²)·((K−N)/(K−1))·(ln(1/δ)/ln(1/(1−ε)) − 1))²` for a newbie
/// joining `N` settled users.
pub fn t_arrival_bound(
    channels: usize,
    users: usize,
    epsilon: f64,
    delta: f64,
    delta_min: f64,
) -> Result<ArrivalBound> {
    if users >= channels {
        return Err(Error::NoVacancy { users, channels });
    }
    check_gap(delta_min)?;
    check_epsilon(epsilon)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta {delta} outside (0, 1)")));
    }
    let bracket = (1.0 / delta).ln() / (1.0 / (1.0 - epsilon)).ln() - 1.0;
    let clamped = bracket < 0.0;
    let share = (channels - users) as f64 / (channels as f64 - 1.0);
    let root = 4.0 / (delta_min * delta_min) * share * bracket.max(0.0);
    Ok(ArrivalBound {
        slots: root * root,
        clamped,
    })
}

/// Largest potential of a stable configuration: `N(N−1)/2`.
pub fn phi_max(users: usize) -> u64 {
    let n = users as u64;
    n * n.saturating_sub(1) / 2
}

/// All bounds for one parameter point. A bound is `None` when its
/// preconditions fail; the reason is kept in the matching `*_error`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub channels: usize,
    pub users: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub delta_min: f64,
    pub horizon: f64,
    pub t_min: f64,
    pub s_min: Option<f64>,
    pub t_delta_static: Option<f64>,
    pub t_delta_static_error: Option<String>,
    pub t_delta_departure: Option<f64>,
    pub t_delta_departure_error: Option<String>,
    pub t_arrival: Option<f64>,
    pub t_arrival_clamped: bool,
    pub t_arrival_error: Option<String>,
    pub phi_max: u64,
    /// `δ > 6 t_min⁻⁴`.
    pub delta_valid: bool,
}

impl BoundReport {
    pub fn compute(
        channels: usize,
        users: usize,
        epsilon: f64,
        delta: f64,
        delta_min: f64,
        horizon: f64,
    ) -> Result<Self> {
        let t_min = t_min_bound(channels, delta_min)?;
        let split = |r: Result<f64>| match r {
            Ok(v) => (Some(v), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let (t_static, static_err) = split(t_delta_static(channels, users, epsilon, delta, t_min));
        let (t_dep, dep_err) = split(t_delta_departure(channels, users, epsilon, delta, t_min));
        let (t_arrival, clamped, arrival_err) =
            match t_arrival_bound(channels, users, epsilon, delta, delta_min) {
                Ok(b) => (Some(b.slots), b.clamped, None),
                Err(e) => (None, false, Some(e.to_string())),
            };
        Ok(Self {
            channels,
            users,
            epsilon,
            delta,
            delta_min,
            horizon,
            t_min,
            s_min: s_min_bound(horizon, delta_min).ok(),
            t_delta_static: t_static,
            t_delta_static_error: static_err,
            t_delta_departure: t_dep,
            t_delta_departure_error: dep_err,
            t_arrival,
            t_arrival_clamped: clamped,
            t_arrival_error: arrival_err,
            phi_max: phi_max(users),
            delta_valid: delta > 6.0 * t_min.powi(-4),
        })
    }
}
