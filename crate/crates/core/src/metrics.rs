//! Potential, stability and reward metrics over configurations and traces.
//!
//! All metrics use the true means, never the agents' estimates.

use crate::engine::RunTrace;
use crate::error::{Error, Result};
use crate::model::RewardModel;
use crate::oracle::{optimal_value_for, Configuration};

/// Metrics sampled at the last slot of one super-frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMetrics {
    pub super_frame: u64,
    pub potential: u64,
    pub in_smc: bool,
    /// Realized reward summed over all users since the warm-up ended.
    pub cum_reward: f64,
    /// Expected reward of the configuration over the optimum for the live users.
    pub norm_reward: f64,
    /// Cumulative channel switches per user id.
    pub switches: Vec<u64>,
    pub live_users: usize,
}

/// Per-super-frame metrics for one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsTrace {
    pub frames: Vec<FrameMetrics>,
}

impl MetricsTrace {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn potentials(&self) -> Vec<u64> {
        self.frames.iter().map(|f| f.potential).collect()
    }

    pub fn last(&self) -> Option<&FrameMetrics> {
        self.frames.last()
    }
}

/// Number of channels user `n` strictly prefers to her current one.
pub fn user_potential(model: &RewardModel, config: &Configuration, user: usize) -> Result<u64> {
    let channel = config
        .channel_of(user)
        .ok_or_else(|| Error::Domain(format!("user {user} is not assigned")))?;
    Ok(strictly_better(model.row(user), channel))
}

fn strictly_better(row: &[f64], channel: usize) -> u64 {
    let own = row[channel];
    row.iter().filter(|&&m| m > own).count() as u64
}

/// Sum of user potentials over the assigned users.
pub fn system_potential(model: &RewardModel, config: &Configuration) -> u64 {
    config
        .assigned()
        .map(|(n, k)| strictly_better(model.row(n), k))
        .sum()
}

/// Cumulative channel changes per super-frame and user, rebuilt from the
/// channel history. Joining and leaving are not switches.
pub fn count_switches(trace: &RunTrace) -> Vec<Vec<u64>> {
    let users = trace.model.users();
    let mut running = vec![0u64; users];
    let mut prev: Option<&Vec<Option<usize>>> = Some(&trace.initial_channels);
    let mut out = Vec::with_capacity(trace.channel_history.len());
    for row in &trace.channel_history {
        if let Some(prev) = prev {
            for n in 0..users {
                if let (Some(a), Some(b)) = (prev[n], row[n]) {
                    if a != b {
                        running[n] += 1;
                    }
                }
            }
        }
        out.push(running.clone());
        prev = Some(row);
    }
    out
}

/// Expected reward of each super-frame's configuration over the optimum for
/// the users live at that time.
pub fn normalized_reward(trace: &RunTrace, model: &RewardModel) -> Result<Vec<f64>> {
    let mut cache: Option<(Vec<usize>, f64)> = None;
    trace
        .channel_history
        .iter()
        .map(|row| {
            let config = Configuration::new(model.channels(), row.clone())?;
            let live: Vec<usize> = config.assigned().map(|(n, _)| n).collect();
            let optimum = match &cache {
                Some((users, value)) if *users == live => *value,
                _ => {
                    let value = optimal_value_for(model, &live)?;
                    cache = Some((live, value));
                    value
                }
            };
            Ok(ratio(config.expected_reward(model), optimum))
        })
        .collect()
}

pub(crate) fn ratio(actual: f64, optimum: f64) -> f64 {
    if optimum > 0.0 {
        actual / optimum
    } else {
        1.0
    }
}
