//! Expected-reward matrix, Bernoulli sampling and gap statistics.

use crate::error::{Error, Result};
use crate::rng::{Purpose, RngStream};

/// Expected rewards `mu[n][k]` for every (user, channel) pair.
///
/// Stored row-major, one row per user. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    channels: usize,
    users: usize,
    mu: Vec<f64>,
}

impl RewardModel {
    /// Builds a model for a fixed population; requires `1 <= N <= K`.
    pub fn new(mu: Vec<Vec<f64>>) -> Result<Self> {
        let model = Self::user_pool(mu)?;
        if model.users > model.channels {
            return Err(Error::InvalidConfiguration(format!(
                "{} users exceed {} channels",
                model.users, model.channels
            )));
        }
        Ok(model)
    }

    /// Builds a model for a pool of users that come and go over a dynamic
    /// run. The pool may exceed the channel count; the protocol keeps at
    /// most `K` of them transmitting at any time.
    pub fn user_pool(mu: Vec<Vec<f64>>) -> Result<Self> {
        let users = mu.len();
        if users == 0 {
            return Err(Error::InvalidConfiguration("no users".into()));
        }
        let channels = mu[0].len();
        if channels == 0 {
            return Err(Error::InvalidConfiguration("no channels".into()));
        }
        let mut flat = Vec::with_capacity(users * channels);
        for (n, row) in mu.into_iter().enumerate() {
            if row.len() != channels {
                return Err(Error::InvalidConfiguration(format!(
                    "row {n} has {} entries, expected {channels}",
                    row.len()
                )));
            }
            if let Some(bad) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidConfiguration(format!(
                    "mu[{n}] contains {bad}, outside [0, 1]"
                )));
            }
            flat.extend(row);
        }
        Ok(Self {
            channels,
            users,
            mu: flat,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn users(&self) -> usize {
        self.users
    }

    #[inline]
    pub fn mean(&self, user: usize, channel: usize) -> f64 {
        self.mu[user * self.channels + channel]
    }

    pub fn row(&self, user: usize) -> &[f64] {
        &self.mu[user * self.channels..(user + 1) * self.channels]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.mu.chunks(self.channels).map(<[f64]>::to_vec).collect()
    }

    /// Restricts the model to a subset of users, in the given order.
    pub fn select_users(&self, users: &[usize]) -> Result<Self> {
        let mut rows = Vec::with_capacity(users.len());
        for &n in users {
            self.check_user(n)?;
            rows.push(self.row(n).to_vec());
        }
        Self::new(rows)
    }

    fn check_user(&self, user: usize) -> Result<()> {
        if user >= self.users {
            return Err(Error::Index {
                what: "user",
                index: user,
                limit: self.users,
            });
        }
        Ok(())
    }

    fn check_channel(&self, channel: usize) -> Result<()> {
        if channel >= self.channels {
            return Err(Error::Index {
                what: "channel",
                index: channel,
                limit: self.channels,
            });
        }
        Ok(())
    }
}

/// Draws a `N x K` matrix of independent `Uniform[0,1]` means.
///
/// Each user's row comes from its own stream, so the matrix seen by the
/// first `n` users does not depend on `N`. A row with an exact tie is redrawn.
pub fn draw_reward_matrix(channels: usize, users: usize, seed: u64) -> Result<RewardModel> {
    if channels == 0 || users == 0 {
        return Err(Error::InvalidConfiguration(format!(
            "zero dimension: K = {channels}, N = {users}"
        )));
    }
    if users > channels {
        return Err(Error::InvalidConfiguration(format!(
            "{users} users exceed {channels} channels"
        )));
    }
    draw_user_pool(channels, users, seed)
}

/// Like [`draw_reward_matrix`] but without the `N <= K` restriction.
pub fn draw_user_pool(channels: usize, users: usize, seed: u64) -> Result<RewardModel> {
    if channels == 0 || users == 0 {
        return Err(Error::InvalidConfiguration(format!(
            "zero dimension: K = {channels}, N = {users}"
        )));
    }
    let rows = (0..users)
        .map(|n| {
            let mut rng = RngStream::for_user(seed, Purpose::RewardMatrix, n);
            loop {
                let row: Vec<f64> = (0..channels).map(|_| rng.uniform()).collect();
                let all_zero = row.iter().all(|&v| v == 0.0);
                if !all_zero && !has_tie(&row) {
                    break row;
                }
            }
        })
        .collect();
    RewardModel::user_pool(rows)
}

fn has_tie(row: &[f64]) -> bool {
    let mut sorted = row.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.windows(2).any(|w| w[0] == w[1])
}

/// One Bernoulli reward for user `n` transmitting alone on channel `k`.
pub fn sample_reward(
    model: &RewardModel,
    user: usize,
    channel: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    model.check_user(user)?;
    model.check_channel(channel)?;
    Ok(if rng.bernoulli(model.mean(user, channel)) {
        1.0
    } else {
        0.0
    })
}

/// Smallest absolute gap between two channel means, per user and overall.
#[derive(Debug, Clone, PartialEq)]
pub struct GapStats {
    pub per_user: Vec<f64>,
    pub delta_min: f64,
}

/// Computes [`GapStats`]. Fails if some user has two equal channel means.
///
/// A single-channel model has no pairs; its gap is reported as 1.
pub fn delta_min(model: &RewardModel) -> Result<GapStats> {
    let mut per_user = Vec::with_capacity(model.users());
    for n in 0..model.users() {
        let mut sorted = model.row(n).to_vec();
        sorted.sort_by(f64::total_cmp);
        // The minimum pairwise gap is attained between neighbours in sorted order.
        let gap = sorted
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(1.0_f64, f64::min);
        if gap <= 0.0 {
            return Err(Error::DegenerateGap { user: n });
        }
        per_user.push(gap);
    }
    let delta_min = per_user.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(GapStats {
        per_user,
        delta_min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draw_shape_and_range() {
        let m = draw_reward_matrix(4, 3, 42).unwrap();
        assert_eq!((m.users(), m.channels()), (3, 4));
        assert!(m.rows().iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn draw_is_deterministic() {
        assert_eq!(
            draw_reward_matrix(6, 4, 9).unwrap(),
            draw_reward_matrix(6, 4, 9).unwrap()
        );
        assert_ne!(
            draw_reward_matrix(6, 4, 9).unwrap(),
            draw_reward_matrix(6, 4, 10).unwrap()
        );
    }

    #[test]
    fn adding_users_keeps_existing_rows() {
        let small = draw_reward_matrix(8, 3, 5).unwrap();
        let large = draw_reward_matrix(8, 7, 5).unwrap();
        for n in 0..3 {
            assert_eq!(small.row(n), large.row(n));
        }
    }

    #[test]
    fn draw_rejects_bad_dimensions() {
        assert!(matches!(
            draw_reward_matrix(3, 4, 1),
            Err(Error::InvalidConfiguration(_))
        ));
        assert!(draw_reward_matrix(0, 0, 1).is_err());
        assert!(draw_reward_matrix(3, 0, 1).is_err());
    }

    #[test]
    fn grand_mean_is_one_half() {
        let mut total = 0.0;
        let mut count = 0usize;
        for seed in 0..100_000u64 {
            let m = draw_reward_matrix(10, 10, seed).unwrap();
            total += m.rows().iter().flatten().sum::<f64>();
            count += 100;
        }
        let mean = total / count as f64;
        assert!((mean - 0.5).abs() < 0.01, "grand mean {mean}");
    }

    #[test]
    fn construction_validates_entries() {
        assert!(RewardModel::new(vec![vec![0.2, 1.2]]).is_err());
        assert!(RewardModel::new(vec![vec![0.2, 0.3], vec![0.1]]).is_err());
        assert!(RewardModel::new(vec![vec![0.2]; 2]).is_err());
        assert!(RewardModel::user_pool(vec![vec![0.2]; 2]).is_ok());
    }

    #[test]
    fn degenerate_rewards() {
        let m = RewardModel::new(vec![vec![1.0, 0.0]]).unwrap();
        let mut rng = RngStream::new(3, 0);
        for _ in 0..1000 {
            assert_eq!(sample_reward(&m, 0, 0, &mut rng).unwrap(), 1.0);
            assert_eq!(sample_reward(&m, 0, 1, &mut rng).unwrap(), 0.0);
        }
    }

    #[test]
    fn empirical_mean_matches() {
        let m = RewardModel::new(vec![vec![0.3, 0.9]]).unwrap();
        let mut rng = RngStream::new(17, 0);
        let n = 100_000;
        let hits: f64 = (0..n)
            .map(|_| sample_reward(&m, 0, 0, &mut rng).unwrap())
            .sum();
        let mean = hits / n as f64;
        assert!((mean - 0.3).abs() < 0.01, "mean {mean}");
        // 4 sigma
        let sigma = (0.3f64 * 0.7 / n as f64).sqrt();
        assert!((mean - 0.3).abs() < 4.0 * sigma);
    }

    #[test]
    fn sample_reward_index_errors() {
        let m = RewardModel::new(vec![vec![0.3, 0.9]]).unwrap();
        let mut rng = RngStream::new(1, 0);
        assert!(matches!(
            sample_reward(&m, 1, 0, &mut rng),
            Err(Error::Index { what: "user", .. })
        ));
        assert!(matches!(
            sample_reward(&m, 0, 2, &mut rng),
            Err(Error::Index {
                what: "channel",
                ..
            })
        ));
    }

    #[test]
    fn delta_min_examples() {
        let m = RewardModel::new(vec![vec![0.1, 0.5], vec![0.2, 0.9]]).unwrap();
        let g = delta_min(&m).unwrap();
        assert!((g.delta_min - 0.4).abs() < 1e-12);
        assert!((g.per_user[1] - 0.7).abs() < 1e-12);

        let m = RewardModel::new(vec![vec![0.0, 1.0]]).unwrap();
        assert_eq!(delta_min(&m).unwrap().delta_min, 1.0);
    }

    #[test]
    fn delta_min_matches_pairwise_brute_force() {
        for seed in 0..50 {
            let m = draw_reward_matrix(5, 5, seed).unwrap();
            let g = delta_min(&m).unwrap();
            let mut brute = f64::INFINITY;
            for n in 0..5 {
                let mut row_min = f64::INFINITY;
                for i in 0..5 {
                    for j in (i + 1)..5 {
                        row_min = row_min.min((m.mean(n, i) - m.mean(n, j)).abs());
                    }
                }
                assert_eq!(g.per_user[n], row_min);
                brute = brute.min(row_min);
            }
            assert_eq!(g.delta_min, brute);
            assert!(g.delta_min > 0.0);
            assert!(g.per_user.iter().all(|&d| g.delta_min <= d));
        }
    }

    #[test]
    fn delta_min_rejects_ties() {
        let m = RewardModel::new(vec![vec![0.4, 0.4, 0.1]]).unwrap();
        assert_eq!(delta_min(&m), Err(Error::DegenerateGap { user: 0 }));
    }
}
