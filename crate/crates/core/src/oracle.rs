//! Ground-truth checks that use the true means directly: exchange
//! stability, exhaustive enumeration of stable configurations and the
//! reward-optimal assignment.

use crate::error::{Error, Result};
use crate::model::RewardModel;

/// Largest number of injective assignments [`enumerate_absorbing`] visits.
pub const ENUMERATION_LIMIT: u128 = 10_000_000;

/// An orthogonal mapping of users to channels. Users mapped to `None` are
/// absent (not live).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    channels: usize,
    assignment: Vec<Option<usize>>,
}

impl Configuration {
    pub fn new(channels: usize, assignment: Vec<Option<usize>>) -> Result<Self> {
        let mut taken = vec![false; channels];
        for (n, a) in assignment.iter().enumerate() {
            if let Some(k) = *a {
                if k >= channels {
                    return Err(Error::InvalidConfiguration(format!(
                        "user {n} on channel {k}, only {channels} channels"
                    )));
                }
                if std::mem::replace(&mut taken[k], true) {
                    return Err(Error::InvalidConfiguration(format!(
                        "channel {k} holds more than one user"
                    )));
                }
            }
        }
        Ok(Self {
            channels,
            assignment,
        })
    }

    /// Every user assigned, user `n` on `channels_of[n]`.
    pub fn full(channels: usize, channels_of: &[usize]) -> Result<Self> {
        Self::new(channels, channels_of.iter().copied().map(Some).collect())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn assignment(&self) -> &[Option<usize>] {
        &self.assignment
    }

    pub fn channel_of(&self, user: usize) -> Option<usize> {
        self.assignment.get(user).copied().flatten()
    }

    /// `(user, channel)` for every assigned user.
    pub fn assigned(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(n, a)| a.map(|k| (n, k)))
    }

    /// `occupant[k]` is the user on channel `k`.
    pub fn occupants(&self) -> Vec<Option<usize>> {
        let mut occ = vec![None; self.channels];
        for (n, k) in self.assigned() {
            occ[k] = Some(n);
        }
        occ
    }

    /// Sum of true means over assigned users.
    pub fn expected_reward(&self, model: &RewardModel) -> f64 {
        self.assigned().map(|(n, k)| model.mean(n, k)).sum()
    }
}

/// Which moves count against stability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stability {
    /// Pair swaps plus moves to a strictly better vacant channel.
    #[default]
    VacancyExtended,
    /// Pair swaps only.
    PairOnly,
}

fn check_shape(config: &Configuration, model: &RewardModel) -> Result<()> {
    if config.channels != model.channels() {
        return Err(Error::InvalidConfiguration(format!(
            "configuration has {} channels, model has {}",
            config.channels,
            model.channels()
        )));
    }
    if config.assignment.len() > model.users() {
        return Err(Error::InvalidConfiguration(format!(
            "configuration has {} users, model has {}",
            config.assignment.len(),
            model.users()
        )));
    }
    Ok(())
}

/// Stable-marriage check with the vacancy extension.
pub fn is_smc(config: &Configuration, model: &RewardModel) -> Result<bool> {
    is_smc_with(config, model, Stability::VacancyExtended)
}

/// No ordered pair `(n1, n2)` has `n1` strictly preferring `n2`'s channel
/// while `n2` weakly prefers `n1`'s; under [`Stability::VacancyExtended`]
/// also no user strictly prefers a vacant channel.
pub fn is_smc_with(config: &Configuration, model: &RewardModel, rule: Stability) -> Result<bool> {
    check_shape(config, model)?;
    let occupants = config.occupants();
    for (n1, a1) in config.assigned() {
        let own = model.mean(n1, a1);
        for (k, occupant) in occupants.iter().enumerate() {
            if model.mean(n1, k) <= own {
                continue;
            }
            match *occupant {
                Some(n2) => {
                    if model.mean(n2, k) <= model.mean(n2, a1) {
                        return Ok(false);
                    }
                }
                None => {
                    if rule == Stability::VacancyExtended {
                        return Ok(false);
                    }
                }
            }
        }
    }
    Ok(true)
}

/// Number of injective maps from `users` users to `channels` channels.
pub fn injective_count(channels: usize, users: usize) -> u128 {
    if users > channels {
        return 0;
    }
    ((channels - users + 1)..=channels)
        .map(|v| v as u128)
        .product()
}

/// Calls `visit` with every injective assignment in lexicographic order.
pub fn for_each_injective(channels: usize, users: usize, mut visit: impl FnMut(&[usize])) {
    fn rec(
        depth: usize,
        channels: usize,
        current: &mut Vec<usize>,
        used: &mut [bool],
        users: usize,
        visit: &mut dyn FnMut(&[usize]),
    ) {
        if depth == users {
            visit(current);
            return;
        }
        for k in 0..channels {
            if used[k] {
                continue;
            }
            used[k] = true;
            current.push(k);
            rec(depth + 1, channels, current, used, users, visit);
            current.pop();
            used[k] = false;
        }
    }
    let mut used = vec![false; channels];
    rec(
        0,
        channels,
        &mut Vec::with_capacity(users),
        &mut used,
        users,
        &mut visit,
    );
}

/// All stable configurations of the model's users, by exhaustive search.
pub fn enumerate_absorbing(model: &RewardModel) -> Result<Vec<Configuration>> {
    enumerate_absorbing_with(model, Stability::VacancyExtended)
}

pub fn enumerate_absorbing_with(
    model: &RewardModel,
    rule: Stability,
) -> Result<Vec<Configuration>> {
    let (channels, users) = (model.channels(), model.users());
    let count = injective_count(channels, users);
    if count > ENUMERATION_LIMIT {
        return Err(Error::TooLarge {
            configurations: count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut found = Vec::new();
    let mut failure = None;
    for_each_injective(channels, users, |channels_of| {
        if failure.is_some() {
            return;
        }
        let config = match Configuration::full(channels, channels_of) {
            Ok(c) => c,
            Err(e) => {
                failure = Some(e);
                return;
            }
        };
        match is_smc_with(&config, model, rule) {
            Ok(true) => found.push(config),
            Ok(false) => {}
            Err(e) => failure = Some(e),
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(found),
    }
}

/// Reward-maximizing orthogonal assignment of every user in `model`.
pub fn optimal_assignment(model: &RewardModel) -> Result<(f64, Configuration)> {
    let users = model.users();
    let channels = model.channels();
    if users > channels {
        return Err(Error::InvalidConfiguration(format!(
            "{users} users exceed {channels} channels"
        )));
    }
    let cost: Vec<Vec<f64>> = (0..users)
        .map(|n| model.row(n).iter().map(|&m| -m).collect())
        .collect();
    let channels_of = hungarian_min(&cost);
    let config = Configuration::full(channels, &channels_of)?;
    Ok((config.expected_reward(model), config))
}

/// Optimal value over a subset of users (e.g. the live ones in a dynamic run).
pub fn optimal_value_for(model: &RewardModel, users: &[usize]) -> Result<f64> {
    if users.is_empty() {
        return Ok(0.0);
    }
    Ok(optimal_assignment(&model.select_users(users)?)?.0)
}

/// Shortest-augmenting-path Hungarian method for an `n x m` cost matrix,
/// `n <= m`. Returns the column assigned to each row. O(n^2 m).
fn hungarian_min(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    debug_assert!(n <= m);
    // 1-based potentials; column 0 is a virtual source.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0usize; n];
    for j in 1..=m {
        if row_of[j] != 0 {
            col_of[row_of[j] - 1] = j - 1;
        }
    }
    col_of
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::draw_reward_matrix;

    fn model(rows: &[&[f64]]) -> RewardModel {
        RewardModel::new(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    /// Means decreasing with channel index, the same for everyone.
    fn identical_ranking(users: usize, channels: usize) -> RewardModel {
        let row: Vec<f64> = (0..channels).map(|k| 0.9 - 0.1 * k as f64).collect();
        RewardModel::new(vec![row; users]).unwrap()
    }

    #[test]
    fn identical_rankings_diagonal_is_stable() {
        let m = identical_ranking(4, 4);
        let c = Configuration::full(4, &[0, 1, 2, 3]).unwrap();
        assert!(is_smc(&c, &m).unwrap());
    }

    #[test]
    fn mutual_gain_is_unstable() {
        let m = model(&[&[0.9, 0.1], &[0.2, 0.8]]);
        let c = Configuration::full(2, &[1, 0]).unwrap();
        assert!(!is_smc(&c, &m).unwrap());
        let good = Configuration::full(2, &[0, 1]).unwrap();
        assert!(is_smc(&good, &m).unwrap());
    }

    #[test]
    fn better_vacancy_is_unstable_only_with_extension() {
        let m = model(&[&[0.3, 0.7]]);
        let c = Configuration::full(2, &[0]).unwrap();
        assert!(!is_smc(&c, &m).unwrap());
        assert!(is_smc_with(&c, &m, Stability::PairOnly).unwrap());
    }

    #[test]
    fn non_orthogonal_is_rejected() {
        assert!(Configuration::full(3, &[1, 1]).is_err());
        assert!(Configuration::full(3, &[3]).is_err());
    }

    #[test]
    fn shared_favourite_has_two_stable_configurations() {
        let m = model(&[&[0.9, 0.4], &[0.8, 0.3]]);
        let all = enumerate_absorbing(&m).unwrap();
        assert_eq!(all.len(), 2);
    }

    #[test]
    fn single_user_absorbs_on_best_channel() {
        let m = model(&[&[0.2, 0.6]]);
        let all = enumerate_absorbing(&m).unwrap();
        assert_eq!(all, vec![Configuration::full(2, &[1]).unwrap()]);
    }

    #[test]
    fn enumeration_guard() {
        let m = RewardModel::new(vec![vec![0.5; 12]; 12]).unwrap();
        assert!(matches!(
            enumerate_absorbing(&m),
            Err(Error::TooLarge { .. })
        ));
        assert_eq!(injective_count(5, 3), 60);
        assert_eq!(injective_count(3, 4), 0);
    }

    #[test]
    fn lexicographic_order() {
        let mut seen = Vec::new();
        for_each_injective(3, 2, |a| seen.push(a.to_vec()));
        assert_eq!(
            seen,
            vec![
                vec![0, 1],
                vec![0, 2],
                vec![1, 0],
                vec![1, 2],
                vec![2, 0],
                vec![2, 1]
            ]
        );
    }

    #[test]
    fn optimal_small_examples() {
        let m = model(&[&[0.9, 0.1], &[0.2, 0.8]]);
        let (value, config) = optimal_assignment(&m).unwrap();
        assert!((value - 1.7).abs() < 1e-12);
        assert_eq!(config, Configuration::full(2, &[0, 1]).unwrap());

        let m = model(&[&[0.37]]);
        assert_eq!(optimal_assignment(&m).unwrap().0, 0.37);
    }

    #[test]
    fn optimal_beats_every_stable_configuration() {
        for seed in 0..30 {
            let m = draw_reward_matrix(5, 4, seed).unwrap();
            let (best, _) = optimal_assignment(&m).unwrap();
            for c in enumerate_absorbing(&m).unwrap() {
                assert!(c.expected_reward(&m) <= best + 1e-12);
            }
        }
    }

    #[test]
    fn rectangular_optimum_matches_brute_force() {
        for seed in 0..40 {
            let m = draw_reward_matrix(6, 3, seed).unwrap();
            let mut brute = f64::NEG_INFINITY;
            for_each_injective(6, 3, |a| {
                brute = brute.max(a.iter().enumerate().map(|(n, &k)| m.mean(n, k)).sum());
            });
            let (value, _) = optimal_assignment(&m).unwrap();
            assert!((value - brute).abs() < 1e-12);
        }
    }
}
