//! Per-user channel-access policy.
//!
//! Each user keeps per-channel reward sums and sample counts, ranks channels
//! by their UCB index at every super-frame boundary, and coordinates channel
//! swaps through the initiator/responder handshake. Before the first
//! super-frame she runs a communication-free warm-up that drives the
//! population into an orthogonal configuration.

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Step size of the warm-up probability update after a collision.
pub const CFL_BETA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Cfl,
    Steady,
    NewbieWait,
}

/// UCB index of every channel at clock `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct UcbIndexVector {
    pub values: Vec<f64>,
    pub t: u64,
}

impl UcbIndexVector {
    /// `r/s + sqrt(2 ln t / s)`, or `+inf` for a channel never sampled.
    pub fn compute(rewards: &[f64], samples: &[u64], t: u64) -> Self {
        let log_t = (t.max(1) as f64).ln();
        let values = rewards
            .iter()
            .zip(samples)
            .map(|(&r, &s)| {
                if s == 0 {
                    f64::INFINITY
                } else {
                    let s = s as f64;
                    r / s + (2.0 * log_t / s).sqrt()
                }
            })
            .collect();
        Self { values, t }
    }

    pub fn get(&self, channel: usize) -> f64 {
        self.values[channel]
    }

    /// Channels in descending index order; ties go to the lower channel.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.values.len()).collect();
        order.sort_by(|&a, &b| self.values[b].total_cmp(&self.values[a]).then(a.cmp(&b)));
        order
    }
}

/// What the initiator did in a coordination mini-frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwapAction {
    /// Moved to `to`. `vacant` is true when no responder was involved.
    Moved {
        from: usize,
        to: usize,
        vacant: bool,
    },
    /// The responder declined; the pointer now names the next candidate.
    Advanced { next: Option<usize> },
    /// Nothing left to do this super-frame.
    Idle,
}

/// Outcome of a newbie's attempt to join.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinDecision {
    Join(usize),
    Wait,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub user: usize,
    /// Cumulative reward per channel.
    pub rewards: Vec<f64>,
    /// Learning samples per channel.
    pub samples: Vec<u64>,
    pub channel: Option<usize>,
    /// Channels whose index strictly exceeds the current channel's, best first.
    pub pref_list: Vec<usize>,
    /// 1-based position in `pref_list`; 0 when inactive.
    pub pref_ptr: usize,
    pub phase: Phase,
    pub cfl_satisfied: bool,
    cfl_probs: Vec<f64>,
    index: UcbIndexVector,
    initiator: bool,
}

impl AgentState {
    fn blank(user: usize, channels: usize, phase: Phase) -> Self {
        Self {
            user,
            rewards: vec![0.0; channels],
            samples: vec![0; channels],
            channel: None,
            pref_list: Vec::new(),
            pref_ptr: 0,
            phase,
            cfl_satisfied: false,
            cfl_probs: vec![1.0 / channels as f64; channels],
            index: UcbIndexVector {
                values: vec![f64::INFINITY; channels],
                t: 0,
            },
            initiator: false,
        }
    }

    /// A user entering the warm-up phase on a uniformly random channel.
    pub fn warm_up(user: usize, channels: usize, rng: &mut RngStream) -> Self {
        let mut state = Self::blank(user, channels, Phase::Cfl);
        state.channel = Some(rng.below(channels));
        state
    }

    /// A user already settled on `channel`, with no statistics yet.
    pub fn settled(user: usize, channels: usize, channel: usize) -> Self {
        let mut state = Self::blank(user, channels, Phase::Steady);
        state.channel = Some(channel);
        state.cfl_satisfied = true;
        state
    }

    /// A user arriving into a running system.
    pub fn newbie(user: usize, channels: usize) -> Self {
        Self::blank(user, channels, Phase::NewbieWait)
    }

    pub fn channels(&self) -> usize {
        self.samples.len()
    }

    pub fn index(&self) -> &UcbIndexVector {
        &self.index
    }

    pub fn is_initiator(&self) -> bool {
        self.initiator
    }

    /// Recomputes indices and the preference list at a super-frame boundary
    /// and re-arms the preference pointer.
    pub fn rank_channels(&mut self, t: u64) -> (&[usize], &UcbIndexVector) {
        self.index = UcbIndexVector::compute(&self.rewards, &self.samples, t);
        self.pref_list.clear();
        if let Some(a) = self.channel {
            let own = self.index.get(a);
            self.pref_list.extend(
                self.index
                    .ranking()
                    .into_iter()
                    .take_while(|&k| self.index.get(k) > own),
            );
        }
        self.pref_ptr = 1;
        self.initiator = false;
        (&self.pref_list, &self.index)
    }

    /// Records one lone transmission on the current channel.
    pub fn transmit_and_learn(&mut self, reward: f64) -> Result<()> {
        let a = self.channel.ok_or_else(|| {
            Error::ProtocolViolation(format!("user {} learns without a channel", self.user))
        })?;
        self.rewards[a] += reward;
        self.samples[a] += 1;
        Ok(())
    }

    pub fn set_initiator(&mut self, initiator: bool) {
        self.initiator = initiator;
    }

    /// Channel the initiator pursues in the current mini-frame, if any.
    pub fn current_target(&self) -> Option<usize> {
        if !self.initiator || self.pref_ptr == 0 {
            return None;
        }
        self.pref_list.get(self.pref_ptr - 1).copied()
    }

    /// Advances the initiator's handshake for one mini-frame.
    ///
    /// A vacant target (per the availability snapshot) is taken without a
    /// probe. Otherwise `response` is what the initiator sensed on the target
    /// during `S4`.
    pub fn coordinate_swap_step(
        &mut self,
        response: bool,
        channel_available: bool,
    ) -> Result<SwapAction> {
        if !self.initiator {
            return Err(Error::ProtocolViolation(format!(
                "user {} coordinates a swap without being the initiator",
                self.user
            )));
        }
        let Some(target) = self.current_target() else {
            return Ok(SwapAction::Idle);
        };
        let from = self.channel.ok_or_else(|| {
            Error::ProtocolViolation(format!("initiator {} has no channel", self.user))
        })?;
        if channel_available || response {
            self.channel = Some(target);
            self.pref_ptr = 0;
            return Ok(SwapAction::Moved {
                from,
                to: target,
                vacant: channel_available,
            });
        }
        self.pref_ptr += 1;
        Ok(SwapAction::Advanced {
            next: self.current_target(),
        })
    }

    /// Responder side of an accepted swap.
    pub fn accept_swap(&mut self, new_channel: usize) {
        self.channel = Some(new_channel);
    }

    /// One warm-up slot: update the channel distribution from the collision
    /// outcome of this slot, then choose the channel for the next one.
    ///
    /// A collision-free transmission makes the user satisfied and pins her
    /// distribution to the current channel. After a collision she shifts
    /// probability mass away from that channel and redraws.
    pub fn cfl_step(&mut self, sensed_collision: bool, rng: &mut RngStream) -> Result<()> {
        if self.phase != Phase::Cfl {
            return Err(Error::ProtocolViolation(format!(
                "user {} runs the warm-up outside its phase",
                self.user
            )));
        }
        let current = self.channel.ok_or_else(|| {
            Error::ProtocolViolation(format!("user {} has no warm-up channel", self.user))
        })?;
        if !sensed_collision {
            self.cfl_satisfied = true;
            self.cfl_probs.iter_mut().for_each(|p| *p = 0.0);
            self.cfl_probs[current] = 1.0;
            return Ok(());
        }
        self.cfl_satisfied = false;
        let channels = self.channels();
        if channels > 1 {
            let spread = CFL_BETA / (channels - 1) as f64;
            for (k, p) in self.cfl_probs.iter_mut().enumerate() {
                *p *= 1.0 - CFL_BETA;
                if k != current {
                    *p += spread;
                }
            }
        }
        self.channel = Some(sample_categorical(&self.cfl_probs, rng));
        Ok(())
    }

    /// Leaves the warm-up; learning statistics start empty.
    pub fn finish_warm_up(&mut self) {
        self.phase = Phase::Steady;
    }

    /// Settles a newbie on the channel she announced.
    pub fn join(&mut self, channel: usize) {
        self.channel = Some(channel);
        self.phase = Phase::Steady;
    }
}

fn sample_categorical(probs: &[f64], rng: &mut RngStream) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.uniform() * total;
    for (k, &p) in probs.iter().enumerate() {
        if u < p {
            return k;
        }
        u -= p;
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Raises the initiator flag with probability `epsilon`, only when the user
/// wants to move.
pub fn initiator_flag(pref_list: &[usize], epsilon: f64, rng: &mut RngStream) -> bool {
    !pref_list.is_empty() && rng.bernoulli(epsilon)
}

/// The single flagging user, or `None` if nobody or several users flagged.
pub fn elect_initiator(flags: &[bool]) -> Option<usize> {
    let mut raised = flags.iter().enumerate().filter(|(_, &f)| f).map(|(n, _)| n);
    match (raised.next(), raised.next()) {
        (Some(n), None) => Some(n),
        _ => None,
    }
}

/// Responder decision: accept iff swapping does not lower her own index.
pub fn respond(index: &UcbIndexVector, own_channel: usize, initiator_channel: usize) -> bool {
    index.get(own_channel) <= index.get(initiator_channel)
}

/// Picks a vacant channel from the `S1` snapshot, uniformly.
pub fn newbie_join(s1_sensing: &[bool], rng: &mut RngStream) -> JoinDecision {
    let available: Vec<usize> = s1_sensing
        .iter()
        .enumerate()
        .filter(|(_, &busy)| !busy)
        .map(|(k, _)| k)
        .collect();
    if available.is_empty() {
        JoinDecision::Wait
    } else {
        JoinDecision::Join(available[rng.below(available.len())])
    }
}

/// Probability that one given contender out of `ell` becomes the initiator.
pub fn p_initiator(epsilon: f64, ell: usize) -> Result<f64> {
    if ell < 1 {
        return Err(Error::Domain("contender count must be at least 1".into()));
    }
    Ok(epsilon * (1.0 - epsilon).powi(ell as i32 - 1))
}

/// Default flag probability `1/K`.
pub fn default_epsilon(channels: usize) -> f64 {
    1.0 / channels as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Purpose;
    use proptest::prelude::*;

    fn rng(id: u64) -> RngStream {
        RngStream::new(99, id)
    }

    #[test]
    fn index_formula() {
        // r = [2, 1], s = [4, 1], t = 10:
        // I0 = 0.5 + sqrt(2 ln 10 / 4) = 1.57298..., I1 = 1 + sqrt(2 ln 10) = 3.14597...
        let idx = UcbIndexVector::compute(&[2.0, 1.0], &[4, 1], 10);
        assert!(
            (idx.get(0) - 1.572_983_013_144_674).abs() < 1e-9,
            "{}",
            idx.get(0)
        );
        assert!(
            (idx.get(1) - 3.145_966_026_289_347).abs() < 1e-9,
            "{}",
            idx.get(1)
        );

        let mut state = AgentState::settled(0, 2, 0);
        state.rewards = vec![2.0, 1.0];
        state.samples = vec![4, 1];
        let (list, _) = state.rank_channels(10);
        assert_eq!(list, &[1]);
    }

    #[test]
    fn unsampled_channels_are_preferred() {
        let mut state = AgentState::settled(0, 5, 2);
        state.rewards[2] = 3.0;
        state.samples[2] = 10;
        let (list, idx) = state.rank_channels(50);
        assert_eq!(list, &[0, 1, 3, 4]);
        assert!(idx.get(0).is_infinite());
    }

    #[test]
    fn argmax_channel_yields_empty_list() {
        let mut state = AgentState::settled(0, 3, 1);
        state.rewards = vec![1.0, 9.0, 2.0];
        state.samples = vec![10, 10, 10];
        let (list, _) = state.rank_channels(100);
        assert!(list.is_empty());
        let mut r = rng(1);
        assert!((0..100).all(|_| !initiator_flag(&state.pref_list, 0.9, &mut r)));
    }

    #[test]
    fn ties_break_to_lower_channel() {
        let idx = UcbIndexVector::compute(&[1.0, 2.0, 1.0], &[2, 4, 2], 5);
        assert_eq!(idx.ranking(), vec![0, 2, 1]);
    }

    #[test]
    fn flag_examples() {
        let mut r = rng(2);
        assert!(!initiator_flag(&[], 1.0, &mut r));
        assert!(initiator_flag(&[3], 1.0, &mut r));
        let n = 100_000;
        let hits = (0..n).filter(|_| initiator_flag(&[1], 0.1, &mut r)).count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.1).abs() < 0.004, "{freq}");
    }

    #[test]
    fn election_examples() {
        assert_eq!(elect_initiator(&[false, true, false]), Some(1));
        assert_eq!(elect_initiator(&[false, false, false]), None);
        assert_eq!(elect_initiator(&[true, true, false]), None);
        assert_eq!(elect_initiator(&[]), None);
    }

    fn initiator_with(list: Vec<usize>, channel: usize) -> AgentState {
        let mut s = AgentState::settled(0, 6, channel);
        s.pref_list = list;
        s.pref_ptr = 1;
        s.set_initiator(true);
        s
    }

    #[test]
    fn accepted_probe_swaps() {
        let mut s = initiator_with(vec![4, 2], 5);
        let action = s.coordinate_swap_step(true, false).unwrap();
        assert_eq!(
            action,
            SwapAction::Moved {
                from: 5,
                to: 4,
                vacant: false
            }
        );
        assert_eq!(s.channel, Some(4));
        assert_eq!(s.pref_ptr, 0);
        assert_eq!(
            s.coordinate_swap_step(true, false).unwrap(),
            SwapAction::Idle
        );
    }

    #[test]
    fn declined_probe_advances() {
        let mut s = initiator_with(vec![4, 2], 5);
        assert_eq!(
            s.coordinate_swap_step(false, false).unwrap(),
            SwapAction::Advanced { next: Some(2) }
        );
        assert_eq!(s.pref_ptr, 2);
        assert_eq!(
            s.coordinate_swap_step(false, false).unwrap(),
            SwapAction::Advanced { next: None }
        );
        assert_eq!(s.pref_ptr, 3);
        assert_eq!(
            s.coordinate_swap_step(true, false).unwrap(),
            SwapAction::Idle
        );
        assert_eq!(s.channel, Some(5));
    }

    #[test]
    fn vacant_target_is_taken_directly() {
        let mut s = initiator_with(vec![1], 3);
        let action = s.coordinate_swap_step(false, true).unwrap();
        assert_eq!(
            action,
            SwapAction::Moved {
                from: 3,
                to: 1,
                vacant: true
            }
        );
        assert_eq!(s.channel, Some(1));
    }

    #[test]
    fn non_initiator_cannot_coordinate() {
        let mut s = AgentState::settled(0, 3, 0);
        s.pref_list = vec![1];
        s.pref_ptr = 1;
        assert!(matches!(
            s.coordinate_swap_step(true, false),
            Err(Error::ProtocolViolation(_))
        ));
    }

    #[test]
    fn respond_examples() {
        let idx = UcbIndexVector {
            values: vec![0.5, 0.7],
            t: 1,
        };
        assert!(respond(&idx, 0, 1));
        assert!(!respond(&idx, 1, 0));
        let eq = UcbIndexVector {
            values: vec![0.6, 0.6],
            t: 1,
        };
        assert!(respond(&eq, 0, 1));
    }

    #[test]
    fn learning_update() {
        let mut s = AgentState::settled(0, 3, 1);
        s.rewards[1] = 3.0;
        s.samples[1] = 5;
        s.transmit_and_learn(1.0).unwrap();
        assert_eq!((s.rewards[1], s.samples[1]), (4.0, 6));
        s.transmit_and_learn(0.0).unwrap();
        assert_eq!((s.rewards[1], s.samples[1]), (4.0, 7));
        assert!(AgentState::newbie(1, 3).transmit_and_learn(1.0).is_err());
    }

    #[test]
    fn warm_up_absorbs_when_collision_free() {
        let mut r = rng(3);
        let mut s = AgentState::warm_up(0, 4, &mut r);
        let ch = s.channel;
        s.cfl_step(false, &mut r).unwrap();
        assert!(s.cfl_satisfied);
        assert_eq!(s.channel, ch);
        let before = s.clone();
        s.cfl_step(false, &mut r).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn warm_up_only_in_its_phase() {
        let mut s = AgentState::settled(0, 3, 0);
        assert!(s.cfl_step(true, &mut rng(4)).is_err());
    }

    #[test]
    fn newbie_examples() {
        let mut r = rng(5);
        assert_eq!(newbie_join(&[true, true, true], &mut r), JoinDecision::Wait);
        assert_eq!(
            newbie_join(&[true, true, true, true, false], &mut r),
            JoinDecision::Join(4)
        );
        let sensing = [true, true, true, false, true, false];
        let n = 20_000;
        let mut threes = 0;
        for _ in 0..n {
            match newbie_join(&sensing, &mut r) {
                JoinDecision::Join(3) => threes += 1,
                JoinDecision::Join(5) => {}
                other => panic!("unexpected {other:?}"),
            }
        }
        let freq = threes as f64 / n as f64;
        let sigma = (0.25 / n as f64).sqrt();
        assert!((freq - 0.5).abs() < 4.0 * sigma, "{freq}");
    }

    #[test]
    fn p_initiator_examples() {
        assert!((p_initiator(0.1, 1).unwrap() - 0.1).abs() < 1e-15);
        assert!((p_initiator(0.1, 7).unwrap() - 0.053_144_1).abs() < 1e-12);
        assert!(p_initiator(0.1, 0).is_err());
    }

    proptest! {
        #[test]
        fn pref_list_is_strictly_better_and_unique(
            rewards in proptest::collection::vec(0u32..50, 6),
            extra in proptest::collection::vec(0u64..50, 6),
            channel in 0usize..6,
            t in 1u64..100_000,
        ) {
            let mut s = AgentState::settled(0, 6, channel);
            for k in 0..6 {
                let r = rewards[k] as f64;
                // keep r <= s, some channels unsampled
                s.samples[k] = if extra[k] % 5 == 0 { 0 } else { rewards[k] as u64 + extra[k] };
                s.rewards[k] = if s.samples[k] == 0 { 0.0 } else { r };
            }
            let (list, idx) = s.rank_channels(t);
            let list = list.to_vec();
            prop_assert!(!list.contains(&channel));
            let mut sorted = list.clone();
            sorted.sort();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), list.len());
            for k in 0..6 {
                prop_assert_eq!(list.contains(&k), idx.get(k) > idx.get(channel));
            }
            for w in list.windows(2) {
                prop_assert!(idx.get(w[0]) >= idx.get(w[1]));
            }
            for k in 0..6 {
                prop_assert!(s.rewards[k] <= s.samples[k] as f64);
            }
        }

        #[test]
        fn pointer_is_monotone_until_reset(responses in proptest::collection::vec(any::<bool>(), 1..8)) {
            let mut s = initiator_with(vec![0, 1, 2, 3], 5);
            let mut last = s.pref_ptr;
            for r in responses {
                s.coordinate_swap_step(r, false).unwrap();
                prop_assert!(s.pref_ptr == 0 || s.pref_ptr >= last);
                prop_assert!(s.pref_ptr <= s.pref_list.len() + 1);
                last = s.pref_ptr;
            }
        }
    }

    #[test]
    fn warm_up_single_user_settles_immediately() {
        let mut r = RngStream::for_user(1, Purpose::Cfl, 0);
        let mut s = AgentState::warm_up(0, 5, &mut r);
        s.cfl_step(false, &mut r).unwrap();
        assert!(s.cfl_satisfied);
    }
}
