//! Super-frame calendar and shared-medium resolution.
//!
//! Static layout (`2K` slots): `S1 S2 (S3 S4) x (K-1)`.
//! Dynamic layout (`2K + 1` slots): `S1 Sa S2 (S3 S4) x (K-1)`.

use crate::error::{Error, Result};
use crate::model::{sample_reward, RewardModel};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SlotKind {
    /// Availability snapshot: every settled user transmits on her channel.
    S1,
    /// Newbie announcement (dynamic layout only).
    Sa,
    /// Initiator flagging.
    S2,
    /// Initiator probe.
    S3,
    /// Responder answer.
    S4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SlotRole {
    pub kind: SlotKind,
    /// Coordination mini-frame `m` in `1..=K-1`, only for `S3`/`S4`.
    pub mini_frame: Option<usize>,
}

impl SlotRole {
    fn header(kind: SlotKind) -> Self {
        Self {
            kind,
            mini_frame: None,
        }
    }
}

pub fn super_frame_len(channels: usize, dynamic: bool) -> usize {
    2 * channels + usize::from(dynamic)
}

fn header_len(dynamic: bool) -> usize {
    if dynamic {
        3
    } else {
        2
    }
}

/// Role of absolute slot `t`, counted from the end of the warm-up phase.
pub fn slot_kind(t: u64, channels: usize, dynamic: bool) -> SlotRole {
    let period = super_frame_len(channels, dynamic) as u64;
    let offset = (t % period) as usize;
    let header = header_len(dynamic);
    match (offset, dynamic) {
        (0, _) => SlotRole::header(SlotKind::S1),
        (1, false) => SlotRole::header(SlotKind::S2),
        (1, true) => SlotRole::header(SlotKind::Sa),
        (2, true) => SlotRole::header(SlotKind::S2),
        _ => {
            let rel = offset - header;
            SlotRole {
                kind: if rel.is_multiple_of(2) {
                    SlotKind::S3
                } else {
                    SlotKind::S4
                },
                mini_frame: Some(rel / 2 + 1),
            }
        }
    }
}

/// One user's action in a slot: transmit on `channel`, or stay silent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransmissionIntent {
    pub user: usize,
    pub channel: Option<usize>,
    /// Whether a reward from this transmission updates learning statistics.
    pub counts_as_sample: bool,
}

impl TransmissionIntent {
    pub fn learn(user: usize, channel: usize) -> Self {
        Self {
            user,
            channel: Some(channel),
            counts_as_sample: true,
        }
    }

    pub fn signal(user: usize, channel: usize) -> Self {
        Self {
            user,
            channel: Some(channel),
            counts_as_sample: false,
        }
    }

    pub fn silent(user: usize) -> Self {
        Self {
            user,
            channel: None,
            counts_as_sample: false,
        }
    }
}

/// What a transmitting user observes about her own transmission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feedback {
    pub channel: usize,
    pub reward: f64,
    pub collided: bool,
    pub counts_as_sample: bool,
}

/// Resolution of one slot.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MediumOutcome {
    pub occupancy: Vec<u32>,
    pub sensing: Vec<bool>,
    /// Indexed by user id; `None` for users that did not transmit.
    pub feedback: Vec<Option<Feedback>>,
}

impl MediumOutcome {
    pub fn reward(&self, user: usize) -> Option<f64> {
        self.feedback.get(user).copied().flatten().map(|f| f.reward)
    }

    pub fn collisions(&self) -> usize {
        self.occupancy.iter().filter(|&&c| c >= 2).count()
    }
}

/// Resolves one slot on the shared medium.
///
/// `reward_streams` holds one stream per user id. A lone transmitter draws a
/// Bernoulli reward from her stream; colliding users all receive 0.
pub fn resolve_slot(
    model: &RewardModel,
    intents: &[TransmissionIntent],
    reward_streams: &mut [RngStream],
) -> Result<MediumOutcome> {
    let mut out = MediumOutcome::default();
    resolve_into(model, intents, reward_streams, &mut out)?;
    Ok(out)
}

/// Allocation-free variant of [`resolve_slot`] that reuses `out`.
pub fn resolve_into(
    model: &RewardModel,
    intents: &[TransmissionIntent],
    reward_streams: &mut [RngStream],
    out: &mut MediumOutcome,
) -> Result<()> {
    let channels = model.channels();
    out.occupancy.clear();
    out.occupancy.resize(channels, 0);
    out.sensing.clear();
    out.sensing.resize(channels, false);
    out.feedback.clear();
    out.feedback.resize(model.users(), None);

    let mut seen = vec![false; model.users()];
    for intent in intents {
        if intent.user >= model.users() {
            return Err(Error::Index {
                what: "user",
                index: intent.user,
                limit: model.users(),
            });
        }
        if std::mem::replace(&mut seen[intent.user], true) {
            return Err(Error::ProtocolViolation(format!(
                "user {} appears twice in one slot",
                intent.user
            )));
        }
        if let Some(k) = intent.channel {
            if k >= channels {
                return Err(Error::Index {
                    what: "channel",
                    index: k,
                    limit: channels,
                });
            }
            out.occupancy[k] += 1;
        }
    }
    for (bit, &count) in out.sensing.iter_mut().zip(&out.occupancy) {
        *bit = count >= 1;
    }
    for intent in intents {
        let Some(k) = intent.channel else { continue };
        let collided = out.occupancy[k] >= 2;
        let reward = if collided {
            0.0
        } else {
            let limit = reward_streams.len();
            let stream = reward_streams.get_mut(intent.user).ok_or(Error::Index {
                what: "reward stream",
                index: intent.user,
                limit,
            })?;
            sample_reward(model, intent.user, k, stream)?
        };
        out.feedback[intent.user] = Some(Feedback {
            channel: k,
            reward,
            collided,
            counts_as_sample: intent.counts_as_sample,
        });
    }
    Ok(())
}
