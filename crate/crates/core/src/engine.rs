//! Slot-by-slot simulation of the full protocol.
//!
//! A run is a warm-up phase of `cfl_length` slots followed by whole
//! super-frames. Arrivals and departures take effect at the first
//! super-frame boundary at or after their scheduled slot.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::agent::{
    default_epsilon, elect_initiator, initiator_flag, newbie_join, respond, AgentState,
    JoinDecision, Phase, SwapAction,
};
use crate::error::{Error, Result};
use crate::metrics::{ratio, system_potential, FrameMetrics, MetricsTrace};
use crate::model::{draw_user_pool, RewardModel};
use crate::oracle::{is_smc, optimal_value_for, Configuration};
use crate::protocol::{resolve_into, super_frame_len, MediumOutcome, TransmissionIntent};
use crate::rng::{Purpose, RngStream};

/// Flag probability: `1/K` or a fixed value in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Epsilon {
    #[default]
    Auto,
    Fixed(f64),
}

impl Epsilon {
    pub fn resolve(self, channels: usize) -> f64 {
        match self {
            Epsilon::Auto => default_epsilon(channels),
            Epsilon::Fixed(e) => e,
        }
    }
}

/// A user joining or leaving at (the boundary following) `slot`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScheduledEvent {
    pub slot: u64,
    pub user: usize,
}

/// `ceil(16 K ln(K + 1))` warm-up slots.
pub fn default_cfl_length(channels: usize) -> u64 {
    (16.0 * channels as f64 * ((channels + 1) as f64).ln()).ceil() as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub channels: usize,
    pub initial_users: usize,
    /// Slots simulated after the warm-up; rounded up to whole super-frames.
    pub horizon: u64,
    pub epsilon: Epsilon,
    pub dynamic: bool,
    pub arrivals: Vec<ScheduledEvent>,
    pub departures: Vec<ScheduledEvent>,
    /// `None` selects [`default_cfl_length`].
    pub cfl_length: Option<u64>,
    pub seed: u64,
    pub repetitions: usize,
}

impl ExperimentConfig {
    pub fn new(channels: usize, initial_users: usize, horizon: u64) -> Self {
        Self {
            channels,
            initial_users,
            horizon,
            epsilon: Epsilon::Auto,
            dynamic: false,
            arrivals: Vec::new(),
            departures: Vec::new(),
            cfl_length: None,
            seed: 0,
            repetitions: 1,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn super_frame_len(&self) -> u64 {
        super_frame_len(self.channels, self.dynamic) as u64
    }

    pub fn cfl_slots(&self) -> u64 {
        self.cfl_length
            .unwrap_or_else(|| default_cfl_length(self.channels))
    }

    pub fn epsilon_value(&self) -> f64 {
        self.epsilon.resolve(self.channels)
    }

    pub fn super_frames(&self) -> u64 {
        self.horizon.div_ceil(self.super_frame_len())
    }

    /// Slots added to reach a whole number of super-frames.
    pub fn padding(&self) -> u64 {
        self.super_frames() * self.super_frame_len() - self.horizon
    }

    /// Size of the user pool the reward model must cover.
    pub fn pool_size(&self) -> usize {
        let max_arrival = self.arrivals.iter().map(|a| a.user + 1).max().unwrap_or(0);
        self.initial_users.max(max_arrival)
    }

    fn boundary_of(&self, slot: u64) -> u64 {
        slot.div_ceil(self.super_frame_len())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfiguration(msg));
        if self.channels == 0 {
            return bad("K must be positive".into());
        }
        if self.initial_users == 0 {
            return bad("N must be positive".into());
        }
        if self.initial_users > self.channels {
            return bad(format!(
                "N = {} exceeds K = {}",
                self.initial_users, self.channels
            ));
        }
        if self.horizon == 0 {
            return bad("T must be positive".into());
        }
        let eps = self.epsilon_value();
        if !(eps > 0.0 && eps <= 1.0) {
            return bad(format!("epsilon {eps} outside (0, 1]"));
        }
        if self.cfl_slots() == 0 {
            return bad("cfl_length must be positive".into());
        }
        if self.repetitions == 0 {
            return bad("repetitions must be positive".into());
        }
        if !self.arrivals.is_empty() && !self.dynamic {
            return bad("arrivals require the dynamic frame layout".into());
        }
        self.validate_schedule()
    }

    fn validate_schedule(&self) -> Result<()> {
        let mut per_boundary: BTreeMap<u64, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
        for a in &self.arrivals {
            if a.user < self.initial_users {
                return Err(Error::InvalidConfiguration(format!(
                    "arriving user {} is an initial user",
                    a.user
                )));
            }
            per_boundary
                .entry(self.boundary_of(a.slot))
                .or_default()
                .0
                .push(a.user);
        }
        for d in &self.departures {
            per_boundary
                .entry(self.boundary_of(d.slot))
                .or_default()
                .1
                .push(d.user);
        }
        let mut present: Vec<bool> = vec![false; self.pool_size()];
        let mut ever: Vec<bool> = vec![false; self.pool_size()];
        for n in 0..self.initial_users {
            present[n] = true;
            ever[n] = true;
        }
        for (boundary, (arrivals, departures)) in &per_boundary {
            for &u in departures {
                if u >= present.len() || !present[u] {
                    return Err(Error::InvalidConfiguration(format!(
                        "user {u} departs at super-frame {boundary} without being present"
                    )));
                }
                present[u] = false;
            }
            if arrivals.len() > 1 {
                return Err(Error::AssumptionViolation(format!(
                    "{} arrivals in super-frame {boundary}; at most one is allowed",
                    arrivals.len()
                )));
            }
            for &u in arrivals {
                if ever[u] {
                    return Err(Error::InvalidConfiguration(format!(
                        "user {u} arrives twice"
                    )));
                }
                present[u] = true;
                ever[u] = true;
            }
            let population = present.iter().filter(|&&p| p).count();
            // One user beyond K may wait for a vacancy; two would contend.
            if population > self.channels + 1 {
                return Err(Error::AssumptionViolation(format!(
                    "{population} users on {} channels at super-frame {boundary}",
                    self.channels
                )));
            }
        }
        Ok(())
    }
}

/// Logged protocol events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceEvent {
    Elected {
        super_frame: u64,
        user: usize,
        channel: usize,
    },
    Swap {
        super_frame: u64,
        initiator: usize,
        responder: usize,
        from: usize,
        to: usize,
    },
    VacancyMove {
        super_frame: u64,
        user: usize,
        from: usize,
        to: usize,
    },
    Arrival {
        super_frame: u64,
        user: usize,
    },
    Join {
        super_frame: u64,
        user: usize,
        channel: usize,
    },
    Wait {
        super_frame: u64,
        user: usize,
    },
    Departure {
        super_frame: u64,
        user: usize,
    },
}

impl TraceEvent {
    pub fn super_frame(&self) -> u64 {
        match *self {
            TraceEvent::Elected { super_frame, .. }
            | TraceEvent::Swap { super_frame, .. }
            | TraceEvent::VacancyMove { super_frame, .. }
            | TraceEvent::Arrival { super_frame, .. }
            | TraceEvent::Join { super_frame, .. }
            | TraceEvent::Wait { super_frame, .. }
            | TraceEvent::Departure { super_frame, .. } => super_frame,
        }
    }
}

/// Slot-level counters for the steady phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SlotStats {
    pub steady_slots: u64,
    /// Collided channel-slots outside probe slots.
    pub unintended_collisions: u64,
    /// Collided channel-slots during probe slots.
    pub probe_collisions: u64,
    /// Probe slots in which the initiator was alone on the probed channel.
    pub probes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub seed: u64,
    pub channels: usize,
    pub dynamic: bool,
    pub epsilon: f64,
    pub model: RewardModel,
    /// Channel per user right after the warm-up (`None` if not yet present).
    pub initial_channels: Vec<Option<usize>>,
    /// Potential of the post-warm-up configuration.
    pub initial_potential: u64,
    /// Channel per user at the end of each super-frame.
    pub channel_history: Vec<Vec<Option<usize>>>,
    pub metrics: MetricsTrace,
    pub events: Vec<TraceEvent>,
    pub stats: SlotStats,
    pub horizon: u64,
    pub padding: u64,
}

impl RunTrace {
    pub fn final_configuration(&self) -> Result<Configuration> {
        let last = self
            .channel_history
            .last()
            .cloned()
            .unwrap_or_else(|| self.initial_channels.clone());
        Configuration::new(self.channels, last)
    }

    pub fn configuration_at(&self, super_frame: usize) -> Result<Configuration> {
        Configuration::new(self.channels, self.channel_history[super_frame].clone())
    }
}

/// Where a run's reward model comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    /// Drawn from the run's own seed.
    Draw,
    Given(RewardModel),
}

/// Runs one experiment with `config.seed`.
pub fn run_experiment(config: &ExperimentConfig, source: &ModelSource) -> Result<RunTrace> {
    config.validate()?;
    let model = match source {
        ModelSource::Draw => draw_user_pool(config.channels, config.pool_size(), config.seed)?,
        ModelSource::Given(m) => m.clone(),
    };
    if model.channels() != config.channels {
        return Err(Error::InvalidConfiguration(format!(
            "model has {} channels, config has {}",
            model.channels(),
            config.channels
        )));
    }
    if model.users() < config.pool_size() {
        return Err(Error::InvalidConfiguration(format!(
            "model covers {} users, schedule needs {}",
            model.users(),
            config.pool_size()
        )));
    }
    Simulation::new(config, model).run()
}

/// Runs `config.repetitions` independent runs with seeds `seed + i`, in
/// parallel over at most `workers` threads (0 = available parallelism).
/// Results are ordered by repetition index.
pub fn run_repetitions(
    config: &ExperimentConfig,
    source: &ModelSource,
    workers: usize,
) -> Result<Vec<RunTrace>> {
    config.validate()?;
    let job = || {
        (0..config.repetitions)
            .into_par_iter()
            .map(|i| {
                let mut cfg = config.clone();
                cfg.seed = config.seed.wrapping_add(i as u64);
                cfg.repetitions = 1;
                run_experiment(&cfg, source)
            })
            .collect::<Result<Vec<_>>>()
    };
    if workers == 0 {
        job()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidConfiguration(format!("thread pool: {e}")))?
            .install(job)
    }
}

struct Simulation<'a> {
    config: &'a ExperimentConfig,
    model: RewardModel,
    epsilon: f64,
    agents: Vec<AgentState>,
    present: Vec<bool>,
    reward_streams: Vec<RngStream>,
    flag_streams: Vec<RngStream>,
    newbie_streams: Vec<RngStream>,
    intents: Vec<TransmissionIntent>,
    outcome: MediumOutcome,
    /// Slots elapsed since the warm-up ended.
    clock: u64,
    cum_reward: f64,
    switches: Vec<u64>,
    stats: SlotStats,
    events: Vec<TraceEvent>,
    optimum_cache: Option<(Vec<usize>, f64)>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum SlotClass {
    Data,
    Probe,
}

impl<'a> Simulation<'a> {
    fn new(config: &'a ExperimentConfig, model: RewardModel) -> Self {
        let pool = model.users();
        let seed = config.seed;
        let streams = |p: Purpose| -> Vec<RngStream> {
            (0..pool).map(|n| RngStream::for_user(seed, p, n)).collect()
        };
        Self {
            config,
            epsilon: config.epsilon_value(),
            agents: (0..pool)
                .map(|n| AgentState::newbie(n, config.channels))
                .collect(),
            present: vec![false; pool],
            reward_streams: streams(Purpose::Reward),
            flag_streams: streams(Purpose::Flag),
            newbie_streams: streams(Purpose::Newbie),
            intents: Vec::with_capacity(pool),
            outcome: MediumOutcome::default(),
            clock: 0,
            cum_reward: 0.0,
            switches: vec![0; pool],
            stats: SlotStats::default(),
            events: Vec::new(),
            optimum_cache: None,
            model,
        }
    }

    fn channels_now(&self) -> Vec<Option<usize>> {
        self.agents
            .iter()
            .zip(&self.present)
            .map(|(a, &p)| if p { a.channel } else { None })
            .collect()
    }

    fn run(mut self) -> Result<RunTrace> {
        self.warm_up()?;
        let initial_channels = self.channels_now();
        let initial_config = Configuration::new(self.config.channels, initial_channels.clone())?;
        let initial_potential = system_potential(&self.model, &initial_config);

        let mut arrivals: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        let mut departures: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for a in &self.config.arrivals {
            arrivals
                .entry(self.config.boundary_of(a.slot))
                .or_default()
                .push(a.user);
        }
        for d in &self.config.departures {
            departures
                .entry(self.config.boundary_of(d.slot))
                .or_default()
                .push(d.user);
        }

        let frames = self.config.super_frames();
        let mut history = Vec::with_capacity(frames as usize);
        let mut metrics = MetricsTrace::default();
        for sf in 0..frames {
            for &u in departures.get(&sf).into_iter().flatten() {
                self.depart(sf, u);
            }
            for &u in arrivals.get(&sf).into_iter().flatten() {
                self.arrive(sf, u);
            }
            self.super_frame(sf)?;
            let row = self.channels_now();
            metrics.frames.push(self.frame_metrics(sf, &row)?);
            history.push(row);
        }

        Ok(RunTrace {
            seed: self.config.seed,
            channels: self.config.channels,
            dynamic: self.config.dynamic,
            epsilon: self.epsilon,
            initial_channels,
            initial_potential,
            channel_history: history,
            metrics,
            events: self.events,
            stats: self.stats,
            horizon: frames * self.config.super_frame_len(),
            padding: self.config.padding(),
            model: self.model,
        })
    }

    fn warm_up(&mut self) -> Result<()> {
        let channels = self.config.channels;
        let mut cfl_streams: Vec<RngStream> = (0..self.config.initial_users)
            .map(|n| RngStream::for_user(self.config.seed, Purpose::Cfl, n))
            .collect();
        for (n, rng) in cfl_streams.iter_mut().enumerate() {
            self.agents[n] = AgentState::warm_up(n, channels, rng);
            self.present[n] = true;
        }
        for _ in 0..self.config.cfl_slots() {
            self.intents.clear();
            self.intents.extend(
                self.agents[..self.config.initial_users]
                    .iter()
                    .map(|a| TransmissionIntent::signal(a.user, a.channel.unwrap_or(0))),
            );
            resolve_into(
                &self.model,
                &self.intents,
                &mut self.reward_streams,
                &mut self.outcome,
            )?;
            for (n, rng) in cfl_streams.iter_mut().enumerate() {
                let collided = self.outcome.feedback[n].is_some_and(|f| f.collided);
                self.agents[n].cfl_step(collided, rng)?;
            }
        }
        for agent in &mut self.agents[..self.config.initial_users] {
            agent.finish_warm_up();
        }
        let mut taken = vec![false; channels];
        for a in &self.agents[..self.config.initial_users] {
            let k = a.channel.unwrap_or(0);
            if std::mem::replace(&mut taken[k], true) {
                return Err(Error::AssumptionViolation(format!(
                    "warm-up of {} slots ended without an orthogonal configuration",
                    self.config.cfl_slots()
                )));
            }
        }
        Ok(())
    }

    fn depart(&mut self, sf: u64, user: usize) {
        self.present[user] = false;
        self.agents[user].channel = None;
        self.events.push(TraceEvent::Departure {
            super_frame: sf,
            user,
        });
    }

    fn arrive(&mut self, sf: u64, user: usize) {
        self.present[user] = true;
        self.agents[user] = AgentState::newbie(user, self.config.channels);
        self.events.push(TraceEvent::Arrival {
            super_frame: sf,
            user,
        });
    }

    fn is_settled(&self, n: usize) -> bool {
        self.present[n] && self.agents[n].phase == Phase::Steady
    }

    /// Resolves one slot, applies learning and bookkeeping.
    fn slot(&mut self, class: SlotClass) -> Result<()> {
        resolve_into(
            &self.model,
            &self.intents,
            &mut self.reward_streams,
            &mut self.outcome,
        )?;
        self.clock += 1;
        self.stats.steady_slots += 1;
        let collisions = self.outcome.collisions() as u64;
        match class {
            SlotClass::Data => self.stats.unintended_collisions += collisions,
            SlotClass::Probe => self.stats.probe_collisions += collisions,
        }
        for n in 0..self.agents.len() {
            let Some(fb) = self.outcome.feedback[n] else {
                continue;
            };
            self.cum_reward += fb.reward;
            if fb.counts_as_sample && !fb.collided && self.agents[n].channel == Some(fb.channel) {
                self.agents[n].transmit_and_learn(fb.reward)?;
            }
        }
        Ok(())
    }

    /// Every settled user except those in `skip` transmits on her channel.
    fn all_learn(&mut self, skip: &[usize]) {
        self.intents.clear();
        for n in 0..self.agents.len() {
            if self.is_settled(n) && !skip.contains(&n) {
                if let Some(k) = self.agents[n].channel {
                    self.intents.push(TransmissionIntent::learn(n, k));
                }
            }
        }
    }

    fn super_frame(&mut self, sf: u64) -> Result<()> {
        let channels = self.config.channels;
        let pool = self.agents.len();
        let t = self.clock.max(1);

        // Users that were settled at the boundary take part in the election.
        let veterans: Vec<usize> = (0..pool).filter(|&n| self.is_settled(n)).collect();
        for &n in &veterans {
            self.agents[n].rank_channels(t);
        }

        // S1: availability snapshot.
        self.all_learn(&[]);
        self.slot(SlotClass::Data)?;
        let mut busy = self.outcome.sensing.clone();

        // Sa: at most one newbie announces her channel.
        if self.config.dynamic {
            let waiting: Vec<usize> = (0..pool)
                .filter(|&n| self.present[n] && self.agents[n].phase == Phase::NewbieWait)
                .collect();
            if waiting.len() > 1 {
                return Err(Error::AssumptionViolation(format!(
                    "{} newbies contend in super-frame {sf}",
                    waiting.len()
                )));
            }
            self.intents.clear();
            if let Some(&u) = waiting.first() {
                match newbie_join(&busy, &mut self.newbie_streams[u]) {
                    JoinDecision::Join(k) => {
                        self.agents[u].join(k);
                        self.intents.push(TransmissionIntent::learn(u, k));
                        self.events.push(TraceEvent::Join {
                            super_frame: sf,
                            user: u,
                            channel: k,
                        });
                    }
                    JoinDecision::Wait => self.events.push(TraceEvent::Wait {
                        super_frame: sf,
                        user: u,
                    }),
                }
            }
            self.slot(SlotClass::Data)?;
            for (b, &s) in busy.iter_mut().zip(&self.outcome.sensing) {
                *b |= s;
            }
        }

        // S2: flags.
        let mut flags = vec![false; pool];
        self.intents.clear();
        for &n in &veterans {
            let agent = &self.agents[n];
            if initiator_flag(&agent.pref_list, self.epsilon, &mut self.flag_streams[n]) {
                flags[n] = true;
                if let Some(k) = agent.channel {
                    self.intents.push(TransmissionIntent::learn(n, k));
                }
            }
        }
        self.slot(SlotClass::Data)?;
        let initiator = elect_initiator(&flags);

        let Some(init) = initiator else {
            for _ in 1..channels {
                self.all_learn(&[]);
                self.slot(SlotClass::Data)?;
                self.all_learn(&[]);
                self.slot(SlotClass::Data)?;
            }
            return Ok(());
        };

        let init_channel = self.agents[init]
            .channel
            .ok_or_else(|| Error::ProtocolViolation("initiator without a channel".into()))?;
        self.agents[init].set_initiator(true);
        self.events.push(TraceEvent::Elected {
            super_frame: sf,
            user: init,
            channel: init_channel,
        });

        for _ in 1..channels {
            let target = self.agents[init].current_target();
            match target {
                Some(k) if !busy[k] => {
                    // Vacant: move without a handshake.
                    self.intents.clear();
                    self.slot(SlotClass::Probe)?;
                    let action = self.agents[init].coordinate_swap_step(false, true)?;
                    self.record_move(sf, init, None, action);
                    self.all_learn(&[]);
                    self.slot(SlotClass::Data)?;
                }
                Some(k) => {
                    // S3: probe; everyone else senses.
                    self.intents.clear();
                    self.intents.push(TransmissionIntent::signal(init, k));
                    self.slot(SlotClass::Probe)?;
                    if self.outcome.occupancy[k] == 1 {
                        self.stats.probes += 1;
                    }
                    let responder = (0..pool).find(|&n| {
                        n != init && self.present[n] && self.agents[n].channel == Some(k)
                    });
                    // S4: responder answers by transmitting on her own channel.
                    let accept =
                        responder.is_some_and(|r| respond(self.agents[r].index(), k, init_channel));
                    let skip: Vec<usize> = std::iter::once(init).chain(responder).collect();
                    self.all_learn(&skip);
                    if let (Some(r), true) = (responder, accept) {
                        self.intents.push(TransmissionIntent::learn(r, k));
                    }
                    self.slot(SlotClass::Data)?;
                    let sensed = self.outcome.sensing[k];
                    let action = self.agents[init].coordinate_swap_step(sensed, false)?;
                    if let SwapAction::Moved { .. } = action {
                        let r = responder.ok_or_else(|| {
                            Error::ProtocolViolation("swap without a responder".into())
                        })?;
                        self.agents[r].accept_swap(init_channel);
                        self.record_move(sf, init, Some(r), action);
                    }
                }
                None => {
                    // Handshake finished: S3 stays silent, S4 is a data slot.
                    self.intents.clear();
                    self.slot(SlotClass::Probe)?;
                    self.all_learn(&[]);
                    self.slot(SlotClass::Data)?;
                }
            }
        }
        self.agents[init].set_initiator(false);
        Ok(())
    }

    fn record_move(&mut self, sf: u64, init: usize, responder: Option<usize>, action: SwapAction) {
        let SwapAction::Moved { from, to, .. } = action else {
            return;
        };
        self.switches[init] += 1;
        match responder {
            Some(r) => {
                self.switches[r] += 1;
                self.events.push(TraceEvent::Swap {
                    super_frame: sf,
                    initiator: init,
                    responder: r,
                    from,
                    to,
                });
            }
            None => self.events.push(TraceEvent::VacancyMove {
                super_frame: sf,
                user: init,
                from,
                to,
            }),
        }
    }

    fn frame_metrics(&mut self, sf: u64, row: &[Option<usize>]) -> Result<FrameMetrics> {
        let config = Configuration::new(self.config.channels, row.to_vec())?;
        let live: Vec<usize> = config.assigned().map(|(n, _)| n).collect();
        let optimum = match &self.optimum_cache {
            Some((users, value)) if *users == live => *value,
            _ => {
                let value = optimal_value_for(&self.model, &live)?;
                self.optimum_cache = Some((live.clone(), value));
                value
            }
        };
        Ok(FrameMetrics {
            super_frame: sf,
            potential: system_potential(&self.model, &config),
            in_smc: is_smc(&config, &self.model)?,
            cum_reward: self.cum_reward,
            norm_reward: ratio(config.expected_reward(&self.model), optimum),
            switches: self.switches.clone(),
            live_users: live.len(),
        })
    }
}
