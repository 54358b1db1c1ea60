//! Deterministic macro-step scheduler and fault-injecting coupling channel.
//!
//! Two plants exchange sampled signals at a fixed macro step. Every scalar
//! signal passes through a history buffer (which injects the constant
//! transport delay), a compensator, and a reconstruction stage before the
//! receiving plant integrates across the interval.
//!
//! Exchange ordering within a boundary is Jacobi-style: all outputs are
//! sampled at the boundary, all inputs delivered, then both plants advance
//! in parallel. A plant with direct feedthrough samples its output against
//! the input just delivered at the same boundary (the right-limit of its
//! reconstructed input), which keeps the channel round trip at exactly
//! `2k` macro steps for pass-through compensators.

use std::collections::VecDeque;

use crate::compensator::trainer::{TrainJob, TrainerWorker};
use crate::compensator::{Compensator, TrainerConfig};
use crate::error::{CoreError, Result};
use crate::plants::StopEvent;

/// Input reconstruction between macro samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reconstruction {
    /// Hold the newest compensated value across the interval.
    Zoh,
    /// Ramp between the two most recent compensated values.
    Foh,
}

/// Compensator selection for a scenario.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CompensatorKind {
    /// Trivial ZOH compensation: deliver the delayed sample unchanged.
    None,
    /// Slope continuation over the delay horizon.
    Foh,
    /// Linear autoregressive extrapolator.
    LinearAr,
    /// Feedforward network.
    Network,
}

/// Everything that fixes one co-simulation experiment.
#[derive(Clone, Debug)]
pub struct CouplingScenario {
    /// Communication interval, seconds.
    pub macro_step: f64,
    /// Transport delay per direction in macro steps; tau = k * macro_step.
    pub delay_steps: usize,
    /// Window length `p` seen by the compensators.
    pub history_len: usize,
    pub reconstruction: Reconstruction,
    pub compensator: CompensatorKind,
    pub duration: f64,
    pub online_training: bool,
}

impl CouplingScenario {
    pub fn validate(&self) -> Result<()> {
        if self.macro_step <= 0.0 || !self.macro_step.is_finite() {
            return Err(CoreError::InvalidScenario(
                "macro_step must be positive".into(),
            ));
        }
        if self.history_len == 0 {
            return Err(CoreError::InvalidScenario(
                "history_len must be at least 1".into(),
            ));
        }
        if self.duration.is_nan() || self.duration < self.macro_step {
            return Err(CoreError::InvalidScenario(
                "duration must cover at least one macro step".into(),
            ));
        }
        Ok(())
    }

    /// tau = k * macro_step, exactly an integer multiple.
    pub fn delay_time(&self) -> f64 {
        self.delay_steps as f64 * self.macro_step
    }

    pub fn step_count(&self) -> usize {
        (self.duration / self.macro_step).round() as usize
    }
}

/// Ring buffer of macro-step samples for one scalar signal. Values are
/// written once per macro step in index order; reads before the start of
/// the simulation yield the declared initial output.
#[derive(Clone, Debug)]
pub struct SignalHistory {
    buf: Vec<f64>,
    capacity: usize,
    written: usize,
    initial: f64,
}

impl SignalHistory {
    pub fn new(capacity: usize, initial: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(CoreError::HistoryCapacity {
                capacity,
                delay_steps: 0,
                history_len: 0,
            });
        }
        Ok(Self {
            buf: vec![0.0; capacity],
            capacity,
            written: 0,
            initial,
        })
    }

    /// Capacity sized so that `delayed_read(now, k, p)` can never fail at
    /// runtime once a sample has been written for `now`.
    pub fn for_channel(delay_steps: usize, history_len: usize, initial: f64) -> Self {
        let capacity = (delay_steps + history_len).max(1);
        Self {
            buf: vec![0.0; capacity],
            capacity,
            written: 0,
            initial,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of samples written; the next push gets this macro index.
    pub fn written(&self) -> usize {
        self.written
    }

    pub fn push(&mut self, value: f64) {
        self.buf[self.written % self.capacity] = value;
        self.written += 1;
    }

    /// Value written at macro index `index`; the declared initial output
    /// for negative indices.
    pub fn get(&self, index: i64) -> Result<f64> {
        if index < 0 {
            return Ok(self.initial);
        }
        let idx = index as usize;
        if idx >= self.written || idx + self.capacity < self.written {
            return Err(CoreError::HistoryIndex {
                index,
                written: self.written as i64,
            });
        }
        Ok(self.buf[idx % self.capacity])
    }
}

/// Delayed window `[u_{now-k}, u_{now-k-1}, ..., u_{now-k-(p-1)}]`,
/// newest-first, with pre-start entries filled by the initial output.
pub fn delayed_read(
    history: &SignalHistory,
    now: usize,
    delay_steps: usize,
    count: usize,
) -> Result<Vec<f64>> {
    let mut window = Vec::with_capacity(count);
    for i in 0..count {
        let index = now as i64 - delay_steps as i64 - i as i64;
        window.push(history.get(index)?);
    }
    Ok(window)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    AToB,
    BToA,
}

/// Per-signal record of what was sent, what arrived delayed, and what the
/// compensator delivered.
#[derive(Clone, Debug)]
pub struct ChannelTrace {
    pub name: String,
    pub direction: Direction,
    pub sent: Vec<f64>,
    pub delayed: Vec<f64>,
    pub compensated: Vec<f64>,
}

/// Plant state series, row-major over macro boundaries.
#[derive(Clone, Debug)]
pub struct StateSeries {
    pub labels: Vec<String>,
    pub dim: usize,
    values: Vec<f64>,
}

impl StateSeries {
    fn new(labels: Vec<String>) -> Self {
        let dim = labels.len();
        Self {
            labels,
            dim,
            values: Vec::new(),
        }
    }

    fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.dim);
        self.values.extend_from_slice(row);
    }

    pub fn len(&self) -> usize {
        self.values.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn component(&self, label: &str) -> Option<Vec<f64>> {
        let idx = self.labels.iter().position(|l| l == label)?;
        Some((0..self.len()).map(|r| self.row(r)[idx]).collect())
    }
}

/// One applied online-training cycle.
#[derive(Clone, Debug)]
pub struct TrainingCycleLog {
    pub channel: String,
    pub cycle: u64,
    pub trigger_step: usize,
    pub apply_step: usize,
    pub sample_count: usize,
    pub cost_before: f64,
    pub cost_after: f64,
    pub accepted: bool,
}

/// Everything recorded during one co-simulation run. All channel series
/// share the macro-step time base.
#[derive(Clone, Debug)]
pub struct SimulationTrace {
    pub macro_step: f64,
    /// Boundary times for the channel series.
    pub channel_times: Vec<f64>,
    pub channels: Vec<ChannelTrace>,
    /// Times for the plant state rows (one more entry than channel series
    /// on a completed run).
    pub state_times: Vec<f64>,
    pub plant_a: StateSeries,
    pub plant_b: StateSeries,
    pub events: Vec<StopEvent>,
    pub training: Vec<TrainingCycleLog>,
    /// Compensator state at the end of the run; after online training
    /// these carry the final network weights, exportable for reuse.
    pub compensators: CompensatorSet,
    /// Simulated time at which a non-finite state or signal value appeared.
    /// A diverged run is a legitimate experimental outcome, not a crash.
    pub diverged: Option<f64>,
}

impl SimulationTrace {
    pub fn channel(&self, name: &str) -> Option<&ChannelTrace> {
        self.channels.iter().find(|c| c.name == name)
    }
}

/// Ratio of the peak magnitude in the last window to the first window;
/// below 1 the oscillation decays, above 1 it grows.
pub fn amplitude_ratio(values: &[f64], window_fraction: f64) -> f64 {
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    let w = ((n as f64 * window_fraction).round() as usize).clamp(1, n);
    let peak = |slice: &[f64]| slice.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let first = peak(&values[..w]);
    let last = peak(&values[n - w..]);
    last / first
}

/// A subsystem participating in the coupled simulation.
pub trait Plant {
    fn input_count(&self) -> usize;
    fn output_count(&self) -> usize;
    fn output_names(&self) -> Vec<String>;
    fn state_labels(&self) -> Vec<String>;
    /// Output values the channel delivers before any sample exists.
    fn initial_outputs(&self) -> Vec<f64>;
    /// Whether outputs depend directly on the current inputs.
    fn direct_feedthrough(&self) -> bool;
    /// Sample outputs at a macro boundary. `inputs_now` is the applied
    /// input value at this instant (right-limit under ZOH reconstruction).
    fn sample_outputs(&self, inputs_now: &[f64], out: &mut [f64]);
    /// Integrate one macro step with inputs ramping linearly from
    /// `input_start` to `input_end` (equal values give a hold).
    fn advance(&mut self, input_start: &[f64], input_end: &[f64], dt: f64);
    fn state(&self) -> Vec<f64>;
    fn take_events(&mut self) -> Vec<StopEvent> {
        Vec::new()
    }
}

/// Compensator instances, one per coupling input of each direction.
#[derive(Clone, Debug)]
pub struct CompensatorSet {
    pub a_to_b: Vec<Compensator>,
    pub b_to_a: Vec<Compensator>,
}

#[derive(Default)]
pub struct CosimOptions {
    pub seed: u64,
    pub trainer: Option<TrainerConfig>,
}

struct Channel {
    name: String,
    direction: Direction,
    history: SignalHistory,
    comp: Compensator,
    sent: Vec<f64>,
    delayed: Vec<f64>,
    compensated: Vec<f64>,
    trained: bool,
    cycles: u64,
}

struct PendingApply {
    channel: usize,
    cycle: u64,
    trigger_step: usize,
    apply_step: usize,
}

fn mix_seed(seed: u64, channel: usize, cycle: u64) -> u64 {
    let mut x = seed ^ (channel as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ cycle;
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn make_channels(
    names: Vec<String>,
    direction: Direction,
    comps: Vec<Compensator>,
    initials: &[f64],
    scenario: &CouplingScenario,
    training_active: bool,
) -> Result<Vec<Channel>> {
    let mut channels = Vec::with_capacity(comps.len());
    for (i, comp) in comps.into_iter().enumerate() {
        if let Some(len) = comp.window_len() {
            if len != scenario.history_len {
                return Err(CoreError::WiringMismatch(format!(
                    "compensator on '{}' expects window {len}, scenario history_len is {}",
                    names[i], scenario.history_len
                )));
            }
        }
        let trained = training_active && comp.network().is_some();
        channels.push(Channel {
            name: names[i].clone(),
            direction,
            history: SignalHistory::for_channel(
                scenario.delay_steps,
                scenario.history_len,
                initials[i],
            ),
            comp,
            sent: Vec::new(),
            delayed: Vec::new(),
            compensated: Vec::new(),
            trained,
            cycles: 0,
        });
    }
    Ok(channels)
}

fn deliver(
    channels: &mut [Channel],
    now: usize,
    k: usize,
    p: usize,
    out: &mut Vec<f64>,
) -> Result<()> {
    out.clear();
    for ch in channels.iter_mut() {
        let window = delayed_read(&ch.history, now, k, p)?;
        let value = ch.comp.predict(&window);
        ch.delayed.push(window[0]);
        ch.compensated.push(value);
        out.push(value);
    }
    Ok(())
}

fn push_samples(channels: &mut [Channel], values: &[f64]) {
    for (ch, &v) in channels.iter_mut().zip(values) {
        ch.history.push(v);
        ch.sent.push(v);
    }
}

fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

/// Runs one coupled experiment: at every macro step each output is sampled
/// and enqueued, becomes visible to the other side `delay_steps` later,
/// passes through its compensator, and drives the receiving plant through
/// the configured reconstruction. Before delayed values exist the channel
/// yields the sending plant's declared initial output.
pub fn run_cosim(
    scenario: &CouplingScenario,
    plant_a: &mut dyn Plant,
    plant_b: &mut dyn Plant,
    comps: CompensatorSet,
    opts: CosimOptions,
) -> Result<SimulationTrace> {
    scenario.validate()?;
    let k = scenario.delay_steps;
    let p = scenario.history_len;
    let dt = scenario.macro_step;

    if plant_a.output_count() != plant_b.input_count() {
        return Err(CoreError::WiringMismatch(format!(
            "plant A sends {} signals but plant B accepts {}",
            plant_a.output_count(),
            plant_b.input_count()
        )));
    }
    if plant_b.output_count() != plant_a.input_count() {
        return Err(CoreError::WiringMismatch(format!(
            "plant B sends {} signals but plant A accepts {}",
            plant_b.output_count(),
            plant_a.input_count()
        )));
    }
    if comps.a_to_b.len() != plant_b.input_count() || comps.b_to_a.len() != plant_a.input_count() {
        return Err(CoreError::WiringMismatch(
            "one compensator per coupling input required".into(),
        ));
    }
    if k == 0 && plant_a.direct_feedthrough() {
        return Err(CoreError::WiringMismatch(
            "undelayed exchange needs the feedthrough-free plant in the A slot".into(),
        ));
    }

    let trainer_cfg = if scenario.online_training {
        let cfg = opts.trainer.clone().ok_or_else(|| {
            CoreError::InvalidScenario("online_training enabled without a trainer config".into())
        })?;
        cfg.validate(p, k)?;
        Some(cfg)
    } else {
        None
    };

    let mut ch_a_to_b = make_channels(
        plant_a.output_names(),
        Direction::AToB,
        comps.a_to_b,
        &plant_a.initial_outputs(),
        scenario,
        trainer_cfg.is_some(),
    )?;
    let mut ch_b_to_a = make_channels(
        plant_b.output_names(),
        Direction::BToA,
        comps.b_to_a,
        &plant_b.initial_outputs(),
        scenario,
        trainer_cfg.is_some(),
    )?;

    let any_training =
        ch_a_to_b.iter().chain(ch_b_to_a.iter()).any(|c| c.trained) && trainer_cfg.is_some();
    let worker = if any_training {
        Some(TrainerWorker::spawn())
    } else {
        None
    };
    let mut pending: VecDeque<PendingApply> = VecDeque::new();
    let mut training_log: Vec<TrainingCycleLog> = Vec::new();

    let steps = scenario.step_count();
    let mut trace_state_a = StateSeries::new(plant_a.state_labels());
    let mut trace_state_b = StateSeries::new(plant_b.state_labels());
    let mut state_times = Vec::with_capacity(steps + 1);
    let mut channel_times = Vec::with_capacity(steps);
    let mut events: Vec<StopEvent> = Vec::new();
    let mut diverged = None;

    // applied input right before t = 0: the peer's declared initial output
    let mut applied_a = plant_b.initial_outputs();
    let mut applied_b = plant_a.initial_outputs();
    let mut y_a = vec![0.0; plant_a.output_count()];
    let mut y_b = vec![0.0; plant_b.output_count()];
    let mut next_a = vec![0.0; plant_a.input_count()];
    let mut next_b = vec![0.0; plant_b.input_count()];

    for n in 0..steps {
        let t = n as f64 * dt;

        // weight hand-off happens atomically at the boundary, before any
        // prediction uses the network
        if let (Some(worker), Some(cfg)) = (&worker, &trainer_cfg) {
            if cfg.deterministic {
                while pending.front().map(|p| p.apply_step) == Some(n) {
                    let due = pending.pop_front().unwrap();
                    let result = worker.wait_result().ok_or_else(|| {
                        CoreError::InvalidScenario("trainer worker terminated early".into())
                    })?;
                    debug_assert_eq!(result.channel_index, due.channel);
                    debug_assert_eq!(result.cycle, due.cycle);
                    let ch = channel_mut(&mut ch_a_to_b, &mut ch_b_to_a, due.channel);
                    if result.outcome.accepted {
                        if let Some(net) = ch.comp.network_mut() {
                            *net = result.outcome.net.clone();
                        }
                    }
                    training_log.push(TrainingCycleLog {
                        channel: ch.name.clone(),
                        cycle: due.cycle,
                        trigger_step: due.trigger_step,
                        apply_step: n,
                        sample_count: result.sample_count,
                        cost_before: result.outcome.cost_before,
                        cost_after: result.outcome.cost_after,
                        accepted: result.outcome.accepted,
                    });
                }
            } else {
                while let Some(result) = worker.try_result() {
                    let idx = pending
                        .iter()
                        .position(|p| p.channel == result.channel_index && p.cycle == result.cycle);
                    let trigger_step = idx
                        .map(|i| {
                            let p = pending.remove(i).unwrap();
                            p.trigger_step
                        })
                        .unwrap_or(0);
                    let ch = channel_mut(&mut ch_a_to_b, &mut ch_b_to_a, result.channel_index);
                    if result.outcome.accepted {
                        if let Some(net) = ch.comp.network_mut() {
                            *net = result.outcome.net.clone();
                        }
                    }
                    training_log.push(TrainingCycleLog {
                        channel: ch.name.clone(),
                        cycle: result.cycle,
                        trigger_step,
                        apply_step: n,
                        sample_count: result.sample_count,
                        cost_before: result.outcome.cost_before,
                        cost_after: result.outcome.cost_after,
                        accepted: result.outcome.accepted,
                    });
                }
            }
        }

        // boundary exchange; with feedthrough present the dependency-free
        // plant goes first so its fresh sample can feed through at k = 0
        if k == 0 {
            plant_a.sample_outputs(&applied_a, &mut y_a);
            push_samples(&mut ch_a_to_b, &y_a);
            deliver(&mut ch_a_to_b, n, k, p, &mut next_b)?;
            let feed_b = feedthrough_inputs(scenario.reconstruction, &next_b, &applied_b);
            plant_b.sample_outputs(feed_b, &mut y_b);
            push_samples(&mut ch_b_to_a, &y_b);
            deliver(&mut ch_b_to_a, n, k, p, &mut next_a)?;
        } else {
            deliver(&mut ch_a_to_b, n, k, p, &mut next_b)?;
            deliver(&mut ch_b_to_a, n, k, p, &mut next_a)?;
            let feed_a = feedthrough_inputs(scenario.reconstruction, &next_a, &applied_a);
            plant_a.sample_outputs(feed_a, &mut y_a);
            push_samples(&mut ch_a_to_b, &y_a);
            let feed_b = feedthrough_inputs(scenario.reconstruction, &next_b, &applied_b);
            plant_b.sample_outputs(feed_b, &mut y_b);
            push_samples(&mut ch_b_to_a, &y_b);
        }
        channel_times.push(t);

        // training triggers count newly sent samples
        if let (Some(worker), Some(cfg)) = (&worker, &trainer_cfg) {
            let sent_count = n + 1;
            if sent_count % cfg.trigger_every == 0 {
                for (global_idx, ch) in ch_a_to_b.iter_mut().chain(ch_b_to_a.iter_mut()).enumerate()
                {
                    if !ch.trained {
                        continue;
                    }
                    let net = match ch.comp.network() {
                        Some(net) => net.clone(),
                        None => continue,
                    };
                    ch.cycles += 1;
                    let start = ch.sent.len().saturating_sub(cfg.max_samples);
                    worker.submit(TrainJob {
                        channel_index: global_idx,
                        cycle: ch.cycles,
                        snapshot: ch.sent[start..].to_vec(),
                        net,
                        config: cfg.clone(),
                        delay_steps: k,
                        seed: mix_seed(opts.seed, global_idx, ch.cycles),
                    });
                    pending.push_back(PendingApply {
                        channel: global_idx,
                        cycle: ch.cycles,
                        trigger_step: n,
                        apply_step: n + cfg.apply_delay_steps,
                    });
                }
            }
        }

        // state at t_n, before advancing
        state_times.push(t);
        trace_state_a.push_row(&plant_a.state());
        trace_state_b.push_row(&plant_b.state());

        let (start_a, start_b) = match scenario.reconstruction {
            Reconstruction::Zoh => (next_a.clone(), next_b.clone()),
            Reconstruction::Foh => (applied_a.clone(), applied_b.clone()),
        };
        plant_a.advance(&start_a, &next_a, dt);
        plant_b.advance(&start_b, &next_b, dt);
        std::mem::swap(&mut applied_a, &mut next_a);
        std::mem::swap(&mut applied_b, &mut next_b);

        // plants stamp events with absolute times
        events.extend(plant_a.take_events());
        events.extend(plant_b.take_events());

        let state_a = plant_a.state();
        let state_b = plant_b.state();
        if !(all_finite(&state_a)
            && all_finite(&state_b)
            && all_finite(&applied_a)
            && all_finite(&applied_b))
        {
            diverged = Some(t + dt);
            state_times.push(t + dt);
            trace_state_a.push_row(&state_a);
            trace_state_b.push_row(&state_b);
            break;
        }
    }

    if diverged.is_none() {
        state_times.push(steps as f64 * dt);
        trace_state_a.push_row(&plant_a.state());
        trace_state_b.push_row(&plant_b.state());
    }

    let mut channels = Vec::with_capacity(ch_a_to_b.len() + ch_b_to_a.len());
    let mut final_a_to_b = Vec::with_capacity(ch_a_to_b.len());
    let mut final_b_to_a = Vec::with_capacity(ch_b_to_a.len());
    for ch in ch_a_to_b {
        final_a_to_b.push(ch.comp);
        channels.push(ChannelTrace {
            name: ch.name,
            direction: ch.direction,
            sent: ch.sent,
            delayed: ch.delayed,
            compensated: ch.compensated,
        });
    }
    for ch in ch_b_to_a {
        final_b_to_a.push(ch.comp);
        channels.push(ChannelTrace {
            name: ch.name,
            direction: ch.direction,
            sent: ch.sent,
            delayed: ch.delayed,
            compensated: ch.compensated,
        });
    }

    Ok(SimulationTrace {
        macro_step: dt,
        channel_times,
        channels,
        state_times,
        plant_a: trace_state_a,
        plant_b: trace_state_b,
        events,
        training: training_log,
        compensators: CompensatorSet {
            a_to_b: final_a_to_b,
            b_to_a: final_b_to_a,
        },
        diverged,
    })
}

/// Right-limit input used for feedthrough sampling at a boundary: the fresh
/// delivery under ZOH, the ramp start (previous value) under FOH.
fn feedthrough_inputs<'a>(
    recon: Reconstruction,
    next: &'a [f64],
    previous: &'a [f64],
) -> &'a [f64] {
    match recon {
        Reconstruction::Zoh => next,
        Reconstruction::Foh => previous,
    }
}

fn channel_mut<'a>(
    a_to_b: &'a mut [Channel],
    b_to_a: &'a mut [Channel],
    global_idx: usize,
) -> &'a mut Channel {
    if global_idx < a_to_b.len() {
        &mut a_to_b[global_idx]
    } else {
        &mut b_to_a[global_idx - a_to_b.len()]
    }
}
