//! Reference subsystem models: the force/displacement-coupled two-mass
//! oscillator halves, the nonlinear mechanical-stop variant, and the
//! monolithic (uncoupled) oracle.
//!
//! Integration is a fixed-step classical 4th-order scheme with the micro
//! step tied to the macro step (default 1/10); stop crossings are localized
//! by linear interpolation inside the offending micro step before the
//! velocity reflection is applied.

use crate::coupling::Plant;
use crate::error::{CoreError, Result};

/// Mass, stiffness and damping parameters of the two-mass oscillator.
/// `cc`/`dc` is the coupling spring/damper between the masses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OscillatorParams {
    pub m1: f64,
    pub m2: f64,
    pub c1: f64,
    pub c2: f64,
    pub cc: f64,
    pub d1: f64,
    pub d2: f64,
    pub dc: f64,
}

impl OscillatorParams {
    /// Slightly damped configuration used throughout the experiments:
    /// m1 = 100, m2 = 1, all stiffnesses 10 N/m, all dampings 0.01 Ns/m.
    pub fn two_mass_reference() -> Self {
        Self {
            m1: 100.0,
            m2: 1.0,
            c1: 10.0,
            c2: 10.0,
            cc: 10.0,
            d1: 0.01,
            d2: 0.01,
            dc: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m1 > 0.0 && self.m2 > 0.0) {
            return Err(CoreError::InvalidParams("masses must be positive".into()));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0 && self.cc > 0.0) {
            return Err(CoreError::InvalidParams(
                "stiffnesses must be positive".into(),
            ));
        }
        if self.d1 < 0.0 || self.d2 < 0.0 || self.dc < 0.0 {
            return Err(CoreError::InvalidParams(
                "dampings must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Mechanical stop limiting mass 1 from below, with a restitution
/// coefficient in (0, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopParams {
    pub x_stop: f64,
    pub restitution: f64,
}

impl StopParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.restitution > 0.0 && self.restitution <= 1.0) {
            return Err(CoreError::InvalidParams(
                "restitution must be in (0, 1]".into(),
            ));
        }
        if !self.x_stop.is_finite() {
            return Err(CoreError::InvalidParams("x_stop must be finite".into()));
        }
        Ok(())
    }
}

/// Position/velocity pair of one half-plant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HalfState {
    pub pos: f64,
    pub vel: f64,
}

/// One velocity reversal at the mechanical stop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopEvent {
    pub time: f64,
    pub velocity_before: f64,
    pub velocity_after: f64,
}

/// Coupling force acting on mass 2, computed from the transmitted mass-1
/// motion: `F = cc (x1_in - x2) + dc (v1_in - v2)`.
pub fn coupling_force(p: &OscillatorParams, mass2: &HalfState, x1_in: f64, v1_in: f64) -> f64 {
    p.cc * (x1_in - mass2.pos) + p.dc * (v1_in - mass2.vel)
}

fn mass1_deriv(p: &OscillatorParams, s: HalfState, force: f64) -> (f64, f64) {
    (s.vel, (-p.c1 * s.pos - p.d1 * s.vel + force) / p.m1)
}

fn mass2_deriv(p: &OscillatorParams, s: HalfState, x1_in: f64, v1_in: f64) -> (f64, f64) {
    let f = coupling_force(p, &s, x1_in, v1_in);
    (s.vel, (-p.c2 * s.pos - p.d2 * s.vel + f) / p.m2)
}

fn rk4_half<F>(deriv: F, s: HalfState, h: f64) -> HalfState
where
    F: Fn(HalfState, f64) -> (f64, f64),
{
    // theta in [0, 1] parameterizes external inputs across the step
    let k1 = deriv(s, 0.0);
    let k2 = deriv(
        HalfState {
            pos: s.pos + 0.5 * h * k1.0,
            vel: s.vel + 0.5 * h * k1.1,
        },
        0.5,
    );
    let k3 = deriv(
        HalfState {
            pos: s.pos + 0.5 * h * k2.0,
            vel: s.vel + 0.5 * h * k2.1,
        },
        0.5,
    );
    let k4 = deriv(
        HalfState {
            pos: s.pos + h * k3.0,
            vel: s.vel + h * k3.1,
        },
        1.0,
    );
    HalfState {
        pos: s.pos + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        vel: s.vel + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    }
}

/// Advances mass 1 by `dt` under a coupling force ramping linearly from
/// `force_start` to `force_end` across the step.
pub fn step_mass1_ramp(
    p: &OscillatorParams,
    s: HalfState,
    force_start: f64,
    force_end: f64,
    dt: f64,
) -> HalfState {
    rk4_half(
        |state, theta| mass1_deriv(p, state, force_start + (force_end - force_start) * theta),
        s,
        dt,
    )
}

/// Advances mass 1 by `dt` with the coupling force held constant.
pub fn step_mass1(p: &OscillatorParams, s: HalfState, coupling_force: f64, dt: f64) -> HalfState {
    step_mass1_ramp(p, s, coupling_force, coupling_force, dt)
}

/// Advances mass 2 by `dt` with the transmitted mass-1 motion ramping
/// linearly across the step; returns the coupling force sampled at the end
/// of the step.
#[allow(clippy::too_many_arguments)]
pub fn step_mass2_ramp(
    p: &OscillatorParams,
    s: HalfState,
    x1_start: f64,
    x1_end: f64,
    v1_start: f64,
    v1_end: f64,
    dt: f64,
) -> (HalfState, f64) {
    let next = rk4_half(
        |state, theta| {
            mass2_deriv(
                p,
                state,
                x1_start + (x1_end - x1_start) * theta,
                v1_start + (v1_end - v1_start) * theta,
            )
        },
        s,
        dt,
    );
    let force = coupling_force(p, &next, x1_end, v1_end);
    (next, force)
}

/// Advances mass 2 by `dt` with the transmitted motion held constant.
pub fn step_mass2(
    p: &OscillatorParams,
    s: HalfState,
    x1_in: f64,
    v1_in: f64,
    dt: f64,
) -> (HalfState, f64) {
    step_mass2_ramp(p, s, x1_in, x1_in, v1_in, v1_in, dt)
}

/// Clamp-and-reflect at the stop: position clamped, velocity reversed and
/// scaled by the restitution coefficient when still moving into the stop.
pub fn apply_stop_event(state: HalfState, stop: &StopParams) -> HalfState {
    let vel = if state.vel < 0.0 {
        -stop.restitution * state.vel
    } else {
        state.vel
    };
    HalfState {
        pos: stop.x_stop,
        vel,
    }
}

/// Integrates mass 1 over one micro step with stop handling. The crossing
/// time is localized by linear interpolation inside the step, the state is
/// clamped and reflected there, and the remainder of the step is integrated
/// from the reflected state.
#[allow(clippy::too_many_arguments)]
fn mass1_micro_step(
    p: &OscillatorParams,
    mut s: HalfState,
    force_start: f64,
    force_end: f64,
    h: f64,
    stop: Option<&StopParams>,
    t_start: f64,
    events: &mut Vec<StopEvent>,
) -> HalfState {
    let mut frac = 0.0f64;
    for _ in 0..8 {
        let span = (1.0 - frac) * h;
        if span <= 0.0 {
            break;
        }
        let f_at = |theta: f64| force_start + (force_end - force_start) * theta;
        let sub_deriv =
            |state: HalfState, local: f64| mass1_deriv(p, state, f_at(frac + (1.0 - frac) * local));
        let candidate = rk4_half(sub_deriv, s, span);
        match stop {
            Some(sp) if candidate.pos < sp.x_stop && s.pos >= sp.x_stop => {
                let theta = (sp.x_stop - s.pos) / (candidate.pos - s.pos);
                let cross = HalfState {
                    pos: sp.x_stop,
                    vel: s.vel + theta * (candidate.vel - s.vel),
                };
                let reflected = apply_stop_event(cross, sp);
                frac += theta * (1.0 - frac);
                events.push(StopEvent {
                    time: t_start + frac * h,
                    velocity_before: cross.vel,
                    velocity_after: reflected.vel,
                });
                s = reflected;
            }
            _ => {
                s = candidate;
                frac = 1.0;
            }
        }
        if frac >= 1.0 {
            break;
        }
    }
    if let Some(sp) = stop {
        if s.pos < sp.x_stop {
            s.pos = sp.x_stop;
        }
    }
    s
}

/// Displacement side of the coupled pair: mass 1, driven by the received
/// coupling force, sends its position and velocity.
pub struct MassOnePlant {
    params: OscillatorParams,
    state: HalfState,
    stop: Option<StopParams>,
    micro_steps: usize,
    time: f64,
    events: Vec<StopEvent>,
}

impl MassOnePlant {
    pub fn new(
        params: OscillatorParams,
        initial: HalfState,
        stop: Option<StopParams>,
        micro_steps: usize,
    ) -> Result<Self> {
        params.validate()?;
        if let Some(sp) = &stop {
            sp.validate()?;
            if initial.pos < sp.x_stop {
                return Err(CoreError::InvalidParams(
                    "initial position already beyond the stop".into(),
                ));
            }
        }
        if micro_steps == 0 {
            return Err(CoreError::InvalidParams(
                "micro step count must be positive".into(),
            ));
        }
        Ok(Self {
            params,
            state: initial,
            stop,
            micro_steps,
            time: 0.0,
            events: Vec::new(),
        })
    }

    pub fn current_state(&self) -> HalfState {
        self.state
    }
}

impl Plant for MassOnePlant {
    fn input_count(&self) -> usize {
        1
    }

    fn output_count(&self) -> usize {
        2
    }

    fn output_names(&self) -> Vec<String> {
        vec!["x1".into(), "v1".into()]
    }

    fn state_labels(&self) -> Vec<String> {
        vec!["x1".into(), "v1".into()]
    }

    fn initial_outputs(&self) -> Vec<f64> {
        vec![self.state.pos, self.state.vel]
    }

    fn direct_feedthrough(&self) -> bool {
        false
    }

    fn sample_outputs(&self, _inputs_now: &[f64], out: &mut [f64]) {
        out[0] = self.state.pos;
        out[1] = self.state.vel;
    }

    fn advance(&mut self, input_start: &[f64], input_end: &[f64], dt: f64) {
        let h = dt / self.micro_steps as f64;
        for m in 0..self.micro_steps {
            let a = m as f64 / self.micro_steps as f64;
            let b = (m + 1) as f64 / self.micro_steps as f64;
            let f0 = input_start[0] + (input_end[0] - input_start[0]) * a;
            let f1 = input_start[0] + (input_end[0] - input_start[0]) * b;
            self.state = mass1_micro_step(
                &self.params,
                self.state,
                f0,
                f1,
                h,
                self.stop.as_ref(),
                self.time + a * dt,
                &mut self.events,
            );
        }
        self.time += dt;
    }

    fn state(&self) -> Vec<f64> {
        vec![self.state.pos, self.state.vel]
    }

    fn take_events(&mut self) -> Vec<StopEvent> {
        std::mem::take(&mut self.events)
    }
}

/// Force side of the coupled pair: mass 2 owns the coupling spring/damper,
/// receives the transmitted mass-1 motion, and sends back the force acting
/// on mass 1 (the reaction of the force it applies to its own mass).
pub struct MassTwoPlant {
    params: OscillatorParams,
    state: HalfState,
    initial_inputs: [f64; 2],
    micro_steps: usize,
    time: f64,
}

impl MassTwoPlant {
    pub fn new(
        params: OscillatorParams,
        initial: HalfState,
        initial_inputs: [f64; 2],
        micro_steps: usize,
    ) -> Result<Self> {
        params.validate()?;
        if micro_steps == 0 {
            return Err(CoreError::InvalidParams(
                "micro step count must be positive".into(),
            ));
        }
        Ok(Self {
            params,
            state: initial,
            initial_inputs,
            micro_steps,
            time: 0.0,
        })
    }

    pub fn current_state(&self) -> HalfState {
        self.state
    }
}

impl Plant for MassTwoPlant {
    fn input_count(&self) -> usize {
        2
    }

    fn output_count(&self) -> usize {
        1
    }

    fn output_names(&self) -> Vec<String> {
        vec!["force".into()]
    }

    fn state_labels(&self) -> Vec<String> {
        vec!["x2".into(), "v2".into()]
    }

    fn initial_outputs(&self) -> Vec<f64> {
        vec![-coupling_force(
            &self.params,
            &self.state,
            self.initial_inputs[0],
            self.initial_inputs[1],
        )]
    }

    fn direct_feedthrough(&self) -> bool {
        true
    }

    fn sample_outputs(&self, inputs_now: &[f64], out: &mut [f64]) {
        out[0] = -coupling_force(&self.params, &self.state, inputs_now[0], inputs_now[1]);
    }

    fn advance(&mut self, input_start: &[f64], input_end: &[f64], dt: f64) {
        let h = dt / self.micro_steps as f64;
        for m in 0..self.micro_steps {
            let a = m as f64 / self.micro_steps as f64;
            let b = (m + 1) as f64 / self.micro_steps as f64;
            let lerp = |lo: f64, hi: f64, t: f64| lo + (hi - lo) * t;
            let (next, _) = step_mass2_ramp(
                &self.params,
                self.state,
                lerp(input_start[0], input_end[0], a),
                lerp(input_start[0], input_end[0], b),
                lerp(input_start[1], input_end[1], a),
                lerp(input_start[1], input_end[1], b),
                h,
            );
            self.state = next;
        }
        self.time += dt;
    }

    fn state(&self) -> Vec<f64> {
        vec![self.state.pos, self.state.vel]
    }
}

/// Time series produced by the single-process integrations.
#[derive(Clone, Debug)]
pub struct MonolithicTrace {
    pub times: Vec<f64>,
    /// Rows of `[x1, v1, x2, v2]`.
    pub states: Vec<[f64; 4]>,
    pub events: Vec<StopEvent>,
}

impl MonolithicTrace {
    pub fn component(&self, index: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[index]).collect()
    }
}

fn rk4_four<F>(deriv: &F, s: [f64; 4], h: f64) -> [f64; 4]
where
    F: Fn(&[f64; 4]) -> [f64; 4],
{
    let k1 = deriv(&s);
    let mut s2 = s;
    for i in 0..4 {
        s2[i] = s[i] + 0.5 * h * k1[i];
    }
    let k2 = deriv(&s2);
    let mut s3 = s;
    for i in 0..4 {
        s3[i] = s[i] + 0.5 * h * k2[i];
    }
    let k3 = deriv(&s3);
    let mut s4 = s;
    for i in 0..4 {
        s4[i] = s[i] + h * k3[i];
    }
    let k4 = deriv(&s4);
    let mut out = s;
    for i in 0..4 {
        out[i] = s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

fn integrate_four<F>(
    deriv: F,
    stop: Option<&StopParams>,
    x0: [f64; 4],
    dt: f64,
    record_stride: usize,
    duration: f64,
) -> MonolithicTrace
where
    F: Fn(&[f64; 4]) -> [f64; 4],
{
    let steps = (duration / dt).round() as usize;
    let stride = record_stride.max(1);
    let mut states = Vec::with_capacity(steps / stride + 2);
    let mut times = Vec::with_capacity(steps / stride + 2);
    let mut events = Vec::new();
    let mut s = x0;
    states.push(s);
    times.push(0.0);
    for n in 0..steps {
        let t = n as f64 * dt;
        let mut candidate = rk4_four(&deriv, s, dt);
        if let Some(sp) = stop {
            let mut guard = 0;
            while candidate[0] < sp.x_stop && s[0] >= sp.x_stop && guard < 8 {
                let theta = (sp.x_stop - s[0]) / (candidate[0] - s[0]);
                let mut cross = [0.0; 4];
                for i in 0..4 {
                    cross[i] = s[i] + theta * (candidate[i] - s[i]);
                }
                cross[0] = sp.x_stop;
                let v_before = cross[1];
                if cross[1] < 0.0 {
                    cross[1] *= -sp.restitution;
                }
                events.push(StopEvent {
                    time: t + theta * dt,
                    velocity_before: v_before,
                    velocity_after: cross[1],
                });
                s = cross;
                candidate = rk4_four(&deriv, s, (1.0 - theta) * dt);
                guard += 1;
            }
            if candidate[0] < sp.x_stop {
                candidate[0] = sp.x_stop;
            }
        }
        s = candidate;
        if (n + 1) % stride == 0 || n + 1 == steps {
            states.push(s);
            times.push((n + 1) as f64 * dt);
        }
    }
    MonolithicTrace {
        times,
        states,
        events,
    }
}

/// Integrates the full coupled two-mass equations in one process: no
/// sampling, no delay. This is the reference oracle.
pub fn run_monolithic(
    params: &OscillatorParams,
    stop: Option<&StopParams>,
    x0: [f64; 4],
    dt: f64,
    record_stride: usize,
    duration: f64,
) -> MonolithicTrace {
    let p = *params;
    let deriv = move |s: &[f64; 4]| {
        let [x1, v1, x2, v2] = *s;
        [
            v1,
            (-p.c1 * x1 - p.d1 * v1 + p.cc * (x2 - x1) + p.dc * (v2 - v1)) / p.m1,
            v2,
            (-p.c2 * x2 - p.d2 * v2 + p.cc * (x1 - x2) + p.dc * (v1 - v2)) / p.m2,
        ]
    };
    integrate_four(deriv, stop, x0, dt, record_stride, duration)
}

/// Integrates the two half-models assembled tightly (coupling evaluated at
/// every integrator stage, mass 1 receiving the reaction force). Equal to
/// the monolithic system by construction; used to pin the half-model sign
/// conventions.
pub fn run_assembled_pair(
    params: &OscillatorParams,
    stop: Option<&StopParams>,
    x0: [f64; 4],
    dt: f64,
    record_stride: usize,
    duration: f64,
) -> MonolithicTrace {
    let p = *params;
    let deriv = move |s: &[f64; 4]| {
        let mass1 = HalfState {
            pos: s[0],
            vel: s[1],
        };
        let mass2 = HalfState {
            pos: s[2],
            vel: s[3],
        };
        let force_on_mass2 = coupling_force(&p, &mass2, mass1.pos, mass1.vel);
        let d1 = mass1_deriv(&p, mass1, -force_on_mass2);
        let d2 = mass2_deriv(&p, mass2, mass1.pos, mass1.vel);
        [d1.0, d1.1, d2.0, d2.1]
    };
    integrate_four(deriv, stop, x0, dt, record_stride, duration)
}

/// State matrix of the monolithic system for `[x1, v1, x2, v2]`.
pub fn monolithic_state_matrix(p: &OscillatorParams) -> [[f64; 4]; 4] {
    [
        [0.0, 1.0, 0.0, 0.0],
        [
            -(p.c1 + p.cc) / p.m1,
            -(p.d1 + p.dc) / p.m1,
            p.cc / p.m1,
            p.dc / p.m1,
        ],
        [0.0, 0.0, 0.0, 1.0],
        [
            p.cc / p.m2,
            p.dc / p.m2,
            -(p.c2 + p.cc) / p.m2,
            -(p.d2 + p.dc) / p.m2,
        ],
    ]
}
