//! The three commands: simulate, analyze, design. Each writes CSV and
//! report files into the output directory and returns a status the binary
//! maps onto its exit code.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use anyhow::Context;

use cosim_core::compensator::{write_weights, ExtrapolatorParams};
use cosim_core::coupling::{amplitude_ratio, run_cosim, CompensatorSet, CosimOptions};
use cosim_core::design::{objective, optimize, ObjectiveBreakdown};
use cosim_core::freq::{
    aliasing_check, derive_plant_tf, empirical_frequency_response, eval_gp, eval_open_loop,
    eval_open_loop_reference, nyquist_analysis, FrequencyGrid, FrequencyResponseCurve,
    NyquistOptions, NyquistResult, StabilityVerdict, ALIASING_MARGIN,
};
use cosim_core::plants::{run_monolithic, HalfState, MassOnePlant, MassTwoPlant};

use crate::config::{ParamsFile, ScenarioFile};

/// Distinct process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CommandStatus {
    Success,
    ConfigError,
    Diverged,
    MarginalVerdict,
    NoImprovement,
}

impl CommandStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            CommandStatus::Success => 0,
            CommandStatus::ConfigError => 2,
            CommandStatus::Diverged => 3,
            CommandStatus::MarginalVerdict => 4,
            CommandStatus::NoImprovement => 5,
        }
    }
}

pub struct SimulateReport {
    pub status: CommandStatus,
    pub amplitude_ratio: f64,
    pub events: usize,
    pub training_cycles: usize,
    pub diverged: Option<f64>,
    pub summary: String,
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn build_plants(cfg: &ScenarioFile) -> anyhow::Result<(MassOnePlant, MassTwoPlant)> {
    let params = cfg.plant_params();
    let [x1, v1, x2, v2] = cfg.plant.initial_state;
    let a = MassOnePlant::new(
        params,
        HalfState { pos: x1, vel: v1 },
        cfg.stop_params(),
        cfg.plant.micro_steps,
    )
    .map_err(|e| anyhow::anyhow!("[plant]: {e}"))?;
    let b = MassTwoPlant::new(
        params,
        HalfState { pos: x2, vel: v2 },
        [x1, v1],
        cfg.plant.micro_steps,
    )
    .map_err(|e| anyhow::anyhow!("[plant]: {e}"))?;
    Ok((a, b))
}

/// Runs the configured coupled experiment, writes trace CSVs plus a run
/// summary, and reports the stability trend.
pub fn cmd_simulate(
    cfg: &ScenarioFile,
    base: &Path,
    out_dir: &Path,
    seed: u64,
) -> anyhow::Result<SimulateReport> {
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output dir {}", out_dir.display()))?;
    let (mut plant_a, mut plant_b) = build_plants(cfg)?;
    let comp = cfg.build_compensator(base)?;
    let comps = CompensatorSet {
        a_to_b: vec![comp.clone(), comp.clone()],
        b_to_a: vec![comp],
    };
    let scenario = cfg.scenario(cfg.training_enabled());
    let trace = run_cosim(
        &scenario,
        &mut plant_a,
        &mut plant_b,
        comps,
        CosimOptions {
            seed,
            trainer: cfg.trainer_config(),
        },
    )
    .map_err(|e| anyhow::anyhow!("simulation setup: {e}"))?;

    // coupled states
    let mut combined = String::from("time,x1,v1,x2,v2\n");
    for (i, t) in trace.state_times.iter().enumerate() {
        let a = trace.plant_a.row(i);
        let b = trace.plant_b.row(i);
        let _ = writeln!(combined, "{t},{},{},{},{}", a[0], a[1], b[0], b[1]);
    }
    write_file(&out_dir.join("states.csv"), &combined)?;

    // monolithic reference over the same horizon
    let micro = scenario.macro_step / cfg.plant.micro_steps as f64;
    let reference = run_monolithic(
        &cfg.plant_params(),
        cfg.stop_params().as_ref(),
        cfg.plant.initial_state,
        micro,
        cfg.plant.micro_steps,
        scenario.duration,
    );
    let mut ref_csv = String::from("time,x1,v1,x2,v2\n");
    for (t, s) in reference.times.iter().zip(&reference.states) {
        let _ = writeln!(ref_csv, "{t},{},{},{},{}", s[0], s[1], s[2], s[3]);
    }
    write_file(&out_dir.join("reference.csv"), &ref_csv)?;

    // per-channel series
    for ch in &trace.channels {
        let mut csv = String::from("time,sent,delayed,compensated\n");
        for (i, t) in trace.channel_times.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{t},{},{},{}",
                ch.sent[i], ch.delayed[i], ch.compensated[i]
            );
        }
        write_file(&out_dir.join(format!("channel_{}.csv", ch.name)), &csv)?;
    }

    // bounce events
    let mut events_csv = String::from("time,velocity_before,velocity_after\n");
    for e in &trace.events {
        let _ = writeln!(
            events_csv,
            "{},{},{}",
            e.time, e.velocity_before, e.velocity_after
        );
    }
    write_file(&out_dir.join("events.csv"), &events_csv)?;

    // training cycles
    let mut training_csv = String::from(
        "channel,cycle,trigger_step,apply_step,samples,cost_before,cost_after,accepted\n",
    );
    for t in &trace.training {
        let _ = writeln!(
            training_csv,
            "{},{},{},{},{},{},{},{}",
            t.channel,
            t.cycle,
            t.trigger_step,
            t.apply_step,
            t.sample_count,
            t.cost_before,
            t.cost_after,
            t.accepted
        );
    }
    write_file(&out_dir.join("training.csv"), &training_csv)?;

    // final network weights per channel (after any online training)
    for (ch, comp) in trace.channels.iter().zip(
        trace
            .compensators
            .a_to_b
            .iter()
            .chain(trace.compensators.b_to_a.iter()),
    ) {
        if let Some(net) = comp.network() {
            let mut buf = Vec::new();
            write_weights(net, &mut buf)?;
            let mut f = fs::File::create(out_dir.join(format!("weights_{}.txt", ch.name)))?;
            f.write_all(&buf)?;
        }
    }

    let x1 = trace
        .plant_a
        .component("x1")
        .unwrap_or_else(|| vec![f64::NAN]);
    let ratio = amplitude_ratio(&x1, 0.1);
    let trend = if trace.diverged.is_some() {
        "diverged"
    } else if ratio > 1.0 {
        "growing (unstable)"
    } else {
        "decaying (stable)"
    };

    let mut summary = String::new();
    let _ = writeln!(summary, "scenario: {}", describe(cfg));
    let _ = writeln!(summary, "macro steps: {}", trace.channel_times.len());
    let _ = writeln!(
        summary,
        "|x1| amplitude first/last window ratio: {ratio:.6} -> {trend}"
    );
    let _ = writeln!(summary, "bounce events: {}", trace.events.len());
    for e in trace.events.iter().take(10) {
        let _ = writeln!(
            summary,
            "  bounce t={:.4} v {:+.4} -> {:+.4}",
            e.time, e.velocity_before, e.velocity_after
        );
    }
    let _ = writeln!(summary, "training cycles applied: {}", trace.training.len());
    for t in &trace.training {
        let _ = writeln!(
            summary,
            "  {} cycle {} trigger step {} applied step {} cost {:.3e} -> {:.3e} accepted={}",
            t.channel,
            t.cycle,
            t.trigger_step,
            t.apply_step,
            t.cost_before,
            t.cost_after,
            t.accepted
        );
    }
    if let Some(t) = trace.diverged {
        let _ = writeln!(summary, "DIVERGED at t = {t:.6} s");
    }
    write_file(&out_dir.join("summary.txt"), &summary)?;

    Ok(SimulateReport {
        status: if trace.diverged.is_some() {
            CommandStatus::Diverged
        } else {
            CommandStatus::Success
        },
        amplitude_ratio: ratio,
        events: trace.events.len(),
        training_cycles: trace.training.len(),
        diverged: trace.diverged,
        summary,
    })
}

fn describe(cfg: &ScenarioFile) -> String {
    format!(
        "dt={} k={} p={} recon={} comp={} duration={} stop={} training={}",
        cfg.coupling.macro_step,
        cfg.coupling.delay_steps,
        cfg.coupling.history_len,
        cfg.coupling.reconstruction,
        cfg.coupling.compensator,
        cfg.coupling.duration,
        cfg.stop.is_some(),
        cfg.training_enabled(),
    )
}

fn curve_csv(curve: &FrequencyResponseCurve) -> String {
    let mut out = String::from("omega,re,im,mag_db,phase_deg\n");
    let mags = curve.magnitude_db();
    let phases = curve.phase_deg();
    for i in 0..curve.omega.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            curve.omega[i], curve.values[i].re, curve.values[i].im, mags[i], phases[i]
        );
    }
    out
}

pub struct AnalyzeReport {
    pub status: CommandStatus,
    pub reference: NyquistResult,
    pub faults: NyquistResult,
    pub compensated: NyquistResult,
    pub aliasing_pass: bool,
    pub summary: String,
}

/// Emits Bode/Nyquist data for the reference, faulted, and compensated
/// arrangements, the encirclement verdicts, the aliasing check, and the
/// analytic-vs-empirical coupling-process comparison.
pub fn cmd_analyze(
    cfg: &ScenarioFile,
    base: &Path,
    out_dir: &Path,
) -> anyhow::Result<AnalyzeReport> {
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output dir {}", out_dir.display()))?;
    let params = cfg.plant_params();
    let tf = derive_plant_tf(&params);
    let dt = cfg.coupling.macro_step;
    let tau = cfg.coupling.delay_steps as f64 * dt;
    let p = cfg.coupling.history_len;
    let zoh = ExtrapolatorParams::zoh(p);
    let compensated_params = if cfg.compensator.is_some() {
        cfg.extrapolator_params(base)?
    } else {
        zoh.clone()
    };

    let opts = NyquistOptions {
        grid_points: cfg.analysis.grid_points,
        omega_min: cfg.analysis.omega_min,
        marginal_distance: cfg.analysis.marginal_distance,
    };

    let (ref_curve, ref_verdict) =
        nyquist_analysis("reference", dt, |w| eval_open_loop_reference(w, &tf), &opts)
            .map_err(|e| anyhow::anyhow!("analysis: {e}"))?;
    let (faults_curve, faults_verdict) = nyquist_analysis(
        "faults",
        dt,
        |w| eval_open_loop(w, &tf, &zoh, dt, tau),
        &opts,
    )
    .map_err(|e| anyhow::anyhow!("analysis: {e}"))?;
    let (comp_curve, comp_verdict) = nyquist_analysis(
        "faults and compensation",
        dt,
        |w| eval_open_loop(w, &tf, &compensated_params, dt, tau),
        &opts,
    )
    .map_err(|e| anyhow::anyhow!("analysis: {e}"))?;

    write_file(&out_dir.join("bode_reference.csv"), &curve_csv(&ref_curve))?;
    write_file(&out_dir.join("bode_faults.csv"), &curve_csv(&faults_curve))?;
    write_file(
        &out_dir.join("bode_compensated.csv"),
        &curve_csv(&comp_curve),
    )?;

    // analytic vs empirical coupling process
    let check_grid = FrequencyGrid::log_space(0.1, 100.0, 30)
        .map_err(|e| anyhow::anyhow!("analysis grid: {e}"))?;
    let mut check_csv = String::from(
        "omega,analytic_re,analytic_im,empirical_re,empirical_im,mag_rel_err,phase_err_deg\n",
    );
    let mut worst_mag = 0.0f64;
    let mut worst_phase = 0.0f64;
    for &w in check_grid.points() {
        let analytic = eval_gp(w, &compensated_params, dt, tau);
        let empirical =
            empirical_frequency_response(&compensated_params, dt, cfg.coupling.delay_steps, w)
                .map_err(|e| anyhow::anyhow!("empirical oracle: {e}"))?;
        let mag_err = (analytic.norm() - empirical.norm()).abs() / analytic.norm().max(1e-12);
        let phase_err = (analytic.arg() - empirical.arg()).abs().to_degrees();
        worst_mag = worst_mag.max(mag_err);
        worst_phase = worst_phase.max(phase_err);
        let _ = writeln!(
            check_csv,
            "{w},{},{},{},{},{mag_err},{phase_err}",
            analytic.re, analytic.im, empirical.re, empirical.im
        );
    }
    write_file(&out_dir.join("gp_check.csv"), &check_csv)?;

    let band_hi = cfg
        .design
        .as_ref()
        .map(|d| d.band[1])
        .unwrap_or(2.0 * std::f64::consts::PI / dt / 100.0);
    let aliasing = aliasing_check(band_hi, dt, ALIASING_MARGIN);

    let verdict_line = |name: &str, v: &NyquistResult| {
        format!(
            "{name}: {:?} (encirclements {}, min distance to critical point {:.3e}){}",
            v.verdict,
            v.encirclements,
            v.min_distance,
            if v.verdict == StabilityVerdict::Marginal {
                "  [MARGINAL: verdict unreliable]"
            } else {
                ""
            }
        )
    };
    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "{}",
        verdict_line("reference            ", &ref_verdict)
    );
    let _ = writeln!(
        summary,
        "{}",
        verdict_line("faults               ", &faults_verdict)
    );
    let _ = writeln!(
        summary,
        "{}",
        verdict_line("faults + compensation", &comp_verdict)
    );
    let _ = writeln!(
        summary,
        "aliasing check: omega_max * dt = {:.6} {} margin {:.6} -> {}",
        aliasing.ratio,
        if aliasing.pass { "<" } else { ">=" },
        aliasing.margin,
        if aliasing.pass { "pass" } else { "FAIL" }
    );
    let _ = writeln!(
        summary,
        "analytic vs empirical G_p: worst magnitude error {:.4}%, worst phase error {:.4} deg",
        worst_mag * 100.0,
        worst_phase
    );
    write_file(&out_dir.join("verdicts.txt"), &summary)?;

    let marginal = [&ref_verdict, &faults_verdict, &comp_verdict]
        .iter()
        .any(|v| v.verdict == StabilityVerdict::Marginal);
    Ok(AnalyzeReport {
        status: if marginal {
            CommandStatus::MarginalVerdict
        } else {
            CommandStatus::Success
        },
        reference: ref_verdict,
        faults: faults_verdict,
        compensated: comp_verdict,
        aliasing_pass: aliasing.pass,
        summary,
    })
}

pub struct DesignReport {
    pub status: CommandStatus,
    pub params: ExtrapolatorParams,
    pub objective: ObjectiveBreakdown,
    pub baseline: ObjectiveBreakdown,
    pub improved: bool,
    pub summary: String,
}

/// Runs the compensator design optimization and writes the resulting
/// parameter file (loadable by `simulate`) plus an objective report.
pub fn cmd_design(cfg: &ScenarioFile, out_dir: &Path, seed: u64) -> anyhow::Result<DesignReport> {
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output dir {}", out_dir.display()))?;
    let spec = cfg.design_spec()?;
    let init = ExtrapolatorParams::zoh(spec.coeff_count);
    let baseline = objective(&init, &spec).map_err(|e| anyhow::anyhow!("design: {e}"))?;
    let result = optimize(&spec, &init, seed).map_err(|e| anyhow::anyhow!("design: {e}"))?;

    let params_file = ParamsFile {
        a: result.params.coeffs.clone(),
        b: result.params.bias,
    };
    let text = toml::to_string_pretty(&params_file)?;
    write_file(&out_dir.join("design_params.toml"), &text)?;

    let fmt = |b: &ObjectiveBreakdown| {
        format!(
            "J_a (magnitude) = {:.6e}  J_p (phase) = {:.6e}  J_r (rolloff) = {:.6e}  J = {:.6e}",
            b.magnitude, b.phase, b.rolloff, b.total
        )
    };
    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "design spec: band [{}, {}] rad/s, r = {}, v = {:.4}, weights alpha={} beta={} gamma={}",
        spec.band.0,
        spec.band.1,
        spec.relative_degree,
        spec.rolloff_exponent(),
        spec.alpha,
        spec.beta,
        spec.gamma
    );
    let _ = writeln!(summary, "ZOH baseline: {}", fmt(&baseline));
    let _ = writeln!(summary, "optimized:    {}", fmt(&result.objective));
    let _ = writeln!(
        summary,
        "coefficients: {:?}  bias: {}",
        result.params.coeffs, result.params.bias
    );
    let _ = writeln!(
        summary,
        "DC constraint |sum(a)+b-1| = {:.3e}",
        (result.params.dc_gain() - 1.0).abs()
    );
    if !result.improved {
        let _ = writeln!(summary, "WARNING: no improvement over the baseline");
    }
    write_file(&out_dir.join("objective_report.txt"), &summary)?;

    Ok(DesignReport {
        status: if result.improved {
            CommandStatus::Success
        } else {
            CommandStatus::NoImprovement
        },
        params: result.params,
        objective: result.objective,
        baseline,
        improved: result.improved,
        summary,
    })
}
