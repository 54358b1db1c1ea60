//! Optimization-based compensator design.
//!
//! The weighted frequency-domain objective penalizes in-band magnitude and
//! phase deviation of the coupling process plus out-of-band magnitude
//! excess over a roll-off bound set by the relative degree. The DC-gain
//! constraint is eliminated exactly (the bias is derived from the
//! coefficients), and a seeded multi-start derivative-free simplex search
//! minimizes over the remaining coefficients.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::compensator::ExtrapolatorParams;
use crate::error::{CoreError, Result};
use crate::freq::FrequencyGrid;

/// Bandwidth interval, relative degree, objective weights, and the
/// coupling parameters the design is made for.
#[derive(Clone, Debug)]
pub struct DesignSpec {
    pub band: (f64, f64),
    pub relative_degree: u32,
    /// Weight on the in-band magnitude deviation.
    pub alpha: f64,
    /// Weight on the in-band phase deviation.
    pub beta: f64,
    /// Weight on the out-of-band magnitude excess; dominates by design.
    pub gamma: f64,
    pub coeff_count: usize,
    pub macro_step: f64,
    pub delay_steps: usize,
}

impl DesignSpec {
    /// Default weights: beta = 1, alpha = 100 beta
    /// (1 degree of phase counts like 1% of magnitude), gamma >> both.
    pub fn new(
        band: (f64, f64),
        relative_degree: u32,
        coeff_count: usize,
        macro_step: f64,
        delay_steps: usize,
    ) -> Self {
        Self {
            band,
            relative_degree,
            alpha: 100.0,
            beta: 1.0,
            gamma: 1e4,
            coeff_count,
            macro_step,
            delay_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nyq = 2.0 * std::f64::consts::PI / self.macro_step;
        if !(self.band.0 > 0.0 && self.band.0 < self.band.1 && self.band.1 < nyq) {
            return Err(CoreError::InvalidParams(format!(
                "band must satisfy 0 < lo < hi < 2*pi/dt = {nyq}"
            )));
        }
        if self.relative_degree == 0 {
            return Err(CoreError::InvalidParams(
                "relative degree must be positive".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.gamma > 0.0) {
            return Err(CoreError::InvalidParams("weights must be positive".into()));
        }
        if self.coeff_count == 0 {
            return Err(CoreError::InvalidParams(
                "coefficient count must be positive".into(),
            ));
        }
        if self.macro_step.is_nan() || self.macro_step <= 0.0 {
            return Err(CoreError::InvalidParams(
                "macro step must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Out-of-band bound exponent `v = 1 / (2 r)`.
    pub fn rolloff_exponent(&self) -> f64 {
        1.0 / (2.0 * self.relative_degree as f64)
    }

    pub fn delay_time(&self) -> f64 {
        self.delay_steps as f64 * self.macro_step
    }
}

/// The three objective components and their weighted total.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveBreakdown {
    /// Band-average magnitude deviation |1 - |G_p||.
    pub magnitude: f64,
    /// Band-average absolute phase, radians.
    pub phase: f64,
    /// Out-of-band magnitude excess above the admissible envelope.
    pub rolloff: f64,
    pub total: f64,
}

/// Quadrature grid and precomputed exponentials reused across objective
/// evaluations.
pub struct ObjectiveEvaluator {
    spec: DesignSpec,
    omegas: Vec<f64>,
    unit: Vec<Complex64>,
    delay: Vec<Complex64>,
    hold: Vec<Complex64>,
}

impl ObjectiveEvaluator {
    pub fn new(spec: &DesignSpec) -> Result<Self> {
        spec.validate()?;
        let omega_hi = 2.0 * std::f64::consts::PI / spec.macro_step;
        let mut grid = FrequencyGrid::log_space(1e-2, omega_hi, 2000)?;
        // band edges as explicit quadrature nodes
        grid.insert(&[spec.band.0, spec.band.1]);
        let omegas = grid.points().to_vec();
        let mut unit = Vec::with_capacity(omegas.len());
        let mut delay = Vec::with_capacity(omegas.len());
        let mut hold = Vec::with_capacity(omegas.len());
        let probe = ExtrapolatorParams::zoh(1);
        for &w in &omegas {
            let z = Complex64::new(0.0, w * spec.macro_step);
            unit.push((-z).exp());
            delay.push(Complex64::new(0.0, -w * spec.delay_time()).exp());
            // phi(z) recovered from the single-coefficient evaluation
            let gc = crate::freq::eval_gc(w, &probe, spec.macro_step);
            hold.push(gc / spec.macro_step);
        }
        Ok(Self {
            spec: spec.clone(),
            omegas,
            unit,
            delay,
            hold,
        })
    }

    fn gp_at(&self, idx: usize, coeffs: &[f64], bias: f64) -> Complex64 {
        let mut shift = Complex64::new(1.0, 0.0);
        let mut comb = Complex64::new(0.0, 0.0);
        for &a in coeffs {
            comb += a * shift;
            shift *= self.unit[idx];
        }
        comb += bias * self.unit[idx];
        self.delay[idx] * self.hold[idx] * comb
    }

    /// Trapezoidal quadrature of the printed objective components.
    pub fn breakdown_from(&self, gp: impl Fn(usize, f64) -> Complex64) -> ObjectiveBreakdown {
        let (lo, hi) = self.spec.band;
        let v = self.spec.rolloff_exponent();
        let values: Vec<Complex64> = self
            .omegas
            .iter()
            .enumerate()
            .map(|(i, &w)| gp(i, w))
            .collect();

        let band_mag = |g: &Complex64| (1.0 - g.norm()).abs();
        let band_phase = |g: &Complex64| g.arg().abs();
        let below = |g: &Complex64| (g.norm() - 1.0).max(0.0);
        let above = |g: &Complex64, w: f64| (g.norm() - (w / hi).powf(v)).max(0.0);

        let mut j_a = 0.0;
        let mut j_p = 0.0;
        let mut j_r = 0.0;
        for i in 1..self.omegas.len() {
            let (w0, w1) = (self.omegas[i - 1], self.omegas[i]);
            let h = w1 - w0;
            let (g0, g1) = (&values[i - 1], &values[i]);
            if w0 >= lo && w1 <= hi {
                j_a += 0.5 * h * (band_mag(g0) + band_mag(g1));
                j_p += 0.5 * h * (band_phase(g0) + band_phase(g1));
            } else if w1 <= lo {
                j_r += 0.5 * h * (below(g0) + below(g1));
            } else if w0 >= hi {
                j_r += 0.5 * h * (above(g0, w0) + above(g1, w1));
            }
        }
        let width = hi - lo;
        let magnitude = j_a / width;
        let phase = j_p / width;
        let total = self.spec.alpha * magnitude + self.spec.beta * phase + self.spec.gamma * j_r;
        ObjectiveBreakdown {
            magnitude,
            phase,
            rolloff: j_r,
            total,
        }
    }

    pub fn breakdown(&self, params: &ExtrapolatorParams) -> ObjectiveBreakdown {
        self.breakdown_from(|i, _| self.gp_at(i, &params.coeffs, params.bias))
    }

    /// Objective over the constraint-reduced space: bias derived as
    /// `b = 1 - sum(a)` so the DC constraint holds exactly.
    fn cost_reduced(&self, coeffs: &[f64]) -> f64 {
        let bias = 1.0 - coeffs.iter().sum::<f64>();
        self.breakdown_from(|i, _| self.gp_at(i, coeffs, bias))
            .total
    }

    pub fn spec(&self) -> &DesignSpec {
        &self.spec
    }
}

/// Evaluates the weighted objective for one parameter set.
pub fn objective(params: &ExtrapolatorParams, spec: &DesignSpec) -> Result<ObjectiveBreakdown> {
    if params.coeffs.len() != spec.coeff_count {
        return Err(CoreError::InvalidParams(format!(
            "parameter count {} does not match design spec {}",
            params.coeffs.len(),
            spec.coeff_count
        )));
    }
    Ok(ObjectiveEvaluator::new(spec)?.breakdown(params))
}

/// Objective of an arbitrary coupling-process response on the analysis
/// grid; lets tests probe the metric itself (e.g. the ideal `G_p = 1`).
pub fn objective_of_response(
    spec: &DesignSpec,
    gp: impl Fn(f64) -> Complex64,
) -> Result<ObjectiveBreakdown> {
    Ok(ObjectiveEvaluator::new(spec)?.breakdown_from(|_, w| gp(w)))
}

pub struct Optimized {
    pub params: ExtrapolatorParams,
    pub objective: ObjectiveBreakdown,
    /// False when no start improved on `init`; the caller gets `init` back.
    pub improved: bool,
}

/// Nelder-Mead on `f`, returning the best vertex.
fn nelder_mead<F>(f: &F, x0: &[f64], scale: f64, max_iter: usize) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        let step = scale * x[i].abs().max(1.0);
        x[i] += step;
        let fx = f(&x);
        simplex.push((x, fx));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let spread = simplex[n].1 - simplex[0].1;
        if spread.abs() < 1e-14 * simplex[0].1.abs().max(1e-30) {
            break;
        }
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let reflect: Vec<f64> = centroid
            .iter()
            .zip(&worst.0)
            .map(|(c, w)| c + alpha * (c - w))
            .collect();
        let f_reflect = f(&reflect);
        if f_reflect < simplex[0].1 {
            let expand: Vec<f64> = centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + gamma * (c - w))
                .collect();
            let f_expand = f(&expand);
            simplex[n] = if f_expand < f_reflect {
                (expand, f_expand)
            } else {
                (reflect, f_reflect)
            };
        } else if f_reflect < simplex[n - 1].1 {
            simplex[n] = (reflect, f_reflect);
        } else {
            let contract: Vec<f64> = centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + rho * (w - c))
                .collect();
            let f_contract = f(&contract);
            if f_contract < worst.1 {
                simplex[n] = (contract, f_contract);
            } else {
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let shrunk: Vec<f64> = best
                        .iter()
                        .zip(&entry.0)
                        .map(|(b, x)| b + sigma * (x - b))
                        .collect();
                    entry.1 = f(&shrunk);
                    entry.0 = shrunk;
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    simplex.swap_remove(0)
}

/// Multi-start derivative-free minimization of the design objective under
/// the exact DC constraint. Seeded: identical inputs give identical
/// results. Starts include `init`, ZOH, slope continuation over the delay,
/// and seeded random points; the best result is polished by restarting.
pub fn optimize(spec: &DesignSpec, init: &ExtrapolatorParams, seed: u64) -> Result<Optimized> {
    if init.coeffs.len() != spec.coeff_count {
        return Err(CoreError::InvalidParams(
            "init parameter count does not match design spec".into(),
        ));
    }
    let evaluator = ObjectiveEvaluator::new(spec)?;
    let cost = |x: &[f64]| evaluator.cost_reduced(x);
    let p = spec.coeff_count;

    let mut starts: Vec<Vec<f64>> = vec![init.coeffs.clone(), ExtrapolatorParams::zoh(p).coeffs];
    if let Ok(foh) = ExtrapolatorParams::foh_for_delay(spec.delay_steps, p) {
        starts.push(foh.coeffs);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while starts.len() < 20 {
        starts.push((0..p).map(|_| rng.gen_range(-10.0..10.0)).collect());
    }

    let max_iter = 400 * p;
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in &starts {
        let (x, fx) = nelder_mead(&cost, start, 0.5, max_iter);
        if best.as_ref().is_none_or(|(_, b)| fx < *b) {
            best = Some((x, fx));
        }
    }
    // polish: restart the simplex at the incumbent until it stalls
    let (mut x_best, mut f_best) = best.unwrap();
    for _ in 0..3 {
        let (x, fx) = nelder_mead(&cost, &x_best, 0.05, max_iter);
        if fx + 1e-15 < f_best {
            x_best = x;
            f_best = fx;
        } else {
            break;
        }
    }

    let f_init = cost(&init.coeffs);
    let improved = f_best < f_init;
    let coeffs = if improved {
        x_best
    } else {
        init.coeffs.clone()
    };
    let bias = 1.0 - coeffs.iter().sum::<f64>();
    let params = ExtrapolatorParams::new(coeffs, bias)?;
    let objective = evaluator.breakdown(&params);
    Ok(Optimized {
        params,
        objective,
        improved,
    })
}
