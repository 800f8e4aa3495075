//! Integration of `x' = diag(x) A (x - 1)` with an adaptive Dormand-Prince
//! 5(4) pair, plus tail statistics used as empirical stand-ins for
//! boundedness, persistence and convergence.

use crate::model::normalized_field;
use crate::{Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::{self, Write};
use thiserror::Error;

/// States with a component above this are treated as escaping to infinity.
pub const BLOWUP_GUARD: f64 = 1e150;
/// Quadratic fields blow up in finite time, where the step size collapses
/// long before [`BLOWUP_GUARD`] is reached. A step-size underflow after the
/// state grew by this factor over `max(1, |x0|)` is reported as a blow-up.
pub const BLOWUP_GROWTH: f64 = 1e8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("solution blew up at t = {t}: |x| = {norm:e}")]
    BlowUp { t: f64, norm: f64 },
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("step limit {max_steps} reached at t = {t}")]
    MaxStepsExceeded { t: f64, max_steps: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Where the trajectory is recorded.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleGrid {
    /// The initial point and every accepted step.
    AcceptedSteps,
    /// Increasing times in `[0, t_end]`, filled by dense output.
    Times(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrateOptions {
    pub rtol: f64,
    pub atol: f64,
    pub samples: SampleGrid,
    pub max_steps: usize,
    /// Initial step; picked from the local scale of the field when absent.
    pub h0: Option<f64>,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
            samples: SampleGrid::AcceptedSteps,
            max_steps: 2_000_000,
            h0: None,
        }
    }
}

impl IntegrateOptions {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }

    /// `count` equally spaced samples on `[0, t_end]`, both ends included.
    pub fn uniform_samples(mut self, t_end: f64, count: usize) -> Self {
        let count = count.max(2);
        let times = (0..count)
            .map(|i| t_end * i as f64 / (count - 1) as f64)
            .collect();
        self.samples = SampleGrid::Times(times);
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    /// Largest scaled error norm among accepted steps.
    pub max_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub step_stats: StepStats,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<&Vector> {
        self.states.last()
    }

    /// Writes `t,x1,...,xn` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let n = self.states.first().map_or(0, |s| s.len());
        let mut header = String::from("t");
        for i in 1..=n {
            header.push_str(&format!(",x{i}"));
        }
        writeln!(out, "{header}")?;
        for (t, x) in self.times.iter().zip(&self.states) {
            write!(out, "{t:.16e}")?;
            for v in x.iter() {
                write!(out, ",{v:.16e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

// Dormand-Prince 5(4) tableau. The field is autonomous, so the nodes c_i
// are not needed.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// difference between the 5th and embedded 4th order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// dense output
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;

/// Continuous extension over one accepted step.
struct Dense {
    t0: f64,
    h: f64,
    r1: Vector,
    r2: Vector,
    r3: Vector,
    r4: Vector,
    r5: Vector,
}

impl Dense {
    fn eval(&self, t: f64) -> Vector {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        &self.r1 + (&self.r2 + (&self.r3 + (&self.r4 + &self.r5 * th1) * th) * th1) * th
    }
}

fn scaled_norm(e: &Vector, y0: &Vector, y1: &Vector, rtol: f64, atol: f64) -> f64 {
    let n = e.len() as f64;
    let sum: f64 = (0..e.len())
        .map(|i| {
            let sc = atol + rtol * y0[i].abs().max(y1[i].abs());
            (e[i] / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

fn initial_step(f0: &Vector, x0: &Vector, opts: &IntegrateOptions, span: f64) -> f64 {
    if let Some(h) = opts.h0 {
        return h.min(span);
    }
    let d0 = scaled_norm(x0, x0, x0, opts.rtol, opts.atol);
    let d1 = scaled_norm(f0, x0, x0, opts.rtol, opts.atol);
    let h = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h.min(span)
}

/// Integrates from `x0` over `[0, t_end]`.
///
/// Steps that would make any component nonpositive are rejected and retried
/// with a smaller step, so every recorded state is strictly positive.
pub fn integrate(
    a: &Matrix,
    x0: &Vector,
    t_end: f64,
    opts: &IntegrateOptions,
) -> Result<Trajectory, SimError> {
    let n = x0.len();
    if !a.is_square() || a.nrows() != n || n == 0 {
        return Err(SimError::InvalidInput(format!(
            "matrix is {}x{} but the state has length {n}",
            a.nrows(),
            a.ncols()
        )));
    }
    if let Some((i, v)) = x0.iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
        return Err(SimError::InvalidInput(format!("x0[{i}] = {v} is not positive")));
    }
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(SimError::InvalidInput(format!("t_end must be positive, got {t_end}")));
    }
    if !(opts.rtol > 0.0) || !(opts.atol >= 0.0) {
        return Err(SimError::InvalidInput("tolerances must be positive".into()));
    }
    let requested: Option<&[f64]> = match &opts.samples {
        SampleGrid::AcceptedSteps => None,
        SampleGrid::Times(ts) => {
            if ts.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(SimError::InvalidInput("sample times must increase".into()));
            }
            if ts.first().is_some_and(|&t| t < 0.0) || ts.last().is_some_and(|&t| t > t_end) {
                return Err(SimError::InvalidInput("sample times must lie in [0, t_end]".into()));
            }
            Some(ts)
        }
    };

    let field = |x: &Vector| normalized_field(a, x);
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        step_stats: StepStats::default(),
    };
    let mut next_sample = 0usize;
    match requested {
        None => {
            traj.times.push(0.0);
            traj.states.push(x0.clone());
        }
        Some(ts) => {
            while next_sample < ts.len() && ts[next_sample] <= 0.0 {
                traj.times.push(ts[next_sample]);
                traj.states.push(x0.clone());
                next_sample += 1;
            }
        }
    }

    let mut t = 0.0;
    let mut x = x0.clone();
    let mut k1 = field(&x);
    let mut h = initial_step(&k1, &x, opts, t_end);
    let mut last_rejected = false;
    let mut steps = 0usize;

    while t < t_end {
        if steps >= opts.max_steps {
            return Err(SimError::MaxStepsExceeded {
                t,
                max_steps: opts.max_steps,
            });
        }
        steps += 1;
        if h < 16.0 * f64::EPSILON * t.abs().max(1.0) {
            let norm = x.amax();
            if norm > BLOWUP_GROWTH * x0.amax().max(1.0) {
                return Err(SimError::BlowUp { t, norm });
            }
            return Err(SimError::StepSizeUnderflow { t, h });
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }

        let k2 = field(&(&x + &k1 * (h * A21)));
        let k3 = field(&(&x + (&k1 * A31 + &k2 * A32) * h));
        let k4 = field(&(&x + (&k1 * A41 + &k2 * A42 + &k3 * A43) * h));
        let k5 = field(&(&x + (&k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h));
        let k6 = field(&(&x + (&k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h));
        let x_new = &x + (&k1 * A71 + &k3 * A73 + &k4 * A74 + &k5 * A75 + &k6 * A76) * h;
        let k7 = field(&x_new);
        let e = (&k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
        let err = scaled_norm(&e, &x, &x_new, opts.rtol, opts.atol);

        let positive = x_new.iter().all(|v| *v > 0.0);
        if !err.is_finite() || !positive {
            traj.step_stats.rejected += 1;
            h *= 0.25;
            last_rejected = true;
            continue;
        }
        if err > 1.0 {
            traj.step_stats.rejected += 1;
            h *= (SAFETY * err.powf(-0.2)).max(FAC_MIN);
            last_rejected = true;
            continue;
        }

        traj.step_stats.accepted += 1;
        traj.step_stats.max_error = traj.step_stats.max_error.max(err);
        let t_new = if last { t_end } else { t + h };

        if let Some(ts) = requested {
            if next_sample < ts.len() && ts[next_sample] <= t_new {
                let diff = &x_new - &x;
                let bspl = &k1 * h - &diff;
                let dense = Dense {
                    t0: t,
                    h,
                    r1: x.clone(),
                    r4: &diff - &k7 * h - &bspl,
                    r2: diff,
                    r3: bspl,
                    r5: (&k1 * D1 + &k3 * D3 + &k4 * D4 + &k5 * D5 + &k6 * D6 + &k7 * D7) * h,
                };
                while next_sample < ts.len() && ts[next_sample] <= t_new {
                    let ts_i = ts[next_sample];
                    let state = if ts_i == t_new { x_new.clone() } else { dense.eval(ts_i) };
                    traj.times.push(ts_i);
                    traj.states.push(state);
                    next_sample += 1;
                }
            }
        } else {
            traj.times.push(t_new);
            traj.states.push(x_new.clone());
        }

        let norm = x_new.amax();
        if !(norm <= BLOWUP_GUARD) {
            return Err(SimError::BlowUp { t: t_new, norm });
        }

        let mut fac = if err == 0.0 {
            FAC_MAX
        } else {
            (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, FAC_MAX)
        };
        if last_rejected {
            fac = fac.min(1.0);
        }
        last_rejected = false;
        t = t_new;
        x = x_new;
        k1 = k7;
        h *= fac;
    }
    Ok(traj)
}

/// Tail-window settings for [`analyze`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyzeOptions {
    /// Fraction of the time span treated as the tail.
    pub tail_fraction: f64,
    pub conv_tol: f64,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            tail_fraction: 0.2,
            conv_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceReport {
    pub liminf_estimates: Vector,
    pub limsup_estimates: Vector,
    pub uniform_bound_estimate: f64,
    pub converged_to: Option<Vector>,
    pub convergence_time: Option<f64>,
    pub tail_samples: usize,
}

/// Equilibrium of the face spanned by the components of `x` above `tol`:
/// `x_S = 1 + A_SS^{-1} A_{S,S^c} 1`, zero elsewhere.
fn face_equilibrium(a: &Matrix, x: &Vector, tol: f64) -> Option<Vector> {
    let support: Vec<usize> = (0..x.len()).filter(|&i| x[i] > tol).collect();
    let mut eq = Vector::zeros(x.len());
    if support.is_empty() {
        return Some(eq);
    }
    let m = support.len();
    let a_ss = Matrix::from_fn(m, m, |i, j| a[(support[i], support[j])]);
    let rhs = Vector::from_fn(m, |i, _| {
        (0..x.len())
            .filter(|j| !support.contains(j))
            .map(|j| a[(support[i], j)])
            .sum::<f64>()
    });
    let sol = a_ss.lu().solve(&rhs)?;
    for (i, &s) in support.iter().enumerate() {
        eq[s] = 1.0 + sol[i];
    }
    Some(eq)
}

/// Tail statistics of a trajectory of `x' = diag(x) A (x - 1)`.
pub fn analyze(
    traj: &Trajectory,
    a: &Matrix,
    opts: &AnalyzeOptions,
) -> Result<PersistenceReport, SimError> {
    if traj.len() < 2 || traj.states.len() != traj.len() {
        return Err(SimError::InvalidInput("need at least two samples".into()));
    }
    let t_first = traj.times[0];
    let t_last = *traj.times.last().expect("nonempty");
    let cutoff = t_last - opts.tail_fraction * (t_last - t_first);
    let mut start = traj.times.partition_point(|&t| t < cutoff);
    start = start.min(traj.len() - 2);
    let tail = &traj.states[start..];

    let n = tail[0].len();
    let mut lo = Vector::from_element(n, f64::INFINITY);
    let mut hi = Vector::from_element(n, f64::NEG_INFINITY);
    for x in tail {
        for i in 0..n {
            lo[i] = lo[i].min(x[i]);
            hi[i] = hi[i].max(x[i]);
        }
    }

    let x_last = traj.states.last().expect("nonempty");
    let mut converged_to = None;
    let mut convergence_time = None;
    if normalized_field(a, x_last).amax() < opts.conv_tol {
        if let Some(eq) = face_equilibrium(a, x_last, opts.conv_tol) {
            if (x_last - &eq).amax() < opts.conv_tol {
                let mut first = traj.len() - 1;
                while first > 0 && (&traj.states[first - 1] - &eq).amax() < opts.conv_tol {
                    first -= 1;
                }
                convergence_time = Some(traj.times[first] - t_first);
                converged_to = Some(eq);
            }
        }
    }

    Ok(PersistenceReport {
        uniform_bound_estimate: hi.max(),
        liminf_estimates: lo,
        limsup_estimates: hi,
        converged_to,
        convergence_time,
        tail_samples: tail.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOptions {
    pub t_end: f64,
    pub integrate: IntegrateOptions,
    pub analyze: AnalyzeOptions,
    /// Initial conditions are log-uniform in `[low, high]^n`.
    pub low: f64,
    pub high: f64,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            t_end: 500.0,
            integrate: IntegrateOptions::default(),
            analyze: AnalyzeOptions::default(),
            low: 1e-2,
            high: 1e2,
        }
    }
}

/// Outcome for one ensemble member.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleOutcome {
    Completed {
        x0: Vector,
        report: PersistenceReport,
        terminal_error: f64,
    },
    Unbounded { x0: Vector, t: f64 },
    Failed { x0: Vector, error: SimError },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleReport {
    pub n_samples: usize,
    /// Samples that converged to `1_n`.
    pub converged: usize,
    pub unbounded: usize,
    pub failed: usize,
    /// Minimum over completed samples of the tail minima.
    pub min_liminf: f64,
    /// Maximum over completed samples of the tail maxima.
    pub max_limsup: f64,
    /// Largest `|x(t_end) - 1|_inf` among completed samples.
    pub max_terminal_error: f64,
    pub samples: Vec<SampleOutcome>,
}

impl EnsembleReport {
    pub fn fraction_converged(&self) -> f64 {
        self.converged as f64 / self.n_samples as f64
    }
}

/// Integrates from `n_samples` random interior points and aggregates tail
/// statistics. Samples run in parallel and are merged in index order.
pub fn ensemble_diagnostics(
    a: &Matrix,
    n_samples: usize,
    seed: u64,
    opts: &EnsembleOptions,
) -> Result<EnsembleReport, SimError> {
    if n_samples == 0 {
        return Err(SimError::InvalidInput("need at least one sample".into()));
    }
    if !(opts.low > 0.0 && opts.high >= opts.low) {
        return Err(SimError::InvalidInput("sampling box must be positive".into()));
    }
    let n = a.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ll, lh) = (opts.low.ln(), opts.high.ln());
    let starts: Vec<Vector> = (0..n_samples)
        .map(|_| Vector::from_fn(n, |_, _| rng.gen_range(ll..=lh).exp()))
        .collect();

    let one = Vector::from_element(n, 1.0);
    let samples: Vec<SampleOutcome> = starts
        .into_par_iter()
        .map(|x0| match integrate(a, &x0, opts.t_end, &opts.integrate) {
            Ok(traj) => match analyze(&traj, a, &opts.analyze) {
                Ok(report) => {
                    let terminal_error = (traj.last_state().expect("nonempty") - &one).amax();
                    SampleOutcome::Completed {
                        x0,
                        report,
                        terminal_error,
                    }
                }
                Err(error) => SampleOutcome::Failed { x0, error },
            },
            Err(SimError::BlowUp { t, .. }) => SampleOutcome::Unbounded { x0, t },
            Err(error) => SampleOutcome::Failed { x0, error },
        })
        .collect();

    let mut out = EnsembleReport {
        n_samples,
        converged: 0,
        unbounded: 0,
        failed: 0,
        min_liminf: f64::INFINITY,
        max_limsup: f64::NEG_INFINITY,
        max_terminal_error: 0.0,
        samples: Vec::new(),
    };
    for s in &samples {
        match s {
            SampleOutcome::Completed {
                report,
                terminal_error,
                ..
            } => {
                out.min_liminf = out.min_liminf.min(report.liminf_estimates.min());
                out.max_limsup = out.max_limsup.max(report.limsup_estimates.max());
                out.max_terminal_error = out.max_terminal_error.max(*terminal_error);
                let at_one = report
                    .converged_to
                    .as_ref()
                    .is_some_and(|p| (p - &one).amax() < opts.analyze.conv_tol);
                if at_one {
                    out.converged += 1;
                }
            }
            SampleOutcome::Unbounded { .. } => out.unbounded += 1,
            SampleOutcome::Failed { .. } => out.failed += 1,
        }
    }
    out.samples = samples;
    Ok(out)
}
