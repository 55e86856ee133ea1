//! Decay-rate fits, separability times and size sweeps of concurrence
//! trajectories.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{propagate, EnvironmentKind, EnvironmentSpec, PropagatorConfig, PropagatorMethod};
use crate::error::{invalid, Error, Result};
use crate::roof::{estimate_roof_from, Decomposition, RoofConfig};
use crate::state::{ghz_state, w_state, DensityMatrix, PureState, QubitCount};

/// Fit window starts once the value has dropped to this fraction of `value(0)`.
pub const FIT_UPPER: f64 = 0.9;
/// Fit window ends at this fraction of `value(0)`...
pub const FIT_LOWER: f64 = 0.05;
/// ...or at this absolute floor, whichever is larger.
pub const FIT_FLOOR: f64 = 1e-3;
pub const MIN_FIT_POINTS: usize = 10;
/// Fits below this coefficient of determination are flagged.
pub const GOOD_FIT_R2: f64 = 0.98;
/// Default threshold for [`separability_time`].
pub const SEPARABILITY_EPS: f64 = 1e-4;
/// Consecutive samples below the threshold that end an extended run.
pub const CONFIRM_SAMPLES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateFamily {
    Ghz,
    W,
}

impl StateFamily {
    pub const ALL: [StateFamily; 2] = [StateFamily::Ghz, StateFamily::W];

    pub fn label(self) -> &'static str {
        match self {
            Self::Ghz => "ghz",
            Self::W => "w",
        }
    }

    pub fn state(self, n: QubitCount) -> PureState {
        match self {
            Self::Ghz => ghz_state(n),
            Self::W => w_state(n),
        }
    }
}

impl fmt::Display for StateFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for StateFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ghz" => Ok(Self::Ghz),
            "w" => Ok(Self::W),
            _ => Err(invalid(format!("unknown state family '{s}'"))),
        }
    }
}

/// Where a trajectory came from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub family: StateFamily,
    pub n: QubitCount,
    pub environment: EnvironmentKind,
    pub rate: f64,
    pub method: PropagatorMethod,
    pub seed: u64,
}

/// Concurrence values on an increasing time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    values: Vec<f64>,
    meta: Option<TrajectoryMeta>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(invalid(format!("{} times but {} values", times.len(), values.len())));
        }
        if times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(invalid("times must be finite and nonnegative"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("times must be strictly increasing"));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(invalid("values must be finite and nonnegative"));
        }
        Ok(Self { times, values, meta: None })
    }

    pub fn with_meta(mut self, meta: TrajectoryMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn meta(&self) -> Option<&TrajectoryMeta> {
        self.meta.as_ref()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// `value ≈ amplitude · e^{−gamma t}` over `window`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub gamma: f64,
    pub amplitude: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub points_used: usize,
}

impl DecayFit {
    pub fn is_good(&self) -> bool {
        self.r_squared >= GOOD_FIT_R2
    }
}

/// Index range `[lo, hi]` from the first sample at or below the upper cut to
/// the last sample at or above the lower cut.
fn fit_window(values: &[f64]) -> Option<(usize, usize)> {
    let v0 = *values.first()?;
    if !(v0 > 0.0) {
        return None;
    }
    let upper = FIT_UPPER * v0;
    let lower = (FIT_LOWER * v0).max(FIT_FLOOR);
    let lo = values.iter().position(|&v| v <= upper)?;
    let hi = values.iter().rposition(|&v| v >= lower)?;
    (hi >= lo).then_some((lo, hi))
}

fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };
    (slope, intercept, r2)
}

/// Least-squares fit of `ln value` against `t` inside the decay window.
pub fn fit_exponential(traj: &Trajectory) -> Result<DecayFit> {
    let Some((lo, mut hi)) = fit_window(&traj.values) else {
        return Err(Error::InsufficientData { points: 0, required: MIN_FIT_POINTS });
    };
    // a vanishing estimate inside the window cuts it short, once
    if let Some(k) = traj.values[lo..=hi].iter().position(|&v| v <= 0.0) {
        if k == 0 {
            return Err(Error::WindowTruncated);
        }
        hi = lo + k - 1;
        if traj.values[lo..=hi].iter().any(|&v| v <= 0.0) {
            return Err(Error::WindowTruncated);
        }
    }
    let points = hi + 1 - lo;
    if points < MIN_FIT_POINTS {
        return Err(Error::InsufficientData { points, required: MIN_FIT_POINTS });
    }
    let x = &traj.times[lo..=hi];
    let y: Vec<f64> = traj.values[lo..=hi].iter().map(|v| v.ln()).collect();
    let (slope, intercept, r_squared) = linear_fit(x, &y);
    Ok(DecayFit {
        gamma: -slope,
        amplitude: intercept.exp(),
        r_squared,
        window: (x[0], x[x.len() - 1]),
        points_used: points,
    })
}

/// Earliest sample time after which every value stays below `eps`.
pub fn separability_time(traj: &Trajectory, eps: f64) -> Option<f64> {
    let tail = traj.values.iter().rev().take_while(|&&v| v < eps).count();
    (tail > 0).then(|| traj.times[traj.len() - tail])
}

/// One trajectory run: propagation plus a roof estimate per sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub family: StateFamily,
    pub n: QubitCount,
    pub environment: EnvironmentSpec,
    pub propagator: PropagatorConfig,
    pub roof: RoofConfig,
    /// Keep sampling past `t_max`, up to this time, until the trajectory
    /// has stayed below the separability threshold for
    /// [`CONFIRM_SAMPLES`] samples.
    pub extend_until: Option<f64>,
    /// End the run once it is confirmed separable, even before `t_max`.
    pub stop_when_separable: bool,
}

impl SimulationConfig {
    /// Grid defaults: `dt = 0.01/Γ`, `t_max = 5/Γ`, runs at infinite
    /// temperature extended to `10/Γ`.
    pub fn with_defaults(family: StateFamily, n: QubitCount, environment: EnvironmentSpec) -> Self {
        let g = environment.gamma;
        Self {
            family,
            n,
            environment,
            propagator: PropagatorConfig {
                method: PropagatorMethod::ExactChannel,
                dt: 0.01 / g,
                t_max: 5.0 / g,
                sample_every: 5,
            },
            roof: RoofConfig::default(),
            extend_until: (environment.kind == EnvironmentKind::InfiniteTemperature).then_some(10.0 / g),
            stop_when_separable: false,
        }
    }

    pub fn meta(&self) -> TrajectoryMeta {
        TrajectoryMeta {
            family: self.family,
            n: self.n,
            environment: self.environment.kind,
            rate: self.environment.gamma,
            method: self.propagator.method,
            seed: self.roof.seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleRecord {
    pub t: f64,
    pub c_estimate: f64,
    pub purity: f64,
    pub trace_error: f64,
    pub roof_converged: bool,
}

#[derive(Clone, Debug)]
pub struct Simulation {
    pub records: Vec<SampleRecord>,
    pub trajectory: Trajectory,
}

impl Simulation {
    pub fn fit(&self) -> Result<DecayFit> {
        fit_exponential(&self.trajectory)
    }

    pub fn separability_time(&self) -> Option<f64> {
        separability_time(&self.trajectory, SEPARABILITY_EPS)
    }
}

/// Roof estimates along a list of states, each warm-started from the
/// decomposition found for the previous one. Sample `k` draws its random
/// starts from its own seed so the samples explore different starts.
fn estimate_along(states: &[DensityMatrix], offset: usize, cfg: &RoofConfig, warm: &mut Option<Decomposition>) -> Result<Vec<(f64, bool)>> {
    let mut out = Vec::with_capacity(states.len());
    for (k, rho) in states.iter().enumerate() {
        let sample_cfg = RoofConfig { seed: cfg.seed ^ ((offset + k) as u64).rotate_left(32), ..*cfg };
        match estimate_roof_from(rho, &sample_cfg, warm.as_ref()) {
            Ok(est) => {
                out.push((est.value.value(), est.converged));
                *warm = Some(est.decomposition);
            }
            Err(Error::OptimizationStalled { best }) => out.push((best, false)),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn records_for(states: &[DensityMatrix], times: &[f64], estimates: &[(f64, bool)]) -> Vec<SampleRecord> {
    states
        .iter()
        .zip(times)
        .zip(estimates)
        .map(|((rho, &t), &(c, converged))| SampleRecord {
            t,
            c_estimate: c,
            purity: rho.purity(),
            trace_error: (rho.trace() - 1.0).norm(),
            roof_converged: converged,
        })
        .collect()
}

fn confirmed_separable(records: &[SampleRecord]) -> bool {
    records.len() >= CONFIRM_SAMPLES
        && records[records.len() - CONFIRM_SAMPLES..].iter().all(|r| r.c_estimate < SEPARABILITY_EPS)
}

/// Propagates the initial state of `cfg.family` and estimates the
/// concurrence at every sample.
///
/// Samples are produced in chunks of [`CONFIRM_SAMPLES`] on one fixed step
/// grid. Separability survives local channels, so once a run is confirmed
/// separable the remaining samples carry no information; with
/// `stop_when_separable` the run ends there.
pub fn simulate(cfg: &SimulationConfig) -> Result<Simulation> {
    cfg.propagator.validate(&cfg.environment)?;
    cfg.roof.validate()?;
    let h = cfg.propagator.step_size();
    let stride = cfg.propagator.sample_every;
    let t_max = cfg.propagator.t_max;
    let horizon = cfg.extend_until.map_or(t_max, |l| l.max(t_max));
    let chunk = PropagatorConfig {
        dt: h,
        t_max: h * (stride * CONFIRM_SAMPLES) as f64,
        ..cfg.propagator
    };
    let sample_time = |k: usize| (k * stride) as f64 * h;

    let mut last = DensityMatrix::from_pure(&cfg.family.state(cfg.n));
    let mut warm = None;
    let first = estimate_along(std::slice::from_ref(&last), 0, &cfg.roof, &mut warm)?;
    let mut records = records_for(std::slice::from_ref(&last), &[0.0], &first);
    loop {
        let k = records.len();
        let separable = confirmed_separable(&records);
        let done = if sample_time(k) > t_max + 0.5 * h {
            cfg.extend_until.is_none() || separable || sample_time(k) > horizon + 0.5 * h
        } else {
            cfg.stop_when_separable && separable
        };
        if done {
            break;
        }
        let part = propagate(&last, &cfg.environment, &chunk)?;
        let limit = if cfg.extend_until.is_some() { horizon } else { t_max };
        let keep = (1..part.states.len()).take_while(|&j| sample_time(k + j - 1) <= limit + 0.5 * h).count();
        if keep == 0 {
            break;
        }
        let states = &part.states[1..=keep];
        let times: Vec<f64> = (0..keep).map(|j| sample_time(k + j)).collect();
        let est = estimate_along(states, k, &cfg.roof, &mut warm)?;
        records.extend(records_for(states, &times, &est));
        last = states[keep - 1].clone();
    }

    let trajectory = Trajectory::new(
        records.iter().map(|r| r.t).collect(),
        records.iter().map(|r| r.c_estimate).collect(),
    )?
    .with_meta(cfg.meta());
    Ok(Simulation { records, trajectory })
}

/// Shared settings of a sweep; the grid is in units of `1/rate`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub rate: f64,
    pub method: PropagatorMethod,
    pub dt: f64,
    pub t_max: f64,
    pub sample_every: usize,
    /// Sampling stride at infinite temperature, where entanglement dies
    /// within a fraction of `1/rate` and the coarse grid leaves too few
    /// points in the fit window.
    pub fine_sample_every: usize,
    /// Extension limit for infinite-temperature runs.
    pub t_limit: f64,
    pub roof: RoofConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            rate: 1.0,
            method: PropagatorMethod::ExactChannel,
            dt: 0.01,
            t_max: 5.0,
            sample_every: 5,
            fine_sample_every: 1,
            t_limit: 10.0,
            roof: RoofConfig::default(),
        }
    }
}

impl SweepConfig {
    pub fn simulation(&self, family: StateFamily, n: QubitCount, kind: EnvironmentKind) -> Result<SimulationConfig> {
        let environment = EnvironmentSpec::new(kind, self.rate)?;
        let infinite = kind == EnvironmentKind::InfiniteTemperature;
        Ok(SimulationConfig {
            family,
            n,
            environment,
            propagator: PropagatorConfig {
                method: self.method,
                dt: self.dt,
                t_max: self.t_max,
                sample_every: if infinite { self.fine_sample_every } else { self.sample_every },
            },
            roof: self.roof,
            extend_until: infinite.then_some(self.t_limit),
            stop_when_separable: true,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub n: QubitCount,
    pub family: StateFamily,
    pub environment: EnvironmentKind,
    /// Fitted rate over the reservoir rate; `None` when the fit failed.
    pub gamma_over_rate: Option<f64>,
    pub r_squared: Option<f64>,
    pub t_sep: Option<f64>,
    /// Fit failed or fell below [`GOOD_FIT_R2`].
    pub flagged: bool,
}

/// Fits one trajectory per `(n, family, environment)`; rows come back in
/// that nesting order whatever the completion order of the parallel jobs.
pub fn sweep_decay_rates(
    families: &[StateFamily],
    environments: &[EnvironmentKind],
    n_range: std::ops::RangeInclusive<usize>,
    cfg: &SweepConfig,
) -> Result<Vec<SweepRow>> {
    if *n_range.start() < 2 || *n_range.end() > 10 || n_range.is_empty() {
        return Err(invalid(format!(
            "sweep range {}..={} must lie within 2..=10",
            n_range.start(),
            n_range.end()
        )));
    }
    let mut jobs = Vec::new();
    for n in n_range {
        for &family in families {
            for &env in environments {
                jobs.push((QubitCount::new(n)?, family, env));
            }
        }
    }
    jobs.par_iter()
        .map(|&(n, family, env)| {
            let sim = simulate(&cfg.simulation(family, n, env)?)?;
            let fit = sim.fit().ok();
            Ok(SweepRow {
                n,
                family,
                environment: env,
                gamma_over_rate: fit.map(|f| f.gamma / cfg.rate),
                r_squared: fit.map(|f| f.r_squared),
                t_sep: sim.separability_time(),
                flagged: !fit.is_some_and(|f| f.is_good()),
            })
        })
        .collect()
}
