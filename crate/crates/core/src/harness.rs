//! Run specifications and the artifacts of the four commands.
//!
//! Every command is a pure function from a [`RunSpec`] to text; writing
//! files is left to the caller so outputs can be compared byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::concurrence::{concurrence_pure, ghz_concurrence, ghz_w_ratio, wootters_concurrence_2q};
use crate::decay::{
    simulate, sweep_decay_rates, Simulation, SimulationConfig, StateFamily, SweepConfig, SweepRow,
};
use crate::environment::{
    evolve_exact, evolve_ode, single_qubit_channel, EnvironmentKind, EnvironmentSpec, PropagatorConfig,
    PropagatorMethod,
};
use crate::error::{Error, Result};
use crate::random::{random_density, random_pure_state, stream_rng};
use crate::roof::{estimate_roof, roof_rank2, RoofConfig, RANK2_CUTOFF};
use crate::state::{DensityMatrix, PureState, QubitCount, SubsetMask, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Simulate,
    Sweep,
    Concurrence,
    Validate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateChoice {
    Ghz,
    W,
    File,
}

impl StateChoice {
    fn family(self) -> Option<StateFamily> {
        match self {
            Self::Ghz => Some(StateFamily::Ghz),
            Self::W => Some(StateFamily::W),
            Self::File => None,
        }
    }
}

/// Complete description of one invocation. `state` and `env` hold one entry
/// for single runs and any number for sweeps; `n..=n_max` is the sweep range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub command: Command,
    pub state: Vec<StateChoice>,
    pub state_file: Option<PathBuf>,
    pub n: usize,
    pub n_max: Option<usize>,
    pub env: Vec<EnvironmentKind>,
    pub rate: f64,
    pub method: PropagatorMethod,
    /// Defaults to `0.01/rate`.
    pub dt: Option<f64>,
    /// Defaults to `5/rate`.
    pub t_max: Option<f64>,
    pub sample_every: usize,
    /// Defaults to 2 for trajectory commands and 8 for single states.
    pub restarts: Option<usize>,
    pub max_iters: usize,
    pub ensemble_size: Option<usize>,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            command: Command::Simulate,
            state: vec![StateChoice::Ghz],
            state_file: None,
            n: 3,
            n_max: None,
            env: vec![EnvironmentKind::ZeroTemperature],
            rate: 1.0,
            method: PropagatorMethod::ExactChannel,
            dt: None,
            t_max: None,
            sample_every: 5,
            restarts: None,
            max_iters: 500,
            ensemble_size: None,
            seed: 0,
            out: None,
        }
    }
}

impl RunSpec {
    /// Reads a spec file; a simulate sidecar is accepted as well.
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Sidecar {
            spec: RunSpec,
        }
        serde_json::from_str::<RunSpec>(text)
            .or_else(|first| serde_json::from_str::<Sidecar>(text).map(|s| s.spec).map_err(|_| first))
            .map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_text(path)?)
    }

    /// Fills in the rate-dependent grid defaults.
    pub fn resolved(mut self) -> Self {
        self.dt.get_or_insert(0.01 / self.rate);
        self.t_max.get_or_insert(5.0 / self.rate);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0) || !self.rate.is_finite() {
            return Err(usage(format!("--rate must be positive, got {}", self.rate)));
        }
        if self.sample_every == 0 {
            return Err(usage("--sample-every must be at least 1"));
        }
        if self.restarts == Some(0) {
            return Err(usage("--restarts must be at least 1"));
        }
        let single = |what: &str, len: usize| {
            if len == 1 {
                Ok(())
            } else {
                Err(usage(format!("{:?} takes exactly one {what}", self.command).to_lowercase()))
            }
        };
        match self.command {
            Command::Simulate => {
                single("state", self.state.len())?;
                single("environment", self.env.len())?;
                if self.state[0] == StateChoice::File {
                    return Err(usage("simulate needs a built-in state (ghz or w)"));
                }
                QubitCount::new(self.n)?;
            }
            Command::Sweep => {
                if self.state.is_empty() || self.env.is_empty() {
                    return Err(usage("sweep needs at least one state and one environment"));
                }
                if self.state.contains(&StateChoice::File) {
                    return Err(usage("sweep runs built-in states only"));
                }
                let hi = self.n_max.unwrap_or(self.n);
                if self.n < 2 || hi > 10 || hi < self.n {
                    return Err(usage(format!("sweep range {}..={hi} must lie within 2..=10", self.n)));
                }
            }
            Command::Concurrence => {
                single("state", self.state.len())?;
                match (self.state[0], &self.state_file) {
                    (StateChoice::File, None) => return Err(usage("--state file needs --state-file")),
                    (StateChoice::File, Some(_)) => {}
                    _ => {
                        QubitCount::new(self.n)?;
                    }
                }
            }
            Command::Validate => {}
        }
        Ok(())
    }

    fn roof(&self, default_restarts: usize) -> RoofConfig {
        RoofConfig {
            ensemble_size: self.ensemble_size,
            restarts: self.restarts.unwrap_or(default_restarts),
            max_iters: self.max_iters,
            seed: self.seed,
            ..RoofConfig::default()
        }
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

/// Process exit status for an error: 2 for usage and input problems, 3 for
/// I/O, 1 for everything that went wrong numerically.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Usage(_) | Error::InvalidArgument(_) | Error::Parse { .. } => 2,
        Error::Io { .. } => 3,
        _ => 1,
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// Twelve significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.11e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

/// A state read from a file.
#[derive(Clone, Debug)]
pub enum StateInput {
    Pure(PureState),
    Mixed(DensityMatrix),
}

impl StateInput {
    pub fn num_qubits(&self) -> usize {
        match self {
            Self::Pure(p) => p.num_qubits(),
            Self::Mixed(m) => m.num_qubits(),
        }
    }
}

/// Parses whitespace-separated `re im` pairs: one pair per line is a vector
/// of amplitudes, `2^N` pairs per line a row-major density matrix. Blank
/// lines and `#` comments are skipped.
pub fn parse_state(text: &str) -> Result<StateInput> {
    let mut rows: Vec<(usize, Vec<C64>)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = body.split_whitespace().collect();
        if tokens.len() % 2 != 0 {
            return Err(Error::Parse { line, message: format!("odd number of tokens ({})", tokens.len()) });
        }
        let mut row = Vec::with_capacity(tokens.len() / 2);
        for pair in tokens.chunks(2) {
            let parse = |t: &str| {
                t.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::Parse { line, message: format!("'{t}' is not a finite number") })
            };
            row.push(C64::new(parse(pair[0])?, parse(pair[1])?));
        }
        rows.push((line, row));
    }
    let last_line = rows.last().map_or(1, |r| r.0);
    let dim = rows.len();
    if dim < 4 || !dim.is_power_of_two() {
        return Err(Error::Parse {
            line: last_line,
            message: format!("{dim} rows; need 2^N rows with N ≥ 2"),
        });
    }
    let width = rows[0].1.len();
    if let Some((line, row)) = rows.iter().find(|(_, r)| r.len() != width) {
        return Err(Error::Parse { line: *line, message: format!("{} entries, expected {width}", row.len()) });
    }
    let wrap = |e: Error| Error::Parse { line: last_line, message: e.to_string() };
    match width {
        1 => Ok(StateInput::Pure(
            PureState::from_amplitudes(rows.into_iter().map(|(_, r)| r[0]).collect()).map_err(wrap)?,
        )),
        w if w == dim => {
            let m = nalgebra::DMatrix::from_fn(dim, dim, |i, j| rows[i].1[j]);
            Ok(StateInput::Mixed(DensityMatrix::from_matrix(m).map_err(wrap)?))
        }
        w => Err(Error::Parse {
            line: rows[0].0,
            message: format!("{w} entries per row; expected 1 (amplitudes) or {dim} (density matrix)"),
        }),
    }
}

/// Artifacts of `simulate`.
#[derive(Clone, Debug)]
pub struct SimulateOutput {
    pub csv: String,
    pub sidecar: String,
    pub simulation: Simulation,
}

#[derive(Serialize)]
struct SidecarOut<'a> {
    spec: &'a RunSpec,
    gamma: Option<f64>,
    gamma_over_rate: Option<f64>,
    r_squared: Option<f64>,
    t_sep: Option<f64>,
}

pub const SIMULATE_HEADER: &str = "t,c_estimate,purity,trace_error,roof_converged";
pub const SWEEP_HEADER: &str = "n,state,env,gamma_over_rate,r_squared,t_sep";

pub fn simulation_csv(sim: &Simulation) -> String {
    let mut out = String::from(SIMULATE_HEADER);
    out.push('\n');
    for r in &sim.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_num(r.t),
            fmt_num(r.c_estimate),
            fmt_num(r.purity),
            fmt_num(r.trace_error),
            r.roof_converged
        );
    }
    out
}

pub fn cmd_simulate(spec: &RunSpec) -> Result<SimulateOutput> {
    spec.validate()?;
    let spec = spec.clone().resolved();
    let family = spec.state[0].family().expect("validated");
    let environment = EnvironmentSpec::new(spec.env[0], spec.rate)?;
    let cfg = SimulationConfig {
        family,
        n: QubitCount::new(spec.n)?,
        environment,
        propagator: PropagatorConfig {
            method: spec.method,
            dt: spec.dt.expect("resolved"),
            t_max: spec.t_max.expect("resolved"),
            sample_every: spec.sample_every,
        },
        roof: spec.roof(2),
        extend_until: None,
        stop_when_separable: false,
    };
    let simulation = simulate(&cfg)?;
    let fit = simulation.fit().ok();
    let sidecar = serde_json::to_string_pretty(&SidecarOut {
        spec: &spec,
        gamma: fit.map(|f| f.gamma),
        gamma_over_rate: fit.map(|f| f.gamma / spec.rate),
        r_squared: fit.map(|f| f.r_squared),
        t_sep: simulation.separability_time(),
    })
    .expect("sidecar serializes");
    Ok(SimulateOutput { csv: simulation_csv(&simulation), sidecar: sidecar + "\n", simulation })
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.n.get(),
            r.family,
            r.environment,
            fmt_opt(r.gamma_over_rate),
            fmt_opt(r.r_squared),
            fmt_opt(r.t_sep)
        );
    }
    out
}

pub fn sweep_config(spec: &RunSpec) -> SweepConfig {
    let spec = spec.clone().resolved();
    SweepConfig {
        rate: spec.rate,
        method: spec.method,
        dt: spec.dt.expect("resolved"),
        t_max: spec.t_max.expect("resolved"),
        sample_every: spec.sample_every,
        t_limit: 10.0 / spec.rate,
        roof: spec.roof(2),
        ..SweepConfig::default()
    }
}

/// Sweep rows and their CSV.
pub fn cmd_sweep(spec: &RunSpec) -> Result<(Vec<SweepRow>, String)> {
    spec.validate()?;
    let families: Vec<StateFamily> = spec.state.iter().filter_map(|s| s.family()).collect();
    let hi = spec.n_max.unwrap_or(spec.n);
    let rows = sweep_decay_rates(&families, &spec.env, spec.n..=hi, &sweep_config(spec))?;
    let csv = sweep_csv(&rows);
    Ok((rows, csv))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcurrenceRecord {
    pub n: usize,
    pub pure: bool,
    pub c_n: f64,
    pub method: String,
    pub restarts_spread: f64,
}

/// Concurrence of one state: closed evaluation for pure inputs, the rank-2
/// search for rank two, the roof estimator otherwise.
pub fn concurrence_of(input: &StateInput, roof: &RoofConfig) -> Result<ConcurrenceRecord> {
    let n = input.num_qubits();
    let (pure, c_n, method, spread) = match input {
        StateInput::Pure(psi) => (true, concurrence_pure(psi)?.value(), "pure", 0.0),
        StateInput::Mixed(rho) => match rho.rank(RANK2_CUTOFF) {
            0 | 1 => {
                let (_, vecs) = rho.eigen();
                let psi = PureState::normalized(vecs.column(0).iter().copied().collect())?;
                (false, concurrence_pure(&psi)?.value(), "pure", 0.0)
            }
            2 => (false, roof_rank2(rho)?.value.value(), "rank2", 0.0),
            _ => {
                let est = estimate_roof(rho, roof)?;
                (false, est.value.value(), "roof", est.spread)
            }
        },
    };
    Ok(ConcurrenceRecord { n, pure, c_n, method: method.to_owned(), restarts_spread: spread })
}

pub fn cmd_concurrence(spec: &RunSpec) -> Result<(ConcurrenceRecord, String)> {
    spec.validate()?;
    let input = match (spec.state[0].family(), &spec.state_file) {
        (Some(family), _) => StateInput::Pure(family.state(QubitCount::new(spec.n)?)),
        (None, Some(path)) => parse_state(&read_text(path)?)?,
        (None, None) => unreachable!("validated"),
    };
    let record = concurrence_of(&input, &spec.roof(8))?;
    let json = serde_json::to_string(&record).expect("record serializes") + "\n";
    Ok((record, json))
}

/// One line of the validation report.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub tolerance: f64,
    pub observed: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.observed <= self.tolerance
    }
}

fn max_abs(it: impl IntoIterator<Item = f64>) -> f64 {
    it.into_iter().fold(0.0, f64::max)
}

/// Runs the oracle checks; the random inputs derive from `seed`.
pub fn validation_checks(seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();

    let mut kraus = 0.0f64;
    for kind in EnvironmentKind::ALL {
        let env = EnvironmentSpec::new(kind, 1.0)?;
        for k in -4..=2 {
            for t in [10f64.powi(k), 3.0 * 10f64.powi(k)] {
                kraus = kraus.max(single_qubit_channel(&env, t)?.completeness_error());
            }
        }
    }
    checks.push(Check { name: "channel completeness", tolerance: 1e-12, observed: kraus });

    let mut rng = stream_rng(seed, 1);
    let rho0 = random_density(3, 8, &mut rng);
    let mut prop = 0.0f64;
    for kind in EnvironmentKind::ALL {
        let env = EnvironmentSpec::new(kind, 1.0)?;
        let cfg = PropagatorConfig { method: PropagatorMethod::RungeKutta4, dt: 0.01, t_max: 1.0, sample_every: 100 };
        let ode = evolve_ode(&rho0, &env, &cfg)?;
        let exact = evolve_exact(&rho0, &env, 1.0)?;
        prop = prop.max(ode.states.last().expect("sampled").trace_distance(&exact)?);
    }
    checks.push(Check { name: "propagator cross-check (trace distance)", tolerance: 1e-8, observed: prop });

    let mut rng = stream_rng(seed, 2);
    let cfg = RoofConfig { seed, ..RoofConfig::default() };
    let mut wootters = 0.0f64;
    for k in 0..12 {
        let rho = random_density(2, 2 + k % 3, &mut rng);
        let w = wootters_concurrence_2q(&rho)?.value();
        let est = estimate_roof(&rho, &cfg)?.value.value();
        // the estimate may only overshoot
        let gap = if est < w - 1e-9 { f64::INFINITY } else { est - w };
        wootters = wootters.max(gap);
    }
    checks.push(Check { name: "Wootters equivalence", tolerance: 2e-3, observed: wootters });

    let mut rng = stream_rng(seed, 3);
    let mut factor = 0.0f64;
    for n in 2..=5 {
        let psi = random_pure_state(n, &mut rng);
        let phi = random_pure_state(1, &mut rng);
        let joint = psi.tensor(&phi)?;
        factor = factor.max((concurrence_pure(&joint)?.value() - concurrence_pure(&psi)?.value()).abs());
    }
    checks.push(Check { name: "factorization invariance", tolerance: 1e-10, observed: factor });

    let mut rng = stream_rng(seed, 4);
    let mut symmetry = 0.0f64;
    for n in 2..=5 {
        let rho = DensityMatrix::from_pure(&random_pure_state(n, &mut rng));
        for mask in SubsetMask::proper_subsets(n) {
            let a = rho.partial_trace(mask)?.purity();
            let b = rho.partial_trace(mask.complement()?)?.purity();
            symmetry = symmetry.max((a - b).abs());
        }
    }
    checks.push(Check { name: "complement purity symmetry", tolerance: 1e-10, observed: symmetry });

    let ratio = max_abs((2..=8).map(|n| {
        let q = QubitCount::new(n).expect("in range");
        let computed = concurrence_pure(&StateFamily::Ghz.state(q)).expect("normalized").value()
            / concurrence_pure(&StateFamily::W.state(q)).expect("normalized").value();
        (computed - ghz_w_ratio(n).expect("in range")).abs()
    }));
    checks.push(Check { name: "GHZ/W ratio closed form", tolerance: 1e-12, observed: ratio });

    let ghz = max_abs((2..=8).map(|n| {
        let q = QubitCount::new(n).expect("in range");
        let c = concurrence_pure(&StateFamily::Ghz.state(q)).expect("normalized").value();
        (c - ghz_concurrence(n)).abs()
    }));
    checks.push(Check { name: "GHZ closed form", tolerance: 1e-12, observed: ghz });

    Ok(checks)
}

pub fn validation_report(checks: &[Check]) -> String {
    let mut out = String::new();
    for c in checks {
        let _ = writeln!(
            out,
            "{:<42} tol {:>9.1e}  observed {:>12.4e}  {}",
            c.name,
            c.tolerance,
            c.observed,
            if c.passed() { "PASS" } else { "FAIL" }
        );
    }
    out
}

/// Report text and whether every check passed.
pub fn cmd_validate(spec: &RunSpec) -> Result<(String, bool)> {
    let checks = validation_checks(spec.seed)?;
    Ok((validation_report(&checks), checks.iter().all(Check::passed)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_have_twelve_digits() {
        assert_eq!(fmt_num(1.5f64.sqrt()), "1.22474487139e0");
        assert_eq!(fmt_num(0.0), "0.00000000000e0");
        assert_eq!(fmt_opt(None), "");
    }

    #[test]
    fn parse_amplitudes_and_matrices() {
        let text = "# bell\n0.7071067811865476 0\n0 0\n\n0 0\n0.7071067811865476 0\n";
        match parse_state(text).unwrap() {
            StateInput::Pure(p) => assert_eq!(p.num_qubits(), 2),
            other => panic!("{other:?}"),
        }
        let mut m = String::new();
        for i in 0..4 {
            let row: Vec<String> = (0..4).map(|j| if i == j { "0.25 0".into() } else { "0 0".into() }).collect();
            m.push_str(&row.join(" "));
            m.push('\n');
        }
        assert!(matches!(parse_state(&m).unwrap(), StateInput::Mixed(_)));
    }

    #[test]
    fn parse_errors_carry_lines() {
        let err = parse_state("1 0\n0 x\n0 0\n0 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_state("1 0\n0 0 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_state("1 0\n0 0\n0 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        // unnormalized amplitudes
        assert!(parse_state("1 0\n1 0\n0 0\n0 0\n").is_err());
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = RunSpec { command: Command::Sweep, n_max: Some(4), seed: 7, ..RunSpec::default() }.resolved();
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(RunSpec::from_json(&text).unwrap(), spec);
        let sidecar = format!("{{\"spec\": {text}, \"gamma\": 1.0, \"t_sep\": null}}");
        assert_eq!(RunSpec::from_json(&sidecar).unwrap(), spec);
        assert!(matches!(RunSpec::from_json("{\"bogus\": 1}"), Err(Error::Parse { .. })));
    }

    #[test]
    fn usage_errors() {
        let two = RunSpec { state: vec![StateChoice::Ghz, StateChoice::W], ..RunSpec::default() };
        assert!(matches!(two.validate(), Err(Error::Usage(_))));
        let file = RunSpec { command: Command::Concurrence, state: vec![StateChoice::File], ..RunSpec::default() };
        assert!(matches!(file.validate(), Err(Error::Usage(_))));
        let range = RunSpec { command: Command::Sweep, n: 2, n_max: Some(11), ..RunSpec::default() };
        assert_eq!(exit_code(&range.validate().unwrap_err()), 2);
    }

    #[test]
    fn concurrence_of_builtin_ghz4() {
        let spec = RunSpec { command: Command::Concurrence, n: 4, ..RunSpec::default() };
        let (rec, json) = cmd_concurrence(&spec).unwrap();
        assert!((rec.c_n - 1.322876).abs() < 1e-6);
        assert!(json.contains("\"method\":\"pure\""));
    }

    #[test]
    fn validation_passes() {
        let checks = validation_checks(0).unwrap();
        for c in &checks {
            assert!(c.passed(), "{c:?}");
        }
        assert!(validation_report(&checks).lines().all(|l| l.ends_with("PASS")));
    }
}
