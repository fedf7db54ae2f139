//! Bundled and user-defined problem scenarios: grid, modes, constraints,
//! costs, signals, initial distribution, solver and deployment parameters.
//!
//! Two reference scenarios ship with the crate: `peak_pricing` (response to
//! peak/off-peak electricity prices under a charger-capacity cap and a
//! terminal SoC requirement) and `signal_tracking` (follow a consumption
//! target with a terminal-distribution penalty). Scenario files are TOML;
//! see the README for the key grammar.

use crate::costs::{CostSpec, PerspectiveParams, TerminalTerm, TrackingTerm};
use crate::dynamics::{check_cfl, ConstraintSpec};
use crate::grid::{
    build_grid, discretize_initial, Grid, GridError, Mode, ModeError, ModeSet, SocDensity,
};
use crate::solver::CpParams;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("signal has {got} samples, expected {expected}")]
    BadSignalLength { expected: usize, got: usize },
    #[error("signal file parse error at line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("array length {got} does not match {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("unknown preset `{0}` (expected peak_pricing or signal_tracking)")]
    UnknownPreset(String),
    #[error("custom scenario is missing the [{0}] section")]
    MissingSection(&'static str),
    #[error("scenario file error: {0}")]
    Toml(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Mode(#[from] ModeError),
    #[error(transparent)]
    Constraint(#[from] crate::dynamics::ConstraintError),
    #[error(transparent)]
    Density(#[from] crate::grid::DensityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Price,
    Target,
    Nominal,
}

/// A per-time-step signal resampled onto the grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Signal {
    pub samples: Vec<f64>,
    pub kind: SignalKind,
}

impl Signal {
    pub fn constant(value: f64, grid: &Grid, kind: SignalKind) -> Signal {
        Signal { samples: vec![value; grid.n_t], kind }
    }
}

/// Deployment parameters: fleet size and the control mesh.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DeploymentSpec {
    pub n: usize,
    /// SoC cell width of the deployment mesh.
    pub u: f64,
    /// Time step of the deployment mesh, seconds.
    pub dr: f64,
}

/// Raw signals kept alongside the resolved costs for reporting.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScenarioSignals {
    pub price: Option<Signal>,
    pub u_pred: Option<Signal>,
    pub u_cor: Option<Signal>,
}

/// A fully resolved problem instance; the solver input contract.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub grid: Grid,
    pub modes: ModeSet,
    pub constraints: ConstraintSpec,
    pub costs: CostSpec,
    /// Initial cell values per mode.
    pub initial: Vec<Vec<f64>>,
    pub solver: CpParams,
    pub deployment: DeploymentSpec,
    pub signals: ScenarioSignals,
}

impl Scenario {
    /// Validation shared by all construction paths: CFL bound, unit initial
    /// mass, matching array lengths.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let cfl = check_cfl(&self.grid, &self.modes);
        if cfl > 1.0 + 1e-12 {
            return Err(ScenarioError::Toml(format!("CFL condition violated: {cfl}")));
        }
        let mass: f64 = self.initial.iter().flatten().sum::<f64>() * self.grid.h;
        if (mass - 1.0).abs() > 1e-10 {
            return Err(ScenarioError::Toml(format!("initial mass {mass} != 1")));
        }
        if let Some(p) = &self.costs.prices {
            if p.len() != self.grid.n_t {
                return Err(ScenarioError::BadSignalLength {
                    expected: self.grid.n_t,
                    got: p.len(),
                });
            }
        }
        if let Some(t) = &self.costs.tracking {
            if t.lambda.len() != self.grid.n_t || t.target.len() != self.grid.n_t {
                return Err(ScenarioError::BadSignalLength {
                    expected: self.grid.n_t,
                    got: t.lambda.len().min(t.target.len()),
                });
            }
        }
        Ok(())
    }
}

/// The reference grid shared by the bundled scenarios: 5 h horizon, 450 s
/// steps, SoC cells of 0.05.
pub fn reference_grid() -> Grid {
    build_grid(18000.0, 450.0, 0.05).expect("reference grid is exact")
}

/// The bundled charging hardware: an idle mode with a small battery drain
/// and a 20 kW charging mode with a taper above SoC 0.75.
pub fn reference_modes(grid: &Grid) -> Result<ModeSet, ModeError> {
    let idle = Mode::from_rate_fn(grid, 0.0, |s| if s > 0.0 { -3.86e-7 } else { 0.0 })?;
    let charging = Mode::from_rate_fn(grid, 20.0, |s| {
        if s < 0.75 {
            1.0 / 45000.0
        } else {
            (1.0 - s) / 11250.0
        }
    })?;
    ModeSet::new(vec![idle, charging])
}

/// Reference peak/off-peak price profile: off-peak windows on [1h, 2h) and
/// [3.5h, 5h) at 0.05 EUR/kWh, peak elsewhere at 0.15 EUR/kWh. The window
/// boundaries follow the bundled study; the price levels are placeholders.
pub fn default_price_profile(grid: &Grid) -> Signal {
    let samples = (0..grid.n_t)
        .map(|k| {
            let t = grid.time(k);
            let off_peak = (3600.0..7200.0).contains(&t) || t >= 12600.0;
            if off_peak { 0.05 } else { 0.15 }
        })
        .collect();
    Signal { samples, kind: SignalKind::Price }
}

/// Nominal consumption profile for the tracking scenario: starts from the
/// fleet's actual initial occupancy (zero: everyone idle), ramps to a midday
/// plateau, ramps back down. Consistency at t = 0 matters: the occupancy at
/// the first node is pinned by the initial condition, so a target away from
/// it would be unreachable by construction.
pub fn default_u_pred(grid: &Grid) -> Signal {
    let samples = (0..grid.n_t)
        .map(|k| {
            let t = grid.time(k) / 3600.0;
            if t < 0.5 {
                0.12 * t
            } else if t < 1.5 {
                0.06 + 0.32 * (t - 0.5)
            } else if t < 3.0 {
                0.38
            } else if t < 4.0 {
                0.38 - 0.22 * (t - 3.0)
            } else {
                0.16
            }
        })
        .collect();
    Signal { samples, kind: SignalKind::Nominal }
}

/// Correction signal for the tracking scenario: shed load in the second
/// hour, a deep half-hour shedding window at 2h, then absorb extra
/// production mid-afternoon and slightly at the end. Zero mean, so the
/// correction reshapes the charging schedule without changing the energy
/// budget.
pub fn default_u_cor(grid: &Grid) -> Signal {
    let samples = (0..grid.n_t)
        .map(|k| {
            let t = grid.time(k) / 3600.0;
            if (1.0..2.0).contains(&t) {
                -0.04
            } else if (2.0..2.5).contains(&t) {
                -0.22
            } else if (2.5..3.5).contains(&t) {
                0.10
            } else if t >= 3.75 {
                0.06
            } else {
                0.0
            }
        })
        .collect();
    Signal { samples, kind: SignalKind::Target }
}

/// Peak/off-peak pricing study: 500 vehicles, charger cap at one third of
/// the fleet, terminal SoC threshold 0.7 with zero tolerance, perspective
/// switching penalties, electricity cost on the charging mode.
pub fn build_peak_pricing(price: Option<Signal>) -> Result<Scenario, ScenarioError> {
    let grid = reference_grid();
    let modes = reference_modes(&grid)?;
    let price = match price {
        Some(s) => {
            if s.samples.len() != grid.n_t {
                return Err(ScenarioError::BadSignalLength {
                    expected: grid.n_t,
                    got: s.samples.len(),
                });
            }
            s
        }
        None => default_price_profile(&grid),
    };
    let initial = discretize_initial(
        &[SocDensity::Uniform { lo: 0.2, hi: 0.6, mass: 1.0 }, SocDensity::Zero],
        &grid,
    )?;
    let constraints =
        ConstraintSpec::constant_bounds(&[0.0, 0.0], &[1.0, 1.0 / 3.0], 0.7, 0.0, &grid)?;
    let switching = PerspectiveParams::new(0.04, 20.0);
    let costs = CostSpec {
        prices: Some(price.samples.clone()),
        switching: vec![switching; modes.n_pairs()],
        tracking: None,
        terminal: None,
    };
    let solver = CpParams {
        theta_relax: 0.5,
        tau: 1.8,
        gamma: 0.5,
        max_iter: 12_000,
        tol_primal: 1e-7,
        tol_feasibility: 1e-9,
    };
    let scenario = Scenario {
        name: "peak_pricing".into(),
        deployment: DeploymentSpec { n: 500, u: grid.h, dr: grid.dt },
        signals: ScenarioSignals { price: Some(price), u_pred: None, u_cor: None },
        grid,
        modes,
        constraints,
        costs,
        initial,
        solver,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Signal-tracking study: 1000 vehicles, no hard aggregate constraints, a
/// tracking penalty toward `u_pred + u_cor` and a terminal penalty toward a
/// uniform [0.6, 0.8] idle-mode distribution.
pub fn build_signal_tracking(
    u_pred: Option<Signal>,
    u_cor: Option<Signal>,
) -> Result<Scenario, ScenarioError> {
    let grid = reference_grid();
    let modes = reference_modes(&grid)?;
    let u_pred = resolve_signal(u_pred, || default_u_pred(&grid), &grid)?;
    let u_cor = resolve_signal(u_cor, || default_u_cor(&grid), &grid)?;
    let u_tar: Vec<f64> =
        u_pred.samples.iter().zip(&u_cor.samples).map(|(a, b)| a + b).collect();

    let initial = discretize_initial(
        &[SocDensity::Uniform { lo: 0.5, hi: 0.7, mass: 1.0 }, SocDensity::Zero],
        &grid,
    )?;
    // Terminal target: uniform density on [0.6, 0.8] in the idle mode,
    // nothing in the charging mode.
    let target = discretize_initial(
        &[SocDensity::Uniform { lo: 0.6, hi: 0.8, mass: 1.0 }, SocDensity::Zero],
        &grid,
    )?;
    let terminal = TerminalTerm { beta: vec![vec![50.0; grid.n_h]; modes.len()], target };
    let costs = CostSpec {
        prices: None,
        switching: vec![PerspectiveParams::new(0.004, 2.0); modes.n_pairs()],
        tracking: Some(TrackingTerm { mode: 1, lambda: vec![50.0; grid.n_t], target: u_tar }),
        terminal: Some(terminal),
    };
    let constraints = ConstraintSpec::unconstrained(modes.len(), &grid);
    let solver = CpParams {
        theta_relax: 0.5,
        tau: 0.5,
        gamma: 0.5,
        max_iter: 15_000,
        tol_primal: 1e-7,
        tol_feasibility: 1e-9,
    };
    let scenario = Scenario {
        name: "signal_tracking".into(),
        deployment: DeploymentSpec { n: 1000, u: grid.h, dr: grid.dt },
        signals: ScenarioSignals { price: None, u_pred: Some(u_pred), u_cor: Some(u_cor) },
        grid,
        modes,
        constraints,
        costs,
        initial,
        solver,
    };
    scenario.validate()?;
    Ok(scenario)
}

fn resolve_signal(
    given: Option<Signal>,
    default: impl Fn() -> Signal,
    grid: &Grid,
) -> Result<Signal, ScenarioError> {
    match given {
        Some(s) => {
            if s.samples.len() != grid.n_t {
                Err(ScenarioError::BadSignalLength { expected: grid.n_t, got: s.samples.len() })
            } else {
                Ok(s)
            }
        }
        None => Ok(default()),
    }
}

/// Reads a two-column CSV (`time_seconds,value`) and resamples it onto the
/// grid steps with left-constant interpolation. A non-numeric first line is
/// treated as a header.
pub fn load_signal(path: &Path, grid: &Grid, kind: SignalKind) -> Result<Signal, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    parse_signal(&text, grid, kind)
}

pub fn parse_signal(text: &str, grid: &Grid, kind: SignalKind) -> Result<Signal, ScenarioError> {
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split(',');
        let (Some(a), Some(b)) = (fields.next(), fields.next()) else {
            return Err(ScenarioError::ParseError {
                line: line_no,
                msg: "expected two comma-separated columns".into(),
            });
        };
        match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
            (Ok(t), Ok(v)) => points.push((t, v)),
            (Err(e), _) | (_, Err(e)) => {
                if line_no == 1 && points.is_empty() {
                    continue; // header row
                }
                return Err(ScenarioError::ParseError { line: line_no, msg: e.to_string() });
            }
        }
    }
    if points.is_empty() {
        return Err(ScenarioError::ParseError { line: 1, msg: "no data rows".into() });
    }
    points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let samples = (0..grid.n_t)
        .map(|k| {
            let t = grid.time(k);
            let mut value = points[0].1;
            for &(pt, pv) in &points {
                if pt <= t + 1e-9 {
                    value = pv;
                } else {
                    break;
                }
            }
            value
        })
        .collect();
    Ok(Signal { samples, kind })
}

// ---------------------------------------------------------------------------
// Scenario files
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub preset: Option<String>,
    pub name: Option<String>,
    #[serde(default)]
    pub overrides: OverrideConfig,
    #[serde(default)]
    pub signals: SignalPathConfig,
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub modes: Vec<ModeConfig>,
    #[serde(default)]
    pub initial: Vec<InitialBlockConfig>,
    pub constraints: Option<ConstraintConfig>,
    pub costs: Option<CostConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverrideConfig {
    pub n: Option<usize>,
    pub max_iter: Option<usize>,
    pub mesh_u: Option<f64>,
    pub mesh_dr: Option<f64>,
    pub theta: Option<f64>,
    pub gamma: Option<f64>,
    pub tau: Option<f64>,
    pub tol_primal: Option<f64>,
    pub tol_feasibility: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalPathConfig {
    pub price: Option<String>,
    pub u_pred: Option<String>,
    pub u_cor: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub horizon_s: f64,
    pub dt_s: f64,
    pub h: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub power_kw: f64,
    /// Piecewise-linear rate samples [[soc, rate_per_second], ...].
    pub rate: Vec<[f64; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialBlockConfig {
    pub mode: usize,
    pub lo: f64,
    pub hi: f64,
    pub mass: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    pub d_lower: Vec<f64>,
    pub d_upper: Vec<f64>,
    pub s_min: f64,
    pub epsilon: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    #[serde(default)]
    pub switching: Vec<SwitchingConfig>,
    /// Charge the price signal against each mode's power draw.
    #[serde(default)]
    pub use_energy_price: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchingConfig {
    pub from: usize,
    pub to: usize,
    pub theta: f64,
    pub theta_tilde: f64,
}

/// Loads a scenario file: either a preset with overrides or a fully custom
/// definition. Signal paths are resolved relative to the file.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    let config: ScenarioConfig =
        toml::from_str(&text).map_err(|e| ScenarioError::Toml(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    scenario_from_config(config, base)
}

pub fn scenario_from_config(
    config: ScenarioConfig,
    base: &Path,
) -> Result<Scenario, ScenarioError> {
    let mut scenario = match config.preset.as_deref() {
        Some("peak_pricing") => {
            let grid = reference_grid();
            let price = config
                .signals
                .price
                .as_ref()
                .map(|p| load_signal(&base.join(p), &grid, SignalKind::Price))
                .transpose()?;
            build_peak_pricing(price)?
        }
        Some("signal_tracking") => {
            let grid = reference_grid();
            let u_pred = config
                .signals
                .u_pred
                .as_ref()
                .map(|p| load_signal(&base.join(p), &grid, SignalKind::Nominal))
                .transpose()?;
            let u_cor = config
                .signals
                .u_cor
                .as_ref()
                .map(|p| load_signal(&base.join(p), &grid, SignalKind::Target))
                .transpose()?;
            build_signal_tracking(u_pred, u_cor)?
        }
        Some(other) => return Err(ScenarioError::UnknownPreset(other.to_string())),
        None => build_custom(&config, base)?,
    };
    if let Some(name) = config.name {
        scenario.name = name;
    }
    let o = &config.overrides;
    if let Some(n) = o.n {
        scenario.deployment.n = n;
    }
    if let Some(u) = o.mesh_u {
        scenario.deployment.u = u;
    }
    if let Some(dr) = o.mesh_dr {
        scenario.deployment.dr = dr;
    }
    if let Some(v) = o.max_iter {
        scenario.solver.max_iter = v;
    }
    if let Some(v) = o.theta {
        scenario.solver.theta_relax = v;
    }
    if let Some(v) = o.gamma {
        scenario.solver.gamma = v;
    }
    if let Some(v) = o.tau {
        scenario.solver.tau = v;
    }
    if let Some(v) = o.tol_primal {
        scenario.solver.tol_primal = v;
    }
    if let Some(v) = o.tol_feasibility {
        scenario.solver.tol_feasibility = v;
    }
    scenario.validate()?;
    Ok(scenario)
}

fn build_custom(config: &ScenarioConfig, base: &Path) -> Result<Scenario, ScenarioError> {
    let gc = config.grid.as_ref().ok_or(ScenarioError::MissingSection("grid"))?;
    let grid = build_grid(gc.horizon_s, gc.dt_s, gc.h)?;
    if config.modes.is_empty() {
        return Err(ScenarioError::MissingSection("modes"));
    }
    let modes = ModeSet::new(
        config
            .modes
            .iter()
            .map(|mc| Mode::from_rate_fn(&grid, mc.power_kw, |s| piecewise_linear(&mc.rate, s)))
            .collect::<Result<Vec<_>, _>>()?,
    )?;
    if config.initial.is_empty() {
        return Err(ScenarioError::MissingSection("initial"));
    }
    let mut segments: Vec<Vec<(f64, f64, f64)>> = vec![Vec::new(); modes.len()];
    for block in &config.initial {
        if block.mode >= modes.len() {
            return Err(ScenarioError::LengthMismatch { expected: modes.len(), got: block.mode });
        }
        segments[block.mode].push((block.lo, block.hi, block.mass / (block.hi - block.lo)));
    }
    let densities: Vec<SocDensity> = segments
        .into_iter()
        .map(|segs| if segs.is_empty() { SocDensity::Zero } else { SocDensity::Piecewise(segs) })
        .collect();
    let initial = discretize_initial(&densities, &grid)?;
    let cc = config.constraints.as_ref().ok_or(ScenarioError::MissingSection("constraints"))?;
    let constraints =
        ConstraintSpec::constant_bounds(&cc.d_lower, &cc.d_upper, cc.s_min, cc.epsilon, &grid)?;
    let price = config
        .signals
        .price
        .as_ref()
        .map(|p| load_signal(&base.join(p), &grid, SignalKind::Price))
        .transpose()?;
    let mut switching = vec![PerspectiveParams::zero(); modes.n_pairs()];
    let mut use_energy = false;
    if let Some(costs) = &config.costs {
        for sw in &costs.switching {
            switching[modes.pair_index(sw.from, sw.to)] =
                PerspectiveParams::new(sw.theta, sw.theta_tilde);
        }
        use_energy = costs.use_energy_price;
    }
    let costs = CostSpec {
        prices: if use_energy { price.as_ref().map(|s| s.samples.clone()) } else { None },
        switching,
        tracking: None,
        terminal: None,
    };
    let solver = CpParams {
        theta_relax: 0.5,
        tau: 0.5,
        gamma: 0.5,
        max_iter: 5000,
        tol_primal: 1e-7,
        tol_feasibility: 1e-9,
    };
    let scenario = Scenario {
        name: config.name.clone().unwrap_or_else(|| "custom".into()),
        deployment: DeploymentSpec { n: 100, u: grid.h, dr: grid.dt },
        signals: ScenarioSignals { price, u_pred: None, u_cor: None },
        grid,
        modes,
        constraints,
        costs,
        initial,
        solver,
    };
    scenario.validate()?;
    Ok(scenario)
}

fn piecewise_linear(points: &[[f64; 2]], s: f64) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    if s <= points[0][0] {
        return points[0][1];
    }
    for w in points.windows(2) {
        if s <= w[1][0] {
            let t = (s - w[0][0]) / (w[1][0] - w[0][0]);
            return w[0][1] * (1.0 - t) + w[1][1] * t;
        }
    }
    points[points.len() - 1][1]
}
