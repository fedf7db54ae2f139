//! Time/SoC discretization grid, charging-mode set and the discrete
//! density/flux containers.
//!
//! The SoC axis `[0,1]` is split into `n_h` cells of width `h`; cell `l` covers
//! `[l*h, (l+1)*h)` with centre `x_l = (l + 1/2)*h`. The horizon `[0, T]` is
//! split into `n_t` steps of length `dt`. Charging rates are sampled once at
//! the cell half-points `l*h` (`l = 0..=n_h`), the only locations the
//! transport scheme reads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid steps must divide the domain: {0}")]
    NonIntegerGrid(String),
    #[error("grid steps must be positive: dt={dt}, h={h}")]
    NonPositiveStep { dt: f64, h: f64 },
}

#[derive(Debug, Error, PartialEq)]
pub enum ModeError {
    #[error("charging rate changes sign over [0,1] (min {min}, max {max})")]
    MixedSignRate { min: f64, max: f64 },
    #[error("nonnegative rate must vanish at SoC 1, got {0}")]
    NonZeroAtFull(f64),
    #[error("nonpositive rate must vanish at SoC 0, got {0}")]
    NonZeroAtEmpty(f64),
    #[error("nonnegative rate must be non-increasing in SoC (rises at half-point {at})")]
    NotNonIncreasing { at: usize },
    #[error("expected {expected} half-point samples, got {got}")]
    SampleCount { expected: usize, got: usize },
    #[error("mode set is empty")]
    Empty,
}

#[derive(Debug, Error, PartialEq)]
pub enum DensityError {
    #[error("initial density must integrate to 1, got {0}")]
    NotNormalized(f64),
    #[error("expected {expected} modes, got {got}")]
    ModeCount { expected: usize, got: usize },
    #[error("time index {k} out of range (n_t = {n_t})")]
    IndexOutOfRange { k: usize, n_t: usize },
}

/// Uniform time/SoC discretization with integer step counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    /// Horizon T in seconds.
    pub horizon: f64,
    /// Time step in seconds.
    pub dt: f64,
    /// SoC cell width (fraction of full charge).
    pub h: f64,
    /// Number of time steps, T/dt.
    pub n_t: usize,
    /// Number of SoC cells, 1/h.
    pub n_h: usize,
}

/// Validates that `horizon/dt` and `1/h` are integers (1e-9 relative) and
/// returns the populated grid.
pub fn build_grid(horizon: f64, dt: f64, h: f64) -> Result<Grid, GridError> {
    if !(dt > 0.0) || !(h > 0.0) || !(horizon > 0.0) {
        return Err(GridError::NonPositiveStep { dt, h });
    }
    let n_t = exact_ratio(horizon, dt)
        .ok_or_else(|| GridError::NonIntegerGrid(format!("horizon/dt = {}", horizon / dt)))?;
    let n_h = exact_ratio(1.0, h)
        .ok_or_else(|| GridError::NonIntegerGrid(format!("1/h = {}", 1.0 / h)))?;
    Ok(Grid { horizon, dt, h, n_t, n_h })
}

fn exact_ratio(num: f64, den: f64) -> Option<usize> {
    let q = num / den;
    let rounded = q.round();
    if rounded < 1.0 || (q - rounded).abs() > 1e-9 * q.max(1.0) {
        return None;
    }
    Some(rounded as usize)
}

impl Grid {
    /// Time of node `k` in seconds.
    pub fn time(&self, k: usize) -> f64 {
        self.dt * k as f64
    }

    /// Centre of SoC cell `l`.
    pub fn cell_center(&self, l: usize) -> f64 {
        (l as f64 + 0.5) * self.h
    }

    /// SoC of half-point `l` (cell interface), `l = 0..=n_h`.
    pub fn half_point(&self, l: usize) -> f64 {
        l as f64 * self.h
    }

    /// Courant ratio dt/h used by the transport scheme.
    pub fn courant_factor(&self) -> f64 {
        self.dt / self.h
    }
}

/// Sign class of a charging rate; the transport stencil is chosen by it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateSign {
    NonNegative,
    NonPositive,
}

/// One charging mode: delivered power and the SoC drift rate sampled at the
/// cell half-points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mode {
    /// Power drawn while in this mode, kW.
    pub power_kw: f64,
    rate_half: Vec<f64>,
    sign: RateSign,
}

impl Mode {
    /// Samples `rate` (SoC/second) at the `n_h + 1` half-points and validates
    /// the sign conventions: a nonnegative rate must be non-increasing with
    /// b(1) = 0, a nonpositive rate must have b(0) = 0.
    pub fn from_rate_fn(
        grid: &Grid,
        power_kw: f64,
        rate: impl Fn(f64) -> f64,
    ) -> Result<Mode, ModeError> {
        let samples: Vec<f64> = (0..=grid.n_h).map(|l| rate(grid.half_point(l))).collect();
        Mode::from_half_point_samples(power_kw, samples)
    }

    /// Builds a mode from pre-sampled half-point rates.
    pub fn from_half_point_samples(power_kw: f64, samples: Vec<f64>) -> Result<Mode, ModeError> {
        if samples.len() < 2 {
            return Err(ModeError::SampleCount { expected: 2, got: samples.len() });
        }
        let min = samples.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if min < 0.0 && max > 0.0 {
            return Err(ModeError::MixedSignRate { min, max });
        }
        let scale = min.abs().max(max.abs()).max(1e-300);
        let sign = if min >= 0.0 { RateSign::NonNegative } else { RateSign::NonPositive };
        match sign {
            RateSign::NonNegative => {
                let last = *samples.last().unwrap();
                if last.abs() > 1e-12 * scale {
                    return Err(ModeError::NonZeroAtFull(last));
                }
                for (l, w) in samples.windows(2).enumerate() {
                    if w[1] > w[0] + 1e-12 * scale {
                        return Err(ModeError::NotNonIncreasing { at: l + 1 });
                    }
                }
            }
            RateSign::NonPositive => {
                let first = samples[0];
                if first.abs() > 1e-12 * scale {
                    return Err(ModeError::NonZeroAtEmpty(first));
                }
            }
        }
        Ok(Mode { power_kw, rate_half: samples, sign })
    }

    pub fn sign(&self) -> RateSign {
        self.sign
    }

    /// Rate at half-point `l`.
    pub fn rate_at_half_point(&self, l: usize) -> f64 {
        self.rate_half[l]
    }

    pub fn half_point_rates(&self) -> &[f64] {
        &self.rate_half
    }

    /// Rate at arbitrary SoC by linear interpolation of the half-point
    /// samples (used by the vehicle-level simulator).
    pub fn rate_at(&self, s: f64) -> f64 {
        let n_h = self.rate_half.len() - 1;
        let x = (s.clamp(0.0, 1.0)) * n_h as f64;
        let l = (x.floor() as usize).min(n_h - 1);
        let w = x - l as f64;
        self.rate_half[l] * (1.0 - w) + self.rate_half[l + 1] * w
    }

    /// Sup-norm of the sampled rate.
    pub fn max_abs_rate(&self) -> f64 {
        self.rate_half.iter().fold(0.0f64, |m, r| m.max(r.abs()))
    }
}

/// The finite set of charging modes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeSet {
    modes: Vec<Mode>,
}

impl ModeSet {
    pub fn new(modes: Vec<Mode>) -> Result<ModeSet, ModeError> {
        let first = modes.first().ok_or(ModeError::Empty)?;
        let expected = first.rate_half.len();
        for m in &modes {
            if m.rate_half.len() != expected {
                return Err(ModeError::SampleCount { expected, got: m.rate_half.len() });
            }
        }
        Ok(ModeSet { modes })
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn mode(&self, i: usize) -> &Mode {
        &self.modes[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Mode> {
        self.modes.iter()
    }

    /// Number of ordered mode pairs (i, j), i != j.
    pub fn n_pairs(&self) -> usize {
        let i = self.modes.len();
        i * (i - 1)
    }

    /// Flat index of the ordered pair (i, j), i != j.
    pub fn pair_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i != j);
        let n = self.modes.len();
        i * (n - 1) + if j < i { j } else { j - 1 }
    }

    /// Inverse of `pair_index`.
    pub fn pair_decode(&self, p: usize) -> (usize, usize) {
        let n = self.modes.len();
        let i = p / (n - 1);
        let r = p % (n - 1);
        let j = if r < i { r } else { r + 1 };
        (i, j)
    }
}

/// Occupancy density per (time node, mode, SoC cell). Cell mass is
/// `value * h`; the total over modes and cells is conserved by the scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub n_t: usize,
    pub n_modes: usize,
    pub n_h: usize,
    values: Vec<f64>,
}

impl DensityField {
    pub fn zeros(n_t: usize, n_modes: usize, n_h: usize) -> DensityField {
        DensityField { n_t, n_modes, n_h, values: vec![0.0; (n_t + 1) * n_modes * n_h] }
    }

    #[inline]
    pub fn idx(&self, k: usize, i: usize, l: usize) -> usize {
        debug_assert!(k <= self.n_t && i < self.n_modes && l < self.n_h);
        (k * self.n_modes + i) * self.n_h + l
    }

    /// Inverse of `idx`.
    pub fn decode(&self, flat: usize) -> (usize, usize, usize) {
        let l = flat % self.n_h;
        let rest = flat / self.n_h;
        (rest / self.n_modes, rest % self.n_modes, l)
    }

    #[inline]
    pub fn at(&self, k: usize, i: usize, l: usize) -> f64 {
        self.values[self.idx(k, i, l)]
    }

    #[inline]
    pub fn at_mut(&mut self, k: usize, i: usize, l: usize) -> &mut f64 {
        let idx = self.idx(k, i, l);
        &mut self.values[idx]
    }

    /// All cells of mode `i` at node `k`.
    pub fn mode_slice(&self, k: usize, i: usize) -> &[f64] {
        let start = (k * self.n_modes + i) * self.n_h;
        &self.values[start..start + self.n_h]
    }

    pub fn mode_slice_mut(&mut self, k: usize, i: usize) -> &mut [f64] {
        let start = (k * self.n_modes + i) * self.n_h;
        &mut self.values[start..start + self.n_h]
    }

    /// Every cell of every mode at node `k`.
    pub fn node_slice(&self, k: usize) -> &[f64] {
        let w = self.n_modes * self.n_h;
        &self.values[k * w..(k + 1) * w]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn from_values(n_t: usize, n_modes: usize, n_h: usize, values: Vec<f64>) -> DensityField {
        assert_eq!(values.len(), (n_t + 1) * n_modes * n_h);
        DensityField { n_t, n_modes, n_h, values }
    }

    /// Mass per mode at node `k` (density times cell width, summed).
    pub fn mode_mass(&self, k: usize, i: usize) -> f64 {
        let h = 1.0 / self.n_h as f64;
        self.mode_slice(k, i).iter().sum::<f64>() * h
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Total mass at node `k`: sum over modes and cells of `value * h`.
pub fn total_mass(m: &DensityField, k: usize) -> Result<f64, DensityError> {
    if k > m.n_t {
        return Err(DensityError::IndexOutOfRange { k, n_t: m.n_t });
    }
    let h = 1.0 / m.n_h as f64;
    Ok(m.node_slice(k).iter().sum::<f64>() * h)
}

/// Transfer flux per (time step, ordered mode pair, SoC cell); units are
/// density per second. All entries are nonnegative for feasible controls.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub n_t: usize,
    pub n_modes: usize,
    pub n_h: usize,
    values: Vec<f64>,
}

impl FlowField {
    pub fn zeros(n_t: usize, n_modes: usize, n_h: usize) -> FlowField {
        let n_pairs = n_modes * (n_modes - 1);
        FlowField { n_t, n_modes, n_h, values: vec![0.0; n_t * n_pairs * n_h] }
    }

    #[inline]
    pub fn n_pairs(&self) -> usize {
        self.n_modes * (self.n_modes - 1)
    }

    #[inline]
    pub fn idx(&self, k: usize, pair: usize, l: usize) -> usize {
        debug_assert!(k < self.n_t && pair < self.n_pairs() && l < self.n_h);
        (k * self.n_pairs() + pair) * self.n_h + l
    }

    pub fn decode(&self, flat: usize) -> (usize, usize, usize) {
        let l = flat % self.n_h;
        let rest = flat / self.n_h;
        (rest / self.n_pairs(), rest % self.n_pairs(), l)
    }

    #[inline]
    pub fn at(&self, k: usize, pair: usize, l: usize) -> f64 {
        self.values[self.idx(k, pair, l)]
    }

    #[inline]
    pub fn at_mut(&mut self, k: usize, pair: usize, l: usize) -> &mut f64 {
        let idx = self.idx(k, pair, l);
        &mut self.values[idx]
    }

    /// Cells of pair `pair` at step `k`.
    pub fn pair_slice(&self, k: usize, pair: usize) -> &[f64] {
        let start = (k * self.n_pairs() + pair) * self.n_h;
        &self.values[start..start + self.n_h]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn from_values(n_t: usize, n_modes: usize, n_h: usize, values: Vec<f64>) -> FlowField {
        assert_eq!(values.len(), n_t * n_modes * (n_modes - 1) * n_h);
        FlowField { n_t, n_modes, n_h, values }
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Piecewise-constant SoC density for one mode, used to specify initial
/// conditions analytically.
#[derive(Debug, Clone)]
pub enum SocDensity {
    /// No mass in this mode.
    Zero,
    /// `mass` spread uniformly over `[lo, hi]`.
    Uniform { lo: f64, hi: f64, mass: f64 },
    /// Piecewise-constant density: (lo, hi, density) segments.
    Piecewise(Vec<(f64, f64, f64)>),
    /// Already-discretized cell densities (length n_h).
    Cells(Vec<f64>),
}

impl SocDensity {
    /// Integral of the density over `[a, b]`.
    fn mass_on(&self, a: f64, b: f64, n_h: usize) -> f64 {
        match self {
            SocDensity::Zero => 0.0,
            SocDensity::Uniform { lo, hi, mass } => {
                let density = mass / (hi - lo);
                overlap(a, b, *lo, *hi) * density
            }
            SocDensity::Piecewise(segments) => segments
                .iter()
                .map(|&(lo, hi, density)| overlap(a, b, lo, hi) * density)
                .sum(),
            SocDensity::Cells(cells) => {
                let h = 1.0 / n_h as f64;
                cells
                    .iter()
                    .enumerate()
                    .map(|(l, d)| overlap(a, b, l as f64 * h, (l + 1) as f64 * h) * d)
                    .sum()
            }
        }
    }
}

fn overlap(a: f64, b: f64, lo: f64, hi: f64) -> f64 {
    (b.min(hi) - a.max(lo)).max(0.0)
}

/// Projects per-mode SoC densities onto the grid: cell value is the cell
/// average of the density. The input must carry total mass 1 across modes
/// (within 1e-6); the output is rescaled so its discrete mass is exactly 1.
///
/// Returns the per-mode cell values at the initial node.
pub fn discretize_initial(
    density: &[SocDensity],
    grid: &Grid,
) -> Result<Vec<Vec<f64>>, DensityError> {
    let h = grid.h;
    let mut per_mode: Vec<Vec<f64>> = Vec::with_capacity(density.len());
    for d in density {
        if let SocDensity::Cells(cells) = d {
            if cells.len() != grid.n_h {
                return Err(DensityError::ModeCount { expected: grid.n_h, got: cells.len() });
            }
        }
        let cells: Vec<f64> = (0..grid.n_h)
            .map(|l| d.mass_on(l as f64 * h, (l + 1) as f64 * h, grid.n_h) / h)
            .collect();
        per_mode.push(cells);
    }
    let total: f64 = per_mode.iter().flatten().sum::<f64>() * h;
    if (total - 1.0).abs() > 1e-6 {
        return Err(DensityError::NotNormalized(total));
    }
    let scale = 1.0 / total;
    for cells in &mut per_mode {
        for v in cells {
            *v *= scale;
        }
    }
    Ok(per_mode)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid() -> Grid {
        build_grid(1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn build_grid_paper_scale() {
        let g = build_grid(18000.0, 450.0, 0.05).unwrap();
        assert_eq!(g.n_t, 40);
        assert_eq!(g.n_h, 20);
        assert_eq!(g.time(40), 18000.0);
        assert!((g.cell_center(0) - 0.025).abs() < 1e-15);
        assert!((g.half_point(20) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn build_grid_unit() {
        let g = unit_grid();
        assert_eq!((g.n_t, g.n_h), (1, 1));
    }

    #[test]
    fn build_grid_rejects_non_integer() {
        assert!(matches!(build_grid(10.0, 3.0, 0.1), Err(GridError::NonIntegerGrid(_))));
        assert!(matches!(build_grid(10.0, 1.0, 0.3), Err(GridError::NonIntegerGrid(_))));
        assert!(matches!(
            build_grid(10.0, -1.0, 0.1),
            Err(GridError::NonPositiveStep { .. })
        ));
    }

    #[test]
    fn mode_sign_rules() {
        let g = build_grid(18000.0, 450.0, 0.05).unwrap();
        // Charging profile: constant then linear taper to zero at full charge.
        let charge = Mode::from_rate_fn(&g, 20.0, |s| {
            if s < 0.75 { 1.0 / 45000.0 } else { (1.0 - s) / 11250.0 }
        })
        .unwrap();
        assert_eq!(charge.sign(), RateSign::NonNegative);
        assert!((charge.max_abs_rate() - 1.0 / 45000.0).abs() < 1e-18);

        // Idle drain: zero at empty, negative elsewhere.
        let idle =
            Mode::from_rate_fn(&g, 0.0, |s| if s > 0.0 { -3.86e-7 } else { 0.0 }).unwrap();
        assert_eq!(idle.sign(), RateSign::NonPositive);

        // Nonnegative rate that does not vanish at 1 is rejected.
        assert!(matches!(
            Mode::from_rate_fn(&g, 0.0, |_| 1.0),
            Err(ModeError::NonZeroAtFull(_))
        ));
        // Nonpositive rate that does not vanish at 0 is rejected.
        assert!(matches!(
            Mode::from_rate_fn(&g, 0.0, |_| -1.0),
            Err(ModeError::NonZeroAtEmpty(_))
        ));
        // Mixed sign is rejected.
        assert!(matches!(
            Mode::from_rate_fn(&g, 0.0, |s| 0.5 - s),
            Err(ModeError::MixedSignRate { .. })
        ));
        // Increasing nonnegative rate is rejected.
        assert!(matches!(
            Mode::from_rate_fn(&g, 0.0, |s| if s < 1.0 { s } else { 0.0 }),
            Err(ModeError::NotNonIncreasing { .. })
        ));
    }

    #[test]
    fn rate_interpolation_matches_samples() {
        let g = build_grid(18000.0, 450.0, 0.05).unwrap();
        let charge = Mode::from_rate_fn(&g, 20.0, |s| {
            if s < 0.75 { 1.0 / 45000.0 } else { (1.0 - s) / 11250.0 }
        })
        .unwrap();
        // The taper is linear, so interpolation reproduces it exactly.
        assert!((charge.rate_at(0.5) - 1.0 / 45000.0).abs() < 1e-18);
        assert!((charge.rate_at(0.999) - 0.001 / 11250.0).abs() < 1e-12);
        assert_eq!(charge.rate_at(1.0), 0.0);
    }

    #[test]
    fn pair_index_round_trip() {
        for n in 2..=4 {
            let g = unit_grid();
            let modes = ModeSet::new(
                (0..n).map(|_| Mode::from_rate_fn(&g, 0.0, |_| 0.0).unwrap()).collect(),
            )
            .unwrap();
            let mut seen = vec![false; modes.n_pairs()];
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let p = modes.pair_index(i, j);
                    assert!(!seen[p]);
                    seen[p] = true;
                    assert_eq!(modes.pair_decode(p), (i, j));
                }
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn density_index_round_trip() {
        let m = DensityField::zeros(5, 3, 7);
        for k in 0..=5 {
            for i in 0..3 {
                for l in 0..7 {
                    assert_eq!(m.decode(m.idx(k, i, l)), (k, i, l));
                }
            }
        }
        let e = FlowField::zeros(5, 3, 7);
        for k in 0..5 {
            for p in 0..6 {
                for l in 0..7 {
                    assert_eq!(e.decode(e.idx(k, p, l)), (k, p, l));
                }
            }
        }
    }

    #[test]
    fn discretize_uniform_block() {
        let g = build_grid(18000.0, 450.0, 0.05).unwrap();
        let init = discretize_initial(
            &[
                SocDensity::Uniform { lo: 0.2, hi: 0.6, mass: 1.0 },
                SocDensity::Zero,
            ],
            &g,
        )
        .unwrap();
        for l in 0..g.n_h {
            let expected = if (4..12).contains(&l) { 2.5 } else { 0.0 };
            assert!(
                (init[0][l] - expected).abs() < 1e-12,
                "cell {l}: {} vs {expected}",
                init[0][l]
            );
            assert_eq!(init[1][l], 0.0);
        }
        let total: f64 = init.iter().flatten().sum::<f64>() * g.h;
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn discretize_point_mass_single_cell() {
        let g = build_grid(1.0, 1.0, 0.05).unwrap();
        let init = discretize_initial(
            &[SocDensity::Piecewise(vec![(0.0, 0.05, 20.0)])],
            &g,
        )
        .unwrap();
        assert!((init[0][0] - 20.0).abs() < 1e-12); // 1/h
        assert!(init[0][1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn discretize_two_modes_split_mass() {
        let g = build_grid(1.0, 1.0, 0.1).unwrap();
        let init = discretize_initial(
            &[
                SocDensity::Uniform { lo: 0.0, hi: 0.5, mass: 0.5 },
                SocDensity::Uniform { lo: 0.5, hi: 1.0, mass: 0.5 },
            ],
            &g,
        )
        .unwrap();
        let m0: f64 = init[0].iter().sum::<f64>() * g.h;
        let m1: f64 = init[1].iter().sum::<f64>() * g.h;
        assert!((m0 - 0.5).abs() < 1e-10);
        assert!((m1 - 0.5).abs() < 1e-10);
    }

    #[test]
    fn discretize_rejects_unnormalized() {
        let g = unit_grid();
        let res = discretize_initial(&[SocDensity::Uniform { lo: 0.0, hi: 1.0, mass: 0.9 }], &g);
        assert!(matches!(res, Err(DensityError::NotNormalized(_))));
    }

    #[test]
    fn total_mass_examples() {
        let mut m = DensityField::zeros(2, 1, 20);
        assert_eq!(total_mass(&m, 0).unwrap(), 0.0);
        *m.at_mut(0, 0, 3) = 2.5;
        assert!((total_mass(&m, 0).unwrap() - 0.125).abs() < 1e-15);
        assert!(matches!(total_mass(&m, 5), Err(DensityError::IndexOutOfRange { .. })));
    }
}
