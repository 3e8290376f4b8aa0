//! Elevation grids, the point sensor, the Dubins-car robot and the pilot path.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::SeededRng;

pub const DEFAULT_DT: f64 = 0.1;
pub const DEFAULT_V_MAX: f64 = 1.0;
pub const GOAL_RADIUS: f64 = 0.1;
pub const STEP_CAP: usize = 2000;
/// Control steps per sensor reading (10 Hz control, 1 Hz sensing).
pub const STEPS_PER_SAMPLE: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Extent {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let e = Extent {
            x_min,
            x_max,
            y_min,
            y_max,
        };
        if !(x_min < x_max && y_min < y_max) || ![x_min, x_max, y_min, y_max].iter().all(|v| v.is_finite()) {
            return Err(Error::Config(format!("degenerate extent {e:?}")));
        }
        Ok(e)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }

    pub fn clamp(&self, p: [f64; 2]) -> [f64; 2] {
        [
            p[0].clamp(self.x_min, self.x_max),
            p[1].clamp(self.y_min, self.y_max),
        ]
    }

    pub fn sample_uniform(&self, rng: &mut SeededRng) -> [f64; 2] {
        let x = rng.uniform_range(self.x_min, self.x_max);
        let y = rng.uniform_range(self.y_min, self.y_max);
        [x, y]
    }

    /// Maps a point in the unit square onto the extent.
    pub fn from_unit(&self, u: [f64; 2]) -> [f64; 2] {
        [
            self.x_min + u[0] * self.width(),
            self.y_min + u[1] * self.height(),
        ]
    }

    /// `resolution × resolution` linearly spaced points, row-major with rows
    /// running along y.
    pub fn grid_points(&self, resolution: usize) -> DenseMatrix {
        let xs = linspace(self.x_min, self.x_max, resolution);
        let ys = linspace(self.y_min, self.y_max, resolution);
        let mut data = Vec::with_capacity(2 * resolution * resolution);
        for y in &ys {
            for x in &xs {
                data.push(*x);
                data.push(*y);
            }
        }
        DenseMatrix::from_vec(resolution * resolution, 2, data).expect("grid shape")
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

/// Elevation raster. Row `r` lies at `y = y_min + r·Δy` and column `c` at
/// `x = x_min + c·Δx`; nodes sit on the extent boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentGrid {
    elevations: DenseMatrix,
    extent: Extent,
}

impl EnvironmentGrid {
    pub fn new(elevations: DenseMatrix, extent: Extent) -> Result<Self> {
        if elevations.rows() < 2 || elevations.cols() < 2 {
            return Err(Error::Config(format!(
                "environment grid must be at least 2x2, got {}x{}",
                elevations.rows(),
                elevations.cols()
            )));
        }
        if !elevations.all_finite() {
            return Err(Error::Config("environment grid has non-finite elevations".into()));
        }
        let extent = Extent::new(extent.x_min, extent.x_max, extent.y_min, extent.y_max)?;
        Ok(EnvironmentGrid { elevations, extent })
    }

    /// Samples `f(x, y)` on a `rows × cols` node lattice.
    pub fn from_fn(rows: usize, cols: usize, extent: Extent, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let xs = linspace(extent.x_min, extent.x_max, cols);
        let ys = linspace(extent.y_min, extent.y_max, rows);
        Self::new(DenseMatrix::from_fn(rows, cols, |r, c| f(xs[c], ys[r])), extent)
    }

    pub fn extent(&self) -> Extent {
        self.extent
    }

    pub fn elevations(&self) -> &DenseMatrix {
        &self.elevations
    }

    /// Bilinear interpolation of the four surrounding nodes.
    pub fn elevation_at(&self, p: [f64; 2]) -> Result<f64> {
        if !self.extent.contains(p) {
            return Err(Error::OutOfExtent { x: p[0], y: p[1] });
        }
        let (rows, cols) = self.elevations.shape();
        let fx = (p[0] - self.extent.x_min) / self.extent.width() * (cols - 1) as f64;
        let fy = (p[1] - self.extent.y_min) / self.extent.height() * (rows - 1) as f64;
        let c0 = (fx.floor() as usize).min(cols - 2);
        let r0 = (fy.floor() as usize).min(rows - 2);
        let (tx, ty) = (fx - c0 as f64, fy - r0 as f64);
        let e = &self.elevations;
        let bottom = e[(r0, c0)] * (1.0 - tx) + e[(r0, c0 + 1)] * tx;
        let top = e[(r0 + 1, c0)] * (1.0 - tx) + e[(r0 + 1, c0 + 1)] * tx;
        Ok(bottom * (1.0 - ty) + top * ty)
    }

    /// Ground truth at each row of `points`.
    pub fn elevations_at(&self, points: &DenseMatrix) -> Result<Vec<f64>> {
        (0..points.rows())
            .map(|i| self.elevation_at([points[(i, 0)], points[(i, 1)]]))
            .collect()
    }

    /// Reads the text format: a header `nrows ncols x_min x_max y_min y_max`
    /// followed by `nrows` lines of `ncols` elevations, first line at `y_min`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::parse(path, msg),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::Config("empty environment file".into()))?
            .split_whitespace()
            .collect();
        if header.len() != 6 {
            return Err(Error::Config(format!(
                "header needs 6 fields `nrows ncols x_min x_max y_min y_max`, found {}",
                header.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number `{s}`")))
        };
        let count = |s: &str| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|_| Error::Config(format!("bad count `{s}`")))
        };
        let (rows, cols) = (count(header[0])?, count(header[1])?);
        let extent = Extent::new(num(header[2])?, num(header[3])?, num(header[4])?, num(header[5])?)?;
        let mut data = Vec::with_capacity(rows * cols);
        let mut seen = 0;
        for line in lines {
            let row: Vec<f64> = line.split_whitespace().map(num).collect::<Result<_>>()?;
            if row.len() != cols {
                return Err(Error::Config(format!(
                    "row {seen} has {} values, expected {cols}",
                    row.len()
                )));
            }
            data.extend(row);
            seen += 1;
        }
        if seen != rows {
            return Err(Error::Config(format!("expected {rows} rows, found {seen}")));
        }
        Self::new(DenseMatrix::from_vec(rows, cols, data)?, extent)
    }

    pub fn to_text(&self) -> String {
        let (rows, cols) = self.elevations.shape();
        let e = self.extent;
        let mut out = format!("{rows} {cols} {} {} {} {}\n", e.x_min, e.x_max, e.y_min, e.y_max);
        for r in 0..rows {
            let line: Vec<String> = self.elevations.row(r).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub location: [f64; 2],
    pub value: f64,
    pub epoch: usize,
}

/// One noisy elevation reading, `f(p) + N(0, 1)`.
pub fn sense(grid: &EnvironmentGrid, p: [f64; 2], epoch: usize, rng: &mut SeededRng) -> Result<Sample> {
    let truth = grid.elevation_at(p)?;
    Ok(Sample {
        location: p,
        value: truth + rng.normal(),
        epoch,
    })
}

pub fn samples_to_matrix(samples: &[Sample]) -> (DenseMatrix, Vec<f64>) {
    let data = samples.iter().flat_map(|s| s.location).collect();
    let x = DenseMatrix::from_vec(samples.len(), 2, data).expect("two columns");
    (x, samples.iter().map(|s| s.value).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub position: [f64; 2],
    pub speed: f64,
    /// Radians in `[-π, π)`.
    pub heading: f64,
}

impl RobotState {
    pub fn at_rest(position: [f64; 2], heading: f64) -> Self {
        RobotState {
            position,
            speed: 0.0,
            heading: wrap_angle(heading),
        }
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

/// Forward-Euler step of `[ẋ₁, ẋ₂, v̇, ω̇] = [v cos ω, v sin ω, a₁, a₂]`.
pub fn step(state: &RobotState, action: [f64; 2], dt: f64, v_max: f64) -> RobotState {
    let (s, c) = state.heading.sin_cos();
    RobotState {
        position: [
            state.position[0] + state.speed * c * dt,
            state.position[1] + state.speed * s * dt,
        ],
        speed: (state.speed + action[0] * dt).clamp(0.0, v_max),
        heading: wrap_angle(state.heading + action[1] * dt),
    }
}

/// PD heading controller with a speed command that drops to zero when the
/// goal is more than 90° off the nose.
#[derive(Clone, Debug, PartialEq)]
pub struct PdTracker {
    pub kp_heading: f64,
    pub kd_heading: f64,
    pub k_speed: f64,
    pub v_max: f64,
    pub dt: f64,
    prev_error: Option<f64>,
}

impl Default for PdTracker {
    fn default() -> Self {
        PdTracker {
            kp_heading: 2.0,
            kd_heading: 0.5,
            k_speed: 2.0,
            v_max: DEFAULT_V_MAX,
            dt: DEFAULT_DT,
            prev_error: None,
        }
    }
}

impl PdTracker {
    pub fn reset(&mut self) {
        self.prev_error = None;
    }

    pub fn heading_error(state: &RobotState, goal: [f64; 2]) -> f64 {
        let bearing = (goal[1] - state.position[1]).atan2(goal[0] - state.position[0]);
        wrap_angle(bearing - state.heading)
    }

    pub fn action(&mut self, state: &RobotState, goal: [f64; 2]) -> [f64; 2] {
        let e = Self::heading_error(state, goal);
        let de = match self.prev_error {
            Some(prev) => wrap_angle(e - prev) / self.dt,
            None => 0.0,
        };
        self.prev_error = Some(e);
        let a2 = self.kp_heading * e + self.kd_heading * de;
        let target_speed = self.v_max * e.cos().max(0.0);
        let a1 = self.k_speed * (target_speed - state.speed);
        [a1, a2]
    }
}

/// Drives the robot to `waypoint`, reading the sensor once per simulated
/// second. If the goal is reached before the first reading, one reading is
/// taken on arrival so every call yields data.
pub fn track_and_sample(
    state: &RobotState,
    waypoint: [f64; 2],
    grid: &EnvironmentGrid,
    epoch: usize,
    rng: &mut SeededRng,
) -> Result<(RobotState, Vec<Sample>)> {
    let extent = grid.extent();
    if !extent.contains(waypoint) {
        return Err(Error::OutOfExtent {
            x: waypoint[0],
            y: waypoint[1],
        });
    }
    let mut tracker = PdTracker::default();
    let mut state = *state;
    let mut samples = Vec::new();
    let reached = |s: &RobotState| {
        (s.position[0] - waypoint[0]).hypot(s.position[1] - waypoint[1]) <= GOAL_RADIUS
    };
    let mut steps = 0;
    while !reached(&state) {
        if steps == STEP_CAP {
            warn!("waypoint {waypoint:?} not reached after {steps} steps");
            return Err(Error::StepCapExceeded {
                steps,
                partial: samples,
            });
        }
        let action = tracker.action(&state, waypoint);
        state = step(&state, action, tracker.dt, tracker.v_max);
        state.position = extent.clamp(state.position);
        steps += 1;
        if steps % STEPS_PER_SAMPLE == 0 {
            samples.push(sense(grid, state.position, epoch, rng)?);
        }
    }
    if samples.is_empty() {
        samples.push(sense(grid, state.position, epoch, rng)?);
    }
    Ok((state, samples))
}

/// Evaluates a Bézier curve at `t ∈ [0, 1]` by de Casteljau's algorithm.
pub fn bezier_point(control: &[[f64; 2]], t: f64) -> [f64; 2] {
    let mut pts = control.to_vec();
    for k in (1..pts.len()).rev() {
        for i in 0..k {
            pts[i] = [
                (1.0 - t) * pts[i][0] + t * pts[i + 1][0],
                (1.0 - t) * pts[i][1] + t * pts[i + 1][1],
            ];
        }
    }
    pts[0]
}

/// Eighteen control points in the unit square. Repeating the corner points
/// pulls the curve out to the edges so it sweeps three lanes in an S.
pub fn default_pilot_template() -> Vec<[f64; 2]> {
    const THIRD: f64 = 1.0 / 3.0;
    vec![
        [0.0, 0.0],
        [0.0, 0.0],
        [1.0, 0.0],
        [1.0, 0.0],
        [1.0, 0.0],
        [1.0, THIRD],
        [0.0, THIRD],
        [0.0, THIRD],
        [0.0, THIRD],
        [0.0, 2.0 * THIRD],
        [0.0, 2.0 * THIRD],
        [1.0, 2.0 * THIRD],
        [1.0, 2.0 * THIRD],
        [1.0, 2.0 * THIRD],
        [1.0, 1.0],
        [0.0, 1.0],
        [0.0, 1.0],
        [0.0, 1.0],
    ]
}

/// `n_points` parameter-uniform waypoints on the Bézier curve whose control
/// points are `template` (unit-square coordinates) mapped onto `extent`.
pub fn bezier_pilot(extent: &Extent, n_points: usize, template: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
    if n_points < 2 {
        return Err(Error::Config(format!("pilot needs at least 2 points, got {n_points}")));
    }
    if template.is_empty() {
        return Err(Error::EmptyInput("pilot control-point template".into()));
    }
    let control: Vec<[f64; 2]> = template.iter().map(|&u| extent.from_unit(u)).collect();
    Ok((0..n_points)
        .map(|i| {
            let t = i as f64 / (n_points - 1) as f64;
            extent.clamp(bezier_point(&control, t))
        })
        .collect())
}

pub const SYNTH_KINDS: [&str; 4] = ["step5", "xsin40x4", "ridge2d", "cratered2d"];

/// Default node count per side of the synthetic rasters.
pub const SYNTH_RESOLUTION: usize = 161;

pub fn xsin40x4(x: f64) -> f64 {
    x * (40.0 * x.powi(4)).sin()
}

/// Five partitions over `t ∈ [0, 1]` with jumps at 0.2, 0.4, 0.6 and 0.8:
/// flat, gentle slope, high-frequency, smooth bump, flat.
pub fn step5_profile(t: f64) -> f64 {
    use std::f64::consts::TAU;
    if t < 0.2 {
        2.0
    } else if t < 0.4 {
        7.0 + 5.0 * (t - 0.2)
    } else if t < 0.6 {
        3.0 + 2.5 * (TAU * 6.0 * (t - 0.4)).sin()
    } else if t < 0.8 {
        9.0 + 3.0 * (PI * (t - 0.6) / 0.2).sin()
    } else {
        4.0
    }
}

/// Flat plain on the left third, a smooth massif in the middle, and rocky
/// ground on the right third, over a 20 m square.
fn ridge2d(x: f64, y: f64) -> f64 {
    let plain = 1.0 + 0.05 * x;
    if x < 20.0 / 3.0 {
        return plain;
    }
    let massif = 1.5
        + 12.0 * (-((x - 10.0).powi(2) / 8.0 + (y - 12.0).powi(2) / 18.0)).exp()
        + 7.0 * (-((x - 9.0).powi(2) / 5.0 + (y - 4.0).powi(2) / 6.0)).exp();
    if x < 40.0 / 3.0 {
        return massif;
    }
    4.0 + rocky(x, y)
}

/// Deterministic rough texture: a fixed sum of short-wavelength waves.
fn rocky(x: f64, y: f64) -> f64 {
    const WAVES: [(f64, f64, f64, f64); 6] = [
        (2.3, 1.1, 0.0, 1.6),
        (-1.4, 2.6, 1.3, 1.3),
        (3.1, -2.2, 2.1, 1.0),
        (0.7, 3.4, 0.4, 0.9),
        (-2.9, -1.7, 3.0, 0.8),
        (4.2, 0.9, 5.1, 0.6),
    ];
    WAVES
        .iter()
        .map(|&(kx, ky, phase, amp)| amp * (kx * x + ky * y + phase).sin())
        .sum()
}

/// Plain with sharp-rimmed bowls.
fn cratered2d(x: f64, y: f64) -> f64 {
    const CRATERS: [(f64, f64, f64, f64); 5] = [
        (5.0, 5.0, 3.0, 6.0),
        (14.0, 6.0, 2.0, 4.0),
        (10.0, 14.0, 4.0, 8.0),
        (3.5, 15.5, 1.5, 3.0),
        (16.5, 16.0, 2.5, 5.0),
    ];
    let mut h = 2.0 + 0.1 * y;
    for &(cx, cy, r, depth) in &CRATERS {
        let d = (x - cx).hypot(y - cy) / r;
        if d < 1.0 {
            h -= depth * (1.0 - d * d);
        } else if d < 1.3 {
            h += 0.4 * depth * (1.0 - (d - 1.0) / 0.3);
        }
    }
    h
}

/// Builds one of the analytic environments in [`SYNTH_KINDS`].
pub fn synth_environment(kind: &str) -> Result<EnvironmentGrid> {
    let n = SYNTH_RESOLUTION;
    let square = Extent::new(0.0, 20.0, 0.0, 20.0)?;
    match kind {
        "step5" => EnvironmentGrid::from_fn(n, n, square, |x, _| step5_profile(x / 20.0)),
        "xsin40x4" => {
            let unit = Extent::new(0.0, 1.0, 0.0, 1.0)?;
            EnvironmentGrid::from_fn(n, 4 * n, unit, |x, _| xsin40x4(x))
        }
        "ridge2d" => EnvironmentGrid::from_fn(n, n, square, ridge2d),
        "cratered2d" => EnvironmentGrid::from_fn(n, n, square, cratered2d),
        other => Err(Error::UnknownKind {
            what: "environment",
            name: other.to_string(),
        }),
    }
}
