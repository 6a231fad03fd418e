//! Marker-based control calibration: a first-order polynomial regression
//! from raw gaze to marker directions, fitted on 16 of 25 markers and
//! evaluated on the remaining 9.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eye::{angular_error, apply_offset, remove_offset, CalibrationParams, EyeModelError};
use crate::geometry::GazeDirection;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("design matrix is rank deficient; need at least 3 non-collinear raw points")]
    DegenerateDesign,
    #[error("invalid marker session: {0}")]
    InvalidSession(String),
    #[error(transparent)]
    Eye(#[from] EyeModelError),
}

/// Placement of the marker grid on a plane in front of the scene camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerGrid {
    pub rows: usize,
    pub cols: usize,
    /// Full angular width (and height) spanned by the outer markers.
    pub fov_deg: f64,
    /// Angle of the grid center below the camera axis.
    pub center_below_deg: f64,
    pub distance_m: f64,
}

impl Default for MarkerGrid {
    fn default() -> Self {
        Self {
            rows: 5,
            cols: 5,
            fov_deg: 20.0,
            center_below_deg: 5.0,
            distance_m: 1.0,
        }
    }
}

impl MarkerGrid {
    /// Marker directions, row-major from the top-left marker. The plane is
    /// perpendicular to the camera axis, so plane offsets divided by the
    /// distance are image coordinates.
    pub fn directions(&self) -> Vec<GazeDirection> {
        let half = (self.fov_deg / 2.0).to_radians().tan();
        let center_v = self.center_below_deg.to_radians().tan();
        let step = |i: usize, n: usize| if n > 1 { -half + 2.0 * half * i as f64 / (n - 1) as f64 } else { 0.0 };
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| (r, c)))
            .map(|(r, c)| GazeDirection::new(step(c, self.cols), center_v + step(r, self.rows)))
            .collect()
    }

    /// The inner `(rows−2)×(cols−2)` block: center, mid-edge and diagonal
    /// neighbors on the default 5×5 grid.
    pub fn default_evaluation(&self) -> Vec<usize> {
        (1..self.rows.saturating_sub(1))
            .flat_map(|r| (1..self.cols.saturating_sub(1)).map(move |c| r * self.cols + c))
            .collect()
    }
}

/// Raw gaze samples recorded while the user looked at each marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerSession {
    pub grid: MarkerGrid,
    pub markers: Vec<GazeDirection>,
    /// One sample list per marker.
    pub samples: Vec<Vec<GazeDirection>>,
    /// Held-out marker indices.
    pub evaluation: Vec<usize>,
}

impl MarkerSession {
    pub fn validate(&self) -> Result<(), BaselineError> {
        let bad = |m: String| Err(BaselineError::InvalidSession(m));
        let n = self.markers.len();
        if self.samples.len() != n {
            return bad(format!("{} markers but {} sample lists", n, self.samples.len()));
        }
        if let Some(i) = self.samples.iter().position(Vec::is_empty) {
            return bad(format!("marker {i} has no samples"));
        }
        let mut seen = vec![false; n];
        for &i in &self.evaluation {
            if i >= n || seen[i] {
                return bad(format!("evaluation index {i} is out of range or repeated"));
            }
            seen[i] = true;
        }
        Ok(())
    }

    /// Markers used for fitting: every marker not held out.
    pub fn estimation(&self) -> Vec<usize> {
        (0..self.markers.len()).filter(|i| !self.evaluation.contains(i)).collect()
    }

    /// `(raw, target)` pairs of the given markers.
    pub fn pairs(&self, markers: &[usize]) -> Vec<(GazeDirection, GazeDirection)> {
        markers
            .iter()
            .flat_map(|&m| self.samples[m].iter().map(move |g| (*g, self.markers[m])))
            .collect()
    }
}

/// `u = a1 + a2·u_raw + a3·v_raw`, `v = b1 + b2·u_raw + b3·v_raw`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub a: [f64; 3],
    pub b: [f64; 3],
    /// Root-mean-square plane distance on the fitted pairs.
    pub residual_rms: f64,
}

impl Regression {
    pub const IDENTITY: Regression = Regression {
        a: [0.0, 1.0, 0.0],
        b: [0.0, 0.0, 1.0],
        residual_rms: 0.0,
    };

    pub fn apply(&self, g: &GazeDirection) -> GazeDirection {
        let [a1, a2, a3] = self.a;
        let [b1, b2, b3] = self.b;
        GazeDirection::new(a1 + a2 * g.u + a3 * g.v, b1 + b2 * g.u + b3 * g.v)
    }
}

/// Least-squares fit of both channels on a shared `[1, u, v]` design.
pub fn fit_regression(pairs: &[(GazeDirection, GazeDirection)]) -> Result<Regression, BaselineError> {
    let n = pairs.len();
    if n < 3 {
        return Err(BaselineError::DegenerateDesign);
    }
    let design = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => 1.0,
        1 => pairs[i].0.u,
        _ => pairs[i].0.v,
    });
    let tu = DVector::from_iterator(n, pairs.iter().map(|p| p.1.u));
    let tv = DVector::from_iterator(n, pairs.iter().map(|p| p.1.v));
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= smax * 1e-10 {
        return Err(BaselineError::DegenerateDesign);
    }
    let eps = smax * 1e-12;
    let a = svd.solve(&tu, eps).map_err(|_| BaselineError::DegenerateDesign)?;
    let b = svd.solve(&tv, eps).map_err(|_| BaselineError::DegenerateDesign)?;
    let ru = &design * &a - &tu;
    let rv = &design * &b - &tv;
    Ok(Regression {
        a: [a[0], a[1], a[2]],
        b: [b[0], b[1], b[2]],
        residual_rms: ((ru.norm_squared() + rv.norm_squared()) / n as f64).sqrt(),
    })
}

/// A mapping from raw tracker gaze to a corrected gaze direction.
pub trait GazeCorrection {
    fn correct(&self, raw: &GazeDirection) -> Result<GazeDirection, BaselineError>;
}

/// Leaves raw gaze untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct Uncorrected;

impl GazeCorrection for Uncorrected {
    fn correct(&self, raw: &GazeDirection) -> Result<GazeDirection, BaselineError> {
        Ok(*raw)
    }
}

impl GazeCorrection for Regression {
    fn correct(&self, raw: &GazeDirection) -> Result<GazeDirection, BaselineError> {
        Ok(self.apply(raw))
    }
}

impl GazeCorrection for CalibrationParams {
    fn correct(&self, raw: &GazeDirection) -> Result<GazeDirection, BaselineError> {
        Ok(apply_offset(raw, self)?)
    }
}

/// Mean over `markers` of the mean angular error of corrected samples, degrees.
pub fn evaluate_accuracy(correction: &impl GazeCorrection, session: &MarkerSession, markers: &[usize]) -> Result<f64, BaselineError> {
    if markers.is_empty() {
        return Err(BaselineError::InvalidSession("no markers to evaluate".into()));
    }
    let mut total = 0.0;
    for &m in markers {
        let samples = &session.samples[m];
        let mut sum = 0.0;
        for g in samples {
            sum += angular_error(&correction.correct(g)?, &session.markers[m]);
        }
        total += sum / samples.len() as f64;
    }
    Ok(total / markers.len() as f64)
}

/// Fits on the estimation markers and reports the held-out error.
pub fn fit_and_evaluate(session: &MarkerSession) -> Result<(Regression, f64), BaselineError> {
    session.validate()?;
    let fit = fit_regression(&session.pairs(&session.estimation()))?;
    let error = evaluate_accuracy(&fit, session, &session.evaluation)?;
    Ok((fit, error))
}

/// How the synthetic tracker distorts the true marker direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Distortion {
    /// `raw = A·target + c` in image coordinates.
    Affine { a: [f64; 3], b: [f64; 3] },
    /// `raw = remove_offset(target, theta)`.
    Offset { theta: CalibrationParams },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionRecipe {
    pub grid: MarkerGrid,
    pub distortion: Distortion,
    /// Per-axis tangent-plane noise on the true direction, degrees.
    pub noise_std_deg: f64,
    pub samples_per_marker: usize,
    pub seed: u64,
}

impl Default for SessionRecipe {
    fn default() -> Self {
        Self {
            grid: MarkerGrid::default(),
            distortion: Distortion::Offset {
                theta: CalibrationParams::AVERAGE_OFFSET,
            },
            noise_std_deg: 0.0,
            // middle 1 s of each 3 s gaze at 50 Hz
            samples_per_marker: 50,
            seed: 0,
        }
    }
}

/// Synthesizes a marker session with a known distortion.
pub fn synthesize_session(recipe: &SessionRecipe) -> Result<MarkerSession, BaselineError> {
    let markers = recipe.grid.directions();
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let noise = Normal::new(0.0, recipe.noise_std_deg.to_radians())
        .map_err(|e| BaselineError::InvalidSession(format!("noise: {e}")))?;
    let mut samples = Vec::with_capacity(markers.len());
    for target in &markers {
        let mut list = Vec::with_capacity(recipe.samples_per_marker);
        for _ in 0..recipe.samples_per_marker {
            let seen = perturb_direction(target, noise.sample(&mut rng), noise.sample(&mut rng));
            let raw = match recipe.distortion {
                Distortion::Affine { a, b } => Regression { a, b, residual_rms: 0.0 }.apply(&seen),
                Distortion::Offset { theta } => remove_offset(&seen, &theta)?,
            };
            list.push(raw);
        }
        samples.push(list);
    }
    Ok(MarkerSession {
        grid: recipe.grid,
        evaluation: recipe.grid.default_evaluation(),
        markers,
        samples,
    })
}

/// Rotates `g` by angles `(x, y)` radians in its tangent plane.
fn perturb_direction(g: &GazeDirection, x: f64, y: f64) -> GazeDirection {
    let r = x.hypot(y);
    if r == 0.0 {
        return *g;
    }
    let d = g.unit().into_inner();
    let helper = if d.x.abs() < 0.9 { nalgebra::Vector3::x() } else { nalgebra::Vector3::y() };
    let e1 = d.cross(&helper).normalize();
    let e2 = d.cross(&e1);
    let v = d * r.cos() + (e1 * (x / r) + e2 * (y / r)) * r.sin();
    GazeDirection::new(v.x / v.z, v.y / v.z)
}
