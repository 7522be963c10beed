//! Exponential accuracy law `WER = exp(a * size + b) + c`.
//!
//! Sizes are in millions of live parameters. Fitting is damped
//! Gauss-Newton (Levenberg-Marquardt) on the three parameters with `c`
//! projected onto `c >= 0` after every step.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::model::ComponentName;
use crate::scalar::Real;

/// Number of fitted parameters.
const N_PARAMS: usize = 3;
pub const MIN_POINTS: usize = 4;
const MAX_ITERATIONS: usize = 200;
const REL_SSE_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeUnit {
    MillionsOfParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SizeWerPoint<T> {
    /// Millions of live parameters.
    pub size: T,
    /// Percent.
    pub wer: T,
}

impl<T: Real> SizeWerPoint<T> {
    pub fn new(size: T, wer: T) -> Self {
        SizeWerPoint { size, wer }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AccuracyCurve<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    /// `None` for curves that were not fitted.
    pub adj_r2: Option<T>,
    pub n_points: usize,
    pub size_unit: SizeUnit,
    pub converged: bool,
    pub iterations: usize,
}

impl<T: Real> AccuracyCurve<T> {
    /// A curve with known parameters.
    pub fn new(a: T, b: T, c: T) -> Self {
        AccuracyCurve {
            a,
            b,
            c,
            adj_r2: None,
            n_points: 0,
            size_unit: SizeUnit::MillionsOfParams,
            converged: true,
            iterations: 0,
        }
    }

    pub fn predict_wer(&self, size: T) -> T {
        (self.a * size + self.b).exp() + self.c
    }

    /// `|dWER/dsize|`, in WER points per million parameters.
    pub fn accuracy_sensitivity(&self, size: T) -> T {
        self.a.abs() * (self.a * size + self.b).exp()
    }

    /// Same curve with its slope scaled by `k > 0` (shifts `b` by `ln k`).
    pub fn with_scaled_sensitivity(&self, k: T) -> Self {
        let mut out = self.clone();
        out.b = self.b + k.ln();
        out
    }
}

impl<T: Real> fmt::Display for AccuracyCurve<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "WER = exp({:.6} * size + {:.6}) + {:.6}", self.a, self.b, self.c)?;
        if let Some(r2) = self.adj_r2 {
            write!(f, " (adj. R^2 {r2:.4}, n = {})", self.n_points)?;
        }
        Ok(())
    }
}

pub fn predict_wer<T: Real>(curve: &AccuracyCurve<T>, size: T) -> T {
    curve.predict_wer(size)
}

pub fn accuracy_sensitivity<T: Real>(curve: &AccuracyCurve<T>, size: T) -> T {
    curve.accuracy_sensitivity(size)
}

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("insufficient points: {0} given, at least {MIN_POINTS} needed")]
    InsufficientPoints(usize),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("point {index}: {reason}")]
    InvalidPoint { index: usize, reason: String },
}

fn residuals<T: Real>(pts: &[SizeWerPoint<T>], theta: [T; 3]) -> T {
    let [a, b, c] = theta;
    pts.iter().fold(T::zero(), |acc, p| {
        let r = (a * p.size + b).exp() + c - p.wer;
        acc + r * r
    })
}

/// Solves a 3x3 system by Gaussian elimination with partial pivoting.
fn solve3<T: Real>(mut m: [[T; 3]; 3], mut rhs: [T; 3]) -> Option<[T; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())?;
        if m[pivot][col].abs() <= T::min_positive_value() || !m[pivot][col].is_finite() {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] = m[row][k] - f * m[col][k];
            }
            rhs[row] = rhs[row] - f * rhs[col];
        }
    }
    let mut x = [T::zero(); 3];
    for row in (0..3).rev() {
        let mut s = rhs[row];
        for k in row + 1..3 {
            s = s - m[row][k] * x[k];
        }
        x[row] = s / m[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Line through `(size, ln(wer - c0))`, or `None` if fewer than two points
/// lie above `c0` or all sizes coincide.
fn log_linear<T: Real>(pts: &[SizeWerPoint<T>], c0: T) -> Option<[T; 3]> {
    let lin: Vec<(T, T)> = pts
        .iter()
        .filter(|p| p.wer - c0 > T::zero())
        .map(|p| (p.size, (p.wer - c0).ln()))
        .collect();
    if lin.len() < 2 {
        return None;
    }
    let n = T::from_usize(lin.len()).unwrap();
    let mx = lin.iter().fold(T::zero(), |s, &(x, _)| s + x) / n;
    let my = lin.iter().fold(T::zero(), |s, &(_, y)| s + y) / n;
    let sxx = lin.iter().fold(T::zero(), |s, &(x, _)| s + (x - mx) * (x - mx));
    let sxy = lin.iter().fold(T::zero(), |s, &(x, y)| s + (x - mx) * (y - my));
    if sxx <= T::zero() {
        return None;
    }
    let a0 = sxy / sxx;
    Some([a0, my - a0 * mx, c0])
}

/// Best log-linear start over a ladder of floors approaching `min(wer)`
/// geometrically; resolves curves whose decaying part is small next to `c`.
fn initial_guess<T: Real>(pts: &[SizeWerPoint<T>]) -> [T; 3] {
    let min_wer = pts.iter().map(|p| p.wer).fold(T::infinity(), T::min);
    let max_wer = pts.iter().map(|p| p.wer).fold(T::neg_infinity(), T::max);
    let span = max_wer - min_wer;
    let c0 = T::lit(0.95) * min_wer.max(T::zero());
    let ladder = (0..=48).map(|k| (min_wer - span * T::lit(10f64.powf(-f64::from(k) / 4.0))).max(T::zero()));
    let mut best: Option<([T; 3], T)> = None;
    for c in std::iter::once(c0).chain(ladder) {
        if let Some(theta) = log_linear(pts, c) {
            let sse = residuals(pts, theta);
            if sse.is_finite() && best.is_none_or(|(_, b)| sse < b) {
                best = Some((theta, sse));
            }
        }
    }
    match best {
        Some((theta, _)) => theta,
        None => {
            let mean = pts.iter().fold(T::zero(), |s, p| s + p.wer) / T::from_usize(pts.len()).unwrap();
            [T::zero(), (mean - c0).max(T::epsilon()).ln(), c0]
        }
    }
}

/// Least-squares fit of the accuracy law. Non-convergence is not an error:
/// the best parameters found are returned with `converged == false`.
pub fn fit_exponential<T: Real>(points: &[SizeWerPoint<T>]) -> Result<AccuracyCurve<T>, FitError> {
    for (index, p) in points.iter().enumerate() {
        if !(p.size > T::zero() && p.size.is_finite()) {
            return Err(FitError::InvalidPoint {
                index,
                reason: format!("size must be > 0, got {}", p.size),
            });
        }
        if !(p.wer >= T::zero() && p.wer <= T::lit(100.0)) {
            return Err(FitError::InvalidPoint {
                index,
                reason: format!("wer must be within [0, 100], got {}", p.wer),
            });
        }
    }
    if points.len() < MIN_POINTS {
        return Err(FitError::InsufficientPoints(points.len()));
    }
    // Canonical order makes the fit independent of input order.
    let mut pts = points.to_vec();
    pts.sort_by(|x, y| x.size.partial_cmp(&y.size).unwrap().then(x.wer.partial_cmp(&y.wer).unwrap()));
    let mut distinct = pts.iter().map(|p| p.size).collect::<Vec<_>>();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(FitError::Degenerate(format!("{} distinct sizes, at least 3 needed", distinct.len())));
    }
    let n = T::from_usize(pts.len()).unwrap();
    let mean = pts.iter().fold(T::zero(), |s, p| s + p.wer) / n;
    let sst = pts.iter().fold(T::zero(), |s, p| s + (p.wer - mean) * (p.wer - mean));
    if sst <= T::zero() {
        return Err(FitError::Degenerate("all WER values are equal".into()));
    }

    let mut theta = initial_guess(&pts);
    let mut sse = residuals(&pts, theta);
    let mut lambda = T::lit(1e-3);
    let ten = T::lit(10.0);
    let abs_floor = T::epsilon() * T::epsilon() * pts.iter().fold(T::one(), |s, p| s + p.wer * p.wer);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        if sse <= abs_floor {
            converged = true;
            break;
        }
        let [a, b, c] = theta;
        let mut jtj = [[T::zero(); 3]; 3];
        let mut jtr = [T::zero(); 3];
        for p in &pts {
            let e = (a * p.size + b).exp();
            let r = e + c - p.wer;
            let j = [p.size * e, e, T::one()];
            for row in 0..3 {
                jtr[row] = jtr[row] + j[row] * r;
                for col in 0..3 {
                    jtj[row][col] = jtj[row][col] + j[row] * j[col];
                }
            }
        }
        let mut damped = jtj;
        for (k, row) in damped.iter_mut().enumerate() {
            let d = jtj[k][k].max(T::epsilon());
            row[k] = row[k] + lambda * d;
        }
        let step = solve3(damped, [-jtr[0], -jtr[1], -jtr[2]]);
        let trial = step.map(|d| [a + d[0], b + d[1], (c + d[2]).max(T::zero())]);
        let trial_sse = trial.map(|t| residuals(&pts, t)).filter(|s| s.is_finite());
        match (trial, trial_sse) {
            (Some(t), Some(s)) if s < sse => {
                let rel = (sse - s) / sse;
                theta = t;
                sse = s;
                lambda = (lambda / ten).max(T::lit(1e-12));
                if rel < T::lit(REL_SSE_TOL) {
                    converged = true;
                    break;
                }
            }
            _ => {
                lambda = lambda * ten;
                if lambda > T::lit(1e16) {
                    // No descent direction left at working precision.
                    converged = true;
                    break;
                }
            }
        }
    }

    let r2 = T::one() - sse / sst;
    let dof = T::from_usize(pts.len() - N_PARAMS).unwrap();
    let adj_r2 = T::one() - (T::one() - r2) * (n - T::one()) / dof;
    Ok(AccuracyCurve {
        a: theta[0],
        b: theta[1],
        c: theta[2],
        adj_r2: Some(adj_r2),
        n_points: pts.len(),
        size_unit: SizeUnit::MillionsOfParams,
        converged,
        iterations,
    })
}

/// One row of a points file.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPoint {
    pub component: ComponentName,
    pub dataset: String,
    pub point: SizeWerPoint<f64>,
}

pub const DEFAULT_DATASET: &str = "default";

/// Reads `component,size_millions,wer_percent[,dataset_tag]` rows. The
/// size column may also be called `live_params_millions`.
pub fn read_points_csv(text: &str) -> Result<Vec<LabeledPoint>, FitError> {
    let bad = |index: usize, reason: String| FitError::InvalidPoint { index, reason };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| bad(0, e.to_string()))?.clone();
    let col = |names: &[&str]| headers.iter().position(|h| names.contains(&h));
    let component = col(&["component"]).ok_or_else(|| bad(0, "missing `component` column".into()))?;
    let size = col(&["size_millions", "live_params_millions"]).ok_or_else(|| bad(0, "missing `size_millions` column".into()))?;
    let wer = col(&["wer_percent"]).ok_or_else(|| bad(0, "missing `wer_percent` column".into()))?;
    let dataset = col(&["dataset_tag"]);

    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(i, e.to_string()))?;
        let num = |c: usize, what: &str| -> Result<f64, FitError> {
            let field = rec.get(c).unwrap_or("");
            field.parse().map_err(|_| bad(i, format!("{what} `{field}` is not a number")))
        };
        let name = rec.get(component).unwrap_or("");
        if name.is_empty() {
            return Err(bad(i, "empty component".into()));
        }
        let point = SizeWerPoint::new(num(size, "size")?, num(wer, "wer")?);
        if !(point.size > 0.0) || !(0.0..=100.0).contains(&point.wer) {
            return Err(bad(i, format!("size must be > 0 and wer within [0, 100], got ({}, {})", point.size, point.wer)));
        }
        out.push(LabeledPoint {
            component: ComponentName::from(name),
            dataset: dataset
                .and_then(|c| rec.get(c))
                .filter(|s| !s.is_empty())
                .unwrap_or(DEFAULT_DATASET)
                .to_string(),
            point,
        });
    }
    Ok(out)
}

/// Points grouped by (component, dataset), in order of first appearance.
pub fn group_points(points: &[LabeledPoint]) -> Vec<(ComponentName, String, Vec<SizeWerPoint<f64>>)> {
    let mut groups: Vec<(ComponentName, String, Vec<SizeWerPoint<f64>>)> = Vec::new();
    for p in points {
        match groups.iter_mut().find(|(c, d, _)| c == &p.component && d == &p.dataset) {
            Some((_, _, v)) => v.push(p.point),
            None => groups.push((p.component.clone(), p.dataset.clone(), vec![p.point])),
        }
    }
    groups
}

/// `size_millions,wer_percent` over the given sizes.
pub fn prediction_csv(curve: &AccuracyCurve<f64>, sizes: &[f64]) -> String {
    let mut out = String::from("size_millions,wer_percent\n");
    for &s in sizes {
        out.push_str(&format!("{s:.4},{:.4}\n", curve.predict_wer(s)));
    }
    out
}
