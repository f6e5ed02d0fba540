//! Time curves θ_Z, θ_Π and the solar angles: analytic defaults, constants,
//! or natural cubic splines through user-supplied (hour, value) samples.

use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};

/// Peak solar elevation of the synthetic day (rad).
pub const SYNTHETIC_PEAK_ELEVATION: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Synthetic {
    /// 0.7·max(0, sin(π(s−6)/12))²
    ClearSkyIndex,
    /// 70 + 15·sin(2π(s−9)/24) + 8·sin(4πs/24)
    Price,
    /// π/2 − 0.8·sin(π(s−6)/12)
    Zenith,
}

impl Synthetic {
    fn value(self, s: f64) -> f64 {
        match self {
            Synthetic::ClearSkyIndex => {
                let b = (PI * (s - 6.0) / 12.0).sin().max(0.0);
                0.7 * b * b
            }
            Synthetic::Price => {
                70.0 + 15.0 * (2.0 * PI * (s - 9.0) / 24.0).sin() + 8.0 * (4.0 * PI * s / 24.0).sin()
            }
            Synthetic::Zenith => PI / 2.0 - SYNTHETIC_PEAK_ELEVATION * (PI * (s - 6.0) / 12.0).sin(),
        }
    }

    fn derivative(self, s: f64) -> f64 {
        match self {
            Synthetic::ClearSkyIndex => {
                let x = PI * (s - 6.0) / 12.0;
                if x.sin() <= 0.0 {
                    0.0
                } else {
                    0.7 * 2.0 * x.sin() * x.cos() * PI / 12.0
                }
            }
            Synthetic::Price => {
                15.0 * (2.0 * PI / 24.0) * (2.0 * PI * (s - 9.0) / 24.0).cos()
                    + 8.0 * (4.0 * PI / 24.0) * (4.0 * PI * s / 24.0).cos()
            }
            Synthetic::Zenith => -SYNTHETIC_PEAK_ELEVATION * (PI / 12.0) * (PI * (s - 6.0) / 12.0).cos(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TimeCurve {
    Synthetic(Synthetic),
    Constant(f64),
    Spline(CubicSpline),
}

impl TimeCurve {
    pub fn value(&self, s: f64) -> f64 {
        match self {
            TimeCurve::Synthetic(k) => k.value(s),
            TimeCurve::Constant(c) => *c,
            TimeCurve::Spline(sp) => sp.value(s),
        }
    }

    /// Analytic derivative for the synthetic forms, centred differences of the
    /// spline otherwise.
    pub fn derivative(&self, s: f64) -> f64 {
        match self {
            TimeCurve::Synthetic(k) => k.derivative(s),
            TimeCurve::Constant(_) => 0.0,
            TimeCurve::Spline(sp) => {
                const DELTA: f64 = 1e-3;
                let (a, b) = sp.range();
                let lo = (s - DELTA).max(a);
                let hi = (s + DELTA).min(b);
                (sp.value(hi) - sp.value(lo)) / (hi - lo)
            }
        }
    }
}

/// Natural cubic spline; evaluation outside the knot range clamps to the end values.
#[derive(Clone, Debug, PartialEq)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() || x.len() < 2 {
            return Err(Error::invalid("spline needs at least two (x, y) pairs of equal length"));
        }
        for i in 1..x.len() {
            if !(x[i] > x[i - 1]) {
                return Err(Error::invalid(format!("spline knots must increase strictly (row {})", i + 1)));
            }
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::invalid("spline samples must be finite"));
        }
        let n = x.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // Tridiagonal system for the interior second derivatives.
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 0..k {
                let h0 = x[i + 1] - x[i];
                let h1 = x[i + 2] - x[i + 1];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h1 - (y[i + 1] - y[i]) / h0);
            }
            for i in 1..k {
                let lower = x[i + 1] - x[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        Ok(Self { x, y, m })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    pub fn value(&self, s: f64) -> f64 {
        let n = self.x.len();
        if s <= self.x[0] {
            return self.y[0];
        }
        if s >= self.x[n - 1] {
            return self.y[n - 1];
        }
        let i = match self.x.binary_search_by(|v| v.partial_cmp(&s).unwrap()) {
            Ok(i) => return self.y[i],
            Err(i) => i - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - s) / h;
        let b = (s - self.x[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    /// Reads a headerless or headed two-column CSV of (hour, value).
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| Error::File { path: path.to_path_buf(), message: e.to_string() })?;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (row, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::File { path: path.to_path_buf(), message: e.to_string() })?;
            let line = rec.position().map(|p| p.line()).unwrap_or(row as u64 + 1);
            if rec.len() != 2 {
                return Err(Error::File {
                    path: path.to_path_buf(),
                    message: format!("line {line}: expected 2 columns, found {}", rec.len()),
                });
            }
            let parse = |v: &str| v.parse::<f64>();
            match (parse(&rec[0]), parse(&rec[1])) {
                (Ok(x), Ok(y)) => {
                    if let Some(&last) = xs.last() {
                        if x <= last {
                            return Err(Error::File {
                                path: path.to_path_buf(),
                                message: format!("line {line}: hours must increase strictly"),
                            });
                        }
                    }
                    xs.push(x);
                    ys.push(y);
                }
                // A non-numeric first row is treated as a header.
                _ if row == 0 => continue,
                _ => {
                    return Err(Error::File {
                        path: path.to_path_buf(),
                        message: format!("line {line}: non-numeric value"),
                    })
                }
            }
        }
        CubicSpline::new(xs, ys).map_err(|e| Error::File { path: path.to_path_buf(), message: e.to_string() })
    }
}
