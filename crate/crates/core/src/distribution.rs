//! Tabulated efficiency distributions with exact histogram moments and
//! deterministic inverse-CDF sampling.

use serde::Serialize;

use crate::error::{Error, Result};

/// Number of grid nodes used by every tabulated distribution.
pub const GRID_POINTS: usize = 2048;

/// Distribution of an efficiency on `[0, cap]`.
///
/// The tabulated form stores the CDF at `GRID_POINTS` equally spaced nodes
/// and treats it as piecewise linear in between, i.e. a histogram with
/// uniform density inside each cell. Moments and sampling both refer to this
/// histogram, so Monte Carlo estimates are unbiased for `mean()`.
#[derive(Debug, Clone, PartialEq)]
pub enum EfficiencyDistribution {
    PointMass(f64),
    Tabulated(Tabulated),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tabulated {
    cap: f64,
    cdf: Vec<f64>,
    pdf: Vec<f64>,
    mean: f64,
    second_moment: f64,
    raw_mass: f64,
}

/// Largest decrease tolerated in a CDF evaluated from numerical quadrature
/// before it is treated as a failure rather than rounding noise.
const CDF_SLACK: f64 = 1e-6;

impl EfficiencyDistribution {
    /// Tabulates a distribution from its cumulative distribution function.
    ///
    /// `cdf` is evaluated at the grid nodes; the captured mass
    /// `cdf(cap) - cdf(0)` is recorded and the table renormalized to one.
    /// `density`, if given, supplies point values of the PDF for output;
    /// otherwise cell densities of the histogram are used.
    pub fn from_cdf<F, G>(cap: f64, cdf: F, density: Option<G>) -> Result<Self>
    where
        F: Fn(f64) -> f64,
        G: Fn(f64) -> f64,
    {
        if !(cap > 0.0) || !cap.is_finite() {
            return Err(Error::InvalidParameter {
                name: "cap",
                value: cap,
                expected: "a finite upper bound > 0",
            });
        }
        let step = cap / (GRID_POINTS - 1) as f64;
        let mut raw: Vec<f64> = (0..GRID_POINTS).map(|i| cdf(i as f64 * step)).collect();
        if raw.iter().any(|c| !c.is_finite()) {
            return Err(Error::NumericFailure("non-finite CDF value".into()));
        }
        let mut running = raw[0];
        for c in raw.iter_mut() {
            if *c < running - CDF_SLACK {
                return Err(Error::NumericFailure(format!(
                    "CDF decreases by {:.3e}",
                    running - *c
                )));
            }
            running = running.max(*c);
            *c = running;
        }
        let lo = raw[0];
        let raw_mass = raw[GRID_POINTS - 1] - lo;
        if !(raw_mass > 0.0) {
            return Err(Error::NumericFailure(
                "distribution has no mass on its grid".into(),
            ));
        }
        let cdf: Vec<f64> = raw.iter().map(|c| (c - lo) / raw_mass).collect();
        let pdf = match density {
            Some(f) => (0..GRID_POINTS)
                .map(|i| (f(i as f64 * step) / raw_mass).max(0.0))
                .collect(),
            None => cell_densities(&cdf, step),
        };
        Ok(Self::Tabulated(Tabulated::new(cap, cdf, pdf, raw_mass)))
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::PointMass(v) => *v,
            Self::Tabulated(t) => t.mean,
        }
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            Self::PointMass(v) => v * v,
            Self::Tabulated(t) => t.second_moment,
        }
    }

    pub fn variance(&self) -> f64 {
        (self.second_moment() - self.mean().powi(2)).max(0.0)
    }

    /// Upper end of the support grid.
    pub fn cap(&self) -> f64 {
        match self {
            Self::PointMass(v) => *v,
            Self::Tabulated(t) => t.cap,
        }
    }

    /// Probability mass captured on the grid before renormalization.
    pub fn raw_mass(&self) -> f64 {
        match self {
            Self::PointMass(_) => 1.0,
            Self::Tabulated(t) => t.raw_mass,
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Self::PointMass(v) => {
                if x >= *v {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Tabulated(t) => t.cdf_at(x),
        }
    }

    /// Inverse CDF; `u` in `[0, 1)`.
    pub fn sample(&self, u: f64) -> f64 {
        match self {
            Self::PointMass(v) => *v,
            Self::Tabulated(t) => t.quantile(u),
        }
    }

    /// Same shape with every efficiency multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            Self::PointMass(v) => Self::PointMass(v * factor),
            Self::Tabulated(t) => {
                if factor > 0.0 {
                    Self::Tabulated(Tabulated {
                        cap: t.cap * factor,
                        cdf: t.cdf.clone(),
                        pdf: t.pdf.iter().map(|p| p / factor).collect(),
                        mean: t.mean * factor,
                        second_moment: t.second_moment * factor * factor,
                        raw_mass: t.raw_mass,
                    })
                } else {
                    Self::PointMass(0.0)
                }
            }
        }
    }

    /// `(η, pdf, cdf)` rows for plotting; empty for a point mass.
    pub fn table(&self) -> Vec<(f64, f64, f64)> {
        match self {
            Self::PointMass(_) => Vec::new(),
            Self::Tabulated(t) => {
                let step = t.step();
                (0..GRID_POINTS)
                    .map(|i| (i as f64 * step, t.pdf[i], t.cdf[i]))
                    .collect()
            }
        }
    }

    pub fn as_tabulated(&self) -> Option<&Tabulated> {
        match self {
            Self::PointMass(_) => None,
            Self::Tabulated(t) => Some(t),
        }
    }
}

fn cell_densities(cdf: &[f64], step: f64) -> Vec<f64> {
    let n = cdf.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            (cdf[hi] - cdf[lo]) / ((hi - lo) as f64 * step)
        })
        .collect()
}

impl Tabulated {
    fn new(cap: f64, cdf: Vec<f64>, pdf: Vec<f64>, raw_mass: f64) -> Self {
        let step = cap / (GRID_POINTS - 1) as f64;
        let mut mean = 0.0;
        let mut second = 0.0;
        for (i, w) in cdf.windows(2).enumerate() {
            let mass = w[1] - w[0];
            let a = i as f64 * step;
            let b = a + step;
            mean += mass * 0.5 * (a + b);
            second += mass * (a * a + a * b + b * b) / 3.0;
        }
        Self {
            cap,
            cdf,
            pdf,
            mean,
            second_moment: second,
            raw_mass,
        }
    }

    fn step(&self) -> f64 {
        self.cap / (GRID_POINTS - 1) as f64
    }

    pub fn grid(&self) -> Vec<f64> {
        let step = self.step();
        (0..GRID_POINTS).map(|i| i as f64 * step).collect()
    }

    pub fn cdf_values(&self) -> &[f64] {
        &self.cdf
    }

    pub fn pdf_values(&self) -> &[f64] {
        &self.pdf
    }

    fn cdf_at(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return if x == 0.0 { self.cdf[0] } else { 0.0 };
        }
        if x >= self.cap {
            return 1.0;
        }
        let pos = x / self.step();
        let i = (pos.floor() as usize).min(GRID_POINTS - 2);
        let t = pos - i as f64;
        self.cdf[i] + t * (self.cdf[i + 1] - self.cdf[i])
    }

    fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        // First node whose CDF exceeds u; the sample lies in the cell before it.
        let j = self.cdf.partition_point(|&c| c <= u);
        if j == 0 {
            return 0.0;
        }
        if j >= GRID_POINTS {
            // u == 1: upper end of the last cell carrying mass.
            let last = self.cdf.partition_point(|&c| c < 1.0);
            return last.min(GRID_POINTS - 1) as f64 * self.step();
        }
        let i = j - 1;
        let (c0, c1) = (self.cdf[i], self.cdf[j]);
        let t = (u - c0) / (c1 - c0);
        (i as f64 + t) * self.step()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn uniform() -> EfficiencyDistribution {
        EfficiencyDistribution::from_cdf(0.5, |x| x / 0.5, None::<fn(f64) -> f64>).unwrap()
    }

    #[test]
    fn uniform_moments_and_quantiles() {
        let d = uniform();
        assert_relative_eq!(d.mean(), 0.25, max_relative = 1e-12);
        assert_relative_eq!(d.second_moment(), 0.25 / 3.0, max_relative = 1e-12);
        assert_eq!(d.sample(0.0), 0.0);
        assert_relative_eq!(d.sample(0.5), 0.25, max_relative = 1e-12);
        assert_relative_eq!(d.sample(1.0 - 1e-15), 0.5, max_relative = 1e-9);
        assert_relative_eq!(d.cdf(0.1), 0.2, max_relative = 1e-12);
        assert_eq!(d.raw_mass(), 1.0);
    }

    #[test]
    fn renormalizes_partial_mass() {
        let d = EfficiencyDistribution::from_cdf(1.0, |x| 0.5 * x, None::<fn(f64) -> f64>).unwrap();
        assert_relative_eq!(d.raw_mass(), 0.5);
        assert_relative_eq!(d.cdf(1.0), 1.0);
    }

    #[test]
    fn rejects_decreasing_cdf() {
        let r = EfficiencyDistribution::from_cdf(1.0, |x| 1.0 - x, None::<fn(f64) -> f64>);
        assert!(matches!(r, Err(Error::NumericFailure(_))));
    }

    #[test]
    fn scaling_preserves_shape() {
        let d = uniform().scaled(0.5);
        assert_relative_eq!(d.mean(), 0.125, max_relative = 1e-12);
        assert_relative_eq!(d.cap(), 0.25);
        assert_relative_eq!(d.sample(0.5), 0.125, max_relative = 1e-12);
        let p = EfficiencyDistribution::PointMass(0.8).scaled(0.5);
        assert_eq!(p, EfficiencyDistribution::PointMass(0.4));
    }

    #[test]
    fn point_mass() {
        let p = EfficiencyDistribution::PointMass(0.7);
        assert_eq!(p.sample(0.3), 0.7);
        assert_eq!(p.variance(), 0.0);
        assert_eq!(p.cdf(0.69), 0.0);
        assert_eq!(p.cdf(0.7), 1.0);
    }
}
