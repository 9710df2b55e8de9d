//! Atmospheric transmittance providers: a constant value, or a table produced
//! by an external radiative-transfer code and interpolated on demand.
//!
//! Table format (CSV, UTF-8, `#` comments):
//!
//! ```text
//! # lambda_nm=1550
//! zenith_deg,ground_alt_m,platform_alt_m,transmittance
//! 0,20,35000,0.78
//! ```
//!
//! Slant rows have `zenith_deg < 90` and must form a full grid over
//! (zenith, ground altitude, platform altitude). Rows with `zenith_deg = 90`
//! describe horizontal paths between two platforms at `platform_alt_m` whose
//! straight line dips to `ground_alt_m`; they form a separate full grid over
//! (dip `platform_alt_m - ground_alt_m`, platform altitude).

use std::fmt::Debug;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};

/// A transmittance query result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmittance {
    pub value: f64,
    /// The query fell outside the table and was clamped to its hull.
    pub extrapolated: bool,
}

pub trait TransmittanceProvider: Debug + Send + Sync {
    /// Transmittance of a slant path; `zenith` in radians, altitudes in meters.
    fn slant(&self, zenith: f64, ground_alt: f64, platform_alt: f64) -> Transmittance;

    /// Transmittance of a horizontal path between two platforms at
    /// `platform_alt` whose line of sight dips to `min_alt`.
    fn horizontal(&self, min_alt: f64, platform_alt: f64) -> Transmittance;

    fn describe(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantTransmittance(f64);

impl ConstantTransmittance {
    pub fn new(value: f64) -> Result<Self> {
        crate::error::check_fraction("transmittance", value)?;
        Ok(Self(value))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

impl TransmittanceProvider for ConstantTransmittance {
    fn slant(&self, _: f64, _: f64, _: f64) -> Transmittance {
        Transmittance {
            value: self.0,
            extrapolated: false,
        }
    }

    fn horizontal(&self, _: f64, _: f64) -> Transmittance {
        Transmittance {
            value: self.0,
            extrapolated: false,
        }
    }

    fn describe(&self) -> String {
        format!("constant {}", self.0)
    }
}

/// One table row as read from disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableRow {
    pub zenith_deg: f64,
    pub ground_alt: f64,
    pub platform_alt: f64,
    pub value: f64,
}

/// Regular grid with values stored in row-major order over its axes.
#[derive(Debug, Clone, PartialEq)]
struct Grid {
    axes: Vec<Vec<f64>>,
    values: Vec<f64>,
}

fn build_axis(points: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut axis: Vec<f64> = points.collect();
    axis.sort_by(f64::total_cmp);
    axis.dedup();
    axis
}

impl Grid {
    fn from_points(points: &[(Vec<f64>, f64, u64)], dims: usize, what: &str) -> Result<Self> {
        let axes: Vec<Vec<f64>> = (0..dims)
            .map(|d| build_axis(points.iter().map(|p| p.0[d])))
            .collect();
        let size: usize = axes.iter().map(Vec::len).product();
        let mut values = vec![f64::NAN; size];
        for (coords, value, line) in points {
            let mut idx = 0;
            for (d, axis) in axes.iter().enumerate() {
                let i = axis
                    .binary_search_by(|a| a.total_cmp(&coords[d]))
                    .expect("coordinate taken from this axis");
                idx = idx * axis.len() + i;
            }
            if !values[idx].is_nan() {
                return Err(Error::InvariantViolation(format!(
                    "duplicate {what} grid point at line {line}"
                )));
            }
            values[idx] = *value;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::InvariantViolation(format!(
                "{what} rows do not form a full grid: {} of {size} points present",
                points.len()
            )));
        }
        Ok(Self { axes, values })
    }

    /// Multilinear interpolation with clamping to the grid hull.
    fn interpolate(&self, query: &[f64]) -> Transmittance {
        let mut extrapolated = false;
        // (lower index, weight of upper neighbour) per axis
        let mut brackets = Vec::with_capacity(self.axes.len());
        for (axis, &q) in self.axes.iter().zip(query) {
            let (lo, hi) = (axis[0], axis[axis.len() - 1]);
            if q < lo - 1e-9 * lo.abs().max(1.0) || q > hi + 1e-9 * hi.abs().max(1.0) {
                extrapolated = true;
            }
            let q = q.clamp(lo, hi);
            if axis.len() == 1 {
                brackets.push((0, 0.0));
                continue;
            }
            let i = axis.partition_point(|&a| a <= q).clamp(1, axis.len() - 1) - 1;
            let t = (q - axis[i]) / (axis[i + 1] - axis[i]);
            brackets.push((i, t));
        }
        let dims = self.axes.len();
        let mut value = 0.0;
        for corner in 0..(1usize << dims) {
            let mut weight = 1.0;
            let mut idx = 0;
            for (d, axis) in self.axes.iter().enumerate() {
                let (i, t) = brackets[d];
                let upper = (corner >> (dims - 1 - d)) & 1 == 1;
                let j = if upper {
                    (i + 1).min(axis.len() - 1)
                } else {
                    i
                };
                weight *= if upper { t } else { 1.0 - t };
                idx = idx * axis.len() + j;
            }
            if weight != 0.0 {
                value += weight * self.values[idx];
            }
        }
        Transmittance {
            value: value.clamp(0.0, 1.0),
            extrapolated,
        }
    }
}

/// Tabulated transmittance for one wavelength.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmittanceTable {
    /// Wavelength in meters, if recorded in the file header.
    pub wavelength: Option<f64>,
    pub source: String,
    pub rows: Vec<TableRow>,
    slant: Option<Grid>,
    horizontal: Option<Grid>,
}

const HEADER: [&str; 4] = [
    "zenith_deg",
    "ground_alt_m",
    "platform_alt_m",
    "transmittance",
];

impl TransmittanceTable {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!(
                "cannot read transmittance table {}: {e}",
                path.display()
            ))
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut wavelength = None;
        for line in text.lines() {
            let line = line.trim();
            if let Some(meta) = line.strip_prefix('#') {
                if let Some(v) = meta.trim().strip_prefix("lambda_nm=") {
                    let nm: f64 = v.trim().parse().map_err(|_| Error::Parse {
                        line: 0,
                        message: format!("bad lambda_nm value `{v}`"),
                    })?;
                    wavelength = Some(nm * 1e-9);
                }
            }
        }
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| Error::Parse {
            line: e.position().map_or(1, |p| p.line()),
            message: e.to_string(),
        })?;
        if header.is_empty() {
            return Err(Error::Parse {
                line: 1,
                message: "empty transmittance table".into(),
            });
        }
        if header.iter().ne(HEADER.iter().copied()) {
            return Err(Error::Parse {
                line: reader.position().line().max(1),
                message: format!("expected header `{}`", HEADER.join(",")),
            });
        }
        let mut rows = Vec::new();
        let mut slant_points = Vec::new();
        let mut horizontal_points = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let mut fields = [0.0; 4];
            for (slot, (name, raw)) in fields.iter_mut().zip(HEADER.iter().zip(record.iter())) {
                *slot = raw.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("column `{name}`: cannot parse `{raw}` as a number"),
                })?;
            }
            let row = TableRow {
                zenith_deg: fields[0],
                ground_alt: fields[1],
                platform_alt: fields[2],
                value: fields[3],
            };
            if !(0.0..=1.0).contains(&row.value) {
                return Err(Error::InvariantViolation(format!(
                    "line {line}: transmittance {} outside [0, 1]",
                    row.value
                )));
            }
            if !(0.0..=90.0).contains(&row.zenith_deg) {
                return Err(Error::InvariantViolation(format!(
                    "line {line}: zenith {} deg outside [0, 90]",
                    row.zenith_deg
                )));
            }
            if !(row.ground_alt >= 0.0) || row.platform_alt < row.ground_alt {
                return Err(Error::InvariantViolation(format!(
                    "line {line}: altitudes ({}, {}) m must satisfy 0 <= ground <= platform",
                    row.ground_alt, row.platform_alt
                )));
            }
            if row.zenith_deg == 90.0 {
                // Gridded over (dip below the platforms, platform altitude) so
                // that every combination is a physical path.
                horizontal_points.push((
                    vec![row.platform_alt - row.ground_alt, row.platform_alt],
                    row.value,
                    line,
                ));
            } else {
                slant_points.push((
                    vec![row.ground_alt, row.platform_alt, row.zenith_deg],
                    row.value,
                    line,
                ));
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Parse {
                line: reader.position().line(),
                message: "transmittance table has no data rows".into(),
            });
        }
        let slant = if slant_points.is_empty() {
            None
        } else {
            Some(Grid::from_points(&slant_points, 3, "slant")?)
        };
        let horizontal = if horizontal_points.is_empty() {
            None
        } else {
            Some(Grid::from_points(&horizontal_points, 2, "horizontal")?)
        };
        if let Some(grid) = &slant {
            let nz = grid.axes[2].len();
            for (block, chunk) in grid.values.chunks(nz).enumerate() {
                if chunk.windows(2).any(|w| w[1] > w[0]) {
                    let nh = grid.axes[1].len();
                    return Err(Error::InvariantViolation(format!(
                        "transmittance increases with zenith angle at ground {} m, platform {} m",
                        grid.axes[0][block / nh],
                        grid.axes[1][block % nh]
                    )));
                }
            }
        }
        Ok(Self {
            wavelength,
            source: source.to_string(),
            rows,
            slant,
            horizontal,
        })
    }

    pub fn has_horizontal(&self) -> bool {
        self.horizontal.is_some()
    }

    /// Slant transmittance at `zenith_deg` (degrees).
    pub fn transmittance(
        &self,
        zenith_deg: f64,
        ground_alt: f64,
        platform_alt: f64,
    ) -> Transmittance {
        match &self.slant {
            Some(grid) => grid.interpolate(&[ground_alt, platform_alt, zenith_deg]),
            None => Transmittance {
                value: 1.0,
                extrapolated: true,
            },
        }
    }
}

impl TransmittanceProvider for TransmittanceTable {
    fn slant(&self, zenith: f64, ground_alt: f64, platform_alt: f64) -> Transmittance {
        let t = self.transmittance(zenith.to_degrees(), ground_alt, platform_alt);
        if t.extrapolated {
            warn!(
                "slant transmittance query ({:.2} deg, {ground_alt} m, {platform_alt} m) outside table {}; clamped",
                zenith.to_degrees(),
                self.source
            );
        }
        t
    }

    fn horizontal(&self, min_alt: f64, platform_alt: f64) -> Transmittance {
        match &self.horizontal {
            Some(grid) => {
                let t = grid.interpolate(&[platform_alt - min_alt, platform_alt]);
                if t.extrapolated {
                    warn!(
                        "horizontal transmittance query ({min_alt} m, {platform_alt} m) outside table {}; clamped",
                        self.source
                    );
                }
                t
            }
            None => {
                warn!(
                    "table {} has no horizontal rows; assuming lossless horizontal path",
                    self.source
                );
                Transmittance {
                    value: 1.0,
                    extrapolated: true,
                }
            }
        }
    }

    fn describe(&self) -> String {
        format!("table {}", self.source)
    }
}
