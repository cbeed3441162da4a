//! Population data model, CSV ingestion and inclusion probabilities.
//!
//! A [`PopulationFrame`] holds planar coordinates and inclusion probabilities for
//! every unit. Units are addressed internally by their position in the frame;
//! the external integer ids only matter for I/O.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Planar coordinates `[x, y]`.
pub type Point = [f64; 2];

/// Immutable population frame with inclusion probabilities summing to `n_target`.
#[derive(Debug, Clone)]
pub struct PopulationFrame {
    ids: Vec<i64>,
    coords: Vec<Point>,
    pi: Vec<f64>,
    n_target: f64,
    positions: HashMap<i64, usize>,
}

impl PopulationFrame {
    pub fn new(ids: Vec<i64>, coords: Vec<Point>, pi: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Domain("population must contain at least one unit".into()));
        }
        if ids.len() != coords.len() || pi.len() != coords.len() {
            return Err(Error::Domain(format!(
                "length mismatch: {} ids, {} coordinates, {} probabilities",
                ids.len(),
                coords.len(),
                pi.len()
            )));
        }
        let mut positions = HashMap::with_capacity(ids.len());
        for (pos, &id) in ids.iter().enumerate() {
            if positions.insert(id, pos).is_some() {
                return Err(Error::Domain(format!("duplicate unit id {id}")));
            }
        }
        for (pos, p) in coords.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(Error::Domain(format!(
                    "unit {} has non-finite coordinates",
                    ids[pos]
                )));
            }
        }
        for (pos, &p) in pi.iter().enumerate() {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Domain(format!(
                    "inclusion probability {p} of unit {} is outside (0, 1]",
                    ids[pos]
                )));
            }
        }
        let n_target = pi.iter().sum();
        Ok(Self {
            ids,
            coords,
            pi,
            n_target,
            positions,
        })
    }

    /// Frame with ids `0..N` and the given probabilities.
    pub fn from_points(coords: Vec<Point>, pi: Vec<f64>) -> Result<Self> {
        let ids = (0..coords.len() as i64).collect();
        Self::new(ids, coords, pi)
    }

    /// Frame with ids `0..N` and equal probabilities `n / N`.
    pub fn with_equal_probabilities(coords: Vec<Point>, n: usize) -> Result<Self> {
        let big_n = coords.len();
        if n == 0 || n > big_n {
            return Err(Error::Infeasible(format!(
                "sample size {n} must be in 1..={big_n}"
            )));
        }
        let pi = vec![n as f64 / big_n as f64; big_n];
        Self::from_points(coords, pi)
    }

    /// Same units, new inclusion probabilities.
    pub fn with_probabilities(&self, pi: Vec<f64>) -> Result<Self> {
        Self::new(self.ids.clone(), self.coords.clone(), pi)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn ids(&self) -> &[i64] {
        &self.ids
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    /// Σπ, the expected sample size.
    pub fn n_target(&self) -> f64 {
        self.n_target
    }

    /// `Some(n)` when Σπ is an integer up to 1e-9.
    pub fn integer_sample_size(&self) -> Option<usize> {
        let r = self.n_target.round();
        ((self.n_target - r).abs() <= 1e-9 * r.max(1.0)).then_some(r as usize)
    }

    /// Position of the unit carrying `id`.
    pub fn position(&self, id: i64) -> Result<usize> {
        self.positions.get(&id).copied().ok_or(Error::Lookup(id))
    }

    /// Writes `id,x,y,pi`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["id", "x", "y", "pi"])?;
        for i in 0..self.len() {
            out.write_record([
                self.ids[i].to_string(),
                self.coords[i][0].to_string(),
                self.coords[i][1].to_string(),
                self.pi[i].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Writes bare coordinates as `id,x,y` with ids `0..N`.
pub fn write_points_csv<W: Write>(points: &[Point], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["id", "x", "y"])?;
    for (i, p) in points.iter().enumerate() {
        out.write_record([i.to_string(), p[0].to_string(), p[1].to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Auxiliary size measure used for probability-proportional-to-size designs.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeVariable(Vec<f64>);

impl SizeVariable {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Domain(format!("size {v} is not a nonnegative number")));
        }
        if values.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Domain("sizes sum to zero".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Inclusion probabilities `min(1, C v_i / Σv)` with `C` chosen so that they sum to `n`.
///
/// Units whose uncapped probability reaches 1 are set to 1 and the remaining
/// sample size is spread over the others; this repeats until no further unit
/// is capped. Zero-size units get probability 0.
pub fn pps_probabilities(sizes: &SizeVariable, n: usize) -> Result<Vec<f64>> {
    let v = sizes.values();
    let big_n = v.len();
    if n == 0 {
        return Err(Error::Domain("sample size must be positive".into()));
    }
    if n > big_n {
        return Err(Error::Infeasible(format!(
            "sample size {n} exceeds population size {big_n}"
        )));
    }
    let positive = v.iter().filter(|&&x| x > 0.0).count();
    if n > positive {
        return Err(Error::Infeasible(format!(
            "sample size {n} exceeds the {positive} units with positive size"
        )));
    }

    let mut capped = vec![false; big_n];
    let mut n_capped = 0usize;
    loop {
        let remaining = (n - n_capped) as f64;
        let total: f64 = v
            .iter()
            .zip(&capped)
            .filter(|(_, &c)| !c)
            .map(|(x, _)| x)
            .sum();
        let mut changed = false;
        for i in 0..big_n {
            if !capped[i] && remaining * v[i] / total >= 1.0 {
                capped[i] = true;
                n_capped += 1;
                changed = true;
            }
        }
        if !changed || n_capped == n {
            let remaining = (n - n_capped) as f64;
            let total: f64 = v
                .iter()
                .zip(&capped)
                .filter(|(_, &c)| !c)
                .map(|(x, _)| x)
                .sum();
            return Ok(v
                .iter()
                .zip(&capped)
                .map(|(&x, &c)| {
                    if c {
                        1.0
                    } else if remaining == 0.0 {
                        0.0
                    } else {
                        remaining * x / total
                    }
                })
                .collect());
        }
    }
}

/// Column names looked up in a population CSV.
#[derive(Debug, Clone)]
pub struct ColumnSchema {
    pub id: String,
    pub x: String,
    pub y: String,
    pub pi: String,
    pub size: String,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            id: "id".into(),
            x: "x".into(),
            y: "y".into(),
            pi: "pi".into(),
            size: "size".into(),
        }
    }
}

/// Parsed population file before inclusion probabilities are settled.
#[derive(Debug, Clone)]
pub struct PopulationTable {
    pub ids: Vec<i64>,
    pub coords: Vec<Point>,
    pub pi: Option<Vec<f64>>,
    pub size: Option<Vec<f64>>,
}

impl PopulationTable {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Frame using the `pi` column verbatim.
    pub fn into_frame(self) -> Result<PopulationFrame> {
        let pi = self
            .pi
            .ok_or_else(|| Error::Schema("pi".into()))?;
        PopulationFrame::new(self.ids, self.coords, pi)
    }

    /// Frame with size-proportional probabilities for sample size `n`.
    ///
    /// Zero-size units cannot carry a positive probability and are dropped with a warning.
    pub fn into_pps_frame(self, n: usize) -> Result<PopulationFrame> {
        let sizes = self
            .size
            .ok_or_else(|| Error::Schema("size".into()))?;
        let pi = pps_probabilities(&SizeVariable::new(sizes)?, n)?;
        let mut ids = Vec::with_capacity(pi.len());
        let mut coords = Vec::with_capacity(pi.len());
        let mut kept = Vec::with_capacity(pi.len());
        for (i, &p) in pi.iter().enumerate() {
            if p > 0.0 {
                ids.push(self.ids[i]);
                coords.push(self.coords[i]);
                kept.push(p);
            } else {
                log::warn!("dropping unit {} with zero size", self.ids[i]);
            }
        }
        PopulationFrame::new(ids, coords, kept)
    }

    /// Frame with equal probabilities `n / N`, ignoring any probability columns.
    pub fn into_equal_frame(self, n: usize) -> Result<PopulationFrame> {
        let big_n = self.len();
        if n == 0 || n > big_n {
            return Err(Error::Infeasible(format!(
                "sample size {n} must be in 1..={big_n}"
            )));
        }
        PopulationFrame::new(self.ids, self.coords, vec![n as f64 / big_n as f64; big_n])
    }

    /// Picks probabilities by what the file provides: `pi` verbatim, else `size`
    /// with PPS for `n`, else equal probabilities for `n`.
    pub fn into_frame_auto(self, n: Option<usize>) -> Result<PopulationFrame> {
        if self.pi.is_some() {
            let frame = self.into_frame()?;
            if let Some(n) = n {
                if frame.integer_sample_size() != Some(n) {
                    return Err(Error::Domain(format!(
                        "pi column sums to {} but sample size {n} was requested",
                        frame.n_target()
                    )));
                }
            }
            return Ok(frame);
        }
        let n = n.ok_or_else(|| {
            Error::Domain("population has no pi column; a sample size is required".into())
        })?;
        if self.size.is_some() {
            self.into_pps_frame(n)
        } else {
            self.into_equal_frame(n)
        }
    }
}

/// Reads a comma-delimited population file with a header row.
///
/// Requires `id`, `x` and `y`; `pi` and `size` are optional. Probabilities in
/// a `pi` column must lie in (0, 1].
pub fn load_population<R: Read>(source: R, schema: &ColumnSchema) -> Result<PopulationTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let require = |name: &str| find(name).ok_or_else(|| Error::Schema(name.to_string()));
    let id_col = require(&schema.id)?;
    let x_col = require(&schema.x)?;
    let y_col = require(&schema.y)?;
    let pi_col = find(&schema.pi);
    let size_col = find(&schema.size);

    let mut table = PopulationTable {
        ids: Vec::new(),
        coords: Vec::new(),
        pi: pi_col.map(|_| Vec::new()),
        size: size_col.map(|_| Vec::new()),
    };

    for (row0, record) in reader.records().enumerate() {
        let record = record?;
        let row = row0 + 1;
        let cell = |col: usize, name: &str| -> Result<&str> {
            record.get(col).ok_or_else(|| Error::Parse {
                row,
                column: name.to_string(),
                value: String::new(),
            })
        };
        let parse_f64 = |col: usize, name: &str| -> Result<f64> {
            let raw = cell(col, name)?;
            raw.parse::<f64>().map_err(|_| Error::Parse {
                row,
                column: name.to_string(),
                value: raw.to_string(),
            })
        };
        let raw_id = cell(id_col, &schema.id)?;
        let id = raw_id.parse::<i64>().map_err(|_| Error::Parse {
            row,
            column: schema.id.clone(),
            value: raw_id.to_string(),
        })?;
        let x = parse_f64(x_col, &schema.x)?;
        let y = parse_f64(y_col, &schema.y)?;
        table.ids.push(id);
        table.coords.push([x, y]);
        if let (Some(col), Some(pi)) = (pi_col, table.pi.as_mut()) {
            let p = parse_f64(col, &schema.pi)?;
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Domain(format!(
                    "row {row}: inclusion probability {p} is outside (0, 1]"
                )));
            }
            pi.push(p);
        }
        if let (Some(col), Some(size)) = (size_col, table.size.as_mut()) {
            size.push(parse_f64(col, &schema.size)?);
        }
    }
    Ok(table)
}
