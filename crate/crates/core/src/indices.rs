//! Spatial balance measures of a sample.
//!
//! * [`moran_i`]: classical Moran's I of a variable.
//! * [`moran_normalized`]: weighted correlation between each value and the weighted
//!   mean of its neighbours; always in `[-1, 1]`.
//! * [`spatial_balance_ib`]: the normalized index applied to the sample indicator δ.
//!   Negative values mean the sample is spread out, positive values mean it is clustered.
//! * [`spatial_balance_voronoi`]: variance around 1 of the inclusion-probability mass
//!   collected by each sample unit's Voronoi polygon.

use serde::Serialize;

use crate::designs::SampleSelection;
use crate::error::{Error, Result};
use crate::frame::PopulationFrame;
use crate::spatial::for_each_nearest_sample;
use crate::weights::WeightsMatrix;

/// Relative size under which a quadratic form counts as zero.
const DEGENERATE_REL: f64 = 1e-12;

/// Values centered on their row-sum weighted mean, with neighbourhood means.
#[derive(Debug, Clone)]
pub struct CenteredValues {
    /// `z_i = y_i − Ȳ_w`
    pub z: Vec<f64>,
    /// `Ȳ_w = Σ w_i· y_i / w`
    pub weighted_mean: f64,
    /// `Z̄_i = Σ_j w_ij z_j / w_i·`, `None` where `w_i· = 0`.
    pub local_means: Vec<Option<f64>>,
    /// `Z̄̄ = Σ_j w_·j z_j / w`
    pub grand_local_mean: f64,
}

impl CenteredValues {
    pub fn new(y: &[f64], w: &WeightsMatrix) -> Result<Self> {
        check_len(y, w)?;
        if !(w.total() > 0.0) {
            return Err(Error::DegenerateWeights);
        }
        let weighted_mean =
            y.iter().zip(w.row_sums()).map(|(a, d)| a * d).sum::<f64>() / w.total();
        let z: Vec<f64> = y.iter().map(|v| v - weighted_mean).collect();
        let wz = w.apply(&z);
        let local_means = wz
            .iter()
            .zip(w.row_sums())
            .map(|(&s, &d)| (d > 0.0).then(|| s / d))
            .collect();
        let grand_local_mean =
            z.iter().zip(w.col_sums()).map(|(a, c)| a * c).sum::<f64>() / w.total();
        Ok(Self {
            z,
            weighted_mean,
            local_means,
            grand_local_mean,
        })
    }
}

fn check_len(y: &[f64], w: &WeightsMatrix) -> Result<()> {
    if y.len() != w.len() {
        return Err(Error::Domain(format!(
            "{} values for a {}-unit weights matrix",
            y.len(),
            w.len()
        )));
    }
    Ok(())
}

/// Classical Moran's I: `N Σ w_ij (y_i − ȳ)(y_j − ȳ) / (w Σ (y_i − ȳ)²)`.
pub fn moran_i(y: &[f64], w: &WeightsMatrix) -> Result<f64> {
    check_len(y, w)?;
    if !(w.total() > 0.0) {
        return Err(Error::DegenerateWeights);
    }
    let big_n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / big_n;
    let dev: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let ss: f64 = dev.iter().map(|d| d * d).sum();
    let scale: f64 = y.iter().map(|v| v * v).sum();
    if !(ss > DEGENERATE_REL * scale) {
        return Err(Error::DegenerateVariance);
    }
    Ok(big_n * w.quad(&dev) / (w.total() * ss))
}

/// The three quadratic forms behind the normalized index: `zᵀWz`, `zᵀDz`, `zᵀBz`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedParts {
    pub numerator: f64,
    pub zdz: f64,
    pub zbz: f64,
}

impl NormalizedParts {
    pub fn compute(y: &[f64], w: &WeightsMatrix) -> Result<Self> {
        let centered = CenteredValues::new(y, w)?;
        let z = &centered.z;
        let ops = w.operators();
        Ok(Self {
            numerator: w.quad(z),
            zdz: ops.quad_d(z),
            zbz: ops.quad_b(z),
        })
    }

    /// `zᵀWz / sqrt(zᵀDz · zᵀBz)`, with degenerate denominators reported as errors.
    pub fn index(&self, y: &[f64], w: &WeightsMatrix) -> Result<f64> {
        let scale: f64 = y.iter().zip(w.row_sums()).map(|(a, d)| d * a * a).sum();
        if !(self.zdz > DEGENERATE_REL * scale) {
            return Err(Error::DegenerateVariance);
        }
        if !(self.zbz > DEGENERATE_REL * self.zdz) {
            return Err(Error::DegenerateLocalMeans);
        }
        let raw = self.numerator / (self.zdz * self.zbz).sqrt();
        if raw.abs() > 1.0 + 1e-9 {
            return Err(Error::Numeric(format!("normalized index {raw} outside [-1, 1]")));
        }
        // rounding can push an exact ±1 a few ulps outside
        Ok(raw.clamp(-1.0, 1.0))
    }
}

/// Normalized Moran index in `[-1, 1]`.
pub fn moran_normalized(y: &[f64], w: &WeightsMatrix) -> Result<f64> {
    NormalizedParts::compute(y, w)?.index(y, w)
}

/// Normalized index of the sample indicator δ.
pub fn spatial_balance_ib(
    frame: &PopulationFrame,
    sample: &SampleSelection,
    w: &WeightsMatrix,
) -> Result<f64> {
    if sample.population_size() != frame.len() {
        return Err(Error::Domain("sample does not belong to this frame".into()));
    }
    if sample.is_empty() || sample.len() == frame.len() {
        return Err(Error::DegenerateIndicator);
    }
    moran_normalized(&sample.indicator_values(), w)
}

/// Voronoi balance `B = (1/n) Σ (v_i − 1)²` and the polygon sums `v`, in the order of
/// `sample.units()`. Population units equidistant from several sample units are split
/// equally among them.
pub fn spatial_balance_voronoi(
    frame: &PopulationFrame,
    sample: &SampleSelection,
) -> Result<(f64, Vec<f64>)> {
    if sample.population_size() != frame.len() {
        return Err(Error::Domain("sample does not belong to this frame".into()));
    }
    let mut slot = vec![usize::MAX; frame.len()];
    for (s, &u) in sample.units().iter().enumerate() {
        slot[u] = s;
    }
    let pi = frame.pi();
    let mut v = vec![0.0; sample.len()];
    for_each_nearest_sample(frame, sample, |i, nearest| {
        let share = pi[i] / nearest.len() as f64;
        for &u in nearest {
            v[slot[u]] += share;
        }
    })?;
    let b = v.iter().map(|x| (x - 1.0) * (x - 1.0)).sum::<f64>() / v.len() as f64;
    Ok((b, v))
}

/// All three measures for one sample.
#[derive(Debug, Clone, Serialize)]
pub struct BalanceReport {
    pub b: f64,
    pub i_m: Option<f64>,
    pub i_b: Option<f64>,
    pub n: usize,
    #[serde(rename = "N")]
    pub population: usize,
    #[serde(skip)]
    pub voronoi_sums: Vec<f64>,
    pub flags: Vec<String>,
}

impl BalanceReport {
    /// Computes B, I_M and I_B; degenerate Moran indices are recorded as flags.
    pub fn compute(
        frame: &PopulationFrame,
        sample: &SampleSelection,
        w: &WeightsMatrix,
    ) -> Result<Self> {
        let (b, voronoi_sums) = spatial_balance_voronoi(frame, sample)?;
        let mut flags = Vec::new();
        let mut keep = |name: &str, r: Result<f64>| -> Result<Option<f64>> {
            match r {
                Ok(v) => Ok(Some(v)),
                Err(e) if e.is_degenerate() => {
                    flags.push(format!("{name}:{}", e.kind_name()));
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        };
        let delta = sample.indicator_values();
        let i_m = keep("i_m", moran_i(&delta, w))?;
        let i_b = keep("i_b", spatial_balance_ib(frame, sample, w))?;
        if sample.random_size() {
            flags.push("random_size".into());
        }
        if w.row_sums().iter().any(|&s| s == 0.0) {
            flags.push("certain_units".into());
        }
        Ok(Self {
            b,
            i_m,
            i_b,
            n: sample.len(),
            population: frame.len(),
            voronoi_sums,
            flags,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
