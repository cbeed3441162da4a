//! Sampling designs: simple random sampling, the local pivotal method,
//! two-stage k-clustered sampling and maximum-entropy (conditional Poisson) sampling.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::PopulationFrame;
use crate::spatial::GridIndex;

/// Probabilities this close to 0 or 1 count as decided in the pivotal method.
const DECIDED_EPS: f64 = 1e-10;

/// A selected subset of frame units and its 0/1 indicator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSelection {
    units: Vec<usize>,
    indicator: Vec<bool>,
    random_size: bool,
}

impl SampleSelection {
    /// Selection of frame positions `units` out of `population` units.
    pub fn new(mut units: Vec<usize>, population: usize) -> Result<Self> {
        units.sort_unstable();
        let mut indicator = vec![false; population];
        for &u in &units {
            if u >= population {
                return Err(Error::Domain(format!(
                    "unit position {u} outside population of {population}"
                )));
            }
            if indicator[u] {
                return Err(Error::Domain(format!("unit position {u} selected twice")));
            }
            indicator[u] = true;
        }
        Ok(Self {
            units,
            indicator,
            random_size: false,
        })
    }

    /// Selection from external unit ids.
    pub fn from_ids(frame: &PopulationFrame, ids: &[i64]) -> Result<Self> {
        let units = ids
            .iter()
            .map(|&id| frame.position(id))
            .collect::<Result<Vec<_>>>()?;
        Self::new(units, frame.len())
    }

    fn from_indicator(indicator: Vec<bool>) -> Self {
        let units = indicator
            .iter()
            .enumerate()
            .filter_map(|(i, &d)| d.then_some(i))
            .collect();
        Self {
            units,
            indicator,
            random_size: false,
        }
    }

    /// Frame positions of the selected units, ascending.
    pub fn units(&self) -> &[usize] {
        &self.units
    }

    pub fn indicator(&self) -> &[bool] {
        &self.indicator
    }

    /// δ as reals.
    pub fn indicator_values(&self) -> Vec<f64> {
        self.indicator.iter().map(|&d| f64::from(u8::from(d))).collect()
    }

    pub fn contains(&self, unit: usize) -> bool {
        self.indicator.get(unit).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn population_size(&self) -> usize {
        self.indicator.len()
    }

    /// Set when the design could not guarantee a fixed size (non-integer Σπ).
    pub fn random_size(&self) -> bool {
        self.random_size
    }

    /// External ids of the selected units.
    pub fn ids(&self, frame: &PopulationFrame) -> Vec<i64> {
        self.units.iter().map(|&u| frame.ids()[u]).collect()
    }

    /// Writes the selected ids as a one-column CSV with header `id`.
    pub fn write_csv<W: std::io::Write>(&self, frame: &PopulationFrame, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["id"])?;
        for id in self.ids(frame) {
            out.write_record([id.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Reads selected ids from a CSV with an `id` column.
pub fn read_sample_ids<R: std::io::Read>(source: R) -> Result<Vec<i64>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let col = reader
        .headers()?
        .iter()
        .position(|h| h == "id")
        .ok_or_else(|| Error::Schema("id".into()))?;
    let mut ids = Vec::new();
    for (row0, record) in reader.records().enumerate() {
        let record = record?;
        let raw = record.get(col).unwrap_or("");
        ids.push(raw.parse::<i64>().map_err(|_| Error::Parse {
            row: row0 + 1,
            column: "id".into(),
            value: raw.to_string(),
        })?);
    }
    Ok(ids)
}

/// Seed plus stream index; identical pairs reproduce identical draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Simple random sampling without replacement.
pub fn srs<R: Rng + ?Sized>(frame: &PopulationFrame, n: usize, rng: &mut R) -> Result<SampleSelection> {
    let big_n = frame.len();
    if n > big_n {
        return Err(Error::Infeasible(format!(
            "sample size {n} exceeds population size {big_n}"
        )));
    }
    SampleSelection::new(index::sample(rng, big_n, n).into_vec(), big_n)
}

/// Local pivotal method: a random undecided unit competes with its nearest undecided
/// neighbour until every probability is 0 or 1.
pub fn lpm<R: Rng + ?Sized>(frame: &PopulationFrame, rng: &mut R) -> Result<SampleSelection> {
    let coords = frame.coords();
    let mut p = frame.pi().to_vec();
    if let Some(bad) = p.iter().find(|&&x| !(x > 0.0 && x <= 1.0)) {
        return Err(Error::Domain(format!("inclusion probability {bad} outside (0, 1]")));
    }

    // undecided units with O(1) removal
    let mut undecided: Vec<usize> = Vec::with_capacity(p.len());
    let mut slot = vec![usize::MAX; p.len()];
    for i in 0..p.len() {
        if p[i] < 1.0 - DECIDED_EPS {
            slot[i] = undecided.len();
            undecided.push(i);
        } else {
            p[i] = 1.0;
        }
    }
    let mut grid = GridIndex::from_subset(coords, &undecided);
    let mut retire = |u: usize, undecided: &mut Vec<usize>, grid: &mut GridIndex| {
        let s = slot[u];
        let last = *undecided.last().unwrap();
        undecided.swap_remove(s);
        if last != u {
            slot[last] = s;
        }
        slot[u] = usize::MAX;
        grid.remove(u);
    };

    while undecided.len() > 1 {
        let i = undecided[rng.random_range(0..undecided.len())];
        let tied = grid.nearest(coords[i], Some(i));
        let j = if tied.len() == 1 {
            tied[0]
        } else {
            tied[rng.random_range(0..tied.len())]
        };
        let (pi, pj) = (p[i], p[j]);
        let s = pi + pj;
        let u: f64 = rng.random();
        if s <= 1.0 {
            if u * s < pi {
                p[i] = s;
                p[j] = 0.0;
            } else {
                p[i] = 0.0;
                p[j] = s;
            }
        } else if u * (2.0 - s) < 1.0 - pj {
            p[i] = 1.0;
            p[j] = s - 1.0;
        } else {
            p[i] = s - 1.0;
            p[j] = 1.0;
        }
        for k in [i, j] {
            if p[k] <= DECIDED_EPS {
                p[k] = 0.0;
                retire(k, &mut undecided, &mut grid);
            } else if p[k] >= 1.0 - DECIDED_EPS {
                p[k] = 1.0;
                retire(k, &mut undecided, &mut grid);
            }
        }
    }

    let mut random_size = false;
    if let Some(&last) = undecided.first() {
        // only reachable when Σπ is not an integer
        random_size = true;
        p[last] = if rng.random::<f64>() < p[last] { 1.0 } else { 0.0 };
    }
    let mut sample = SampleSelection::from_indicator(p.iter().map(|&x| x == 1.0).collect());
    sample.random_size = random_size;
    Ok(sample)
}

/// Unit membership of a regular `grid × grid` partition of the frame's bounding box.
#[derive(Debug, Clone)]
pub struct CellPartition {
    grid: usize,
    cells: Vec<Vec<usize>>,
}

impl CellPartition {
    pub fn new(frame: &PopulationFrame, grid: usize) -> Result<Self> {
        if grid == 0 {
            return Err(Error::Domain("grid must have at least one cell per side".into()));
        }
        let coords = frame.coords();
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in coords {
            for d in 0..2 {
                min[d] = min[d].min(p[d]);
                max[d] = max[d].max(p[d]);
            }
        }
        let axis = |v: f64, d: usize| -> usize {
            let span = max[d] - min[d];
            if span <= 0.0 {
                return 0;
            }
            (((v - min[d]) / span * grid as f64).floor() as usize).min(grid - 1)
        };
        let mut cells = vec![Vec::new(); grid * grid];
        for (i, p) in coords.iter().enumerate() {
            cells[axis(p[1], 1) * grid + axis(p[0], 0)].push(i);
        }
        Ok(Self { grid, cells })
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn cells(&self) -> &[Vec<usize>] {
        &self.cells
    }
}

/// Two-stage clustered sampling: `k` random cells, then SRS of `n` units inside them.
/// Extra cells are drawn while the chosen cells hold fewer than `n` units.
pub fn kclust<R: Rng + ?Sized>(
    frame: &PopulationFrame,
    n: usize,
    k: usize,
    grid: usize,
    rng: &mut R,
) -> Result<SampleSelection> {
    let partition = CellPartition::new(frame, grid)?;
    kclust_with(&partition, frame.len(), n, k, rng)
}

fn kclust_with<R: Rng + ?Sized>(
    partition: &CellPartition,
    big_n: usize,
    n: usize,
    k: usize,
    rng: &mut R,
) -> Result<SampleSelection> {
    let n_cells = partition.cells.len();
    if k == 0 || k > n_cells {
        return Err(Error::Domain(format!("k = {k} must be in 1..={n_cells}")));
    }
    if n > big_n {
        return Err(Error::Infeasible(format!(
            "sample size {n} exceeds population size {big_n}"
        )));
    }
    let mut order: Vec<usize> = (0..n_cells).collect();
    order.shuffle(rng);
    let mut pool: Vec<usize> = Vec::new();
    for (taken, &c) in order.iter().enumerate() {
        if taken >= k && pool.len() >= n {
            break;
        }
        pool.extend_from_slice(&partition.cells[c]);
    }
    let picks = index::sample(rng, pool.len(), n);
    SampleSelection::new(picks.iter().map(|i| pool[i]).collect(), big_n)
}

/// Conditional inclusion probabilities of Poisson sampling with probabilities `p`
/// given that exactly `n` units are drawn.
pub fn conditional_inclusion(p: &[f64], n: usize) -> Result<Vec<f64>> {
    let big_n = p.len();
    if n > big_n {
        return Err(Error::Infeasible(format!("{n} out of {big_n}")));
    }
    let w = n + 1;
    // forward[i][m]: P(m selected among units < i); backward[i][m]: among units >= i
    let mut forward = vec![0.0; (big_n + 1) * w];
    let mut backward = vec![0.0; (big_n + 1) * w];
    forward[0] = 1.0;
    for i in 0..big_n {
        for m in 0..w {
            let stay = forward[i * w + m] * (1.0 - p[i]);
            let grow = if m > 0 { forward[i * w + m - 1] * p[i] } else { 0.0 };
            forward[(i + 1) * w + m] = stay + grow;
        }
    }
    backward[big_n * w] = 1.0;
    for i in (0..big_n).rev() {
        for m in 0..w {
            let stay = backward[(i + 1) * w + m] * (1.0 - p[i]);
            let grow = if m > 0 { backward[(i + 1) * w + m - 1] * p[i] } else { 0.0 };
            backward[i * w + m] = stay + grow;
        }
    }
    let total = forward[big_n * w + n];
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Numeric(format!(
            "probability of a size-{n} Poisson sample underflows"
        )));
    }
    if n == 0 {
        return Ok(vec![0.0; big_n]);
    }
    Ok((0..big_n)
        .map(|k| {
            let others: f64 = (0..n)
                .map(|m| forward[k * w + m] * backward[(k + 1) * w + (n - 1 - m)])
                .sum();
            p[k] * others / total
        })
        .collect())
}

/// Maximum-entropy design calibrated to target inclusion probabilities.
///
/// Units with π = 1 are always taken; the rest are drawn by rejective Poisson
/// sampling with working probabilities tuned so the conditional inclusion
/// probabilities match π.
#[derive(Debug, Clone)]
pub struct MaxEntropy {
    population: usize,
    certain: Vec<usize>,
    uncertain: Vec<usize>,
    working: Vec<f64>,
    n_uncertain: usize,
}

impl MaxEntropy {
    pub const TOLERANCE: f64 = 1e-6;
    const MAX_ITER: usize = 1000;

    pub fn calibrate(pi: &[f64]) -> Result<Self> {
        if let Some(bad) = pi.iter().find(|&&x| !(x > 0.0 && x <= 1.0)) {
            return Err(Error::Domain(format!("inclusion probability {bad} outside (0, 1]")));
        }
        let total: f64 = pi.iter().sum();
        let n = total.round();
        if (total - n).abs() > 1e-9 * n.max(1.0) {
            return Err(Error::Infeasible(format!(
                "maximum-entropy sampling needs an integer Σπ, got {total}"
            )));
        }
        let (certain, uncertain): (Vec<usize>, Vec<usize>) =
            (0..pi.len()).partition(|&i| pi[i] >= 1.0);
        if uncertain.is_empty() {
            return Err(Error::Domain("all inclusion probabilities equal 1".into()));
        }
        let n_uncertain = n as usize - certain.len();
        let target: Vec<f64> = uncertain.iter().map(|&i| pi[i]).collect();

        let mut log_odds: Vec<f64> = target.iter().map(|&t| (t / (1.0 - t)).ln()).collect();
        let mut working: Vec<f64> = target.clone();
        let mut err = f64::INFINITY;
        for _ in 0..Self::MAX_ITER {
            let achieved = conditional_inclusion(&working, n_uncertain)?;
            err = achieved
                .iter()
                .zip(&target)
                .map(|(a, t)| (a - t).abs())
                .fold(0.0, f64::max);
            if err < 1e-10 {
                break;
            }
            let logit = |x: f64| (x / (1.0 - x)).ln();
            for ((l, &a), &t) in log_odds.iter_mut().zip(&achieved).zip(&target) {
                *l += logit(t) - logit(a);
            }
            working = log_odds.iter().map(|&l| 1.0 / (1.0 + (-l).exp())).collect();
        }
        if !(err <= Self::TOLERANCE) {
            return Err(Error::Numeric(format!(
                "working probabilities did not converge (max error {err:e})"
            )));
        }
        Ok(Self {
            population: pi.len(),
            certain,
            uncertain,
            working,
            n_uncertain,
        })
    }

    pub fn working_probabilities(&self) -> &[f64] {
        &self.working
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> SampleSelection {
        let mut chosen = Vec::with_capacity(self.n_uncertain);
        loop {
            chosen.clear();
            for (slot, &p) in self.working.iter().enumerate() {
                if rng.random::<f64>() < p {
                    chosen.push(self.uncertain[slot]);
                    if chosen.len() > self.n_uncertain {
                        break;
                    }
                }
            }
            if chosen.len() == self.n_uncertain {
                break;
            }
        }
        let mut indicator = vec![false; self.population];
        for &u in self.certain.iter().chain(&chosen) {
            indicator[u] = true;
        }
        SampleSelection::from_indicator(indicator)
    }
}

/// Maximum-entropy sample with the frame's inclusion probabilities.
pub fn umes<R: Rng + ?Sized>(frame: &PopulationFrame, rng: &mut R) -> Result<SampleSelection> {
    Ok(MaxEntropy::calibrate(frame.pi())?.draw(rng))
}

/// Design choice as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DesignSpec {
    Srs,
    Lpm,
    Kclust {
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default = "default_grid")]
        grid: usize,
    },
    Umes,
}

fn default_k() -> usize {
    5
}

fn default_grid() -> usize {
    5
}

impl DesignSpec {
    pub fn label(&self) -> String {
        match self {
            DesignSpec::Srs => "SRS".into(),
            DesignSpec::Lpm => "LPM".into(),
            DesignSpec::Kclust { k, .. } => format!("{k}CLUST"),
            DesignSpec::Umes => "uMES".into(),
        }
    }
}

/// A design bound to one frame, with any per-frame preparation done once.
#[derive(Debug, Clone)]
pub enum Sampler {
    Srs { n: usize },
    Lpm,
    Kclust { n: usize, k: usize, cells: CellPartition },
    Umes(MaxEntropy),
}

impl Sampler {
    pub fn prepare(spec: &DesignSpec, frame: &PopulationFrame) -> Result<Self> {
        let fixed_n = || {
            frame.integer_sample_size().ok_or_else(|| {
                Error::Infeasible(format!(
                    "design needs an integer Σπ, got {}",
                    frame.n_target()
                ))
            })
        };
        Ok(match spec {
            DesignSpec::Srs => Sampler::Srs { n: fixed_n()? },
            DesignSpec::Lpm => Sampler::Lpm,
            DesignSpec::Kclust { k, grid } => Sampler::Kclust {
                n: fixed_n()?,
                k: *k,
                cells: CellPartition::new(frame, *grid)?,
            },
            DesignSpec::Umes => Sampler::Umes(MaxEntropy::calibrate(frame.pi())?),
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, frame: &PopulationFrame, rng: &mut R) -> Result<SampleSelection> {
        match self {
            Sampler::Srs { n } => srs(frame, *n, rng),
            Sampler::Lpm => lpm(frame, rng),
            Sampler::Kclust { n, k, cells } => kclust_with(cells, frame.len(), *n, *k, rng),
            Sampler::Umes(me) => Ok(me.draw(rng)),
        }
    }
}
