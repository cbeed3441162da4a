//! Repeated-sampling experiments over populations, designs and sample sizes.
//!
//! Each population is realized once. For every sample size its frame and weights
//! matrix are built once and shared by all designs and replications. Replication
//! `r` of cell `c` draws from [`RngStream`] `(seed, c << 32 | r)`, so results do not
//! depend on thread scheduling; aggregation sums in replication order.

use std::fmt::Write as _;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::designs::{DesignSpec, RngStream, Sampler};
use crate::error::{Error, Result};
use crate::frame::{
    load_population, pps_probabilities, ColumnSchema, Point, PopulationFrame, PopulationTable,
    SizeVariable,
};
use crate::genpop::ProcessSpec;
use crate::indices::BalanceReport;
use crate::weights::WeightsMatrix;

const POPULATION_STREAMS: u64 = 1 << 62;

/// Auxiliary size distribution attached to a generated population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "distribution", rename_all = "lowercase")]
pub enum SizeModel {
    LogNormal { mu: f64, sigma: f64 },
}

impl SizeModel {
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<f64>> {
        match *self {
            SizeModel::LogNormal { mu, sigma } => {
                let dist = LogNormal::new(mu, sigma)
                    .map_err(|e| Error::Config(format!("lognormal sizes: {e}")))?;
                Ok((0..n).map(|_| dist.sample(rng)).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<ProcessSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    /// Sizes for PPS probabilities on a generated population.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sizes: Option<SizeModel>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json: Option<PathBuf>,
    /// Keep per-replication values in the JSON report.
    #[serde(default)]
    pub raw: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    pub sample_sizes: Vec<usize>,
    pub populations: Vec<PopulationConfig>,
    pub designs: Vec<DesignSpec>,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_replications() -> usize {
    1000
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a TOML config; relative paths are resolved against the file's directory.
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for pop in &mut config.populations {
            if let Some(p) = pop.csv.as_mut() {
                resolve(p);
            }
        }
        if let Some(p) = config.output.csv.as_mut() {
            resolve(p);
        }
        if let Some(p) = config.output.json.as_mut() {
            resolve(p);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err(Error::Config("sample_sizes must list positive sizes".into()));
        }
        if self.populations.is_empty() || self.designs.is_empty() {
            return Err(Error::Config("need at least one population and one design".into()));
        }
        for pop in &self.populations {
            match (&pop.generator, &pop.csv) {
                (Some(_), None) => {}
                (None, Some(path)) => {
                    if pop.sizes.is_some() {
                        return Err(Error::Config(format!(
                            "population `{}`: sizes apply to generated populations only",
                            pop.name
                        )));
                    }
                    if path.is_absolute() && !path.exists() {
                        return Err(Error::Config(format!(
                            "population `{}`: {} does not exist",
                            pop.name,
                            path.display()
                        )));
                    }
                }
                _ => {
                    return Err(Error::Config(format!(
                        "population `{}` needs exactly one of `generator` or `csv`",
                        pop.name
                    )))
                }
            }
        }
        Ok(())
    }
}

/// Mean and standard error of one index over the usable replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexSummary {
    pub mean: Option<f64>,
    pub se: Option<f64>,
    pub count: usize,
    pub degenerate: usize,
}

impl IndexSummary {
    fn from_values(values: &[Option<f64>]) -> Self {
        let kept: Vec<f64> = values.iter().flatten().copied().collect();
        let count = kept.len();
        let degenerate = values.len() - count;
        if count == 0 {
            return Self { mean: None, se: None, count, degenerate };
        }
        let mean = kept.iter().sum::<f64>() / count as f64;
        let se = (count > 1).then(|| {
            let var = kept.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
            (var / count as f64).sqrt()
        });
        Self { mean: Some(mean), se, count, degenerate }
    }
}

/// Per-replication values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Draw {
    pub b: f64,
    pub i_m: Option<f64>,
    pub i_b: Option<f64>,
}

impl From<&BalanceReport> for Draw {
    fn from(r: &BalanceReport) -> Self {
        Self { b: r.b, i_m: r.i_m, i_b: r.i_b }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellReport {
    pub population: String,
    pub design: String,
    pub n: usize,
    pub population_size: usize,
    pub replications: usize,
    pub b: IndexSummary,
    pub i_m: IndexSummary,
    pub i_b: IndexSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw: Option<Vec<Draw>>,
}

impl CellReport {
    fn failed(population: &str, design: &str, n: usize, big_n: usize, reps: usize, e: &Error) -> Self {
        let empty = IndexSummary { mean: None, se: None, count: 0, degenerate: 0 };
        Self {
            population: population.to_string(),
            design: design.to_string(),
            n,
            population_size: big_n,
            replications: reps,
            b: empty.clone(),
            i_m: empty.clone(),
            i_b: empty,
            error: Some(format!("{}: {e}", e.kind_name())),
            raw: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub cells: Vec<CellReport>,
}

/// Runs `replications` draws of `sampler` on a prepared frame and weights matrix.
/// Replication `r` uses stream `stream_base | r`.
pub fn run_cell(
    frame: &PopulationFrame,
    w: &WeightsMatrix,
    sampler: &Sampler,
    replications: usize,
    seed: u64,
    stream_base: u64,
) -> Result<Vec<Draw>> {
    (0..replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = RngStream::new(seed, stream_base | r as u64).rng();
            let sample = sampler.draw(frame, &mut rng)?;
            match BalanceReport::compute(frame, &sample, w) {
                Ok(report) => Ok(Draw::from(&report)),
                // an empty draw has no Voronoi polygons; count it as degenerate everywhere
                Err(Error::Domain(_)) if sample.is_empty() => Ok(Draw {
                    b: f64::NAN,
                    i_m: None,
                    i_b: None,
                }),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Empirical inclusion frequency of every unit over `replications` draws.
pub fn inclusion_frequencies(
    frame: &PopulationFrame,
    sampler: &Sampler,
    replications: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let counts = (0..replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = RngStream::new(seed, r as u64).rng();
            sampler.draw(frame, &mut rng).map(|s| s.units().to_vec())
        })
        .try_fold(
            || vec![0u64; frame.len()],
            |mut acc, units| {
                for u in units? {
                    acc[u] += 1;
                }
                Ok::<_, Error>(acc)
            },
        )
        .try_reduce(
            || vec![0u64; frame.len()],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                Ok(a)
            },
        )?;
    Ok(counts
        .into_iter()
        .map(|c| c as f64 / replications as f64)
        .collect())
}

fn summarize(
    population: &str,
    design: &str,
    frame: &PopulationFrame,
    draws: Vec<Draw>,
    keep_raw: bool,
) -> CellReport {
    let b: Vec<Option<f64>> = draws.iter().map(|d| (!d.b.is_nan()).then_some(d.b)).collect();
    let i_m: Vec<Option<f64>> = draws.iter().map(|d| d.i_m).collect();
    let i_b: Vec<Option<f64>> = draws.iter().map(|d| d.i_b).collect();
    CellReport {
        population: population.to_string(),
        design: design.to_string(),
        n: frame.integer_sample_size().unwrap_or(frame.n_target().round() as usize),
        population_size: frame.len(),
        replications: draws.len(),
        b: IndexSummary::from_values(&b),
        i_m: IndexSummary::from_values(&i_m),
        i_b: IndexSummary::from_values(&i_b),
        error: None,
        raw: keep_raw.then_some(draws),
    }
}

/// A realized population: coordinates plus however its probabilities are defined.
enum Realized {
    Points { coords: Vec<Point>, sizes: Option<Vec<f64>> },
    Table(PopulationTable),
}

impl Realized {
    fn frame(&self, n: usize) -> Result<PopulationFrame> {
        match self {
            Realized::Points { coords, sizes: None } => {
                PopulationFrame::with_equal_probabilities(coords.clone(), n)
            }
            Realized::Points { coords, sizes: Some(v) } => {
                let pi = pps_probabilities(&SizeVariable::new(v.clone())?, n)?;
                let (coords, pi): (Vec<Point>, Vec<f64>) = coords
                    .iter()
                    .zip(pi)
                    .filter(|(_, p)| *p > 0.0)
                    .map(|(c, p)| (*c, p))
                    .unzip();
                PopulationFrame::from_points(coords, pi)
            }
            Realized::Table(table) => table.clone().into_frame_auto(Some(n)),
        }
    }

    fn len(&self) -> usize {
        match self {
            Realized::Points { coords, .. } => coords.len(),
            Realized::Table(t) => t.len(),
        }
    }
}

fn realize(pop: &PopulationConfig, seed: u64, index: usize) -> Result<Realized> {
    let mut rng = RngStream::new(seed, POPULATION_STREAMS | index as u64).rng();
    if let Some(spec) = &pop.generator {
        let coords = spec.generate(&mut rng)?;
        let sizes = match &pop.sizes {
            Some(model) => Some(model.sample(coords.len(), &mut rng)?),
            None => None,
        };
        return Ok(Realized::Points { coords, sizes });
    }
    let path = pop.csv.as_ref().expect("validated config");
    let file = File::open(path)?;
    Ok(Realized::Table(load_population(file, &ColumnSchema::default())?))
}

/// Runs every (population, sample size, design) cell of the experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let mut cells = Vec::new();
    let mut cell_index: u64 = 0;
    for (p, pop) in config.populations.iter().enumerate() {
        let realized = realize(pop, config.seed, p)?;
        for &n in &config.sample_sizes {
            let prepared = realized
                .frame(n)
                .and_then(|frame| WeightsMatrix::build(&frame).map(|w| (frame, w)));
            for design in &config.designs {
                let stream_base = cell_index << 32;
                cell_index += 1;
                let label = design.label();
                let (frame, w) = match &prepared {
                    Ok(fw) => (&fw.0, &fw.1),
                    Err(e) => {
                        log::warn!("{} n={n}: {e}", pop.name);
                        cells.push(CellReport::failed(
                            &pop.name,
                            &label,
                            n,
                            realized.len(),
                            config.replications,
                            e,
                        ));
                        continue;
                    }
                };
                let outcome = Sampler::prepare(design, frame).and_then(|sampler| {
                    run_cell(frame, w, &sampler, config.replications, config.seed, stream_base)
                });
                match outcome {
                    Ok(draws) => {
                        let cell = summarize(&pop.name, &label, frame, draws, config.output.raw);
                        log::info!(
                            "{} {} n={}: mean I_B {:?}, mean B {:?}",
                            cell.population,
                            cell.design,
                            cell.n,
                            cell.i_b.mean,
                            cell.b.mean
                        );
                        cells.push(cell);
                    }
                    Err(e) => {
                        log::warn!("{} {label} n={n}: {e}", pop.name);
                        cells.push(CellReport::failed(
                            &pop.name,
                            &label,
                            n,
                            frame.len(),
                            config.replications,
                            &e,
                        ));
                    }
                }
            }
        }
    }
    Ok(ExperimentReport {
        config: config.clone(),
        cells,
    })
}

impl ExperimentReport {
    pub fn cell(&self, population: &str, design: &str, n: usize) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.population == population && c.design == design && c.n == n)
    }

    /// Long-format CSV: `population,design,n,index,mean,se,reps`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["population", "design", "n", "index", "mean", "se", "reps"])?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for cell in &self.cells {
            for (name, s) in [("B", &cell.b), ("I_M", &cell.i_m), ("I_B", &cell.i_b)] {
                out.write_record([
                    cell.population.clone(),
                    cell.design.clone(),
                    cell.n.to_string(),
                    name.to_string(),
                    opt(s.mean),
                    opt(s.se),
                    s.count.to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One table per population: rows are indices grouped by sample size, columns designs.
    pub fn render_tables(&self) -> String {
        let mut text = String::new();
        let mut populations: Vec<&str> = Vec::new();
        for c in &self.cells {
            if !populations.contains(&c.population.as_str()) {
                populations.push(&c.population);
            }
        }
        for pop in populations {
            let cells: Vec<&CellReport> = self.cells.iter().filter(|c| c.population == pop).collect();
            let mut designs: Vec<&str> = Vec::new();
            let mut sizes: Vec<usize> = Vec::new();
            for c in &cells {
                if !designs.contains(&c.design.as_str()) {
                    designs.push(&c.design);
                }
                if !sizes.contains(&c.n) {
                    sizes.push(c.n);
                }
            }
            let _ = writeln!(text, "Population {pop}");
            let _ = write!(text, "{:<6}", "Index");
            for d in &designs {
                let _ = write!(text, "{d:>10}");
            }
            text.push('\n');
            for n in sizes {
                let _ = writeln!(text, "n = {n}");
                for (name, pick) in [
                    ("B", (|c: &CellReport| c.b.mean) as fn(&CellReport) -> Option<f64>),
                    ("I_M", |c: &CellReport| c.i_m.mean),
                    ("I_B", |c: &CellReport| c.i_b.mean),
                ] {
                    let _ = write!(text, "{name:<6}");
                    for d in &designs {
                        let value = cells
                            .iter()
                            .find(|c| c.design == *d && c.n == n)
                            .and_then(|c| pick(c));
                        match value {
                            Some(v) => {
                                let _ = write!(text, "{v:>10.3}");
                            }
                            None => {
                                let _ = write!(text, "{:>10}", "-");
                            }
                        }
                    }
                    text.push('\n');
                }
            }
            text.push('\n');
        }
        text
    }

    /// Writes the CSV and JSON reports named in the config's output section.
    pub fn write_outputs(&self, output: &OutputConfig) -> Result<()> {
        if let Some(path) = &output.csv {
            self.write_csv(File::create(path)?)?;
        }
        if let Some(path) = &output.json {
            std::fs::write(path, self.to_json()?)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig::from_toml_str(
            r#"
            seed = 11
            replications = 20
            sample_sizes = [10]

            [[populations]]
            name = "CSR"
            generator = { process = "csr", n = 100 }

            [[designs]]
            kind = "srs"

            [[designs]]
            kind = "lpm"
            "#,
        )
        .unwrap()
    }

    #[test]
    fn config_parses_defaults() {
        let config = ExperimentConfig::from_toml_str(
            r#"
            sample_sizes = [50]
            [[populations]]
            name = "AGG"
            generator = { process = "aggregated" }
            [[designs]]
            kind = "kclust"
            "#,
        )
        .unwrap();
        assert_eq!(config.replications, 1000);
        assert_eq!(config.designs[0], DesignSpec::Kclust { k: 5, grid: 5 });
        assert_eq!(config.populations[0].generator, Some(ProcessSpec::aggregated()));
    }

    #[test]
    fn config_rejects_ambiguous_population() {
        let err = ExperimentConfig::from_toml_str(
            r#"
            sample_sizes = [5]
            [[populations]]
            name = "X"
            [[designs]]
            kind = "srs"
            "#,
        );
        assert!(matches!(err, Err(Error::Config(_))));
        let err = ExperimentConfig::from_toml_str(
            r#"
            replications = 0
            sample_sizes = [5]
            [[populations]]
            name = "X"
            generator = { process = "csr", n = 10 }
            [[designs]]
            kind = "srs"
            "#,
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn deterministic_reports() {
        let config = small_config();
        let a = run_experiment(&config).unwrap();
        let b = run_experiment(&config).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a.cells.len(), 2);
    }

    #[test]
    fn single_replication_equals_single_report() {
        let mut config = small_config();
        config.replications = 1;
        config.designs = vec![DesignSpec::Srs];
        let report = run_experiment(&config).unwrap();
        let cell = &report.cells[0];

        // redo the one draw by hand
        let realized = realize(&config.populations[0], config.seed, 0).unwrap();
        let frame = realized.frame(10).unwrap();
        let w = WeightsMatrix::build(&frame).unwrap();
        let sampler = Sampler::prepare(&DesignSpec::Srs, &frame).unwrap();
        let sample = sampler.draw(&frame, &mut RngStream::new(11, 0).rng()).unwrap();
        let single = BalanceReport::compute(&frame, &sample, &w).unwrap();
        assert_eq!(cell.b.mean, Some(single.b));
        assert_eq!(cell.i_m.mean, single.i_m);
        assert_eq!(cell.i_b.mean, single.i_b);
        assert_eq!(cell.i_b.se, None);
    }

    #[test]
    fn infeasible_cell_is_recorded_not_fatal() {
        let mut config = small_config();
        config.sample_sizes = vec![10, 500];
        let report = run_experiment(&config).unwrap();
        assert_eq!(report.cells.len(), 4);
        assert!(report.cells[2].error.as_deref().unwrap().starts_with("InfeasibleError"));
        assert!(report.cells[0].error.is_none());
    }

    #[test]
    fn degenerate_draws_are_counted() {
        // n = N gives a constant indicator in every replication
        let frame = PopulationFrame::with_equal_probabilities(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            3,
        )
        .unwrap();
        let w = WeightsMatrix::build(&frame).unwrap();
        let sampler = Sampler::prepare(&DesignSpec::Srs, &frame).unwrap();
        let draws = run_cell(&frame, &w, &sampler, 5, 1, 0).unwrap();
        let cell = summarize("tiny", "SRS", &frame, draws, false);
        assert_eq!(cell.i_b.count, 0);
        assert_eq!(cell.i_b.degenerate, 5);
        assert_eq!(cell.i_b.mean, None);
        assert_eq!(cell.b.count, 5);
    }

    #[test]
    fn csv_and_tables_render() {
        let report = run_experiment(&small_config()).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("population,design,n,index,mean,se,reps\n"));
        assert_eq!(text.lines().count(), 1 + 2 * 3);
        let tables = report.render_tables();
        assert!(tables.contains("Population CSR"));
        assert!(tables.contains("LPM"));
    }

    #[test]
    fn csv_population_source() {
        let dir = tempfile::tempdir().unwrap();
        let pop = dir.path().join("pop.csv");
        let mut text = String::from("id,x,y,size\n");
        for i in 0..40 {
            text.push_str(&format!("{i},{},{},{}\n", (i % 7) as f64 * 0.1, (i / 7) as f64 * 0.1, 1 + i % 5));
        }
        std::fs::write(&pop, text).unwrap();
        let cfg = dir.path().join("exp.toml");
        std::fs::write(
            &cfg,
            r#"
            seed = 3
            replications = 10
            sample_sizes = [8]
            [[populations]]
            name = "file"
            csv = "pop.csv"
            [[designs]]
            kind = "umes"
            [[designs]]
            kind = "lpm"
            "#,
        )
        .unwrap();
        let config = ExperimentConfig::from_toml_file(&cfg).unwrap();
        let report = run_experiment(&config).unwrap();
        assert!(report.cells.iter().all(|c| c.error.is_none()));
        assert_eq!(report.cells[0].design, "uMES");
    }
}
