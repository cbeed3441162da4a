//! Artificial spatial populations: complete spatial randomness, Neyman-Scott
//! clusters and a hard-core (inhibition) pattern.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Point;
use crate::spatial::GridIndex;

/// Rectangular observation window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Window {
    pub fn new(x: (f64, f64), y: (f64, f64)) -> Result<Self> {
        if !(x.1 > x.0 && y.1 > y.0) || !(x.0.is_finite() && x.1.is_finite() && y.0.is_finite() && y.1.is_finite()) {
            return Err(Error::Domain(format!(
                "window [{}, {}] x [{}, {}] has no positive area",
                x.0, x.1, y.0, y.1
            )));
        }
        Ok(Self { x, y })
    }

    pub fn unit() -> Self {
        Self { x: (0.0, 1.0), y: (0.0, 1.0) }
    }

    pub fn square(side: f64) -> Result<Self> {
        Self::new((0.0, side), (0.0, side))
    }

    pub fn width(&self) -> f64 {
        self.x.1 - self.x.0
    }

    pub fn height(&self) -> f64 {
        self.y.1 - self.y.0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.x.0 && p[0] <= self.x.1 && p[1] >= self.y.0 && p[1] <= self.y.1
    }

    fn uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        [
            self.x.0 + self.width() * rng.random::<f64>(),
            self.y.0 + self.height() * rng.random::<f64>(),
        ]
    }
}

/// `n` independent uniform points: a Poisson process conditioned on its count.
pub fn gen_csr<R: Rng + ?Sized>(n: usize, window: &Window, rng: &mut R) -> Vec<Point> {
    (0..n).map(|_| window.uniform(rng)).collect()
}

/// Neyman-Scott cluster process with a fixed number of offspring per parent, each
/// uniform on a disc around its parent. Offspring outside the window are redrawn.
pub fn gen_neyman_scott<R: Rng + ?Sized>(
    n_clusters: usize,
    per_cluster: usize,
    radius: f64,
    window: &Window,
    rng: &mut R,
) -> Result<Vec<Point>> {
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::Domain(format!("cluster radius {radius} must be nonnegative")));
    }
    let mut points = Vec::with_capacity(n_clusters * per_cluster);
    for _ in 0..n_clusters {
        let parent = window.uniform(rng);
        for _ in 0..per_cluster {
            // the parent itself lies in the window, so this terminates
            loop {
                let r = radius * rng.random::<f64>().sqrt();
                let theta = std::f64::consts::TAU * rng.random::<f64>();
                let p = [parent[0] + r * theta.cos(), parent[1] + r * theta.sin()];
                if window.contains(p) {
                    points.push(p);
                    break;
                }
            }
        }
    }
    Ok(points)
}

/// Sequential inhibition: uniform proposals are kept only if they lie at least
/// `inhibition` away from every point accepted so far.
pub fn gen_matern1<R: Rng + ?Sized>(
    n: usize,
    inhibition: f64,
    window: &Window,
    rng: &mut R,
) -> Result<Vec<Point>> {
    if !(inhibition >= 0.0 && inhibition.is_finite()) {
        return Err(Error::Domain(format!("inhibition distance {inhibition} must be nonnegative")));
    }
    let disc = std::f64::consts::PI * (inhibition / 2.0).powi(2);
    if n as f64 * disc >= window.area() {
        return Err(Error::Saturation { placed: 0, requested: n });
    }
    let max_attempts = 1000 * n.max(1);
    let r2 = inhibition * inhibition;
    // bucket accepted points in cells of side `inhibition` so only the 3x3 block is checked
    let cell = if inhibition > 0.0 { inhibition } else { 1.0 };
    let nx = (window.width() / cell).ceil() as usize + 1;
    let ny = (window.height() / cell).ceil() as usize + 1;
    let mut buckets: Vec<Vec<Point>> = vec![Vec::new(); nx * ny];
    let cell_of = |p: Point| {
        (
            (((p[0] - window.x.0) / cell) as usize).min(nx - 1),
            (((p[1] - window.y.0) / cell) as usize).min(ny - 1),
        )
    };

    let mut points = Vec::with_capacity(n);
    let mut attempts = 0;
    while points.len() < n {
        if attempts >= max_attempts {
            return Err(Error::Saturation { placed: points.len(), requested: n });
        }
        attempts += 1;
        let p = window.uniform(rng);
        let (cx, cy) = cell_of(p);
        let clear = inhibition == 0.0
            || (cy.saturating_sub(1)..=(cy + 1).min(ny - 1)).all(|y| {
                (cx.saturating_sub(1)..=(cx + 1).min(nx - 1)).all(|x| {
                    buckets[y * nx + x]
                        .iter()
                        .all(|q| crate::spatial::dist2(p, *q) >= r2)
                })
            });
        if clear {
            buckets[cy * nx + cx].push(p);
            points.push(p);
        }
    }
    Ok(points)
}

/// Distance from each point to its nearest other point.
pub fn nearest_neighbour_distances(points: &[Point]) -> Vec<f64> {
    let grid = GridIndex::new(points);
    points
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            grid.knn(p, Some(i), 1)
                .first()
                .map_or(f64::INFINITY, |&(_, d2)| d2.sqrt())
        })
        .collect()
}

/// Point-process recipe used by configs and the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "process", rename_all = "lowercase")]
pub enum ProcessSpec {
    /// Uniform points.
    Csr {
        n: usize,
        #[serde(default = "unit_side")]
        side: f64,
    },
    /// Neyman-Scott clusters.
    Aggregated {
        #[serde(default = "default_clusters")]
        clusters: usize,
        #[serde(default = "default_per_cluster")]
        per_cluster: usize,
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default = "unit_side")]
        side: f64,
    },
    /// Hard-core inhibition pattern.
    Regular {
        n: usize,
        #[serde(default = "default_inhibition")]
        inhibition: f64,
        #[serde(default = "regular_side")]
        side: f64,
    },
}

fn unit_side() -> f64 {
    1.0
}
fn regular_side() -> f64 {
    1.5
}
fn default_clusters() -> usize {
    100
}
fn default_per_cluster() -> usize {
    10
}
fn default_radius() -> f64 {
    0.03
}
fn default_inhibition() -> f64 {
    0.015
}

impl ProcessSpec {
    pub fn csr(n: usize) -> Self {
        ProcessSpec::Csr { n, side: 1.0 }
    }

    pub fn aggregated() -> Self {
        ProcessSpec::Aggregated {
            clusters: 100,
            per_cluster: 10,
            radius: 0.03,
            side: 1.0,
        }
    }

    pub fn regular(n: usize) -> Self {
        ProcessSpec::Regular {
            n,
            inhibition: 0.015,
            side: 1.5,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ProcessSpec::Csr { .. } => "CSR",
            ProcessSpec::Aggregated { .. } => "AGGREGATED",
            ProcessSpec::Regular { .. } => "REGULAR",
        }
    }

    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<Point>> {
        match *self {
            ProcessSpec::Csr { n, side } => Ok(gen_csr(n, &Window::square(side)?, rng)),
            ProcessSpec::Aggregated {
                clusters,
                per_cluster,
                radius,
                side,
            } => gen_neyman_scott(clusters, per_cluster, radius, &Window::square(side)?, rng),
            ProcessSpec::Regular {
                n,
                inhibition,
                side,
            } => gen_matern1(n, inhibition, &Window::square(side)?, rng),
        }
    }
}
