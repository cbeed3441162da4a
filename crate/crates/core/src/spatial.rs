//! Exact planar neighbour queries.
//!
//! [`GridIndex`] buckets points into square cells and answers k-nearest and
//! nearest queries by expanding rings of cells until the search radius provably
//! covers every candidate. Ties are detected on exact squared distances.

use crate::designs::SampleSelection;
use crate::error::{Error, Result};
use crate::frame::{Point, PopulationFrame};

#[inline]
pub fn dist2(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Bucket grid over a set of points, with removal.
#[derive(Debug, Clone)]
pub struct GridIndex {
    coords: Vec<Point>,
    origin: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<usize>>,
    len: usize,
}

impl GridIndex {
    /// Index over all points.
    pub fn new(coords: &[Point]) -> Self {
        let all: Vec<usize> = (0..coords.len()).collect();
        Self::from_subset(coords, &all)
    }

    /// Index over `coords[i]` for `i` in `members`; results refer to positions in `coords`.
    pub fn from_subset(coords: &[Point], members: &[usize]) -> Self {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for &i in members {
            for d in 0..2 {
                min[d] = min[d].min(coords[i][d]);
                max[d] = max[d].max(coords[i][d]);
            }
        }
        if members.is_empty() {
            min = [0.0; 2];
            max = [0.0; 2];
        }
        let w = max[0] - min[0];
        let h = max[1] - min[1];
        let target = (members.len() as f64 / 2.0).max(1.0);
        let mut cell = if w > 0.0 && h > 0.0 {
            (w * h / target).sqrt()
        } else {
            w.max(h) / target
        };
        if !(cell > 0.0) {
            cell = 1.0;
        }
        // keep the grid bounded for very elongated extents
        const MAX_SIDE: f64 = 2048.0;
        cell = cell.max(w / MAX_SIDE).max(h / MAX_SIDE);
        let nx = (w / cell).floor() as usize + 1;
        let ny = (h / cell).floor() as usize + 1;

        let mut index = Self {
            coords: coords.to_vec(),
            origin: min,
            cell,
            nx,
            ny,
            cells: vec![Vec::new(); nx * ny],
            len: 0,
        };
        for &i in members {
            let c = index.cell_of(coords[i]);
            index.cells[c].push(i);
            index.len += 1;
        }
        index
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn signed_cell(&self, p: Point) -> (i64, i64) {
        (
            ((p[0] - self.origin[0]) / self.cell).floor() as i64,
            ((p[1] - self.origin[1]) / self.cell).floor() as i64,
        )
    }

    fn cell_of(&self, p: Point) -> usize {
        let (cx, cy) = self.signed_cell(p);
        let cx = cx.clamp(0, self.nx as i64 - 1) as usize;
        let cy = cy.clamp(0, self.ny as i64 - 1) as usize;
        cy * self.nx + cx
    }

    /// Removes member `i`; returns false if it was not present.
    pub fn remove(&mut self, i: usize) -> bool {
        let c = self.cell_of(self.coords[i]);
        if let Some(pos) = self.cells[c].iter().position(|&j| j == i) {
            self.cells[c].swap_remove(pos);
            self.len -= 1;
            true
        } else {
            false
        }
    }

    /// Visits the members of ring `r` around cell `(cx, cy)`.
    fn visit_ring(&self, cx: i64, cy: i64, r: i64, mut f: impl FnMut(usize)) {
        let (nx, ny) = (self.nx as i64, self.ny as i64);
        let mut visit_cell = |x: i64, y: i64| {
            for &i in &self.cells[(y * nx + x) as usize] {
                f(i);
            }
        };
        if r == 0 {
            if cx >= 0 && cx < nx && cy >= 0 && cy < ny {
                visit_cell(cx, cy);
            }
            return;
        }
        let (x0, x1) = ((cx - r).max(0), (cx + r).min(nx - 1));
        for y in [cy - r, cy + r] {
            if y >= 0 && y < ny {
                for x in x0..=x1 {
                    visit_cell(x, y);
                }
            }
        }
        let (y0, y1) = ((cy - r + 1).max(0), (cy + r - 1).min(ny - 1));
        for x in [cx - r, cx + r] {
            if x >= 0 && x < nx {
                for y in y0..=y1 {
                    visit_cell(x, y);
                }
            }
        }
    }

    /// Whether ring `r` around `(cx, cy)` already covers the whole grid.
    fn covers_grid(&self, cx: i64, cy: i64, r: i64) -> bool {
        cx - r <= 0 && cy - r <= 0 && cx + r >= self.nx as i64 - 1 && cy + r >= self.ny as i64 - 1
    }

    /// The `m` nearest members of `q` (excluding `exclude`), plus every member tied with the
    /// `m`-th. Returned as `(member, squared distance)` sorted by distance, then position.
    pub fn knn(&self, q: Point, exclude: Option<usize>, m: usize) -> Vec<(usize, f64)> {
        let available = self.len - exclude.map_or(0, |e| usize::from(self.contains(e)));
        let m = m.min(available);
        if m == 0 {
            return Vec::new();
        }
        let (cx, cy) = self.signed_cell(q);
        let mut found: Vec<(usize, f64)> = Vec::new();
        let mut r = 0i64;
        loop {
            self.visit_ring(cx, cy, r, |i| {
                if Some(i) != exclude {
                    found.push((i, dist2(q, self.coords[i])));
                }
            });
            if self.covers_grid(cx, cy, r) {
                break;
            }
            if found.len() >= m {
                // anything outside the searched block lies at distance >= r * cell
                let guard = r as f64 * self.cell;
                sort_by_distance(&mut found);
                if found[m - 1].1 < guard * guard {
                    break;
                }
            }
            r += 1;
        }
        sort_by_distance(&mut found);
        let cutoff = found[m - 1].1;
        let end = found.partition_point(|&(_, d2)| d2 <= cutoff);
        found.truncate(end);
        found
    }

    /// All members at the minimum distance from `q` (excluding `exclude`).
    pub fn nearest(&self, q: Point, exclude: Option<usize>) -> Vec<usize> {
        self.knn(q, exclude, 1).into_iter().map(|(i, _)| i).collect()
    }

    fn contains(&self, i: usize) -> bool {
        i < self.coords.len() && self.cells[self.cell_of(self.coords[i])].contains(&i)
    }
}

fn sort_by_distance(v: &mut [(usize, f64)]) {
    v.sort_unstable_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Frame position of the neighbour.
    pub unit: usize,
    pub distance: f64,
}

/// Neighbours of `owner` in ascending distance, ties ordered by frame position.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    pub owner: usize,
    pub ordered: Vec<Neighbor>,
}

impl NeighborList {
    fn from_raw(owner: usize, raw: Vec<(usize, f64)>) -> Self {
        Self {
            owner,
            ordered: raw
                .into_iter()
                .map(|(unit, d2)| Neighbor {
                    unit,
                    distance: d2.sqrt(),
                })
                .collect(),
        }
    }
}

/// Neighbour lookups over every unit of a frame.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    grid: GridIndex,
}

impl SpatialIndex {
    pub fn new(frame: &PopulationFrame) -> Self {
        Self {
            grid: GridIndex::new(frame.coords()),
        }
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// The `ceil(k)` nearest neighbours of unit `i` plus all units tied with the last one.
    pub fn knn(&self, i: usize, k: f64) -> Result<NeighborList> {
        let big_n = self.grid.coords.len();
        if i >= big_n {
            return Err(Error::Domain(format!("unit position {i} out of range")));
        }
        if !(k >= 0.0 && k <= (big_n - 1) as f64) {
            return Err(Error::Domain(format!(
                "neighbour count {k} outside [0, {}]",
                big_n - 1
            )));
        }
        let m = k.ceil() as usize;
        let raw = self.grid.knn(self.grid.coords[i], Some(i), m);
        Ok(NeighborList::from_raw(i, raw))
    }
}

/// k-nearest-neighbour query addressed by unit id.
pub fn knn_query(frame: &PopulationFrame, id: i64, k: f64) -> Result<NeighborList> {
    let i = frame.position(id)?;
    SpatialIndex::new(frame).knn(i, k)
}

/// For every population unit, the sample units it belongs to and the share of it each holds.
#[derive(Debug, Clone, PartialEq)]
pub struct VoronoiAssignment {
    /// `shares[i]` lists `(frame position of sample unit, share)`; shares sum to 1.
    pub shares: Vec<Vec<(usize, f64)>>,
}

impl VoronoiAssignment {
    /// Sum of `values` over each sample unit's polygon, in the order of `sample.units()`.
    pub fn polygon_sums(&self, sample: &SampleSelection, values: &[f64]) -> Vec<f64> {
        let mut slot = vec![usize::MAX; values.len()];
        for (s, &u) in sample.units().iter().enumerate() {
            slot[u] = s;
        }
        let mut sums = vec![0.0; sample.len()];
        for (i, shares) in self.shares.iter().enumerate() {
            for &(u, share) in shares {
                sums[slot[u]] += share * values[i];
            }
        }
        sums
    }
}

/// Calls `f(unit, nearest_sample_units)` for every population unit.
pub(crate) fn for_each_nearest_sample(
    frame: &PopulationFrame,
    sample: &SampleSelection,
    mut f: impl FnMut(usize, &[usize]),
) -> Result<()> {
    if sample.is_empty() {
        return Err(Error::Domain("sample is empty".into()));
    }
    let coords = frame.coords();
    let grid = GridIndex::from_subset(coords, sample.units());
    let mut scratch = Vec::new();
    for (i, &p) in coords.iter().enumerate() {
        scratch.clear();
        scratch.extend(grid.nearest(p, None));
        f(i, &scratch);
    }
    Ok(())
}

/// Assigns every population unit to its nearest sample unit(s), splitting ties equally.
pub fn voronoi_assign(
    frame: &PopulationFrame,
    sample: &SampleSelection,
) -> Result<VoronoiAssignment> {
    let mut shares = vec![Vec::new(); frame.len()];
    for_each_nearest_sample(frame, sample, |i, nearest| {
        let share = 1.0 / nearest.len() as f64;
        shares[i] = nearest.iter().map(|&u| (u, share)).collect();
    })?;
    Ok(VoronoiAssignment { shares })
}
