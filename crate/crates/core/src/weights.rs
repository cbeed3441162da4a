//! Sparse spatial weights built from inclusion probabilities.
//!
//! Unit `i` stands for `1/π_i` population units, so it gets `k_i = 1/π_i - 1`
//! neighbours: its `floor(k_i)` nearest units carry weight 1 and the next one carries
//! the fractional part. A block of units tied in distance shares the weight of the
//! ranks it spans equally, so each row sums to `k_i` exactly.
//!
//! Storage is compressed sparse rows. With equal probabilities `n/N` the matrix holds
//! about `N (N/n - 1)` nonzeros plus tie overflow, i.e. roughly 16 bytes per entry.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frame::PopulationFrame;
use crate::spatial::SpatialIndex;

/// `k` values within this distance of an integer are snapped to it, so that e.g.
/// `1/0.05 - 1` is treated as 19 rather than 18.999999999999996.
const K_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightsMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    row_sums: Vec<f64>,
    col_sums: Vec<f64>,
    total: f64,
}

/// Neighbour count implied by an inclusion probability, capped at `N - 1`.
pub fn neighbour_count(pi: f64, population: usize) -> f64 {
    let k = 1.0 / pi - 1.0;
    let r = k.round();
    let k = if (k - r).abs() <= K_SNAP * r.max(1.0) { r } else { k };
    k.min((population - 1) as f64).max(0.0)
}

/// Weight of the unit at 0-based rank `r` when `k` neighbours are spread over ranks.
fn rank_weight(k: f64, r: usize) -> f64 {
    (k - r as f64).clamp(0.0, 1.0)
}

impl WeightsMatrix {
    /// Builds W from the frame's coordinates and inclusion probabilities.
    pub fn build(frame: &PopulationFrame) -> Result<Self> {
        let big_n = frame.len();
        if let Some(p) = frame.pi().iter().find(|&&p| !(p > 0.0)) {
            return Err(Error::Domain(format!("inclusion probability {p} is not positive")));
        }
        let index = SpatialIndex::new(frame);
        let rows: Vec<Vec<(usize, f64)>> = (0..big_n)
            .into_par_iter()
            .map(|i| {
                let k = neighbour_count(frame.pi()[i], big_n);
                let list = index.knn(i, k)?;
                let ordered = &list.ordered;
                let mut row = Vec::with_capacity(ordered.len());
                let mut start = 0;
                while start < ordered.len() {
                    let d = ordered[start].distance;
                    let mut end = start + 1;
                    while end < ordered.len() && ordered[end].distance == d {
                        end += 1;
                    }
                    let block: f64 = (start..end).map(|r| rank_weight(k, r)).sum();
                    let share = block / (end - start) as f64;
                    if share > 0.0 {
                        row.extend(ordered[start..end].iter().map(|nb| (nb.unit, share)));
                    }
                    start = end;
                }
                Ok(row)
            })
            .collect::<Result<_>>()?;
        Ok(Self::from_rows(big_n, rows))
    }

    fn from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_unstable_by_key(|e| e.0);
            for (j, w) in row {
                cols.push(j);
                vals.push(w);
            }
            row_ptr.push(cols.len());
        }
        let mut row_sums = vec![0.0; n];
        let mut col_sums = vec![0.0; n];
        for i in 0..n {
            for e in row_ptr[i]..row_ptr[i + 1] {
                row_sums[i] += vals[e];
                col_sums[cols[e]] += vals[e];
            }
        }
        let total = row_sums.iter().sum();
        Self {
            n,
            row_ptr,
            cols,
            vals,
            row_sums,
            col_sums,
            total,
        }
    }

    /// Matrix from explicit `(i, j, w)` entries; duplicate positions are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, w) in triplets {
            if i >= n || j >= n {
                return Err(Error::Domain(format!("entry ({i}, {j}) outside {n}x{n}")));
            }
            if i == j && w != 0.0 {
                return Err(Error::Domain(format!("nonzero diagonal entry at {i}")));
            }
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Domain(format!("weight {w} at ({i}, {j}) is not nonnegative")));
            }
            if w > 0.0 {
                match rows[i].iter_mut().find(|e| e.0 == j) {
                    Some(e) => e.1 += w,
                    None => rows[i].push((j, w)),
                }
            }
        }
        Ok(Self::from_rows(n, rows))
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Nonzero entries of row `i` as `(column, weight)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.vals[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, w)| (i, j, w)))
    }

    /// w_i·
    pub fn row_sums(&self) -> &[f64] {
        &self.row_sums
    }

    /// w_·j
    pub fn col_sums(&self) -> &[f64] {
        &self.col_sums
    }

    /// w = ΣΣ w_ij
    pub fn total(&self) -> f64 {
        self.total
    }

    /// Units with an empty row (π_i = 1).
    pub fn zero_rows(&self) -> Vec<bool> {
        self.row_sums.iter().map(|&s| s == 0.0).collect()
    }

    /// `W z`
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, w)| w * z[j]).sum())
            .collect()
    }

    /// `Wᵀ u`
    pub fn apply_transpose(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            for (j, w) in self.row(i) {
                out[j] += w * u[i];
            }
        }
        out
    }

    /// `zᵀ W z`
    pub fn quad(&self, z: &[f64]) -> f64 {
        (0..self.n)
            .map(|i| z[i] * self.row(i).map(|(j, w)| w * z[j]).sum::<f64>())
            .sum()
    }

    /// Matrix-free A, B and D.
    pub fn operators(&self) -> DerivedOperators<'_> {
        DerivedOperators { w: self }
    }

    /// Writes `i,j,w` rows (frame positions).
    pub fn write_triplets_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["i", "j", "w"])?;
        for (i, j, w) in self.triplets() {
            out.write_record([i.to_string(), j.to_string(), w.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_triplets_csv<R: Read>(n: usize, source: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(source);
        let mut triplets = Vec::new();
        for (row0, record) in reader.records().enumerate() {
            let record = record?;
            let field = |c: usize, name: &str| -> Result<&str> {
                record.get(c).ok_or_else(|| Error::Schema(name.into()))
            };
            let bad = |name: &str, raw: &str| Error::Parse {
                row: row0 + 1,
                column: name.into(),
                value: raw.into(),
            };
            let (ri, rj, rw) = (field(0, "i")?, field(1, "j")?, field(2, "w")?);
            triplets.push((
                ri.parse().map_err(|_| bad("i", ri))?,
                rj.parse().map_err(|_| bad("j", rj))?,
                rw.parse().map_err(|_| bad("w", rw))?,
            ));
        }
        Self::from_triplets(n, &triplets)
    }
}

/// Matrix-free views of
/// `D = diag(w_i·)`, `A = D⁻¹W − 𝟙𝟙ᵀW / w` and `B = AᵀDA`.
///
/// Rows with `w_i· = 0` are zero in `A`; `D` removes them from `B` either way.
#[derive(Debug, Clone, Copy)]
pub struct DerivedOperators<'a> {
    w: &'a WeightsMatrix,
}

impl DerivedOperators<'_> {
    pub fn apply_d(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.w.row_sums).map(|(a, d)| a * d).collect()
    }

    /// `Σ_j w_·j z_j / w`
    fn grand_mean(&self, z: &[f64]) -> f64 {
        z.iter().zip(&self.w.col_sums).map(|(a, c)| a * c).sum::<f64>() / self.w.total
    }

    pub fn apply_a(&self, z: &[f64]) -> Vec<f64> {
        let wz = self.w.apply(z);
        let grand = self.grand_mean(z);
        wz.iter()
            .zip(&self.w.row_sums)
            .map(|(&s, &d)| if d > 0.0 { s / d - grand } else { 0.0 })
            .collect()
    }

    /// `Aᵀ u = Wᵀ D⁻¹ u − (Wᵀ𝟙)(Σ u_i) / w`, the sum running over nonzero rows
    pub fn apply_at(&self, u: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = u
            .iter()
            .zip(&self.w.row_sums)
            .map(|(&x, &d)| if d > 0.0 { x / d } else { 0.0 })
            .collect();
        let wt = self.w.apply_transpose(&scaled);
        let s: f64 = u
            .iter()
            .zip(&self.w.row_sums)
            .filter(|(_, &d)| d > 0.0)
            .map(|(x, _)| x)
            .sum::<f64>()
            / self.w.total;
        wt.iter()
            .zip(&self.w.col_sums)
            .map(|(a, c)| a - c * s)
            .collect()
    }

    pub fn apply_b(&self, z: &[f64]) -> Vec<f64> {
        self.apply_at(&self.apply_d(&self.apply_a(z)))
    }

    /// `zᵀ D z`
    pub fn quad_d(&self, z: &[f64]) -> f64 {
        z.iter().zip(&self.w.row_sums).map(|(a, d)| d * a * a).sum()
    }

    /// `zᵀ B z = Σ_i w_i· (A z)_i²`, nonnegative by construction.
    pub fn quad_b(&self, z: &[f64]) -> f64 {
        self.apply_a(z)
            .iter()
            .zip(&self.w.row_sums)
            .map(|(a, d)| d * a * a)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line() -> PopulationFrame {
        PopulationFrame::from_points(
            vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]],
            vec![0.5; 4],
        )
        .unwrap()
    }

    fn random_frame(rng: &mut ChaCha8Rng, big_n: usize) -> PopulationFrame {
        let pts = (0..big_n).map(|_| [rng.random(), rng.random()]).collect();
        let pi = (0..big_n).map(|_| rng.random_range(0.05..=1.0)).collect();
        PopulationFrame::from_points(pts, pi).unwrap()
    }

    /// Dense B = WᵀD⁻¹W − Wᵀ𝟙𝟙ᵀW / w.
    fn dense_b(w: &WeightsMatrix) -> Vec<Vec<f64>> {
        let n = w.len();
        let mut dense = vec![vec![0.0; n]; n];
        for (i, j, v) in w.triplets() {
            dense[i][j] = v;
        }
        let d = w.row_sums();
        let c: Vec<f64> = (0..n).map(|j| (0..n).map(|i| dense[i][j]).sum()).collect();
        let total: f64 = c.iter().sum();
        let mut b = vec![vec![0.0; n]; n];
        for j in 0..n {
            for k in 0..n {
                let mut s = 0.0;
                for i in 0..n {
                    if d[i] > 0.0 {
                        s += dense[i][j] * dense[i][k] / d[i];
                    }
                }
                b[j][k] = s - c[j] * c[k] / total;
            }
        }
        b
    }

    #[test]
    fn fractional_boundary_weight() {
        // 1/π - 1 = 5.7 on a line with distinct distances
        let pts = (0..10).map(|i| [(i * i) as f64, 0.0]).collect();
        let mut pi = vec![0.5; 10];
        pi[0] = 1.0 / 6.7;
        let frame = PopulationFrame::from_points(pts, pi).unwrap();
        let w = WeightsMatrix::build(&frame).unwrap();
        let row: Vec<(usize, f64)> = w.row(0).collect();
        assert_eq!(row.len(), 6);
        for &(j, v) in &row[..5] {
            assert_eq!(v, 1.0, "neighbour {j}");
        }
        assert_eq!(row[5].0, 6);
        assert!((row[5].1 - 0.7).abs() < 1e-9);
    }

    #[test]
    fn line_rows_with_tie_split() {
        let w = WeightsMatrix::build(&line()).unwrap();
        assert_eq!(w.row(0).collect::<Vec<_>>(), vec![(1, 1.0)]);
        assert_eq!(w.row(1).collect::<Vec<_>>(), vec![(0, 0.5), (2, 0.5)]);
        assert_eq!(w.row(2).collect::<Vec<_>>(), vec![(1, 0.5), (3, 0.5)]);
        assert_eq!(w.row(3).collect::<Vec<_>>(), vec![(2, 1.0)]);
        assert_eq!(w.total(), 4.0);
        assert_eq!(w.col_sums(), &[0.5, 1.5, 1.5, 0.5]);
    }

    #[test]
    fn certain_unit_has_empty_row() {
        let frame = PopulationFrame::from_points(
            vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]],
            vec![1.0, 0.5, 0.5],
        )
        .unwrap();
        let w = WeightsMatrix::build(&frame).unwrap();
        assert_eq!(w.row(0).count(), 0);
        assert_eq!(w.zero_rows(), vec![true, false, false]);
    }

    #[test]
    fn k_is_capped_at_n_minus_one() {
        let frame = PopulationFrame::from_points(
            vec![[0.0, 0.0], [1.0, 0.0], [5.0, 0.0]],
            vec![0.01, 0.5, 0.5],
        )
        .unwrap();
        let w = WeightsMatrix::build(&frame).unwrap();
        assert_eq!(w.row_sums()[0], 2.0);
    }

    #[test]
    fn near_integer_k_snaps() {
        assert_eq!(neighbour_count(0.05, 1000), 19.0);
        assert_eq!(neighbour_count(0.2, 1000), 4.0);
        assert_eq!(neighbour_count(1.0 / 3.0, 1000), 2.0);
    }

    #[test]
    fn line_b_quadratic_form() {
        let w = WeightsMatrix::build(&line()).unwrap();
        let z = [0.5, -0.5, 0.5, -0.5];
        assert!((w.operators().quad_b(&z) - 1.0).abs() < 1e-15);
        let b = dense_b(&w);
        let dense: f64 = (0..4)
            .map(|j| (0..4).map(|k| z[j] * b[j][k] * z[k]).sum::<f64>())
            .sum();
        assert!((dense - 1.0).abs() < 1e-15);
    }

    #[test]
    fn a_and_b_annihilate_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let frame = random_frame(&mut rng, 40);
            let w = WeightsMatrix::build(&frame).unwrap();
            let ones = vec![1.0; 40];
            let ops = w.operators();
            assert!(ops.apply_a(&ones).iter().all(|a| a.abs() < 1e-10));
            assert!(ops.apply_b(&ones).iter().all(|b| b.abs() < 1e-10));
        }
    }

    #[test]
    fn row_sums_match_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let frame = random_frame(&mut rng, 60);
            let w = WeightsMatrix::build(&frame).unwrap();
            for (i, &p) in frame.pi().iter().enumerate() {
                let k = (1.0 / p - 1.0).min(59.0);
                assert!((w.row_sums()[i] - k).abs() < 1e-9);
                assert_eq!(w.get(i, i), 0.0);
            }
            let total: f64 = w.col_sums().iter().sum();
            assert!((total - w.total()).abs() < 1e-12 * w.total().max(1.0));
        }
    }

    #[test]
    fn ties_inside_integer_part_share_the_block() {
        // centre of a plus-shaped cross has four neighbours at distance 1
        let frame = PopulationFrame::from_points(
            vec![[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]],
            vec![1.0 / 3.5, 0.5, 0.5, 0.5, 0.5],
        )
        .unwrap();
        let w = WeightsMatrix::build(&frame).unwrap();
        let row: Vec<(usize, f64)> = w.row(0).collect();
        assert_eq!(row.len(), 4);
        for (_, v) in row {
            assert!((v - 2.5 / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sparse_b_equals_dense_b() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let big_n = rng.random_range(2..=100);
            let frame = random_frame(&mut rng, big_n);
            let w = WeightsMatrix::build(&frame).unwrap();
            if w.total() == 0.0 {
                continue;
            }
            let z: Vec<f64> = (0..big_n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b = dense_b(&w);
            let sparse = w.operators().apply_b(&z);
            for j in 0..big_n {
                let dense: f64 = (0..big_n).map(|k| b[j][k] * z[k]).sum();
                assert!((dense - sparse[j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn triplet_csv_round_trip() {
        let w = WeightsMatrix::build(&line()).unwrap();
        let mut buf = Vec::new();
        w.write_triplets_csv(&mut buf).unwrap();
        let back = WeightsMatrix::read_triplets_csv(4, buf.as_slice()).unwrap();
        assert_eq!(back, w);
        assert!(WeightsMatrix::from_triplets(2, &[(0, 0, 1.0)]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #[test]
            fn b_is_psd_and_weighted_centering_is_exact(
                seed in any::<u64>(),
                big_n in 2usize..60,
            ) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let frame = random_frame(&mut rng, big_n);
                let w = WeightsMatrix::build(&frame).unwrap();
                prop_assume!(w.total() > 0.0);
                let y: Vec<f64> = (0..big_n).map(|_| rng.random_range(-5.0..5.0)).collect();
                let ops = w.operators();
                prop_assert!(ops.quad_b(&y) >= 0.0);
                let mean = y.iter().zip(w.row_sums()).map(|(a, d)| a * d).sum::<f64>() / w.total();
                let z: Vec<f64> = y.iter().map(|v| v - mean).collect();
                let centered: f64 = z.iter().zip(w.row_sums()).map(|(a, d)| a * d).sum();
                prop_assert!(centered.abs() < 1e-10);
            }

            #[test]
            fn invariant_under_uniform_scaling(seed in any::<u64>(), big_n in 2usize..40) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let frame = random_frame(&mut rng, big_n);
                let scaled: Vec<_> = frame.coords().iter().map(|p| [p[0] * 8.0, p[1] * 8.0]).collect();
                let other = PopulationFrame::from_points(scaled, frame.pi().to_vec()).unwrap();
                prop_assert_eq!(
                    WeightsMatrix::build(&frame).unwrap(),
                    WeightsMatrix::build(&other).unwrap()
                );
            }
        }
    }
}
