use serde::{Deserialize, Serialize};

/// Row-major sparse matrix: each row holds `(column, value)` pairs sorted by
/// column. Absent entries are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<Vec<(usize, f64)>>,
}

impl SparseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SparseMatrix {
            rows,
            cols,
            entries: vec![Vec::new(); rows],
        }
    }

    pub fn from_dense(dense: &[Vec<f64>]) -> Self {
        let rows = dense.len();
        let cols = dense.first().map_or(0, Vec::len);
        let entries = dense
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(j, v)| (j, *v))
                    .collect()
            })
            .collect();
        SparseMatrix {
            rows,
            cols,
            entries,
        }
    }

    /// Build from unsorted triplets; duplicate coordinates keep the larger value.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut entries: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows];
        for (i, j, v) in triplets {
            debug_assert!(i < rows && j < cols);
            entries[i].push((j, v));
        }
        for row in &mut entries {
            row.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)));
            row.dedup_by_key(|e| e.0);
            row.retain(|e| e.1 != 0.0);
        }
        SparseMatrix {
            rows,
            cols,
            entries,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.entries[i]
    }

    pub fn nnz(&self) -> usize {
        self.entries.iter().map(Vec::len).sum()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i]
            .binary_search_by_key(&j, |e| e.0)
            .map_or(0.0, |k| self.entries[i][k].1)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.cols]; self.rows];
        for (i, row) in self.entries.iter().enumerate() {
            for &(j, v) in row {
                out[i][j] = v;
            }
        }
        out
    }

    pub fn transpose(&self) -> SparseMatrix {
        SparseMatrix::from_triplets(
            self.cols,
            self.rows,
            self.entries
                .iter()
                .enumerate()
                .flat_map(|(i, row)| row.iter().map(move |&(j, v)| (j, i, v))),
        )
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        self.entries
            .iter()
            .map(|row| row.iter().map(|&(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn transpose_matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (i, row) in self.entries.iter().enumerate() {
            for &(j, v) in row {
                out[j] += v * x[i];
            }
        }
        out
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        self.entries
            .iter()
            .zip(x)
            .map(|(row, xi)| xi * row.iter().map(|&(j, v)| v * y[j]).sum::<f64>())
            .sum()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.is_square()
            && self
                .entries
                .iter()
                .enumerate()
                .all(|(i, row)| row.iter().all(|&(j, v)| (self.get(j, i) - v).abs() <= tol))
    }

    pub fn min_value(&self) -> f64 {
        self.entries
            .iter()
            .flatten()
            .map(|e| e.1)
            .fold(0.0, f64::min)
    }

    pub fn max_abs_row_sum(&self) -> f64 {
        self.entries
            .iter()
            .map(|row| row.iter().map(|e| e.1.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().flatten().map(|e| e.1)
    }

    /// Scale every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> SparseMatrix {
        SparseMatrix {
            rows: self.rows,
            cols: self.cols,
            entries: self
                .entries
                .iter()
                .map(|row| row.iter().map(|&(j, v)| (j, v * factor)).collect())
                .collect(),
        }
    }

    /// Relabel rows and columns: entry `(i, j)` moves to `(row_perm[i], col_perm[j])`.
    pub fn permuted(&self, row_perm: &[usize], col_perm: &[usize]) -> SparseMatrix {
        SparseMatrix::from_triplets(
            self.rows,
            self.cols,
            self.entries
                .iter()
                .enumerate()
                .flat_map(|(i, row)| row.iter().map(move |&(j, v)| (row_perm[i], col_perm[j], v))),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_round_trip_and_products() {
        let d = vec![vec![0.0, 2.0, 0.0], vec![1.0, 0.0, 3.0]];
        let m = SparseMatrix::from_dense(&d);
        assert_eq!(m.to_dense(), d);
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.matvec(&[1.0, 1.0, 1.0]), vec![2.0, 4.0]);
        assert_eq!(m.transpose_matvec(&[1.0, 2.0]), vec![2.0, 2.0, 6.0]);
        assert_eq!(m.bilinear(&[1.0, 2.0], &[1.0, 1.0, 1.0]), 10.0);
        assert_eq!(
            m.transpose().to_dense(),
            vec![vec![0.0, 1.0], vec![2.0, 0.0], vec![0.0, 3.0]]
        );
    }

    #[test]
    fn triplets_keep_max_on_duplicates() {
        let m = SparseMatrix::from_triplets(2, 2, [(0, 1, 0.3), (0, 1, 0.7), (1, 0, 0.7)]);
        assert_eq!(m.get(0, 1), 0.7);
        assert!(m.is_symmetric(0.0));
    }
}
