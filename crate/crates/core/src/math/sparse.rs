//! Compressed sparse row storage with a fixed pattern.
//!
//! Jacobians are assembled by scattering per-block contributions into an
//! emission-ordered buffer; a precomputed permutation folds that buffer
//! (summing duplicate coordinates) into CSR value order.

/// Fixed sparsity structure built once per transcription.
#[derive(Clone, Debug)]
pub struct CsrPattern {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    /// emission slot -> CSR slot (duplicates map to the same CSR slot)
    perm: Vec<usize>,
    n_emit: usize,
}

impl CsrPattern {
    /// Build from emission-ordered coordinates (duplicates allowed).
    pub fn from_coords(n_rows: usize, n_cols: usize, coords: &[(u32, u32)]) -> Self {
        let mut order: Vec<usize> = (0..coords.len()).collect();
        order.sort_by_key(|&k| (coords[k].0, coords[k].1));

        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(coords.len());
        let mut perm = vec![0usize; coords.len()];
        let mut prev: Option<(u32, u32)> = None;
        for &k in &order {
            let rc = coords[k];
            if prev != Some(rc) {
                col_idx.push(rc.1);
                row_ptr[rc.0 as usize + 1] += 1;
                prev = Some(rc);
            }
            perm[k] = col_idx.len() - 1;
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            perm,
            n_emit: coords.len(),
        }
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn n_emit(&self) -> usize {
        self.n_emit
    }

    /// Fold emission-ordered values into CSR-ordered values, summing duplicates.
    pub fn fold(&self, emitted: &[f64], csr_vals: &mut [f64]) {
        debug_assert_eq!(emitted.len(), self.n_emit);
        debug_assert_eq!(csr_vals.len(), self.nnz());
        csr_vals.iter_mut().for_each(|v| *v = 0.0);
        for (k, &v) in emitted.iter().enumerate() {
            csr_vals[self.perm[k]] += v;
        }
    }

    /// Row index per CSR slot (expanded form for checkers).
    pub fn expand_rows(&self) -> Vec<u32> {
        let mut rows = vec![0u32; self.nnz()];
        for r in 0..self.n_rows {
            for s in self.row_ptr[r]..self.row_ptr[r + 1] {
                rows[s] = r as u32;
            }
        }
        rows
    }

    /// y = A x
    pub fn mul_vec(&self, vals: &[f64], x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(y.len(), self.n_rows);
        for r in 0..self.n_rows {
            let mut acc = 0.0;
            for s in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += vals[s] * x[self.col_idx[s] as usize];
            }
            y[r] = acc;
        }
    }

    /// y = A^T x
    pub fn mul_transpose_vec(&self, vals: &[f64], x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(y.len(), self.n_cols);
        y.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..self.n_rows {
            let xr = x[r];
            if xr == 0.0 {
                continue;
            }
            for s in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.col_idx[s] as usize] += vals[s] * xr;
            }
        }
    }

    /// Squared column norms (diagonal of A^T A).
    pub fn col_norms_sq(&self, vals: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (s, &v) in vals.iter().enumerate() {
            out[self.col_idx[s] as usize] += v * v;
        }
    }

    /// Infinity norm of each row.
    pub fn row_inf_norms(&self, vals: &[f64]) -> Vec<f64> {
        (0..self.n_rows)
            .map(|r| {
                self.row_ptr[r]..self.row_ptr[r + 1]
            })
            .map(|range| range.map(|s| vals[s].abs()).fold(0.0, f64::max))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dedup_and_matvec() {
        // 2x3 matrix, entry (0,1) emitted twice: [[1, 2+3, 0], [0, 0, 4]]
        let coords = vec![(0, 0), (0, 1), (1, 2), (0, 1)];
        let p = CsrPattern::from_coords(2, 3, &coords);
        assert_eq!(p.nnz(), 3);
        let mut vals = vec![0.0; 3];
        p.fold(&[1.0, 2.0, 4.0, 3.0], &mut vals);

        let mut y = vec![0.0; 2];
        p.mul_vec(&vals, &[1.0, 1.0, 1.0], &mut y);
        assert_eq!(y, vec![6.0, 4.0]);

        let mut yt = vec![0.0; 3];
        p.mul_transpose_vec(&vals, &[1.0, 2.0], &mut yt);
        assert_eq!(yt, vec![1.0, 5.0, 8.0]);
    }
}
