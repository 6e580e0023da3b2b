//! Reference solver: augmented-Lagrangian outer loop over a projected
//! Newton inner solver with direct structured linear algebra.
//!
//! Inequalities become equalities through bounded slacks, so the inner
//! problem is bound-constrained minimization of
//!
//! ```text
//! phi(x, s) = f(x) - lambda . r + mu/2 |r|^2,   r = c(x) - target(s)
//! ```
//!
//! Inner steps solve (D + mu Jr^T Jr) d = -grad phi exactly. For a
//! collocation transcription the Gauss-Newton matrix is block-tridiagonal
//! over the declared interval blocks, bordered by the free scalars and the
//! initial boundary state, plus a low-rank term from declared dense rows
//! (the induction balance). The solve runs block Cholesky down the chain,
//! a dense Schur complement on the border, and a Woodbury correction for
//! the dense rows. Levenberg-style damping adapts to line-search feedback;
//! active bounds are frozen through a large diagonal penalty. The outer
//! loop is the classic first-order scheme: tighten multipliers when
//! feasibility improves on schedule, raise the penalty otherwise.

use std::io::Write;

use super::{SolveOptions, SolveReport, SolveStatus, SparseNlp};
use crate::math::dense::{cholesky_factor, cholesky_solve, lu_solve};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Maps between constraint rows and slack variables.
struct Slacks {
    /// slack index per row (usize::MAX for equality rows)
    of_row: Vec<usize>,
    /// row per slack
    rows: Vec<usize>,
}

impl Slacks {
    fn build(nlp: &SparseNlp) -> Self {
        let mut of_row = vec![usize::MAX; nlp.n_cons];
        let mut rows = Vec::new();
        for i in 0..nlp.n_cons {
            if nlp.c_upper[i] - nlp.c_lower[i] > 0.0 {
                of_row[i] = rows.len();
                rows.push(i);
            }
        }
        Self { of_row, rows }
    }
    fn n(&self) -> usize {
        self.rows.len()
    }
}

/// Column placement within the structured factorization.
#[derive(Clone, Copy)]
enum Place {
    Chain { block: u32, offset: u32 },
    Border { offset: u32 },
}

/// Static elimination structure over the extended variables (x then s).
struct Structure {
    n_blocks: usize,
    /// extended column indices per chain block (slacks joined to the block
    /// of their row)
    block_cols: Vec<Vec<u32>>,
    border_cols: Vec<u32>,
    place: Vec<Place>,
    dense_rows: Vec<usize>,
    is_dense_row: Vec<bool>,
}

impl Structure {
    fn build(nlp: &SparseNlp, slacks: &Slacks) -> Self {
        let n = nlp.n_vars;
        let nt = n + slacks.n();
        let mut block_cols: Vec<Vec<u32>> = nlp
            .chain_blocks
            .iter()
            .map(|&(start, len)| (start as u32..(start + len) as u32).collect())
            .collect();
        let mut in_chain = vec![false; nt];
        for cols in &block_cols {
            for &c in cols {
                in_chain[c as usize] = true;
            }
        }

        let mut is_dense_row = vec![false; nlp.n_cons];
        for &r in &nlp.dense_rows {
            is_dense_row[r] = true;
        }

        // assign each slack to the chain block its row touches
        let pat = &nlp.pattern;
        let block_of_var = {
            let mut m = vec![usize::MAX; n];
            for (bi, cols) in block_cols.iter().enumerate() {
                for &c in cols {
                    m[c as usize] = bi;
                }
            }
            m
        };
        for (j, &r) in slacks.rows.iter().enumerate() {
            if is_dense_row[r] {
                continue;
            }
            let mut best = usize::MAX;
            for s in pat.row_ptr[r]..pat.row_ptr[r + 1] {
                let c = pat.col_idx[s] as usize;
                if block_of_var[c] != usize::MAX {
                    best = best.min(block_of_var[c]);
                }
            }
            if best != usize::MAX {
                block_cols[best].push((n + j) as u32);
                in_chain[n + j] = true;
            }
        }

        let mut border_cols = Vec::new();
        for c in 0..nt {
            if !in_chain[c] {
                border_cols.push(c as u32);
            }
        }
        let mut place = vec![Place::Border { offset: 0 }; nt];
        for (bi, cols) in block_cols.iter().enumerate() {
            for (off, &c) in cols.iter().enumerate() {
                place[c as usize] = Place::Chain {
                    block: bi as u32,
                    offset: off as u32,
                };
            }
        }
        for (off, &c) in border_cols.iter().enumerate() {
            place[c as usize] = Place::Border { offset: off as u32 };
        }

        Self {
            n_blocks: block_cols.len(),
            block_cols,
            border_cols,
            place,
            dense_rows: nlp.dense_rows.clone(),
            is_dense_row,
        }
    }
}

/// Factorization of H = D + mu Jr^T Jr (+ mu u u^T for dense rows).
struct GnFactor {
    /// Cholesky factors of the eliminated chain diagonal blocks
    chol: Vec<Vec<f64>>,
    /// original chain couplings B_k (block k x block k+1)
    b_orig: Vec<Vec<f64>>,
    /// eliminated couplings W_k = Abar_k^-1 B_k
    w_next: Vec<Vec<f64>>,
    /// eliminated border couplings V_k = Abar_k^-1 Ctilde_k
    v_border: Vec<Vec<f64>>,
    /// updated border couplings Ctilde_k
    c_tilde: Vec<Vec<f64>>,
    /// Cholesky of the border Schur complement
    border_chol: Vec<f64>,
    nb: usize,
    /// dense-row Woodbury data: U columns (extended sparse), Y = Htilde^-1 U,
    /// LU of the capacitance matrix
    wood_u: Vec<Vec<(u32, f64)>>,
    wood_y: Vec<Vec<f64>>,
    wood_cap: Vec<f64>,
}

impl GnFactor {
    fn build(
        nlp: &SparseNlp,
        slacks: &Slacks,
        st: &Structure,
        jac: &[f64],
        mu: f64,
        diag: &[f64],
        extra: &[(u32, u32, f64)],
    ) -> Option<Self> {
        let n = nlp.n_vars;
        let nt = n + slacks.n();
        let nb = st.border_cols.len();
        let pat = &nlp.pattern;
        let nblk = st.n_blocks;

        let len_of = |k: usize| st.block_cols[k].len();
        let mut a: Vec<Vec<f64>> = (0..nblk).map(|k| vec![0.0; len_of(k) * len_of(k)]).collect();
        let mut b: Vec<Vec<f64>> = (0..nblk)
            .map(|k| {
                if k + 1 < nblk {
                    vec![0.0; len_of(k) * len_of(k + 1)]
                } else {
                    Vec::new()
                }
            })
            .collect();
        let mut c: Vec<Vec<f64>> = (0..nblk).map(|k| vec![0.0; len_of(k) * nb]).collect();
        let mut s_border = vec![0.0; nb * nb];

        for col in 0..nt {
            match st.place[col] {
                Place::Chain { block, offset } => {
                    let len = len_of(block as usize);
                    a[block as usize][offset as usize * (len + 1)] += diag[col];
                }
                Place::Border { offset } => {
                    s_border[offset as usize * (nb + 1)] += diag[col];
                }
            }
        }

        // exact second-order entries (objective + weighted constraints)
        for &(ca, cb, v) in extra {
            if v == 0.0 {
                continue;
            }
            match (st.place[ca as usize], st.place[cb as usize]) {
                (
                    Place::Chain { block: b1, offset: o1 },
                    Place::Chain { block: b2, offset: o2 },
                ) => {
                    if b1 == b2 {
                        let len = len_of(b1 as usize);
                        a[b1 as usize][o1 as usize * len + o2 as usize] += v;
                        if o1 != o2 {
                            a[b1 as usize][o2 as usize * len + o1 as usize] += v;
                        }
                    } else {
                        let (bl, ol, oh) = if b1 < b2 {
                            (b1 as usize, o1 as usize, o2 as usize)
                        } else {
                            (b2 as usize, o2 as usize, o1 as usize)
                        };
                        if bl + 1 == if b1 < b2 { b2 as usize } else { b1 as usize } {
                            let len_next = len_of(bl + 1);
                            b[bl][ol * len_next + oh] += v;
                        }
                        // non-adjacent curvature is dropped (model stays
                        // exact to first order; damping covers the rest)
                    }
                }
                (Place::Chain { block, offset }, Place::Border { offset: ob })
                | (Place::Border { offset: ob }, Place::Chain { block, offset }) => {
                    c[block as usize][offset as usize * nb + ob as usize] += v;
                }
                (Place::Border { offset: o1 }, Place::Border { offset: o2 }) => {
                    s_border[o1 as usize * nb + o2 as usize] += v;
                    if o1 != o2 {
                        s_border[o2 as usize * nb + o1 as usize] += v;
                    }
                }
            }
        }

        let mut cols_buf: Vec<(usize, f64)> = Vec::with_capacity(128);
        for r in 0..nlp.n_cons {
            if st.is_dense_row[r] {
                continue;
            }
            cols_buf.clear();
            for s in pat.row_ptr[r]..pat.row_ptr[r + 1] {
                if jac[s] != 0.0 {
                    cols_buf.push((pat.col_idx[s] as usize, jac[s]));
                }
            }
            if slacks.of_row[r] != usize::MAX {
                cols_buf.push((n + slacks.of_row[r], -1.0));
            }
            for (i1, &(c1, v1)) in cols_buf.iter().enumerate() {
                let p1 = st.place[c1];
                for &(c2, v2) in cols_buf.iter().skip(i1) {
                    let v = mu * v1 * v2;
                    match (p1, st.place[c2]) {
                        (
                            Place::Chain { block: b1, offset: o1 },
                            Place::Chain { block: b2, offset: o2 },
                        ) => {
                            if b1 == b2 {
                                let len = len_of(b1 as usize);
                                a[b1 as usize][o1 as usize * len + o2 as usize] += v;
                                if o1 != o2 {
                                    a[b1 as usize][o2 as usize * len + o1 as usize] += v;
                                }
                            } else {
                                let (bl, ol, oh) = if b1 < b2 {
                                    debug_assert_eq!(b1 + 1, b2, "non-adjacent coupling");
                                    (b1 as usize, o1 as usize, o2 as usize)
                                } else {
                                    debug_assert_eq!(b2 + 1, b1, "non-adjacent coupling");
                                    (b2 as usize, o2 as usize, o1 as usize)
                                };
                                let len_next = len_of(bl + 1);
                                b[bl][ol * len_next + oh] += v;
                            }
                        }
                        (Place::Chain { block, offset }, Place::Border { offset: ob })
                        | (Place::Border { offset: ob }, Place::Chain { block, offset }) => {
                            c[block as usize][offset as usize * nb + ob as usize] += v;
                        }
                        (Place::Border { offset: o1 }, Place::Border { offset: o2 }) => {
                            s_border[o1 as usize * nb + o2 as usize] += v;
                            if o1 != o2 {
                                s_border[o2 as usize * nb + o1 as usize] += v;
                            }
                        }
                    }
                }
            }
        }

        // bordered block-tridiagonal elimination
        let mut chol = Vec::with_capacity(nblk);
        let mut w_next = Vec::with_capacity(nblk);
        let mut v_border = Vec::with_capacity(nblk);
        let mut c_tilde = Vec::with_capacity(nblk);
        for k in 0..nblk {
            let len = len_of(k);
            let mut ak = std::mem::take(&mut a[k]);
            if !cholesky_factor(&mut ak, len) {
                return None;
            }
            let bk = std::mem::take(&mut b[k]);
            let ck = std::mem::take(&mut c[k]);
            let len_next = if k + 1 < nblk { len_of(k + 1) } else { 0 };

            let mut wk = bk.clone();
            let mut col = vec![0.0; len];
            for j in 0..len_next {
                for i in 0..len {
                    col[i] = wk[i * len_next + j];
                }
                cholesky_solve(&ak, &mut col, len);
                for i in 0..len {
                    wk[i * len_next + j] = col[i];
                }
            }
            let mut vk = ck.clone();
            for j in 0..nb {
                for i in 0..len {
                    col[i] = vk[i * nb + j];
                }
                cholesky_solve(&ak, &mut col, len);
                for i in 0..len {
                    vk[i * nb + j] = col[i];
                }
            }
            if k + 1 < nblk {
                // A_{k+1} -= B_k^T W_k ; C_{k+1} -= B_k^T V_k
                let an = &mut a[k + 1];
                for i in 0..len_next {
                    for j in 0..len_next {
                        let mut acc = 0.0;
                        for t in 0..len {
                            acc += bk[t * len_next + i] * wk[t * len_next + j];
                        }
                        an[i * len_next + j] -= acc;
                    }
                }
                let cn = &mut c[k + 1];
                for i in 0..len_next {
                    for j in 0..nb {
                        let mut acc = 0.0;
                        for t in 0..len {
                            acc += bk[t * len_next + i] * vk[t * nb + j];
                        }
                        cn[i * nb + j] -= acc;
                    }
                }
            }
            // S -= Ctilde_k^T V_k
            for i in 0..nb {
                for j in 0..nb {
                    let mut acc = 0.0;
                    for t in 0..len {
                        acc += ck[t * nb + i] * vk[t * nb + j];
                    }
                    s_border[i * nb + j] -= acc;
                }
            }
            chol.push(ak);
            b_push(&mut w_next, wk);
            b_push(&mut v_border, vk);
            b_push(&mut c_tilde, ck);
            b[k] = bk; // keep originals for the forward solve
        }
        if !cholesky_factor(&mut s_border, nb) {
            return None;
        }

        let mut factor = Self {
            chol,
            b_orig: b,
            w_next,
            v_border,
            c_tilde,
            border_chol: s_border,
            nb,
            wood_u: Vec::new(),
            wood_y: Vec::new(),
            wood_cap: Vec::new(),
        };

        // Woodbury data for dense rows: H = Htilde + mu U U^T
        let nd = st.dense_rows.len();
        if nd > 0 {
            let mut us = Vec::with_capacity(nd);
            let mut ys = Vec::with_capacity(nd);
            for &r in &st.dense_rows {
                let mut u: Vec<(u32, f64)> = Vec::new();
                for s in pat.row_ptr[r]..pat.row_ptr[r + 1] {
                    if jac[s] != 0.0 {
                        u.push((pat.col_idx[s], jac[s]));
                    }
                }
                if slacks.of_row[r] != usize::MAX {
                    u.push(((n + slacks.of_row[r]) as u32, -1.0));
                }
                let mut dense_u = vec![0.0; nt];
                for &(cidx, v) in &u {
                    dense_u[cidx as usize] = v;
                }
                let mut y = dense_u.clone();
                factor.solve_tilde(st, &mut y);
                us.push(u);
                ys.push((dense_u, y));
            }
            let mut cap = vec![0.0; nd * nd];
            for i in 0..nd {
                for j in 0..nd {
                    cap[i * nd + j] = dot(&ys[i].0, &ys[j].1);
                }
                cap[i * nd + i] += 1.0 / mu;
            }
            factor.wood_u = us;
            factor.wood_y = ys.into_iter().map(|(_, y)| y).collect();
            factor.wood_cap = cap;
        }
        Some(factor)
    }

    /// In-place solve with the chain+border part (no dense-row term).
    fn solve_tilde(&self, st: &Structure, r: &mut [f64]) {
        let nblk = st.n_blocks;
        let nb = self.nb;
        // gather into block-ordered workspaces
        let mut z: Vec<Vec<f64>> = (0..nblk)
            .map(|k| {
                st.block_cols[k]
                    .iter()
                    .map(|&c| r[c as usize])
                    .collect::<Vec<f64>>()
            })
            .collect();
        let mut rb: Vec<f64> = st.border_cols.iter().map(|&c| r[c as usize]).collect();

        // forward
        for k in 0..nblk {
            if k > 0 {
                let len_prev = st.block_cols[k - 1].len();
                let len = st.block_cols[k].len();
                let bk = &self.b_orig[k - 1];
                let zp = z[k - 1].clone();
                for i in 0..len {
                    let mut acc = 0.0;
                    for t in 0..len_prev {
                        acc += bk[t * len + i] * zp[t];
                    }
                    z[k][i] -= acc;
                }
            }
            let len = st.block_cols[k].len();
            cholesky_solve(&self.chol[k], &mut z[k], len);
            // border accumulation: rb -= Ctilde_k^T z_k
            let ck = &self.c_tilde[k];
            for j in 0..nb {
                let mut acc = 0.0;
                for t in 0..len {
                    acc += ck[t * nb + j] * z[k][t];
                }
                rb[j] -= acc;
            }
        }
        cholesky_solve(&self.border_chol, &mut rb, nb);

        // backward
        for k in (0..nblk).rev() {
            let len = st.block_cols[k].len();
            // z_k -= V_k x_border
            let vk = &self.v_border[k];
            for i in 0..len {
                let mut acc = 0.0;
                for j in 0..nb {
                    acc += vk[i * nb + j] * rb[j];
                }
                z[k][i] -= acc;
            }
            if k + 1 < nblk {
                let len_next = st.block_cols[k + 1].len();
                let wk = &self.w_next[k];
                let zn = z[k + 1].clone();
                for i in 0..len {
                    let mut acc = 0.0;
                    for j in 0..len_next {
                        acc += wk[i * len_next + j] * zn[j];
                    }
                    z[k][i] -= acc;
                }
            }
        }

        // scatter back
        for k in 0..nblk {
            for (off, &c) in st.block_cols[k].iter().enumerate() {
                r[c as usize] = z[k][off];
            }
        }
        for (off, &c) in st.border_cols.iter().enumerate() {
            r[c as usize] = rb[off];
        }
    }

    /// Full solve including the dense-row Woodbury correction.
    fn solve(&self, st: &Structure, r: &mut [f64]) {
        self.solve_tilde(st, r);
        let nd = self.wood_u.len();
        if nd == 0 {
            return;
        }
        let mut utx = vec![0.0; nd];
        for (i, u) in self.wood_u.iter().enumerate() {
            utx[i] = u.iter().map(|&(c, v)| v * r[c as usize]).sum();
        }
        let mut cap = self.wood_cap.clone();
        if !lu_solve(&mut cap, &mut utx, nd) {
            return;
        }
        for (i, y) in self.wood_y.iter().enumerate() {
            let coef = utx[i];
            for (rr, yy) in r.iter_mut().zip(y) {
                *rr -= coef * yy;
            }
        }
    }
}

/// Solve (H - W M^-1 W^T) x = r given solves with H and the BFGS data:
/// x = H^-1 r + H^-1 W (M - W^T H^-1 W)^-1 W^T H^-1 r.
fn solve_with_bfgs(
    factor: &GnFactor,
    st: &Structure,
    bfgs: &BfgsPairs,
    r: &mut [f64],
) -> bool {
    factor.solve(st, r);
    let m2 = bfgs.w_cols.len();
    if m2 == 0 {
        return true;
    }
    let nt = r.len();
    // Hinv W
    let mut hw: Vec<Vec<f64>> = Vec::with_capacity(m2);
    for wcol in &bfgs.w_cols {
        let mut col = wcol.clone();
        factor.solve(st, &mut col);
        hw.push(col);
    }
    // capacitance
    let mut cap = vec![0.0; m2 * m2];
    for i in 0..m2 {
        for j in 0..m2 {
            cap[i * m2 + j] = bfgs.m_mat[i * m2 + j] - dot(&bfgs.w_cols[i], &hw[j]);
        }
    }
    let mut wthr = vec![0.0; m2];
    for (i, wcol) in bfgs.w_cols.iter().enumerate() {
        wthr[i] = dot(wcol, r);
    }
    if !lu_solve(&mut cap, &mut wthr, m2) {
        return true; // skip correction on singular capacitance
    }
    for i in 0..m2 {
        for t in 0..nt {
            r[t] += hw[i][t] * wthr[i];
        }
    }
    true
}

/// Limited-memory BFGS curvature correction applied on top of the direct
/// factorization: B = sum of pair terms [y y^T/(y.s) - (Bs)(Bs)^T/(s.Bs)]
/// kept in the compact representation B = gamma I - W M^-1 W^T with a tiny
/// gamma, and folded into solves through a capacitance system.
struct BfgsPairs {
    mem: usize,
    gamma: f64,
    s: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    w_cols: Vec<Vec<f64>>,
    m_mat: Vec<f64>,
}

impl BfgsPairs {
    fn new(mem: usize) -> Self {
        Self {
            mem,
            gamma: 1e-8,
            s: Vec::new(),
            y: Vec::new(),
            w_cols: Vec::new(),
            m_mat: Vec::new(),
        }
    }

    fn clear(&mut self) {
        self.s.clear();
        self.y.clear();
        self.w_cols.clear();
        self.m_mat.clear();
    }

    fn update(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        let ss = dot(&s, &s).sqrt();
        let yy = dot(&y, &y).sqrt();
        if !sy.is_finite() || sy <= 1e-9 * ss * yy {
            return;
        }
        if self.s.len() == self.mem {
            self.s.remove(0);
            self.y.remove(0);
        }
        self.s.push(s);
        self.y.push(y);
        self.rebuild();
    }

    fn rebuild(&mut self) {
        let m = self.s.len();
        self.w_cols.clear();
        for s in &self.s {
            self.w_cols.push(s.iter().map(|v| v * self.gamma).collect());
        }
        for y in &self.y {
            self.w_cols.push(y.clone());
        }
        let dim = 2 * m;
        let mut mat = vec![0.0; dim * dim];
        for i in 0..m {
            for j in 0..m {
                mat[i * dim + j] = self.gamma * dot(&self.s[i], &self.s[j]);
                if i > j {
                    let l = dot(&self.s[i], &self.y[j]);
                    mat[i * dim + (m + j)] = l;
                    mat[(m + j) * dim + i] = l;
                }
            }
            mat[(m + i) * dim + (m + i)] = -dot(&self.s[i], &self.y[i]);
        }
        self.m_mat = mat;
    }

    /// out += B v (for the structured secant right-hand side)
    fn apply_add(&self, v: &[f64], out: &mut [f64]) {
        for (o, vi) in out.iter_mut().zip(v) {
            *o += self.gamma * vi;
        }
        let m = self.s.len();
        if m == 0 {
            return;
        }
        let dim = 2 * m;
        let mut wtv = vec![0.0; dim];
        for (k, wk) in self.w_cols.iter().enumerate() {
            wtv[k] = dot(wk, v);
        }
        let mut mat = self.m_mat.clone();
        if !lu_solve(&mut mat, &mut wtv, dim) {
            return;
        }
        for (k, wk) in self.w_cols.iter().enumerate() {
            for (o, wv) in out.iter_mut().zip(wk) {
                *o -= wtv[k] * wv;
            }
        }
    }
}

fn b_push<T>(v: &mut Vec<T>, item: T) {
    v.push(item);
}

fn residual_r(nlp: &SparseNlp, slacks: &Slacks, cons: &[f64], xx: &[f64], out: &mut [f64]) {
    let n = nlp.n_vars;
    for i in 0..nlp.n_cons {
        let target = if slacks.of_row[i] == usize::MAX {
            nlp.c_lower[i]
        } else {
            xx[n + slacks.of_row[i]]
        };
        out[i] = cons[i] - target;
    }
}

struct Workspace {
    n: usize,
    m: usize,
    ns: usize,
    xx: Vec<f64>,
    lx: Vec<f64>,
    ux: Vec<f64>,
    cons: Vec<f64>,
    jac: Vec<f64>,
    grad_f: Vec<f64>,
    r: Vec<f64>,
    y_shift: Vec<f64>,
    grad_phi: Vec<f64>,
    col_norms: Vec<f64>,
    free: Vec<bool>,
}

pub fn solve(nlp: &SparseNlp, x0: &[f64], opts: &SolveOptions) -> (Vec<f64>, SolveReport) {
    nlp.validate().expect("malformed NLP");
    let n = nlp.n_vars;
    let m = nlp.n_cons;
    let slacks = Slacks::build(nlp);
    let ns = slacks.n();
    let nt = n + ns;
    let structure = Structure::build(nlp, &slacks);

    let mut log: Option<std::io::BufWriter<std::fs::File>> = opts.log_file.as_ref().map(|p| {
        std::io::BufWriter::new(std::fs::File::create(p).expect("cannot create solver log"))
    });

    let mut w = Workspace {
        n,
        m,
        ns,
        xx: vec![0.0; nt],
        lx: vec![0.0; nt],
        ux: vec![0.0; nt],
        cons: vec![0.0; m],
        jac: vec![0.0; nlp.pattern.nnz()],
        grad_f: vec![0.0; n],
        r: vec![0.0; m],
        y_shift: vec![0.0; m],
        grad_phi: vec![0.0; nt],
        col_norms: vec![0.0; n],
        free: vec![true; nt],
    };

    for i in 0..n {
        w.xx[i] = x0[i].clamp(nlp.x_lower[i], nlp.x_upper[i]);
        w.lx[i] = nlp.x_lower[i];
        w.ux[i] = nlp.x_upper[i];
    }
    nlp.eval.constraints(&w.xx[..n], &mut w.cons);
    for (j, &row) in slacks.rows.iter().enumerate() {
        w.lx[n + j] = nlp.c_lower[row];
        w.ux[n + j] = nlp.c_upper[row];
        w.xx[n + j] = w.cons[row].clamp(nlp.c_lower[row], nlp.c_upper[row]);
    }

    let mut lambda = opts
        .warm_multipliers
        .clone()
        .filter(|l| l.len() == m)
        .unwrap_or_else(|| vec![0.0; m]);
    let mut mu = opts.warm_mu.unwrap_or(opts.mu_init).max(1e-2);
    let mut omega = (1.0 / mu).max(opts.kkt_tol);
    let mut eta = 1.0 / mu.powf(0.1);

    let mut total_iters = 0usize;
    let mut outer = 0usize;
    let mut status;
    let mut best_feas = f64::INFINITY;
    let mut stalled_rounds = 0usize;
    let mut bfgs = BfgsPairs::new(opts.lbfgs_mem);

    'outer: loop {
        outer += 1;
        let inner = inner_solve(
            nlp,
            &slacks,
            &structure,
            &mut w,
            &mut bfgs,
            &lambda,
            mu,
            omega,
            opts,
            &mut total_iters,
            &mut log,
            outer,
        );

        match inner {
            InnerOutcome::NumericalFailure => {
                status = SolveStatus::NumericalFailure;
                break 'outer;
            }
            InnerOutcome::Done { pg_norm, converged } => {
                let feas = inf_norm(&w.r);
                let lambda_hat: Vec<f64> = (0..m).map(|i| lambda[i] - mu * w.r[i]).collect();

                if feas <= eta.max(opts.constraint_tol) {
                    if converged && feas <= opts.constraint_tol && pg_norm <= opts.kkt_tol {
                        lambda = lambda_hat;
                        status = SolveStatus::Optimal;
                        break 'outer;
                    }
                    lambda = lambda_hat;
                    eta = (eta / mu.powf(0.9)).max(0.1 * opts.constraint_tol);
                    omega = (omega / mu).max(0.2 * opts.kkt_tol);
                } else if converged {
                    // subproblem solved but still infeasible: raise penalty
                    if mu >= opts.mu_max {
                        if feas > 0.9 * best_feas {
                            stalled_rounds += 1;
                        } else {
                            stalled_rounds = 0;
                        }
                        if stalled_rounds >= 3 {
                            status = SolveStatus::Infeasible;
                            break 'outer;
                        }
                    }
                    mu = (mu * opts.mu_factor).min(opts.mu_max);
                    eta = 1.0 / mu.powf(0.1);
                    omega = (1.0 / mu).max(0.2 * opts.kkt_tol);
                    bfgs.clear();
                }
                // on an unconverged inner exit keep mu, continue refining
                best_feas = best_feas.min(feas);
            }
        }
        if total_iters >= opts.max_iter {
            status = SolveStatus::MaxIter;
            break;
        }
    }

    nlp.eval.constraints(&w.xx[..n], &mut w.cons);
    residual_r(nlp, &slacks, &w.cons, &w.xx, &mut w.r);
    let lambda_final: Vec<f64> = if status == SolveStatus::Optimal {
        lambda.clone()
    } else {
        (0..m).map(|i| lambda[i] - mu * w.r[i]).collect()
    };
    let kkt = super::check::kkt_residuals(nlp, &w.xx[..n], &lambda_final);
    let objective = nlp.eval.objective(&w.xx[..n]);
    if status == SolveStatus::Optimal
        && !(kkt.feasibility <= 10.0 * opts.constraint_tol
            && kkt.stationarity <= 10.0 * opts.kkt_tol)
    {
        // never report optimal when the independent check disagrees
        status = SolveStatus::MaxIter;
    }

    if let Some(log) = log.as_mut() {
        let _ = writeln!(
            log,
            "status {:?} outer {} inner {} objective {:.9e} stat {:.3e} feas {:.3e}",
            status, outer, total_iters, objective, kkt.stationarity, kkt.feasibility
        );
    }

    (
        w.xx[..n].to_vec(),
        SolveReport {
            status,
            iterations: total_iters,
            outer_iterations: outer,
            objective,
            kkt_stationarity: kkt.stationarity,
            kkt_feasibility: kkt.feasibility,
            kkt_complementarity: kkt.complementarity,
            multipliers: lambda_final,
            final_mu: mu,
        },
    )
}

enum InnerOutcome {
    Done { pg_norm: f64, converged: bool },
    NumericalFailure,
}

#[allow(clippy::too_many_arguments)]
fn inner_solve(
    nlp: &SparseNlp,
    slacks: &Slacks,
    st: &Structure,
    w: &mut Workspace,
    bfgs: &mut BfgsPairs,
    lambda: &[f64],
    mu: f64,
    omega: f64,
    opts: &SolveOptions,
    total_iters: &mut usize,
    log: &mut Option<std::io::BufWriter<std::fs::File>>,
    outer: usize,
) -> InnerOutcome {
    let n = w.n;
    let m = w.m;
    let nt = n + w.ns;

    let phi_of = |xx: &[f64], cons: &mut [f64], r: &mut [f64]| -> f64 {
        let f = nlp.eval.objective(&xx[..n]);
        nlp.eval.constraints(&xx[..n], cons);
        residual_r(nlp, slacks, cons, xx, r);
        let mut phi = f;
        for i in 0..m {
            phi += -lambda[i] * r[i] + 0.5 * mu * r[i] * r[i];
        }
        phi
    };

    let mut phi = phi_of(&w.xx.clone(), &mut w.cons, &mut w.r);
    if !phi.is_finite() {
        return InnerOutcome::NumericalFailure;
    }

    let mut damping = 1e-4;
    let mut pg_norm = f64::INFINITY;
    let mut prev_x: Option<Vec<f64>> = None;
    let mut prev_grad: Option<Vec<f64>> = None;
    let mut obj_diag = vec![0.0; n];
    let mut hess_entries: Vec<(u32, u32, f64)> = Vec::new();

    for inner_it in 0..opts.inner_max_iter {
        if *total_iters >= opts.max_iter {
            break;
        }
        *total_iters += 1;

        nlp.eval.gradient(&w.xx[..n], &mut w.grad_f);
        nlp.eval.jacobian(&w.xx[..n], &mut w.jac);
        nlp.eval.objective_hess_diag(&w.xx[..n], &mut obj_diag);
        for i in 0..m {
            w.y_shift[i] = mu * w.r[i] - lambda[i];
        }
        hess_entries.clear();
        let has_hess = nlp
            .eval
            .hessian(&w.xx[..n], &w.y_shift, &mut |a, b, v| {
                hess_entries.push((a, b, v))
            });
        nlp.pattern
            .mul_transpose_vec(&w.jac, &w.y_shift, &mut w.grad_phi[..n]);
        for i in 0..n {
            w.grad_phi[i] += w.grad_f[i];
        }
        for (j, &row) in slacks.rows.iter().enumerate() {
            w.grad_phi[n + j] = -w.y_shift[row];
        }

        // structured quasi-Newton pair: observed curvature minus the parts
        // already modelled (Gauss-Newton and objective diagonal); redundant
        // when the exact Hessian is available
        if has_hess {
            prev_x = None;
            prev_grad = None;
        }
        if let (Some(px), Some(pg)) = (prev_x.take(), prev_grad.take()) {
            let s_step: Vec<f64> = (0..nt).map(|i| w.xx[i] - px[i]).collect();
            if inf_norm(&s_step) > 1e-14 {
                let mut y_corr: Vec<f64> = (0..nt).map(|i| w.grad_phi[i] - pg[i]).collect();
                let mut t = vec![0.0; m];
                nlp.pattern.mul_vec(&w.jac, &s_step[..n], &mut t);
                for (j, &row) in slacks.rows.iter().enumerate() {
                    t[row] -= s_step[n + j];
                }
                let mut y_gn = vec![0.0; n];
                nlp.pattern.mul_transpose_vec(&w.jac, &t, &mut y_gn);
                for i in 0..n {
                    y_corr[i] -= mu * y_gn[i] + obj_diag[i] * s_step[i];
                }
                for (j, &row) in slacks.rows.iter().enumerate() {
                    y_corr[n + j] += mu * t[row];
                }
                bfgs.update(s_step, y_corr);
            }
        }

        pg_norm = 0.0;
        for i in 0..nt {
            let step = (w.xx[i] - w.grad_phi[i]).clamp(w.lx[i], w.ux[i]) - w.xx[i];
            pg_norm = pg_norm.max(step.abs());
        }
        if let Some(log) = log.as_mut() {
            let _ = writeln!(
                log,
                "outer {outer} inner {inner_it} iter {} phi {:.9e} pg {:.3e} feas {:.3e} mu {:.1e} damp {damping:.1e}",
                *total_iters,
                phi,
                pg_norm,
                inf_norm(&w.r),
                mu
            );
        }
        if pg_norm <= omega {
            return InnerOutcome::Done {
                pg_norm,
                converged: true,
            };
        }

        // free set by epsilon-active bounds (loose enough to stop
        // active-set thrashing near weakly-binding bounds)
        let eps_act = 1e-3_f64.min(0.3 * pg_norm);
        for i in 0..nt {
            let at_lower = w.xx[i] <= w.lx[i] + eps_act && w.grad_phi[i] > 0.0;
            let at_upper = w.xx[i] >= w.ux[i] - eps_act && w.grad_phi[i] < 0.0;
            w.free[i] = !(at_lower || at_upper) && w.ux[i] > w.lx[i];
        }

        // diagonal: objective curvature plus Marquardt-scaled damping
        // (proportional to each column's own curvature so soft directions
        // stay soft), and a large penalty freezing the active set
        nlp.pattern.col_norms_sq(&w.jac, &mut w.col_norms);
        let mut diag = vec![0.0; nt];
        for i in 0..nt {
            let curv = if i < n {
                obj_diag[i].max(0.0) + mu * w.col_norms[i]
            } else {
                mu
            };
            // when the exact Hessian is supplied it already carries the
            // objective curvature
            let obj_part = if i < n && !has_hess {
                obj_diag[i].max(0.0)
            } else {
                0.0
            };
            diag[i] = obj_part + (damping * curv).max(1e-12);
            if !w.free[i] {
                diag[i] = 1e10 * (1.0 + curv);
            }
        }

        // direct Newton/Gauss-Newton step with damping retries
        let mut d = vec![0.0; nt];
        let mut factor_ok = false;
        for _try in 0..6 {
            if let Some(factor) = GnFactor::build(nlp, slacks, st, &w.jac, mu, &diag, &hess_entries) {
                for i in 0..nt {
                    d[i] = if w.free[i] { -w.grad_phi[i] } else { 0.0 };
                }
                solve_with_bfgs(&factor, st, bfgs, &mut d);
                for i in 0..nt {
                    if !w.free[i] {
                        d[i] = 0.0;
                    }
                }
                factor_ok = d.iter().all(|v| v.is_finite());
                // descent safeguard: the BFGS correction may spoil the
                // direction; fall back to the pure Gauss-Newton solve
                if factor_ok && dot(&d, &w.grad_phi) >= 0.0 {
                    for i in 0..nt {
                        d[i] = if w.free[i] { -w.grad_phi[i] } else { 0.0 };
                    }
                    factor.solve(st, &mut d);
                    for i in 0..nt {
                        if !w.free[i] {
                            d[i] = 0.0;
                        }
                    }
                    factor_ok = d.iter().all(|v| v.is_finite());
                }
                if factor_ok {
                    break;
                }
            }
            damping = (damping * 100.0).min(1e10);
            for i in 0..nt {
                if w.free[i] {
                    let curv = if i < n {
                        obj_diag[i].max(0.0) + mu * w.col_norms[i]
                    } else {
                        mu
                    };
                    let obj_part = if i < n { obj_diag[i].max(0.0) } else { 0.0 };
                    diag[i] = obj_part + (damping * curv).max(1e-12);
                }
            }
        }
        if !factor_ok {
            return InnerOutcome::NumericalFailure;
        }

        // projected Armijo search
        let x_old = w.xx.clone();
        let grad_old = w.grad_phi.clone();
        let mut alpha = 1.0;
        let mut accepted = false;
        let mut cons_trial = vec![0.0; m];
        let mut r_trial = vec![0.0; m];
        for _ls in 0..40 {
            let mut trial = vec![0.0; nt];
            let mut dir_deriv = 0.0;
            for i in 0..nt {
                trial[i] = (x_old[i] + alpha * d[i]).clamp(w.lx[i], w.ux[i]);
                dir_deriv += grad_old[i] * (trial[i] - x_old[i]);
            }
            let phi_trial = phi_of(&trial, &mut cons_trial, &mut r_trial);
            if phi_trial.is_finite() && dir_deriv < 0.0 && phi_trial <= phi + 1e-4 * dir_deriv {
                w.xx = trial;
                w.cons.copy_from_slice(&cons_trial);
                w.r.copy_from_slice(&r_trial);
                phi = phi_trial;
                accepted = true;
                break;
            }
            if phi_trial.is_finite() && phi_trial < phi && alpha < 1e-8 {
                w.xx = trial;
                w.cons.copy_from_slice(&cons_trial);
                w.r.copy_from_slice(&r_trial);
                phi = phi_trial;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if accepted && alpha >= 0.99 {
            damping = (damping * 0.2).max(1e-8);
        } else if !accepted || alpha < 0.5 {
            damping = (damping * 6.0).min(1e10);
        }
        if let Some(log) = log.as_mut() {
            let _ = writeln!(
                log,
                "    step alpha {alpha:.3e} accepted {accepted} |d| {:.3e}",
                inf_norm(&d)
            );
        }
        if !accepted {
            return InnerOutcome::Done {
                pg_norm,
                converged: false,
            };
        }
        prev_x = Some(x_old);
        prev_grad = Some(grad_old);
    }

    InnerOutcome::Done {
        pg_norm,
        converged: false,
    }
}
