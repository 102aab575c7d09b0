//! Lowering of a [`ConicProgram`] to the real standard form
//!
//! ```text
//! minimize cᵀx  s.t.  Gx + s = h,  Ax = b,  s ∈ K
//! ```
//!
//! with `K` ordered as one nonnegative block, then SOC blocks, then PSD
//! blocks. Every cone block (each nonnegative row on its own) and every
//! equality row is scaled to unit Frobenius norm.

use nalgebra::{DMatrix, DVector};

use crate::cones::{Block, ConeKind};
use crate::program::{herm_param_entries, ConicProgram, Constraint, HermitianExpr, LinExpr, VarId, VarKind};

pub(crate) struct StandardForm {
    pub n: usize,
    pub c: DVector<f64>,
    pub h: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub blocks: Vec<Block>,
    /// Sparse columns of `G`, row indices global.
    pub g_cols: Vec<Vec<(usize, f64)>>,
    /// Nonnegative rows of `G`: `(column, value)` per row.
    pub g_rows_nonneg: Vec<Vec<(usize, f64)>>,
    /// For every non-nonnegative block: columns touching it with local entries.
    pub block_cols: Vec<Vec<(usize, Vec<(usize, f64)>)>>,
}

impl StandardForm {
    pub fn m(&self) -> usize {
        self.h.len()
    }
    pub fn p(&self) -> usize {
        self.b.len()
    }
    pub fn degree(&self) -> usize {
        self.blocks.iter().map(Block::degree).sum()
    }

    /// `out = G x`
    pub fn g_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.m());
        for (j, col) in self.g_cols.iter().enumerate() {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for &(r, v) in col {
                out[r] += v * xj;
            }
        }
        out
    }

    /// `out = Gᵀ z`
    pub fn gt_mul(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.n,
            self.g_cols.iter().map(|col| col.iter().map(|&(r, v)| v * z[r]).sum::<f64>()),
        )
    }
}

/// Accumulates sparse entries for one row block.
struct RowBlock {
    rows: Vec<Vec<(usize, f64)>>,
    h: Vec<f64>,
}

impl RowBlock {
    fn with_len(len: usize) -> Self {
        RowBlock { rows: vec![Vec::new(); len], h: vec![0.0; len] }
    }

    /// Row `r` represents `s_r = expr(x)`, i.e. `G = −coef`, `h = const`.
    fn set_lin(&mut self, r: usize, e: &LinExpr) {
        for &(p, c) in &e.terms {
            self.rows[r].push((p, -c));
        }
        self.h[r] = e.constant;
    }

    fn norm(&self) -> f64 {
        let g: f64 = self.rows.iter().flatten().map(|t| t.1 * t.1).sum();
        let h: f64 = self.h.iter().map(|v| v * v).sum();
        (g + h).sqrt()
    }

    fn scale(&mut self, s: f64) {
        self.rows.iter_mut().flatten().for_each(|t| t.1 *= s);
        self.h.iter_mut().for_each(|v| *v *= s);
    }
}

fn psd_rows(prog: &ConicProgram, dim: usize, expr: &HermitianExpr) -> RowBlock {
    let d2 = 2 * dim;
    let mut rb = RowBlock::with_len(d2 * d2);
    let idx = |i: usize, j: usize| i + j * d2;
    // realified constant
    for i in 0..dim {
        for j in 0..dim {
            let z = expr.constant[i * dim + j];
            rb.h[idx(i, j)] += z.re;
            rb.h[idx(i + dim, j + dim)] += z.re;
            rb.h[idx(i, j + dim)] -= z.im;
            rb.h[idx(i + dim, j)] += z.im;
        }
    }
    for pl in &expr.placements {
        let v = prog.var(pl.var);
        let n = v.kind.matrix_dim().expect("validated");
        for k in 0..n * n {
            let col = v.offset + k;
            for (i, j, z) in herm_param_entries(n, k) {
                let (i, j) = (i + pl.offset, j + pl.offset);
                let val = -pl.scale;
                rb.rows[idx(i, j)].push((col, val * z.re));
                rb.rows[idx(i + dim, j + dim)].push((col, val * z.re));
                rb.rows[idx(i, j + dim)].push((col, -val * z.im));
                rb.rows[idx(i + dim, j)].push((col, val * z.im));
            }
        }
    }
    for r in rb.rows.iter_mut() {
        r.retain(|t| t.1 != 0.0);
    }
    rb
}

pub(crate) fn lower(prog: &ConicProgram) -> StandardForm {
    let n = prog.param_count;
    let mut nonneg: Vec<RowBlock> = Vec::new();
    let mut socs: Vec<RowBlock> = Vec::new();
    let mut psds: Vec<(usize, RowBlock)> = Vec::new();
    let mut eqs: Vec<LinExpr> = Vec::new();

    for (id, v) in prog.variables.iter().enumerate() {
        if let VarKind::PsdMatrix { dim } = v.kind {
            let e = HermitianExpr::zeros(dim).var(VarId(id), 0, 1.0);
            psds.push((2 * dim, psd_rows(prog, dim, &e)));
        }
    }
    for c in &prog.constraints {
        match c {
            Constraint::LinearEq { expr, .. } => eqs.push(expr.clone()),
            Constraint::LinearGe { expr, .. } => {
                let mut rb = RowBlock::with_len(1);
                rb.set_lin(0, expr);
                nonneg.push(rb);
            }
            Constraint::Soc { head, tail, .. } => {
                let mut rb = RowBlock::with_len(1 + tail.len());
                rb.set_lin(0, head);
                for (k, t) in tail.iter().enumerate() {
                    rb.set_lin(k + 1, t);
                }
                socs.push(rb);
            }
            Constraint::Psd { expr, .. } => psds.push((2 * expr.dim, psd_rows(prog, expr.dim, expr))),
        }
    }

    let equilibrate = |rb: &mut RowBlock| {
        let s = rb.norm();
        if s > 0.0 && s.is_finite() {
            rb.scale(1.0 / s);
        }
    };
    nonneg.iter_mut().for_each(equilibrate);
    socs.iter_mut().for_each(equilibrate);
    psds.iter_mut().for_each(|(_, rb)| equilibrate(rb));

    let mut blocks = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut h: Vec<f64> = Vec::new();
    let mut g_rows_nonneg = Vec::new();
    if !nonneg.is_empty() {
        blocks.push(Block::nonneg(0, nonneg.len()));
        for rb in nonneg {
            g_rows_nonneg.push(rb.rows[0].clone());
            rows.extend(rb.rows);
            h.extend(rb.h);
        }
    }
    for rb in socs {
        blocks.push(Block::soc(rows.len(), rb.rows.len()));
        rows.extend(rb.rows);
        h.extend(rb.h);
    }
    for (order, rb) in psds {
        blocks.push(Block::psd(rows.len(), order));
        rows.extend(rb.rows);
        h.extend(rb.h);
    }

    let m = rows.len();
    let mut g_cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (r, row) in rows.iter().enumerate() {
        for &(col, v) in row {
            g_cols[col].push((r, v));
        }
    }
    for col in g_cols.iter_mut() {
        col.sort_by_key(|t| t.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(col.len());
        for &(r, v) in col.iter() {
            match merged.last_mut() {
                Some(last) if last.0 == r => last.1 += v,
                _ => merged.push((r, v)),
            }
        }
        merged.retain(|t| t.1 != 0.0);
        *col = merged;
    }
    for row in g_rows_nonneg.iter_mut() {
        let e = LinExpr { terms: row.clone(), constant: 0.0 }.compact();
        *row = e.terms;
    }

    let mut block_cols = Vec::with_capacity(blocks.len());
    for b in &blocks {
        if b.kind == ConeKind::NonNeg {
            block_cols.push(Vec::new());
            continue;
        }
        let mut touching = Vec::new();
        for (j, col) in g_cols.iter().enumerate() {
            let ents: Vec<(usize, f64)> = col
                .iter()
                .filter(|t| t.0 >= b.offset && t.0 < b.offset + b.len)
                .map(|&(r, v)| (r - b.offset, v))
                .collect();
            if !ents.is_empty() {
                touching.push((j, ents));
            }
        }
        block_cols.push(touching);
    }

    let p = eqs.len();
    let mut a = DMatrix::zeros(p, n);
    let mut bvec = DVector::zeros(p);
    for (i, e) in eqs.iter().enumerate() {
        let e = e.clone().compact();
        let s = e.data_norm();
        let s = if s > 0.0 { 1.0 / s } else { 1.0 };
        for &(col, v) in &e.terms {
            a[(i, col)] += v * s;
        }
        bvec[i] = -e.constant * s;
    }

    let mut c = DVector::zeros(n);
    for &(col, v) in &prog.objective.terms {
        c[col] -= v;
    }
    let cn = c.norm();
    if cn > 0.0 {
        c /= cn;
    }

    StandardForm {
        n,
        c,
        h: DVector::from_vec(h),
        a,
        b: bvec,
        blocks,
        g_cols,
        g_rows_nonneg,
        block_cols,
    }
    .check_dims(m)
}

impl StandardForm {
    /// Rescales every column of `G`/`A` to unit norm; returns the factors
    /// `D` such that the original solution is `x = D x'`.
    pub fn scale_columns(&mut self) -> Vec<f64> {
        let mut d = vec![1.0; self.n];
        for j in 0..self.n {
            let g: f64 = self.g_cols[j].iter().map(|t| t.1 * t.1).sum();
            let a: f64 = self.a.column(j).norm_squared();
            let nrm = (g + a).sqrt();
            if nrm > 0.0 && nrm.is_finite() {
                d[j] = 1.0 / nrm;
            }
        }
        for (j, col) in self.g_cols.iter_mut().enumerate() {
            col.iter_mut().for_each(|t| t.1 *= d[j]);
        }
        for row in self.g_rows_nonneg.iter_mut() {
            row.iter_mut().for_each(|t| t.1 *= d[t.0]);
        }
        for cols in self.block_cols.iter_mut() {
            for (j, ents) in cols.iter_mut() {
                ents.iter_mut().for_each(|t| t.1 *= d[*j]);
            }
        }
        for j in 0..self.n {
            self.a.column_mut(j).scale_mut(d[j]);
            self.c[j] *= d[j];
        }
        let cn = self.c.norm();
        if cn > 0.0 {
            self.c /= cn;
        }
        d
    }

    fn check_dims(self, m: usize) -> Self {
        debug_assert_eq!(self.h.len(), m);
        debug_assert_eq!(self.blocks.iter().map(|b| b.len).sum::<usize>(), m);
        self
    }
}
