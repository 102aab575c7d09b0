//! Solver-facing program description.
//!
//! Variables are flattened into one real parameter vector. Hermitian
//! variables of dimension `n` use `n²` parameters: the `n` diagonal entries
//! first, then `(Re, Im)` of every upper-triangle entry in row-major order.
//! Complex vectors use interleaved `(Re, Im)` pairs.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::ConicError;

/// Handle to a declared variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VarKind {
    /// Hermitian matrix constrained to the PSD cone.
    PsdMatrix { dim: usize },
    /// Hermitian matrix with no cone attached.
    HermitianMatrix { dim: usize },
    RealVector { dim: usize },
    ComplexVector { dim: usize },
    Scalar,
}

impl VarKind {
    pub fn param_count(&self) -> usize {
        match *self {
            VarKind::PsdMatrix { dim } | VarKind::HermitianMatrix { dim } => dim * dim,
            VarKind::RealVector { dim } => dim,
            VarKind::ComplexVector { dim } => 2 * dim,
            VarKind::Scalar => 1,
        }
    }

    pub fn matrix_dim(&self) -> Option<usize> {
        match *self {
            VarKind::PsdMatrix { dim } | VarKind::HermitianMatrix { dim } => Some(dim),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub offset: usize,
}

/// Real affine functional `Σ coef·x[param] + constant`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        LinExpr { terms: Vec::new(), constant: c }
    }

    pub fn term(param: usize, coef: f64) -> Self {
        LinExpr { terms: vec![(param, coef)], constant: 0.0 }
    }

    pub fn add(mut self, other: &LinExpr) -> Self {
        self.terms.extend_from_slice(&other.terms);
        self.constant += other.constant;
        self
    }

    pub fn sub(self, other: &LinExpr) -> Self {
        self.add(&other.scaled(-1.0))
    }

    pub fn scaled(&self, s: f64) -> Self {
        LinExpr {
            terms: self.terms.iter().map(|&(p, c)| (p, c * s)).collect(),
            constant: self.constant * s,
        }
    }

    pub fn plus_const(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    /// Merges duplicate parameters and drops zero coefficients.
    pub fn compact(mut self) -> Self {
        self.terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for (p, c) in self.terms {
            match out.last_mut() {
                Some(last) if last.0 == p => last.1 += c,
                _ => out.push((p, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        self.terms = out;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(p, c)| c * x[p]).sum::<f64>()
    }

    /// Euclidean norm of the coefficient vector including the constant.
    pub fn data_norm(&self) -> f64 {
        let c = self.clone().compact();
        (c.terms.iter().map(|t| t.1 * t.1).sum::<f64>() + c.constant * c.constant).sqrt()
    }
}

/// A Hermitian variable placed on the diagonal of a larger Hermitian
/// expression at `offset`, multiplied by a real `scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub var: VarId,
    pub offset: usize,
    pub scale: f64,
}

/// Affine Hermitian matrix expression `K + Σ scale·embed(X_var)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HermitianExpr {
    pub dim: usize,
    /// Constant part, dense row-major.
    pub constant: Vec<C64>,
    pub placements: Vec<Placement>,
}

impl HermitianExpr {
    pub fn zeros(dim: usize) -> Self {
        HermitianExpr { dim, constant: vec![C64::new(0.0, 0.0); dim * dim], placements: Vec::new() }
    }

    pub fn var(mut self, var: VarId, offset: usize, scale: f64) -> Self {
        self.placements.push(Placement { var, offset, scale });
        self
    }

    /// Adds `m` to the constant part with its top-left corner at `(r0, c0)`.
    pub fn constant_block(mut self, r0: usize, c0: usize, m: &DMatrix<C64>) -> Self {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.constant[(r0 + i) * self.dim + c0 + j] += m[(i, j)];
            }
        }
        self
    }

    pub fn constant_matrix(&self) -> DMatrix<C64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.constant)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Constraint {
    /// `expr = 0`
    LinearEq { label: String, expr: LinExpr },
    /// `expr ≥ 0`
    LinearGe { label: String, expr: LinExpr },
    /// `expr ⪰ 0`
    Psd { label: String, expr: HermitianExpr },
    /// `‖tail‖₂ ≤ head`
    Soc { label: String, head: LinExpr, tail: Vec<LinExpr> },
}

impl Constraint {
    pub fn label(&self) -> &str {
        match self {
            Constraint::LinearEq { label, .. }
            | Constraint::LinearGe { label, .. }
            | Constraint::Psd { label, .. }
            | Constraint::Soc { label, .. } => label,
        }
    }
}

/// A conic program: maximize a linear objective over the declared variables.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    /// Maximized.
    pub objective: LinExpr,
    pub param_count: usize,
}

/// Index of the diagonal parameter `i` of a Hermitian variable (relative).
pub fn herm_diag_index(i: usize) -> usize {
    i
}

/// Relative indices `(re, im)` of entry `(i, j)`, `i < j`.
pub fn herm_pair_index(n: usize, i: usize, j: usize) -> (usize, usize) {
    debug_assert!(i < j && j < n);
    // pairs before row i: Σ_{r<i} (n-1-r)
    let before = i * (2 * n - i - 1) / 2;
    let p = before + (j - i - 1);
    (n + 2 * p, n + 2 * p + 1)
}

/// Complex entries of the unit matrix attached to relative parameter `k`
/// of an `n×n` Hermitian variable.
pub(crate) fn herm_param_entries(n: usize, k: usize) -> Vec<(usize, usize, C64)> {
    if k < n {
        return vec![(k, k, C64::new(1.0, 0.0))];
    }
    let p = (k - n) / 2;
    let imag = (k - n) % 2 == 1;
    // invert the row-major pair enumeration
    let mut i = 0;
    let mut rem = p;
    while rem >= n - 1 - i {
        rem -= n - 1 - i;
        i += 1;
    }
    let j = i + 1 + rem;
    if imag {
        vec![(i, j, C64::new(0.0, 1.0)), (j, i, C64::new(0.0, -1.0))]
    } else {
        vec![(i, j, C64::new(1.0, 0.0)), (j, i, C64::new(1.0, 0.0))]
    }
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    fn declare(&mut self, name: &str, kind: VarKind) -> VarId {
        let offset = self.param_count;
        self.param_count += kind.param_count();
        self.variables.push(Variable { name: name.to_string(), kind, offset });
        VarId(self.variables.len() - 1)
    }

    pub fn add_psd(&mut self, name: &str, dim: usize) -> VarId {
        self.declare(name, VarKind::PsdMatrix { dim })
    }

    pub fn add_hermitian(&mut self, name: &str, dim: usize) -> VarId {
        self.declare(name, VarKind::HermitianMatrix { dim })
    }

    pub fn add_real_vector(&mut self, name: &str, dim: usize) -> VarId {
        self.declare(name, VarKind::RealVector { dim })
    }

    pub fn add_complex_vector(&mut self, name: &str, dim: usize) -> VarId {
        self.declare(name, VarKind::ComplexVector { dim })
    }

    pub fn add_scalar(&mut self, name: &str) -> VarId {
        self.declare(name, VarKind::Scalar)
    }

    pub fn var(&self, id: VarId) -> &Variable {
        &self.variables[id.0]
    }

    /// The scalar variable as an expression.
    pub fn scalar(&self, id: VarId) -> LinExpr {
        let v = self.var(id);
        assert!(matches!(v.kind, VarKind::Scalar), "{} is not a scalar", v.name);
        LinExpr::term(v.offset, 1.0)
    }

    /// Entry `k` of a real vector variable.
    pub fn real_entry(&self, id: VarId, k: usize) -> LinExpr {
        let v = self.var(id);
        match v.kind {
            VarKind::RealVector { dim } => {
                assert!(k < dim);
                LinExpr::term(v.offset + k, 1.0)
            }
            _ => panic!("{} is not a real vector", v.name),
        }
    }

    /// `(Re w_k, Im w_k)` of a complex vector variable.
    pub fn complex_entry(&self, id: VarId, k: usize) -> (LinExpr, LinExpr) {
        let v = self.var(id);
        match v.kind {
            VarKind::ComplexVector { dim } => {
                assert!(k < dim);
                (LinExpr::term(v.offset + 2 * k, 1.0), LinExpr::term(v.offset + 2 * k + 1, 1.0))
            }
            _ => panic!("{} is not a complex vector", v.name),
        }
    }

    /// Real and imaginary parts of `Σ_k h_k·w_{start+k}`.
    pub fn complex_dot(&self, id: VarId, start: usize, h: &[C64]) -> (LinExpr, LinExpr) {
        let v = self.var(id);
        let dim = match v.kind {
            VarKind::ComplexVector { dim } => dim,
            _ => panic!("{} is not a complex vector", v.name),
        };
        assert!(start + h.len() <= dim);
        let mut re = LinExpr::default();
        let mut im = LinExpr::default();
        for (k, hk) in h.iter().enumerate() {
            let pr = v.offset + 2 * (start + k);
            let pi = pr + 1;
            re.terms.push((pr, hk.re));
            re.terms.push((pi, -hk.im));
            im.terms.push((pr, hk.im));
            im.terms.push((pi, hk.re));
        }
        (re.compact(), im.compact())
    }

    /// `Re Tr(C·X)` for a Hermitian variable `X`.
    pub fn re_trace(&self, id: VarId, c: &DMatrix<C64>) -> LinExpr {
        let v = self.var(id);
        let n = v.kind.matrix_dim().unwrap_or_else(|| panic!("{} is not a matrix", v.name));
        assert!(c.nrows() == n && c.ncols() == n);
        let mut e = LinExpr::default();
        for i in 0..n {
            e.terms.push((v.offset + i, c[(i, i)].re));
            for j in i + 1..n {
                let (pr, pi) = herm_pair_index(n, i, j);
                e.terms.push((v.offset + pr, c[(i, j)].re + c[(j, i)].re));
                e.terms.push((v.offset + pi, c[(i, j)].im - c[(j, i)].im));
            }
        }
        e.compact()
    }

    /// `Tr(X)` for a Hermitian variable.
    pub fn trace(&self, id: VarId) -> LinExpr {
        let v = self.var(id);
        let n = v.kind.matrix_dim().unwrap_or_else(|| panic!("{} is not a matrix", v.name));
        LinExpr { terms: (0..n).map(|i| (v.offset + i, 1.0)).collect(), constant: 0.0 }
    }

    pub fn add_eq(&mut self, label: &str, expr: LinExpr) {
        self.constraints.push(Constraint::LinearEq { label: label.into(), expr: expr.compact() });
    }

    pub fn add_ge(&mut self, label: &str, expr: LinExpr) {
        self.constraints.push(Constraint::LinearGe { label: label.into(), expr: expr.compact() });
    }

    pub fn add_psd_constraint(&mut self, label: &str, expr: HermitianExpr) {
        self.constraints.push(Constraint::Psd { label: label.into(), expr });
    }

    pub fn add_soc(&mut self, label: &str, head: LinExpr, tail: Vec<LinExpr>) {
        self.constraints.push(Constraint::Soc {
            label: label.into(),
            head: head.compact(),
            tail: tail.into_iter().map(LinExpr::compact).collect(),
        });
    }

    pub fn maximize(&mut self, expr: LinExpr) {
        self.objective = expr.compact();
    }

    pub fn minimize(&mut self, expr: LinExpr) {
        self.objective = expr.scaled(-1.0).compact();
    }

    /// Builds the Hermitian matrix value of variable `id` from parameters.
    pub fn hermitian_value(&self, id: VarId, x: &[f64]) -> DMatrix<C64> {
        let v = self.var(id);
        let n = v.kind.matrix_dim().unwrap_or_else(|| panic!("{} is not a matrix", v.name));
        let mut m = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
        for i in 0..n {
            m[(i, i)] = C64::new(x[v.offset + i], 0.0);
            for j in i + 1..n {
                let (pr, pi) = herm_pair_index(n, i, j);
                let z = C64::new(x[v.offset + pr], x[v.offset + pi]);
                m[(i, j)] = z;
                m[(j, i)] = z.conj();
            }
        }
        m
    }

    pub fn complex_value(&self, id: VarId, x: &[f64]) -> Vec<C64> {
        let v = self.var(id);
        match v.kind {
            VarKind::ComplexVector { dim } => {
                (0..dim).map(|k| C64::new(x[v.offset + 2 * k], x[v.offset + 2 * k + 1])).collect()
            }
            _ => panic!("{} is not a complex vector", v.name),
        }
    }

    /// Evaluates a Hermitian expression at parameter vector `x`.
    pub fn eval_hermitian(&self, e: &HermitianExpr, x: &[f64]) -> DMatrix<C64> {
        let mut m = e.constant_matrix();
        for pl in &e.placements {
            let xv = self.hermitian_value(pl.var, x);
            let n = xv.nrows();
            for i in 0..n {
                for j in 0..n {
                    m[(pl.offset + i, pl.offset + j)] += xv[(i, j)] * pl.scale;
                }
            }
        }
        m
    }

    /// Structural checks: indices in range, finite data, Hermitian constants.
    pub fn validate(&self) -> Result<(), ConicError> {
        let bad = |m: String| Err(ConicError::Malformed(m));
        let mut expect = 0;
        for v in &self.variables {
            if v.offset != expect {
                return bad(format!("variable {} has offset {} (expected {})", v.name, v.offset, expect));
            }
            let dim = match v.kind {
                VarKind::PsdMatrix { dim }
                | VarKind::HermitianMatrix { dim }
                | VarKind::RealVector { dim }
                | VarKind::ComplexVector { dim } => dim,
                VarKind::Scalar => 1,
            };
            if dim == 0 || dim > 4096 {
                return bad(format!("variable {} has invalid dimension {}", v.name, dim));
            }
            expect += v.kind.param_count();
        }
        if expect != self.param_count {
            return bad(format!("param_count {} does not match variables ({})", self.param_count, expect));
        }
        let check_lin = |e: &LinExpr, what: &str| -> Result<(), ConicError> {
            if !e.constant.is_finite() {
                return bad(format!("{what}: non-finite constant"));
            }
            for &(p, c) in &e.terms {
                if p >= self.param_count {
                    return bad(format!("{what}: parameter {p} out of range"));
                }
                if !c.is_finite() {
                    return bad(format!("{what}: non-finite coefficient"));
                }
            }
            Ok(())
        };
        check_lin(&self.objective, "objective")?;
        for c in &self.constraints {
            match c {
                Constraint::LinearEq { label, expr } | Constraint::LinearGe { label, expr } => {
                    check_lin(expr, label)?
                }
                Constraint::Soc { label, head, tail } => {
                    check_lin(head, label)?;
                    for t in tail {
                        check_lin(t, label)?;
                    }
                }
                Constraint::Psd { label, expr } => {
                    let d = expr.dim;
                    if d == 0 || d > 4096 || expr.constant.len() != d * d {
                        return bad(format!("{label}: constant has wrong size"));
                    }
                    let scale = expr.constant.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
                    for i in 0..d {
                        for j in 0..d {
                            let a = expr.constant[i * d + j];
                            let b = expr.constant[j * d + i];
                            if !(a.re.is_finite() && a.im.is_finite()) {
                                return bad(format!("{label}: non-finite constant entry"));
                            }
                            if (a - b.conj()).norm() > 1e-12 * scale {
                                return bad(format!("{label}: constant is not Hermitian"));
                            }
                        }
                    }
                    for pl in &expr.placements {
                        let Some(v) = self.variables.get(pl.var.0) else {
                            return bad(format!("{label}: unknown variable {}", pl.var.0));
                        };
                        let Some(n) = v.kind.matrix_dim() else {
                            return bad(format!("{label}: {} is not a matrix variable", v.name));
                        };
                        if pl.offset + n > d || !pl.scale.is_finite() {
                            return bad(format!("{label}: placement of {} out of range", v.name));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Debug dump as a JSON document.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("program serializes")
    }

    /// Parses and validates a JSON dump.
    pub fn from_json(s: &str) -> Result<Self, ConicError> {
        let p: ConicProgram = serde_json::from_str(s).map_err(|e| ConicError::Malformed(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }
}
