//! Dense conic solver for small SDP/SOCP instances.
//!
//! Programs are written over complex Hermitian and vector variables with
//! [`ConicProgram`], lowered to a real standard form (Hermitian PSD blocks
//! are realified), and solved by a homogeneous self-dual interior-point
//! method with Nesterov–Todd scaling.
//!
//! ```
//! use bisac_conic::{solve, ConicProgram, Status};
//! let mut p = ConicProgram::new();
//! let q = p.add_scalar("q");
//! p.add_ge("cap", p.scalar(q).scaled(-1.0).plus_const(3.0));
//! p.maximize(p.scalar(q));
//! let r = solve(&p);
//! assert_eq!(r.status, Status::Optimal);
//! assert!((r.objective - 3.0).abs() < 1e-7);
//! ```

mod cones;
mod error;
mod ipm;
mod lower;
pub mod program;
mod realify;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

pub use error::ConicError;
pub use ipm::{IterRecord, SolverOptions, Status};
pub use program::{ConicProgram, Constraint, HermitianExpr, LinExpr, Placement, VarId, VarKind, Variable};
pub use realify::{complexify_symmetric, realify_hermitian};

/// Value of one variable at the solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Value {
    /// Row-major Hermitian matrix.
    Matrix(Vec<Vec<C64>>),
    Complex(Vec<C64>),
    Real(Vec<f64>),
    Scalar(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedValue {
    pub name: String,
    #[serde(flatten)]
    pub value: Value,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: Status,
    /// Value of the maximized objective.
    pub objective: f64,
    /// Relative duality gap (scaled data).
    pub gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    /// Whether the column-equilibrated restart was used.
    pub restarted: bool,
    pub values: Vec<NamedValue>,
    /// Flat parameter vector.
    pub x: Vec<f64>,
    pub trace: Vec<IterRecord>,
}

impl SolveReport {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }

    pub fn hermitian(&self, p: &ConicProgram, id: VarId) -> DMatrix<C64> {
        p.hermitian_value(id, &self.x)
    }

    pub fn scalar(&self, p: &ConicProgram, id: VarId) -> f64 {
        self.x[p.var(id).offset]
    }

    pub fn complex_vector(&self, p: &ConicProgram, id: VarId) -> Vec<C64> {
        p.complex_value(id, &self.x)
    }

    pub fn real_vector(&self, p: &ConicProgram, id: VarId) -> Vec<f64> {
        let v = p.var(id);
        self.x[v.offset..v.offset + v.kind.param_count()].to_vec()
    }
}

/// Solves with default options.
pub fn solve(p: &ConicProgram) -> SolveReport {
    solve_with(p, &SolverOptions::default())
}

/// Solves `p`. Malformed programs yield `NumericalFailure` with an empty
/// solution; call [`ConicProgram::validate`] first for a message.
pub fn solve_with(p: &ConicProgram, opts: &SolverOptions) -> SolveReport {
    if p.validate().is_err() {
        return SolveReport {
            status: Status::NumericalFailure,
            objective: f64::NAN,
            gap: f64::NAN,
            primal_residual: f64::NAN,
            dual_residual: f64::NAN,
            iterations: 0,
            restarted: false,
            values: Vec::new(),
            x: vec![0.0; p.param_count],
            trace: Vec::new(),
        };
    }
    let sf = lower::lower(p);
    let mut raw = ipm::solve(&sf, opts);
    let mut restarted = false;
    if matches!(raw.status, Status::IterLimit | Status::NumericalFailure) {
        let mut sf2 = lower::lower(p);
        let d = sf2.scale_columns();
        let mut raw2 = ipm::solve(&sf2, opts);
        if !matches!(raw2.status, Status::IterLimit | Status::NumericalFailure) {
            for (xi, di) in raw2.x.iter_mut().zip(&d) {
                *xi *= di;
            }
            raw = raw2;
            restarted = true;
        }
    }
    if matches!(raw.status, Status::IterLimit | Status::NumericalFailure) && !opts.qr_fallback {
        let raw3 = ipm::solve(&sf, &SolverOptions { qr_fallback: true, ..opts.clone() });
        if !matches!(raw3.status, Status::IterLimit | Status::NumericalFailure) {
            raw = raw3;
            restarted = true;
        }
    }
    let x: Vec<f64> = raw.x.iter().copied().collect();
    let values = p
        .variables
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let id = VarId(k);
            let value = match v.kind {
                VarKind::PsdMatrix { .. } | VarKind::HermitianMatrix { .. } => {
                    let m = p.hermitian_value(id, &x);
                    Value::Matrix(m.row_iter().map(|r| r.iter().copied().collect()).collect())
                }
                VarKind::ComplexVector { .. } => Value::Complex(p.complex_value(id, &x)),
                VarKind::RealVector { dim } => Value::Real(x[v.offset..v.offset + dim].to_vec()),
                VarKind::Scalar => Value::Scalar(x[v.offset]),
            };
            NamedValue { name: v.name.clone(), value }
        })
        .collect();
    SolveReport {
        status: raw.status,
        objective: p.objective.eval(&x),
        gap: raw.relgap,
        primal_residual: raw.pres,
        dual_residual: raw.dres,
        iterations: raw.iterations,
        restarted,
        values,
        x,
        trace: raw.trace,
    }
}

/// Residual of one constraint at a candidate solution.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConstraintResidual {
    pub label: String,
    /// Violation in the constraint's own units (0 when satisfied).
    pub violation: f64,
    /// Violation divided by the Frobenius norm of the constraint data.
    pub normalized: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub constraints: Vec<ConstraintResidual>,
}

impl ResidualSummary {
    pub fn max_normalized(&self) -> f64 {
        self.constraints.iter().map(|c| c.normalized).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ConstraintResidual> {
        self.constraints.iter().max_by(|a, b| a.normalized.total_cmp(&b.normalized))
    }
}

fn min_hermitian_eig(m: &DMatrix<C64>) -> f64 {
    let sym = (m + m.adjoint()) * C64::new(0.5, 0.0);
    sym.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

fn herm_expr_norm(p: &ConicProgram, e: &HermitianExpr) -> f64 {
    let k: f64 = e.constant.iter().map(|z| z.norm_sqr()).sum::<f64>() * 2.0;
    let vars: f64 = e
        .placements
        .iter()
        .map(|pl| {
            let n = p.var(pl.var).kind.matrix_dim().unwrap_or(0) as f64;
            pl.scale * pl.scale * (2.0 * n + 4.0 * n * (n - 1.0))
        })
        .sum();
    (k + vars).sqrt()
}

/// Recomputes every constraint residual directly from the complex data,
/// independent of the realified standard form used by the solver.
pub fn check_solution(p: &ConicProgram, x: &[f64]) -> ResidualSummary {
    let mut out = Vec::new();
    let mut push = |label: &str, violation: f64, scale: f64| {
        let normalized = if scale > 0.0 { violation / scale } else { violation };
        out.push(ConstraintResidual { label: label.to_string(), violation, normalized });
    };
    for (k, v) in p.variables.iter().enumerate() {
        if let VarKind::PsdMatrix { dim } = v.kind {
            let m = p.hermitian_value(VarId(k), x);
            let n = dim as f64;
            push(&format!("{} ⪰ 0", v.name), (-min_hermitian_eig(&m)).max(0.0), (2.0 * n + 4.0 * n * (n - 1.0)).sqrt());
        }
    }
    for c in &p.constraints {
        match c {
            Constraint::LinearEq { label, expr } => push(label, expr.eval(x).abs(), expr.data_norm()),
            Constraint::LinearGe { label, expr } => push(label, (-expr.eval(x)).max(0.0), expr.data_norm()),
            Constraint::Soc { label, head, tail } => {
                let t: f64 = tail.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt();
                let scale = (head.data_norm().powi(2) + tail.iter().map(|e| e.data_norm().powi(2)).sum::<f64>()).sqrt();
                push(label, (t - head.eval(x)).max(0.0), scale);
            }
            Constraint::Psd { label, expr } => {
                let m = p.eval_hermitian(expr, x);
                push(label, (-min_hermitian_eig(&m)).max(0.0), herm_expr_norm(p, expr));
            }
        }
    }
    ResidualSummary { constraints: out }
}
