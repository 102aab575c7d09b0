use bisac_conic::{check_solution, solve, ConicProgram, HermitianExpr, LinExpr, Status};
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<C64> {
    let a = DMatrix::from_fn(n, n, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    (&a + a.adjoint()) * c(0.5, 0.0)
}

#[test]
fn lp_cap() {
    let mut p = ConicProgram::new();
    let q = p.add_scalar("q");
    p.add_ge("cap", p.scalar(q).scaled(-1.0).plus_const(3.0));
    p.maximize(p.scalar(q));
    let r = solve(&p);
    assert_eq!(r.status, Status::Optimal);
    assert!((r.scalar(&p, q) - 3.0).abs() < 1e-7);
    assert!(check_solution(&p, &r.x).max_normalized() <= 1e-8);
}

#[test]
fn eigenvalue_program() {
    let mut p = ConicProgram::new();
    let x = p.add_psd("X", 2);
    let cm = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(2.0, 0.0)]);
    p.add_eq("trace", p.trace(x).plus_const(-1.0));
    p.maximize(p.re_trace(x, &cm));
    let r = solve(&p);
    assert_eq!(r.status, Status::Optimal);
    assert!((r.objective - 2.0).abs() < 1e-7, "{}", r.objective);
    let xv = r.hermitian(&p, x);
    assert!((xv[(1, 1)].re - 1.0).abs() < 1e-6);
    assert!(xv[(0, 0)].re.abs() < 1e-6);
    assert!(check_solution(&p, &r.x).max_normalized() <= 1e-8);
}

#[test]
fn soc_norm() {
    let mut p = ConicProgram::new();
    let t = p.add_scalar("t");
    p.add_soc("norm", p.scalar(t), vec![LinExpr::constant(3.0), LinExpr::constant(4.0)]);
    p.minimize(p.scalar(t));
    let r = solve(&p);
    assert_eq!(r.status, Status::Optimal);
    assert!((r.scalar(&p, t) - 5.0).abs() < 1e-7);
    assert!(check_solution(&p, &r.x).max_normalized() <= 1e-8);
}

#[test]
fn perturbation_is_flagged() {
    let mut p = ConicProgram::new();
    let q = p.add_scalar("q");
    p.add_ge("cap", p.scalar(q).scaled(-1.0).plus_const(3.0));
    p.maximize(p.scalar(q));
    let mut r = solve(&p);
    r.x[0] += 1e-3;
    let s = check_solution(&p, &r.x);
    assert!(s.max_normalized() > 1e-4);
    assert_eq!(s.worst().unwrap().label, "cap");
}

#[test]
fn trace_programs_match_max_eigenvalue() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for trial in 0..40 {
        let n = 2 + trial % 2;
        let cm = random_hermitian(&mut rng, n);
        let budget = rng.random_range(0.5..2.0);
        let mut p = ConicProgram::new();
        let x = p.add_psd("X", n);
        p.add_ge("budget", p.trace(x).scaled(-1.0).plus_const(budget));
        p.maximize(p.re_trace(x, &cm));
        let r = solve(&p);
        assert_eq!(r.status, Status::Optimal);
        let lmax = cm.clone().symmetric_eigenvalues().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let expect = budget * lmax.max(0.0);
        assert!(
            (r.objective - expect).abs() <= 1e-6 * expect.abs().max(1.0),
            "trial {trial}: {} vs {}",
            r.objective,
            expect
        );
    }
}

#[test]
fn psd_of_affine_schur_epigraph() {
    // minimize Tr(T) s.t. [[R, I], [I, T]] ⪰ 0 with R fixed: Tr(R⁻¹)
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 3;
    let a = DMatrix::from_fn(n, n, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let rm = &a * a.adjoint() + DMatrix::identity(n, n) * c(0.5, 0.0);
    let mut p = ConicProgram::new();
    let t = p.add_hermitian("T", n);
    let eye = DMatrix::<C64>::identity(n, n);
    let expr = HermitianExpr::zeros(2 * n)
        .constant_block(0, 0, &rm)
        .constant_block(0, n, &eye)
        .constant_block(n, 0, &eye)
        .var(t, n, 1.0);
    p.add_psd_constraint("schur", expr);
    p.minimize(p.trace(t));
    let r = solve(&p);
    assert_eq!(r.status, Status::Optimal);
    let expect = rm.try_inverse().unwrap().trace().re;
    assert!((-r.objective - expect).abs() < 1e-6 * expect, "{} vs {}", -r.objective, expect);
}

#[test]
fn infeasible_is_certified() {
    let mut p = ConicProgram::new();
    let x = p.add_psd("X", 2);
    p.add_ge("low", p.trace(x).scaled(-1.0).plus_const(1.0));
    p.add_ge("high", p.trace(x).plus_const(-2.0));
    p.maximize(p.trace(x));
    assert_eq!(solve(&p).status, Status::Infeasible);
}

#[test]
fn unbounded_is_certified() {
    let mut p = ConicProgram::new();
    let q = p.add_scalar("q");
    p.add_ge("pos", p.scalar(q));
    p.maximize(p.scalar(q));
    assert_eq!(solve(&p).status, Status::Unbounded);
}

#[test]
fn weak_duality_along_iterates() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let cm = random_hermitian(&mut rng, 3);
        let mut p = ConicProgram::new();
        let x = p.add_psd("X", 3);
        let q = p.add_scalar("q");
        p.add_ge("budget", p.trace(x).scaled(-1.0).plus_const(1.0));
        p.add_ge("q", p.re_trace(x, &cm).sub(&p.scalar(q)));
        p.maximize(p.scalar(q));
        let r = solve(&p);
        assert_eq!(r.status, Status::Optimal);
        for it in &r.trace {
            // minimization form: dual ≤ primal up to the infeasibility of the iterate
            let slack = 10.0 * (it.pres + it.dres) * (1.0 + it.pcost.abs() + it.dcost.abs());
            if it.pres < 1e-6 && it.dres < 1e-6 {
                assert!(it.dcost <= it.pcost + slack + 1e-9, "{it:?}");
            }
        }
    }
}

#[test]
fn equalities_and_complex_vectors() {
    // maximize Re(h·w) s.t. ‖w‖ ≤ 1 → ‖h‖
    let h = [c(1.0, 2.0), c(-0.5, 0.5), c(0.0, -1.0)];
    let mut p = ConicProgram::new();
    let w = p.add_complex_vector("w", 3);
    let mut tail = Vec::new();
    for k in 0..3 {
        let (re, im) = p.complex_entry(w, k);
        tail.push(re);
        tail.push(im);
    }
    p.add_soc("power", LinExpr::constant(1.0), tail);
    let (re, im) = p.complex_dot(w, 0, &h);
    p.add_eq("phase", im);
    p.maximize(re);
    let r = solve(&p);
    assert_eq!(r.status, Status::Optimal);
    let hn = h.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    assert!((r.objective - hn).abs() < 1e-7);
}
