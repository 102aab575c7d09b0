use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

/// Real symmetric embedding `[[Re H, −Im H], [Im H, Re H]]` of a Hermitian
/// matrix. Each eigenvalue of `H` appears twice in the embedding.
pub fn realify_hermitian(h: &DMatrix<C64>) -> DMatrix<f64> {
    let n = h.nrows();
    assert_eq!(n, h.ncols(), "square input required");
    let mut r = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = h[(i, j)];
            r[(i, j)] = z.re;
            r[(i + n, j + n)] = z.re;
            r[(i, j + n)] = -z.im;
            r[(i + n, j)] = z.im;
        }
    }
    r
}

/// Inverse of [`realify_hermitian`], averaging the duplicated blocks.
pub fn complexify_symmetric(r: &DMatrix<f64>) -> DMatrix<C64> {
    let n = r.nrows() / 2;
    DMatrix::from_fn(n, n, |i, j| {
        C64::new(
            0.5 * (r[(i, j)] + r[(i + n, j + n)]),
            0.5 * (r[(i + n, j)] - r[(i, j + n)]),
        )
    })
}
