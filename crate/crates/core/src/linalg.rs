//! Small dense helpers on top of nalgebra, plus Brent's 1-D minimizer.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

pub(crate) fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
}

/// Inverse of a symmetric positive definite matrix.
pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let inv = cholesky(m)?.inverse();
    Some(symmetrize(inv))
}

pub(crate) fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// `log det` of a symmetric positive definite matrix.
pub(crate) fn spd_logdet(m: &DMatrix<f64>) -> Option<f64> {
    let chol = cholesky(m)?;
    Some(chol.l_dirty().diagonal().iter().take(m.nrows()).map(|d| 2.0 * d.ln()).sum())
}

pub(crate) fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |a, &b| a.max(b.abs()))
}

/// Columns of a Gram-type matrix that are linear combinations of earlier ones.
///
/// Returns, for each dependent column, the earlier columns it depends on.
pub(crate) fn dependent_columns(gram: &DMatrix<f64>, rel_tol: f64) -> Vec<(usize, Vec<usize>)> {
    let n = gram.nrows();
    let mut kept: Vec<usize> = Vec::new();
    let mut out = Vec::new();
    for j in 0..n {
        let diag = gram[(j, j)];
        if kept.is_empty() {
            if diag <= rel_tol * diag.abs().max(f64::MIN_POSITIVE) || diag <= 0.0 {
                out.push((j, Vec::new()));
            } else {
                kept.push(j);
            }
            continue;
        }
        let k = kept.len();
        let sub = DMatrix::from_fn(k, k, |a, b| gram[(kept[a], kept[b])]);
        let rhs = DVector::from_fn(k, |a, _| gram[(kept[a], j)]);
        let Some(chol) = cholesky(&sub) else {
            out.push((j, kept.clone()));
            continue;
        };
        let coef = chol.solve(&rhs);
        let residual = diag - rhs.dot(&coef);
        if diag <= 0.0 || residual <= rel_tol * diag {
            let scale = coef.iter().fold(0.0_f64, |a, &b| a.max(b.abs())).max(1.0);
            let partners = kept
                .iter()
                .zip(coef.iter())
                .filter(|(_, &c)| c.abs() > 1e-6 * scale)
                .map(|(&i, _)| i)
                .collect();
            out.push((j, partners));
        } else {
            kept.push(j);
        }
    }
    out
}

pub(crate) struct BrentResult {
    pub x: f64,
    pub fx: f64,
}

/// Minimizes `f` on `[a, b]` by golden-section search with parabolic steps.
///
/// Stops when the bracket around the minimum is narrower than `2 * tol`.
pub(crate) fn brent_minimize<E>(
    mut f: impl FnMut(f64) -> Result<f64, E>,
    a: f64,
    b: f64,
    tol: f64,
    max_iter: usize,
) -> Result<BrentResult, E> {
    const GOLDEN: f64 = 0.381_966_011_250_105_1;
    let (mut a, mut b) = (a.min(b), a.max(b));
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x)?;
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..max_iter {
        let xm = 0.5 * (a + b);
        let tol1 = tol + 1e-10 * x.abs();
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if xm >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = f(u)?;
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Ok(BrentResult { x, fx })
}
