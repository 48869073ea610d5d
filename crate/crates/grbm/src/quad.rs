//! Adaptive quadrature helpers used by the density and speed computations.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuadError {
    #[error("adaptive quadrature did not converge to tolerance {tol} (best error {err})")]
    NoConvergence { tol: f64, err: f64 },
    #[error("integrand not integrable on the requested domain: {0}")]
    NonIntegrable(String),
    #[error("dimension {0} unsupported for tensor quadrature (d <= 3)")]
    Dimension(usize),
}

/// Adaptive Simpson integration of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64, QuadError> {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    let mut worst: f64 = 0.0;
    let out = simpson_rec(f, a, b, fa, fm, fb, whole, tol, 50, &mut worst);
    if worst > tol.max(1e-300) * 16.0 {
        return Err(QuadError::NoConvergence { tol, err: worst });
    }
    Ok(out)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    worst: &mut f64,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let err = (left + right - whole).abs();
    if err <= 15.0 * tol || depth == 0 {
        if depth == 0 && err > *worst {
            *worst = err;
        }
        return left + right + (left + right - whole) / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, worst)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, worst)
}

/// Tensor-product integration of `f` over the box `bounds` (one `(lo, hi)`
/// pair per axis) by iterated adaptive Simpson. Supports d <= 3.
pub fn integrate_box<F>(f: &F, bounds: &[(f64, f64)], tol: f64) -> Result<f64, QuadError>
where
    F: Fn(&[f64]) -> f64,
{
    match bounds.len() {
        1 => adaptive_simpson(&|x| f(&[x]), bounds[0].0, bounds[0].1, tol),
        2 => {
            let inner_tol = tol / (bounds[0].1 - bounds[0].0).max(1.0) * 0.1;
            adaptive_simpson(
                &|x| {
                    adaptive_simpson(&|y| f(&[x, y]), bounds[1].0, bounds[1].1, inner_tol)
                        .unwrap_or(f64::NAN)
                },
                bounds[0].0,
                bounds[0].1,
                tol,
            )
        }
        3 => {
            let span = (bounds[0].1 - bounds[0].0).max(1.0) * (bounds[1].1 - bounds[1].0).max(1.0);
            let inner_tol = tol / span * 0.01;
            adaptive_simpson(
                &|x| {
                    adaptive_simpson(
                        &|y| {
                            adaptive_simpson(&|z| f(&[x, y, z]), bounds[2].0, bounds[2].1, inner_tol)
                                .unwrap_or(f64::NAN)
                        },
                        bounds[1].0,
                        bounds[1].1,
                        inner_tol * 10.0,
                    )
                    .unwrap_or(f64::NAN)
                },
                bounds[0].0,
                bounds[0].1,
                tol,
            )
        }
        d => Err(QuadError::Dimension(d)),
    }
}

/// Cumulative trapezoid integral of samples `ys` on a uniform grid of step
/// `dt`, starting from zero. Output has the same length as `ys`, with
/// `out[0] = 0`.
pub fn cumulative_trapezoid(ys: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(ys.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in ys.windows(2) {
        acc += 0.5 * (w[0] + w[1]) * dt;
        out.push(acc);
    }
    out
}

/// Trapezoid integral of samples on a uniform grid.
pub fn trapezoid(ys: &[f64], dt: f64) -> f64 {
    if ys.len() < 2 {
        return 0.0;
    }
    let inner: f64 = ys[1..ys.len() - 1].iter().sum();
    dt * (0.5 * ys[0] + inner + 0.5 * ys[ys.len() - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn simpson_polynomial_exact() {
        let v = adaptive_simpson(&|x| x * x * x - 2.0 * x, 0.0, 2.0, 1e-12).unwrap();
        assert_relative_eq!(v, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn simpson_gaussian() {
        let v = adaptive_simpson(&|x| (-x * x / 2.0).exp(), -10.0, 10.0, 1e-10).unwrap();
        assert_relative_eq!(v, (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-8);
    }

    #[test]
    fn box_2d_product() {
        let v = integrate_box(&|x: &[f64]| (-x[0] * x[0] - x[1] * x[1]).exp(), &[(-6.0, 6.0), (-6.0, 6.0)], 1e-8)
            .unwrap();
        assert_relative_eq!(v, std::f64::consts::PI, epsilon = 1e-6);
    }

    #[test]
    fn cumulative_matches_total() {
        let dt = 0.001;
        let ys: Vec<f64> = (0..=1000).map(|i| (i as f64 * dt).sin()).collect();
        let cum = cumulative_trapezoid(&ys, dt);
        assert_relative_eq!(cum[1000], trapezoid(&ys, dt), epsilon = 1e-12);
        assert_relative_eq!(cum[1000], 1.0 - 1.0_f64.cos(), epsilon = 1e-6);
    }
}
