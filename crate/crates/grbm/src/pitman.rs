//! Generalised Pitman transforms: path transforms along root directions,
//! reduced-word compositions, the beta reflection recursion, the y-process
//! SDEs, the 1D future-infimum chain, and the transform generalised to
//! arbitrary concave potentials.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::potential::Potential;
use crate::sde::{self, path_rng, PathEnsemble, SdeError, SimConfig};
use crate::stats::StatsError;

#[derive(Debug, Error)]
pub enum PitmanError {
    #[error("invalid input: {0}")]
    Config(String),
    #[error("transform integral underflowed to zero at t = {t}")]
    Underflow { t: f64 },
    #[error(
        "truncation horizon too short: tail estimate {tail:.3e} exceeds 1% of \
         the integral {integral:.3e} at depth {depth}"
    )]
    Horizon { tail: f64, integral: f64, depth: usize },
    #[error(
        "U' does not grow fast enough for the transform to leave -infinity; \
         supply an explicit TransformStart::Value"
    )]
    SingularStart,
    #[error("theta_{r}(mu) = {value} is not positive")]
    NonPositiveTheta { r: usize, value: f64 },
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// A path sampled on the uniform grid t = dt, 2dt, ..., plus the value at
/// t = 0 used for the first trapezoid cell. Transformed paths diverge at
/// t -> 0+, which is why the grid proper starts at t0 = dt > 0; origins of
/// transformed paths carry infinities and are only used through integrand
/// limits.
#[derive(Debug, Clone)]
pub struct PathGrid {
    pub dt: f64,
    /// value at t = 0 (may contain +-infinity for transformed paths)
    pub origin: Vec<f64>,
    /// values[k] is the path at t = (k+1) dt
    pub values: Vec<Vec<f64>>,
}

impl PathGrid {
    pub fn new(dt: f64, origin: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self, PitmanError> {
        if !(dt > 0.0) {
            return Err(PitmanError::Config(format!("dt must be positive, got {dt}")));
        }
        if values.is_empty() {
            return Err(PitmanError::Config("empty path".to_string()));
        }
        let m = origin.len();
        if m == 0 || values.iter().any(|v| v.len() != m) {
            return Err(PitmanError::Config(
                "all path values must share the origin's dimension".to_string(),
            ));
        }
        Ok(Self { dt, origin, values })
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn n_steps(&self) -> usize {
        self.values.len()
    }

    /// Grid times, starting at t0 = dt.
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (1..=self.values.len()).map(move |k| k as f64 * self.dt)
    }

    /// A Brownian driver with drift `mu`, sampled at step `dt`.
    pub fn brownian(
        mu: &[f64],
        dt: f64,
        n_steps: usize,
        seed: u64,
        path: usize,
    ) -> Result<Self, PitmanError> {
        let m = mu.len();
        let mut rng = path_rng(seed, path);
        let sqrt_dt = dt.sqrt();
        let mut x = vec![0.0; m];
        let mut values = Vec::with_capacity(n_steps);
        for _ in 0..n_steps {
            for (i, xi) in x.iter_mut().enumerate() {
                let z: f64 = rand_distr::Distribution::sample(
                    &rand_distr::StandardNormal,
                    &mut rng,
                );
                *xi += sqrt_dt * z + mu[i] * dt;
            }
            values.push(x.clone());
        }
        Self::new(dt, vec![0.0; m], values)
    }
}

/// A sequence of directions gamma_1..gamma_q, each of squared norm 2.
#[derive(Debug, Clone)]
pub struct Word {
    pub gammas: Vec<Vec<f64>>,
}

impl Word {
    pub fn new(gammas: Vec<Vec<f64>>) -> Result<Self, PitmanError> {
        if gammas.is_empty() {
            return Err(PitmanError::Config("empty word".to_string()));
        }
        let m = gammas[0].len();
        for (j, g) in gammas.iter().enumerate() {
            if g.len() != m {
                return Err(PitmanError::Config(
                    "all gammas must share one dimension".to_string(),
                ));
            }
            let norm2: f64 = g.iter().map(|x| x * x).sum();
            if (norm2 - 2.0).abs() > 1e-12 {
                return Err(PitmanError::Config(format!(
                    "|gamma_{}|^2 = {norm2}, expected 2",
                    j + 1
                )));
            }
        }
        Ok(Self { gammas })
    }

    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.gammas[0].len()
    }

    /// Gram matrix A_{jk} = gamma_j . gamma_k.
    pub fn gram(&self) -> DMatrix<f64> {
        let q = self.len();
        DMatrix::from_fn(q, q, |j, k| dot(&self.gammas[j], &self.gammas[k]))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Reflection s_gamma(x) = x - (2 gamma.x / |gamma|^2) gamma.
pub fn reflect(gamma: &[f64], x: &[f64]) -> Vec<f64> {
    let norm2 = dot(gamma, gamma);
    let c = 2.0 * dot(gamma, x) / norm2;
    x.iter().zip(gamma).map(|(xi, gi)| xi - c * gi).collect()
}

fn logaddexp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Running log of integral_0^{t_k} e^{g(s)} ds for the scalar path g given
/// by `origin` (possibly -infinity) and `values` on the grid; trapezoid
/// cells, with the first cell falling back to a right-endpoint rectangle
/// when the origin is not finite.
fn log_cumulative_exp(origin: f64, values: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut log_i = if origin.is_finite() {
        logaddexp(origin, values[0]) + (0.5 * dt).ln()
    } else if origin == f64::NEG_INFINITY {
        // degenerate trapezoid with one vanishing end
        values[0] + (0.5 * dt).ln()
    } else {
        values[0] + dt.ln()
    };
    out.push(log_i);
    for w in values.windows(2) {
        log_i = logaddexp(log_i, logaddexp(w[0], w[1]) + (0.5 * dt).ln());
        out.push(log_i);
    }
    out
}

fn neg_avee_path(eta: &PathGrid, alpha: &[f64]) -> (f64, Vec<f64>) {
    let norm2 = dot(alpha, alpha);
    let avee: Vec<f64> = alpha.iter().map(|a| 2.0 * a / norm2).collect();
    let dot_or_limit = |v: &[f64]| -> f64 {
        let mut s = 0.0;
        for (vi, ai) in v.iter().zip(&avee) {
            if *ai == 0.0 {
                continue; // 0 * inf must not poison the sum
            }
            s += vi * ai;
        }
        -s
    };
    let origin = dot_or_limit(&eta.origin);
    let values = eta.values.iter().map(|v| dot_or_limit(v)).collect();
    (origin, values)
}

/// The generalised Pitman transform
/// T_alpha eta(t) = eta(t) + (log integral_0^t e^{-alpha_vee . eta(s)} ds) alpha
/// with alpha_vee = 2 alpha / |alpha|^2.
pub fn pitman_transform(eta: &PathGrid, alpha: &[f64]) -> Result<PathGrid, PitmanError> {
    Ok(transform_with_correction(eta, alpha)?.0)
}

fn transform_with_correction(
    eta: &PathGrid,
    alpha: &[f64],
) -> Result<(PathGrid, Vec<f64>), PitmanError> {
    if alpha.len() != eta.dim() {
        return Err(PitmanError::Config("alpha dimension mismatch".to_string()));
    }
    if dot(alpha, alpha) <= 0.0 {
        return Err(PitmanError::Config("|alpha| must be positive".to_string()));
    }
    let (g0, gs) = neg_avee_path(eta, alpha);
    let log_i = log_cumulative_exp(g0, &gs, eta.dt);
    if let Some(k) = log_i.iter().position(|l| !l.is_finite()) {
        return Err(PitmanError::Underflow { t: (k + 1) as f64 * eta.dt });
    }
    let values = eta
        .values
        .iter()
        .zip(&log_i)
        .map(|(v, &l)| {
            v.iter().zip(alpha).map(|(vi, ai)| vi + l * ai).collect()
        })
        .collect();
    let origin = eta
        .origin
        .iter()
        .zip(alpha)
        .map(|(&oi, &ai)| {
            if ai == 0.0 {
                oi
            } else {
                oi + f64::NEG_INFINITY * ai
            }
        })
        .collect();
    let out = PathGrid { dt: eta.dt, origin, values };
    Ok((out, log_i))
}

/// The iterated transforms eta_j = T_{gamma_j}(eta_{j-1}) together with the
/// scalar records y_j(t) = log integral_0^t
/// e^{gamma_j_vee . (eta_{j-1}(t) - eta_{j-1}(s))} ds.
pub struct WordDecomposition {
    /// eta_1, ..., eta_q
    pub etas: Vec<PathGrid>,
    /// ys[j] is the scalar path y_{j+1} on the grid
    pub ys: Vec<Vec<f64>>,
}

pub fn compose_word(eta: &PathGrid, w: &Word) -> Result<WordDecomposition, PitmanError> {
    if w.dim() != eta.dim() {
        return Err(PitmanError::Config("word dimension mismatch".to_string()));
    }
    let mut etas = Vec::with_capacity(w.len());
    let mut ys = Vec::with_capacity(w.len());
    let mut current = eta.clone();
    for gamma in &w.gammas {
        let (next, log_i) = transform_with_correction(&current, gamma)?;
        // y_j(t) = gamma_vee . eta_{j-1}(t) + log I_j(t)
        let (_, g) = neg_avee_path(&current, gamma);
        let y: Vec<f64> = g.iter().zip(&log_i).map(|(gv, l)| -gv + l).collect();
        ys.push(y);
        etas.push(next.clone());
        current = next;
    }
    Ok(WordDecomposition { etas, ys })
}

/// beta_k = s_{gamma_1} ... s_{gamma_{k-1}}(gamma_k).
pub fn beta_vectors(w: &Word) -> Vec<Vec<f64>> {
    w.gammas
        .iter()
        .enumerate()
        .map(|(k, gamma)| {
            let mut b = gamma.clone();
            for j in (0..k).rev() {
                b = reflect(&w.gammas[j], &b);
            }
            b
        })
        .collect()
}

/// theta_r(mu) = -beta_r . mu for each letter of the word.
pub fn theta_parameters(w: &Word, mu: &[f64]) -> Result<Vec<f64>, PitmanError> {
    if mu.len() != w.dim() {
        return Err(PitmanError::Config("mu dimension mismatch".to_string()));
    }
    Ok(beta_vectors(w).iter().map(|b| -dot(b, mu)).collect())
}

/// The reduced word of the longest element of the symmetric group S(n) in
/// the pattern a_1..a_{n-1} a_1..a_{n-2} ... a_1, over the simple roots
/// a_j = e_j - e_{j+1} in R^n; its length is n(n-1)/2.
pub fn longest_element_word(n: usize) -> Result<Word, PitmanError> {
    if n < 2 {
        return Err(PitmanError::Config(format!("need n >= 2, got {n}")));
    }
    let root = |j: usize| {
        let mut g = vec![0.0; n];
        g[j] = 1.0;
        g[j + 1] = -1.0;
        g
    };
    let mut gammas = Vec::with_capacity(n * (n - 1) / 2);
    for block in (1..n).rev() {
        for j in 0..block {
            gammas.push(root(j));
        }
    }
    Word::new(gammas)
}

/// Euler--Maruyama for the y-process of a word:
/// dy_k = gamma_k . d eta + [sum_{j<k} (gamma_k . gamma_j) U'(y_j) + U'(y_k)] dt,
/// where eta is driven by an m-dimensional Brownian motion with drift mu.
/// Requires theta_r(mu) > 0 for every r.
pub fn y_sde_simulate(
    w: &Word,
    u: &Potential,
    mu: &[f64],
    cfg: &SimConfig,
) -> Result<PathEnsemble, PitmanError> {
    let thetas = theta_parameters(w, mu)?;
    for (r, &t) in thetas.iter().enumerate() {
        if !(t > 0.0) {
            return Err(PitmanError::NonPositiveTheta { r: r + 1, value: t });
        }
    }
    let q = w.len();
    if cfg.x0.len() != q {
        return Err(PitmanError::Config(format!(
            "x0 has dimension {}, word has length {q}",
            cfg.x0.len()
        )));
    }
    let a = w.gram();
    let sigma = sde::psd_sqrt(&a)?;
    let base: DVector<f64> =
        DVector::from_iterator(q, w.gammas.iter().map(|g| dot(g, mu)));
    let u = u.clone();
    let a_drift = a.clone();
    let drift = move |y: &[f64]| {
        let mut d = base.clone();
        for k in 0..q {
            d[k] += u.du(y[k]);
            for j in 0..k {
                d[k] += a_drift[(k, j)] * u.du(y[j]);
            }
        }
        d
    };
    Ok(sde::simulate_sde(&drift, &sigma, cfg, "pitman-y-em")?)
}

/// The 1D operator (S eta)(t) = eta(t) - 2 log integral_0^t e^{-eta(s)} ds.
pub fn s_operator(path: &PathGrid) -> Result<PathGrid, PitmanError> {
    if path.dim() != 1 {
        return Err(PitmanError::Config("S operates on scalar paths".to_string()));
    }
    let neg: Vec<f64> = path.values.iter().map(|v| -v[0]).collect();
    let log_i = log_cumulative_exp(-path.origin[0], &neg, path.dt);
    if let Some(k) = log_i.iter().position(|l| !l.is_finite()) {
        return Err(PitmanError::Underflow { t: (k + 1) as f64 * path.dt });
    }
    let values = path
        .values
        .iter()
        .zip(&log_i)
        .map(|(v, &l)| vec![v[0] - 2.0 * l])
        .collect();
    Ok(PathGrid {
        dt: path.dt,
        origin: vec![f64::INFINITY],
        values,
    })
}

/// Output of the future-infimum chain.
pub struct SOperatorChain {
    /// J_1(0), ..., J_n(0)
    pub j_values: Vec<f64>,
    /// Y_k(t) = S^k eta(t) + J_k(t) on the grid (distorted near the
    /// truncation horizon, where the future integral is cut off)
    pub y_paths: Vec<Vec<f64>>,
}

/// Iterates the alternating 1D queue construction on a positive-drift
/// scalar driver over the horizon [0, T_inf]. With q_1 = -driver, each
/// level records Y_k(t) = log integral_0^t e^{q_k(t) - q_k(s)} ds (the k-th
/// coordinate of the alternating-word y-process, a stationary queue-length
/// analogue) and passes q_{k+1} = -q_k - 2 log integral_0^t e^{-q_k(s)} ds
/// to the next level; this is the S-operator iteration up to the sign
/// alternation of the driving direction. The values J_k(0) = -Y_k(T_inf)
/// realize the future-infimum functionals of the successive levels and are
/// asymptotically i.i.d. A dominance check requires the first half of the
/// horizon to carry at most 1% of each level's integral, so that the
/// stationary limit is resolved.
pub fn s_operator_chain(driver: &PathGrid, depth: usize) -> Result<SOperatorChain, PitmanError> {
    if driver.dim() != 1 {
        return Err(PitmanError::Config("driver must be scalar".to_string()));
    }
    if depth == 0 {
        return Err(PitmanError::Config("depth must be positive".to_string()));
    }
    let n = driver.n_steps();
    if n < 8 {
        return Err(PitmanError::Config("driver too short".to_string()));
    }
    let slope = (driver.values[n - 1][0] - driver.values[n / 2][0])
        / (n as f64 * driver.dt / 2.0);
    if !(slope > 0.0) {
        return Err(PitmanError::Config(
            "driver drift must be positive".to_string(),
        ));
    }
    let mut j_values = Vec::with_capacity(depth);
    let mut y_paths = Vec::with_capacity(depth);
    let mut q_origin = -driver.origin[0];
    let mut q: Vec<f64> = driver.values.iter().map(|v| -v[0]).collect();
    for k in 1..=depth {
        let neg: Vec<f64> = q.iter().map(|v| -v).collect();
        let log_c = log_cumulative_exp(-q_origin, &neg, driver.dt);
        if let Some(i) = log_c.iter().position(|l| !l.is_finite()) {
            return Err(PitmanError::Underflow { t: (i + 1) as f64 * driver.dt });
        }
        // the integral must be dominated by times well past the start,
        // otherwise the stationary limit is not resolved
        let head = log_c[n / 10].exp();
        let integral = log_c[n - 1].exp();
        if head > 0.01 * integral {
            return Err(PitmanError::Horizon { tail: head, integral, depth: k });
        }
        let y: Vec<f64> = q.iter().zip(&log_c).map(|(qv, &lc)| qv + lc).collect();
        j_values.push(-y[n - 1]);
        // next driver: q <- -q - 2 log integral_0^t e^{-q(s)} ds, which
        // diverges to +infinity at t = 0+
        let next: Vec<f64> = q
            .iter()
            .zip(&log_c)
            .map(|(qv, &lc)| -qv - 2.0 * lc)
            .collect();
        y_paths.push(y);
        q = next;
        q_origin = f64::INFINITY;
    }
    Ok(SOperatorChain { j_values, y_paths })
}

/// Choice of initial value for the generalised transform ODE.
#[derive(Debug, Clone, Copy)]
pub enum TransformStart {
    /// Leave -infinity asymptotically: the first-cell value solves
    /// G(z) = integral_{-infty}^z dy / U'(y) = t0, which requires U' to
    /// diverge fast enough at -infinity.
    Asymptotic,
    /// Explicit value at t0, for potentials with bounded U' (which cannot
    /// leave -infinity in finite time).
    Value(f64),
}

/// Generalised Pitman transform for a potential U:
/// T_alpha^(U) eta = Pi_{alpha-perp} eta
/// + (T^(U)(alpha_vee . eta) - (alpha_vee . eta)/2) alpha, where the scalar
/// path z = T^(U)(g) solves dz = dg + U'(z) dt with z(0+) = -infinity,
/// integrated by implicit Euler (the drift is stiff near -infinity). For
/// U(x) = -e^{-x} this reproduces [`pitman_transform`].
pub fn generalized_transform(
    eta: &PathGrid,
    alpha: &[f64],
    u: &Potential,
    start: TransformStart,
) -> Result<PathGrid, PitmanError> {
    if alpha.len() != eta.dim() {
        return Err(PitmanError::Config("alpha dimension mismatch".to_string()));
    }
    let norm2 = dot(alpha, alpha);
    if norm2 <= 0.0 {
        return Err(PitmanError::Config("|alpha| must be positive".to_string()));
    }
    let (g0, gs) = neg_avee_path(eta, alpha);
    // g = alpha_vee . eta
    let g: Vec<f64> = gs.iter().map(|v| -v).collect();
    let g_origin = -g0;
    let dt = eta.dt;
    let mut z = match start {
        TransformStart::Value(z0) => z0,
        TransformStart::Asymptotic => {
            asymptotic_start(u, dt)? + if g_origin.is_finite() { g[0] - g_origin } else { 0.0 }
        }
    };
    // stiffly stable implicit stepping per cell, with substeps sized to the
    // local relaxation rate U'(z) (the drift blows up near the singular
    // start) and the path increment interpolated linearly within a cell
    let mut ts = Vec::with_capacity(g.len());
    ts.push(z);
    for w in g.windows(2) {
        let m = (10.0 * dt * u.du(z).abs()).ceil().clamp(1.0, 2000.0) as usize;
        let h = dt / m as f64;
        let dg = (w[1] - w[0]) / m as f64;
        for _ in 0..m {
            // implicit trapezoid: z' - (h/2) U'(z') = z + dg + (h/2) U'(z)
            let rhs = z + dg + 0.5 * h * u.du(z);
            z = solve_implicit(u, rhs, 0.5 * h)?;
        }
        ts.push(z);
    }
    // Pi_perp eta + (z - g/2) alpha with Pi_perp eta = eta - (g/2) alpha
    // collapses to eta + (z - g) alpha
    let values = eta
        .values
        .iter()
        .zip(&g)
        .zip(&ts)
        .map(|((v, &gv), &zv)| {
            v.iter()
                .zip(alpha)
                .map(|(vi, ai)| vi + (zv - gv) * ai)
                .collect::<Vec<f64>>()
        })
        .collect::<Vec<_>>();
    let origin = eta
        .origin
        .iter()
        .zip(alpha)
        .map(|(&oi, &ai)| if ai == 0.0 { oi } else { oi + f64::NEG_INFINITY * ai })
        .collect();
    Ok(PathGrid { dt, origin, values })
}

/// First-cell value solving G(z) = integral_{-infty}^z dy/U'(y) = dt by
/// bisection; errors if the integral does not converge at -infinity (U'
/// growing too slowly).
fn asymptotic_start(u: &Potential, dt: f64) -> Result<f64, PitmanError> {
    // numerically test integrability of 1/U' at -infinity: the tail beyond
    // z = -40 is estimated from the local exponential growth rate of U'
    let z_cut = -40.0;
    let du_cut = u.du(z_cut);
    if !(du_cut > 0.0) {
        return Err(PitmanError::SingularStart);
    }
    let h = 1e-3;
    let rate = (u.du(z_cut - h).ln() - u.du(z_cut).ln()) / h;
    if !(rate > 1e-6) || !du_cut.is_finite() || 1.0 / (rate * du_cut) > 1e-3 * dt.min(1.0) {
        return Err(PitmanError::SingularStart);
    }
    let tail = 1.0 / (rate * du_cut);
    // G(z) = tail + integral_{z_cut}^z dy/U'(y); find G(z) = dt
    let g_of = |z: f64| -> f64 {
        let n = 4000;
        let step = (z - z_cut) / n as f64;
        let mut s = 0.5 * (1.0 / u.du(z_cut) + 1.0 / u.du(z));
        for i in 1..n {
            s += 1.0 / u.du(z_cut + i as f64 * step);
        }
        tail + s * step
    };
    let mut lo = z_cut;
    let mut hi = 40.0;
    if g_of(hi) < dt {
        return Err(PitmanError::SingularStart);
    }
    if g_of(lo) > dt {
        return Err(PitmanError::SingularStart);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g_of(mid) < dt {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Solves z - U'(z) dt = rhs for z by bisection; U' is non-increasing for
/// concave U, making the left side strictly increasing in z.
fn solve_implicit(u: &Potential, rhs: f64, dt: f64) -> Result<f64, PitmanError> {
    let f = |z: f64| z - u.du(z) * dt - rhs;
    let mut lo = rhs.min(0.0) - 1.0;
    let mut expand = 1.0;
    while f(lo) > 0.0 {
        expand *= 2.0;
        lo -= expand;
        if expand > 1e12 {
            return Err(PitmanError::SingularStart);
        }
    }
    let mut hi = rhs.max(0.0) + 1.0;
    let mut expand = 1.0;
    while f(hi) < 0.0 {
        expand *= 2.0;
        hi += expand;
        if expand > 1e12 {
            return Err(PitmanError::SingularStart);
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Simulates `n_paths` drivers in parallel and returns, for each, the
/// J-values of the S-operator chain at the given depth.
pub fn s_chain_ensemble(
    mu: f64,
    dt: f64,
    n_steps: usize,
    depth: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, PitmanError> {
    (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let driver = PathGrid::brownian(&[mu], dt, n_steps, seed, p)?;
            Ok(s_operator_chain(&driver, depth)?.j_values)
        })
        .collect()
}
