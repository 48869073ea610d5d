//! Geometric input data for GRBM: the tuple (N, Q, b, mu, A) describing a
//! polyhedral domain with reflection directions, together with the
//! skew-symmetry conditions and the derived drift parameters gamma, delta
//! and theta.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const UNIT_TOL: f64 = 1e-12;
const RANK_TOL: f64 = 1e-9;
/// Default tolerance for the skew-symmetry condition checks. The conditions
/// are exact linear identities, so violations in user data are either zero
/// or order one.
pub const SKEW_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("singular matrix in {0}")]
    Singular(&'static str),
    #[error("rows of N do not span R^d (rank {rank} < {d})")]
    SpanDeficient { rank: usize, d: usize },
    #[error("invalid reflection data: {0:?}")]
    Invalid(Vec<String>),
    #[error("operation requires {0}")]
    Precondition(&'static str),
}

/// Which flavour of polyhedral data this is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainKind {
    /// General polyhedral domain: requires identity covariance.
    GeneralDomain,
    /// Orthant with k = d and N = I; general covariance with constant
    /// diagonal is allowed here.
    Orthant,
}

/// The defining data (N, Q, b, mu, A) of a GRBM instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionData {
    normals: DMatrix<f64>,
    reflections: DMatrix<f64>,
    offsets: DVector<f64>,
    drift: DVector<f64>,
    covariance: DMatrix<f64>,
    kind: DomainKind,
}

/// Report of structural-invariant checks; empty `violations` means valid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Which skew-symmetry condition was evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SkewCondition {
    /// n_j.q_r + n_r.q_j = 0 (identity covariance).
    HarrisonWilliams,
    /// q_jr + q_rj = 2 a_jr (orthant, unit diagonal).
    Orthant,
    /// n_j.q_r + n_r.q_j = 2 a_jr / alpha.
    Generalised,
}

/// Residuals of the skew-symmetry condition.
#[derive(Debug, Clone)]
pub struct ConditionReport {
    pub defect: DMatrix<f64>,
    pub max_abs_defect: f64,
    pub passed: bool,
    pub which_condition: SkewCondition,
    pub tolerance: f64,
}

impl ReflectionData {
    /// Builds reflection data, checking dimensional consistency only.
    /// Invariant violations are reported by [`ReflectionData::validate`].
    pub fn new(
        normals: DMatrix<f64>,
        reflections: DMatrix<f64>,
        offsets: DVector<f64>,
        drift: DVector<f64>,
        covariance: DMatrix<f64>,
        kind: DomainKind,
    ) -> Result<Self, DomainError> {
        let (k, d) = (normals.nrows(), normals.ncols());
        if reflections.nrows() != k || reflections.ncols() != d {
            return Err(DomainError::DimensionMismatch(format!(
                "Q is {}x{}, expected {}x{}",
                reflections.nrows(),
                reflections.ncols(),
                k,
                d
            )));
        }
        if offsets.len() != k {
            return Err(DomainError::DimensionMismatch(format!(
                "b has length {}, expected {}",
                offsets.len(),
                k
            )));
        }
        if drift.len() != d {
            return Err(DomainError::DimensionMismatch(format!(
                "mu has length {}, expected {}",
                drift.len(),
                d
            )));
        }
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(DomainError::DimensionMismatch(format!(
                "A is {}x{}, expected {}x{}",
                covariance.nrows(),
                covariance.ncols(),
                d,
                d
            )));
        }
        Ok(Self {
            normals,
            reflections,
            offsets,
            drift,
            covariance,
            kind,
        })
    }

    /// Convenience constructor for an orthant instance (N = I, b = 0).
    pub fn orthant(
        reflections: DMatrix<f64>,
        drift: DVector<f64>,
        covariance: DMatrix<f64>,
    ) -> Result<Self, DomainError> {
        let d = reflections.nrows();
        Self::new(
            DMatrix::identity(d, d),
            reflections,
            DVector::zeros(d),
            drift,
            covariance,
            DomainKind::Orthant,
        )
    }

    pub fn dim(&self) -> usize {
        self.normals.ncols()
    }

    pub fn num_faces(&self) -> usize {
        self.normals.nrows()
    }

    pub fn normals(&self) -> &DMatrix<f64> {
        &self.normals
    }

    pub fn reflections(&self) -> &DMatrix<f64> {
        &self.reflections
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.offsets
    }

    pub fn drift(&self) -> &DVector<f64> {
        &self.drift
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    /// The constant diagonal entry alpha of A.
    pub fn alpha(&self) -> f64 {
        self.covariance[(0, 0)]
    }

    pub fn has_identity_covariance(&self) -> bool {
        let d = self.dim();
        self.covariance
            .iter()
            .zip(DMatrix::<f64>::identity(d, d).iter())
            .all(|(a, i)| (a - i).abs() <= UNIT_TOL)
    }

    fn has_identity_normals(&self) -> bool {
        let (k, d) = (self.num_faces(), self.dim());
        k == d
            && self
                .normals
                .iter()
                .zip(DMatrix::<f64>::identity(d, d).iter())
                .all(|(a, i)| (a - i).abs() <= UNIT_TOL)
    }

    /// Checks all structural invariants and returns a report listing every
    /// violated one; an empty list means the instance is valid.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let (k, d) = (self.num_faces(), self.dim());
        if k < d {
            violations.push(format!("k = {k} < d = {d}: degenerate instances are rejected"));
        }
        for j in 0..k {
            let norm = self.normals.row(j).norm();
            if (norm - 1.0).abs() > UNIT_TOL {
                violations.push(format!("row {j} of N has norm {norm}, expected 1"));
            }
        }
        for j in 0..k {
            let dot = self.normals.row(j).dot(&self.reflections.row(j));
            if dot.abs() > UNIT_TOL {
                violations.push(format!("q_{j} . n_{j} = {dot}, expected 0"));
            }
        }
        let rank = matrix_rank(&self.normals);
        if rank < d {
            violations.push(format!("rows of N span a {rank}-dimensional subspace of R^{d}"));
        }
        let a = &self.covariance;
        for i in 0..d {
            for j in (i + 1)..d {
                if (a[(i, j)] - a[(j, i)]).abs() > UNIT_TOL {
                    violations.push(format!("A is not symmetric at ({i},{j})"));
                }
            }
        }
        let alpha = a[(0, 0)];
        if alpha <= 0.0 {
            violations.push(format!("diagonal of A must be positive, got {alpha}"));
        }
        for i in 1..d {
            if (a[(i, i)] - alpha).abs() > UNIT_TOL {
                violations.push(format!(
                    "A diagonal is not constant: a_00 = {alpha}, a_{i}{i} = {}",
                    a[(i, i)]
                ));
            }
        }
        let sym = 0.5 * (a + a.transpose());
        let eig = sym.symmetric_eigenvalues();
        if let Some(min) = eig.iter().cloned().reduce(f64::min) {
            if min < -UNIT_TOL {
                violations.push(format!("A has negative eigenvalue {min}"));
            }
        }
        match self.kind {
            DomainKind::GeneralDomain => {
                if !self.has_identity_covariance() {
                    violations.push("GeneralDomain kind requires A = I".into());
                }
            }
            DomainKind::Orthant => {
                if !self.has_identity_normals() {
                    violations.push("Orthant kind requires k = d and N = I".into());
                }
            }
        }
        if self.offsets.iter().any(|b| !b.is_finite())
            || self.drift.iter().any(|m| !m.is_finite())
        {
            violations.push("b and mu must be finite".into());
        }
        ValidationReport { violations }
    }

    /// Residual matrix of the skew-symmetry condition at the default
    /// tolerance [`SKEW_TOL`].
    pub fn skew_symmetry_defect(&self) -> ConditionReport {
        self.skew_symmetry_defect_with_tol(SKEW_TOL)
    }

    /// defect_jr = n_j.q_r + n_r.q_j - 2 a_jr / alpha for j != r; the
    /// diagonal is zero by convention.
    pub fn skew_symmetry_defect_with_tol(&self, tolerance: f64) -> ConditionReport {
        let k = self.num_faces();
        let alpha = self.alpha();
        let mut defect = DMatrix::zeros(k, k);
        for j in 0..k {
            for r in 0..k {
                if j == r {
                    continue;
                }
                let cross = self.normals.row(j).dot(&self.reflections.row(r))
                    + self.normals.row(r).dot(&self.reflections.row(j));
                // Off-orthant data has k x k faces but a d x d covariance;
                // a_jr only enters when both indices address coordinates.
                let a_jr = if j < self.dim() && r < self.dim() && self.kind == DomainKind::Orthant {
                    self.covariance[(j, r)]
                } else {
                    0.0
                };
                defect[(j, r)] = cross - 2.0 * a_jr / alpha;
            }
        }
        let max_abs_defect = defect.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let which_condition = if self.has_identity_covariance() {
            SkewCondition::HarrisonWilliams
        } else if (alpha - 1.0).abs() <= UNIT_TOL {
            SkewCondition::Orthant
        } else {
            SkewCondition::Generalised
        };
        ConditionReport {
            defect,
            max_abs_defect,
            passed: max_abs_defect <= tolerance,
            which_condition,
            tolerance,
        }
    }

    /// gamma(mu) = (I - Nbar^-1 Qbar)^-1 mu for an invertible row submatrix
    /// Nbar of N. When `submatrix` is omitted the deterministic greedy
    /// choice of [`find_invertible_submatrix`] is used. Requires A = I.
    pub fn gamma_drift(&self, submatrix: Option<&[usize]>) -> Result<DVector<f64>, DomainError> {
        if !self.has_identity_covariance() {
            return Err(DomainError::Precondition("identity covariance (A = I)"));
        }
        let d = self.dim();
        let idx: Vec<usize> = match submatrix {
            Some(s) => {
                if s.len() != d {
                    return Err(DomainError::DimensionMismatch(format!(
                        "submatrix must select {d} rows, got {}",
                        s.len()
                    )));
                }
                s.to_vec()
            }
            None => find_invertible_submatrix(&self.normals)?,
        };
        let nbar = self.normals.select_rows(idx.iter());
        let qbar = self.reflections.select_rows(idx.iter());
        // (I - Nbar^-1 Qbar) gamma = mu  <=>  (Nbar - Qbar) gamma = Nbar mu
        let lhs = &nbar - &qbar;
        let rhs = &nbar * &self.drift;
        lhs.lu()
            .solve(&rhs)
            .filter(|g| g.iter().all(|v| v.is_finite()))
            .ok_or(DomainError::Singular("(I - Nbar^-1 Qbar)"))
    }

    /// delta(mu) = (2A/alpha - I - Q)^-1 mu for orthant data; reduces to the
    /// unit-diagonal form (2A - I - Q)^-1 mu when alpha = 1.
    pub fn delta_drift(&self) -> Result<DVector<f64>, DomainError> {
        if self.kind != DomainKind::Orthant {
            return Err(DomainError::Precondition("orthant kind"));
        }
        let d = self.dim();
        let m = 2.0 / self.alpha() * &self.covariance
            - DMatrix::<f64>::identity(d, d)
            - &self.reflections;
        m.lu()
            .solve(&self.drift)
            .filter(|g| g.iter().all(|v| v.is_finite()))
            .ok_or(DomainError::Singular("(2A/alpha - I - Q)"))
    }

    /// theta = 2 (N^T + Q^T)^-1 mu: the gamma shape parameters of the
    /// product-form marginals for the exponential potential when k = d and
    /// A = I. Under skew-symmetry this equals 2 N^-T gamma(mu), so the
    /// coordinate y_j = n_j . x has marginal -log(gamma_{theta_j} / 2).
    pub fn theta_parameters(&self) -> Result<DVector<f64>, DomainError> {
        if self.num_faces() != self.dim() {
            return Err(DomainError::Precondition("k = d"));
        }
        if !self.has_identity_covariance() {
            return Err(DomainError::Precondition("identity covariance (A = I)"));
        }
        let m = (&self.normals + &self.reflections).transpose();
        m.lu()
            .solve(&self.drift)
            .map(|v| 2.0 * v)
            .filter(|g| g.iter().all(|v| v.is_finite()))
            .ok_or(DomainError::Singular("(N^T + Q^T)"))
    }
}

fn matrix_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    m.clone().svd(false, false).rank(RANK_TOL)
}

/// Returns indices (0-based) of d rows of `n` forming an invertible matrix,
/// chosen greedily in row order (lexicographically first).
pub fn find_invertible_submatrix(n: &DMatrix<f64>) -> Result<Vec<usize>, DomainError> {
    let (k, d) = (n.nrows(), n.ncols());
    let mut chosen: Vec<usize> = Vec::with_capacity(d);
    // Orthonormalized span of the chosen rows.
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(d);
    for j in 0..k {
        if chosen.len() == d {
            break;
        }
        let mut v: DVector<f64> = n.row(j).transpose();
        let scale = v.norm();
        if scale <= RANK_TOL {
            continue;
        }
        for b in &basis {
            let coeff = v.dot(b);
            v -= coeff * b;
        }
        if v.norm() > RANK_TOL * scale.max(1.0) {
            let norm = v.norm();
            basis.push(v / norm);
            chosen.push(j);
        }
    }
    if chosen.len() < d {
        return Err(DomainError::SpanDeficient {
            rank: chosen.len(),
            d,
        });
    }
    Ok(chosen)
}

/// JSON wire format: matrices as row-major arrays of arrays.
#[derive(Serialize, Deserialize)]
struct ReflectionDataRepr {
    #[serde(rename = "N")]
    n: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    b: Vec<f64>,
    mu: Vec<f64>,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    kind: DomainKind,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().cloned().collect())
        .collect()
}

fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, DomainError> {
    if rows.is_empty() {
        return Err(DomainError::DimensionMismatch(format!("{what} is empty")));
    }
    let cols = rows[0].len();
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(DomainError::DimensionMismatch(format!(
            "{what} has ragged or empty rows"
        )));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        cols,
        rows.iter().flatten().cloned(),
    ))
}

impl Serialize for ReflectionData {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        ReflectionDataRepr {
            n: to_rows(&self.normals),
            q: to_rows(&self.reflections),
            b: self.offsets.iter().cloned().collect(),
            mu: self.drift.iter().cloned().collect(),
            a: to_rows(&self.covariance),
            kind: self.kind,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ReflectionData {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = ReflectionDataRepr::deserialize(deserializer)?;
        let n = from_rows(&repr.n, "N").map_err(serde::de::Error::custom)?;
        let q = from_rows(&repr.q, "Q").map_err(serde::de::Error::custom)?;
        let a = from_rows(&repr.a, "A").map_err(serde::de::Error::custom)?;
        ReflectionData::new(
            n,
            q,
            DVector::from_vec(repr.b),
            DVector::from_vec(repr.mu),
            a,
            repr.kind,
        )
        .map_err(serde::de::Error::custom)
    }
}
