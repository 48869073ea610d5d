//! Bundled experiment configurations covering the worked examples: the 1D
//! exponential construction, a 2D wedge, a correlated orthant, TASEP-like
//! gap systems, word-indexed path-transform instances and the Weyl chamber
//! with rank-dependent drift.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde_json::json;
use thiserror::Error;

use crate::config::ExperimentConfig;
use crate::domain::{DomainKind, ReflectionData};
use crate::particles::{gap_data, ParticleConfig};
use crate::potential::{Potential, PotentialSpec};
use crate::sde::SimConfig;

#[derive(Debug, Error)]
pub enum PresetError {
    #[error("unknown preset {0:?}; known presets: {names}", names = PRESET_NAMES.join(", "))]
    Unknown(String),
}

/// Names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 8] = [
    "dufresne-1d",
    "wedge-2d",
    "orthant-hr",
    "tasep-n3",
    "tasep-n5",
    "pitman-a2-longest",
    "alternating-1d",
    "weyl-chamber-n4",
];

fn exponential_spec() -> PotentialSpec {
    PotentialSpec {
        name: "exponential".to_string(),
        params: BTreeMap::new(),
    }
}

fn sim(dt: f64, t_max: f64, burn_in: f64, x0: Vec<f64>, n_paths: usize, save_every: usize) -> SimConfig {
    SimConfig {
        dt,
        t_max,
        burn_in,
        seed: 20_2408,
        x0,
        n_paths,
        save_every,
    }
}

/// 1D half-line instance with a single face, no tangential reflection and
/// positive drift; the stationary marginal is the log-gamma law and the
/// reciprocal exponential functional is Gamma distributed.
fn dufresne_1d() -> ExperimentConfig {
    let data = ReflectionData::orthant(
        DMatrix::zeros(1, 1),
        DVector::from_vec(vec![1.0]),
        DMatrix::identity(1, 1),
    )
    .expect("valid dimensions");
    ExperimentConfig::new(
        data,
        exponential_spec(),
        sim(1e-3, 2000.0, 100.0, vec![0.7], 20, 100),
    )
    .with_option("t_inf", json!(20.0))
    .with_option("n_samples", json!(100_000))
}

/// 2D wedge with interior angle pi/3 and a skew-symmetric pair of oblique
/// reflection fields with tangential coefficient 0.5.
fn wedge_2d() -> ExperimentConfig {
    let phi = std::f64::consts::FRAC_PI_3;
    let (s, c) = (phi.sin(), phi.cos());
    let coeff = 0.5;
    let normals = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -c, s]);
    // q_1 along the tangent of face 1, q_2 along the tangent of face 2 with
    // the matched coefficient required by skew-symmetry
    let reflections = DMatrix::from_row_slice(2, 2, &[0.0, coeff, -coeff * s, -coeff * c]);
    let data = ReflectionData::new(
        normals,
        reflections,
        DVector::zeros(2),
        DVector::from_vec(vec![1.0, 1.0]),
        DMatrix::identity(2, 2),
        DomainKind::GeneralDomain,
    )
    .expect("valid dimensions");
    ExperimentConfig::new(
        data,
        exponential_spec(),
        sim(1e-3, 200.0, 20.0, vec![1.0, 1.0], 8, 10),
    )
}

/// 2D orthant with oblique reflection (q12 = 0.3, q21 = 0.5) and the
/// correlated covariance a12 = 0.4 demanded by the modified skew-symmetry
/// condition.
fn orthant_hr() -> ExperimentConfig {
    let reflections = DMatrix::from_row_slice(2, 2, &[0.0, 0.3, 0.5, 0.0]);
    let covariance = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]);
    let data = ReflectionData::orthant(
        reflections,
        DVector::from_vec(vec![1.0, 1.0]),
        covariance,
    )
    .expect("valid dimensions");
    ExperimentConfig::new(
        data,
        exponential_spec(),
        sim(1e-3, 200.0, 20.0, vec![1.0, 1.0], 8, 10),
    )
}

/// TASEP-like particle system with soft exclusion: n particles with
/// stationary-linear drifts; the reflection data describes the gap process.
fn tasep(n: usize) -> ExperimentConfig {
    let nu: Vec<f64> = (0..n).map(|j| (n - 1 - j) as f64).collect();
    let pc = ParticleConfig::new(nu.clone(), Potential::exponential()).expect("valid particle data");
    let data = gap_data(&pc).expect("valid gap data");
    // sim.x0 lives in gap coordinates (dimension n-1); the particle
    // positions used by the `particles` command are a separate option
    let gaps_x0 = vec![2.0; n - 1];
    let particle_x0: Vec<f64> = (0..n).map(|j| -2.0 * j as f64).collect();
    ExperimentConfig::new(
        data,
        exponential_spec(),
        sim(1e-3, 400.0, 40.0, gaps_x0, 8, 10),
    )
    .with_option("nu", json!(nu))
    .with_option("particle_x0", json!(particle_x0))
}

/// The word-indexed instance for the longest element of the rank-2 symmetric
/// group action (word a1 a2 a1), ambient drift (-1, 0, 1), giving marginal
/// parameters theta = (1, 2, 1).
fn pitman_a2_longest() -> ExperimentConfig {
    // gamma sequence e1-e2, e2-e3, e1-e2; A is its Gram matrix, Q its
    // strictly upper part
    let covariance = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 2.0, -1.0, 2.0, -1.0, 2.0, -1.0, 2.0]);
    let reflections = DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 2.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0]);
    let data = ReflectionData::orthant(
        reflections,
        DVector::from_vec(vec![1.0, 1.0, 1.0]),
        covariance,
    )
    .expect("valid dimensions");
    ExperimentConfig::new(
        data,
        exponential_spec(),
        sim(1e-3, 2000.0, 100.0, vec![1.0, 1.0, 1.0], 8, 100),
    )
    .with_option("word", json!("a2-longest"))
    .with_option("ambient_mu", json!([-1.0, 0.0, 1.0]))
}

/// The alternating one-dimensional word (gamma, -gamma) driving the
/// iterated queue construction; ambient drift -1/sqrt(2) gives marginal
/// parameters theta = (1, 1).
fn alternating_1d() -> ExperimentConfig {
    let covariance = DMatrix::from_row_slice(2, 2, &[2.0, -2.0, -2.0, 2.0]);
    let reflections = DMatrix::from_row_slice(2, 2, &[0.0, -2.0, 0.0, 0.0]);
    let data = ReflectionData::orthant(
        reflections,
        DVector::from_vec(vec![1.0, -1.0]),
        covariance,
    )
    .expect("valid dimensions");
    ExperimentConfig::new(
        data,
        exponential_spec(),
        sim(1e-3, 400.0, 40.0, vec![1.0, 1.0], 8, 10),
    )
    .with_option("word", json!("alternating"))
    .with_option("ambient_mu", json!([-std::f64::consts::FRAC_1_SQRT_2]))
    .with_option("chain_depth", json!(2))
    .with_option("chain_drift", json!(1.0))
}

/// Weyl chamber for four ordered particles, reduced to the 3-dimensional
/// space of adjacent differences. The unit normals are the rows of the
/// Cholesky factor of the Gram matrix of the normalized difference
/// directions, so the geometry is isometric to the original chamber; the
/// reflection is normal (Q = 0) and the drift is rank-dependent with
/// theta = (1, 1, 1).
fn weyl_chamber_n4() -> ExperimentConfig {
    let gram = DMatrix::from_row_slice(
        3,
        3,
        &[1.0, -0.5, 0.0, -0.5, 1.0, -0.5, 0.0, -0.5, 1.0],
    );
    let normals = gram
        .clone()
        .cholesky()
        .expect("Gram matrix is positive definite")
        .l();
    let theta_over_2 = DVector::from_element(3, 0.5);
    let mu = normals.transpose() * &theta_over_2;
    // start well inside the chamber: a point with N x0 = (1, 1, 1)
    let x0_vec = normals
        .clone()
        .lu()
        .solve(&DVector::from_element(3, 1.0))
        .expect("normals invertible");
    let data = ReflectionData::new(
        normals,
        DMatrix::zeros(3, 3),
        DVector::zeros(3),
        mu,
        DMatrix::identity(3, 3),
        DomainKind::GeneralDomain,
    )
    .expect("valid dimensions");
    ExperimentConfig::new(
        data,
        exponential_spec(),
        sim(1e-3, 400.0, 40.0, x0_vec.iter().copied().collect(), 8, 10),
    )
}

/// Returns the named bundled configuration.
pub fn preset(name: &str) -> Result<ExperimentConfig, PresetError> {
    match name {
        "dufresne-1d" => Ok(dufresne_1d()),
        "wedge-2d" => Ok(wedge_2d()),
        "orthant-hr" => Ok(orthant_hr()),
        "tasep-n3" => Ok(tasep(3)),
        "tasep-n5" => Ok(tasep(5)),
        "pitman-a2-longest" => Ok(pitman_a2_longest()),
        "alternating-1d" => Ok(alternating_1d()),
        "weyl-chamber-n4" => Ok(weyl_chamber_n4()),
        other => Err(PresetError::Unknown(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exported_json_files_match_registry() {
        // regenerate with: cargo run -p grbm --example export_presets -- presets
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets");
        for name in PRESET_NAMES {
            let path = dir.join(format!("{name}.json"));
            let text = std::fs::read_to_string(&path)
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert_eq!(text, preset(name).unwrap().to_json(), "{name} out of sync");
        }
    }

    #[test]
    fn unknown_name_is_rejected() {
        assert!(preset("no-such-preset").is_err());
    }

    #[test]
    fn every_preset_validates_and_passes_skew_symmetry() {
        for name in PRESET_NAMES {
            let cfg = preset(name).unwrap();
            let report = cfg.data.validate();
            assert!(report.is_valid(), "{name}: {:?}", report.violations);
            let skew = cfg.data.skew_symmetry_defect();
            assert!(
                skew.passed,
                "{name}: max skew defect {}",
                skew.max_abs_defect
            );
            cfg.build_potential().unwrap();
            cfg.sim.validate().unwrap();
        }
    }

    #[test]
    fn dufresne_preset_is_one_dimensional_with_positive_drift() {
        let cfg = preset("dufresne-1d").unwrap();
        assert_eq!(cfg.data.dim(), 1);
        assert_eq!(cfg.data.reflections()[(0, 0)], 0.0);
        assert!(cfg.data.drift()[0] > 0.0);
    }

    #[test]
    fn weyl_chamber_has_unit_difference_normals_and_normal_reflection() {
        let cfg = preset("weyl-chamber-n4").unwrap();
        let n = cfg.data.normals();
        // rows are unit and adjacent rows have inner product -1/2, exactly
        // the geometry of normalized adjacent-difference directions
        for j in 0..3 {
            approx::assert_abs_diff_eq!(n.row(j).norm(), 1.0, epsilon = 1e-12);
        }
        for j in 0..2 {
            approx::assert_abs_diff_eq!(n.row(j).dot(&n.row(j + 1)), -0.5, epsilon = 1e-12);
        }
        approx::assert_abs_diff_eq!(n.row(0).dot(&n.row(2)), 0.0, epsilon = 1e-12);
        assert_eq!(cfg.data.reflections().amax(), 0.0);
        // rank-dependent drift: theta parameters are (1, 1, 1)
        let theta = cfg.data.theta_parameters().unwrap();
        for t in theta.iter() {
            approx::assert_abs_diff_eq!(*t, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn tasep_presets_have_unit_gap_drift() {
        for (name, d) in [("tasep-n3", 2), ("tasep-n5", 4)] {
            let cfg = preset(name).unwrap();
            assert_eq!(cfg.data.dim(), d);
            for m in cfg.data.drift().iter() {
                assert_eq!(*m, 1.0);
            }
            assert_eq!(cfg.data.alpha(), 2.0);
        }
    }

    #[test]
    fn word_presets_have_positive_integrability_parameters() {
        for name in ["pitman-a2-longest", "alternating-1d"] {
            let cfg = preset(name).unwrap();
            let delta = cfg.data.delta_drift().unwrap();
            for d in delta.iter() {
                assert!(*d > 0.0, "{name}: delta {:?}", delta);
            }
        }
        let delta = preset("pitman-a2-longest").unwrap().data.delta_drift().unwrap();
        approx::assert_abs_diff_eq!(delta[0], 1.0, epsilon = 1e-12);
        approx::assert_abs_diff_eq!(delta[1], 2.0, epsilon = 1e-12);
        approx::assert_abs_diff_eq!(delta[2], 1.0, epsilon = 1e-12);
    }
}
