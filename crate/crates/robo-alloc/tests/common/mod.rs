//! Shared market fixtures for the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use robo_alloc::linalg::{covariance_from_vols, symmetric_from_lower};
use robo_alloc::mvo_core::MvoInputs;

pub fn pct(values: &[f64]) -> DVector<f64> {
    DVector::from_iterator(values.len(), values.iter().map(|v| v / 100.0))
}

pub fn corr_from_lower_pct(rows: &[&[f64]]) -> DMatrix<f64> {
    symmetric_from_lower(rows).map(|v| v / 100.0)
}

pub fn uniform_corr(n: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { rho })
}

/// Four-asset universe with moderate positive correlations.
pub fn example1_parts() -> (DVector<f64>, DVector<f64>, DMatrix<f64>) {
    let mu = pct(&[7.0, 8.0, 9.0, 10.0]);
    let vols = pct(&[15.0, 18.0, 20.0, 25.0]);
    let corr = corr_from_lower_pct(&[&[100.0], &[50.0, 100.0], &[50.0, 50.0, 100.0], &[60.0, 50.0, 40.0, 100.0]]);
    (mu, vols, corr)
}

pub fn inputs(mu: DVector<f64>, vols: &DVector<f64>, corr: &DMatrix<f64>, r: f64) -> MvoInputs {
    MvoInputs::new(mu, covariance_from_vols(vols, corr), r).expect("valid fixture")
}

pub fn example1() -> MvoInputs {
    let (mu, vols, corr) = example1_parts();
    inputs(mu, &vols, &corr, 0.0)
}

/// Four-asset universe with a strongly negatively correlated pair.
pub fn example2() -> MvoInputs {
    let mu = pct(&[4.0, 5.0, 9.0, 10.0]);
    let vols = pct(&[15.0, 18.0, 20.0, 25.0]);
    let corr = corr_from_lower_pct(&[&[100.0], &[70.0, 100.0], &[10.0, 10.0, 100.0], &[-20.0, -20.0, -70.0, 100.0]]);
    inputs(mu, &vols, &corr, 0.0)
}

pub fn example2_anchor() -> DVector<f64> {
    pct(&[40.0, 30.0, 20.0, 10.0])
}

/// Nine asset classes of a strategic allocation study (risk-free rate 3%).
pub fn nine_asset() -> MvoInputs {
    let mu = pct(&[4.2, 3.8, 5.3, 10.4, 9.2, 8.6, 5.3, 11.0, 8.8]);
    let vols = pct(&[5.0, 5.0, 7.0, 10.0, 15.0, 15.0, 15.0, 18.0, 30.0]);
    let corr = corr_from_lower_pct(&[
        &[100.0],
        &[80.0, 100.0],
        &[60.0, 40.0, 100.0],
        &[-20.0, -20.0, 50.0, 100.0],
        &[-10.0, -20.0, 30.0, 60.0, 100.0],
        &[-20.0, -10.0, 20.0, 60.0, 90.0, 100.0],
        &[-20.0, -20.0, 20.0, 50.0, 70.0, 60.0, 100.0],
        &[-20.0, -20.0, 30.0, 60.0, 70.0, 70.0, 70.0, 100.0],
        &[0.0, 0.0, 10.0, 20.0, 20.0, 20.0, 30.0, 30.0, 100.0],
    ]);
    inputs(mu, &vols, &corr, 0.03)
}

pub const TEN_ASSET_LABELS: [&str; 10] = [
    "US Sovereign",
    "Euro Sovereign",
    "US IG",
    "EMU IG",
    "US HY",
    "EM Bonds",
    "US Equities",
    "Europe Equities",
    "Japan Equities",
    "EM Equities",
];

/// Covariance of a ten-class multi-asset universe (bonds then equities).
pub fn ten_asset_sigma() -> DMatrix<f64> {
    let vols = pct(&[9.2, 7.0, 9.4, 7.6, 10.1, 7.6, 16.1, 20.5, 24.3, 17.8]);
    let corr = corr_from_lower_pct(&[
        &[100.0],
        &[17.7, 100.0],
        &[98.1, 19.4, 100.0],
        &[16.5, 99.5, 18.1, 100.0],
        &[71.1, 2.4, 76.3, 2.1, 100.0],
        &[85.9, 12.7, 87.6, 11.8, 89.1, 100.0],
        &[34.5, 0.7, 38.1, 1.3, 68.8, 57.8, 100.0],
        &[-13.2, 2.8, -4.0, 3.6, 41.0, 18.2, 59.5, 100.0],
        &[20.3, 2.0, 27.6, 0.8, 21.6, 25.3, 8.0, 15.6, 100.0],
        &[16.6, 10.2, 26.0, 10.5, 57.2, 44.6, 54.3, 67.7, 42.9, 100.0],
    ]);
    covariance_from_vols(&vols, &corr)
}

pub fn equal_weights(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0 / n as f64)
}

/// Largest absolute difference, in percentage points, between a vector and printed percentages.
pub fn gap_pp(actual: &DVector<f64>, printed_pct: &[f64]) -> f64 {
    assert_eq!(actual.len(), printed_pct.len());
    actual.iter().zip(printed_pct).map(|(a, p)| (a * 100.0 - p).abs()).fold(0.0, f64::max)
}
