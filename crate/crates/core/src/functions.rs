//! Piecewise polynomial trajectories and the patchwise reconstructions that
//! produce the estimator's weight functions.
//!
//! Solutions of the forward problems are continuous piecewise linear
//! ([`PiecewiseLinearFn`]); adjoint solutions are piecewise constant
//! ([`PiecewiseConstantFn`]). The dual-weighted estimator needs approximations
//! of the *next higher* polynomial order, built patchwise from two adjacent
//! intervals at a time:
//!
//! - [`PatchQuadraticFn`]: the quadratic through the three nodal values of a
//!   patch — reconstructs a piecewise linear function;
//! - [`PatchLinearFn`]: the line through the two interval midpoint values of a
//!   patch — reconstructs a piecewise constant function.
//!
//! Both reconstructions interpolate their source at the sample points, so the
//! weight `reconstruction - source` vanishes there; everything the estimator
//! sees lives between the samples.

use nalgebra::DVector;

use crate::error::{Error, Result};

fn check_times(times: &[f64]) -> Result<()> {
    if times.len() < 2 {
        return Err(Error::Structure("a time mesh needs at least two nodes".into()));
    }
    for w in times.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::Structure(format!(
                "time nodes not strictly increasing at {}..{}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

fn locate(times: &[f64], t: f64) -> usize {
    if t <= times[0] {
        return 0;
    }
    let idx = times.partition_point(|&x| x < t);
    idx.saturating_sub(1).min(times.len() - 2)
}

/// Continuous piecewise linear function with one value per time node.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearFn {
    times: Vec<f64>,
    values: Vec<DVector<f64>>,
}

impl PiecewiseLinearFn {
    pub fn new(times: Vec<f64>, values: Vec<DVector<f64>>) -> Result<Self> {
        check_times(&times)?;
        if values.len() != times.len() {
            return Err(Error::Structure(format!(
                "{} values for {} nodes",
                values.len(),
                times.len()
            )));
        }
        let dim = values[0].len();
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::Structure("inconsistent value dimensions".into()));
        }
        Ok(Self { times, values })
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn value(&self, i: usize) -> &DVector<f64> {
        &self.values[i]
    }

    pub fn interval_count(&self) -> usize {
        self.times.len() - 1
    }

    pub fn locate(&self, t: f64) -> usize {
        locate(&self.times, t)
    }

    pub fn eval_into(&self, t: f64, out: &mut DVector<f64>) {
        let n = self.locate(t);
        let (a, b) = (self.times[n], self.times[n + 1]);
        let theta = ((t - a) / (b - a)).clamp(0.0, 1.0);
        out.copy_from(&self.values[n]);
        *out *= 1.0 - theta;
        out.axpy(theta, &self.values[n + 1], 1.0);
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.eval_into(t, &mut out);
        out
    }

    /// Constant slope on interval `n`.
    pub fn slope_into(&self, n: usize, out: &mut DVector<f64>) {
        let dt = self.times[n + 1] - self.times[n];
        out.copy_from(&self.values[n + 1]);
        out.axpy(-1.0, &self.values[n], 1.0);
        *out /= dt;
    }

    pub fn slope(&self, n: usize) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.slope_into(n, &mut out);
        out
    }

    /// Patchwise quadratic through the nodal values; needs an even interval
    /// count.
    pub fn patch_quadratic(&self) -> Result<PatchQuadraticFn> {
        if self.interval_count() % 2 != 0 {
            return Err(Error::Structure(
                "quadratic reconstruction needs an even interval count".into(),
            ));
        }
        Ok(PatchQuadraticFn {
            times: self.times.clone(),
            values: self.values.clone(),
        })
    }
}

/// Piecewise constant function: `values[n]` on the interval
/// `(times[n], times[n+1]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstantFn {
    times: Vec<f64>,
    values: Vec<DVector<f64>>,
}

impl PiecewiseConstantFn {
    pub fn new(times: Vec<f64>, values: Vec<DVector<f64>>) -> Result<Self> {
        check_times(&times)?;
        if values.len() + 1 != times.len() {
            return Err(Error::Structure(format!(
                "{} values for {} intervals",
                values.len(),
                times.len() - 1
            )));
        }
        let dim = values[0].len();
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::Structure("inconsistent value dimensions".into()));
        }
        Ok(Self { times, values })
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn value(&self, n: usize) -> &DVector<f64> {
        &self.values[n]
    }

    pub fn interval_count(&self) -> usize {
        self.values.len()
    }

    pub fn locate(&self, t: f64) -> usize {
        locate(&self.times, t)
    }

    pub fn eval(&self, t: f64) -> &DVector<f64> {
        &self.values[self.locate(t)]
    }

    /// Patchwise linear function through the interval midpoint values; needs
    /// an even interval count.
    pub fn patch_linear(&self) -> Result<PatchLinearFn> {
        if self.interval_count() % 2 != 0 {
            return Err(Error::Structure(
                "linear reconstruction needs an even interval count".into(),
            ));
        }
        let mids = self
            .times
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]))
            .collect();
        Ok(PatchLinearFn {
            times: self.times.clone(),
            mids,
            values: self.values.clone(),
        })
    }
}

/// Patchwise quadratic reconstruction of a piecewise linear function: on the
/// patch `(times[2p], times[2p+2]]` it is the parabola through the three
/// nodal values.
#[derive(Debug, Clone)]
pub struct PatchQuadraticFn {
    times: Vec<f64>,
    values: Vec<DVector<f64>>,
}

impl PatchQuadraticFn {
    fn patch_of(&self, t: f64) -> usize {
        locate(&self.times, t) / 2
    }

    /// Lagrange weights of the three patch nodes at `t`.
    fn weights(t0: f64, t1: f64, t2: f64, t: f64) -> [f64; 3] {
        [
            (t - t1) * (t - t2) / ((t0 - t1) * (t0 - t2)),
            (t - t0) * (t - t2) / ((t1 - t0) * (t1 - t2)),
            (t - t0) * (t - t1) / ((t2 - t0) * (t2 - t1)),
        ]
    }

    fn weights_deriv(t0: f64, t1: f64, t2: f64, t: f64) -> [f64; 3] {
        [
            (2.0 * t - t1 - t2) / ((t0 - t1) * (t0 - t2)),
            (2.0 * t - t0 - t2) / ((t1 - t0) * (t1 - t2)),
            (2.0 * t - t0 - t1) / ((t2 - t0) * (t2 - t1)),
        ]
    }

    fn combine_into(&self, p: usize, w: [f64; 3], out: &mut DVector<f64>) {
        out.copy_from(&self.values[2 * p]);
        *out *= w[0];
        out.axpy(w[1], &self.values[2 * p + 1], 1.0);
        out.axpy(w[2], &self.values[2 * p + 2], 1.0);
    }

    pub fn eval_into(&self, t: f64, out: &mut DVector<f64>) {
        let p = self.patch_of(t);
        let (t0, t1, t2) = (self.times[2 * p], self.times[2 * p + 1], self.times[2 * p + 2]);
        self.combine_into(p, Self::weights(t0, t1, t2, t), out);
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.values[0].len());
        self.eval_into(t, &mut out);
        out
    }

    pub fn deriv_into(&self, t: f64, out: &mut DVector<f64>) {
        let p = self.patch_of(t);
        let (t0, t1, t2) = (self.times[2 * p], self.times[2 * p + 1], self.times[2 * p + 2]);
        self.combine_into(p, Self::weights_deriv(t0, t1, t2, t), out);
    }

    pub fn deriv(&self, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.values[0].len());
        self.deriv_into(t, &mut out);
        out
    }
}

/// Patchwise linear reconstruction of a piecewise constant function: on the
/// patch `(times[2p], times[2p+2]]` it is the line through the two interval
/// midpoint values.
#[derive(Debug, Clone)]
pub struct PatchLinearFn {
    times: Vec<f64>,
    mids: Vec<f64>,
    values: Vec<DVector<f64>>,
}

impl PatchLinearFn {
    fn patch_of(&self, t: f64) -> usize {
        locate(&self.times, t) / 2
    }

    pub fn eval_into(&self, t: f64, out: &mut DVector<f64>) {
        let p = self.patch_of(t);
        let (m1, m2) = (self.mids[2 * p], self.mids[2 * p + 1]);
        let theta = (t - m1) / (m2 - m1);
        out.copy_from(&self.values[2 * p]);
        *out *= 1.0 - theta;
        out.axpy(theta, &self.values[2 * p + 1], 1.0);
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.values[0].len());
        self.eval_into(t, &mut out);
        out
    }
}
