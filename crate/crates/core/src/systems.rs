//! Problem definitions: the slow/fast system interface, the two benchmark
//! oscillators, programmatic systems for testing, and assumption checks.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A two-scale ODE system
///
/// ```text
///     y' = eps * f(y, u),        y(0) = y0,       t in (0, T],
///     u' = g(t, y, u),
/// ```
///
/// where `g` is 1-periodic in `t` and, for every frozen slow state `y` of
/// interest, the fast flow contracts onto a unique 1-periodic response. All
/// evaluation methods write into caller-provided buffers because they sit in
/// loops that run millions of times.
pub trait SlowFastSystem: Send + Sync {
    /// Slow dimension `c`.
    fn slow_dim(&self) -> usize;
    /// Fast dimension `d`.
    fn fast_dim(&self) -> usize;
    /// Scale separation `eps`.
    fn epsilon(&self) -> f64;
    /// Slow horizon `T`.
    fn horizon(&self) -> f64;
    /// Initial slow state `y0`.
    fn initial_slow(&self) -> DVector<f64>;

    /// `f(y, u)` — slow right-hand side (before the `eps` factor). `c` values.
    fn slow_rhs(&self, y: &DVector<f64>, u: &DVector<f64>, out: &mut DVector<f64>);
    /// `d f / d y` — `c x c`.
    fn slow_rhs_grad_y(&self, y: &DVector<f64>, u: &DVector<f64>, out: &mut DMatrix<f64>);
    /// `d f / d u` — `c x d`.
    fn slow_rhs_grad_u(&self, y: &DVector<f64>, u: &DVector<f64>, out: &mut DMatrix<f64>);

    /// `g(t, y, u)` — fast right-hand side, 1-periodic in `t`. `d` values.
    fn fast_rhs(&self, t: f64, y: &DVector<f64>, u: &DVector<f64>, out: &mut DVector<f64>);
    /// `d g / d y` — `d x c`.
    fn fast_rhs_grad_y(&self, t: f64, y: &DVector<f64>, u: &DVector<f64>, out: &mut DMatrix<f64>);
    /// `d g / d u` — `d x d`.
    fn fast_rhs_grad_u(&self, t: f64, y: &DVector<f64>, u: &DVector<f64>, out: &mut DMatrix<f64>);
}

/// Goal functional `J(Y) = Y_i(T)`: one component of the slow state at the
/// end of the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoalFunctional {
    component: usize,
}

impl GoalFunctional {
    pub fn terminal_component(component: usize) -> Self {
        Self { component }
    }

    pub fn component(&self) -> usize {
        self.component
    }

    pub fn evaluate(&self, terminal_slow: &DVector<f64>) -> f64 {
        terminal_slow[self.component]
    }

    /// Gradient of `J` with respect to the terminal state: the unit vector of
    /// the goal component.
    pub fn gradient(&self, slow_dim: usize) -> DVector<f64> {
        let mut e = DVector::zeros(slow_dim);
        e[self.component] = 1.0;
        e
    }
}

impl Default for GoalFunctional {
    fn default() -> Self {
        Self::terminal_component(0)
    }
}

/// The two damping coefficients the benchmark oscillator is studied with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DampingVariant {
    Half,
    ThreeFifths,
}

impl DampingVariant {
    pub fn coefficient(&self) -> f64 {
        match self {
            DampingVariant::Half => 0.5,
            DampingVariant::ThreeFifths => 0.6,
        }
    }
}

impl std::str::FromStr for DampingVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "half" | "1/2" | "0.5" => Ok(DampingVariant::Half),
            "threefifths" | "three_fifths" | "three-fifths" | "3/5" | "0.6" => {
                Ok(DampingVariant::ThreeFifths)
            }
            other => Err(Error::Config(format!("unknown damping variant '{other}'"))),
        }
    }
}

/// Which benchmark oscillator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchmarkId {
    /// Linear resonance sweep: the stiffness grows through the forcing
    /// frequency as the slow state drifts.
    Osc1,
    /// Switched oscillator: the stiffness drops sharply once the slow state
    /// passes a threshold, switching the slow forcing off.
    Osc2,
}

impl std::str::FromStr for BenchmarkId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "osc1" => Ok(BenchmarkId::Osc1),
            "osc2" => Ok(BenchmarkId::Osc2),
            other => Err(Error::Config(format!("unknown benchmark '{other}'"))),
        }
    }
}

/// Effective scale separation of both benchmarks.
const BENCHMARK_EPSILON: f64 = 4.0e-6;

/// Benchmark problems: a forced, damped oscillator whose stiffness depends on
/// a scalar slow state,
///
/// ```text
///     u1'' + delta * u1' + gamma(y) * u1 = sin(2 pi t),
/// ```
///
/// written as a first-order system in `u = (u1, u2)`, driving a scalar slow
/// equation `y' = eps * f(y, u1)`.
#[derive(Debug, Clone)]
pub struct Oscillator {
    id: BenchmarkId,
    damping: f64,
    epsilon: f64,
    horizon: f64,
}

impl Oscillator {
    pub fn osc1(variant: DampingVariant) -> Self {
        Self {
            id: BenchmarkId::Osc1,
            damping: variant.coefficient(),
            epsilon: BENCHMARK_EPSILON,
            horizon: 6.0e5,
        }
    }

    pub fn osc2() -> Self {
        Self {
            id: BenchmarkId::Osc2,
            damping: DampingVariant::Half.coefficient(),
            epsilon: BENCHMARK_EPSILON,
            horizon: 1.0e6,
        }
    }

    pub fn id(&self) -> BenchmarkId {
        self.id
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    /// Stiffness of the fast oscillator as a function of the slow state.
    pub fn gamma(&self, y: f64) -> f64 {
        match self.id {
            BenchmarkId::Osc1 => 4.0 * std::f64::consts::PI.powi(2) + 32.0 * (y - 1.0),
            BenchmarkId::Osc2 => 20.0 * (-10.0 * y + 6.0).tanh() + 21.0,
        }
    }

    fn gamma_deriv(&self, y: f64) -> f64 {
        match self.id {
            BenchmarkId::Osc1 => 32.0,
            BenchmarkId::Osc2 => -200.0 * sech2(-10.0 * y + 6.0),
        }
    }

    fn f_scalar(&self, y: f64, u1: f64) -> f64 {
        match self.id {
            BenchmarkId::Osc1 => 1.0 / ((1.0 + y) * (1.0 + 64.0 * u1 * u1)),
            BenchmarkId::Osc2 => ((500.0 * u1 * u1 - 5.0).tanh() + 1.01) / (1.0 + y),
        }
    }
}

/// `sech(x)^2`, safe against `cosh` overflow for large arguments.
fn sech2(x: f64) -> f64 {
    let c = x.cosh();
    if c.is_infinite() {
        0.0
    } else {
        let s = 1.0 / c;
        s * s
    }
}

impl SlowFastSystem for Oscillator {
    fn slow_dim(&self) -> usize {
        1
    }

    fn fast_dim(&self) -> usize {
        2
    }

    fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn initial_slow(&self) -> DVector<f64> {
        DVector::zeros(1)
    }

    fn slow_rhs(&self, y: &DVector<f64>, u: &DVector<f64>, out: &mut DVector<f64>) {
        out[0] = self.f_scalar(y[0], u[0]);
    }

    fn slow_rhs_grad_y(&self, y: &DVector<f64>, u: &DVector<f64>, out: &mut DMatrix<f64>) {
        let (y, u1) = (y[0], u[0]);
        out[(0, 0)] = match self.id {
            BenchmarkId::Osc1 => -1.0 / ((1.0 + y).powi(2) * (1.0 + 64.0 * u1 * u1)),
            BenchmarkId::Osc2 => -((500.0 * u1 * u1 - 5.0).tanh() + 1.01) / (1.0 + y).powi(2),
        };
    }

    fn slow_rhs_grad_u(&self, y: &DVector<f64>, u: &DVector<f64>, out: &mut DMatrix<f64>) {
        let (y, u1) = (y[0], u[0]);
        out[(0, 0)] = match self.id {
            BenchmarkId::Osc1 => {
                let den = 1.0 + 64.0 * u1 * u1;
                -128.0 * u1 / ((1.0 + y) * den * den)
            }
            BenchmarkId::Osc2 => 1000.0 * u1 * sech2(500.0 * u1 * u1 - 5.0) / (1.0 + y),
        };
        out[(0, 1)] = 0.0;
    }

    fn fast_rhs(&self, t: f64, y: &DVector<f64>, u: &DVector<f64>, out: &mut DVector<f64>) {
        out[0] = u[1];
        out[1] = -self.gamma(y[0]) * u[0] - self.damping * u[1]
            + (2.0 * std::f64::consts::PI * t).sin();
    }

    fn fast_rhs_grad_y(&self, _t: f64, y: &DVector<f64>, u: &DVector<f64>, out: &mut DMatrix<f64>) {
        out[(0, 0)] = 0.0;
        out[(1, 0)] = -self.gamma_deriv(y[0]) * u[0];
    }

    fn fast_rhs_grad_u(&self, _t: f64, y: &DVector<f64>, _u: &DVector<f64>, out: &mut DMatrix<f64>) {
        out[(0, 0)] = 0.0;
        out[(0, 1)] = 1.0;
        out[(1, 0)] = -self.gamma(y[0]);
        out[(1, 1)] = -self.damping;
    }
}

/// Builds a benchmark system. The damping variant is only consulted for
/// `Osc1` (its resolved default is `ThreeFifths`); `Osc2` always uses 1/2.
pub fn make_benchmark(id: BenchmarkId, variant: Option<DampingVariant>) -> Oscillator {
    match id {
        BenchmarkId::Osc1 => Oscillator::osc1(variant.unwrap_or(DampingVariant::ThreeFifths)),
        BenchmarkId::Osc2 => Oscillator::osc2(),
    }
}

type SlowFn = dyn Fn(&DVector<f64>, &DVector<f64>, &mut DVector<f64>) + Send + Sync;
type SlowGradFn = dyn Fn(&DVector<f64>, &DVector<f64>, &mut DMatrix<f64>) + Send + Sync;
type FastFn = dyn Fn(f64, &DVector<f64>, &DVector<f64>, &mut DVector<f64>) + Send + Sync;
type FastGradFn = dyn Fn(f64, &DVector<f64>, &DVector<f64>, &mut DMatrix<f64>) + Send + Sync;

/// A slow/fast system assembled from closures; used to define manufactured
/// problems in tests and examples without a dedicated type.
pub struct FnSystem {
    slow_dim: usize,
    fast_dim: usize,
    epsilon: f64,
    horizon: f64,
    initial: DVector<f64>,
    f: Box<SlowFn>,
    f_grad_y: Box<SlowGradFn>,
    f_grad_u: Box<SlowGradFn>,
    g: Box<FastFn>,
    g_grad_y: Box<FastGradFn>,
    g_grad_u: Box<FastGradFn>,
}

impl FnSystem {
    /// Starts a builder for a `c`-dimensional slow / `d`-dimensional fast
    /// system. Slow and fast parts must both be supplied before `build`.
    pub fn builder(slow_dim: usize, fast_dim: usize) -> FnSystemBuilder {
        FnSystemBuilder {
            slow_dim,
            fast_dim,
            epsilon: 1.0,
            horizon: 1.0,
            initial: None,
            slow: None,
            fast: None,
        }
    }
}

pub struct FnSystemBuilder {
    slow_dim: usize,
    fast_dim: usize,
    epsilon: f64,
    horizon: f64,
    initial: Option<DVector<f64>>,
    #[allow(clippy::type_complexity)]
    slow: Option<(Box<SlowFn>, Box<SlowGradFn>, Box<SlowGradFn>)>,
    #[allow(clippy::type_complexity)]
    fast: Option<(Box<FastFn>, Box<FastGradFn>, Box<FastGradFn>)>,
}

impl FnSystemBuilder {
    pub fn epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn initial(mut self, y0: DVector<f64>) -> Self {
        self.initial = Some(y0);
        self
    }

    /// Slow right-hand side `f(y, u)` with its gradients in `y` and `u`.
    pub fn slow(
        mut self,
        f: impl Fn(&DVector<f64>, &DVector<f64>, &mut DVector<f64>) + Send + Sync + 'static,
        grad_y: impl Fn(&DVector<f64>, &DVector<f64>, &mut DMatrix<f64>) + Send + Sync + 'static,
        grad_u: impl Fn(&DVector<f64>, &DVector<f64>, &mut DMatrix<f64>) + Send + Sync + 'static,
    ) -> Self {
        self.slow = Some((Box::new(f), Box::new(grad_y), Box::new(grad_u)));
        self
    }

    /// Fast right-hand side `g(t, y, u)` with its gradients in `y` and `u`.
    pub fn fast(
        mut self,
        g: impl Fn(f64, &DVector<f64>, &DVector<f64>, &mut DVector<f64>) + Send + Sync + 'static,
        grad_y: impl Fn(f64, &DVector<f64>, &DVector<f64>, &mut DMatrix<f64>) + Send + Sync + 'static,
        grad_u: impl Fn(f64, &DVector<f64>, &DVector<f64>, &mut DMatrix<f64>) + Send + Sync + 'static,
    ) -> Self {
        self.fast = Some((Box::new(g), Box::new(grad_y), Box::new(grad_u)));
        self
    }

    pub fn build(self) -> Result<FnSystem> {
        let slow = self
            .slow
            .ok_or_else(|| Error::Config("FnSystem: slow part missing".into()))?;
        let fast = self
            .fast
            .ok_or_else(|| Error::Config("FnSystem: fast part missing".into()))?;
        let initial = self.initial.unwrap_or_else(|| DVector::zeros(self.slow_dim));
        if initial.len() != self.slow_dim {
            return Err(Error::Config(format!(
                "FnSystem: initial state has dimension {}, expected {}",
                initial.len(),
                self.slow_dim
            )));
        }
        Ok(FnSystem {
            slow_dim: self.slow_dim,
            fast_dim: self.fast_dim,
            epsilon: self.epsilon,
            horizon: self.horizon,
            initial,
            f: slow.0,
            f_grad_y: slow.1,
            f_grad_u: slow.2,
            g: fast.0,
            g_grad_y: fast.1,
            g_grad_u: fast.2,
        })
    }
}

impl SlowFastSystem for FnSystem {
    fn slow_dim(&self) -> usize {
        self.slow_dim
    }

    fn fast_dim(&self) -> usize {
        self.fast_dim
    }

    fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn initial_slow(&self) -> DVector<f64> {
        self.initial.clone()
    }

    fn slow_rhs(&self, y: &DVector<f64>, u: &DVector<f64>, out: &mut DVector<f64>) {
        (self.f)(y, u, out)
    }

    fn slow_rhs_grad_y(&self, y: &DVector<f64>, u: &DVector<f64>, out: &mut DMatrix<f64>) {
        (self.f_grad_y)(y, u, out)
    }

    fn slow_rhs_grad_u(&self, y: &DVector<f64>, u: &DVector<f64>, out: &mut DMatrix<f64>) {
        (self.f_grad_u)(y, u, out)
    }

    fn fast_rhs(&self, t: f64, y: &DVector<f64>, u: &DVector<f64>, out: &mut DVector<f64>) {
        (self.g)(t, y, u, out)
    }

    fn fast_rhs_grad_y(&self, t: f64, y: &DVector<f64>, u: &DVector<f64>, out: &mut DMatrix<f64>) {
        (self.g_grad_y)(t, y, u, out)
    }

    fn fast_rhs_grad_u(&self, t: f64, y: &DVector<f64>, u: &DVector<f64>, out: &mut DMatrix<f64>) {
        (self.g_grad_u)(t, y, u, out)
    }
}

/// Worst-case diagnostics over a sample set; see [`check_assumptions`].
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    /// `max |f(y, u)|` over the samples.
    pub max_slow_rhs_norm: f64,
    /// Largest difference quotient of `f` in the slow argument.
    pub slow_lipschitz_y: f64,
    /// Largest difference quotient of `f` in the fast argument.
    pub slow_lipschitz_u: f64,
    /// Largest real part of any eigenvalue of `dg/du` over the samples; the
    /// averaging setup needs this negative (uniform fast contraction).
    pub max_fast_eig_real: f64,
    /// `max |g(t+1) - g(t)|`: deviation of the fast right-hand side from
    /// 1-periodicity.
    pub fast_periodicity_defect: f64,
    /// Worst relative mismatch between the analytic gradients and central
    /// finite differences.
    pub max_gradient_defect: f64,
}

impl AssumptionReport {
    /// True when the sampled system looks like a well-posed averaging
    /// problem: contracting fast flow, periodic forcing, consistent
    /// gradients.
    pub fn is_sound(&self) -> bool {
        self.max_fast_eig_real < 0.0
            && self.fast_periodicity_defect <= 1e-10
            && self.max_gradient_defect <= 1e-4
    }
}

/// Samples the structural assumptions of the averaging method over the given
/// slow and fast states (crossed with an internal grid of phases `t`).
pub fn check_assumptions(
    system: &dyn SlowFastSystem,
    y_samples: &[DVector<f64>],
    u_samples: &[DVector<f64>],
) -> Result<AssumptionReport> {
    let c = system.slow_dim();
    let d = system.fast_dim();
    if y_samples.is_empty() || u_samples.is_empty() {
        return Err(Error::Usage("check_assumptions needs nonempty sample sets".into()));
    }
    let t_samples: Vec<f64> = (0..8).map(|i| i as f64 / 8.0).collect();

    let mut f_val = DVector::zeros(c);
    let mut f_other = DVector::zeros(c);
    let mut g_val = DVector::zeros(d);
    let mut g_other = DVector::zeros(d);

    let mut max_norm: f64 = 0.0;
    let mut lip_y: f64 = 0.0;
    let mut lip_u: f64 = 0.0;
    for y in y_samples {
        for u in u_samples {
            system.slow_rhs(y, u, &mut f_val);
            max_norm = max_norm.max(f_val.norm());
            for y2 in y_samples {
                let dist = (y2 - y).norm();
                if dist > 1e-12 {
                    system.slow_rhs(y2, u, &mut f_other);
                    lip_y = lip_y.max((&f_other - &f_val).norm() / dist);
                }
            }
            for u2 in u_samples {
                let dist = (u2 - u).norm();
                if dist > 1e-12 {
                    system.slow_rhs(y, u2, &mut f_other);
                    lip_u = lip_u.max((&f_other - &f_val).norm() / dist);
                }
            }
        }
    }

    let mut eig_max = f64::NEG_INFINITY;
    let mut periodicity: f64 = 0.0;
    let mut gu = DMatrix::zeros(d, d);
    for y in y_samples {
        for u in u_samples {
            for &t in &t_samples {
                system.fast_rhs_grad_u(t, y, u, &mut gu);
                for lambda in gu.clone().complex_eigenvalues().iter() {
                    eig_max = eig_max.max(lambda.re);
                }
                system.fast_rhs(t, y, u, &mut g_val);
                system.fast_rhs(t + 1.0, y, u, &mut g_other);
                periodicity = periodicity.max((&g_other - &g_val).norm());
            }
        }
    }

    let mut grad_defect: f64 = 0.0;
    for y in y_samples {
        for u in u_samples {
            for &t in &t_samples[..2] {
                grad_defect = grad_defect.max(gradient_defect(system, t, y, u));
            }
        }
    }

    Ok(AssumptionReport {
        max_slow_rhs_norm: max_norm,
        slow_lipschitz_y: lip_y,
        slow_lipschitz_u: lip_u,
        max_fast_eig_real: eig_max,
        fast_periodicity_defect: periodicity,
        max_gradient_defect: grad_defect,
    })
}

/// Worst relative error of the four analytic Jacobians against central
/// differences at one sample point.
fn gradient_defect(system: &dyn SlowFastSystem, t: f64, y: &DVector<f64>, u: &DVector<f64>) -> f64 {
    let c = system.slow_dim();
    let d = system.fast_dim();
    let delta = 1e-6;
    let mut worst: f64 = 0.0;

    let mut plus = DVector::zeros(c);
    let mut minus = DVector::zeros(c);
    let mut grad = DMatrix::zeros(c, c);
    system.slow_rhs_grad_y(y, u, &mut grad);
    for j in 0..c {
        let mut yp = y.clone();
        let mut ym = y.clone();
        yp[j] += delta;
        ym[j] -= delta;
        system.slow_rhs(&yp, u, &mut plus);
        system.slow_rhs(&ym, u, &mut minus);
        for i in 0..c {
            let fd = (plus[i] - minus[i]) / (2.0 * delta);
            worst = worst.max((grad[(i, j)] - fd).abs() / (1.0 + fd.abs()));
        }
    }
    let mut grad = DMatrix::zeros(c, d);
    system.slow_rhs_grad_u(y, u, &mut grad);
    for j in 0..d {
        let mut up = u.clone();
        let mut um = u.clone();
        up[j] += delta;
        um[j] -= delta;
        system.slow_rhs(y, &up, &mut plus);
        system.slow_rhs(y, &um, &mut minus);
        for i in 0..c {
            let fd = (plus[i] - minus[i]) / (2.0 * delta);
            worst = worst.max((grad[(i, j)] - fd).abs() / (1.0 + fd.abs()));
        }
    }

    let mut plus = DVector::zeros(d);
    let mut minus = DVector::zeros(d);
    let mut grad = DMatrix::zeros(d, c);
    system.fast_rhs_grad_y(t, y, u, &mut grad);
    for j in 0..c {
        let mut yp = y.clone();
        let mut ym = y.clone();
        yp[j] += delta;
        ym[j] -= delta;
        system.fast_rhs(t, &yp, u, &mut plus);
        system.fast_rhs(t, &ym, u, &mut minus);
        for i in 0..d {
            let fd = (plus[i] - minus[i]) / (2.0 * delta);
            worst = worst.max((grad[(i, j)] - fd).abs() / (1.0 + fd.abs()));
        }
    }
    let mut grad = DMatrix::zeros(d, d);
    system.fast_rhs_grad_u(t, y, u, &mut grad);
    for j in 0..d {
        let mut up = u.clone();
        let mut um = u.clone();
        up[j] += delta;
        um[j] -= delta;
        system.fast_rhs(t, y, &up, &mut plus);
        system.fast_rhs(t, y, &um, &mut minus);
        for i in 0..d {
            let fd = (plus[i] - minus[i]) / (2.0 * delta);
            worst = worst.max((grad[(i, j)] - fd).abs() / (1.0 + fd.abs()));
        }
    }
    worst
}
