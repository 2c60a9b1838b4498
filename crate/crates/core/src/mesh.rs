//! Macro meshes with a per-interval micro step, and their refinement rules.
//!
//! A macro mesh partitions the slow horizon `0 = T_0 < T_1 < ... < T_N = T`
//! and attaches to every interval `I_n = (T_{n-1}, T_n]` a micro step `k_n`
//! that tiles the unit period of the fast problem. Two structural invariants
//! are maintained at all times because the estimator's weight reconstruction
//! needs them:
//!
//! - intervals come in patch pairs: `N` is even and the two intervals of the
//!   pair `(I_{2p}, I_{2p+1})` have equal width;
//! - every micro step divides the period into an even number of steps, so
//!   micro intervals pair up the same way.
//!
//! Refinement preserves both invariants: splitting a macro interval also
//! splits its patch partner (each keeping its own micro step), and micro
//! refinement halves `k_n`, doubling the (even) micro step count.

use crate::error::{Error, Result};

/// Relative tolerance for "these two step sizes are equal" checks.
const STEP_EQ_TOL: f64 = 1e-12;

/// How to refine a single macro interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineMode {
    /// Split the interval (and its patch partner) in half.
    Macro,
    /// Halve the interval's micro step.
    Micro,
}

/// A uniform grid on the unit period of the fast problem.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroGrid {
    step: f64,
    intervals: usize,
}

impl MicroGrid {
    /// Builds the grid with step `k`; `1/k` must be an even integer.
    pub fn new(step: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::Config(format!("micro step must be positive, got {step}")));
        }
        let m = (1.0 / step).round();
        if m < 2.0 || (m * step - 1.0).abs() > 1e-10 {
            return Err(Error::Config(format!(
                "micro step {step} does not tile the unit period"
            )));
        }
        let intervals = m as usize;
        if intervals % 2 != 0 {
            return Err(Error::Config(format!(
                "micro step {step} gives an odd number of steps ({intervals}); patch pairs need an even count"
            )));
        }
        Ok(Self { step, intervals })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    /// The `i`-th node; `node(0) = 0` and `node(intervals) = 1` exactly.
    pub fn node(&self, i: usize) -> f64 {
        if i == self.intervals {
            1.0
        } else {
            i as f64 * self.step
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.intervals).map(|i| self.node(i)).collect()
    }

    pub fn halved(&self) -> Self {
        Self {
            step: 0.5 * self.step,
            intervals: 2 * self.intervals,
        }
    }
}

/// Partition of the slow horizon with per-interval micro steps.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroMesh {
    nodes: Vec<f64>,
    micro_steps: Vec<f64>,
}

impl MacroMesh {
    /// Uniform mesh: `horizon/macro_step` intervals (must be an even count),
    /// all carrying the same micro step.
    pub fn uniform(horizon: f64, macro_step: f64, micro_step: f64) -> Result<Self> {
        if !(horizon > 0.0) || !(macro_step > 0.0) {
            return Err(Error::Config(format!(
                "horizon and macro step must be positive, got T={horizon}, K={macro_step}"
            )));
        }
        let n = (horizon / macro_step).round();
        if n < 2.0 || (n * macro_step - horizon).abs() > 1e-9 * horizon {
            return Err(Error::Config(format!(
                "macro step {macro_step} does not tile the horizon {horizon}"
            )));
        }
        let n = n as usize;
        if n % 2 != 0 {
            return Err(Error::Config(format!(
                "macro step {macro_step} gives an odd interval count ({n}); patch pairs need an even count"
            )));
        }
        let nodes = (0..=n)
            .map(|i| if i == n { horizon } else { i as f64 * macro_step })
            .collect();
        let mesh = Self {
            nodes,
            micro_steps: vec![micro_step; n],
        };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Builds a mesh from explicit nodes and per-interval micro steps.
    pub fn from_parts(nodes: Vec<f64>, micro_steps: Vec<f64>) -> Result<Self> {
        let mesh = Self { nodes, micro_steps };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Checks every structural invariant; cheap enough to call after any edit.
    pub fn validate(&self) -> Result<()> {
        let n = self.micro_steps.len();
        if self.nodes.len() != n + 1 {
            return Err(Error::Structure(format!(
                "{} nodes for {} intervals",
                self.nodes.len(),
                n
            )));
        }
        if n < 2 || n % 2 != 0 {
            return Err(Error::Structure(format!(
                "interval count {n} is not an even number >= 2"
            )));
        }
        for w in self.nodes.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Structure(format!(
                    "nodes not strictly increasing at {}..{}",
                    w[0], w[1]
                )));
            }
        }
        for p in 0..n / 2 {
            let a = self.width(2 * p);
            let b = self.width(2 * p + 1);
            if (a - b).abs() > STEP_EQ_TOL * a.max(b) {
                return Err(Error::Structure(format!(
                    "patch pair {p} has unequal widths {a} and {b}"
                )));
            }
        }
        for (i, &k) in self.micro_steps.iter().enumerate() {
            MicroGrid::new(k).map_err(|e| {
                Error::Structure(format!("interval {i} carries an invalid micro step: {e}"))
            })?;
        }
        Ok(())
    }

    pub fn interval_count(&self) -> usize {
        self.micro_steps.len()
    }

    pub fn horizon(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Endpoints `(T_{n-1}, T_n]` of interval `n` (0-based).
    pub fn interval(&self, n: usize) -> (f64, f64) {
        (self.nodes[n], self.nodes[n + 1])
    }

    pub fn width(&self, n: usize) -> f64 {
        self.nodes[n + 1] - self.nodes[n]
    }

    pub fn micro_step(&self, n: usize) -> f64 {
        self.micro_steps[n]
    }

    pub fn micro_steps(&self) -> &[f64] {
        &self.micro_steps
    }

    pub fn micro_grid(&self, n: usize) -> MicroGrid {
        MicroGrid::new(self.micro_steps[n]).expect("validated mesh carries valid micro steps")
    }

    /// The other interval of `n`'s patch pair.
    pub fn patch_partner(&self, n: usize) -> usize {
        n ^ 1
    }

    /// Index of the interval containing `t` under the `(T_{n-1}, T_n]`
    /// convention, clamped to the mesh.
    pub fn locate(&self, t: f64) -> usize {
        if t <= self.nodes[0] {
            return 0;
        }
        let idx = self.nodes.partition_point(|&x| x < t);
        idx.saturating_sub(1).min(self.interval_count() - 1)
    }

    /// Refines a single interval, preserving the patch invariants. `Macro`
    /// splits interval `n` and its patch partner (micro steps inherited
    /// unchanged); `Micro` halves `k_n` and leaves the nodes alone.
    pub fn refine(&self, n: usize, mode: RefineMode) -> Result<Self> {
        if n >= self.interval_count() {
            return Err(Error::Usage(format!(
                "refine: interval {n} out of range (mesh has {})",
                self.interval_count()
            )));
        }
        let count = self.interval_count();
        let mut macro_flags = vec![false; count];
        let mut micro_flags = vec![false; count];
        match mode {
            RefineMode::Macro => macro_flags[n] = true,
            RefineMode::Micro => micro_flags[n] = true,
        }
        self.refine_many(&macro_flags, &micro_flags)
    }

    /// Applies a batch of refinement flags in one rebuild. A macro flag on
    /// either member of a patch pair splits both members; micro flags act on
    /// their own interval only.
    pub fn refine_many(&self, macro_flags: &[bool], micro_flags: &[bool]) -> Result<Self> {
        let count = self.interval_count();
        if macro_flags.len() != count || micro_flags.len() != count {
            return Err(Error::Usage(format!(
                "refine_many: flag vectors must have length {count}"
            )));
        }
        let mut nodes = Vec::with_capacity(self.nodes.len() + 2);
        let mut micro_steps = Vec::with_capacity(count + 2);
        nodes.push(self.nodes[0]);
        for p in 0..count / 2 {
            let split = macro_flags[2 * p] || macro_flags[2 * p + 1];
            for i in [2 * p, 2 * p + 1] {
                let (a, b) = self.interval(i);
                let k = if micro_flags[i] {
                    0.5 * self.micro_steps[i]
                } else {
                    self.micro_steps[i]
                };
                if split {
                    let mid = 0.5 * (a + b);
                    nodes.push(mid);
                    nodes.push(b);
                    micro_steps.push(k);
                    micro_steps.push(k);
                } else {
                    nodes.push(b);
                    micro_steps.push(k);
                }
            }
        }
        let refined = Self { nodes, micro_steps };
        refined.validate()?;
        Ok(refined)
    }
}
