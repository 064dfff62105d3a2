//! Fixed-step method-of-steps integration for DDEs with one constant delay,
//!
//! ```text
//! h'(t) = F(t, h(t), h(t - τ)),   h(t0 + θ) = φ(θ) for θ ∈ [-τ, 0].
//! ```
//!
//! Every accepted node stores the state and the right-hand side evaluated
//! there. Delayed arguments that fall between nodes are served by the cubic
//! Hermite interpolant of those pairs, which keeps RK4 at high order without
//! adaptive stepping.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;

use crate::cells::{CellParams, Gate};
use crate::numerics::{matvec_acc, operator_norm, sigmoid, Vector};
use crate::rng::SplitMix64;
use crate::{Error, Result};

pub type RhsFn<'a> = dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'a;
pub type InitialFn<'a> = dyn Fn(f64) -> Vec<f64> + Send + Sync + 'a;

/// A constant-delay initial value problem.
#[derive(Clone)]
pub struct DdeProblem<'a> {
    pub dim: usize,
    /// `rhs(t, h(t), h(t - τ), out)`.
    pub rhs: Arc<RhsFn<'a>>,
    pub tau: f64,
    /// `φ(θ)` for `θ ∈ [-τ, 0]`.
    pub initial: Arc<InitialFn<'a>>,
    pub t0: f64,
    pub t_end: f64,
    pub dt: f64,
}

impl fmt::Debug for DdeProblem<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DdeProblem")
            .field("dim", &self.dim)
            .field("tau", &self.tau)
            .field("t0", &self.t0)
            .field("t_end", &self.t_end)
            .field("dt", &self.dt)
            .finish_non_exhaustive()
    }
}

impl<'a> DdeProblem<'a> {
    pub fn new(
        dim: usize,
        rhs: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'a,
        tau: f64,
        initial: impl Fn(f64) -> Vec<f64> + Send + Sync + 'a,
    ) -> Self {
        Self {
            dim,
            rhs: Arc::new(rhs),
            tau,
            initial: Arc::new(initial),
            t0: 0.0,
            t_end: 1.0,
            dt: 0.1,
        }
    }

    pub fn span(mut self, t0: f64, t_end: f64) -> Self {
        self.t0 = t0;
        self.t_end = t_end;
        self
    }

    pub fn step(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    fn validate(&self) -> Result<usize> {
        if !(self.dt > 0.0) {
            return Err(Error::Invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end > self.t0) {
            return Err(Error::Invalid(format!("t_end {} must exceed t0 {}", self.t_end, self.t0)));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::Invalid(format!("tau must be non-negative, got {}", self.tau)));
        }
        if self.tau > 0.0 && self.tau < self.dt {
            return Err(Error::Invalid(format!(
                "delay {} shorter than the step {} needs extrapolation, which is unsupported",
                self.tau, self.dt
            )));
        }
        let steps = ((self.t_end - self.t0) / self.dt - 1e-9).ceil() as usize;
        Ok(steps.max(1))
    }
}

/// Grid solution with Hermite dense output.
#[derive(Clone)]
pub struct DenseSolution<'a> {
    t0: f64,
    dt: f64,
    tau: f64,
    initial: Arc<InitialFn<'a>>,
    values: Vec<Vector>,
    derivs: Vec<Vector>,
}

impl fmt::Debug for DenseSolution<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DenseSolution")
            .field("t0", &self.t0)
            .field("dt", &self.dt)
            .field("nodes", &self.values.len())
            .finish_non_exhaustive()
    }
}

impl DenseSolution<'_> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.values.len() - 1)
    }

    pub fn values(&self) -> &[Vector] {
        &self.values
    }

    pub fn derivs(&self) -> &[Vector] {
        &self.derivs
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Value at any `t ∈ [t0 - τ, t_end]`.
    pub fn eval(&self, t: f64) -> Vector {
        let mut out = vec![0.0; self.values[0].len()];
        self.eval_into(t, &mut out);
        out.into()
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        if t < self.t0 {
            out.copy_from_slice(&(self.initial)(t - self.t0));
            return;
        }
        let last = self.values.len() - 1;
        let s = (t - self.t0) / self.dt;
        let nearest = (s.round() as usize).min(last);
        if t == self.time(nearest) {
            out.copy_from_slice(&self.values[nearest]);
            return;
        }
        let mut k = (s.floor() as usize).min(last);
        if k == last {
            if last == 0 {
                out.copy_from_slice(&self.values[0]);
                return;
            }
            k = last - 1;
        }
        hermite(
            (t - self.time(k)) / self.dt,
            self.dt,
            &self.values[k],
            &self.derivs[k],
            &self.values[k + 1],
            &self.derivs[k + 1],
            out,
        );
    }

    /// Values at the grid nodes whose time lies in `[from, to)`.
    pub fn window(&self, from: f64, to: f64) -> Vec<&Vector> {
        (0..self.values.len())
            .filter(|&k| {
                let t = self.time(k);
                t >= from - 1e-9 * self.dt && t < to - 1e-9 * self.dt
            })
            .map(|k| &self.values[k])
            .collect()
    }

    fn delayed_into(&self, t: f64, stage: &[f64], out: &mut [f64]) {
        if self.tau == 0.0 {
            out.copy_from_slice(stage);
        } else {
            self.eval_into(t - self.tau, out);
        }
    }
}

/// Cubic Hermite on `[0, 1]` scaled by the interval length `h`.
fn hermite(s: f64, h: f64, y0: &[f64], f0: &[f64], y1: &[f64], f1: &[f64], out: &mut [f64]) {
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    for i in 0..out.len() {
        out[i] = h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i];
    }
}

/// One fixed step of an explicit scheme with history lookups.
pub trait Scheme: Send + Sync {
    fn name(&self) -> &'static str;

    /// Classical order of accuracy.
    fn order(&self) -> usize;

    /// Advance from node `(t, y)` by `problem.dt` into `out`.
    fn advance(&self, problem: &DdeProblem<'_>, sol: &DenseSolution<'_>, t: f64, y: &[f64], out: &mut [f64]);
}

pub struct Euler;

impl Scheme for Euler {
    fn name(&self) -> &'static str {
        "euler"
    }

    fn order(&self) -> usize {
        1
    }

    fn advance(&self, problem: &DdeProblem<'_>, sol: &DenseSolution<'_>, t: f64, y: &[f64], out: &mut [f64]) {
        let n = y.len();
        let mut lag = vec![0.0; n];
        let mut k = vec![0.0; n];
        sol.delayed_into(t, y, &mut lag);
        (problem.rhs)(t, y, &lag, &mut k);
        for i in 0..n {
            out[i] = y[i] + problem.dt * k[i];
        }
    }
}

/// Classical four-stage Runge-Kutta.
pub struct Rk4;

impl Scheme for Rk4 {
    fn name(&self) -> &'static str {
        "rk4"
    }

    fn order(&self) -> usize {
        4
    }

    fn advance(&self, problem: &DdeProblem<'_>, sol: &DenseSolution<'_>, t: f64, y: &[f64], out: &mut [f64]) {
        let n = y.len();
        let h = problem.dt;
        let mut lag = vec![0.0; n];
        let mut stage = vec![0.0; n];
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];

        sol.delayed_into(t, y, &mut lag);
        (problem.rhs)(t, y, &lag, &mut k1);

        for i in 0..n {
            stage[i] = y[i] + 0.5 * h * k1[i];
        }
        sol.delayed_into(t + 0.5 * h, &stage, &mut lag);
        (problem.rhs)(t + 0.5 * h, &stage, &lag, &mut k2);

        for i in 0..n {
            stage[i] = y[i] + 0.5 * h * k2[i];
        }
        sol.delayed_into(t + 0.5 * h, &stage, &mut lag);
        (problem.rhs)(t + 0.5 * h, &stage, &lag, &mut k3);

        for i in 0..n {
            stage[i] = y[i] + h * k3[i];
        }
        sol.delayed_into(t + h, &stage, &mut lag);
        (problem.rhs)(t + h, &stage, &lag, &mut k4);

        for i in 0..n {
            out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    Euler,
    Rk4,
}

impl SchemeKind {
    pub fn scheme(self) -> &'static dyn Scheme {
        match self {
            SchemeKind::Euler => &Euler,
            SchemeKind::Rk4 => &Rk4,
        }
    }
}

impl FromStr for SchemeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(SchemeKind::Euler),
            "rk4" => Ok(SchemeKind::Rk4),
            _ => Err(Error::Unknown {
                kind: "scheme",
                name: s.to_string(),
            }),
        }
    }
}

/// Integrate `problem` node by node on the fixed grid `t0 + k·dt`.
pub fn integrate<'a>(problem: &DdeProblem<'a>, scheme: SchemeKind) -> Result<DenseSolution<'a>> {
    integrate_with(problem, scheme.scheme())
}

pub fn integrate_with<'a>(problem: &DdeProblem<'a>, scheme: &dyn Scheme) -> Result<DenseSolution<'a>> {
    let steps = problem.validate()?;
    let dim = problem.dim;
    let y0 = (problem.initial)(0.0);
    if y0.len() != dim {
        return Err(Error::DimensionMismatch {
            op: "initial function",
            left: (dim, 1),
            right: (y0.len(), 1),
        });
    }
    let mut sol = DenseSolution {
        t0: problem.t0,
        dt: problem.dt,
        tau: problem.tau,
        initial: problem.initial.clone(),
        values: Vec::with_capacity(steps + 1),
        derivs: Vec::with_capacity(steps + 1),
    };
    let mut lag = vec![0.0; dim];
    let mut f = vec![0.0; dim];

    let push_node = |sol: &mut DenseSolution<'a>, t: f64, y: Vec<f64>, lag: &mut [f64], f: &mut [f64]| -> Result<()> {
        sol.values.push(y.into());
        let y = sol.values.last().expect("just pushed").clone();
        sol.delayed_into(t, &y, lag);
        (problem.rhs)(t, &y, lag, f);
        if !y.is_finite() || f.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { t });
        }
        sol.derivs.push(f.to_vec().into());
        Ok(())
    };

    push_node(&mut sol, problem.t0, y0, &mut lag, &mut f)?;
    let mut next = vec![0.0; dim];
    for k in 0..steps {
        let t = sol.time(k);
        let y = sol.values[k].clone();
        scheme.advance(problem, &sol, t, &y, &mut next);
        let t_next = sol.time(k + 1);
        push_node(&mut sol, t_next, next.clone(), &mut lag, &mut f)?;
    }
    Ok(sol)
}

/// Mackey-Glass blood-cell model
/// `x' = a x(t-δ) / (1 + x(t-δ)^n) - b x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MackeyGlass {
    pub a: f64,
    pub b: f64,
    pub n: f64,
    pub delta: f64,
}

impl Default for MackeyGlass {
    fn default() -> Self {
        Self {
            a: 0.2,
            b: 0.1,
            n: 10.0,
            delta: 17.0,
        }
    }
}

impl MackeyGlass {
    /// Constant history `x ≡ x0` on `[-δ, 0]`. On `[0, δ]` the delayed
    /// argument then equals `x0`, which is exactly the warm-up ODE
    /// `x' = a x0 / (1 + x0^n) - b x`.
    pub fn problem(self, x0: f64) -> DdeProblem<'static> {
        DdeProblem::new(
            1,
            move |_t, x, lag, out| {
                out[0] = self.a * lag[0] / (1.0 + lag[0].powf(self.n)) - self.b * x[0];
            },
            self.delta,
            move |_| vec![x0],
        )
    }
}

/// Delayed-oscillator ENSO model
/// `T' = T - T³ - c T(t-δ) (1 - γ T(t-δ)²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Enso {
    pub c: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for Enso {
    fn default() -> Self {
        Self {
            c: 0.93,
            gamma: 0.49,
            delta: 4.8,
        }
    }
}

impl Enso {
    /// Constant history `T ≡ T0`, reproducing the warm-up ODE on `[0, δ]`.
    pub fn problem(self, t0_value: f64) -> DdeProblem<'static> {
        DdeProblem::new(
            1,
            move |_t, x, lag, out| {
                let l = lag[0];
                out[0] = x[0] - x[0].powi(3) - self.c * l * (1.0 - self.gamma * l * l);
            },
            self.delta,
            move |_| vec![t0_value],
        )
    }
}

/// How a scalar series is cut out of an integrated trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesRecipe {
    pub dt: f64,
    pub t_end: f64,
    pub window_start: f64,
    pub len: usize,
}

impl SeriesRecipe {
    pub fn mackey_glass() -> Self {
        Self {
            dt: 0.25,
            t_end: 1000.0,
            window_start: 500.0,
            len: 2000,
        }
    }

    pub fn enso() -> Self {
        Self {
            dt: 0.1,
            t_end: 400.0,
            window_start: 200.0,
            len: 2000,
        }
    }
}

/// Scalar series realizations of one system.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDataset {
    pub name: String,
    pub dt: f64,
    pub tau: f64,
    pub series: Vec<Vec<f64>>,
}

impl SeriesDataset {
    pub fn series_len(&self) -> usize {
        self.series.first().map_or(0, Vec::len)
    }
}

fn gen_series(
    name: &str,
    tau: f64,
    recipe: SeriesRecipe,
    seed: u64,
    n_samples: usize,
    make: impl Fn(f64) -> DdeProblem<'static> + Sync,
    sane: impl Fn(f64) -> bool + Sync,
) -> Result<SeriesDataset> {
    if n_samples == 0 {
        return Err(Error::Invalid("n_samples must be at least 1".into()));
    }
    let mut rng = SplitMix64::new(seed);
    let starts: Vec<f64> = (0..n_samples).map(|_| rng.next_f64()).collect();
    let series = starts
        .par_iter()
        .map(|&x0| {
            let problem = make(x0).span(0.0, recipe.t_end).step(recipe.dt);
            let sol = integrate(&problem, SchemeKind::Rk4)?;
            let first = (recipe.window_start / recipe.dt).round() as usize;
            let values: Vec<f64> = sol.values()[first..first + recipe.len].iter().map(|v| v[0]).collect();
            if let Some(bad) = values.iter().find(|v| !sane(**v)) {
                return Err(Error::Sanity(format!("{name} value {bad} outside the expected attractor range (x0 = {x0})")));
            }
            Ok(values)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SeriesDataset {
        name: name.to_string(),
        dt: recipe.dt,
        tau,
        series,
    })
}

/// Mackey-Glass series with `x(0) ~ U(0, 1)`, RK4 at `dt = 0.25` to `t = 1000`,
/// 2000 values from `[500, 1000)`.
pub fn gen_mackey_glass(seed: u64, n_samples: usize) -> Result<SeriesDataset> {
    let mg = MackeyGlass::default();
    gen_series(
        "mackey-glass",
        mg.delta,
        SeriesRecipe::mackey_glass(),
        seed,
        n_samples,
        |x0| mg.problem(x0),
        |v| v > 0.0 && v < 2.0,
    )
}

/// ENSO series with `T(0) ~ U(0, 1)`, RK4 at `dt = 0.1` to `t = 400`,
/// 2000 values from `[200, 400)`.
pub fn gen_enso(seed: u64, n_samples: usize) -> Result<SeriesDataset> {
    let enso = Enso::default();
    gen_series(
        "enso",
        enso.delta,
        SeriesRecipe::enso(),
        seed,
        n_samples,
        |t0| enso.problem(t0),
        |v| v.abs() < 2.0,
    )
}

/// Truncated Weierstrass input `Σ_{n=0}^{3} 3^{-n} cos(4^n · 2t)`.
pub fn gen_weierstrass_input(t: f64) -> f64 {
    let (a, b, omega) = (3.0f64, 4.0f64, 2.0f64);
    (0..4).map(|n| a.powi(-n) * (b.powi(n) * omega * t).cos()).sum()
}

/// Scalar delayed response `h' = -h(t-τ) + cos t` with zero history.
pub fn lagged_response_problem(tau: f64) -> DdeProblem<'static> {
    DdeProblem::new(1, |t, _h, lag, out| out[0] = -lag[0] + t.cos(), tau, |_| vec![0.0])
}

/// `h' = -h + tanh(-h(t-τ) + s(t))` driven by the Weierstrass input.
pub fn weierstrass_response_problem(tau: f64) -> DdeProblem<'static> {
    DdeProblem::new(
        1,
        |t, h, lag, out| out[0] = -h[0] + (-lag[0] + gen_weierstrass_input(t)).tanh(),
        tau,
        |_| vec![0.0],
    )
}

/// Segment distances between two continuous-time runs.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzReport {
    /// `1 + ‖W1‖ + ‖W2‖ + ‖W4‖/4`.
    pub k_constant: f64,
    /// `‖φ - ψ‖` in the sup norm over `[-τ, 0]`.
    pub initial_distance: f64,
    /// `(t, ‖h_t(φ) - h_t(ψ)‖, ‖φ - ψ‖ e^{K t})` at `t = 0, τ, 2τ, …`.
    pub checkpoints: Vec<(f64, f64, f64)>,
    pub slack: f64,
}

impl LipschitzReport {
    pub fn violations(&self) -> usize {
        self.checkpoints.iter().filter(|(_, d, b)| *d > b + self.slack).count()
    }

    pub fn holds(&self) -> bool {
        self.violations() == 0
    }

    /// Smallest `bound - distance` over the checkpoints.
    pub fn margin(&self) -> f64 {
        self.checkpoints.iter().map(|(_, d, b)| b - d).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug)]
pub struct ContinuousRun<'a> {
    pub phi: DenseSolution<'a>,
    pub psi: DenseSolution<'a>,
    pub report: LipschitzReport,
}

pub const LIPSCHITZ_SLACK: f64 = 1e-6;

/// Integrate `h' = -h + u(h, x) + a(h, x) ⊙ z(h(t-τ), x)` from two initial
/// functions with RK4 and compare the state segments against
/// `‖φ - ψ‖ e^{K t}`.
#[allow(clippy::too_many_arguments)]
pub fn integrate_continuous_taugru<'a>(
    params: &'a CellParams,
    input: impl Fn(f64) -> Vec<f64> + Send + Sync + 'a,
    phi: impl Fn(f64) -> Vec<f64> + Send + Sync + 'a,
    psi: impl Fn(f64) -> Vec<f64> + Send + Sync + 'a,
    tau: f64,
    t_end: f64,
    dt: f64,
) -> Result<ContinuousRun<'a>> {
    let d = params.hidden();
    let input = Arc::new(input);
    let make_rhs = || {
        let input = input.clone();
        move |t: f64, h: &[f64], lag: &[f64], out: &mut [f64]| {
            let x = input(t);
            let mut pre_u = params.b(Gate::Instant).to_vec();
            matvec_acc(params.w(Gate::Instant), h, &mut pre_u);
            matvec_acc(params.u(Gate::Instant), &x, &mut pre_u);
            let mut pre_z = params.b(Gate::Delayed).to_vec();
            matvec_acc(params.w(Gate::Delayed), lag, &mut pre_z);
            matvec_acc(params.u(Gate::Delayed), &x, &mut pre_z);
            let mut pre_a = params.b(Gate::Weighting).to_vec();
            matvec_acc(params.w(Gate::Weighting), h, &mut pre_a);
            matvec_acc(params.u(Gate::Weighting), &x, &mut pre_a);
            for i in 0..d {
                out[i] = -h[i] + pre_u[i].tanh() + sigmoid(pre_a[i]) * pre_z[i].tanh();
            }
        }
    };
    let p1 = DdeProblem::new(d, make_rhs(), tau, phi).span(0.0, t_end).step(dt);
    let p2 = DdeProblem::new(d, make_rhs(), tau, psi).span(0.0, t_end).step(dt);
    let sol_phi = integrate(&p1, SchemeKind::Rk4)?;
    let sol_psi = integrate(&p2, SchemeKind::Rk4)?;

    let k_constant = 1.0
        + operator_norm(params.w(Gate::Instant))?
        + operator_norm(params.w(Gate::Delayed))?
        + operator_norm(params.w(Gate::Weighting))? / 4.0;

    let segment_distance = |t: f64| -> f64 {
        // Sample the segment [t - τ, t] on the integration grid spacing.
        let samples = (tau / dt).round().max(1.0) as usize;
        (0..=samples)
            .map(|s| {
                let at = t - tau + tau * s as f64 / samples as f64;
                let a = sol_phi.eval(at);
                let b = sol_psi.eval(at);
                a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
            })
            .fold(0.0, f64::max)
    };
    let initial_distance = segment_distance(0.0);
    let mut checkpoints = Vec::new();
    let mut j = 0usize;
    loop {
        let t = j as f64 * tau.max(dt);
        if t > t_end + 1e-9 {
            break;
        }
        let dist = segment_distance(t);
        checkpoints.push((t, dist, initial_distance * (k_constant * t).exp()));
        j += 1;
    }
    Ok(ContinuousRun {
        phi: sol_phi,
        psi: sol_psi,
        report: LipschitzReport {
            k_constant,
            initial_distance,
            checkpoints,
            slack: LIPSCHITZ_SLACK,
        },
    })
}

/// End-time error ratios for a self-convergence study.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub dts: Vec<f64>,
    pub errors: Vec<f64>,
}

impl ConvergenceStudy {
    /// `log2(e(dt) / e(dt/2))` for consecutive refinements.
    pub fn orders(&self) -> Vec<f64> {
        self.errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
    }

    pub fn min_order(&self) -> f64 {
        self.orders().into_iter().fold(f64::INFINITY, f64::min)
    }
}

/// Max-norm errors over the grid nodes in `window` for `dt, dt/2, …`
/// against a reference run at `dt_finest / 8`.
pub fn self_convergence(
    make: impl Fn() -> DdeProblem<'static>,
    scheme: SchemeKind,
    dt: f64,
    refinements: usize,
    window: (f64, f64),
) -> Result<ConvergenceStudy> {
    let dts: Vec<f64> = (0..=refinements).map(|r| dt / f64::powi(2.0, r as i32)).collect();
    let finest = *dts.last().expect("non-empty");
    let reference = integrate(&make().step(finest / 8.0), scheme)?;
    let errors = dts
        .iter()
        .map(|&h| {
            let sol = integrate(&make().step(h), scheme)?;
            let mut err = 0.0f64;
            for k in 0..sol.len() {
                let t = sol.time(k);
                if t < window.0 - 1e-9 || t > window.1 + 1e-9 {
                    continue;
                }
                let exact = reference.eval(t);
                for (a, b) in sol.values()[k].iter().zip(exact.iter()) {
                    err = err.max((a - b).abs());
                }
            }
            Ok(err)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceStudy { dts, errors })
}

/// Mackey-Glass over `[0, δ + 10]` from a constant history, used for the
/// order study on the window `[δ, δ + 10]`.
pub fn mackey_glass_convergence_problem() -> DdeProblem<'static> {
    let mg = MackeyGlass::default();
    mg.problem(0.5).span(0.0, mg.delta + 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_and_nodes_are_exact() {
        let p = lagged_response_problem(0.5).span(0.0, 5.0).step(0.05);
        let sol = integrate(&p, SchemeKind::Rk4).unwrap();
        for k in 0..sol.len() {
            assert_eq!(sol.eval(sol.time(k)), sol.values()[k]);
        }
        assert_eq!(sol.eval(-0.25).as_slice(), &[0.0]);
        assert_eq!(sol.eval(-0.5).as_slice(), &[0.0]);
    }

    #[test]
    fn mackey_glass_unit_fixed_point() {
        let p = MackeyGlass::default().problem(1.0).span(0.0, 117.0).step(0.25);
        let sol = integrate(&p, SchemeKind::Rk4).unwrap();
        for v in sol.values() {
            assert!((v[0] - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn enso_origin_is_fixed() {
        let p = Enso::default().problem(0.0).span(0.0, 100.0).step(0.1);
        let sol = integrate(&p, SchemeKind::Rk4).unwrap();
        assert!(sol.values().iter().all(|v| v[0] == 0.0));
    }

    #[test]
    fn zero_delay_matches_ode() {
        // h' = -h(t) has solution e^{-t}.
        let p = DdeProblem::new(1, |_t, _h, lag, out| out[0] = -lag[0], 0.0, |_| vec![1.0])
            .span(0.0, 2.0)
            .step(0.01);
        let sol = integrate(&p, SchemeKind::Rk4).unwrap();
        assert!((sol.eval(2.0)[0] - (-2.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn first_interval_has_closed_form() {
        // h' = -h(t-1) + cos t with zero history: on [0, 1], h = sin t.
        let p = lagged_response_problem(1.0).span(0.0, 1.0).step(0.01);
        let sol = integrate(&p, SchemeKind::Rk4).unwrap();
        assert!((sol.eval(1.0)[0] - 1.0f64.sin()).abs() < 1e-10);
        // On [1, 2]: h = sin t - ∫_1^t sin(s-1) ds = sin t - 1 + cos(t-1).
        let p = lagged_response_problem(1.0).span(0.0, 2.0).step(0.01);
        let sol = integrate(&p, SchemeKind::Rk4).unwrap();
        let exact = 2.0f64.sin() - 1.0 + 1.0f64.cos();
        assert!((sol.eval(2.0)[0] - exact).abs() < 1e-9);
    }

    #[test]
    fn blow_up_is_reported() {
        let p = DdeProblem::new(1, |_t, h, _lag, out| out[0] = h[0] * h[0], 1.0, |_| vec![1.0])
            .span(0.0, 3.0)
            .step(0.01);
        match integrate(&p, SchemeKind::Euler) {
            Err(Error::BlowUp { t }) => assert!(t > 0.9 && t < 3.0, "{t}"),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn invalid_problems() {
        let base = lagged_response_problem(0.5);
        assert!(integrate(&base.clone().step(0.0), SchemeKind::Rk4).is_err());
        assert!(integrate(&base.clone().span(1.0, 0.5), SchemeKind::Rk4).is_err());
        assert!(integrate(&base.step(1.0), SchemeKind::Rk4).is_err());
    }

    #[test]
    fn weierstrass_values() {
        assert!((gen_weierstrass_input(0.0) - 40.0 / 27.0).abs() < 1e-15);
        for t in [0.5f64, 1.0] {
            let direct = 0.0
                + (2.0 * t).cos()
                + (8.0 * t).cos() / 3.0
                + (32.0 * t).cos() / 9.0
                + (128.0 * t).cos() / 27.0;
            assert!((gen_weierstrass_input(t) - direct).abs() < 1e-15);
        }
        for k in 0..1000 {
            assert!(gen_weierstrass_input(k as f64 * 0.0137).abs() <= 40.0 / 27.0 + 1e-15);
        }
    }

    #[test]
    fn scheme_names_parse() {
        assert_eq!("rk4".parse::<SchemeKind>().unwrap(), SchemeKind::Rk4);
        assert_eq!("euler".parse::<SchemeKind>().unwrap().scheme().order(), 1);
        assert!("rk45".parse::<SchemeKind>().is_err());
    }
}
