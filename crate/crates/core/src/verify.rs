//! Randomized verification batteries.
//!
//! Each battery implements [`Battery`] and is registered by name. A battery
//! runs a fixed number of seeded trials and reports the worst observed value
//! against its limit, so reruns with the same seed print identical tables.

use crate::bptt::{backward_full, fd_gradient_richardson, grad_norm_bound_check, prop1_oracle, BpttTape};
use crate::cells::{init_params, run_sequence, CellParams, CellVariant, Gate};
use crate::dde::{
    integrate, integrate_continuous_taugru, mackey_glass_convergence_problem, self_convergence, Enso, MackeyGlass,
    SchemeKind,
};
use crate::numerics::{operator_norm, Matrix, Vector};
use crate::rng::SplitMix64;
use crate::{Error, Result};

/// Outcome of one battery.
#[derive(Debug, Clone, PartialEq)]
pub struct BatteryReport {
    pub name: &'static str,
    pub trials: usize,
    pub failures: usize,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    /// What `worst` is compared against.
    pub limit: f64,
    /// How `worst` relates to `limit`, e.g. `max |oracle - bptt|`.
    pub measure: &'static str,
}

impl BatteryReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn line(&self) -> String {
        format!(
            "{:<12} {} {}/{} trials, {} = {:.3e} (limit {:.3e})",
            self.name,
            if self.passed() { "pass" } else { "FAIL" },
            self.trials - self.failures,
            self.trials,
            self.measure,
            self.worst,
            self.limit
        )
    }
}

pub trait Battery: Send + Sync {
    fn name(&self) -> &'static str;

    /// CLI suite the battery belongs to.
    fn suite(&self) -> &'static str;

    fn run(&self, seed: u64) -> Result<BatteryReport>;
}

static REGISTRY: [&dyn Battery; 7] = [
    &Gradients,
    &Prop1,
    &StateBound,
    &GradBound,
    &Lipschitz,
    &Convergence,
    &FixedPoints,
];

pub fn batteries() -> &'static [&'static dyn Battery] {
    &REGISTRY
}

/// Suite names accepted by [`select`], besides `all`.
pub fn suites() -> Vec<&'static str> {
    let mut names: Vec<&'static str> = REGISTRY.iter().map(|b| b.suite()).collect();
    names.dedup();
    names
}

/// Batteries in suite `name`; `all` selects every battery.
pub fn select(name: &str) -> Result<Vec<&'static dyn Battery>> {
    let chosen: Vec<&'static dyn Battery> = REGISTRY
        .iter()
        .copied()
        .filter(|b| name == "all" || b.suite() == name || b.name() == name)
        .collect();
    if chosen.is_empty() {
        return Err(Error::Unknown {
            kind: "verification suite",
            name: name.to_string(),
        });
    }
    Ok(chosen)
}

fn random_inputs(len: usize, p: usize, rng: &mut SplitMix64) -> Vec<Vector> {
    (0..len)
        .map(|_| (0..p).map(|_| rng.uniform(-1.0, 1.0)).collect::<Vec<_>>().into())
        .collect()
}

/// Initialized parameters with recurrent weights scaled by `scale` and
/// random biases.
fn random_params(d: usize, p: usize, q: usize, scale: f64, rng: &mut SplitMix64) -> Result<CellParams> {
    let mut params = init_params(d, p, q, rng.next_u64())?;
    for w in params.recurrent.iter_mut() {
        *w = w.scale(scale);
    }
    for b in params.biases.iter_mut().chain([&mut params.decoder_bias]) {
        b.iter_mut().for_each(|x| *x = rng.uniform(-0.5, 0.5));
    }
    Ok(params)
}

/// Backward pass against central differences.
pub struct Gradients;

/// Entries smaller than this (in absolute value on both sides) are compared
/// against it instead of against themselves.
pub const GRAD_REL_FLOOR: f64 = 1e-6;
pub const GRAD_TOLERANCE: f64 = 1e-5;
/// Coarse step of the extrapolated central differences.
pub const GRAD_FD_STEP: f64 = 1e-3;

/// `|a - b| / max(|a|, |b|, floor)` maximized over entries.
pub fn max_relative_error(a: &CellParams, b: &CellParams, floor: f64) -> f64 {
    a.tensors()
        .iter()
        .zip(b.tensors())
        .flat_map(|(x, y)| x.iter().zip(y.iter()))
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

impl Battery for Gradients {
    fn name(&self) -> &'static str {
        "gradients"
    }

    fn suite(&self) -> &'static str {
        "gradients"
    }

    fn run(&self, seed: u64) -> Result<BatteryReport> {
        let mut rng = SplitMix64::new(seed);
        let variants = [
            CellVariant::tau_gru(0),
            CellVariant::tau_gru(0).with_alpha(0.0),
            CellVariant::tau_gru(0).with_beta(0.0),
            CellVariant::tau_gru(0).with_weighting(false).with_alpha(0.7).with_beta(0.4),
            CellVariant::simple_delay_gru(0),
            CellVariant::linear(0),
        ];
        let delays = [0usize, 1, 5, 20];
        let mut worst = 0.0f64;
        let mut failures = 0;
        let mut trials = 0;
        for base in &variants {
            for &m in &delays {
                let variant = CellVariant { delay: m, ..*base };
                let (d, p, q) = (1 + rng.below(4) as usize, 1 + rng.below(2) as usize, 1 + rng.below(2) as usize);
                let scale = if base.kind == crate::cells::CellKind::LinearDelayed {
                    0.5
                } else {
                    rng.uniform(0.5, 2.0)
                };
                let params = random_params(d, p, q, scale, &mut rng)?;
                let len = m + 12;
                let xs = random_inputs(len, p, &mut rng);
                let targets = random_inputs(len, q, &mut rng);
                let loss = |ys: &[Vector]| -> f64 {
                    ys.iter()
                        .zip(&targets)
                        .map(|(y, t)| y.iter().zip(t.iter()).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum::<f64>())
                        .sum()
                };
                let run = run_sequence(&params, &variant, &xs)?;
                let loss_grads: Vec<Vector> = run
                    .ys
                    .iter()
                    .zip(&targets)
                    .map(|(y, t)| y.iter().zip(t.iter()).map(|(a, b)| a - b).collect::<Vec<_>>().into())
                    .collect();
                let exact = backward_full(&run.tape, &params, &loss_grads)?;
                let fd = fd_gradient_richardson(&params, &variant, &xs, &loss, GRAD_FD_STEP)?;
                let err = max_relative_error(&exact.params, &fd, GRAD_REL_FLOOR);
                worst = worst.max(err);
                trials += 1;
                if !(err < GRAD_TOLERANCE) {
                    failures += 1;
                }
            }
        }
        Ok(BatteryReport {
            name: self.name(),
            trials,
            failures,
            worst,
            limit: GRAD_TOLERANCE,
            measure: "max rel err",
        })
    }
}

/// Closed-form input gradients of the linear delayed RNN against BPTT.
pub struct Prop1;

pub const PROP1_TOLERANCE: f64 = 1e-12;

/// `∂h_target/∂u_input` for the linear cell via reverse sweeps, one per row.
pub fn linear_input_jacobian(tape: &BpttTape, params: &CellParams, target: usize, input: usize) -> Result<Matrix> {
    let (d, p, q) = params.dims();
    if q != d || params.decoder != Matrix::identity(d) {
        return Err(Error::Invalid("input Jacobian needs an identity decoder".into()));
    }
    let mut jac = Matrix::zeros(d, p);
    for r in 0..d {
        let mut loss_grads = vec![Vector::zeros(d); tape.len()];
        loss_grads[target - 1][r] = 1.0;
        let out = backward_full(tape, params, &loss_grads)?;
        for c in 0..p {
            jac.set(r, c, out.inputs[input][c]);
        }
    }
    Ok(jac)
}

impl Battery for Prop1 {
    fn name(&self) -> &'static str {
        "prop1"
    }

    fn suite(&self) -> &'static str {
        "prop1"
    }

    fn run(&self, seed: u64) -> Result<BatteryReport> {
        let mut rng = SplitMix64::new(seed);
        let mut worst = 0.0f64;
        let mut trials = 0;
        let mut failures = 0;
        for m in [1usize, 2, 5] {
            let (d, p) = (3, 2);
            let diag_a: Vec<f64> = (0..d).map(|_| rng.uniform(-0.9, 0.9)).collect();
            let diag_b: Vec<f64> = (0..d).map(|_| rng.uniform(-0.9, 0.9)).collect();
            let mut params = CellParams::zeros(d, p, d);
            params.recurrent[Gate::Instant.index()] = Matrix::diag(&diag_a);
            params.recurrent[Gate::Delayed.index()] = Matrix::diag(&diag_b);
            let c = Matrix::from_row_major(d, p, (0..d * p).map(|_| rng.uniform(-1.0, 1.0)).collect())?;
            params.input_weights[Gate::Instant.index()] = c.clone();
            params.decoder = Matrix::identity(d);
            let len = 2 * m + 2;
            let xs = random_inputs(len, p, &mut rng);
            let run = run_sequence(&params, &CellVariant::linear(m), &xs)?;
            for target in 1..=len {
                for input in 0..target {
                    let oracle = prop1_oracle(
                        params.w(Gate::Instant),
                        params.w(Gate::Delayed),
                        &c,
                        m,
                        target,
                        input,
                    )?;
                    let bptt = linear_input_jacobian(&run.tape, &params, target, input)?;
                    let diff = oracle.max_abs_diff(&bptt);
                    worst = worst.max(diff);
                    trials += 1;
                    if !(diff <= PROP1_TOLERANCE) {
                        failures += 1;
                    }
                }
            }
        }
        Ok(BatteryReport {
            name: self.name(),
            trials,
            failures,
            worst,
            limit: PROP1_TOLERANCE,
            measure: "max |oracle - bptt|",
        })
    }
}

/// Hidden states of the gated delay cell stay in `[-2, 2]` from the zero
/// initial function.
pub struct StateBound;

pub const STATE_BOUND: f64 = 2.0;

impl Battery for StateBound {
    fn name(&self) -> &'static str {
        "state-bound"
    }

    fn suite(&self) -> &'static str {
        "bounds"
    }

    fn run(&self, seed: u64) -> Result<BatteryReport> {
        let mut rng = SplitMix64::new(seed);
        let trials = 1000;
        let mut worst = 0.0f64;
        let mut failures = 0;
        for _ in 0..trials {
            let d = 1 + rng.below(8) as usize;
            let p = 1 + rng.below(3) as usize;
            let m = rng.below(12) as usize;
            let variant = CellVariant::tau_gru(m)
                .with_alpha(rng.next_f64())
                .with_beta(rng.next_f64())
                .with_weighting(rng.below(4) != 0);
            let mut params = random_params(d, p, 1, rng.uniform(0.1, 10.0), &mut rng)?;
            for u in params.input_weights.iter_mut() {
                *u = u.scale(rng.uniform(0.1, 10.0));
            }
            let len = 20 + rng.below(100) as usize;
            let xs: Vec<Vector> = random_inputs(len, p, &mut rng)
                .into_iter()
                .map(|x| x.iter().map(|v| 5.0 * v).collect::<Vec<_>>().into())
                .collect();
            let run = run_sequence(&params, &variant, &xs)?;
            let peak = run.hs.iter().map(Vector::norm_inf).fold(0.0, f64::max);
            worst = worst.max(peak);
            if !(peak <= STATE_BOUND) {
                failures += 1;
            }
        }
        Ok(BatteryReport {
            name: self.name(),
            trials,
            failures,
            worst,
            limit: STATE_BOUND,
            measure: "max |h|",
        })
    }
}

/// `‖∂h_n/∂h_k‖∞` against its bound for `n - k ≤ m + 1`.
pub struct GradBound;

impl Battery for GradBound {
    fn name(&self) -> &'static str {
        "grad-bound"
    }

    fn suite(&self) -> &'static str {
        "bounds"
    }

    fn run(&self, seed: u64) -> Result<BatteryReport> {
        let mut rng = SplitMix64::new(seed);
        let trials = 500;
        let mut worst = 0.0f64;
        let mut failures = 0;
        for _ in 0..trials {
            let d = 1 + rng.below(6) as usize;
            let p = 1 + rng.below(2) as usize;
            let m = 1 + rng.below(8) as usize;
            let params = random_params(d, p, 1, rng.uniform(0.1, 3.0), &mut rng)?;
            let len = m + 2 + rng.below(20) as usize;
            let xs = random_inputs(len, p, &mut rng);
            let run = run_sequence(&params, &CellVariant::tau_gru(m), &xs)?;
            let n = 1 + rng.below(len as u64) as usize;
            let span = 1 + rng.below(n.min(m + 1) as u64) as usize;
            let check = grad_norm_bound_check(&run.tape, &params, n, n - span)?;
            worst = worst.max(check.observed / check.bound);
            if !check.holds {
                failures += 1;
            }
        }
        Ok(BatteryReport {
            name: self.name(),
            trials,
            failures,
            worst,
            limit: 1.0,
            measure: "max observed/bound",
        })
    }
}

/// Continuous-time trajectories from two constant histories stay within the
/// exponential Lipschitz envelope.
pub struct Lipschitz;

impl Battery for Lipschitz {
    fn name(&self) -> &'static str {
        "lipschitz"
    }

    fn suite(&self) -> &'static str {
        "lipschitz"
    }

    fn run(&self, seed: u64) -> Result<BatteryReport> {
        let mut rng = SplitMix64::new(seed);
        let trials = 100;
        let mut worst = 0.0f64;
        let mut failures = 0;
        for _ in 0..trials {
            let d = 1 + rng.below(4) as usize;
            let p = 1 + rng.below(2) as usize;
            let mut params = random_params(d, p, 1, 1.0, &mut rng)?;
            for w in params.recurrent.iter_mut() {
                let norm = operator_norm(w)?;
                if norm > 1.0 {
                    *w = w.scale(rng.next_f64() / norm);
                }
            }
            let tau = rng.uniform(0.5, 2.0);
            let phi: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let psi: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let freqs: Vec<f64> = (0..p).map(|_| rng.uniform(0.5, 3.0)).collect();
            let input = move |t: f64| freqs.iter().map(|w| (w * t).sin()).collect::<Vec<_>>();
            let run = integrate_continuous_taugru(
                &params,
                input,
                move |_| phi.clone(),
                move |_| psi.clone(),
                tau,
                5.0 * tau,
                tau / 50.0,
            )?;
            let r = &run.report;
            let ratio = r
                .checkpoints
                .iter()
                .filter(|(_, _, b)| *b > 0.0)
                .map(|(_, dist, b)| dist / b)
                .fold(0.0, f64::max);
            worst = worst.max(ratio);
            if !r.holds() {
                failures += 1;
            }
        }
        Ok(BatteryReport {
            name: self.name(),
            trials,
            failures,
            worst,
            limit: 1.0,
            measure: "max dist/bound",
        })
    }
}

/// Empirical order of Euler and RK4 with Hermite history on Mackey-Glass.
pub struct Convergence;

pub const RK4_MIN_ORDER: f64 = 3.0;
pub const EULER_MIN_ORDER: f64 = 1.0;

impl Battery for Convergence {
    fn name(&self) -> &'static str {
        "convergence"
    }

    fn suite(&self) -> &'static str {
        "convergence"
    }

    fn run(&self, _seed: u64) -> Result<BatteryReport> {
        let mg = MackeyGlass::default();
        let window = (mg.delta, mg.delta + 10.0);
        let rk4 = self_convergence(mackey_glass_convergence_problem, SchemeKind::Rk4, 0.5, 3, window)?;
        let euler = self_convergence(mackey_glass_convergence_problem, SchemeKind::Euler, 0.5, 3, window)?;
        // Report the smaller margin above the required order.
        let (rk4_order, euler_order) = (rk4.min_order(), euler.min_order());
        let failures = usize::from(!(rk4_order >= RK4_MIN_ORDER)) + usize::from(!(euler_order >= EULER_MIN_ORDER));
        let (worst, limit) = if rk4_order - RK4_MIN_ORDER <= euler_order - EULER_MIN_ORDER {
            (rk4_order, RK4_MIN_ORDER)
        } else {
            (euler_order, EULER_MIN_ORDER)
        };
        Ok(BatteryReport {
            name: self.name(),
            trials: 2,
            failures,
            worst,
            limit,
            measure: "min order",
        })
    }
}

/// Equilibria of the generating systems are preserved by the integrator.
pub struct FixedPoints;

pub const FIXED_POINT_TOLERANCE: f64 = 1e-10;

impl Battery for FixedPoints {
    fn name(&self) -> &'static str {
        "fixed-points"
    }

    fn suite(&self) -> &'static str {
        "fixed-points"
    }

    fn run(&self, _seed: u64) -> Result<BatteryReport> {
        let mg = MackeyGlass::default();
        let sol = integrate(&mg.problem(1.0).span(0.0, mg.delta + 100.0).step(0.25), SchemeKind::Rk4)?;
        let mg_dev = sol.values().iter().map(|v| (v[0] - 1.0).abs()).fold(0.0, f64::max);
        let sol = integrate(&Enso::default().problem(0.0).span(0.0, 400.0).step(0.1), SchemeKind::Rk4)?;
        let enso_dev = sol.values().iter().map(|v| v[0].abs()).fold(0.0, f64::max);
        let failures = usize::from(!(mg_dev <= FIXED_POINT_TOLERANCE)) + usize::from(enso_dev != 0.0);
        Ok(BatteryReport {
            name: self.name(),
            trials: 2,
            failures,
            worst: mg_dev.max(enso_dev),
            limit: FIXED_POINT_TOLERANCE,
            measure: "max deviation",
        })
    }
}
