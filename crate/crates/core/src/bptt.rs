//! Backpropagation through time over the unrolled delay graph.
//!
//! Step `n` maps `(h_n, h_{n-m}, x_n) -> h_{n+1}`, so the adjoint of `h_n`
//! collects contributions from step `n` (the direct path) and from step
//! `n + m` (the delayed read). Both consumers have larger indices than `n`,
//! so a single reverse sweep visits every node after its adjoint is final.

use std::ops::{Deref, DerefMut};

use crate::cells::{cell, forward_into, CellKind, CellParams, CellVariant, Gate, StepActivations, StepAdjoints};
use crate::numerics::{inf_norm, matvec_t_acc, outer_acc, Matrix, Vector};
use crate::{Error, Result};

/// Everything recorded during a forward run.
#[derive(Debug, Clone, PartialEq)]
pub struct BpttTape {
    pub steps: Vec<StepActivations>,
    pub inputs: Vec<Vector>,
    pub variant: CellVariant,
}

impl BpttTape {
    pub fn new(variant: CellVariant) -> Self {
        Self {
            steps: Vec::new(),
            inputs: Vec::new(),
            variant,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Hidden state `h_n` for `0 ≤ n ≤ len`.
    pub fn state(&self, n: usize) -> &Vector {
        if n == 0 {
            &self.steps[0].h_in
        } else {
            &self.steps[n - 1].h_out
        }
    }

    /// Re-run the forward pass from the recorded inputs and initial state.
    pub fn replay(&self, params: &CellParams) -> Result<Vec<Vector>> {
        if self.is_empty() {
            return Err(Error::Invalid("cannot replay an empty tape".into()));
        }
        let mut tape = BpttTape::new(self.variant);
        let mut ys = Vec::new();
        forward_into(params, &self.variant, &self.inputs, Some(&self.steps[0].h_in), &mut tape, &mut ys)?;
        Ok(tape.steps.into_iter().map(|s| s.h_out).collect())
    }

    fn check(&self, params: &CellParams) -> Result<()> {
        let d = params.hidden();
        if self.steps.len() != self.inputs.len() {
            return Err(Error::Invalid(format!(
                "tape has {} steps but {} inputs",
                self.steps.len(),
                self.inputs.len()
            )));
        }
        if let Some(s) = self.steps.first() {
            if s.h_in.len() != d {
                return Err(Error::DimensionMismatch {
                    op: "tape vs params",
                    left: (s.h_in.len(), 1),
                    right: (d, 1),
                });
            }
        }
        if let Some(x) = self.inputs.first() {
            if x.len() != params.input() {
                return Err(Error::DimensionMismatch {
                    op: "tape inputs vs params",
                    left: (x.len(), 1),
                    right: (params.input(), 1),
                });
            }
        }
        Ok(())
    }
}

/// Gradient with the same layout as [`CellParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads(pub CellParams);

impl ParamGrads {
    pub fn zeros_like(params: &CellParams) -> Self {
        let (d, p, q) = params.dims();
        Self(CellParams::zeros(d, p, q))
    }

    pub fn global_norm(&self) -> f64 {
        self.0
            .tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.0.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.0.tensors_mut().into_iter().zip(other.0.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

impl Deref for ParamGrads {
    type Target = CellParams;
    fn deref(&self) -> &CellParams {
        &self.0
    }
}

impl DerefMut for ParamGrads {
    fn deref_mut(&mut self) -> &mut CellParams {
        &mut self.0
    }
}

/// Gradients with respect to parameters, inputs and the initial state.
#[derive(Debug, Clone)]
pub struct BackwardOutput {
    pub params: ParamGrads,
    pub inputs: Vec<Vector>,
    pub initial_state: Vector,
}

/// Reusable buffers for repeated reverse sweeps.
#[derive(Debug, Default)]
pub struct Backprop {
    dh: Vec<Vec<f64>>,
    dx: Vec<Vec<f64>>,
    tmp_h: Vec<f64>,
    tmp_delay: Vec<f64>,
}

impl Backprop {
    pub fn new() -> Self {
        Self::default()
    }

    /// Accumulate `dLoss/dθ` into `grads` given `loss_grads[n] = dLoss/dy_n`.
    pub fn accumulate(
        &mut self,
        tape: &BpttTape,
        params: &CellParams,
        loss_grads: &[Vector],
        grads: &mut CellParams,
    ) -> Result<()> {
        tape.check(params)?;
        if loss_grads.len() != tape.len() {
            return Err(Error::Invalid(format!(
                "{} loss gradients for a tape of length {}",
                loss_grads.len(),
                tape.len()
            )));
        }
        if !grads.same_shape(params) {
            return Err(Error::Invalid("gradient buffer shape differs from params".into()));
        }
        let (d, p, q) = params.dims();
        if let Some(g) = loss_grads.iter().find(|g| g.len() != q) {
            return Err(Error::DimensionMismatch {
                op: "loss gradient",
                left: (q, 1),
                right: (g.len(), 1),
            });
        }
        let len = tape.len();
        let m = tape.variant.delay;
        let cell = cell(tape.variant.kind);

        resize(&mut self.dh, len + 1, d);
        resize(&mut self.dx, len, p);
        self.tmp_h.resize(d, 0.0);
        self.tmp_delay.resize(d, 0.0);

        for n in (0..len).rev() {
            let act = &tape.steps[n];
            let gy = &loss_grads[n];
            // Read-out y_n = V h_{n+1} + c.
            if gy.iter().any(|v| *v != 0.0) {
                outer_acc(&mut grads.decoder, gy, &act.h_out);
                for (c, g) in grads.decoder_bias.iter_mut().zip(gy.iter()) {
                    *c += g;
                }
                matvec_t_acc(&params.decoder, gy, &mut self.dh[n + 1]);
            }

            self.tmp_h.iter_mut().for_each(|x| *x = 0.0);
            self.tmp_delay.iter_mut().for_each(|x| *x = 0.0);
            cell.backward(
                params,
                &tape.variant,
                &tape.inputs[n],
                act,
                &self.dh[n + 1],
                StepAdjoints {
                    grads,
                    h_in: &mut self.tmp_h,
                    h_delay: &mut self.tmp_delay,
                    x: &mut self.dx[n],
                },
            );
            for (a, b) in self.dh[n].iter_mut().zip(&self.tmp_h) {
                *a += b;
            }
            // Reads before step 0 hit the constant zero initial function.
            if n >= m {
                for (a, b) in self.dh[n - m].iter_mut().zip(&self.tmp_delay) {
                    *a += b;
                }
            }
        }
        Ok(())
    }

    /// Input adjoints from the most recent [`Backprop::accumulate`].
    pub fn input_grads(&self) -> &[Vec<f64>] {
        &self.dx
    }

    /// Adjoint of `h_n` from the most recent sweep.
    pub fn state_grad(&self, n: usize) -> &[f64] {
        &self.dh[n]
    }
}

fn resize(bufs: &mut Vec<Vec<f64>>, n: usize, dim: usize) {
    bufs.truncate(n);
    for b in bufs.iter_mut() {
        b.clear();
        b.resize(dim, 0.0);
    }
    while bufs.len() < n {
        bufs.push(vec![0.0; dim]);
    }
}

/// `dLoss/dθ` for every parameter tensor.
pub fn backward(tape: &BpttTape, params: &CellParams, loss_grads: &[Vector]) -> Result<ParamGrads> {
    let mut grads = ParamGrads::zeros_like(params);
    Backprop::new().accumulate(tape, params, loss_grads, &mut grads)?;
    Ok(grads)
}

/// Like [`backward`], also returning input and initial-state adjoints.
pub fn backward_full(tape: &BpttTape, params: &CellParams, loss_grads: &[Vector]) -> Result<BackwardOutput> {
    let mut grads = ParamGrads::zeros_like(params);
    let mut bp = Backprop::new();
    bp.accumulate(tape, params, loss_grads, &mut grads)?;
    Ok(BackwardOutput {
        params: grads,
        inputs: bp.dx.iter().map(|v| Vector::from(v.clone())).collect(),
        initial_state: bp.dh[0].clone().into(),
    })
}

/// Central-difference gradient of `loss(ys)` with respect to every parameter.
pub fn fd_gradient(
    params: &CellParams,
    variant: &CellVariant,
    xs: &[Vector],
    loss: &dyn Fn(&[Vector]) -> f64,
    h_step: f64,
) -> Result<ParamGrads> {
    if !(h_step > 0.0) {
        return Err(Error::Invalid(format!("finite-difference step must be positive, got {h_step}")));
    }
    let mut work = params.clone();
    let mut grads = ParamGrads::zeros_like(params);
    let mut tape = BpttTape::new(*variant);
    let mut ys = Vec::new();
    let mut eval = |p: &CellParams| -> Result<f64> {
        forward_into(p, variant, xs, None, &mut tape, &mut ys)?;
        Ok(loss(&ys))
    };
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    for (t, &size) in sizes.iter().enumerate() {
        for i in 0..size {
            let orig = work.tensors()[t][i];
            work.tensors_mut()[t][i] = orig + h_step;
            let plus = eval(&work)?;
            work.tensors_mut()[t][i] = orig - h_step;
            let minus = eval(&work)?;
            work.tensors_mut()[t][i] = orig;
            grads.tensors_mut()[t][i] = (plus - minus) / (2.0 * h_step);
        }
    }
    Ok(grads)
}

/// Richardson-extrapolated central differences, `(4 D(h/2) - D(h)) / 3`.
/// Truncation error drops to `O(h⁴)`, so a larger `h` can be used and
/// round-off shrinks with it.
pub fn fd_gradient_richardson(
    params: &CellParams,
    variant: &CellVariant,
    xs: &[Vector],
    loss: &dyn Fn(&[Vector]) -> f64,
    h_step: f64,
) -> Result<ParamGrads> {
    let coarse = fd_gradient(params, variant, xs, loss, h_step)?;
    let mut fine = fd_gradient(params, variant, xs, loss, 0.5 * h_step)?;
    for (f, c) in fine.tensors_mut().into_iter().zip(coarse.tensors()) {
        for (a, b) in f.iter_mut().zip(c.iter()) {
            *a = (4.0 * *a - b) / 3.0;
        }
    }
    Ok(fine)
}

/// Total derivative `∂h_n/∂h_k` over the full unrolled graph (direct and
/// delayed paths), accumulated in forward mode.
pub fn state_jacobian(tape: &BpttTape, params: &CellParams, n: usize, k: usize) -> Result<Matrix> {
    tape.check(params)?;
    if !(k < n && n <= tape.len()) {
        return Err(Error::IndexOutOfRange(format!(
            "state_jacobian needs 0 <= k < n <= {}, got n = {n}, k = {k}",
            tape.len()
        )));
    }
    let d = params.hidden();
    let m = tape.variant.delay;
    let cell = cell(tape.variant.kind);
    // sens[j - k] = ∂h_j/∂h_k
    let mut sens: Vec<Matrix> = Vec::with_capacity(n - k + 1);
    sens.push(Matrix::identity(d));
    for s in k..n {
        let (jh, jd) = cell.jacobians(params, &tape.variant, &tape.steps[s]);
        let mut next = jh.matmul(&sens[s - k])?;
        if s >= k + m {
            next = next.add(&jd.matmul(&sens[s - m - k])?)?;
        }
        sens.push(next);
    }
    Ok(sens.pop().expect("at least one step"))
}

/// Closed-form `∂h_target/∂u_input` for the linear delayed RNN
/// `h_{n+1} = A h_n + B h_{n-m} + C u_n` with zero initial function and
/// commuting `A`, `B`.
///
/// Valid for `1 ≤ target ≤ 2m + 2` and `input < target`:
///
/// - `target ≤ m + 1`: `A^{target-1-input} C`;
/// - `target = m + 1 + j`, `1 ≤ j ≤ m + 1`:
///   `A^{m+j-input} C + (j - input) A^{j-input-1} B C` when `input < j`,
///   otherwise just the first term.
pub fn prop1_oracle(a: &Matrix, b: &Matrix, c: &Matrix, m: usize, target: usize, input: usize) -> Result<Matrix> {
    let d = a.rows();
    if a.shape() != (d, d) || b.shape() != (d, d) || c.rows() != d {
        return Err(Error::DimensionMismatch {
            op: "prop1_oracle",
            left: a.shape(),
            right: b.shape(),
        });
    }
    if m == 0 {
        return Err(Error::IndexOutOfRange("closed form requires delay m > 0".into()));
    }
    if target == 0 || target > 2 * m + 2 || input >= target {
        return Err(Error::IndexOutOfRange(format!(
            "closed form covers 1 <= target <= {} and input < target, got target = {target}, input = {input}",
            2 * m + 2
        )));
    }
    let comm = inf_norm(&a.matmul(b)?.sub(&b.matmul(a)?)?);
    if comm > 1e-12 {
        return Err(Error::NotCommuting(comm));
    }
    let direct = a.pow(target - 1 - input)?.matmul(c)?;
    if target <= m + 1 {
        return Ok(direct);
    }
    let j = target - m - 1;
    if input >= j {
        return Ok(direct);
    }
    let r = j - input;
    let delayed = a.pow(r - 1)?.matmul(b)?.matmul(c)?.scale(r as f64);
    direct.add(&delayed)
}

/// Observed Jacobian norm against the gradient-norm bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradBoundCheck {
    pub observed: f64,
    pub bound: f64,
    pub holds: bool,
    pub epsilon: f64,
    pub contraction: f64,
}

/// Compare `‖∂h_n/∂h_k‖∞` with
/// `(1 + C - ε)^{n-k} + ‖W2‖∞ (1 + C - ε)^{n-k-1-m} [1 ≤ m ≤ n-k-1]`
/// where `C = ‖W1‖∞ + ‖W3‖∞ + ‖W4‖∞/4` and `ε` is the smallest gate value
/// (`g` or `a`) anywhere on the tape.
///
/// Only `n - k ≤ m + 1` is supported: beyond that, paths through more than one
/// delayed read appear that the bound does not account for.
pub fn grad_norm_bound_check(tape: &BpttTape, params: &CellParams, n: usize, k: usize) -> Result<GradBoundCheck> {
    if tape.variant.kind != CellKind::TauGru {
        return Err(Error::Invalid("gradient-norm bound applies to the gated delay cell only".into()));
    }
    let m = tape.variant.delay;
    if m == 0 {
        return Err(Error::Invalid("gradient-norm bound requires delay m >= 1".into()));
    }
    if !(k < n && n <= tape.len()) || n - k > m + 1 {
        return Err(Error::IndexOutOfRange(format!(
            "bound check needs k < n <= {} and n - k <= m + 1 = {}, got n = {n}, k = {k}",
            tape.len(),
            m + 1
        )));
    }
    let observed = inf_norm(&state_jacobian(tape, params, n, k)?);
    let epsilon = tape
        .steps
        .iter()
        .flat_map(|s| s.g.iter().chain(s.a.iter()))
        .fold(f64::INFINITY, |acc, v| acc.min(*v));
    let c = inf_norm(params.w(Gate::Instant)) + inf_norm(params.w(Gate::Update)) + 0.25 * inf_norm(params.w(Gate::Weighting));
    let rate = 1.0 + c - epsilon;
    let span = n - k;
    let mut bound = rate.powi(span as i32);
    if m < span {
        bound += inf_norm(params.w(Gate::Delayed)) * rate.powi((span - 1 - m) as i32);
    }
    Ok(GradBoundCheck {
        observed,
        bound,
        holds: observed <= bound,
        epsilon,
        contraction: c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{init_params, run_sequence, run_sequence_from};
    use crate::rng::SplitMix64;

    fn random_xs(len: usize, p: usize, rng: &mut SplitMix64) -> Vec<Vector> {
        (0..len)
            .map(|_| (0..p).map(|_| rng.uniform(-1.0, 1.0)).collect::<Vec<_>>().into())
            .collect()
    }

    #[test]
    fn zero_loss_grads_give_zero_grads() {
        let params = init_params(4, 2, 1, 1).unwrap();
        let mut rng = SplitMix64::new(0);
        let xs = random_xs(12, 2, &mut rng);
        let run = run_sequence(&params, &CellVariant::tau_gru(3), &xs).unwrap();
        let zeros = vec![Vector::zeros(1); 12];
        let g = backward(&run.tape, &params, &zeros).unwrap();
        assert!(g.tensors().iter().all(|t| t.iter().all(|x| *x == 0.0)));
    }

    #[test]
    fn dead_subgraphs_have_exactly_zero_grads() {
        let params = init_params(4, 2, 1, 2).unwrap();
        let mut rng = SplitMix64::new(1);
        let xs = random_xs(15, 2, &mut rng);
        let ones = vec![Vector::filled(1, 1.0); 15];

        let run = run_sequence(&params, &CellVariant::tau_gru(2).with_alpha(0.0), &xs).unwrap();
        let g = backward(&run.tape, &params, &ones).unwrap();
        for t in [1, 3, 5, 7, 9, 11] {
            assert!(g.tensors()[t].iter().all(|x| *x == 0.0), "tensor {t}");
        }

        let run = run_sequence(&params, &CellVariant::tau_gru(2).with_beta(0.0), &xs).unwrap();
        let g = backward(&run.tape, &params, &ones).unwrap();
        for t in [0, 4, 8] {
            assert!(g.tensors()[t].iter().all(|x| *x == 0.0), "tensor {t}");
        }
    }

    #[test]
    fn backward_rejects_mismatched_lengths() {
        let params = init_params(3, 1, 1, 0).unwrap();
        let xs = vec![Vector::filled(1, 0.5); 4];
        let run = run_sequence(&params, &CellVariant::tau_gru(1), &xs).unwrap();
        assert!(backward(&run.tape, &params, &vec![Vector::zeros(1); 3]).is_err());
        let other = init_params(5, 1, 1, 0).unwrap();
        assert!(backward(&run.tape, &other, &vec![Vector::zeros(1); 4]).is_err());
    }

    #[test]
    fn fd_of_quadratic_in_decoder_bias() {
        // loss = y_0², and dy_0/dc = 1, so dL/dc = 2 y_0.
        let mut params = init_params(3, 1, 1, 4).unwrap();
        params.decoder_bias = vec![0.7].into();
        let xs = vec![Vector::filled(1, 0.2); 5];
        let y0 = run_sequence(&params, &CellVariant::tau_gru(1), &xs).unwrap().ys[0][0];
        let loss = |ys: &[Vector]| ys[0][0] * ys[0][0];
        let g = fd_gradient(&params, &CellVariant::tau_gru(1), &xs, &loss, 1e-5).unwrap();
        assert!((g.decoder_bias[0] - 2.0 * y0).abs() < 1e-9);
        assert!(fd_gradient(&params, &CellVariant::tau_gru(1), &xs, &loss, 0.0).is_err());
    }

    #[test]
    fn extrapolation_cancels_the_cubic_term() {
        // loss = y_0³ in the decoder bias c: the h² error of plain central
        // differences is exactly h², and extrapolation removes it.
        let params = init_params(2, 1, 1, 6).unwrap();
        let xs = vec![Vector::filled(1, 0.1); 3];
        let y0 = run_sequence(&params, &CellVariant::tau_gru(1), &xs).unwrap().ys[0][0];
        let loss = |ys: &[Vector]| ys[0][0].powi(3);
        let h = 1e-2;
        let plain = fd_gradient(&params, &CellVariant::tau_gru(1), &xs, &loss, h).unwrap();
        assert!((plain.decoder_bias[0] - 3.0 * y0 * y0 - h * h).abs() < 1e-12);
        let rich = fd_gradient_richardson(&params, &CellVariant::tau_gru(1), &xs, &loss, h).unwrap();
        assert!((rich.decoder_bias[0] - 3.0 * y0 * y0).abs() < 1e-12);
    }

    #[test]
    fn saturated_update_gate_copies_state() {
        let mut params = init_params(4, 1, 1, 6).unwrap();
        params.biases[Gate::Update.index()] = Vector::filled(4, -40.0);
        let xs = vec![Vector::filled(1, 0.3); 10];
        let run = run_sequence(&params, &CellVariant::tau_gru(2), &xs).unwrap();
        let j = state_jacobian(&run.tape, &params, 9, 4).unwrap();
        assert!(j.max_abs_diff(&Matrix::identity(4)) < 1e-12);
    }

    #[test]
    fn linear_one_step_jacobian_is_a() {
        let params = init_params(3, 2, 1, 7).unwrap();
        let mut rng = SplitMix64::new(3);
        let xs = random_xs(8, 2, &mut rng);
        let run = run_sequence(&params, &CellVariant::linear(2), &xs).unwrap();
        for k in 0..8 {
            let j = state_jacobian(&run.tape, &params, k + 1, k).unwrap();
            assert_eq!(&j, params.w(Gate::Instant));
        }
        assert!(state_jacobian(&run.tape, &params, 3, 3).is_err());
        assert!(state_jacobian(&run.tape, &params, 9, 0).is_err());
    }

    #[test]
    fn jacobian_from_initial_state_matches_fd() {
        let params = init_params(4, 1, 1, 8).unwrap();
        let mut rng = SplitMix64::new(5);
        let xs = random_xs(14, 1, &mut rng);
        for kind in [CellKind::TauGru, CellKind::SimpleDelayGru] {
            for m in [0, 1, 3] {
                let v = CellVariant { kind, ..CellVariant::tau_gru(m) };
                let h0 = vec![0.1, -0.2, 0.3, 0.05];
                let run = run_sequence_from(&params, &v, &xs, Some(&h0)).unwrap();
                let n = 14;
                let j = state_jacobian(&run.tape, &params, n, 0).unwrap();
                let h = 1e-6;
                for col in 0..4 {
                    let mut hp = h0.clone();
                    hp[col] += h;
                    let mut hm = h0.clone();
                    hm[col] -= h;
                    let p = run_sequence_from(&params, &v, &xs, Some(&hp)).unwrap();
                    let q = run_sequence_from(&params, &v, &xs, Some(&hm)).unwrap();
                    for row in 0..4 {
                        let fd = (p.hs[n - 1][row] - q.hs[n - 1][row]) / (2.0 * h);
                        assert!((fd - j.get(row, col)).abs() < 1e-6, "{kind:?} m={m}");
                    }
                }
            }
        }
    }

    #[test]
    fn replay_is_bit_exact() {
        let params = init_params(5, 2, 1, 9).unwrap();
        let mut rng = SplitMix64::new(9);
        let xs = random_xs(30, 2, &mut rng);
        let run = run_sequence(&params, &CellVariant::tau_gru(4), &xs).unwrap();
        assert_eq!(run.tape.replay(&params).unwrap(), run.hs);
    }

    #[test]
    fn prop1_base_cases() {
        let a = Matrix::diag(&[0.5, -0.3]);
        let b = Matrix::diag(&[0.2, 0.4]);
        let c = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let m = 3;
        // ∂h_{m+2}/∂u_0 = (B + A^{m+1}) C
        let expect = b.add(&a.pow(m + 1).unwrap()).unwrap().matmul(&c).unwrap();
        let got = prop1_oracle(&a, &b, &c, m, m + 2, 0).unwrap();
        assert!(got.max_abs_diff(&expect) < 1e-15);

        let zero = Matrix::zeros(2, 2);
        for target in 1..=2 * m + 2 {
            for input in 0..target {
                let got = prop1_oracle(&a, &zero, &c, m, target, input).unwrap();
                let expect = a.pow(target - 1 - input).unwrap().matmul(&c).unwrap();
                assert!(got.max_abs_diff(&expect) < 1e-15);
            }
        }
    }

    #[test]
    fn prop1_errors() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let c = Matrix::identity(2);
        assert!(matches!(prop1_oracle(&a, &b, &c, 2, 3, 0), Err(Error::NotCommuting(_))));
        let d = Matrix::identity(2);
        assert!(prop1_oracle(&d, &d, &c, 2, 7, 0).is_err());
        assert!(prop1_oracle(&d, &d, &c, 2, 3, 3).is_err());
        assert!(prop1_oracle(&d, &d, &c, 0, 1, 0).is_err());
    }

    #[test]
    fn bound_with_zero_recurrent_weights() {
        let mut params = init_params(3, 1, 1, 10).unwrap();
        for w in params.recurrent.iter_mut() {
            *w = Matrix::zeros(3, 3);
        }
        let xs = vec![Vector::filled(1, 0.4); 12];
        let run = run_sequence(&params, &CellVariant::tau_gru(3), &xs).unwrap();
        for span in 1..=4 {
            let chk = grad_norm_bound_check(&run.tape, &params, 10, 10 - span).unwrap();
            assert_eq!(chk.contraction, 0.0);
            assert!(chk.holds);
            assert!(chk.observed <= (1.0 - chk.epsilon).powi(span as i32) + 1e-15);
        }
        assert!(grad_norm_bound_check(&run.tape, &params, 10, 5).is_err());
    }
}
