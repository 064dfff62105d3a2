//! Delay cells.
//!
//! Every cell advances a hidden state `h_n -> h_{n+1}` from the current state,
//! the delayed state `h_{n-m}` and the input `x_n`. The cells share one
//! parameter layout ([`CellParams`]); each cell kind reads the subset of
//! tensors it needs. Kinds are looked up by name through [`registry`].
//!
//! The gated cell with weighted delay feedback computes
//!
//! ```text
//! u = tanh(W1 h_n     + U1 x_n + b1)      instantaneous unit
//! z = tanh(W2 h_{n-m} + U2 x_n + b2)      delayed unit
//! g = sigmoid(W3 h_n  + U3 x_n + b3)      update gate
//! a = sigmoid(W4 h_n  + U4 x_n + b4)      feedback weighting
//! h_{n+1} = (1 - g) ⊙ h_n + g ⊙ (β u + α a ⊙ z)
//! ```
//!
//! with `α = β = 1` and the weighting enabled for the full model.

use std::fmt;
use std::str::FromStr;

use crate::bptt::BpttTape;
use crate::numerics::{matvec_acc, matvec_t_acc, outer_acc, sigmoid, tanh, Matrix, Vector};
use crate::rng::SplitMix64;
use crate::{Error, Result};

/// Role of a gate's parameter block. The discriminant is the block index
/// used in [`CellParams`] arrays and in the serialized layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Gate {
    Instant = 0,
    Delayed = 1,
    Update = 2,
    Weighting = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Instant, Gate::Delayed, Gate::Update, Gate::Weighting];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Number of tensors in [`CellParams`]: four recurrent matrices, four input
/// matrices, four biases, the decoder matrix and the decoder bias.
pub const NUM_TENSORS: usize = 14;

pub const TENSOR_NAMES: [&str; NUM_TENSORS] = [
    "W1", "W2", "W3", "W4", "U1", "U2", "U3", "U4", "b1", "b2", "b3", "b4", "V", "c",
];

/// All learnable tensors of a delay cell plus its linear read-out.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    hidden: usize,
    input: usize,
    output: usize,
    /// `W1..W4`, each `hidden × hidden`.
    pub recurrent: [Matrix; 4],
    /// `U1..U4`, each `hidden × input`.
    pub input_weights: [Matrix; 4],
    /// `b1..b4`.
    pub biases: [Vector; 4],
    /// `V`, `output × hidden`.
    pub decoder: Matrix,
    /// `c`.
    pub decoder_bias: Vector,
}

impl CellParams {
    pub fn zeros(hidden: usize, input: usize, output: usize) -> Self {
        Self {
            hidden,
            input,
            output,
            recurrent: std::array::from_fn(|_| Matrix::zeros(hidden, hidden)),
            input_weights: std::array::from_fn(|_| Matrix::zeros(hidden, input)),
            biases: std::array::from_fn(|_| Vector::zeros(hidden)),
            decoder: Matrix::zeros(output, hidden),
            decoder_bias: Vector::zeros(output),
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input(&self) -> usize {
        self.input
    }

    pub fn output(&self) -> usize {
        self.output
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.hidden, self.input, self.output)
    }

    pub fn w(&self, gate: Gate) -> &Matrix {
        &self.recurrent[gate.index()]
    }

    pub fn u(&self, gate: Gate) -> &Matrix {
        &self.input_weights[gate.index()]
    }

    pub fn b(&self, gate: Gate) -> &Vector {
        &self.biases[gate.index()]
    }

    /// Tensors in serialization order (see [`TENSOR_NAMES`]).
    pub fn tensors(&self) -> [&[f64]; NUM_TENSORS] {
        let [w1, w2, w3, w4] = &self.recurrent;
        let [u1, u2, u3, u4] = &self.input_weights;
        let [b1, b2, b3, b4] = &self.biases;
        [
            w1.data(),
            w2.data(),
            w3.data(),
            w4.data(),
            u1.data(),
            u2.data(),
            u3.data(),
            u4.data(),
            b1,
            b2,
            b3,
            b4,
            self.decoder.data(),
            &self.decoder_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; NUM_TENSORS] {
        let [w1, w2, w3, w4] = &mut self.recurrent;
        let [u1, u2, u3, u4] = &mut self.input_weights;
        let [b1, b2, b3, b4] = &mut self.biases;
        [
            w1.data_mut(),
            w2.data_mut(),
            w3.data_mut(),
            w4.data_mut(),
            u1.data_mut(),
            u2.data_mut(),
            u3.data_mut(),
            u4.data_mut(),
            b1,
            b2,
            b3,
            b4,
            self.decoder.data_mut(),
            &mut self.decoder_bias,
        ]
    }

    /// Total stored scalars, `4d² + 4dp + 4d + qd + q`.
    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn same_shape(&self, other: &CellParams) -> bool {
        self.dims() == other.dims()
    }

    /// Largest absolute entry difference across all tensors.
    pub fn max_abs_diff(&self, other: &CellParams) -> f64 {
        self.tensors()
            .iter()
            .zip(other.tensors().iter())
            .flat_map(|(a, b)| a.iter().zip(b.iter()))
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Which member of the cell family to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellKind {
    TauGru,
    SimpleDelayGru,
    LinearDelayed,
}

impl CellKind {
    pub const ALL: [CellKind; 3] = [CellKind::TauGru, CellKind::SimpleDelayGru, CellKind::LinearDelayed];

    pub fn name(self) -> &'static str {
        cell(self).name()
    }

    /// Stable integer code used in the parameter file header.
    pub fn code(self) -> u64 {
        match self {
            CellKind::TauGru => 0,
            CellKind::SimpleDelayGru => 1,
            CellKind::LinearDelayed => 2,
        }
    }

    pub fn from_code(code: u64) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CellKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        lookup(s).map(|c| c.kind()).ok_or_else(|| Error::Unknown {
            kind: "cell",
            name: s.to_string(),
        })
    }
}

/// Cell kind plus ablation knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellVariant {
    pub kind: CellKind,
    /// Scale of the delayed feedback term.
    pub alpha: f64,
    /// Scale of the instantaneous unit.
    pub beta: f64,
    /// When false the feedback weighting `a` is replaced by ones.
    pub use_weighting: bool,
    /// Delay in steps; `0` reads the current state.
    pub delay: usize,
}

impl CellVariant {
    pub fn tau_gru(delay: usize) -> Self {
        Self {
            kind: CellKind::TauGru,
            alpha: 1.0,
            beta: 1.0,
            use_weighting: true,
            delay,
        }
    }

    pub fn simple_delay_gru(delay: usize) -> Self {
        Self {
            kind: CellKind::SimpleDelayGru,
            ..Self::tau_gru(delay)
        }
    }

    pub fn linear(delay: usize) -> Self {
        Self {
            kind: CellKind::LinearDelayed,
            ..Self::tau_gru(delay)
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_weighting(mut self, on: bool) -> Self {
        self.use_weighting = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Invalid(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Scalars the cell actually reads for these dimensions.
    pub fn param_count(&self, hidden: usize, input: usize, output: usize) -> usize {
        let live = cell(self.kind).live_tensors(self);
        tensor_sizes(hidden, input, output)
            .iter()
            .zip(live)
            .filter_map(|(n, on)| on.then_some(*n))
            .sum()
    }
}

pub(crate) fn tensor_sizes(d: usize, p: usize, q: usize) -> [usize; NUM_TENSORS] {
    [
        d * d,
        d * d,
        d * d,
        d * d,
        d * p,
        d * p,
        d * p,
        d * p,
        d,
        d,
        d,
        d,
        q * d,
        q,
    ]
}

/// Intermediates of one step, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StepActivations {
    pub u: Vector,
    pub z: Vector,
    pub g: Vector,
    pub a: Vector,
    pub pre_u: Vector,
    pub pre_z: Vector,
    pub pre_g: Vector,
    pub pre_a: Vector,
    pub h_in: Vector,
    pub h_delay: Vector,
    pub h_out: Vector,
}

impl StepActivations {
    pub fn zeros(d: usize) -> Self {
        Self {
            u: Vector::zeros(d),
            z: Vector::zeros(d),
            g: Vector::zeros(d),
            a: Vector::zeros(d),
            pre_u: Vector::zeros(d),
            pre_z: Vector::zeros(d),
            pre_g: Vector::zeros(d),
            pre_a: Vector::zeros(d),
            h_in: Vector::zeros(d),
            h_delay: Vector::zeros(d),
            h_out: Vector::zeros(d),
        }
    }
}

/// Adjoint buffers written by [`DelayCell::backward`]. All are accumulated
/// into, never overwritten.
pub struct StepAdjoints<'a> {
    pub grads: &'a mut CellParams,
    pub h_in: &'a mut [f64],
    pub h_delay: &'a mut [f64],
    pub x: &'a mut [f64],
}

/// One member of the delay cell family.
pub trait DelayCell: Send + Sync {
    fn kind(&self) -> CellKind;

    fn name(&self) -> &'static str;

    /// Mask over [`TENSOR_NAMES`] of the tensors this cell reads.
    fn live_tensors(&self, variant: &CellVariant) -> [bool; NUM_TENSORS];

    /// Fill `act` for one step. `act.h_in`, `act.h_delay` are set here too.
    fn forward(
        &self,
        params: &CellParams,
        variant: &CellVariant,
        x: &[f64],
        h: &[f64],
        h_delay: &[f64],
        act: &mut StepActivations,
    );

    /// Pull the adjoint of `h_out` back to parameters, `h_in`, `h_delay` and `x`.
    fn backward(
        &self,
        params: &CellParams,
        variant: &CellVariant,
        x: &[f64],
        act: &StepActivations,
        dh_out: &[f64],
        adj: StepAdjoints<'_>,
    );

    /// Local Jacobians `(∂h_out/∂h_in, ∂h_out/∂h_delay)` holding the other
    /// state argument fixed.
    fn jacobians(&self, params: &CellParams, variant: &CellVariant, act: &StepActivations) -> (Matrix, Matrix);
}

static REGISTRY: [&dyn DelayCell; 3] = [&TauGruCell, &SimpleDelayGruCell, &LinearDelayedCell];

/// All registered cells.
pub fn registry() -> &'static [&'static dyn DelayCell] {
    &REGISTRY
}

pub fn lookup(name: &str) -> Option<&'static dyn DelayCell> {
    REGISTRY.iter().copied().find(|c| c.name() == name)
}

pub fn cell(kind: CellKind) -> &'static dyn DelayCell {
    match kind {
        CellKind::TauGru => &TauGruCell,
        CellKind::SimpleDelayGru => &SimpleDelayGruCell,
        CellKind::LinearDelayed => &LinearDelayedCell,
    }
}

#[inline]
fn affine(params: &CellParams, gate: Gate, state: &[f64], x: &[f64], out: &mut [f64]) {
    out.copy_from_slice(params.b(gate));
    matvec_acc(params.w(gate), state, out);
    matvec_acc(params.u(gate), x, out);
}

/// Accumulate the gradient of a pre-activation `W·state + U·x + b`.
#[inline]
fn affine_backward(
    params: &CellParams,
    grads: &mut CellParams,
    gate: Gate,
    dpre: &[f64],
    state: &[f64],
    x: &[f64],
    dstate: &mut [f64],
    dx: &mut [f64],
) {
    let i = gate.index();
    outer_acc(&mut grads.recurrent[i], dpre, state);
    outer_acc(&mut grads.input_weights[i], dpre, x);
    for (b, d) in grads.biases[i].iter_mut().zip(dpre) {
        *b += d;
    }
    matvec_t_acc(params.w(gate), dpre, dstate);
    matvec_t_acc(params.u(gate), dpre, dx);
}

fn scaled_rows(d: usize, m: &Matrix, row_scale: &[f64], out: &mut Matrix) {
    for i in 0..d {
        let s = row_scale[i];
        if s == 0.0 {
            continue;
        }
        for j in 0..d {
            let v = out.get(i, j) + s * m.get(i, j);
            out.set(i, j, v);
        }
    }
}

/// Gated cell with weighted delayed feedback.
pub struct TauGruCell;

impl DelayCell for TauGruCell {
    fn kind(&self) -> CellKind {
        CellKind::TauGru
    }

    fn name(&self) -> &'static str {
        "tau-gru"
    }

    fn live_tensors(&self, v: &CellVariant) -> [bool; NUM_TENSORS] {
        let instant = v.beta != 0.0;
        let delayed = v.alpha != 0.0;
        let weighting = delayed && v.use_weighting;
        [
            instant, delayed, true, weighting, instant, delayed, true, weighting, instant, delayed, true,
            weighting, true, true,
        ]
    }

    fn forward(
        &self,
        p: &CellParams,
        v: &CellVariant,
        x: &[f64],
        h: &[f64],
        h_delay: &[f64],
        act: &mut StepActivations,
    ) {
        act.h_in.copy_from_slice(h);
        act.h_delay.copy_from_slice(h_delay);

        affine(p, Gate::Instant, h, x, &mut act.pre_u);
        affine(p, Gate::Delayed, h_delay, x, &mut act.pre_z);
        affine(p, Gate::Update, h, x, &mut act.pre_g);
        for (o, s) in act.u.iter_mut().zip(act.pre_u.iter()) {
            *o = tanh(*s);
        }
        for (o, s) in act.z.iter_mut().zip(act.pre_z.iter()) {
            *o = tanh(*s);
        }
        for (o, s) in act.g.iter_mut().zip(act.pre_g.iter()) {
            *o = sigmoid(*s);
        }
        if v.use_weighting {
            affine(p, Gate::Weighting, h, x, &mut act.pre_a);
            for (o, s) in act.a.iter_mut().zip(act.pre_a.iter()) {
                *o = sigmoid(*s);
            }
        } else {
            act.pre_a.iter_mut().for_each(|x| *x = 0.0);
            act.a.iter_mut().for_each(|x| *x = 1.0);
        }
        for i in 0..h.len() {
            let cand = v.beta * act.u[i] + v.alpha * act.a[i] * act.z[i];
            act.h_out[i] = (1.0 - act.g[i]) * h[i] + act.g[i] * cand;
        }
    }

    fn backward(
        &self,
        p: &CellParams,
        v: &CellVariant,
        x: &[f64],
        act: &StepActivations,
        dh_out: &[f64],
        adj: StepAdjoints<'_>,
    ) {
        let d = dh_out.len();
        let mut dpre_u = vec![0.0; d];
        let mut dpre_z = vec![0.0; d];
        let mut dpre_g = vec![0.0; d];
        let mut dpre_a = vec![0.0; d];
        for i in 0..d {
            let delta = dh_out[i];
            let (u, z, g, a, h) = (act.u[i], act.z[i], act.g[i], act.a[i], act.h_in[i]);
            let cand = v.beta * u + v.alpha * a * z;
            let dcand = delta * g;
            adj.h_in[i] += delta * (1.0 - g);
            dpre_g[i] = delta * (cand - h) * g * (1.0 - g);
            dpre_u[i] = v.beta * dcand * (1.0 - u * u);
            dpre_z[i] = v.alpha * a * dcand * (1.0 - z * z);
            if v.use_weighting {
                dpre_a[i] = v.alpha * z * dcand * a * (1.0 - a);
            }
        }
        let StepAdjoints {
            grads,
            h_in: dh,
            h_delay: dh_delay,
            x: dx,
        } = adj;
        let h = act.h_in.as_slice();
        if v.beta != 0.0 {
            affine_backward(p, grads, Gate::Instant, &dpre_u, h, x, dh, dx);
        }
        if v.alpha != 0.0 {
            affine_backward(p, grads, Gate::Delayed, &dpre_z, &act.h_delay, x, dh_delay, dx);
        }
        affine_backward(p, grads, Gate::Update, &dpre_g, h, x, dh, dx);
        if v.use_weighting && v.alpha != 0.0 {
            affine_backward(p, grads, Gate::Weighting, &dpre_a, h, x, dh, dx);
        }
    }

    fn jacobians(&self, p: &CellParams, v: &CellVariant, act: &StepActivations) -> (Matrix, Matrix) {
        let d = act.h_in.len();
        let mut jh = Matrix::zeros(d, d);
        let mut jd = Matrix::zeros(d, d);
        let mut s_u = vec![0.0; d];
        let mut s_g = vec![0.0; d];
        let mut s_a = vec![0.0; d];
        let mut s_z = vec![0.0; d];
        for i in 0..d {
            let (u, z, g, a, h) = (act.u[i], act.z[i], act.g[i], act.a[i], act.h_in[i]);
            let cand = v.beta * u + v.alpha * a * z;
            jh.set(i, i, 1.0 - g);
            s_g[i] = g * (1.0 - g) * (cand - h);
            s_u[i] = g * v.beta * (1.0 - u * u);
            if v.use_weighting {
                s_a[i] = g * v.alpha * z * a * (1.0 - a);
            }
            s_z[i] = g * v.alpha * a * (1.0 - z * z);
        }
        scaled_rows(d, p.w(Gate::Update), &s_g, &mut jh);
        scaled_rows(d, p.w(Gate::Instant), &s_u, &mut jh);
        scaled_rows(d, p.w(Gate::Weighting), &s_a, &mut jh);
        scaled_rows(d, p.w(Gate::Delayed), &s_z, &mut jd);
        (jh, jd)
    }
}

/// Leaky-integrator delay GRU:
/// `h_{n+1} = (1-g) ⊙ h_n + g ⊙ tanh(W1 h_n + W2 h_{n-m} + U1 x_n + b1)`,
/// with `g` from the update gate block.
pub struct SimpleDelayGruCell;

impl DelayCell for SimpleDelayGruCell {
    fn kind(&self) -> CellKind {
        CellKind::SimpleDelayGru
    }

    fn name(&self) -> &'static str {
        "simple-delay-gru"
    }

    fn live_tensors(&self, _v: &CellVariant) -> [bool; NUM_TENSORS] {
        [
            true, true, true, false, true, false, true, false, true, false, true, false, true, true,
        ]
    }

    fn forward(
        &self,
        p: &CellParams,
        _v: &CellVariant,
        x: &[f64],
        h: &[f64],
        h_delay: &[f64],
        act: &mut StepActivations,
    ) {
        act.h_in.copy_from_slice(h);
        act.h_delay.copy_from_slice(h_delay);
        affine(p, Gate::Instant, h, x, &mut act.pre_u);
        matvec_acc(p.w(Gate::Delayed), h_delay, &mut act.pre_u);
        affine(p, Gate::Update, h, x, &mut act.pre_g);
        for i in 0..h.len() {
            act.u[i] = tanh(act.pre_u[i]);
            act.g[i] = sigmoid(act.pre_g[i]);
            act.h_out[i] = (1.0 - act.g[i]) * h[i] + act.g[i] * act.u[i];
        }
    }

    fn backward(
        &self,
        p: &CellParams,
        _v: &CellVariant,
        x: &[f64],
        act: &StepActivations,
        dh_out: &[f64],
        adj: StepAdjoints<'_>,
    ) {
        let d = dh_out.len();
        let mut dpre_u = vec![0.0; d];
        let mut dpre_g = vec![0.0; d];
        for i in 0..d {
            let delta = dh_out[i];
            let (u, g, h) = (act.u[i], act.g[i], act.h_in[i]);
            adj.h_in[i] += delta * (1.0 - g);
            dpre_g[i] = delta * (u - h) * g * (1.0 - g);
            dpre_u[i] = delta * g * (1.0 - u * u);
        }
        let StepAdjoints {
            grads,
            h_in: dh,
            h_delay: dh_delay,
            x: dx,
        } = adj;
        affine_backward(p, grads, Gate::Instant, &dpre_u, &act.h_in, x, dh, dx);
        outer_acc(&mut grads.recurrent[Gate::Delayed.index()], &dpre_u, &act.h_delay);
        matvec_t_acc(p.w(Gate::Delayed), &dpre_u, dh_delay);
        affine_backward(p, grads, Gate::Update, &dpre_g, &act.h_in, x, dh, dx);
    }

    fn jacobians(&self, p: &CellParams, _v: &CellVariant, act: &StepActivations) -> (Matrix, Matrix) {
        let d = act.h_in.len();
        let mut jh = Matrix::zeros(d, d);
        let mut jd = Matrix::zeros(d, d);
        let mut s_u = vec![0.0; d];
        let mut s_g = vec![0.0; d];
        for i in 0..d {
            let (u, g, h) = (act.u[i], act.g[i], act.h_in[i]);
            jh.set(i, i, 1.0 - g);
            s_g[i] = g * (1.0 - g) * (u - h);
            s_u[i] = g * (1.0 - u * u);
        }
        scaled_rows(d, p.w(Gate::Update), &s_g, &mut jh);
        scaled_rows(d, p.w(Gate::Instant), &s_u, &mut jh);
        scaled_rows(d, p.w(Gate::Delayed), &s_u, &mut jd);
        (jh, jd)
    }
}

/// `h_{n+1} = W1 h_n + W2 h_{n-m} + U1 x_n + b1`.
pub struct LinearDelayedCell;

impl DelayCell for LinearDelayedCell {
    fn kind(&self) -> CellKind {
        CellKind::LinearDelayed
    }

    fn name(&self) -> &'static str {
        "linear-delayed"
    }

    fn live_tensors(&self, _v: &CellVariant) -> [bool; NUM_TENSORS] {
        [
            true, true, false, false, true, false, false, false, true, false, false, false, true, true,
        ]
    }

    fn forward(
        &self,
        p: &CellParams,
        _v: &CellVariant,
        x: &[f64],
        h: &[f64],
        h_delay: &[f64],
        act: &mut StepActivations,
    ) {
        act.h_in.copy_from_slice(h);
        act.h_delay.copy_from_slice(h_delay);
        affine(p, Gate::Instant, h, x, &mut act.pre_u);
        matvec_acc(p.w(Gate::Delayed), h_delay, &mut act.pre_u);
        act.u.copy_from_slice(&act.pre_u);
        act.h_out.copy_from_slice(&act.pre_u);
    }

    fn backward(
        &self,
        p: &CellParams,
        _v: &CellVariant,
        x: &[f64],
        act: &StepActivations,
        dh_out: &[f64],
        adj: StepAdjoints<'_>,
    ) {
        let StepAdjoints {
            grads,
            h_in: dh,
            h_delay: dh_delay,
            x: dx,
        } = adj;
        affine_backward(p, grads, Gate::Instant, dh_out, &act.h_in, x, dh, dx);
        outer_acc(&mut grads.recurrent[Gate::Delayed.index()], dh_out, &act.h_delay);
        matvec_t_acc(p.w(Gate::Delayed), dh_out, dh_delay);
    }

    fn jacobians(&self, p: &CellParams, _v: &CellVariant, _act: &StepActivations) -> (Matrix, Matrix) {
        (p.w(Gate::Instant).clone(), p.w(Gate::Delayed).clone())
    }
}

/// Ring buffer of the last `delay + 1` hidden states.
///
/// `lookup(j)` returns `h_{n-j}` where `n` is the number of pushes so far;
/// slots that precede step 0 hold the zero initial function.
#[derive(Debug, Clone)]
pub struct HiddenHistory {
    ring: Vec<Vector>,
    write_index: usize,
    step_count: usize,
}

impl HiddenHistory {
    pub fn new(dim: usize, delay: usize) -> Self {
        Self {
            ring: vec![Vector::zeros(dim); delay + 1],
            write_index: 0,
            step_count: 0,
        }
    }

    /// Zero history except `h_0 = initial`.
    pub fn with_initial(initial: &[f64], delay: usize) -> Self {
        let mut hist = Self::new(initial.len(), delay);
        hist.ring[0].copy_from_slice(initial);
        hist
    }

    pub fn capacity(&self) -> usize {
        self.ring.len()
    }

    pub fn delay(&self) -> usize {
        self.ring.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.ring[0].len()
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    /// `h_{n-j}` for `0 ≤ j ≤ delay`.
    pub fn lookup(&self, j: usize) -> &Vector {
        assert!(j < self.ring.len(), "history lookup {j} beyond delay {}", self.delay());
        let cap = self.ring.len();
        &self.ring[(self.write_index + cap - j) % cap]
    }

    pub fn current(&self) -> &Vector {
        self.lookup(0)
    }

    pub fn push(&mut self, h: &[f64]) {
        self.write_index = (self.write_index + 1) % self.ring.len();
        self.ring[self.write_index].copy_from_slice(h);
        self.step_count += 1;
    }
}

fn check_step_shapes(params: &CellParams, x: &[f64], hist: &HiddenHistory, delay: usize) -> Result<()> {
    let (d, p, _) = params.dims();
    if x.len() != p {
        return Err(Error::DimensionMismatch {
            op: "cell input",
            left: (d, p),
            right: (x.len(), 1),
        });
    }
    if hist.dim() != d {
        return Err(Error::DimensionMismatch {
            op: "hidden history",
            left: (d, 1),
            right: (hist.dim(), 1),
        });
    }
    if hist.capacity() != delay + 1 {
        return Err(Error::Invalid(format!(
            "history capacity {} does not match delay {delay} + 1",
            hist.capacity()
        )));
    }
    Ok(())
}

/// Advance any cell of the family by one step, pushing `h_{n+1}` into `hist`.
pub fn step(params: &CellParams, variant: &CellVariant, x: &[f64], hist: &mut HiddenHistory) -> Result<StepActivations> {
    check_step_shapes(params, x, hist, variant.delay)?;
    let mut act = StepActivations::zeros(params.hidden());
    let h = hist.current().clone();
    let h_delay = hist.lookup(variant.delay).clone();
    cell(variant.kind).forward(params, variant, x, &h, &h_delay, &mut act);
    hist.push(&act.h_out);
    Ok(act)
}

/// One step of the gated delay cell; `variant.kind` is ignored.
pub fn step_taugru(params: &CellParams, variant: &CellVariant, x: &[f64], hist: &mut HiddenHistory) -> Result<StepActivations> {
    let v = CellVariant {
        kind: CellKind::TauGru,
        ..*variant
    };
    step(params, &v, x, hist)
}

/// One step of the simple delay GRU; the delay is taken from the history capacity.
pub fn step_simple_delay_gru(params: &CellParams, x: &[f64], hist: &mut HiddenHistory) -> Result<StepActivations> {
    let v = CellVariant::simple_delay_gru(hist.delay());
    step(params, &v, x, hist)
}

/// `h_{n+1} = A h_n + B h_{n-m} + C u_n` with `m = hist.delay()`.
pub fn step_linear(a: &Matrix, b: &Matrix, c: &Matrix, u: &[f64], hist: &mut HiddenHistory) -> Result<Vector> {
    let d = hist.dim();
    if a.shape() != (d, d) || b.shape() != (d, d) {
        return Err(Error::DimensionMismatch {
            op: "step_linear state matrices",
            left: a.shape(),
            right: b.shape(),
        });
    }
    if c.shape() != (d, u.len()) {
        return Err(Error::DimensionMismatch {
            op: "step_linear input matrix",
            left: c.shape(),
            right: (u.len(), 1),
        });
    }
    let mut out = vec![0.0; d];
    matvec_acc(a, hist.current(), &mut out);
    matvec_acc(b, hist.lookup(hist.delay()), &mut out);
    matvec_acc(c, u, &mut out);
    hist.push(&out);
    Ok(out.into())
}

/// Output of [`run_sequence`].
#[derive(Debug, Clone)]
pub struct SequenceRun {
    /// `h_1 .. h_N`.
    pub hs: Vec<Vector>,
    /// `y_n = V h_{n+1} + c`.
    pub ys: Vec<Vector>,
    pub tape: BpttTape,
}

pub fn run_sequence(params: &CellParams, variant: &CellVariant, xs: &[Vector]) -> Result<SequenceRun> {
    run_sequence_from(params, variant, xs, None)
}

/// Like [`run_sequence`] but with `h_0 = initial` (pre-history stays zero).
pub fn run_sequence_from(
    params: &CellParams,
    variant: &CellVariant,
    xs: &[Vector],
    initial: Option<&[f64]>,
) -> Result<SequenceRun> {
    let mut tape = BpttTape::new(*variant);
    let mut ys = Vec::new();
    forward_into(params, variant, xs, initial, &mut tape, &mut ys)?;
    let hs = tape.steps.iter().map(|s| s.h_out.clone()).collect();
    Ok(SequenceRun { hs, ys, tape })
}

/// Forward pass that reuses the allocations in `tape` and `ys`.
pub fn forward_into(
    params: &CellParams,
    variant: &CellVariant,
    xs: &[Vector],
    initial: Option<&[f64]>,
    tape: &mut BpttTape,
    ys: &mut Vec<Vector>,
) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::Invalid("empty input sequence".into()));
    }
    variant.validate()?;
    let (d, p, q) = params.dims();
    if let Some(h0) = initial {
        if h0.len() != d {
            return Err(Error::DimensionMismatch {
                op: "initial state",
                left: (d, 1),
                right: (h0.len(), 1),
            });
        }
    }
    if let Some(bad) = xs.iter().find(|x| x.len() != p) {
        return Err(Error::DimensionMismatch {
            op: "cell input",
            left: (d, p),
            right: (bad.len(), 1),
        });
    }
    let cell = cell(variant.kind);
    let mut hist = match initial {
        Some(h0) => HiddenHistory::with_initial(h0, variant.delay),
        None => HiddenHistory::new(d, variant.delay),
    };

    tape.variant = *variant;
    tape.steps.truncate(xs.len());
    while tape.steps.len() < xs.len() {
        tape.steps.push(StepActivations::zeros(d));
    }
    tape.inputs.clear();
    tape.inputs.extend(xs.iter().cloned());
    ys.truncate(xs.len());
    while ys.len() < xs.len() {
        ys.push(Vector::zeros(q));
    }

    for (n, x) in xs.iter().enumerate() {
        let act = &mut tape.steps[n];
        cell.forward(params, variant, x, hist.current(), hist.lookup(variant.delay), act);
        hist.push(&act.h_out);
        let y = &mut ys[n];
        y.copy_from_slice(&params.decoder_bias);
        matvec_acc(&params.decoder, &act.h_out, y);
    }
    Ok(())
}

/// Random initial parameters, deterministic in `seed`.
///
/// Recurrent matrices are uniform on `±1/√d`; input and decoder matrices use
/// Glorot-uniform limits `±√(6/(fan_in + fan_out))`; biases start at zero.
pub fn init_params(hidden: usize, input: usize, output: usize, seed: u64) -> Result<CellParams> {
    if hidden == 0 || input == 0 || output == 0 {
        return Err(Error::Invalid("cell dimensions must be positive".into()));
    }
    let mut rng = SplitMix64::new(seed);
    let mut params = CellParams::zeros(hidden, input, output);
    let w_lim = 1.0 / (hidden as f64).sqrt();
    let u_lim = (6.0 / (hidden + input) as f64).sqrt();
    let v_lim = (6.0 / (hidden + output) as f64).sqrt();
    for w in params.recurrent.iter_mut() {
        w.data_mut().iter_mut().for_each(|x| *x = rng.uniform(-w_lim, w_lim));
    }
    for u in params.input_weights.iter_mut() {
        u.data_mut().iter_mut().for_each(|x| *x = rng.uniform(-u_lim, u_lim));
    }
    params
        .decoder
        .data_mut()
        .iter_mut()
        .for_each(|x| *x = rng.uniform(-v_lim, v_lim));
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_xs(len: usize, p: usize, seed: u64) -> Vec<Vector> {
        let mut rng = SplitMix64::new(seed);
        (0..len)
            .map(|_| (0..p).map(|_| rng.uniform(-1.0, 1.0)).collect::<Vec<_>>().into())
            .collect()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init_params(16, 1, 1, 7).unwrap();
        let b = init_params(16, 1, 1, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.biases.iter().all(|b| b.iter().all(|x| *x == 0.0)));
        assert!(a.decoder_bias.iter().all(|x| *x == 0.0));
        assert_ne!(a, init_params(16, 1, 1, 8).unwrap());
    }

    #[test]
    fn param_counts() {
        let p = init_params(16, 1, 1, 0).unwrap();
        assert_eq!(p.param_count(), 1169);
        assert_eq!(CellVariant::tau_gru(10).param_count(16, 1, 1), 1169);
        // W1..W3, U1, U3, b1, b3, V, c.
        assert_eq!(CellVariant::simple_delay_gru(10).param_count(16, 1, 1), 849);
        // Feedback and its weighting removed.
        assert_eq!(CellVariant::tau_gru(10).with_alpha(0.0).param_count(16, 1, 1), 593);
        assert_eq!(CellVariant::tau_gru(10).with_beta(0.0).param_count(16, 1, 1), 881);
        assert_eq!(CellVariant::tau_gru(10).with_weighting(false).param_count(16, 1, 1), 881);
    }

    #[test]
    fn zero_params_fixed_point() {
        let params = CellParams::zeros(3, 2, 1);
        let mut hist = HiddenHistory::new(3, 2);
        let act = step_taugru(&params, &CellVariant::tau_gru(2), &[0.3, -0.7], &mut hist).unwrap();
        assert_eq!(act.g.as_slice(), &[0.5; 3]);
        assert_eq!(act.a.as_slice(), &[0.5; 3]);
        assert_eq!(act.u.as_slice(), &[0.0; 3]);
        assert_eq!(act.z.as_slice(), &[0.0; 3]);
        assert_eq!(act.h_out.as_slice(), &[0.0; 3]);

        let mut hist = HiddenHistory::new(3, 2);
        for _ in 0..5 {
            let act = step_simple_delay_gru(&params, &[1.0, 1.0], &mut hist).unwrap();
            assert_eq!(act.h_out.as_slice(), &[0.0; 3]);
        }
    }

    #[test]
    fn history_lookup() {
        let mut hist = HiddenHistory::new(1, 2);
        assert_eq!(hist.lookup(2).as_slice(), &[0.0]);
        for k in 1..=5 {
            hist.push(&[k as f64]);
            assert_eq!(hist.lookup(0).as_slice(), &[k as f64]);
            let back1 = (k - 1) as f64;
            assert_eq!(hist.lookup(1).as_slice(), &[back1]);
            let back2 = if k >= 2 { (k - 2) as f64 } else { 0.0 };
            assert_eq!(hist.lookup(2).as_slice(), &[back2]);
        }
        assert_eq!(hist.capacity(), 3);
        assert_eq!(hist.step_count(), 5);
    }

    #[test]
    fn linear_recursion_by_hand() {
        let i1 = Matrix::identity(1);
        let mut hist = HiddenHistory::new(1, 1);
        let hs: Vec<f64> = (0..3)
            .map(|_| step_linear(&i1, &i1, &i1, &[1.0], &mut hist).unwrap()[0])
            .collect();
        // h1 = 1, h2 = h1 + h0 + 1 = 2, h3 = h2 + h1 + 1 = 4.
        assert_eq!(hs, vec![1.0, 2.0, 4.0]);

        let zero = Matrix::zeros(2, 2);
        let c = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let mut hist = HiddenHistory::new(2, 3);
        let h = step_linear(&zero, &zero, &c, &[1.0, -1.0], &mut hist).unwrap();
        assert_eq!(h.as_slice(), &[-1.0, -1.0]);
    }

    #[test]
    fn alpha_zero_ignores_delay_and_delayed_block() {
        let params = init_params(4, 2, 1, 3).unwrap();
        let xs = random_xs(30, 2, 1);
        let base = run_sequence(&params, &CellVariant::tau_gru(0).with_alpha(0.0), &xs).unwrap();
        for m in [1, 3, 9] {
            let mut other = params.clone();
            other.recurrent[1] = init_params(4, 2, 1, 99).unwrap().recurrent[1].clone();
            other.biases[1] = Vector::filled(4, 0.3);
            let run = run_sequence(&other, &CellVariant::tau_gru(m).with_alpha(0.0), &xs).unwrap();
            assert_eq!(run.hs, base.hs);
        }
    }

    #[test]
    fn simple_gru_with_zero_delay_weights_ignores_delay() {
        let mut params = init_params(5, 1, 1, 11).unwrap();
        params.recurrent[1] = Matrix::zeros(5, 5);
        let xs = random_xs(25, 1, 2);
        let base = run_sequence(&params, &CellVariant::simple_delay_gru(0), &xs).unwrap();
        for m in [1, 4, 12] {
            let run = run_sequence(&params, &CellVariant::simple_delay_gru(m), &xs).unwrap();
            assert_eq!(run.hs, base.hs);
        }
    }

    #[test]
    fn zero_delay_with_tied_blocks_reads_instant_unit() {
        let mut params = init_params(4, 2, 1, 5).unwrap();
        params.recurrent[1] = params.recurrent[0].clone();
        params.input_weights[1] = params.input_weights[0].clone();
        params.biases[1] = Vector::filled(4, 0.1);
        params.biases[0] = Vector::filled(4, 0.1);
        let xs = random_xs(10, 2, 4);
        let run = run_sequence(&params, &CellVariant::tau_gru(0), &xs).unwrap();
        for s in &run.tape.steps {
            assert_eq!(s.z, s.u);
            for i in 0..4 {
                let expect = (1.0 - s.g[i]) * s.h_in[i] + s.g[i] * (s.u[i] + s.a[i] * s.u[i]);
                assert!((s.h_out[i] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_params_output_is_decoder_bias() {
        let mut params = CellParams::zeros(3, 1, 2);
        params.decoder_bias = vec![0.25, -1.5].into();
        let xs = random_xs(7, 1, 0);
        let run = run_sequence(&params, &CellVariant::tau_gru(2), &xs).unwrap();
        assert!(run.ys.iter().all(|y| y.as_slice() == [0.25, -1.5]));
    }

    #[test]
    fn length_one_sequence_is_step_plus_decode() {
        let params = init_params(4, 2, 3, 21).unwrap();
        let v = CellVariant::tau_gru(3);
        let xs = random_xs(1, 2, 8);
        let run = run_sequence(&params, &v, &xs).unwrap();
        let mut hist = HiddenHistory::new(4, 3);
        let act = step_taugru(&params, &v, &xs[0], &mut hist).unwrap();
        let mut y = crate::numerics::matvec(&params.decoder, &act.h_out).unwrap();
        y.iter_mut().zip(params.decoder_bias.iter()).for_each(|(a, b)| *a += b);
        assert_eq!(run.ys[0], y);
        assert_eq!(run.hs[0], act.h_out);
    }

    #[test]
    fn shape_errors() {
        let params = init_params(4, 2, 1, 0).unwrap();
        let mut hist = HiddenHistory::new(4, 2);
        assert!(step_taugru(&params, &CellVariant::tau_gru(2), &[1.0], &mut hist).is_err());
        let mut wrong_cap = HiddenHistory::new(4, 5);
        assert!(step_taugru(&params, &CellVariant::tau_gru(2), &[1.0, 2.0], &mut wrong_cap).is_err());
        assert!(run_sequence(&params, &CellVariant::tau_gru(2), &[]).is_err());
        let mut hist = HiddenHistory::new(2, 1);
        assert!(step_linear(&Matrix::zeros(3, 3), &Matrix::zeros(2, 2), &Matrix::zeros(2, 1), &[1.0], &mut hist).is_err());
    }

    #[test]
    fn registry_names_round_trip() {
        for kind in CellKind::ALL {
            assert_eq!(kind.name().parse::<CellKind>().unwrap(), kind);
            assert_eq!(CellKind::from_code(kind.code()), Some(kind));
        }
        assert!("lstm".parse::<CellKind>().is_err());
        assert_eq!(registry().len(), CellKind::ALL.len());
    }
}
