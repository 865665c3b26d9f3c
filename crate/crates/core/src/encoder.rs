//! Toy two-layer tanh MLP with inverted dropout, its exact backward pass, and
//! construction of positive views by dropout or shuffled group whitening.

use rand::distr::{Distribution, Uniform};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{l2_normalize_rows, norm, Matrix};
use crate::whitening::{view_plan, GroupWhitening, WhiteningKind};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState {
    /// hidden × input
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// output × hidden
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub dropout_rate: f64,
    pub rng_seed: u64,
}

fn check_dropout(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    Ok(())
}

impl EncoderState {
    /// Glorot-uniform weights and zero biases drawn from `seed`.
    pub fn new(input: usize, hidden: usize, output: usize, dropout_rate: f64, seed: u64) -> Result<Self> {
        check_dropout(dropout_rate)?;
        if input == 0 || hidden == 0 || output == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
            Matrix::from_fn(rows, cols, |_, _| dist.sample(&mut rng))
        };
        let w1 = glorot(hidden, input);
        let w2 = glorot(output, hidden);
        Ok(Self {
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; output],
            dropout_rate,
            rng_seed: seed,
        })
    }

    pub fn from_parts(w1: Matrix, b1: Vec<f64>, w2: Matrix, b2: Vec<f64>, dropout_rate: f64, rng_seed: u64) -> Result<Self> {
        check_dropout(dropout_rate)?;
        if b1.len() != w1.rows() || w2.cols() != w1.rows() || b2.len() != w2.rows() {
            return Err(Error::Shape(format!(
                "inconsistent encoder parameters: w1 {:?}, b1 {}, w2 {:?}, b2 {}",
                w1.shape(),
                b1.len(),
                w2.shape(),
                b2.len()
            )));
        }
        let state = Self {
            w1,
            b1,
            w2,
            b2,
            dropout_rate,
            rng_seed,
        };
        if !state.is_finite() {
            return Err(Error::NonFinite("encoder parameters".into()));
        }
        Ok(state)
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.rows()
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite()
            && self.w2.is_finite()
            && self.b1.iter().chain(&self.b2).all(|v| v.is_finite())
    }

    /// `θ ← θ − lr·∇θ`
    pub fn sgd_step(&self, grads: &EncoderGrads, lr: f64) -> Result<EncoderState> {
        if !(lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        grads.check_against(self)?;
        let step = |p: &[f64], g: &[f64]| -> Vec<f64> { p.iter().zip(g).map(|(p, g)| p - lr * g).collect() };
        Ok(EncoderState {
            w1: Matrix::new(self.w1.rows(), self.w1.cols(), step(self.w1.as_slice(), grads.w1.as_slice()))?,
            b1: step(&self.b1, &grads.b1),
            w2: Matrix::new(self.w2.rows(), self.w2.cols(), step(self.w2.as_slice(), grads.w2.as_slice()))?,
            b2: step(&self.b2, &grads.b2),
            dropout_rate: self.dropout_rate,
            rng_seed: self.rng_seed,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderGrads {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl EncoderGrads {
    pub fn zeros_like(state: &EncoderState) -> Self {
        Self {
            w1: Matrix::zeros(state.w1.rows(), state.w1.cols()),
            b1: vec![0.0; state.b1.len()],
            w2: Matrix::zeros(state.w2.rows(), state.w2.cols()),
            b2: vec![0.0; state.b2.len()],
        }
    }

    fn check_against(&self, state: &EncoderState) -> Result<()> {
        if self.w1.shape() != state.w1.shape()
            || self.w2.shape() != state.w2.shape()
            || self.b1.len() != state.b1.len()
            || self.b2.len() != state.b2.len()
        {
            return Err(Error::Shape("gradient shapes do not match the encoder".into()));
        }
        Ok(())
    }

    pub fn accumulate(&mut self, other: &EncoderGrads) {
        let add = |a: &mut [f64], b: &[f64]| a.iter_mut().zip(b).for_each(|(a, b)| *a += b);
        add(self.w1.as_mut_slice(), other.w1.as_slice());
        add(&mut self.b1, &other.b1);
        add(self.w2.as_mut_slice(), other.w2.as_slice());
        add(&mut self.b2, &other.b2);
    }

    /// All parameter gradients flattened in `w1, b1, w2, b2` order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.w1.as_slice());
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(self.w2.as_slice());
        out.extend_from_slice(&self.b2);
        out
    }
}

/// Heavy-ball SGD; a momentum of zero is plain SGD.
#[derive(Clone, Debug)]
pub struct SgdMomentum {
    momentum: f64,
    velocity: Option<EncoderGrads>,
}

impl SgdMomentum {
    pub fn new(momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("SGD momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(Self { momentum, velocity: None })
    }

    pub fn step(&mut self, state: &EncoderState, grads: &EncoderGrads, lr: f64) -> Result<EncoderState> {
        if self.momentum == 0.0 {
            return state.sgd_step(grads, lr);
        }
        let velocity = match self.velocity.take() {
            None => grads.clone(),
            Some(mut v) => {
                let beta = self.momentum;
                let blend = |v: &mut [f64], g: &[f64]| v.iter_mut().zip(g).for_each(|(v, g)| *v = beta * *v + g);
                blend(v.w1.as_mut_slice(), grads.w1.as_slice());
                blend(&mut v.b1, &grads.b1);
                blend(v.w2.as_mut_slice(), grads.w2.as_slice());
                blend(&mut v.b2, &grads.b2);
                v
            }
        };
        let next = state.sgd_step(&velocity, lr)?;
        self.velocity = Some(velocity);
        Ok(next)
    }
}

#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub input: Matrix,
    pub pre_activation: Matrix,
    pub activation: Matrix,
    /// Inverted-dropout multipliers (0 or 1/(1−γ)); `None` when nothing was dropped.
    pub mask: Option<Matrix>,
    pub output: Matrix,
}

fn dropout_mask(rows: usize, cols: usize, rate: f64, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / (1.0 - rate);
    Matrix::from_fn(rows, cols, |_, _| if rng.random::<f64>() < rate { 0.0 } else { keep })
}

/// `h = drop(tanh(x W1ᵀ + b1)) W2ᵀ + b2`.
///
/// `mask_seed = None` runs in evaluation mode (no dropout).
pub fn forward(state: &EncoderState, x: &Matrix, mask_seed: Option<u64>) -> Result<(Matrix, ForwardTrace)> {
    if x.cols() != state.input_dim() {
        return Err(Error::Shape(format!(
            "input has {} features, encoder expects {}",
            x.cols(),
            state.input_dim()
        )));
    }
    let mut pre = x.matmul_t(&state.w1)?;
    for i in 0..pre.rows() {
        for (v, b) in pre.row_mut(i).iter_mut().zip(&state.b1) {
            *v += b;
        }
    }
    let activation = pre.map(f64::tanh);
    let mask = match mask_seed {
        Some(seed) if state.dropout_rate > 0.0 => Some(dropout_mask(
            activation.rows(),
            activation.cols(),
            state.dropout_rate,
            seed,
        )),
        _ => None,
    };
    let dropped = match &mask {
        Some(m) => Matrix::new(
            activation.rows(),
            activation.cols(),
            activation.as_slice().iter().zip(m.as_slice()).map(|(a, k)| a * k).collect(),
        )?,
        None => activation.clone(),
    };
    let mut output = dropped.matmul_t(&state.w2)?;
    for i in 0..output.rows() {
        for (v, b) in output.row_mut(i).iter_mut().zip(&state.b2) {
            *v += b;
        }
    }
    let trace = ForwardTrace {
        input: x.clone(),
        pre_activation: pre,
        activation,
        mask,
        output: output.clone(),
    };
    Ok((output, trace))
}

/// Exact parameter gradients of the traced forward pass.
pub fn backward(trace: &ForwardTrace, state: &EncoderState, grad_out: &Matrix) -> Result<EncoderGrads> {
    let n = trace.input.rows();
    if trace.input.cols() != state.input_dim()
        || trace.activation.shape() != (n, state.hidden_dim())
        || trace.output.shape() != (n, state.output_dim())
    {
        return Err(Error::Consistency(format!(
            "trace with input {:?} and hidden {:?} vs encoder {}→{}→{}",
            trace.input.shape(),
            trace.activation.shape(),
            state.input_dim(),
            state.hidden_dim(),
            state.output_dim()
        )));
    }
    if grad_out.shape() != trace.output.shape() {
        return Err(Error::Shape(format!(
            "output gradient {:?} for output {:?}",
            grad_out.shape(),
            trace.output.shape()
        )));
    }
    let dropped = match &trace.mask {
        Some(m) => Matrix::new(
            n,
            state.hidden_dim(),
            trace.activation.as_slice().iter().zip(m.as_slice()).map(|(a, k)| a * k).collect(),
        )?,
        None => trace.activation.clone(),
    };
    let w2 = grad_out.t_matmul(&dropped)?;
    let b2 = grad_out.column_means().iter().map(|m| m * n as f64).collect();

    let mut grad_pre = grad_out.matmul(&state.w2)?;
    for i in 0..n {
        for (h, g) in grad_pre.row_mut(i).iter_mut().enumerate() {
            let keep = trace.mask.as_ref().map_or(1.0, |m| m[(i, h)]);
            let a = trace.activation[(i, h)];
            *g *= keep * (1.0 - a * a);
        }
    }
    let w1 = grad_pre.t_matmul(&trace.input)?;
    let b1 = grad_pre.column_means().iter().map(|m| m * n as f64).collect();
    Ok(EncoderGrads { w1, b1, w2, b2 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Augmentation {
    DropoutOnly,
    Sgw,
}

/// Dropout seed of the `view`-th forward pass drawn from `base_seed`.
pub fn view_mask_seed(base_seed: u64, view: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(view);
    // the stream's first word seeds the view's shuffle plan
    rng.next_u64();
    rng.next_u64()
}

#[derive(Clone, Debug)]
pub struct ViewOptions {
    pub num_views: usize,
    pub augmentation: Augmentation,
    pub group_size: usize,
    pub ridge_eps: f64,
    pub seed: u64,
}

/// One positive view together with what is needed to backpropagate through it.
#[derive(Clone, Debug)]
pub struct View {
    /// Unit-norm rows.
    pub embedding: Matrix,
    pub trace: ForwardTrace,
    /// Frozen SGW transform, when the view was whitened.
    pub whitening: Option<GroupWhitening>,
    /// Rows fed to normalization (encoder output, whitened if applicable).
    pub pre_norm: Matrix,
}

impl View {
    /// Gradient on the encoder output given the gradient on the normalized embedding.
    pub fn backward_to_output(&self, grad_embedding: &Matrix) -> Result<Matrix> {
        let mut grad = Matrix::zeros(grad_embedding.rows(), grad_embedding.cols());
        for i in 0..grad.rows() {
            let x = self.pre_norm.row(i);
            let n = norm(x);
            if n < crate::tensor::NORM_FLOOR {
                grad.row_mut(i).copy_from_slice(grad_embedding.row(i));
                continue;
            }
            let y = self.embedding.row(i);
            let g = grad_embedding.row(i);
            let gy: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
            for (out, (gk, yk)) in grad.row_mut(i).iter_mut().zip(g.iter().zip(y)) {
                *out = (gk - gy * yk) / n;
            }
        }
        match &self.whitening {
            Some(w) => w.backward(&grad),
            None => Ok(grad),
        }
    }
}

/// Builds `num_views` unit-norm views of `x`, each from its own dropout mask and,
/// for [`Augmentation::Sgw`], its own shuffled group whitening.
pub fn build_views(state: &EncoderState, x: &Matrix, options: &ViewOptions) -> Result<Vec<View>> {
    if options.num_views == 0 {
        return Err(Error::Config("at least one view is required".into()));
    }
    (0..options.num_views as u64)
        .map(|j| {
            let (out, trace) = forward(state, x, Some(view_mask_seed(options.seed, j)))?;
            let (whitening, pre_norm) = match options.augmentation {
                Augmentation::DropoutOnly => (None, out),
                Augmentation::Sgw => {
                    let plan = view_plan(out.cols(), options.group_size, options.seed, j)?;
                    let gw = GroupWhitening::fit(&out, plan, WhiteningKind::Zca, options.ridge_eps)?;
                    let whitened = gw.apply(&out)?;
                    (Some(gw), whitened)
                }
            };
            let (embedding, _) = l2_normalize_rows(&pre_norm);
            Ok(View {
                embedding,
                trace,
                whitening,
                pre_norm,
            })
        })
        .collect()
}

/// Recomputes views under new parameters while reusing the dropout seeds and
/// frozen whitening transforms of `reference`.
pub fn rebuild_views(state: &EncoderState, x: &Matrix, options: &ViewOptions, reference: &[View]) -> Result<Vec<View>> {
    reference
        .iter()
        .enumerate()
        .map(|(j, r)| {
            let (out, trace) = forward(state, x, Some(view_mask_seed(options.seed, j as u64)))?;
            let pre_norm = match &r.whitening {
                Some(gw) => gw.apply(&out)?,
                None => out,
            };
            let (embedding, _) = l2_normalize_rows(&pre_norm);
            Ok(View {
                embedding,
                trace,
                whitening: r.whitening.clone(),
                pre_norm,
            })
        })
        .collect()
}
