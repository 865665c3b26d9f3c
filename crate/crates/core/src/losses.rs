//! Cosine-similarity InfoNCE and its two multi-positive extensions, with
//! analytic gradients with respect to every input row.
//!
//! For positive view `p`, the in-batch negatives of anchor `i` are the rows of
//! view `p` itself, so each term is an exact softmax over one view.

use crate::error::{Error, Result};
use crate::tensor::{dot, norm, Matrix};

pub const DEFAULT_TEMPERATURE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Sum over positives outside the log.
    SumOut,
    /// Sum over negated-similarity positives inside the log.
    SumIn,
}

#[derive(Clone, Debug)]
pub struct ContrastiveBatch {
    anchors: Matrix,
    positives: Vec<Matrix>,
    temperature: f64,
    lambda_m: f64,
}

impl ContrastiveBatch {
    pub fn new(anchors: Matrix, positives: Vec<Matrix>, temperature: f64, lambda_m: f64) -> Result<Self> {
        if positives.is_empty() {
            return Err(Error::Config("at least one positive view is required".into()));
        }
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
        }
        if !(lambda_m > 0.0) || !lambda_m.is_finite() {
            return Err(Error::Config(format!("lambda_m must be positive, got {lambda_m}")));
        }
        for (p, view) in positives.iter().enumerate() {
            if view.shape() != anchors.shape() {
                return Err(Error::Shape(format!(
                    "positive view {p} is {:?}, anchors are {:?}",
                    view.shape(),
                    anchors.shape()
                )));
            }
        }
        if anchors.rows() < 2 {
            return Err(Error::InsufficientData(format!(
                "contrastive losses need at least 2 rows, got {}",
                anchors.rows()
            )));
        }
        Ok(Self {
            anchors,
            positives,
            temperature,
            lambda_m,
        })
    }

    pub fn anchors(&self) -> &Matrix {
        &self.anchors
    }

    pub fn positives(&self) -> &[Matrix] {
        &self.positives
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn lambda_m(&self) -> f64 {
        self.lambda_m
    }

    pub fn num_positives(&self) -> usize {
        self.positives.len()
    }
}

#[derive(Clone, Debug)]
pub struct LossValue {
    pub value: f64,
    pub grad_anchors: Matrix,
    pub grad_positives: Vec<Matrix>,
}

pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateInput("cosine similarity of a zero vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Rows scaled to unit length, remembering the original norms.
struct UnitRows {
    unit: Matrix,
    norms: Vec<f64>,
}

impl UnitRows {
    fn new(m: &Matrix, what: &str) -> Result<Self> {
        let mut unit = m.clone();
        let mut norms = Vec::with_capacity(m.rows());
        for i in 0..m.rows() {
            let row = unit.row_mut(i);
            let n = norm(row);
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::DegenerateInput(format!("{what} row {i} has norm {n}")));
            }
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        Ok(Self { unit, norms })
    }
}

/// Softmax statistics of anchors against one positive view.
struct ViewTerms {
    cos: Matrix,
    softmax: Matrix,
    /// `log softmax` of the matching (diagonal) entry per anchor.
    log_prob: Vec<f64>,
    /// `logsumexp_j sim(i, j)/τ` per anchor.
    log_denominator: Vec<f64>,
}

fn view_terms(anchors: &UnitRows, view: &UnitRows, temperature: f64) -> Result<ViewTerms> {
    Ok(terms_from_cosines(anchors.unit.matmul_t(&view.unit)?, temperature))
}

fn terms_from_cosines(cos: Matrix, temperature: f64) -> ViewTerms {
    let n = cos.rows();
    let mut softmax = Matrix::zeros(n, n);
    let mut log_prob = Vec::with_capacity(n);
    let mut log_denominator = Vec::with_capacity(n);
    for i in 0..n {
        let logits: Vec<f64> = cos.row(i).iter().map(|c| c / temperature).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let lse = max + sum.ln();
        for (s, l) in softmax.row_mut(i).iter_mut().zip(&logits) {
            *s = (l - lse).exp();
        }
        log_prob.push(logits[i] - lse);
        log_denominator.push(lse);
    }
    ViewTerms {
        cos,
        softmax,
        log_prob,
        log_denominator,
    }
}

/// Mean over anchors of `−λ Σ_p log softmax_p(i, i)`.
fn sum_out_value(terms: &[ViewTerms], lambda: f64) -> f64 {
    let n = terms[0].log_prob.len();
    let mut per_anchor = vec![0.0; n];
    for t in terms {
        for (acc, lp) in per_anchor.iter_mut().zip(&t.log_prob) {
            *acc += -(lambda * lp);
        }
    }
    per_anchor.iter().sum::<f64>() / n as f64
}

/// Pulls `∂L/∂cos` back through `cos_ij = âᵢ·b̂ⱼ` onto the raw rows.
fn cosine_backward(anchors: &UnitRows, view: &UnitRows, cos: &Matrix, grad_cos: &Matrix) -> Result<(Matrix, Matrix)> {
    let n = cos.rows();
    let mut grad_a = grad_cos.matmul(&view.unit)?;
    let mut grad_b = grad_cos.t_matmul(&anchors.unit)?;
    for i in 0..n {
        let coupling: f64 = (0..n).map(|j| grad_cos[(i, j)] * cos[(i, j)]).sum();
        let inv = 1.0 / anchors.norms[i];
        for (g, a) in grad_a.row_mut(i).iter_mut().zip(anchors.unit.row(i)) {
            *g = (*g - coupling * a) * inv;
        }
    }
    for j in 0..n {
        let coupling: f64 = (0..n).map(|i| grad_cos[(i, j)] * cos[(i, j)]).sum();
        let inv = 1.0 / view.norms[j];
        for (g, b) in grad_b.row_mut(j).iter_mut().zip(view.unit.row(j)) {
            *g = (*g - coupling * b) * inv;
        }
    }
    Ok((grad_a, grad_b))
}

fn finite(value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(format!("contrastive loss evaluated to {value}")))
    }
}

/// InfoNCE with in-batch negatives; requires exactly one positive view.
pub fn info_nce(batch: &ContrastiveBatch) -> Result<LossValue> {
    if batch.num_positives() != 1 {
        return Err(Error::Config(format!(
            "info_nce takes one positive view, got {}",
            batch.num_positives()
        )));
    }
    let n = batch.anchors.rows();
    let tau = batch.temperature;
    let anchors = UnitRows::new(&batch.anchors, "anchor")?;
    let view = UnitRows::new(&batch.positives[0], "positive")?;
    let terms = view_terms(&anchors, &view, tau)?;

    let per_anchor: Vec<f64> = terms.log_prob.iter().map(|lp| -lp).collect();
    let value = per_anchor.iter().sum::<f64>() / n as f64;

    let grad_cos = Matrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        (terms.softmax[(i, j)] - delta) / n as f64 / tau
    });
    let (grad_anchors, grad_view) = cosine_backward(&anchors, &view, &terms.cos, &grad_cos)?;
    Ok(LossValue {
        value: finite(value)?,
        grad_anchors,
        grad_positives: vec![grad_view],
    })
}

/// `−λ Σ_p log softmax_p(i, i)`, averaged over anchors.
pub fn multi_pos_loss_sum_out(batch: &ContrastiveBatch) -> Result<LossValue> {
    let n = batch.anchors.rows();
    let tau = batch.temperature;
    let lambda = batch.lambda_m;
    let anchors = UnitRows::new(&batch.anchors, "anchor")?;
    let views = batch
        .positives
        .iter()
        .map(|p| UnitRows::new(p, "positive"))
        .collect::<Result<Vec<_>>>()?;
    let terms = views
        .iter()
        .map(|v| view_terms(&anchors, v, tau))
        .collect::<Result<Vec<_>>>()?;
    let value = sum_out_value(&terms, lambda);

    let mut grad_anchors = Matrix::zeros(n, batch.anchors.cols());
    let mut grad_positives = Vec::with_capacity(views.len());
    for (view, t) in views.iter().zip(&terms) {
        let grad_cos = Matrix::from_fn(n, n, |i, j| {
            let delta = if i == j { 1.0 } else { 0.0 };
            lambda * (t.softmax[(i, j)] - delta) / n as f64 / tau
        });
        let (ga, gv) = cosine_backward(&anchors, view, &t.cos, &grad_cos)?;
        grad_anchors = grad_anchors.add(&ga)?;
        grad_positives.push(gv);
    }
    Ok(LossValue {
        value: finite(value)?,
        grad_anchors,
        grad_positives,
    })
}

/// `−log Σ_p λ e^{−sim(i, i⁺_p)/τ} / D_p(i)`, averaged over anchors.
pub fn multi_pos_loss_sum_in(batch: &ContrastiveBatch) -> Result<LossValue> {
    let n = batch.anchors.rows();
    let m = batch.num_positives();
    let tau = batch.temperature;
    let log_lambda = batch.lambda_m.ln();
    let anchors = UnitRows::new(&batch.anchors, "anchor")?;
    let views = batch
        .positives
        .iter()
        .map(|p| UnitRows::new(p, "positive"))
        .collect::<Result<Vec<_>>>()?;
    let terms = views
        .iter()
        .map(|v| view_terms(&anchors, v, tau))
        .collect::<Result<Vec<_>>>()?;

    // t[p][i] = log λ − sim_p(i,i)/τ − log D_p(i);  L_i = −logsumexp_p t[p][i]
    let mut value = 0.0;
    let mut weights = vec![vec![0.0; n]; m];
    for i in 0..n {
        let t: Vec<f64> = terms
            .iter()
            .map(|tp| log_lambda - tp.cos[(i, i)] / tau - tp.log_denominator[i])
            .collect();
        let max = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = t.iter().map(|x| (x - max).exp()).sum();
        let lse = max + sum.ln();
        value += -lse;
        for p in 0..m {
            weights[p][i] = (t[p] - lse).exp();
        }
    }
    let value = value / n as f64;

    let mut grad_anchors = Matrix::zeros(n, batch.anchors.cols());
    let mut grad_positives = Vec::with_capacity(m);
    for p in 0..m {
        let tp = &terms[p];
        let grad_cos = Matrix::from_fn(n, n, |i, j| {
            let delta = if i == j { 1.0 } else { 0.0 };
            weights[p][i] * (tp.softmax[(i, j)] + delta) / n as f64 / tau
        });
        let (ga, gv) = cosine_backward(&anchors, &views[p], &tp.cos, &grad_cos)?;
        grad_anchors = grad_anchors.add(&ga)?;
        grad_positives.push(gv);
    }
    Ok(LossValue {
        value: finite(value)?,
        grad_anchors,
        grad_positives,
    })
}

pub fn contrastive_loss(batch: &ContrastiveBatch, kind: LossKind) -> Result<LossValue> {
    match kind {
        LossKind::SumOut => multi_pos_loss_sum_out(batch),
        LossKind::SumIn => multi_pos_loss_sum_in(batch),
    }
}
