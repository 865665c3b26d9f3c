//! The contrastive training loop, embedding evaluation and run reports.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::data::{derive_seed, same_cluster_pairs, similarity_pairs, PairSet, TrainingData};
use crate::checkpoint::{Checkpoint, EvalWhitening};
use crate::encoder::{backward, build_views, forward, Augmentation, EncoderGrads, EncoderState, SgdMomentum, View, ViewOptions};
use crate::error::{Error, Result};
use crate::losses::{contrastive_loss, ContrastiveBatch, LossKind};
use crate::metrics::{alignment_loss, spearman, uniformity_loss};
use crate::tensor::{dot, l2_normalize_rows, Matrix};
use crate::whitening::{group_whiten, GroupPlan, WhiteningKind, WhiteningStats};

/// Loss and parameter gradients of the contrastive objective over `views`,
/// view 0 acting as anchor and the rest as positives.
pub fn views_loss(state: &EncoderState, views: &[View], temperature: f64, lambda_m: f64, kind: LossKind) -> Result<(f64, EncoderGrads)> {
    if views.len() < 2 {
        return Err(Error::Config(format!("need an anchor and at least one positive view, got {} views", views.len())));
    }
    let batch = ContrastiveBatch::new(
        views[0].embedding.clone(),
        views[1..].iter().map(|v| v.embedding.clone()).collect(),
        temperature,
        lambda_m,
    )?;
    let loss = contrastive_loss(&batch, kind)?;
    let mut grads = EncoderGrads::zeros_like(state);
    for (view, grad) in views.iter().zip(std::iter::once(&loss.grad_anchors).chain(&loss.grad_positives)) {
        let grad_out = view.backward_to_output(grad)?;
        grads.accumulate(&backward(&view.trace, state, &grad_out)?);
    }
    Ok((loss.value, grads))
}

pub fn view_options(config: &TrainConfig, seed: u64) -> ViewOptions {
    ViewOptions {
        num_views: config.num_positives,
        augmentation: config.aug_kind,
        group_size: config.group_size,
        ridge_eps: config.ridge,
        seed,
    }
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub loss: f64,
    pub grads: EncoderGrads,
    pub views: Vec<View>,
}

/// Views of `batch`, the loss over them, and the gradient of that loss.
pub fn contrastive_step(state: &EncoderState, batch: &Matrix, config: &TrainConfig, view_seed: u64) -> Result<StepOutput> {
    let views = build_views(state, batch, &view_options(config, view_seed))?;
    let (loss, grads) = views_loss(state, &views, config.temperature, config.lambda(), config.loss_kind)?;
    Ok(StepOutput { loss, grads, views })
}

/// Unit-norm evaluation embeddings: the encoder without dropout, whitened per
/// group with stored momentum statistics when present.
pub fn embed(state: &EncoderState, x: &Matrix, whitening: Option<&EvalWhitening>, ridge_eps: f64) -> Result<Matrix> {
    let (out, _) = forward(state, x, None)?;
    let out = match whitening {
        Some(ew) => {
            let plan = GroupPlan::identity(out.cols(), ew.group_size)?;
            group_whiten(&out, &plan, &ew.stats, WhiteningKind::Zca, ridge_eps)?
        }
        None => out,
    };
    let (unit, degenerate) = l2_normalize_rows(&out);
    if let Some(&row) = degenerate.first() {
        return Err(Error::DegenerateInput(format!(
            "{} of {} embeddings have zero norm (first at row {row})",
            degenerate.len(),
            out.rows()
        )));
    }
    Ok(unit)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalMetrics {
    pub alignment: f64,
    pub uniformity: f64,
    pub spearman: f64,
}

impl EvalMetrics {
    pub fn to_line(&self) -> String {
        format!(
            "alignment={},uniformity={},spearman={}",
            self.alignment, self.uniformity, self.spearman
        )
    }
}

/// Alignment over same-cluster dev pairs, uniformity over all dev embeddings,
/// and Spearman between gold and embedding cosines of the harness pairs.
pub fn embedding_metrics(unit: &Matrix, labels: &[usize], pairs: &PairSet) -> Result<EvalMetrics> {
    let positives = same_cluster_pairs(labels);
    if positives.is_empty() {
        return Err(Error::InsufficientData("no cluster has two development samples".into()));
    }
    let left: Vec<usize> = positives.iter().map(|p| p.0).collect();
    let right: Vec<usize> = positives.iter().map(|p| p.1).collect();
    let alignment = alignment_loss(&unit.select_rows(&left), &unit.select_rows(&right))?;
    let uniformity = uniformity_loss(unit)?;
    let predicted: Vec<f64> = pairs.pairs.iter().map(|&(a, b)| dot(unit.row(a), unit.row(b))).collect();
    let spearman = spearman(&pairs.gold, &predicted)?;
    Ok(EvalMetrics {
        alignment,
        uniformity,
        spearman,
    })
}

/// Pair harness over the dev split, fixed by the data seed.
pub fn dev_pairs(data: &TrainingData, config: &TrainConfig) -> Result<PairSet> {
    similarity_pairs(&data.dev_labels, &data.centers, config.eval_pairs, derive_seed(config.data_seed, 2))
}

pub fn evaluate(checkpoint: &Checkpoint, data: &TrainingData, pairs: &PairSet, ridge_eps: f64) -> Result<EvalMetrics> {
    let unit = embed(&checkpoint.encoder, &data.dev, checkpoint.eval_whitening.as_ref(), ridge_eps)?;
    embedding_metrics(&unit, &data.dev_labels, pairs)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    pub loss: f64,
    pub metrics: EvalMetrics,
}

impl EvalRecord {
    pub fn to_line(&self) -> String {
        format!("step={},loss={},{}", self.step, self.loss, self.metrics.to_line())
    }
}

fn parse_fields(line: &str) -> Result<Vec<(&str, &str)>> {
    line.split(',')
        .map(|field| {
            field
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("report field '{field}' is not key=value")))
        })
        .collect()
}

fn field<T: std::str::FromStr>(fields: &[(&str, &str)], key: &str) -> Result<T> {
    let raw = fields
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| Error::Format(format!("report line lacks '{key}'")))?;
    raw.parse()
        .map_err(|_| Error::Format(format!("cannot parse {key}={raw}")))
}

/// Parses the `alignment`, `uniformity` and `spearman` fields of a report line.
pub fn parse_metrics(line: &str) -> Result<EvalMetrics> {
    let fields = parse_fields(line.trim())?;
    Ok(EvalMetrics {
        alignment: field(&fields, "alignment")?,
        uniformity: field(&fields, "uniformity")?,
        spearman: field(&fields, "spearman")?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub records: Vec<EvalRecord>,
    /// Index into `records` of the best dev Spearman (earliest on ties).
    pub best: usize,
}

impl RunReport {
    pub fn best_record(&self) -> &EvalRecord {
        &self.records[self.best]
    }

    pub fn final_record(&self) -> &EvalRecord {
        self.records.last().expect("a report holds at least the initial evaluation")
    }

    pub fn summary_line(&self) -> String {
        let best = self.best_record();
        let last = self.final_record();
        format!(
            "summary=run,evaluations={},best_step={},best_spearman={},final_step={},final_loss={},final_alignment={},final_uniformity={},final_spearman={}",
            self.records.len(),
            best.step,
            best.metrics.spearman,
            last.step,
            last.loss,
            last.metrics.alignment,
            last.metrics.uniformity,
            last.metrics.spearman
        )
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out.push_str(&self.summary_line());
        out.push('\n');
        out
    }

    /// Reads the evaluation records back; the summary line is recomputed, not trusted.
    pub fn parse(text: &str) -> Result<Self> {
        let mut records: Vec<EvalRecord> = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| l.starts_with("step=")) {
            let fields = parse_fields(line)?;
            let record = EvalRecord {
                step: field(&fields, "step")?,
                loss: field(&fields, "loss")?,
                metrics: parse_metrics(line)?,
            };
            if records.last().is_some_and(|prev| prev.step >= record.step) {
                return Err(Error::Format(format!("report step {} is out of order", record.step)));
            }
            records.push(record);
        }
        if records.is_empty() {
            return Err(Error::Format("report holds no evaluation records".into()));
        }
        let best = best_index(&records);
        Ok(Self { records, best })
    }
}

fn best_index(records: &[EvalRecord]) -> usize {
    let mut best = 0;
    for (k, r) in records.iter().enumerate() {
        if r.metrics.spearman > records[best].metrics.spearman {
            best = k;
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub report: RunReport,
    /// Parameters and evaluation statistics at the best dev Spearman.
    pub best: Checkpoint,
    pub last: Checkpoint,
}

fn update_eval_stats(stats: &mut Option<Vec<WhiteningStats>>, out: &Matrix, config: &TrainConfig) -> Result<()> {
    let g = config.group_size;
    if config.aug_kind != Augmentation::Sgw || !config.eval_whitening {
        return Ok(());
    }
    let stats = match stats {
        Some(s) => s,
        None => stats.insert(
            (0..out.cols() / g)
                .map(|_| WhiteningStats::new(g, config.momentum))
                .collect::<Result<_>>()?,
        ),
    };
    for (k, s) in stats.iter_mut().enumerate() {
        let channels: Vec<usize> = (k * g..(k + 1) * g).collect();
        s.update(&out.select_columns(&channels))?;
    }
    Ok(())
}

/// Runs `config.steps` parameter updates, evaluating on the dev split at step 0,
/// every `eval_every` steps, and after the last step. Records carry the
/// training loss of the batch drawn at that step under the current parameters.
pub fn train(config: &TrainConfig, data: &TrainingData) -> Result<TrainOutcome> {
    train_with_progress(config, data, |_| {})
}

pub fn train_with_progress(config: &TrainConfig, data: &TrainingData, mut on_record: impl FnMut(&EvalRecord)) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.cols() != config.input_dim || data.dev.cols() != config.input_dim {
        return Err(Error::Config(format!(
            "data has {} features, input_dim is {}",
            data.train.cols(),
            config.input_dim
        )));
    }
    if data.train.rows() < config.batch_size {
        return Err(Error::Config(format!(
            "training split of {} rows is smaller than batch_size {}",
            data.train.rows(),
            config.batch_size
        )));
    }
    let pairs = dev_pairs(data, config)?;
    let mut state = EncoderState::new(
        config.input_dim,
        config.hidden_dim,
        config.embed_dim,
        config.dropout,
        derive_seed(config.seed, 0),
    )?;
    let mut optimizer = SgdMomentum::new(config.sgd_momentum)?;
    let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1));
    let view_base = derive_seed(config.seed, 2);
    let mut eval_stats: Option<Vec<WhiteningStats>> = None;

    let mut records = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut grads: Option<EncoderGrads> = None;
    for step in 0..=config.steps {
        if let Some(g) = grads.take() {
            state = optimizer.step(&state, &g, config.learning_rate)?;
            if !state.is_finite() {
                return Err(Error::NonFinite(format!("parameters became non-finite at step {step}")));
            }
        }
        let rows = index::sample(&mut batch_rng, data.train.rows(), config.batch_size).into_vec();
        let batch = data.train.select_rows(&rows);
        let out = contrastive_step(&state, &batch, config, derive_seed(view_base, step as u64)).map_err(|e| match e {
            Error::NotNormalized { .. } => Error::NonFinite(format!("training diverged at step {step}: {e}")),
            e => e,
        })?;
        if !out.loss.is_finite() {
            return Err(Error::NonFinite(format!("training diverged at step {step} (loss {})", out.loss)));
        }
        let (eval_out, _) = forward(&state, &batch, None)?;
        update_eval_stats(&mut eval_stats, &eval_out, config)?;
        grads = Some(out.grads);

        if step % config.eval_every == 0 || step == config.steps {
            let checkpoint = Checkpoint {
                encoder: state.clone(),
                eval_whitening: eval_stats.clone().map(|stats| EvalWhitening {
                    group_size: config.group_size,
                    stats,
                }),
            };
            let metrics = evaluate(&checkpoint, data, &pairs, config.ridge)?;
            let record = EvalRecord { step, loss: out.loss, metrics };
            on_record(&record);
            records.push(record);
            if best.as_ref().is_none_or(|(s, _)| metrics.spearman > *s) {
                best = Some((metrics.spearman, checkpoint));
            }
        }
    }
    let best_index = best_index(&records);
    let last = Checkpoint {
        encoder: state,
        eval_whitening: eval_stats.map(|stats| EvalWhitening {
            group_size: config.group_size,
            stats,
        }),
    };
    Ok(TrainOutcome {
        report: RunReport { records, best: best_index },
        best: best.expect("step 0 is always evaluated").1,
        last,
    })
}
