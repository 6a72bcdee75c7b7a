//! Subject-level split, mini-batch training loop and learning curves.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Cohort, SeverityLabel, NUM_CLASSES};
use crate::nn::{softmax_cross_entropy, Adam, AdamConfig, Mode, Model, NnError, Tensor3};
use crate::pipeline::SegmentTensor;
use crate::rng::SplitMix64;

pub const SPLIT_SUBJECTS_PER_CLASS: usize = 8;
pub const TEST_PER_CLASS: usize = 2;
pub const TRAIN_SUBJECTS: usize = 18;
pub const VAL_SUBJECTS: usize = 6;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("split needs {expected} subjects per class, cohort has {found:?} (NL, MIN, MOD, SV)")]
    UnbalancedCohort {
        expected: usize,
        found: [usize; NUM_CLASSES],
    },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("subject {0} appears in both the training and validation tensors")]
    SubjectOverlap(String),
    #[error("{0} tensor is empty")]
    Empty(&'static str),
    #[error("non-finite training loss at iteration {iteration}")]
    NonFiniteLoss {
        iteration: usize,
        /// Parameters as they were before the failing step.
        last_good: Box<Model<f32>>,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Subject IDs per set, each listed in cohort order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub test_subjects: Vec<String>,
    pub train_subjects: Vec<String>,
    pub val_subjects: Vec<String>,
}

impl SplitPlan {
    pub fn set(&self, name: &str) -> Option<&[String]> {
        match name {
            "train" => Some(&self.train_subjects),
            "val" => Some(&self.val_subjects),
            "test" => Some(&self.test_subjects),
            _ => None,
        }
    }
}

/// Two-level stratified split of an 8-per-class cohort. First two test
/// subjects are drawn per class; the remaining 24 become 18 train and 6
/// validation. Two randomly chosen classes contribute 5 training subjects,
/// the other two contribute 4.
pub fn stratified_split(cohort: &Cohort, seed: u64) -> Result<SplitPlan> {
    let found = cohort.per_class_counts();
    if found.iter().any(|&n| n != SPLIT_SUBJECTS_PER_CLASS) {
        return Err(TrainError::UnbalancedCohort {
            expected: SPLIT_SUBJECTS_PER_CLASS,
            found,
        });
    }
    let mut rng = SplitMix64::new(seed);
    let mut pools: Vec<Vec<&str>> = SeverityLabel::ALL
        .iter()
        .map(|&label| {
            let mut ids: Vec<&str> = cohort.of_class(label).map(|s| s.subject_id.as_str()).collect();
            rng.shuffle(&mut ids);
            ids
        })
        .collect();

    let mut classes: Vec<usize> = (0..NUM_CLASSES).collect();
    rng.shuffle(&mut classes);
    let extra = TRAIN_SUBJECTS - NUM_CLASSES * (TRAIN_SUBJECTS / NUM_CLASSES);
    let mut train_quota = [TRAIN_SUBJECTS / NUM_CLASSES; NUM_CLASSES];
    for &c in &classes[..extra] {
        train_quota[c] += 1;
    }

    let (mut test, mut train, mut val) = (BTreeSet::new(), BTreeSet::new(), BTreeSet::new());
    for (c, pool) in pools.iter_mut().enumerate() {
        let (t, rest) = pool.split_at(TEST_PER_CLASS);
        let (tr, va) = rest.split_at(train_quota[c]);
        test.extend(t.iter().copied());
        train.extend(tr.iter().copied());
        val.extend(va.iter().copied());
    }
    let in_order = |set: &BTreeSet<&str>| -> Vec<String> {
        cohort
            .subjects()
            .iter()
            .filter(|s| set.contains(s.subject_id.as_str()))
            .map(|s| s.subject_id.clone())
            .collect()
    };
    Ok(SplitPlan {
        seed,
        test_subjects: in_order(&test),
        train_subjects: in_order(&train),
        val_subjects: in_order(&val),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub dropout_keep: f64,
    pub seed: u64,
    pub eval_every: usize,
    /// Training-set rows scored for the curve; the full set when smaller.
    pub train_eval_subset: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            iterations: 1000,
            batch_size: 32,
            dropout_keep: 0.5,
            seed: 0,
            eval_every: 50,
            train_eval_subset: 2048,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive");
        }
        if self.train_eval_subset == 0 {
            return bad("train_eval_subset must be positive");
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return bad("dropout_keep must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub train_acc: f64,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub const CSV_HEADER: &'static str = "iteration,train_acc,train_loss,val_acc,val_loss";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for p in &self.points {
            writeln!(
                s,
                "{},{},{},{},{}",
                p.iteration, p.train_acc, p.train_loss, p.val_acc, p.val_loss
            )
            .unwrap();
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn first(&self) -> Option<&CurvePoint> {
        self.points.first()
    }

    pub fn last(&self) -> Option<&CurvePoint> {
        self.points.last()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

const EVAL_CHUNK: usize = 64;

fn gather(data: &SegmentTensor, rows: &[usize]) -> Tensor3<f32> {
    let mut values = Vec::with_capacity(rows.len() * data.row_len());
    for &r in rows {
        values.extend_from_slice(data.row(r));
    }
    Tensor3::new(rows.len(), data.seq_len(), data.channels(), values).expect("row lengths match")
}

fn label_indices(data: &SegmentTensor, rows: &[usize]) -> Vec<usize> {
    rows.iter().map(|&r| data.labels()[r].index()).collect()
}

/// Eval-mode loss, accuracy and argmax predictions over every row. Chunks
/// are scored in parallel and their losses summed in chunk order.
pub fn evaluate(model: &Model<f32>, data: &SegmentTensor) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(TrainError::Empty("evaluation"));
    }
    let classes = model.num_classes();
    let rows: Vec<usize> = (0..data.len()).collect();
    let chunks: Vec<(f64, Vec<usize>)> = rows
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| -> Result<(f64, Vec<usize>)> {
            let logits = model.infer(&gather(data, chunk))?.cast::<f64>();
            let labels = label_indices(data, chunk);
            let (loss, _) = softmax_cross_entropy(logits.data(), &labels, classes)?;
            let preds = logits
                .data()
                .chunks_exact(classes)
                .map(|row| {
                    // first maximum wins
                    let mut best = 0;
                    for (c, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = c;
                        }
                    }
                    best
                })
                .collect();
            Ok((loss * chunk.len() as f64, preds))
        })
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut predictions = Vec::with_capacity(data.len());
    for (loss, preds) in chunks {
        total += loss;
        predictions.extend(preds);
    }
    let correct = predictions
        .iter()
        .zip(data.labels())
        .filter(|(&p, l)| p == l.index())
        .count();
    Ok(Evaluation {
        loss: total / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
        predictions,
    })
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    pub optimizer: Adam<f32>,
    pub curve: LearningCurve,
    /// Training rows scored for the curve.
    pub train_eval_rows: usize,
}

fn check_disjoint(train: &SegmentTensor, val: &SegmentTensor) -> Result<()> {
    let train_ids = train.subjects();
    match val.subjects().into_iter().find(|id| train_ids.contains(id)) {
        Some(id) => Err(TrainError::SubjectOverlap(id.to_string())),
        None => Ok(()),
    }
}

/// Runs `config.iterations` Adam steps on batches drawn uniformly with
/// replacement. The curve is sampled at iteration 0, every `eval_every`
/// steps and after the last step.
pub fn train(mut model: Model<f32>, train: &SegmentTensor, val: &SegmentTensor, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::Empty("training"));
    }
    if val.is_empty() {
        return Err(TrainError::Empty("validation"));
    }
    check_disjoint(train, val)?;
    model.set_dropout_keep(config.dropout_keep)?;

    let mut subset_rng = SplitMix64::stream(config.seed, 0);
    let mut batch_rng = SplitMix64::stream(config.seed, 1);
    let mut dropout_rng = SplitMix64::stream(config.seed, 2);

    let train_eval = if train.len() > config.train_eval_subset {
        let mut rows: Vec<usize> = (0..train.len()).collect();
        subset_rng.shuffle(&mut rows);
        rows.truncate(config.train_eval_subset);
        rows.sort_unstable();
        train.select_rows(&rows).expect("rows in range")
    } else {
        train.clone()
    };

    let mut curve = LearningCurve::default();
    let mut record = |model: &Model<f32>, iteration: usize| -> Result<()> {
        let t = evaluate(model, &train_eval)?;
        let v = evaluate(model, val)?;
        log::info!(
            "iter {iteration}: train acc {:.4} loss {:.4}, val acc {:.4} loss {:.4}",
            t.accuracy,
            t.loss,
            v.accuracy,
            v.loss
        );
        curve.points.push(CurvePoint {
            iteration,
            train_acc: t.accuracy,
            train_loss: t.loss,
            val_acc: v.accuracy,
            val_loss: v.loss,
        });
        Ok(())
    };
    record(&model, 0)?;

    let mut adam = Adam::new(AdamConfig {
        lr: config.learning_rate,
        ..AdamConfig::default()
    });
    let classes = model.num_classes();
    let mut rows = vec![0usize; config.batch_size];
    for iteration in 1..=config.iterations {
        for r in rows.iter_mut() {
            *r = batch_rng.index(train.len());
        }
        let x = gather(train, &rows);
        let labels = label_indices(train, &rows);
        let snapshot = model.clone();
        let logits = model.forward(&x, Mode::Train, &mut dropout_rng)?;
        let (loss, grad) = softmax_cross_entropy(logits.data(), &labels, classes)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                iteration,
                last_good: Box::new(snapshot),
            });
        }
        model.zero_grad();
        model.backward(&Tensor3::new(rows.len(), 1, classes, grad).expect("logit shape"))?;
        if let Err(e) = adam.step(&mut model.param_grad_pairs()) {
            return match e {
                NnError::NonFiniteGradient { .. } => Err(TrainError::NonFiniteLoss {
                    iteration,
                    last_good: Box::new(snapshot),
                }),
                other => Err(other.into()),
            };
        }
        if iteration % config.eval_every == 0 || iteration == config.iterations {
            record(&model, iteration)?;
        }
    }
    Ok(TrainOutcome {
        model,
        optimizer: adam,
        curve,
        train_eval_rows: train_eval.len(),
    })
}
