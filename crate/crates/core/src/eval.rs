//! Scoring: token-level per-class precision/recall/F1 with a macro average
//! over all classes including background, best-match IoU by gold scope
//! length, scope-length histograms, span-exact supplementary scores, and a
//! confidence-threshold sweep.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::decode::{boxes_to_token_labels, decode, DecodeConfig, DecodeError};
use crate::model::PredictionGrids;
use crate::span::{build_prior_lattice, span_iou, AssertionClass, LabeledSpan};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("document {index}: prediction has {pred} labels, gold has {gold}")]
    LengthMismatch {
        index: usize,
        pred: usize,
        gold: usize,
    },
    #[error("got {pred} prediction documents but {gold} gold documents")]
    DocCountMismatch { pred: usize, gold: usize },
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScore {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassScore {
    pub fn from_counts(true_pos: usize, false_pos: usize, false_neg: usize) -> Self {
        let ratio = |num: usize, denom: usize| {
            if denom == 0 {
                0.0
            } else {
                num as f64 / denom as f64
            }
        };
        let precision = ratio(true_pos, true_pos + false_pos);
        let recall = ratio(true_pos, true_pos + false_neg);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            true_pos,
            false_pos,
            false_neg,
            precision,
            recall,
            f1,
        }
    }
}

/// Unweighted mean.
pub fn macro_f1(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// One entry per class id 0..=C, in id order.
    pub per_class: Vec<(AssertionClass, ClassScore)>,
    pub macro_f1: f64,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:<14} {:>5} {:>5} {:>5} {:>7} {:>7} {:>7}",
            "class", "tp", "fp", "fn", "prec", "rec", "f1").unwrap();
        for (class, s) in &self.per_class {
            writeln!(
                out,
                "{:<14} {:>5} {:>5} {:>5} {:>7.4} {:>7.4} {:>7.4}",
                class.name(),
                s.true_pos,
                s.false_pos,
                s.false_neg,
                s.precision,
                s.recall,
                s.f1
            )
            .unwrap();
        }
        writeln!(out, "macro-F1 {:.4}", self.macro_f1).unwrap();
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("class\ttp\tfp\tfn\tprecision\trecall\tf1\n");
        for (class, s) in &self.per_class {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                class.name(),
                s.true_pos,
                s.false_pos,
                s.false_neg,
                s.precision,
                s.recall,
                s.f1
            )
            .unwrap();
        }
        writeln!(out, "macro\t\t\t\t\t\t{}", self.macro_f1).unwrap();
        out
    }
}

/// Token-level scores over class ids 0..=class_count. A token is a true
/// positive for class c only when prediction and gold both say c; the macro
/// average runs over all classes including background.
pub fn token_prf(
    pred: &[Vec<AssertionClass>],
    gold: &[Vec<AssertionClass>],
    class_count: usize,
) -> Result<EvalReport, EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::DocCountMismatch {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    let classes = class_count + 1;
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fn_ = vec![0usize; classes];
    for (index, (p_doc, g_doc)) in pred.iter().zip(gold).enumerate() {
        if p_doc.len() != g_doc.len() {
            return Err(EvalError::LengthMismatch {
                index,
                pred: p_doc.len(),
                gold: g_doc.len(),
            });
        }
        for (p, g) in p_doc.iter().zip(g_doc) {
            if p == g {
                tp[p.id() as usize] += 1;
            } else {
                fp[p.id() as usize] += 1;
                fn_[g.id() as usize] += 1;
            }
        }
    }
    let per_class: Vec<(AssertionClass, ClassScore)> = (0..classes)
        .map(|c| {
            (
                AssertionClass(c as u8),
                ClassScore::from_counts(tp[c], fp[c], fn_[c]),
            )
        })
        .collect();
    let f1s: Vec<f64> = per_class.iter().map(|(_, s)| s.f1).collect();
    Ok(EvalReport {
        per_class,
        macro_f1: macro_f1(&f1s),
    })
}

/// Mean best-match IoU per (class, gold scope length) bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct IouBucket {
    pub class: AssertionClass,
    pub length: usize,
    pub mean_iou: f64,
    pub gold_count: usize,
}

/// For every gold span, the best IoU over same-class predicted spans of the
/// same document (0 with no candidate), averaged per (class, length).
pub fn iou_by_scope_length(
    pred: &[Vec<LabeledSpan>],
    gold: &[Vec<LabeledSpan>],
) -> Result<Vec<IouBucket>, EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::DocCountMismatch {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    let mut agg: BTreeMap<(u8, usize), (f64, usize)> = BTreeMap::new();
    for (p_doc, g_doc) in pred.iter().zip(gold) {
        for g in g_doc {
            let best = p_doc
                .iter()
                .filter(|p| p.class_id == g.class_id)
                .map(|p| span_iou(p.span, g.span))
                .fold(0.0f64, f64::max);
            let entry = agg.entry((g.class_id.id(), g.span.len())).or_insert((0.0, 0));
            entry.0 += best;
            entry.1 += 1;
        }
    }
    Ok(agg
        .into_iter()
        .map(|((class, length), (sum, n))| IouBucket {
            class: AssertionClass(class),
            length,
            mean_iou: sum / n as f64,
            gold_count: n,
        })
        .collect())
}

pub fn iou_buckets_to_tsv(buckets: &[IouBucket]) -> String {
    let mut out = String::from("class\tlength\tmean_iou\tgold_count\n");
    for b in buckets {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            b.class.name(),
            b.length,
            b.mean_iou,
            b.gold_count
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LengthStats {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl LengthStats {
    /// Table-style rendering: mean±std.
    pub fn display(&self) -> String {
        format!("{:.2}\u{b1}{:.2}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScopeLengthReport {
    /// Exact counts per (class id, scope length).
    pub counts: BTreeMap<(u8, usize), usize>,
    /// Mean and std of scope length per class, classes with data only.
    pub per_class: Vec<(AssertionClass, LengthStats)>,
}

pub fn scope_length_histogram(gold: &[Vec<LabeledSpan>]) -> ScopeLengthReport {
    let mut counts: BTreeMap<(u8, usize), usize> = BTreeMap::new();
    let mut lengths: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for doc in gold {
        for g in doc {
            *counts.entry((g.class_id.id(), g.span.len())).or_insert(0) += 1;
            lengths.entry(g.class_id.id()).or_default().push(g.span.len());
        }
    }
    let per_class = lengths
        .into_iter()
        .map(|(c, ls)| {
            let n = ls.len() as f64;
            let mean = ls.iter().sum::<usize>() as f64 / n;
            let var = ls.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / n;
            (
                AssertionClass(c),
                LengthStats {
                    count: ls.len(),
                    mean,
                    std: var.sqrt(),
                },
            )
        })
        .collect();
    ScopeLengthReport { counts, per_class }
}

impl ScopeLengthReport {
    pub fn total_count(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (class, stats) in &self.per_class {
            writeln!(
                out,
                "{:<14} n={:<6} length {}",
                class.name(),
                stats.count,
                stats.display()
            )
            .unwrap();
        }
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("class\tlength\tcount\n");
        for (&(c, l), &n) in &self.counts {
            writeln!(out, "{}\t{}\t{}", AssertionClass(c).name(), l, n).unwrap();
        }
        out
    }
}

/// Span-level exact match (span and class both identical), the
/// supplementary strict metric. Covers assertable classes only.
pub fn span_exact_prf(
    pred: &[Vec<LabeledSpan>],
    gold: &[Vec<LabeledSpan>],
    class_count: usize,
) -> Result<EvalReport, EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::DocCountMismatch {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    let mut tp = vec![0usize; class_count + 1];
    let mut fp = vec![0usize; class_count + 1];
    let mut fn_ = vec![0usize; class_count + 1];
    for (p_doc, g_doc) in pred.iter().zip(gold) {
        let mut matched = vec![false; g_doc.len()];
        for p in p_doc {
            let mut found = None;
            for (gi, g) in g_doc.iter().enumerate() {
                if !matched[gi] && g == p {
                    found = Some(gi);
                    break;
                }
            }
            match found {
                Some(gi) => {
                    matched[gi] = true;
                    tp[p.class_id.id() as usize] += 1;
                }
                None => fp[p.class_id.id() as usize] += 1,
            }
        }
        for (gi, g) in g_doc.iter().enumerate() {
            if !matched[gi] {
                fn_[g.class_id.id() as usize] += 1;
            }
        }
    }
    let per_class: Vec<(AssertionClass, ClassScore)> = (1..=class_count)
        .map(|c| {
            (
                AssertionClass(c as u8),
                ClassScore::from_counts(tp[c], fp[c], fn_[c]),
            )
        })
        .collect();
    let f1s: Vec<f64> = per_class.iter().map(|(_, s)| s.f1).collect();
    Ok(EvalReport {
        per_class,
        macro_f1: macro_f1(&f1s),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaSweepRow {
    pub gamma: f64,
    pub macro_f1: f64,
    pub mean_boxes_per_doc: f64,
}

/// Decode cached grids at each threshold and score token-level macro-F1.
/// One forward pass worth of grids per document serves every gamma.
pub fn sweep_gamma(
    grids: &[PredictionGrids],
    gold: &[Vec<LabeledSpan>],
    seq_lens: &[usize],
    gammas: &[f64],
    class_count: usize,
) -> Result<Vec<GammaSweepRow>, EvalError> {
    assert_eq!(grids.len(), seq_lens.len());
    if grids.len() != gold.len() {
        return Err(EvalError::DocCountMismatch {
            pred: grids.len(),
            gold: gold.len(),
        });
    }
    let gold_labels: Vec<Vec<AssertionClass>> = gold
        .iter()
        .zip(seq_lens)
        .map(|(g, &t)| boxes_to_token_labels(g, t))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        let mut pred_labels = Vec::with_capacity(grids.len());
        let mut box_total = 0usize;
        for (g, &t) in grids.iter().zip(seq_lens) {
            let lattice = build_prior_lattice(t, g.box_conf.shape()[1]);
            let boxes = decode(g, &lattice, &DecodeConfig { gamma });
            box_total += boxes.len();
            let spans: Vec<LabeledSpan> = boxes
                .iter()
                .map(|b| LabeledSpan::new(b.prior.span, b.class_id).expect("non-background"))
                .collect();
            pred_labels.push(boxes_to_token_labels(&spans, t)?);
        }
        let report = token_prf(&pred_labels, &gold_labels, class_count)?;
        rows.push(GammaSweepRow {
            gamma,
            macro_f1: report.macro_f1,
            mean_boxes_per_doc: box_total as f64 / grids.len() as f64,
        });
    }
    Ok(rows)
}

pub fn sweep_to_tsv(rows: &[GammaSweepRow]) -> String {
    let mut out = String::from("gamma\tmacro_f1\tmean_boxes_per_doc\n");
    for r in rows {
        writeln!(out, "{}\t{}\t{}", r.gamma, r.macro_f1, r.mean_boxes_per_doc).unwrap();
    }
    out
}
