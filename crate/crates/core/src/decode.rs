//! From dense grids to labeled spans: greedy zero-overlap suppression over
//! the prior lattice, per-box class assignment, and per-token label
//! conversion for baseline-comparable scoring.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::PredictionGrids;
use crate::nn::tensor::Tensor;
use crate::span::{AssertionClass, LabeledSpan, PriorBox, PriorLattice, TokenSpan};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("spans [{0},{1}] and [{2},{3}] overlap")]
    OverlappingSpans(usize, usize, usize, usize),
    #[error("span [{0},{1}] exceeds sequence length {2}")]
    SpanOutOfRange(usize, usize, usize),
    #[error("bad prediction record: {0}")]
    BadRecord(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    /// Boxes scoring at or below gamma are discarded.
    pub gamma: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { gamma: 0.7 }
    }
}

/// One surviving box with its classification.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredBox {
    pub prior: PriorBox,
    pub score: f64,
    pub class_id: AssertionClass,
    pub class_prob: f64,
}

/// Greedy zero-overlap suppression. Cells are visited in order of
/// descending score (ties by ascending lattice index); iteration stops at
/// the first score at or below `gamma`; a cell is kept only when its span
/// overlaps no already-kept span. Returns kept lattice indices in selection
/// order.
pub fn nms(scores: &Tensor, lattice: &PriorLattice, gamma: f64) -> Vec<usize> {
    assert_eq!(
        scores.shape(),
        &[lattice.seq_len(), lattice.prior_count()],
        "score grid does not match the lattice"
    );
    assert!(scores.all_finite(), "scores must be finite");
    let data = scores.data();
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&i, &j| data[j].total_cmp(&data[i]).then(i.cmp(&j)));
    let mut kept: Vec<usize> = Vec::new();
    let mut kept_spans: Vec<TokenSpan> = Vec::new();
    for i in order {
        if data[i] <= gamma {
            break;
        }
        let span = lattice.get(i).span;
        if kept_spans.iter().all(|k| !k.overlaps(&span)) {
            kept.push(i);
            kept_spans.push(span);
        }
    }
    kept
}

/// Attach the argmax class (ties to the smallest class id) to each selected
/// cell. `class_prob` is `[T, A, C]`; probability column c-1 belongs to
/// class id c.
pub fn classify_boxes(
    selected: &[usize],
    lattice: &PriorLattice,
    scores: &Tensor,
    class_prob: &Tensor,
) -> Vec<ScoredBox> {
    let (_, a, c) = class_prob.dims3();
    assert_eq!(a, lattice.prior_count());
    selected
        .iter()
        .map(|&i| {
            let (t, pa) = (i / a, i % a);
            let mut best = 0usize;
            for k in 1..c {
                if class_prob.at3(t, pa, k) > class_prob.at3(t, pa, best) {
                    best = k;
                }
            }
            ScoredBox {
                prior: *lattice.get(i),
                score: scores.data()[i],
                class_id: AssertionClass((best + 1) as u8),
                class_prob: class_prob.at3(t, pa, best),
            }
        })
        .collect()
}

/// Threshold, suppress, classify.
pub fn decode(
    grids: &PredictionGrids,
    lattice: &PriorLattice,
    config: &DecodeConfig,
) -> Vec<ScoredBox> {
    let kept = nms(&grids.box_conf, lattice, config.gamma);
    classify_boxes(&kept, lattice, &grids.box_conf, &grids.class_prob)
}

/// Per-token class sequence: tokens inside a span carry its class, all
/// others the background class. Inputs must be pairwise non-overlapping and
/// inside the sequence.
pub fn boxes_to_token_labels(
    spans: &[LabeledSpan],
    seq_len: usize,
) -> Result<Vec<AssertionClass>, DecodeError> {
    let mut labels = vec![AssertionClass::NONE; seq_len];
    for (i, s) in spans.iter().enumerate() {
        if s.span.end() >= seq_len {
            return Err(DecodeError::SpanOutOfRange(
                s.span.start(),
                s.span.end(),
                seq_len,
            ));
        }
        for other in &spans[..i] {
            if other.span.overlaps(&s.span) {
                return Err(DecodeError::OverlappingSpans(
                    other.span.start(),
                    other.span.end(),
                    s.span.start(),
                    s.span.end(),
                ));
            }
        }
        labels[s.span.start()..=s.span.end()].fill(s.class_id);
    }
    Ok(labels)
}

/// One output line per document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub doc_id: String,
    pub boxes: Vec<PredictedBox>,
    /// Class id per token, 0 for background.
    pub token_labels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedBox {
    pub start: usize,
    pub end: usize,
    pub class: String,
    pub box_score: f64,
    pub class_prob: f64,
}

impl PredictionRecord {
    pub fn from_boxes(
        doc_id: &str,
        boxes: &[ScoredBox],
        seq_len: usize,
    ) -> Result<Self, DecodeError> {
        let spans: Vec<LabeledSpan> = boxes
            .iter()
            .map(|b| LabeledSpan::new(b.prior.span, b.class_id).expect("decode classes are real"))
            .collect();
        let labels = boxes_to_token_labels(&spans, seq_len)?;
        Ok(Self {
            doc_id: doc_id.to_string(),
            boxes: boxes
                .iter()
                .map(|b| PredictedBox {
                    start: b.prior.span.start(),
                    end: b.prior.span.end(),
                    class: b.class_id.name(),
                    box_score: b.score,
                    class_prob: b.class_prob,
                })
                .collect(),
            token_labels: labels.iter().map(|c| c.id()).collect(),
        })
    }

    /// Labeled spans reconstructed from the box list.
    pub fn labeled_spans(&self) -> Result<Vec<LabeledSpan>, DecodeError> {
        self.boxes
            .iter()
            .map(|b| {
                let span = TokenSpan::new(b.start, b.end)
                    .map_err(|e| DecodeError::BadRecord(e.to_string()))?;
                let class = AssertionClass::from_name(&b.class)
                    .ok_or_else(|| DecodeError::BadRecord(format!("unknown class {:?}", b.class)))?;
                LabeledSpan::new(span, class).map_err(|e| DecodeError::BadRecord(e.to_string()))
            })
            .collect()
    }
}

/// Line-delimited JSON, one record per document.
pub fn write_predictions<W: Write>(
    records: &[PredictionRecord],
    mut w: W,
) -> Result<(), DecodeError> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| DecodeError::BadRecord(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_predictions<R: BufRead>(r: R) -> Result<Vec<PredictionRecord>, DecodeError> {
    let mut records = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line).map_err(|e| DecodeError::BadRecord(e.to_string()))?,
        );
    }
    Ok(records)
}
