//! Token-span geometry: spans, IoU, the prior-box lattice, and training-target
//! assignment.
//!
//! A span is an inclusive interval of token indices. Priors are candidate spans
//! of nominal lengths `1..=A` anchored at every token; the lattice of all `T*A`
//! priors is the index space shared by prediction grids and targets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SpanError {
    #[error("invalid span: start {start} > end {end}")]
    InvalidSpan { start: usize, end: usize },
    #[error("gold span [{start},{end}] out of range for sequence of {seq_len} tokens")]
    GoldOutOfRange {
        start: usize,
        end: usize,
        seq_len: usize,
    },
    #[error("labeled span carries the background class")]
    BackgroundLabel,
}

/// Inclusive interval of token indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenSpan {
    start: usize,
    end: usize,
}

impl TokenSpan {
    pub fn new(start: usize, end: usize) -> Result<Self, SpanError> {
        if start > end {
            return Err(SpanError::InvalidSpan { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    /// Number of tokens covered (always >= 1).
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn contains(&self, token: usize) -> bool {
        self.start <= token && token <= self.end
    }

    pub fn overlaps(&self, other: &TokenSpan) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// Intersection-over-union of two token spans, as an exact rational evaluated
/// in floating point. Symmetric; 1.0 iff the spans are equal; 0.0 iff disjoint.
pub fn span_iou(a: TokenSpan, b: TokenSpan) -> f64 {
    let inter_start = a.start.max(b.start);
    let inter_end = a.end.min(b.end);
    if inter_start > inter_end {
        return 0.0;
    }
    let intersection = inter_end - inter_start + 1;
    let union = a.len() + b.len() - intersection;
    intersection as f64 / union as f64
}

/// Class of an assertion scope. Id 0 is the background ("None") class; ids
/// 1..=C are assertable classes. The canonical six-class inventory maps
/// 1 Present, 2 Absent, 3 Conditional, 4 Hypothetical, 5 Possibility, 6 AWSE.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct AssertionClass(pub u8);

impl AssertionClass {
    pub const NONE: AssertionClass = AssertionClass(0);
    pub const PRESENT: AssertionClass = AssertionClass(1);
    pub const ABSENT: AssertionClass = AssertionClass(2);
    pub const CONDITIONAL: AssertionClass = AssertionClass(3);
    pub const HYPOTHETICAL: AssertionClass = AssertionClass(4);
    pub const POSSIBILITY: AssertionClass = AssertionClass(5);
    pub const AWSE: AssertionClass = AssertionClass(6);

    pub const CANONICAL_COUNT: usize = 6;

    pub fn id(&self) -> u8 {
        self.0
    }

    pub fn is_background(&self) -> bool {
        self.0 == 0
    }

    /// Canonical name for ids 0..=6; synthetic ids beyond the inventory
    /// render as `class-<id>`.
    pub fn name(&self) -> String {
        match self.0 {
            0 => "None".to_string(),
            1 => "Present".to_string(),
            2 => "Absent".to_string(),
            3 => "Conditional".to_string(),
            4 => "Hypothetical".to_string(),
            5 => "Possibility".to_string(),
            6 => "AWSE".to_string(),
            n => format!("class-{n}"),
        }
    }

    pub fn from_name(name: &str) -> Option<AssertionClass> {
        match name {
            "None" => Some(Self::NONE),
            "Present" => Some(Self::PRESENT),
            "Absent" => Some(Self::ABSENT),
            "Conditional" => Some(Self::CONDITIONAL),
            "Hypothetical" => Some(Self::HYPOTHETICAL),
            "Possibility" => Some(Self::POSSIBILITY),
            "AWSE" => Some(Self::AWSE),
            _ => None,
        }
    }
}

/// A span annotated with a non-background class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledSpan {
    pub span: TokenSpan,
    pub class_id: AssertionClass,
}

impl LabeledSpan {
    pub fn new(span: TokenSpan, class_id: AssertionClass) -> Result<Self, SpanError> {
        if class_id.is_background() {
            return Err(SpanError::BackgroundLabel);
        }
        Ok(Self { span, class_id })
    }
}

/// Candidate box of a nominal length anchored at a token, clipped to the
/// sequence end so its effective span always exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PriorBox {
    pub anchor: usize,
    pub nominal_length: usize,
    pub span: TokenSpan,
}

/// All `T*A` priors in anchor-major, length-minor order: the canonical
/// flattening shared with prediction grids.
#[derive(Debug, Clone)]
pub struct PriorLattice {
    seq_len: usize,
    prior_count: usize,
    boxes: Vec<PriorBox>,
}

impl PriorLattice {
    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn prior_count(&self) -> usize {
        self.prior_count
    }

    pub fn boxes(&self) -> &[PriorBox] {
        &self.boxes
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Flat index of the prior anchored at `anchor` with the given nominal
    /// length (1-based, as in the lattice definition).
    pub fn index(&self, anchor: usize, nominal_length: usize) -> usize {
        debug_assert!(anchor < self.seq_len);
        debug_assert!((1..=self.prior_count).contains(&nominal_length));
        anchor * self.prior_count + (nominal_length - 1)
    }

    pub fn get(&self, index: usize) -> &PriorBox {
        &self.boxes[index]
    }
}

/// Build the full lattice for a sequence of `seq_len` tokens and prior
/// lengths `1..=prior_count`. Priors reaching past the last token are
/// clipped, not discarded, so the lattice is always exactly `T*A` boxes.
pub fn build_prior_lattice(seq_len: usize, prior_count: usize) -> PriorLattice {
    assert!(seq_len >= 1, "sequence must have at least one token");
    assert!(prior_count >= 1, "prior count must be at least 1");
    let mut boxes = Vec::with_capacity(seq_len * prior_count);
    for anchor in 0..seq_len {
        for length in 1..=prior_count {
            let end = (anchor + length - 1).min(seq_len - 1);
            boxes.push(PriorBox {
                anchor,
                nominal_length: length,
                span: TokenSpan { start: anchor, end },
            });
        }
    }
    PriorLattice {
        seq_len,
        prior_count,
        boxes,
    }
}

/// Per-prior regression targets: the IoU with the best-matching gold span,
/// whether the prior counts as positive, and the class it matched.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetGrid {
    pub seq_len: usize,
    pub prior_count: usize,
    /// `T*A` IoU targets in lattice order.
    pub iou_target: Vec<f64>,
    /// `T*A` positive-prior indicators.
    pub positive: Vec<bool>,
    /// `T*A` matched classes; meaningful only where `positive` holds.
    pub class_target: Vec<AssertionClass>,
}

impl TargetGrid {
    pub fn cells(&self) -> usize {
        self.seq_len * self.prior_count
    }

    pub fn positive_count(&self) -> usize {
        self.positive.iter().filter(|p| **p).count()
    }
}

/// Assign regression and classification targets to every prior.
///
/// Each prior's IoU target is its best IoU over the gold spans (0 with no
/// gold). A prior is positive when that IoU meets `match_threshold`. The
/// class target is the class of the argmax-IoU gold span; ties break by
/// earliest gold start, then smallest class id.
pub fn assign_targets(
    lattice: &PriorLattice,
    gold: &[LabeledSpan],
    match_threshold: f64,
) -> Result<TargetGrid, SpanError> {
    for g in gold {
        if g.span.end >= lattice.seq_len {
            return Err(SpanError::GoldOutOfRange {
                start: g.span.start,
                end: g.span.end,
                seq_len: lattice.seq_len,
            });
        }
    }
    let cells = lattice.len();
    let mut iou_target = vec![0.0f64; cells];
    let mut positive = vec![false; cells];
    let mut class_target = vec![AssertionClass::NONE; cells];

    for (i, prior) in lattice.boxes().iter().enumerate() {
        let mut best_iou = 0.0f64;
        let mut best: Option<&LabeledSpan> = None;
        for g in gold {
            let iou = span_iou(prior.span, g.span);
            let better = match best {
                None => iou > 0.0,
                Some(b) => {
                    iou > best_iou
                        || (iou == best_iou
                            && (g.span.start() < b.span.start()
                                || (g.span.start() == b.span.start()
                                    && g.class_id < b.class_id)))
                }
            };
            if better {
                best_iou = iou;
                best = Some(g);
            }
        }
        if let Some(b) = best {
            iou_target[i] = best_iou;
            // `positive => iou_target > 0` must hold even at threshold 0.
            if best_iou >= match_threshold && best_iou > 0.0 {
                positive[i] = true;
                class_target[i] = b.class_id;
            }
        }
    }

    Ok(TargetGrid {
        seq_len: lattice.seq_len,
        prior_count: lattice.prior_count,
        iou_target,
        positive,
        class_target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn span(start: usize, end: usize) -> TokenSpan {
        TokenSpan::new(start, end).unwrap()
    }

    /// Set-based oracle: materialize both token sets and count.
    fn iou_oracle(a: TokenSpan, b: TokenSpan) -> f64 {
        let sa: HashSet<usize> = (a.start()..=a.end()).collect();
        let sb: HashSet<usize> = (b.start()..=b.end()).collect();
        let inter = sa.intersection(&sb).count();
        let union = sa.union(&sb).count();
        inter as f64 / union as f64
    }

    #[test]
    fn iou_identity() {
        assert_eq!(span_iou(span(2, 5), span(2, 5)), 1.0);
    }

    #[test]
    fn iou_disjoint() {
        assert_eq!(span_iou(span(0, 1), span(5, 6)), 0.0);
    }

    #[test]
    fn iou_partial_overlap() {
        // {1..4} n {3..6} = 2 tokens, union = 6 tokens.
        let expected = iou_oracle(span(1, 4), span(3, 6));
        assert_eq!(expected, 2.0 / 6.0);
        assert_eq!(span_iou(span(1, 4), span(3, 6)), expected);
    }

    #[test]
    fn invalid_span_rejected() {
        assert_eq!(
            TokenSpan::new(4, 2),
            Err(SpanError::InvalidSpan { start: 4, end: 2 })
        );
    }

    #[test]
    fn labeled_span_rejects_background() {
        assert_eq!(
            LabeledSpan::new(span(0, 1), AssertionClass::NONE),
            Err(SpanError::BackgroundLabel)
        );
    }

    #[test]
    fn class_names_round_trip() {
        for id in 0..=6u8 {
            let c = AssertionClass(id);
            assert_eq!(AssertionClass::from_name(&c.name()), Some(c));
        }
        assert_eq!(AssertionClass::from_name("Bogus"), None);
    }

    #[test]
    fn lattice_single_cell() {
        let lat = build_prior_lattice(1, 1);
        assert_eq!(lat.len(), 1);
        assert_eq!(lat.get(0).anchor, 0);
        assert_eq!(lat.get(0).span, span(0, 0));
    }

    #[test]
    fn lattice_clips_at_boundary() {
        let lat = build_prior_lattice(3, 2);
        assert_eq!(lat.len(), 6);
        let last = lat.get(lat.index(2, 2));
        assert_eq!(last.anchor, 2);
        assert_eq!(last.nominal_length, 2);
        assert_eq!(last.span, span(2, 2));
    }

    #[test]
    fn lattice_order_is_anchor_major() {
        // Enumerated by hand: index 7 of the T=5, A=3 lattice is anchor 2,
        // nominal length 2, spanning [2,3].
        let lat = build_prior_lattice(5, 3);
        assert_eq!(lat.len(), 15);
        let b = lat.get(7);
        assert_eq!((b.anchor, b.nominal_length), (2, 2));
        assert_eq!(b.span, span(2, 3));
        assert_eq!(lat.index(2, 2), 7);
    }

    #[test]
    fn assign_no_gold() {
        let lat = build_prior_lattice(4, 2);
        let grid = assign_targets(&lat, &[], 0.5).unwrap();
        assert!(grid.iou_target.iter().all(|&x| x == 0.0));
        assert_eq!(grid.positive_count(), 0);
    }

    #[test]
    fn assign_exact_match() {
        let lat = build_prior_lattice(4, 2);
        let gold = [LabeledSpan::new(span(1, 2), AssertionClass::ABSENT).unwrap()];
        let grid = assign_targets(&lat, &gold, 0.5).unwrap();
        let i = lat.index(1, 2);
        assert_eq!(grid.iou_target[i], 1.0);
        assert!(grid.positive[i]);
        assert_eq!(grid.class_target[i], AssertionClass::ABSENT);
    }

    #[test]
    fn assign_tie_breaks_by_earlier_start() {
        // Prior [2,3] has IoU 2/4 with both gold boxes; the earlier-starting
        // Present box wins.
        let lat = build_prior_lattice(6, 2);
        let gold = [
            LabeledSpan::new(span(0, 3), AssertionClass::PRESENT).unwrap(),
            LabeledSpan::new(span(2, 5), AssertionClass::ABSENT).unwrap(),
        ];
        assert_eq!(iou_oracle(span(2, 3), span(0, 3)), 0.5);
        assert_eq!(iou_oracle(span(2, 3), span(2, 5)), 0.5);
        let grid = assign_targets(&lat, &gold, 0.5).unwrap();
        let i = lat.index(2, 2);
        assert_eq!(grid.iou_target[i], 0.5);
        assert!(grid.positive[i]);
        assert_eq!(grid.class_target[i], AssertionClass::PRESENT);
    }

    #[test]
    fn assign_rejects_out_of_range_gold() {
        let lat = build_prior_lattice(3, 2);
        let gold = [LabeledSpan::new(span(1, 5), AssertionClass::PRESENT).unwrap()];
        assert!(matches!(
            assign_targets(&lat, &gold, 0.5),
            Err(SpanError::GoldOutOfRange { .. })
        ));
    }

    #[test]
    fn assign_threshold_one_marks_exact_matches_only() {
        let lat = build_prior_lattice(8, 4);
        let gold = [
            LabeledSpan::new(span(1, 3), AssertionClass::PRESENT).unwrap(),
            LabeledSpan::new(span(6, 6), AssertionClass::ABSENT).unwrap(),
        ];
        let grid = assign_targets(&lat, &gold, 1.0).unwrap();
        for (i, prior) in lat.boxes().iter().enumerate() {
            let exact = gold.iter().any(|g| g.span == prior.span);
            assert_eq!(grid.positive[i], exact, "prior {:?}", prior);
        }
    }

    #[test]
    fn positive_cells_carry_real_classes() {
        let lat = build_prior_lattice(10, 4);
        let gold = [
            LabeledSpan::new(span(0, 2), AssertionClass::HYPOTHETICAL).unwrap(),
            LabeledSpan::new(span(5, 9), AssertionClass::AWSE).unwrap(),
        ];
        let grid = assign_targets(&lat, &gold, 0.3).unwrap();
        assert!(grid.positive_count() > 0);
        for i in 0..grid.cells() {
            if grid.positive[i] {
                assert!(grid.iou_target[i] > 0.0);
                assert!(!grid.class_target[i].is_background());
            }
        }
    }

    proptest! {
        #[test]
        fn iou_matches_set_oracle(s1 in 0usize..50, l1 in 1usize..20, s2 in 0usize..50, l2 in 1usize..20) {
            let a = span(s1, s1 + l1 - 1);
            let b = span(s2, s2 + l2 - 1);
            prop_assert_eq!(span_iou(a, b), iou_oracle(a, b));
        }

        #[test]
        fn iou_symmetric_and_bounded(s1 in 0usize..50, l1 in 1usize..20, s2 in 0usize..50, l2 in 1usize..20) {
            let a = span(s1, s1 + l1 - 1);
            let b = span(s2, s2 + l2 - 1);
            let ab = span_iou(a, b);
            prop_assert_eq!(ab, span_iou(b, a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab == 1.0, a == b);
            prop_assert_eq!(ab == 0.0, !a.overlaps(&b));
        }

        #[test]
        fn iou_nested_is_length_ratio(s in 0usize..30, inner_off in 0usize..5, inner_len in 1usize..5, pad in 0usize..5) {
            let inner = span(s + inner_off, s + inner_off + inner_len - 1);
            let outer = span(s, inner.end() + pad);
            prop_assert_eq!(span_iou(inner, outer), inner.len() as f64 / outer.len() as f64);
        }
    }
}
