//! Greedy iterative stratified splitting.
//!
//! Split capacities come from largest-remainder apportionment of the ratios.
//! Documents are then placed class by class: repeatedly take the class with
//! the fewest unassigned documents containing it and give each of those
//! documents to the split with the largest remaining demand for that class
//! (ties by largest remaining capacity, then a seeded coin). Unlabeled
//! documents fill remaining capacity at the end.

use std::fmt::Write as _;

use rand::Rng;

use super::brat::Document;
use super::DataError;
use crate::nn::init::rng_from_seed;
use crate::span::AssertionClass;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self, DataError> {
        let sum = train + val + test;
        if train <= 0.0 || val <= 0.0 || test <= 0.0 || (sum - 1.0).abs() > 1e-9 {
            return Err(DataError::BadRatios(vec![train, val, test]));
        }
        Ok(Self { train, val, test })
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusSplit {
    pub train: Vec<Document>,
    pub val: Vec<Document>,
    pub test: Vec<Document>,
}

impl CorpusSplit {
    pub fn total_len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }
}

/// Largest-remainder apportionment of `n` slots over the ratios.
fn capacities(n: usize, ratios: &SplitRatios) -> [usize; 3] {
    let r = ratios.as_array();
    let mut caps = [0usize; 3];
    let mut fracs = [0.0f64; 3];
    for i in 0..3 {
        let exact = r[i] * n as f64;
        caps[i] = exact.floor() as usize;
        fracs[i] = exact - exact.floor();
    }
    let mut left = n - caps.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| fracs[b].partial_cmp(&fracs[a]).unwrap().then(a.cmp(&b)));
    for &i in &order {
        if left == 0 {
            break;
        }
        caps[i] += 1;
        left -= 1;
    }
    caps
}

fn class_counts(doc: &Document) -> [usize; AssertionClass::CANONICAL_COUNT] {
    let mut counts = [0usize; AssertionClass::CANONICAL_COUNT];
    for g in &doc.gold {
        counts[(g.class_id.id() - 1) as usize] += 1;
    }
    counts
}

pub fn stratified_split(
    docs: Vec<Document>,
    ratios: &SplitRatios,
    seed: u64,
) -> Result<CorpusSplit, DataError> {
    const C: usize = AssertionClass::CANONICAL_COUNT;
    let n = docs.len();
    if n < 3 {
        return Err(DataError::TooFewDocuments { needed: 3, got: n });
    }
    let mut rng = rng_from_seed(seed);
    let per_doc: Vec<[usize; C]> = docs.iter().map(class_counts).collect();
    let mut totals = [0usize; C];
    for counts in &per_doc {
        for c in 0..C {
            totals[c] += counts[c];
        }
    }
    let r = ratios.as_array();
    // demand[s][c]: how many more spans of class c split s still wants.
    let mut demand = [[0.0f64; C]; 3];
    for s in 0..3 {
        for c in 0..C {
            demand[s][c] = r[s] * totals[c] as f64;
        }
    }
    let mut capacity = capacities(n, ratios);
    let mut assignment: Vec<Option<usize>> = vec![None; n];

    loop {
        // Unassigned documents containing each class.
        let mut holders: [Vec<usize>; C] = Default::default();
        for (i, counts) in per_doc.iter().enumerate() {
            if assignment[i].is_some() {
                continue;
            }
            for c in 0..C {
                if counts[c] > 0 {
                    holders[c].push(i);
                }
            }
        }
        let rarest = (0..C)
            .filter(|&c| !holders[c].is_empty())
            .min_by_key(|&c| (holders[c].len(), c));
        let Some(rarest) = rarest else { break };
        for &i in &holders[rarest] {
            let best = pick_split(&demand, &capacity, rarest, &mut rng);
            assignment[i] = Some(best);
            capacity[best] -= 1;
            for c in 0..C {
                demand[best][c] -= per_doc[i][c] as f64;
            }
        }
    }
    // Unlabeled documents: fill by remaining capacity.
    for slot in assignment.iter_mut() {
        if slot.is_some() {
            continue;
        }
        let max_cap = *capacity.iter().max().unwrap();
        let tied: Vec<usize> = (0..3).filter(|&s| capacity[s] == max_cap).collect();
        let pick = tied[rng.gen_range(0..tied.len())];
        *slot = Some(pick);
        capacity[pick] -= 1;
    }

    let mut split = CorpusSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (doc, slot) in docs.into_iter().zip(assignment) {
        match slot.unwrap() {
            0 => split.train.push(doc),
            1 => split.val.push(doc),
            _ => split.test.push(doc),
        }
    }
    Ok(split)
}

fn pick_split(
    demand: &[[f64; AssertionClass::CANONICAL_COUNT]; 3],
    capacity: &[usize; 3],
    class: usize,
    rng: &mut impl Rng,
) -> usize {
    let open: Vec<usize> = (0..3).filter(|&s| capacity[s] > 0).collect();
    debug_assert!(!open.is_empty());
    let best_demand = open
        .iter()
        .map(|&s| demand[s][class])
        .fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = open
        .iter()
        .copied()
        .filter(|&s| demand[s][class] == best_demand)
        .collect();
    if tied.len() == 1 {
        return tied[0];
    }
    let max_cap = tied.iter().map(|&s| capacity[s]).max().unwrap();
    let tied: Vec<usize> = tied.into_iter().filter(|&s| capacity[s] == max_cap).collect();
    if tied.len() == 1 {
        tied[0]
    } else {
        tied[rng.gen_range(0..tied.len())]
    }
}

/// Split membership by document id, one `<id>\t<split>` line per document.
pub fn write_manifest(split: &CorpusSplit) -> String {
    let mut out = String::new();
    for (name, docs) in [
        ("train", &split.train),
        ("val", &split.val),
        ("test", &split.test),
    ] {
        for d in docs {
            writeln!(out, "{}\t{}", d.id, name).unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::span::{LabeledSpan, TokenSpan};

    fn doc(id: &str, classes: &[u8]) -> Document {
        let tokens = crate::data::tokenize::tokenize(&"w ".repeat(40));
        let gold = classes
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                LabeledSpan::new(
                    TokenSpan::new(i * 3, i * 3 + 1).unwrap(),
                    crate::span::AssertionClass(c),
                )
                .unwrap()
            })
            .collect();
        Document {
            id: id.to_string(),
            tokens,
            gold,
        }
    }

    #[test]
    fn single_class_corpus_splits_near_ratios() {
        let docs: Vec<Document> = (0..10).map(|i| doc(&format!("d{i}"), &[1])).collect();
        let split = stratified_split(docs, &SplitRatios::default(), 7).unwrap();
        assert_eq!(split.train.len(), 8);
        assert_eq!(split.val.len(), 1);
        assert_eq!(split.test.len(), 1);
    }

    #[test]
    fn same_seed_gives_identical_splits() {
        let make = || -> Vec<Document> {
            (0..30)
                .map(|i| doc(&format!("d{i}"), &[(i % 6 + 1) as u8]))
                .collect()
        };
        let a = stratified_split(make(), &SplitRatios::default(), 11).unwrap();
        let b = stratified_split(make(), &SplitRatios::default(), 11).unwrap();
        let ids = |v: &[Document]| v.iter().map(|d| d.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a.train), ids(&b.train));
        assert_eq!(ids(&a.val), ids(&b.val));
        assert_eq!(ids(&a.test), ids(&b.test));
    }

    #[test]
    fn partition_is_disjoint_and_covering() {
        let docs: Vec<Document> = (0..25)
            .map(|i| {
                let classes: Vec<u8> = (0..(i % 3)).map(|j| ((i + j) % 6 + 1) as u8).collect();
                doc(&format!("d{i}"), &classes)
            })
            .collect();
        let split = stratified_split(docs, &SplitRatios::default(), 3).unwrap();
        let mut all: Vec<String> = split
            .train
            .iter()
            .chain(&split.val)
            .chain(&split.test)
            .map(|d| d.id.clone())
            .collect();
        assert_eq!(all.len(), 25);
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 25, "duplicated document across splits");
    }

    #[test]
    fn too_few_documents_is_rejected() {
        let docs = vec![doc("a", &[1]), doc("b", &[2])];
        assert!(matches!(
            stratified_split(docs, &SplitRatios::default(), 0),
            Err(DataError::TooFewDocuments { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn bad_ratios_are_rejected() {
        assert!(SplitRatios::new(0.5, 0.5, 0.5).is_err());
        assert!(SplitRatios::new(1.0, 0.0, 0.0).is_err());
        assert!(SplitRatios::new(0.8, 0.1, 0.1).is_ok());
    }

    #[test]
    fn capacities_apportion_exactly() {
        let caps = capacities(10, &SplitRatios::default());
        assert_eq!(caps, [8, 1, 1]);
        let caps = capacities(7, &SplitRatios::new(0.5, 0.25, 0.25).unwrap());
        assert_eq!(caps.iter().sum::<usize>(), 7);
    }

    #[test]
    fn manifest_lists_every_document_once() {
        let docs: Vec<Document> = (0..6).map(|i| doc(&format!("d{i}"), &[1])).collect();
        let split = stratified_split(docs, &SplitRatios::default(), 1).unwrap();
        let manifest = write_manifest(&split);
        assert_eq!(manifest.lines().count(), 6);
        for i in 0..6 {
            assert_eq!(
                manifest.lines().filter(|l| l.starts_with(&format!("d{i}\t"))).count(),
                1
            );
        }
    }

    #[test]
    fn synthetic_corpus_train_fraction_within_five_points() {
        let cfg = crate::data::synth::SynthConfig {
            n_documents: 500,
            seed: 9,
            ..Default::default()
        };
        let corpus = crate::data::synth::generate_corpus(&cfg);
        let split = stratified_split(corpus.documents, &SplitRatios::default(), 9).unwrap();
        let count = |docs: &[Document], c: u8| -> usize {
            docs.iter()
                .flat_map(|d| &d.gold)
                .filter(|g| g.class_id.id() == c)
                .count()
        };
        for c in 1..=6u8 {
            let in_train = count(&split.train, c);
            let total = in_train + count(&split.val, c) + count(&split.test, c);
            assert!(total > 0, "class {c} absent from corpus");
            let frac = in_train as f64 / total as f64;
            assert!(
                (frac - 0.8).abs() <= 0.05,
                "class {c}: train fraction {frac:.3} is more than 5 points from 0.8"
            );
        }
    }
}
