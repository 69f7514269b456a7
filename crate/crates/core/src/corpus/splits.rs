use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AnnotationStore;
use crate::error::{Error, Result};

pub const NUM_FOLDS: usize = 3;
const MIN_ANNOTATIONS: usize = 4;

/// Which partition a document belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Part {
    Eval,
    /// Training fold, 1-based.
    Fold(u8),
}

/// The evaluation quarter plus three disjoint training folds.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub eval_set: BTreeSet<String>,
    pub folds: [BTreeSet<String>; NUM_FOLDS],
}

impl SplitAssignment {
    pub fn part_of(&self, doc_id: &str) -> Option<Part> {
        if self.eval_set.contains(doc_id) {
            return Some(Part::Eval);
        }
        self.folds
            .iter()
            .position(|f| f.contains(doc_id))
            .map(|i| Part::Fold(i as u8 + 1))
    }

    /// Training fold (1..=3) the document belongs to, if any.
    pub fn fold_of(&self, doc_id: &str) -> Option<u8> {
        match self.part_of(doc_id) {
            Some(Part::Fold(k)) => Some(k),
            _ => None,
        }
    }

    pub fn fold(&self, k: u8) -> &BTreeSet<String> {
        &self.folds[usize::from(k) - 1]
    }

    pub fn is_training(&self, doc_id: &str) -> bool {
        self.fold_of(doc_id).is_some()
    }

    pub fn len(&self) -> usize {
        self.eval_set.len() + self.folds.iter().map(BTreeSet::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sizes(&self) -> [usize; 4] {
        [
            self.eval_set.len(),
            self.folds[0].len(),
            self.folds[1].len(),
            self.folds[2].len(),
        ]
    }

    fn part_mut(&mut self, slot: usize) -> &mut BTreeSet<String> {
        match slot {
            0 => &mut self.eval_set,
            k => &mut self.folds[k - 1],
        }
    }
}

/// Target sizes `[eval, fold1, fold2, fold3]` for `n` annotated documents:
/// eval gets `round(eval_fraction * n)` and the remainder is spread over the
/// folds in order so that fold sizes differ by at most one.
pub fn split_targets(n: usize, eval_fraction: f64) -> [usize; 4] {
    let eval = ((eval_fraction * n as f64).round() as usize).min(n);
    let rest = n - eval;
    let base = rest / NUM_FOLDS;
    let extra = rest % NUM_FOLDS;
    [
        eval,
        base + usize::from(extra > 0),
        base + usize::from(extra > 1),
        base,
    ]
}

/// Partitions every annotated document into eval + three folds.
///
/// Documents already present in `previous` keep their part; only newly
/// annotated documents are placed, shuffled deterministically from `seed`,
/// into whichever parts are furthest below their target size.
pub fn assign_splits(
    annotations: &AnnotationStore,
    seed: u64,
    eval_fraction: f64,
    previous: Option<&SplitAssignment>,
) -> Result<SplitAssignment> {
    let n = annotations.len();
    if n < MIN_ANNOTATIONS {
        return Err(Error::InsufficientAnnotations {
            needed: MIN_ANNOTATIONS,
            have: n,
        });
    }
    if !(0.0..1.0).contains(&eval_fraction) {
        return Err(Error::InvalidArgument(format!(
            "eval_fraction must be in [0, 1), got {eval_fraction}"
        )));
    }

    let mut split = SplitAssignment::default();
    let mut fresh = Vec::new();
    for id in annotations.annotated_ids() {
        match previous.and_then(|p| p.part_of(id)) {
            Some(Part::Eval) => {
                split.eval_set.insert(id.to_string());
            }
            Some(Part::Fold(k)) => {
                split.folds[usize::from(k) - 1].insert(id.to_string());
            }
            None => fresh.push(id.to_string()),
        }
    }

    let targets = split_targets(n, eval_fraction);
    let mut sizes = split.sizes();
    let mut slots = Vec::with_capacity(fresh.len());
    for _ in 0..fresh.len() {
        // Largest deficit first; ties go to eval, then fold 1..3.
        let slot = (0..4)
            .max_by_key(|&s| (targets[s] as i64 - sizes[s] as i64, std::cmp::Reverse(s)))
            .unwrap();
        sizes[slot] += 1;
        slots.push(slot);
    }

    let stream = previous.map_or(0, |p| p.len() as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    fresh.shuffle(&mut rng);
    for (id, slot) in fresh.into_iter().zip(slots) {
        split.part_mut(slot).insert(id);
    }
    Ok(split)
}
