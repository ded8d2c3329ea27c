use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TaggedPair;
use crate::error::{Error, Result};

/// Token cost of one pair against the batch budget.
pub fn pair_tokens(p: &TaggedPair) -> usize {
    p.src.len() + p.tgt.len()
}

/// Partitions `pairs` into batches whose members share both source and
/// target length and whose summed [`pair_tokens`] stay within
/// `max_tokens`. Pairs are shuffled before greedy packing and the batch
/// order is shuffled after, both from `seed`.
pub fn make_batches(pairs: &[TaggedPair], max_tokens: usize, seed: u64) -> Result<Vec<Vec<TaggedPair>>> {
    if let Some(i) = pairs.iter().position(|p| pair_tokens(p) > max_tokens) {
        return Err(Error::data(format!(
            "pair {i} needs {} tokens, over the batch budget of {max_tokens}",
            pair_tokens(&pairs[i])
        )));
    }
    if let Some(i) = pairs.iter().position(|p| p.src.is_empty()) {
        return Err(Error::data(format!("pair {i} has an empty source")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for i in order {
        groups
            .entry((pairs[i].src.len(), pairs[i].tgt.len()))
            .or_default()
            .push(i);
    }
    let mut batches = Vec::new();
    for ((s, t), members) in groups {
        let per_batch = max_tokens / (s + t);
        for chunk in members.chunks(per_batch) {
            batches.push(chunk.iter().map(|&i| pairs[i].clone()).collect::<Vec<_>>());
        }
    }
    batches.shuffle(&mut rng);
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(s: usize, t: usize) -> TaggedPair {
        TaggedPair {
            src: vec![4; s],
            tgt: vec![4; t],
            pos_tags: vec![0; s],
            ner_tags: vec![0; s],
        }
    }

    #[test]
    fn different_lengths_never_share() {
        let pairs = vec![pair(3, 3), pair(3, 3), pair(5, 5)];
        let b = make_batches(&pairs, 100, 7).unwrap();
        assert_eq!(b.len(), 2);
        assert!(b
            .iter()
            .all(|batch| batch.iter().all(|p| p.src.len() == batch[0].src.len())));
    }

    #[test]
    fn over_budget_pair_is_named() {
        let err = make_batches(&[pair(2, 2), pair(6, 6)], 10, 0).unwrap_err();
        assert!(err.to_string().contains("pair 1"));
    }
}
