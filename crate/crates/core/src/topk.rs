//! Exact top-K selection with a fixed tie rule: higher score first, then
//! ascending id.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

#[derive(Debug, Clone, Copy)]
struct Ranked<T> {
    score: f64,
    id: T,
}

impl<T: Ord> PartialEq for Ranked<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Ord> Eq for Ranked<T> {}

impl<T: Ord> PartialOrd for Ranked<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Ord> Ord for Ranked<T> {
    /// Greater means ranked earlier.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.id.cmp(&self.id))
    }
}

/// Orders two `(id, score)` entries by rank position.
pub fn rank_order<T: Ord>(a: &(T, f64), b: &(T, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// The best `k` entries, best first.
pub fn select_top_k<T, I>(entries: I, k: usize) -> Vec<(T, f64)>
where
    T: Ord + Copy,
    I: IntoIterator<Item = (T, f64)>,
{
    if k == 0 {
        return Vec::new();
    }
    let mut heap: BinaryHeap<Reverse<Ranked<T>>> = BinaryHeap::with_capacity(k + 1);
    for (id, score) in entries {
        let cand = Ranked { score, id };
        if heap.len() < k {
            heap.push(Reverse(cand));
        } else if let Some(Reverse(worst)) = heap.peek() {
            if cand > *worst {
                heap.pop();
                heap.push(Reverse(cand));
            }
        }
    }
    heap.into_sorted_vec()
        .into_iter()
        .map(|Reverse(r)| (r.id, r.score))
        .collect()
}

/// Merges several already ranked lists into the global top `k`.
pub fn merge_top_k<T: Ord + Copy>(lists: Vec<Vec<(T, f64)>>, k: usize) -> Vec<(T, f64)> {
    select_top_k(lists.into_iter().flatten(), k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_go_to_lower_ids() {
        let got = select_top_k(vec![(3u32, 1.0), (1, 1.0), (2, 2.0), (0, 0.5)], 3);
        assert_eq!(got, vec![(2, 2.0), (1, 1.0), (3, 1.0)]);
    }

    #[test]
    fn k_larger_than_input() {
        let got = select_top_k(vec![(0u32, 0.1), (1, 0.3)], 10);
        assert_eq!(got, vec![(1, 0.3), (0, 0.1)]);
        assert!(select_top_k(vec![(0u32, 1.0)], 0).is_empty());
    }

    #[test]
    fn matches_full_sort() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let n = rng.random_range(0..60);
            // coarse scores to force ties
            let v: Vec<(u32, f64)> = (0..n).map(|i| (i, rng.random_range(0..8) as f64)).collect();
            let k = rng.random_range(0..70);
            let mut full = v.clone();
            full.sort_by(rank_order);
            full.truncate(k);
            assert_eq!(select_top_k(v, k), full);
        }
    }
}
