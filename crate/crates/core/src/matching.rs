//! Maximum-cardinality bipartite matching for overlap counting.

use crate::geometry::Vec3;

/// Size of a maximum one-to-one matching, given adjacency lists from left
/// vertices to right vertices. Kuhn's augmenting-path algorithm.
pub fn max_bipartite_matching(adjacency: &[Vec<usize>], n_right: usize) -> usize {
    let mut matched_right: Vec<Option<usize>> = vec![None; n_right];
    let mut count = 0;
    let mut seen = vec![false; n_right];
    for left in 0..adjacency.len() {
        seen.iter_mut().for_each(|s| *s = false);
        if augment(adjacency, left, &mut seen, &mut matched_right) {
            count += 1;
        }
    }
    count
}

fn augment(
    adjacency: &[Vec<usize>],
    left: usize,
    seen: &mut [bool],
    matched_right: &mut [Option<usize>],
) -> bool {
    for &right in &adjacency[left] {
        if seen[right] {
            continue;
        }
        seen[right] = true;
        let free = match matched_right[right] {
            None => true,
            Some(other) => augment(adjacency, other, seen, matched_right),
        };
        if free {
            matched_right[right] = Some(left);
            return true;
        }
    }
    false
}

/// Number of one-to-one atom overlaps: a maximum matching on the bipartite
/// graph of pairs with distance at most `tolerance`.
pub fn overlap_count(a: &[Vec3], b: &[Vec3], tolerance: f64) -> usize {
    let tol_sq = tolerance * tolerance;
    let adjacency: Vec<Vec<usize>> = a
        .iter()
        .map(|pa| {
            b.iter()
                .enumerate()
                .filter(|(_, pb)| (pa - *pb).norm_squared() <= tol_sq)
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    max_bipartite_matching(&adjacency, b.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive maximum matching by recursion over left vertices.
    pub(crate) fn brute_force_matching(adjacency: &[Vec<usize>], n_right: usize) -> usize {
        fn recurse(adjacency: &[Vec<usize>], left: usize, used: &mut Vec<bool>) -> usize {
            if left == adjacency.len() {
                return 0;
            }
            // Leave this left vertex unmatched...
            let mut best = recurse(adjacency, left + 1, used);
            // ...or match it to any free neighbor.
            for &right in &adjacency[left] {
                if !used[right] {
                    used[right] = true;
                    best = best.max(1 + recurse(adjacency, left + 1, used));
                    used[right] = false;
                }
            }
            best
        }
        let mut used = vec![false; n_right];
        recurse(adjacency, 0, &mut used)
    }

    #[test]
    fn one_to_one_not_one_to_many() {
        // One left atom adjacent to two right atoms: matching size 1.
        let adjacency = vec![vec![0, 1]];
        assert_eq!(max_bipartite_matching(&adjacency, 2), 1);
    }

    #[test]
    fn augmenting_path_reassigns() {
        // Left 0 adjacent to {0}, left 1 adjacent to {0, 1}: both match.
        let adjacency = vec![vec![0], vec![0, 1]];
        assert_eq!(max_bipartite_matching(&adjacency, 2), 2);
    }

    #[test]
    fn matches_brute_force_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        for _ in 0..300 {
            let n_left = rng.random_range(1..=6);
            let n_right = rng.random_range(1..=6);
            let adjacency: Vec<Vec<usize>> = (0..n_left)
                .map(|_| (0..n_right).filter(|_| rng.random_bool(0.4)).collect())
                .collect();
            assert_eq!(
                max_bipartite_matching(&adjacency, n_right),
                brute_force_matching(&adjacency, n_right)
            );
        }
    }

    #[test]
    fn overlap_uses_distance_tolerance() {
        let a = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(5.0, 0.0, 0.0)];
        let b = vec![Vec3::new(0.9, 0.0, 0.0), Vec3::new(5.0, 1.1, 0.0)];
        assert_eq!(overlap_count(&a, &b, 1.0), 1);
        assert_eq!(overlap_count(&a, &b, 1.2), 2);
    }
}
