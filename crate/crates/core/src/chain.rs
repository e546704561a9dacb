//! Matrix-chain ordering: choose the cheapest parenthesization of
//! `M1 * M2 * ... * Mn` under the `2*p*q*r` cost of a general
//! matrix-matrix multiply.
//!
//! [`optimal_order`] is the O(n³) dynamic program used during lowering;
//! [`brute_force_order`] enumerates every binary tree and exists to
//! cross-check the DP on small chains.

use std::fmt;

/// Binary multiplication tree over factor positions `0..n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParenTree {
    Leaf(usize),
    Node(Box<ParenTree>, Box<ParenTree>),
}

impl ParenTree {
    /// Leftmost/rightmost factor positions covered by this subtree.
    pub fn range(&self) -> (usize, usize) {
        match self {
            ParenTree::Leaf(i) => (*i, *i),
            ParenTree::Node(l, r) => (l.range().0, r.range().1),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            ParenTree::Leaf(_) => 1,
            ParenTree::Node(l, r) => l.leaf_count() + r.leaf_count(),
        }
    }
}

impl fmt::Display for ParenTree {
    /// Factors are numbered from 1: `((M1 M2) M3)`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParenTree::Leaf(i) => write!(f, "M{}", i + 1),
            ParenTree::Node(l, r) => write!(f, "({} {})", l, r),
        }
    }
}

/// A parenthesization together with its total multiply cost.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChainOrder {
    pub cost: u64,
    pub tree: ParenTree,
}

fn mult_cost(p: usize, q: usize, r: usize) -> u64 {
    2 * (p as u64) * (q as u64) * (r as u64)
}

/// Optimal ordering for a chain whose factor `i` is `dims[i] x dims[i+1]`.
///
/// Ties prefer the largest split point, which degenerates to left-to-right
/// association when all orderings cost the same. Panics if `dims` has fewer
/// than two entries or contains a zero.
pub fn optimal_order(dims: &[usize]) -> ChainOrder {
    assert!(dims.len() >= 2, "a chain needs at least one factor");
    assert!(dims.iter().all(|&d| d > 0), "dimensions must be positive");
    let n = dims.len() - 1;
    // cost[i][j], split[i][j] for the inclusive factor range i..=j.
    let mut cost = vec![vec![0u64; n]; n];
    let mut split = vec![vec![0usize; n]; n];
    for len in 2..=n {
        for i in 0..=n - len {
            let j = i + len - 1;
            let mut best = u64::MAX;
            let mut best_k = i;
            for k in i..j {
                let c = cost[i][k]
                    + cost[k + 1][j]
                    + mult_cost(dims[i], dims[k + 1], dims[j + 1]);
                // `<=` keeps the last (largest) split among equal costs.
                if c <= best {
                    best = c;
                    best_k = k;
                }
            }
            cost[i][j] = best;
            split[i][j] = best_k;
        }
    }

    fn build(split: &[Vec<usize>], i: usize, j: usize) -> ParenTree {
        if i == j {
            ParenTree::Leaf(i)
        } else {
            let k = split[i][j];
            ParenTree::Node(
                Box::new(build(split, i, k)),
                Box::new(build(split, k + 1, j)),
            )
        }
    }

    ChainOrder { cost: cost[0][n - 1], tree: build(&split, 0, n - 1) }
}

/// Every parenthesization of an `n`-factor chain. Guarded to `n <= 12`
/// (58786 trees) because the count grows as the Catalan numbers.
pub fn enumerate_trees(n: usize) -> Vec<ParenTree> {
    assert!(n >= 1, "a chain needs at least one factor");
    assert!(n <= 12, "tree enumeration is limited to 12 factors");
    fn trees(lo: usize, hi: usize) -> Vec<ParenTree> {
        if lo == hi {
            return vec![ParenTree::Leaf(lo)];
        }
        let mut out = Vec::new();
        for k in lo..hi {
            for l in trees(lo, k) {
                for r in trees(k + 1, hi) {
                    out.push(ParenTree::Node(Box::new(l.clone()), Box::new(r)));
                }
            }
        }
        out
    }
    trees(0, n - 1)
}

fn tree_cost(tree: &ParenTree, dims: &[usize]) -> u64 {
    match tree {
        ParenTree::Leaf(_) => 0,
        ParenTree::Node(l, r) => {
            let (li, mid) = l.range();
            let (_, rj) = r.range();
            tree_cost(l, dims)
                + tree_cost(r, dims)
                + mult_cost(dims[li], dims[mid + 1], dims[rj + 1])
        }
    }
}

/// Exhaustive-minimum ordering; the independent oracle for [`optimal_order`].
pub fn brute_force_order(dims: &[usize]) -> ChainOrder {
    assert!(dims.len() >= 2, "a chain needs at least one factor");
    let n = dims.len() - 1;
    let mut best: Option<ChainOrder> = None;
    for tree in enumerate_trees(n) {
        let cost = tree_cost(&tree, dims);
        if best.as_ref().map_or(true, |b| cost < b.cost) {
            best = Some(ChainOrder { cost, tree });
        }
    }
    best.expect("at least one tree")
}

/// The n-th Catalan number, or `None` once it no longer fits in a `u64`.
/// `catalan(n-1)` counts the parenthesizations of an `n`-factor chain.
pub fn catalan(n: u64) -> Option<u64> {
    // C_0 = 1, C_{k+1} = C_k * 2(2k+1) / (k+2), exact at every step.
    let mut c: u128 = 1;
    for k in 0..n as u128 {
        c = c * (2 * (2 * k + 1)) / (k + 2);
    }
    u64::try_from(c).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn textbook_three_factor_chain() {
        // 10x100 * 100x5 * 5x50: grouping the left pair first costs
        // 2*(10*100*5) + 2*(10*5*50) = 15000; the right-first grouping
        // costs 2*(100*5*50) + 2*(10*100*50) = 150000.
        let order = optimal_order(&[10, 100, 5, 50]);
        assert_eq!(order.cost, 15_000);
        assert_eq!(order.tree.to_string(), "((M1 M2) M3)");
    }

    #[test]
    fn ties_associate_left() {
        let order = optimal_order(&[8, 8, 8, 8]);
        assert_eq!(order.tree.to_string(), "((M1 M2) M3)");
    }

    #[test]
    fn single_factor_chain_is_free() {
        let order = optimal_order(&[7, 3]);
        assert_eq!(order.cost, 0);
        assert_eq!(order.tree.to_string(), "M1");
    }

    #[test]
    fn small_leading_dimension_groups_left() {
        // 64x512 * 512x512 * 512x512: grouping left keeps every
        // intermediate only 64 rows tall.
        let order = optimal_order(&[64, 512, 512, 512]);
        assert_eq!(order.tree.to_string(), "((M1 M2) M3)");
        assert_eq!(order.cost, 2 * 64 * 512 * 512 * 2);
    }

    #[test]
    fn enumeration_counts_match_catalan() {
        for n in 1..=8 {
            let expected = catalan(n as u64 - 1).unwrap() as usize;
            assert_eq!(enumerate_trees(n).len(), expected, "n = {n}");
        }
    }

    #[test]
    fn catalan_values_and_overflow_guard() {
        let known = [1u64, 1, 2, 5, 14, 42, 132, 429, 1430, 4862, 16796];
        for (i, &v) in known.iter().enumerate() {
            assert_eq!(catalan(i as u64), Some(v), "C_{i}");
        }
        assert_eq!(catalan(30), Some(3_814_986_502_092_304));
        assert!(catalan(36).is_some());
        assert_eq!(catalan(37), None);
        assert_eq!(catalan(60), None);
    }

    #[test]
    fn brute_force_agrees_on_a_known_hard_case() {
        let dims = [512, 512, 64, 512, 512];
        let dp = optimal_order(&dims);
        let brute = brute_force_order(&dims);
        assert_eq!(dp.cost, brute.cost);
        // Both factors of the middle split keep the small 64 dimension.
        assert_eq!(dp.tree.to_string(), "((M1 M2) (M3 M4))");
    }

    proptest! {
        #[test]
        fn dp_matches_brute_force(dims in proptest::collection::vec(1usize..=9, 2..=9)) {
            let dp = optimal_order(&dims);
            let brute = brute_force_order(&dims);
            prop_assert_eq!(dp.cost, brute.cost);
            prop_assert_eq!(dp.tree.leaf_count(), dims.len() - 1);
        }

        #[test]
        fn optimal_never_beats_any_enumerated_tree(
            dims in proptest::collection::vec(1usize..=9, 2..=7)
        ) {
            let dp = optimal_order(&dims);
            for tree in enumerate_trees(dims.len() - 1) {
                prop_assert!(dp.cost <= tree_cost(&tree, &dims));
            }
        }
    }
}
