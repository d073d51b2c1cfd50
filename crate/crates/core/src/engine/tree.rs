//! Sum tree over non-negative rates: O(log n) point updates and weighted
//! selection. Every internal node is recomputed from its children on update,
//! so no rounding drift accumulates across events.

#[derive(Debug, Clone)]
pub struct RateTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl RateTree {
    pub fn new(rates: &[f64]) -> Self {
        let leaves = rates.len().next_power_of_two().max(1);
        let mut nodes = vec![0.0; 2 * leaves];
        nodes[leaves..leaves + rates.len()].copy_from_slice(rates);
        for i in (1..leaves).rev() {
            nodes[i] = nodes[2 * i] + nodes[2 * i + 1];
        }
        Self { leaves, nodes }
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    pub fn set(&mut self, i: usize, rate: f64) {
        debug_assert!(rate >= 0.0, "negative rate {rate}");
        let mut k = self.leaves + i;
        self.nodes[k] = rate;
        while k > 1 {
            k /= 2;
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
        }
    }

    /// Leaf `i` with `prefix(i) ≤ u < prefix(i+1)` for `u ∈ [0, total)`.
    /// Never returns a zero-rate leaf.
    pub fn select(&self, mut u: f64) -> usize {
        let mut k = 1;
        while k < self.leaves {
            let left = self.nodes[2 * k];
            if u < left || self.nodes[2 * k + 1] == 0.0 {
                k *= 2;
                u = u.min(left);
            } else {
                u -= left;
                k = 2 * k + 1;
            }
        }
        // Rounding can land on an empty leaf at a boundary; step to its
        // sibling, which then carries all of the parent's rate.
        if self.nodes[k] == 0.0 {
            k ^= 1;
        }
        k - self.leaves
    }
}
