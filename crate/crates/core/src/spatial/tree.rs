//! Indexed rate sum: a Fenwick tree over per-slot rates with prefix-sum
//! sampling. Updates and draws are O(log n); slots are appended and
//! swap-removed by the engines. Incremental float updates drift, so the
//! tree rebuilds itself from the stored values every 2^20 mutations.

use crate::real::Real;

pub(crate) struct RateTree<F: Real> {
    values: Vec<F>,
    tree: Vec<F>, // 1-indexed
    mutations: u64,
}

const REBUILD_PERIOD: u64 = 1 << 20;

impl<F: Real> RateTree<F> {
    pub fn new() -> Self {
        RateTree {
            values: Vec::new(),
            tree: vec![F::zero()],
            mutations: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    fn prefix(&self, mut i: usize) -> F {
        let mut acc = F::zero();
        while i > 0 {
            acc += self.tree[i];
            i &= i - 1;
        }
        acc
    }

    pub fn total(&self) -> F {
        self.prefix(self.values.len())
    }

    pub fn get(&self, slot: usize) -> F {
        self.values[slot]
    }

    pub fn push(&mut self, v: F) {
        self.values.push(v);
        let i = self.values.len();
        let low = i & (i - 1); // i - lowbit(i)
        let node = self.prefix(i - 1) - self.prefix(low) + v;
        self.tree.push(node);
        self.maybe_rebuild();
    }

    pub fn set(&mut self, slot: usize, v: F) {
        let delta = v - self.values[slot];
        self.values[slot] = v;
        let mut i = slot + 1;
        while i <= self.values.len() {
            self.tree[i] += delta;
            i += i & i.wrapping_neg();
        }
        self.maybe_rebuild();
    }

    /// Remove the last slot; its rate must already be zero.
    pub fn pop(&mut self) {
        debug_assert!(self.values.last().is_some_and(|v| v.is_zero()));
        self.values.pop();
        self.tree.pop();
    }

    /// Index of the slot containing the prefix position `target`,
    /// `0 <= target < total()`. Falls back to the last positive slot if
    /// float drift pushed the target past the end.
    pub fn sample(&self, target: F) -> usize {
        let n = self.values.len();
        debug_assert!(n > 0);
        let mut pos = 0usize;
        let mut rem = target;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= rem {
                rem -= self.tree[next];
                pos = next;
            }
            step >>= 1;
        }
        // pos = number of slots whose cumulative sum is <= target
        if pos < n && self.values[pos] > F::zero() {
            return pos;
        }
        // drift guard: deterministic scan for the nearest positive slot
        for i in (0..n).rev() {
            if self.values[i] > F::zero() {
                return i;
            }
        }
        unreachable!("sample from empty rate tree");
    }

    fn maybe_rebuild(&mut self) {
        self.mutations += 1;
        if self.mutations % REBUILD_PERIOD == 0 {
            self.rebuild();
        }
    }

    fn rebuild(&mut self) {
        let n = self.values.len();
        for i in 1..=n {
            let low = i & (i - 1);
            self.tree[i] = self.prefix_values(low, i);
        }
    }

    fn prefix_values(&self, from: usize, to: usize) -> F {
        let mut acc = F::zero();
        for v in &self.values[from..to] {
            acc += *v;
        }
        acc
    }
}
