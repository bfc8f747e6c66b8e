//! CART regression trees with variance-reduction splits.

use serde::{Deserialize, Serialize};

use super::{QModelError, Target};
use crate::features::{FeatureVector, CATEGORICAL_FEATURE, FEATURE_COUNT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub max_depth: u32,
    pub min_samples_leaf: u32,
    pub min_variance_gain: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            max_depth: 12,
            min_samples_leaf: 5,
            min_variance_gain: 1e-9,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), QModelError> {
        if self.max_depth == 0 || self.min_samples_leaf == 0 || !(self.min_variance_gain > 0.0) {
            return Err(QModelError::InvalidHyperparams(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Split {
    /// `x[feature] < threshold` goes left.
    LessThan { feature: usize, threshold: f64 },
    /// `x[feature] == category` goes left.
    Equals { feature: usize, category: f64 },
}

impl Split {
    pub fn feature(&self) -> usize {
        match *self {
            Split::LessThan { feature, .. } | Split::Equals { feature, .. } => feature,
        }
    }

    #[inline]
    pub fn goes_left(&self, x: &[f64; FEATURE_COUNT]) -> bool {
        match *self {
            Split::LessThan { feature, threshold } => x[feature] < threshold,
            Split::Equals { feature, category } => x[feature] == category,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { value: f64, n: u64 },
    /// Children always have larger indices than their parent.
    Internal { split: Split, left: u32, right: u32 },
}

/// Leaf values live in the target's transformed space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub target: Target,
    pub hyperparams: Hyperparams,
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    /// Builds a tree from raw feature rows and transformed targets.
    pub fn fit(
        xs: &[[f64; FEATURE_COUNT]],
        ys: &[f64],
        target: Target,
        hp: Hyperparams,
    ) -> Result<Self, QModelError> {
        hp.validate()?;
        if xs.is_empty() {
            return Err(QModelError::EmptyTrainingSet);
        }
        assert_eq!(xs.len(), ys.len(), "feature and target rows differ");
        for (i, x) in xs.iter().enumerate() {
            if x.iter().any(|v| !v.is_finite()) {
                return Err(QModelError::NonFiniteInput { row: i });
            }
        }
        if let Some(i) = ys.iter().position(|y| !y.is_finite()) {
            return Err(QModelError::NonFiniteInput { row: i });
        }
        let mut builder = Builder {
            xs,
            ys,
            hp,
            nodes: Vec::new(),
        };
        let idx: Vec<usize> = (0..xs.len()).collect();
        builder.grow(idx, 0);
        Ok(RegressionTree {
            target,
            hyperparams: hp,
            nodes: builder.nodes,
        })
    }

    /// Leaf value reached by `x`, in transformed space.
    pub fn predict_transformed(&self, x: &[f64; FEATURE_COUNT]) -> f64 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                Node::Leaf { value, .. } => return value,
                Node::Internal { split, left, right } => {
                    i = if split.goes_left(x) { left } else { right } as usize;
                }
            }
        }
    }

    /// Prediction in the target's natural units.
    pub fn predict(&self, fv: &FeatureVector) -> f64 {
        self.target.inverse(self.predict_transformed(&fv.to_array()))
    }

    /// Internal nodes visited on the way to `x`'s leaf.
    pub fn path(&self, x: &[f64; FEATURE_COUNT]) -> Vec<Split> {
        let mut out = Vec::new();
        let mut i = 0usize;
        while let Node::Internal { split, left, right } = self.nodes[i] {
            out.push(split);
            i = if split.goes_left(x) { left } else { right } as usize;
        }
        out
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Internal { left, right, .. } => {
                    1 + go(nodes, left as usize).max(go(nodes, right as usize))
                }
            }
        }
        go(&self.nodes, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

struct Builder<'a> {
    xs: &'a [[f64; FEATURE_COUNT]],
    ys: &'a [f64],
    hp: Hyperparams,
    nodes: Vec<Node>,
}

#[derive(Clone, Copy, Default)]
struct Moments {
    n: f64,
    sum: f64,
    sumsq: f64,
}

impl Moments {
    fn add(&mut self, y: f64) {
        self.n += 1.0;
        self.sum += y;
        self.sumsq += y * y;
    }

    fn sub(self, o: Moments) -> Moments {
        Moments {
            n: self.n - o.n,
            sum: self.sum - o.sum,
            sumsq: self.sumsq - o.sumsq,
        }
    }

    fn sse(&self) -> f64 {
        if self.n == 0.0 {
            0.0
        } else {
            (self.sumsq - self.sum * self.sum / self.n).max(0.0)
        }
    }
}

impl Builder<'_> {
    fn grow(&mut self, idx: Vec<usize>, depth: u32) -> u32 {
        let me = self.nodes.len() as u32;
        let split = if depth < self.hp.max_depth {
            self.best_split(&idx)
        } else {
            None
        };
        match split {
            None => {
                let sum: f64 = idx.iter().map(|&i| self.ys[i]).sum();
                self.nodes.push(Node::Leaf {
                    value: sum / idx.len() as f64,
                    n: idx.len() as u64,
                });
            }
            Some(split) => {
                self.nodes.push(Node::Leaf { value: 0.0, n: 0 });
                let (l, r): (Vec<usize>, Vec<usize>) =
                    idx.into_iter().partition(|&i| split.goes_left(&self.xs[i]));
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[me as usize] = Node::Internal { split, left, right };
            }
        }
        me
    }

    /// Strict improvement only, so the first candidate in (feature,
    /// threshold) order wins ties.
    fn best_split(&self, idx: &[usize]) -> Option<Split> {
        let min_leaf = self.hp.min_samples_leaf as usize;
        let n = idx.len();
        if n < 2 * min_leaf {
            return None;
        }
        // centred targets keep the running sums well conditioned
        let mean = idx.iter().map(|&i| self.ys[i]).sum::<f64>() / n as f64;
        let y = |i: usize| self.ys[i] - mean;
        let mut total = Moments::default();
        for &i in idx {
            total.add(y(i));
        }
        let parent = total.sse();
        let mut best: Option<(Split, f64)> = None;
        let consider = |split: Split, left: Moments, best: &mut Option<(Split, f64)>| {
            let gain = (parent - left.sse() - total.sub(left).sse()) / n as f64;
            if best.map_or(true, |(_, g)| gain > g) {
                *best = Some((split, gain));
            }
        };

        for f in 0..FEATURE_COUNT {
            let mut order = idx.to_vec();
            order.sort_by(|&a, &b| self.xs[a][f].total_cmp(&self.xs[b][f]));
            if f == CATEGORICAL_FEATURE {
                let mut k = 0;
                while k < n {
                    let c = self.xs[order[k]][f];
                    let mut left = Moments::default();
                    while k < n && self.xs[order[k]][f] == c {
                        left.add(y(order[k]));
                        k += 1;
                    }
                    let nl = left.n as usize;
                    if nl >= min_leaf && n - nl >= min_leaf {
                        consider(Split::Equals { feature: f, category: c }, left, &mut best);
                    }
                }
                continue;
            }
            let mut left = Moments::default();
            for k in 1..n {
                left.add(y(order[k - 1]));
                let (a, b) = (self.xs[order[k - 1]][f], self.xs[order[k]][f]);
                if a == b || k < min_leaf || n - k < min_leaf {
                    continue;
                }
                let mut threshold = a + (b - a) / 2.0;
                if !(a < threshold && threshold <= b) {
                    threshold = b;
                }
                consider(Split::LessThan { feature: f, threshold }, left, &mut best);
            }
        }
        best.filter(|&(_, g)| g > 0.0 && g >= self.hp.min_variance_gain)
            .map(|(s, _)| s)
    }
}
