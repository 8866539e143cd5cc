use serde::{Deserialize, Serialize};

use crate::inference::{clamp_prob, logistic};

/// A binary regression tree on the logit scale. Observations go left when
/// `x[feature] <= threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn leaf(value: f64) -> Self {
        TreeNode::Leaf { value }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    /// Adds the number of splits on each feature to `counts`.
    pub fn count_splits(&self, counts: &mut [usize]) {
        if let TreeNode::Split { feature, left, right, .. } = self {
            counts[*feature] += 1;
            left.count_splits(counts);
            right.count_splits(counts);
        }
    }
}

/// Sum-of-trees ensemble; the retention probability is the logistic of the summed leaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<TreeNode>,
}

impl Forest {
    pub fn logit(&self, x: &[f64]) -> f64 {
        self.trees.iter().fold(0.0, |acc, t| acc + t.predict(x))
    }

    /// Retention probability, clamped away from 0 and 1.
    pub fn predict_p(&self, x: &[f64]) -> f64 {
        clamp_prob(logistic(self.logit(x)))
    }

    pub fn count_splits(&self, counts: &mut [usize]) {
        self.trees.iter().for_each(|t| t.count_splits(counts));
    }
}

/// Prior probability that a node at `depth` is internal.
pub fn tree_depth_prior(depth: usize, alpha: f64, beta: f64) -> f64 {
    alpha * (1.0 + depth as f64).powf(-beta)
}
