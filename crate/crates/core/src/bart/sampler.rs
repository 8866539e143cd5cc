//! Metropolis–Hastings sampler over sum-of-trees ensembles with a binomial-logit likelihood.
//!
//! Each sweep visits the trees in order. A tree first receives one structural proposal:
//! GROW turns a leaf with value `μ` into a split whose children take `μ - u` and `μ + u`
//! (`u ~ N(0, s²)`), and PRUNE inverts that map by averaging two sibling leaves. Both moves are
//! accepted on the full-ensemble likelihood, the depth prior, the N(0, σ²) leaf prior and the
//! reversible-jump proposal terms. Then every leaf value takes a Gaussian random-walk step.
//! Only rows under the touched leaves change their ensemble sum, so a move costs time
//! proportional to those rows.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::tree::{tree_depth_prior, Forest, TreeNode};
use super::{BartConfig, BartError, RetentionPosterior};
use crate::data::FeatureMatrix;
use crate::inference::{binomial_loglik_logit, clamp_prob, logistic, ChainDraws, DrawMatrix, RngStream, StepAdapter};

const N_FEATURES: usize = 3;
const LEAF_TARGET_ACCEPT: f64 = 0.44;

#[derive(Debug, Clone)]
enum Slot {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct Node {
    slot: Slot,
    depth: usize,
    parent: Option<usize>,
}

/// Tree stored as an arena plus the leaf each training row falls into.
#[derive(Debug, Clone)]
struct ArenaTree {
    nodes: Vec<Node>,
    free: Vec<usize>,
    leaf_of: Vec<usize>,
}

impl ArenaTree {
    fn root_only(value: f64, n_rows: usize) -> Self {
        Self {
            nodes: vec![Node {
                slot: Slot::Leaf { value },
                depth: 0,
                parent: None,
            }],
            free: Vec::new(),
            leaf_of: vec![0; n_rows],
        }
    }

    fn alloc(&mut self, node: Node) -> usize {
        match self.free.pop() {
            Some(i) => {
                self.nodes[i] = node;
                i
            }
            None => {
                self.nodes.push(node);
                self.nodes.len() - 1
            }
        }
    }

    fn is_live(&self, i: usize) -> bool {
        !self.free.contains(&i)
    }

    fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| matches!(self.nodes[i].slot, Slot::Leaf { .. }) && self.is_live(i))
            .collect()
    }

    fn is_leaf(&self, i: usize) -> bool {
        matches!(self.nodes[i].slot, Slot::Leaf { .. })
    }

    /// Split nodes whose children are both leaves.
    fn prunable(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.is_live(i))
            .filter(|&i| match self.nodes[i].slot {
                Slot::Split { left, right, .. } => self.is_leaf(left) && self.is_leaf(right),
                Slot::Leaf { .. } => false,
            })
            .collect()
    }

    fn is_root_only(&self) -> bool {
        self.is_leaf(0)
    }

    fn leaf_value(&self, i: usize) -> f64 {
        match self.nodes[i].slot {
            Slot::Leaf { value } => value,
            Slot::Split { .. } => unreachable!("not a leaf"),
        }
    }

    fn set_leaf_value(&mut self, i: usize, v: f64) {
        self.nodes[i].slot = Slot::Leaf { value: v };
    }

    fn rows_in(&self, leaf: usize) -> Vec<usize> {
        self.leaf_of.iter().enumerate().filter(|(_, &l)| l == leaf).map(|(r, _)| r).collect()
    }

    fn to_node(&self, i: usize) -> TreeNode {
        match self.nodes[i].slot {
            Slot::Leaf { value } => TreeNode::Leaf { value },
            Slot::Split {
                feature,
                threshold,
                left,
                right,
            } => TreeNode::Split {
                feature,
                threshold,
                left: Box::new(self.to_node(left)),
                right: Box::new(self.to_node(right)),
            },
        }
    }
}

/// Midpoints between consecutive distinct values of `feature` among `rows`.
fn split_points(x: &[[f64; N_FEATURES]], rows: &[usize], feature: usize) -> Vec<f64> {
    let mut v: Vec<f64> = rows.iter().map(|&r| x[r][feature]).collect();
    v.sort_unstable_by(f64::total_cmp);
    v.dedup();
    v.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

fn splittable(x: &[[f64; N_FEATURES]], rows: &[usize]) -> bool {
    (0..N_FEATURES).any(|f| {
        let mut it = rows.iter().map(|&r| x[r][f]);
        match it.next() {
            Some(first) => it.any(|v| v != first),
            None => false,
        }
    })
}

pub(super) struct TrainData {
    pub x: Vec<[f64; N_FEATURES]>,
    pub k: Vec<f64>,
    pub n: Vec<f64>,
}

impl TrainData {
    pub fn new(features: &FeatureMatrix, counts: &[(u64, u64)]) -> Result<Self, BartError> {
        if features.is_empty() {
            return Err(BartError::DegenerateData("no rows".into()));
        }
        if features.len() != counts.len() {
            return Err(BartError::LengthMismatch {
                rows: features.len(),
                counts: counts.len(),
            });
        }
        for (i, (f, &(k, n))) in features.rows.iter().zip(counts).enumerate() {
            if f.is_diagonal() {
                return Err(BartError::DiagonalRow(i));
            }
            if n == 0 || k > n {
                return Err(BartError::InvalidCounts { row: i, n_active: k, n_total: n });
            }
        }
        Ok(Self {
            x: features.tree_inputs(),
            k: counts.iter().map(|c| c.0 as f64).collect(),
            n: counts.iter().map(|c| c.1 as f64).collect(),
        })
    }

    fn loglik(&self, row: usize, eta: f64) -> f64 {
        binomial_loglik_logit(self.k[row], self.n[row], eta)
    }
}

pub(super) struct ChainOutput {
    pub p_draws: Vec<f64>,
    pub forests: Vec<Forest>,
    pub snapshot_draws: Vec<usize>,
    pub loglik: Vec<f64>,
    pub leaf_acceptance: f64,
    pub structure_acceptance: f64,
}

struct Chain<'a> {
    data: &'a TrainData,
    cfg: &'a BartConfig,
    sigma_leaf: f64,
    trees: Vec<ArenaTree>,
    eta: Vec<f64>,
    ll: Vec<f64>,
    leaf_step: StepAdapter,
    rng: ChaCha8Rng,
    leaf_tries: usize,
    leaf_accepts: usize,
    structure_tries: usize,
    structure_accepts: usize,
}

impl<'a> Chain<'a> {
    fn new(data: &'a TrainData, cfg: &'a BartConfig, rng: RngStream) -> Self {
        let total_k: f64 = data.k.iter().sum();
        let total_n: f64 = data.n.iter().sum();
        let pooled = (total_k / total_n).clamp(0.01, 0.99);
        let start = (pooled / (1.0 - pooled)).ln();
        let n_rows = data.x.len();
        let sigma_leaf = cfg.sigma_leaf();
        let trees = (0..cfg.m).map(|_| ArenaTree::root_only(start / cfg.m as f64, n_rows)).collect();
        let mut chain = Self {
            data,
            cfg,
            sigma_leaf,
            trees,
            eta: vec![0.0; n_rows],
            ll: vec![0.0; n_rows],
            leaf_step: StepAdapter::new(sigma_leaf / 2.0, LEAF_TARGET_ACCEPT),
            rng: rng.rng(),
            leaf_tries: 0,
            leaf_accepts: 0,
            structure_tries: 0,
            structure_accepts: 0,
        };
        chain.refresh();
        chain
    }

    /// Recomputes ensemble sums in tree order so they match [`Forest::logit`] exactly.
    fn refresh(&mut self) {
        for i in 0..self.eta.len() {
            let mut s = 0.0;
            for t in &self.trees {
                s += t.leaf_value(t.leaf_of[i]);
            }
            self.eta[i] = s;
            self.ll[i] = self.data.loglik(i, s);
        }
    }

    fn leaf_log_prior(&self, v: f64) -> f64 {
        -0.5 * (v / self.sigma_leaf).powi(2)
    }

    fn log_leaf_prob(&self, depth: usize, rows: &[usize]) -> f64 {
        if splittable(&self.data.x, rows) {
            (1.0 - tree_depth_prior(depth, self.cfg.alpha, self.cfg.beta)).ln()
        } else {
            0.0
        }
    }

    /// Log-likelihood change if each row in `rows` shifts its ensemble sum by `shift`.
    fn delta_ll(&self, rows: &[usize], shift: f64) -> f64 {
        rows.iter()
            .map(|&r| self.data.loglik(r, self.eta[r] + shift) - self.ll[r])
            .sum()
    }

    fn apply_shift(&mut self, rows: &[usize], shift: f64) {
        for &r in rows {
            self.eta[r] += shift;
            self.ll[r] = self.data.loglik(r, self.eta[r]);
        }
    }

    /// Log of the internal-node prior and reverse/forward proposal terms shared by GROW and
    /// PRUNE, seen from the GROW direction. Split-rule probabilities cancel.
    fn grow_log_ratio_structure(&self, depth: usize, left_rows: &[usize], right_rows: &[usize]) -> f64 {
        let pd = tree_depth_prior(depth, self.cfg.alpha, self.cfg.beta);
        pd.ln() + self.log_leaf_prob(depth + 1, left_rows) + self.log_leaf_prob(depth + 1, right_rows) - (1.0 - pd).ln()
    }

    fn log_normal_kernel(u: f64, s: f64) -> f64 {
        -0.5 * (u / s).powi(2) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }

    fn grow(&mut self, j: usize) -> bool {
        let leaves = self.trees[j].leaves();
        let p_grow = if self.trees[j].is_root_only() { 1.0 } else { 0.5 };
        let leaf = leaves[self.rng.random_range(0..leaves.len())];
        let rows = self.trees[j].rows_in(leaf);
        let options: Vec<(usize, Vec<f64>)> = (0..N_FEATURES)
            .map(|f| (f, split_points(&self.data.x, &rows, f)))
            .filter(|(_, pts)| !pts.is_empty())
            .collect();
        if options.is_empty() {
            return false;
        }
        let (feature, points) = &options[self.rng.random_range(0..options.len())];
        let feature = *feature;
        let threshold = points[self.rng.random_range(0..points.len())];
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| self.data.x[r][feature] <= threshold);

        let tree = &self.trees[j];
        let depth = tree.nodes[leaf].depth;
        let mu = tree.leaf_value(leaf);
        let s = self.leaf_step.step();
        let u = s * self.rng.sample::<f64, _>(StandardNormal);
        let (mu_l, mu_r) = (mu - u, mu + u);

        // prunable count after the move: the new node joins, the parent may stop qualifying
        let mut prunable_after = tree.prunable().len() + 1;
        if let Some(parent) = tree.nodes[leaf].parent {
            if let Slot::Split { left, right, .. } = tree.nodes[parent].slot {
                if tree.is_leaf(left) && tree.is_leaf(right) {
                    prunable_after -= 1;
                }
            }
        }

        let log_accept = self.delta_ll(&left_rows, -u)
            + self.delta_ll(&right_rows, u)
            + self.grow_log_ratio_structure(depth, &left_rows, &right_rows)
            + self.leaf_log_prior(mu_l)
            + self.leaf_log_prior(mu_r)
            - self.leaf_log_prior(mu)
            - self.sigma_leaf.ln()
            - 0.5 * (2.0 * std::f64::consts::PI).ln()
            + (0.5 / prunable_after as f64).ln()
            - (p_grow / leaves.len() as f64).ln()
            - Self::log_normal_kernel(u, s)
            + 2f64.ln();

        if self.rng.random::<f64>().ln() >= log_accept {
            return false;
        }
        let tree = &mut self.trees[j];
        let l = tree.alloc(Node {
            slot: Slot::Leaf { value: mu_l },
            depth: depth + 1,
            parent: Some(leaf),
        });
        let r = tree.alloc(Node {
            slot: Slot::Leaf { value: mu_r },
            depth: depth + 1,
            parent: Some(leaf),
        });
        tree.nodes[leaf].slot = Slot::Split {
            feature,
            threshold,
            left: l,
            right: r,
        };
        for &row in &left_rows {
            tree.leaf_of[row] = l;
        }
        for &row in &right_rows {
            tree.leaf_of[row] = r;
        }
        self.apply_shift(&left_rows, -u);
        self.apply_shift(&right_rows, u);
        true
    }

    fn prune(&mut self, j: usize) -> bool {
        let tree = &self.trees[j];
        let prunable = tree.prunable();
        let node = prunable[self.rng.random_range(0..prunable.len())];
        let (left, right) = match tree.nodes[node].slot {
            Slot::Split { left, right, .. } => (left, right),
            Slot::Leaf { .. } => unreachable!("prunable nodes are splits"),
        };
        let depth = tree.nodes[node].depth;
        let (mu_l, mu_r) = (tree.leaf_value(left), tree.leaf_value(right));
        let mu = 0.5 * (mu_l + mu_r);
        let u = 0.5 * (mu_r - mu_l);
        let left_rows = tree.rows_in(left);
        let right_rows = tree.rows_in(right);
        let n_leaves_after = tree.leaves().len() - 1;
        let p_grow_after = if node == 0 { 1.0 } else { 0.5 };
        let s = self.leaf_step.step();

        let log_accept = self.delta_ll(&left_rows, mu - mu_l) + self.delta_ll(&right_rows, mu - mu_r)
            - self.grow_log_ratio_structure(depth, &left_rows, &right_rows)
            - self.leaf_log_prior(mu_l)
            - self.leaf_log_prior(mu_r)
            + self.leaf_log_prior(mu)
            + self.sigma_leaf.ln()
            + 0.5 * (2.0 * std::f64::consts::PI).ln()
            + (p_grow_after / n_leaves_after as f64).ln()
            - (0.5 / prunable.len() as f64).ln()
            + Self::log_normal_kernel(u, s)
            - 2f64.ln();

        if self.rng.random::<f64>().ln() >= log_accept {
            return false;
        }
        let tree = &mut self.trees[j];
        tree.nodes[node].slot = Slot::Leaf { value: mu };
        tree.free.push(left);
        tree.free.push(right);
        for l in tree.leaf_of.iter_mut() {
            if *l == left || *l == right {
                *l = node;
            }
        }
        self.apply_shift(&left_rows, mu - mu_l);
        self.apply_shift(&right_rows, mu - mu_r);
        true
    }

    fn update_leaves(&mut self, j: usize, tuning: bool) {
        for leaf in self.trees[j].leaves() {
            let rows = self.trees[j].rows_in(leaf);
            let mu = self.trees[j].leaf_value(leaf);
            let step = self.leaf_step.step() * self.rng.sample::<f64, _>(StandardNormal);
            let proposed = mu + step;
            let log_ratio = self.delta_ll(&rows, step) + self.leaf_log_prior(proposed) - self.leaf_log_prior(mu);
            let accept_prob = log_ratio.min(0.0).exp();
            let accepted = self.rng.random::<f64>() < accept_prob;
            if accepted {
                self.trees[j].set_leaf_value(leaf, proposed);
                self.apply_shift(&rows, step);
            }
            if tuning {
                self.leaf_step.update(accept_prob);
            } else {
                self.leaf_tries += 1;
                self.leaf_accepts += accepted as usize;
            }
        }
    }

    fn sweep(&mut self, tuning: bool) {
        for j in 0..self.trees.len() {
            let grow = self.trees[j].is_root_only() || self.rng.random::<f64>() < 0.5;
            let accepted = if grow { self.grow(j) } else { self.prune(j) };
            if !tuning {
                self.structure_tries += 1;
                self.structure_accepts += accepted as usize;
            }
            self.update_leaves(j, tuning);
        }
        self.refresh();
    }

    fn forest(&self) -> Forest {
        Forest {
            trees: self.trees.iter().map(|t| t.to_node(0)).collect(),
        }
    }
}

pub(super) fn run_chain(data: &TrainData, cfg: &BartConfig, rng: RngStream) -> ChainOutput {
    let mut chain = Chain::new(data, cfg, rng);
    for _ in 0..cfg.tune {
        chain.sweep(true);
    }
    let n_rows = data.x.len();
    let mut p_draws = Vec::with_capacity(cfg.draws * n_rows);
    let mut forests = Vec::new();
    let mut snapshot_draws = Vec::new();
    let mut loglik = Vec::with_capacity(cfg.draws);
    for d in 0..cfg.draws {
        chain.sweep(false);
        p_draws.extend(chain.eta.iter().map(|&e| clamp_prob(logistic(e))));
        loglik.push(chain.ll.iter().sum());
        if d % cfg.snapshot_every == 0 {
            forests.push(chain.forest());
            snapshot_draws.push(d);
        }
    }
    let ratio = |a: usize, t: usize| if t == 0 { 0.0 } else { a as f64 / t as f64 };
    ChainOutput {
        p_draws,
        forests,
        snapshot_draws,
        loglik,
        leaf_acceptance: ratio(chain.leaf_accepts, chain.leaf_tries),
        structure_acceptance: ratio(chain.structure_accepts, chain.structure_tries),
    }
}

pub(super) fn assemble(cfg: &BartConfig, n_rows: usize, outputs: Vec<ChainOutput>) -> Result<RetentionPosterior, BartError> {
    let chains = outputs.len();
    let snapshots_per_chain = outputs[0].forests.len();
    let mut forests = Vec::with_capacity(chains * snapshots_per_chain);
    let mut snapshot_draws = Vec::new();
    let mut p_values = Vec::with_capacity(chains * cfg.draws * n_rows);
    let mut loglik = Vec::with_capacity(chains * cfg.draws);
    let mut leaf_acceptance = Vec::new();
    let mut structure_acceptance = Vec::new();
    for (c, out) in outputs.into_iter().enumerate() {
        forests.extend(out.forests);
        snapshot_draws.extend(out.snapshot_draws.iter().map(|d| c * cfg.draws + d));
        p_values.extend(out.p_draws);
        loglik.extend(out.loglik);
        leaf_acceptance.push(out.leaf_acceptance);
        structure_acceptance.push(out.structure_acceptance);
    }
    let mut loglik = ChainDraws::new(chains, cfg.draws, 1, loglik)?;
    loglik.tune_discarded = cfg.tune;
    loglik.acceptance = leaf_acceptance.clone();
    Ok(RetentionPosterior {
        config: cfg.clone(),
        chains,
        snapshots_per_chain,
        forests,
        snapshot_draws,
        p_draws: DrawMatrix::new(chains * cfg.draws, n_rows, p_values),
        loglik,
        leaf_acceptance,
        structure_acceptance,
    })
}
