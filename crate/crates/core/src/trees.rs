//! Multiclass gradient-boosted regression trees with a second-order softmax
//! objective and exact greedy split search.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::{softmax, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", bound = "")]
pub enum Node<T: Scalar> {
    Split { feature: usize, threshold: T, left: usize, right: usize, cover: T, gain: T },
    Leaf { weight: T, cover: T },
}

impl<T: Scalar> Node<T> {
    pub fn cover(&self) -> T {
        match *self {
            Node::Split { cover, .. } | Node::Leaf { cover, .. } => cover,
        }
    }
}

/// A regression tree stored as a flat node list; node 0 is the root.
/// Samples with `x[feature] < threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Tree<T: Scalar> {
    pub nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tree<T> {
    pub fn leaf(weight: T, cover: T) -> Self {
        Self { nodes: vec![Node::Leaf { weight, cover }] }
    }

    pub fn leaf_index(&self, x: &[T]) -> usize {
        let mut i = 0;
        while let Node::Split { feature, threshold, left, right, .. } = self.nodes[i] {
            i = if x[feature] < threshold { left } else { right };
        }
        i
    }

    pub fn predict(&self, x: &[T]) -> T {
        match self.nodes[self.leaf_index(x)] {
            Node::Leaf { weight, .. } => weight,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn depth(&self) -> usize {
        fn go<T: Scalar>(t: &Tree<T>, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    pub fn n_splits(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Split { .. })).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GbtParams<T: Scalar> {
    pub eta: T,
    pub rounds: usize,
    pub lambda: T,
    pub gamma: T,
    pub max_depth: usize,
}

impl<T: Scalar> Default for GbtParams<T> {
    fn default() -> Self {
        Self { eta: T::of(0.3), rounds: 100, lambda: T::one(), gamma: T::zero(), max_depth: 6 }
    }
}

impl<T: Scalar> GbtParams<T> {
    pub fn with_gamma_depth(gamma: T, max_depth: usize) -> Self {
        Self { gamma, max_depth, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eta > T::zero()) || !(self.lambda >= T::zero()) || !(self.gamma >= T::zero()) {
            return Err(invalid("eta must be positive, lambda and gamma non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TreeEnsemble<T: Scalar> {
    pub n_classes: usize,
    pub n_features: usize,
    /// `trees[round][class]`.
    pub trees: Vec<Vec<Tree<T>>>,
    pub base_score: T,
    pub eta: T,
    pub lambda: T,
    pub gamma: T,
    pub max_depth: usize,
    /// Mean training cross-entropy before the first round and after each round.
    pub train_loss: Vec<T>,
}

impl<T: Scalar> TreeEnsemble<T> {
    pub fn rounds(&self) -> usize {
        self.trees.len()
    }

    fn check(&self, x: &[T]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::Dimension { expected: self.n_features, got: x.len() });
        }
        Ok(())
    }

    fn margins_unchecked(&self, x: &[T]) -> Vec<T> {
        let mut m = vec![self.base_score; self.n_classes];
        for round in &self.trees {
            for (k, tree) in round.iter().enumerate() {
                m[k] = m[k] + self.eta * tree.predict(x);
            }
        }
        m
    }

    pub fn margins(&self, x: &[T]) -> Result<Vec<T>> {
        self.check(x)?;
        Ok(self.margins_unchecked(x))
    }

    pub fn predict_proba(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(softmax(&self.margins(x)?))
    }

    pub fn predict(&self, x: &[T]) -> Result<usize> {
        Ok(crate::scalar::argmax(&self.margins(x)?))
    }

    /// Trees of one class across all rounds.
    pub fn class_trees(&self, class: usize) -> impl Iterator<Item = &Tree<T>> {
        self.trees.iter().map(move |r| &r[class])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let e: Self = serde_json::from_str(s)?;
        if e.trees.iter().any(|r| r.len() != e.n_classes) {
            return Err(Error::Format("every round needs one tree per class".into()));
        }
        Ok(e)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Gradient and hessian of softmax cross-entropy with respect to the margins.
pub fn softmax_grad_hess<T: Scalar>(margins: &[T], y: usize) -> (Vec<T>, Vec<T>) {
    let p = softmax(margins);
    let g = p.iter().enumerate().map(|(k, &pk)| if k == y { pk - T::one() } else { pk }).collect();
    let h = p.iter().map(|&pk| pk * (T::one() - pk)).collect();
    (g, h)
}

pub fn split_gain<T: Scalar>(gl: T, hl: T, gr: T, hr: T, lambda: T, gamma: T) -> T {
    let score = |g: T, h: T| g * g / (h + lambda);
    T::half() * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr)) - gamma
}

fn cross_entropy<T: Scalar>(margins: &[Vec<T>], y: &[usize]) -> T {
    let total: T = margins
        .iter()
        .zip(y)
        .map(|(m, &c)| {
            let mx = m.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = mx + m.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
            lse - m[c]
        })
        .sum();
    total / T::of_usize(y.len())
}

struct Builder<'a, T: Scalar> {
    x: &'a [Vec<T>],
    g: Vec<T>,
    h: Vec<T>,
    params: &'a GbtParams<T>,
    nodes: Vec<Node<T>>,
}

struct BestSplit<T> {
    feature: usize,
    threshold: T,
    gain: T,
}

impl<T: Scalar> Builder<'_, T> {
    fn best_split(&self, idx: &[usize], g_tot: T, h_tot: T) -> Option<BestSplit<T>> {
        let p = self.params;
        let mut best: Option<BestSplit<T>> = None;
        let mut order = idx.to_vec();
        for f in 0..self.x[0].len() {
            order.sort_by(|&a, &b| self.x[a][f].partial_cmp(&self.x[b][f]).expect("finite inputs"));
            let (mut gl, mut hl) = (T::zero(), T::zero());
            for w in 0..order.len() - 1 {
                let i = order[w];
                gl = gl + self.g[i];
                hl = hl + self.h[i];
                let (a, b) = (self.x[i][f], self.x[order[w + 1]][f]);
                if !(a < b) {
                    continue;
                }
                let gain = split_gain(gl, hl, g_tot - gl, h_tot - hl, p.lambda, p.gamma);
                if gain > T::zero() && best.as_ref().is_none_or(|s| gain > s.gain) {
                    best = Some(BestSplit { feature: f, threshold: (a + b) * T::half(), gain });
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: &[usize], depth: usize) -> usize {
        let g_tot: T = idx.iter().map(|&i| self.g[i]).sum();
        let h_tot: T = idx.iter().map(|&i| self.h[i]).sum();
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { weight: -g_tot / (h_tot + self.params.lambda), cover: h_tot });
        if depth >= self.params.max_depth || idx.len() < 2 {
            return at;
        }
        let Some(s) = self.best_split(idx, g_tot, h_tot) else {
            return at;
        };
        let (li, ri): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][s.feature] < s.threshold);
        let left = self.grow(&li, depth + 1);
        let right = self.grow(&ri, depth + 1);
        let cover = self.nodes[left].cover() + self.nodes[right].cover();
        self.nodes[at] = Node::Split { feature: s.feature, threshold: s.threshold, left, right, cover, gain: s.gain };
        at
    }
}

fn build_tree<T: Scalar>(x: &[Vec<T>], g: Vec<T>, h: Vec<T>, params: &GbtParams<T>) -> Tree<T> {
    let mut b = Builder { x, g, h, params, nodes: Vec::new() };
    let idx: Vec<usize> = (0..x.len()).collect();
    b.grow(&idx, 0);
    Tree { nodes: b.nodes }
}

/// Fits a boosted ensemble. Labels are class indices `0..K` with `K = max(y) + 1`.
/// Training is deterministic; `_seed` is accepted for interface parity with
/// the other classifiers (there is no row or column subsampling).
pub fn fit_gbt<T: Scalar>(x: &[Vec<T>], y: &[usize], params: &GbtParams<T>, _seed: u64) -> Result<TreeEnsemble<T>> {
    params.validate()?;
    if x.is_empty() || x.len() != y.len() {
        return Err(invalid(format!("{} inputs for {} labels", x.len(), y.len())));
    }
    let p = x[0].len();
    if p == 0 {
        return Err(invalid("inputs need at least one feature"));
    }
    for row in x {
        if row.len() != p {
            return Err(Error::Dimension { expected: p, got: row.len() });
        }
        if row.iter().any(|v| v.is_nan()) {
            return Err(invalid("NaN in training input"));
        }
    }
    let n_classes = y.iter().max().copied().unwrap_or(0) + 1;
    let first = y[0];
    if y.iter().all(|&c| c == first) {
        return Err(invalid("training labels contain a single class"));
    }

    let floor = T::of(1e-16);
    let mut margins = vec![vec![T::zero(); n_classes]; x.len()];
    let mut trees = Vec::with_capacity(params.rounds);
    let mut train_loss = vec![cross_entropy(&margins, y)];
    for _ in 0..params.rounds {
        let gh: Vec<(Vec<T>, Vec<T>)> = margins.iter().zip(y).map(|(m, &c)| softmax_grad_hess(m, c)).collect();
        let round: Vec<Tree<T>> = (0..n_classes)
            .into_par_iter()
            .map(|k| {
                let g = gh.iter().map(|(g, _)| g[k]).collect();
                let h = gh.iter().map(|(_, h)| h[k].max(floor)).collect();
                build_tree(x, g, h, params)
            })
            .collect();
        for (row, m) in x.iter().zip(margins.iter_mut()) {
            for (k, tree) in round.iter().enumerate() {
                m[k] = m[k] + params.eta * tree.predict(row);
            }
        }
        trees.push(round);
        train_loss.push(cross_entropy(&margins, y));
    }
    Ok(TreeEnsemble {
        n_classes,
        n_features: p,
        trees,
        base_score: T::zero(),
        eta: params.eta,
        lambda: params.lambda,
        gamma: params.gamma,
        max_depth: params.max_depth,
        train_loss,
    })
}

/// Mean split gain per feature over every split node in the ensemble.
pub fn gain_importance<T: Scalar>(e: &TreeEnsemble<T>) -> Vec<T> {
    let mut sum = vec![T::zero(); e.n_features];
    let mut count = vec![0usize; e.n_features];
    for node in e.trees.iter().flatten().flat_map(|t| &t.nodes) {
        if let Node::Split { feature, gain, .. } = *node {
            sum[feature] = sum[feature] + gain;
            count[feature] += 1;
        }
    }
    sum.into_iter().zip(count).map(|(s, c)| if c == 0 { T::zero() } else { s / T::of_usize(c) }).collect()
}
