//! Attribution methods and their aggregation.
//!
//! * [`treeshap`]: path-dependent TreeSHAP over a class's trees.
//! * [`gradient_shap`]: expected gradients against a background set.
//! * [`grad_cam`]: class activation maps from the last conv layer.
//! * [`brute_force_shapley`] and [`cover_weighted_shapley`]: exponential
//!   reference implementations of the Shapley definition.
//!
//! All SHAP-family attributions explain pre-softmax margins or logits.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::neural::FcnModel;
use crate::scalar::Scalar;
use crate::seed;
use crate::trees::{Node, Tree, TreeEnsemble};

/// Largest feature count the exponential references accept.
pub const MAX_EXACT_FEATURES: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Attribution<T: Scalar> {
    pub sample_id: String,
    pub class_index: usize,
    pub values: Vec<T>,
    pub base_value: T,
}

impl<T: Scalar> Attribution<T> {
    pub fn total(&self) -> T {
        self.base_value + self.values.iter().copied().sum::<T>()
    }
}

/// Exact Shapley values of a set function given on all `2^p` coalitions
/// (bit `i` of the index set means feature `i` is present).
pub fn shapley_from_coalitions<T: Scalar>(p: usize, value: &[T]) -> Vec<T> {
    assert_eq!(value.len(), 1 << p);
    let mut fact = vec![1.0f64; p + 1];
    for i in 1..=p {
        fact[i] = fact[i - 1] * i as f64;
    }
    let weight: Vec<T> = (0..p).map(|s| T::of(fact[s] * fact[p - s - 1] / fact[p])).collect();
    let mut phi = vec![T::zero(); p];
    for (i, phi_i) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        for s in 0..(1usize << p) {
            if s & bit == 0 {
                let size = s.count_ones() as usize;
                *phi_i = *phi_i + weight[size] * (value[s | bit] - value[s]);
            }
        }
    }
    phi
}

fn check_exact(p: usize) -> Result<()> {
    if p == 0 || p > MAX_EXACT_FEATURES {
        return Err(invalid(format!("exact Shapley enumeration needs 1..={MAX_EXACT_FEATURES} features, got {p}")));
    }
    Ok(())
}

/// Shapley values where a coalition `S` is worth the mean over the
/// background of `f` evaluated at `x` on `S` and the background elsewhere.
pub fn brute_force_shapley<T: Scalar>(
    f: impl Fn(&[T]) -> T + Sync,
    x: &[T],
    background: &[Vec<T>],
    class_index: usize,
) -> Result<Attribution<T>> {
    let p = x.len();
    check_exact(p)?;
    if background.is_empty() {
        return Err(invalid("background set is empty"));
    }
    if let Some(b) = background.iter().find(|b| b.len() != p) {
        return Err(Error::Dimension { expected: p, got: b.len() });
    }
    let nb = T::of_usize(background.len());
    let value: Vec<T> = (0..1usize << p)
        .into_par_iter()
        .map(|s| {
            let total: T = background
                .iter()
                .map(|b| {
                    let z: Vec<T> = (0..p).map(|i| if s >> i & 1 == 1 { x[i] } else { b[i] }).collect();
                    f(&z)
                })
                .sum();
            total / nb
        })
        .collect();
    Ok(Attribution {
        sample_id: String::new(),
        class_index,
        values: shapley_from_coalitions(p, &value),
        base_value: value[0],
    })
}

/// Expected output of one tree when only the features in `known` are
/// observed: unknown splits average their children weighted by cover.
pub fn cover_weighted_value<T: Scalar>(tree: &Tree<T>, x: &[T], known: &[bool]) -> T {
    fn go<T: Scalar>(t: &Tree<T>, i: usize, x: &[T], known: &[bool]) -> T {
        match t.nodes[i] {
            Node::Leaf { weight, .. } => weight,
            Node::Split { feature, threshold, left, right, cover, .. } => {
                if known[feature] {
                    go(t, if x[feature] < threshold { left } else { right }, x, known)
                } else {
                    let (cl, cr) = (t.nodes[left].cover(), t.nodes[right].cover());
                    (cl * go(t, left, x, known) + cr * go(t, right, x, known)) / cover
                }
            }
        }
    }
    go(tree, 0, x, known)
}

/// Exhaustive Shapley values of a class margin under the cover-weighted
/// conditional expectation used by path-dependent TreeSHAP.
pub fn cover_weighted_shapley<T: Scalar>(e: &TreeEnsemble<T>, x: &[T], class_index: usize) -> Result<Attribution<T>> {
    let p = e.n_features;
    check_exact(p)?;
    let value: Vec<T> = (0..1usize << p)
        .map(|s| {
            let known: Vec<bool> = (0..p).map(|i| s >> i & 1 == 1).collect();
            e.base_score + e.class_trees(class_index).map(|t| e.eta * cover_weighted_value(t, x, &known)).sum::<T>()
        })
        .collect();
    Ok(Attribution {
        sample_id: String::new(),
        class_index,
        values: shapley_from_coalitions(p, &value),
        base_value: value[0],
    })
}

#[derive(Clone, Copy)]
struct PathElem<T> {
    feature: Option<usize>,
    zero: T,
    one: T,
    weight: T,
}

fn extend<T: Scalar>(path: &mut Vec<PathElem<T>>, zero: T, one: T, feature: Option<usize>) {
    let d = path.len();
    path.push(PathElem { feature, zero, one, weight: if d == 0 { T::one() } else { T::zero() } });
    let dp1 = T::of_usize(d + 1);
    for i in (0..d).rev() {
        let w = path[i].weight;
        path[i + 1].weight = path[i + 1].weight + one * w * T::of_usize(i + 1) / dp1;
        path[i].weight = zero * w * T::of_usize(d - i) / dp1;
    }
}

fn unwind<T: Scalar>(path: &mut Vec<PathElem<T>>, index: usize) {
    let d = path.len() - 1;
    let PathElem { one, zero, .. } = path[index];
    let dp1 = T::of_usize(d + 1);
    let mut next = path[d].weight;
    for i in (0..d).rev() {
        if one != T::zero() {
            let tmp = path[i].weight;
            path[i].weight = next * dp1 / (T::of_usize(i + 1) * one);
            next = tmp - path[i].weight * zero * T::of_usize(d - i) / dp1;
        } else {
            path[i].weight = path[i].weight * dp1 / (zero * T::of_usize(d - i));
        }
    }
    for i in index..d {
        path[i].feature = path[i + 1].feature;
        path[i].zero = path[i + 1].zero;
        path[i].one = path[i + 1].one;
    }
    path.pop();
}

fn unwound_sum<T: Scalar>(path: &[PathElem<T>], index: usize) -> T {
    let d = path.len() - 1;
    let PathElem { one, zero, .. } = path[index];
    let dp1 = T::of_usize(d + 1);
    let mut next = path[d].weight;
    let mut total = T::zero();
    for i in (0..d).rev() {
        if one != T::zero() {
            let tmp = next * dp1 / (T::of_usize(i + 1) * one);
            total = total + tmp;
            next = path[i].weight - tmp * zero * T::of_usize(d - i) / dp1;
        } else if zero != T::zero() {
            total = total + path[i].weight / zero * dp1 / T::of_usize(d - i);
        }
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn tree_shap_recurse<T: Scalar>(
    tree: &Tree<T>,
    x: &[T],
    phi: &mut [T],
    scale: T,
    node: usize,
    mut path: Vec<PathElem<T>>,
    zero: T,
    one: T,
    feature: Option<usize>,
) {
    extend(&mut path, zero, one, feature);
    match tree.nodes[node] {
        Node::Leaf { weight, .. } => {
            for i in 1..path.len() {
                let w = unwound_sum(&path, i);
                let el = path[i];
                let f = el.feature.expect("non-root path element");
                phi[f] = phi[f] + scale * w * (el.one - el.zero) * weight;
            }
        }
        Node::Split { feature: f, threshold, left, right, cover, .. } => {
            let (hot, cold) = if x[f] < threshold { (left, right) } else { (right, left) };
            let (mut in_zero, mut in_one) = (T::one(), T::one());
            if let Some(k) = path.iter().position(|e| e.feature == Some(f)) {
                in_zero = path[k].zero;
                in_one = path[k].one;
                unwind(&mut path, k);
            }
            let hot_frac = tree.nodes[hot].cover() / cover;
            let cold_frac = tree.nodes[cold].cover() / cover;
            tree_shap_recurse(tree, x, phi, scale, hot, path.clone(), hot_frac * in_zero, in_one, Some(f));
            tree_shap_recurse(tree, x, phi, scale, cold, path, cold_frac * in_zero, T::zero(), Some(f));
        }
    }
}

fn check_covers<T: Scalar>(e: &TreeEnsemble<T>) -> Result<()> {
    for t in e.trees.iter().flatten() {
        for n in &t.nodes {
            let c = n.cover();
            if !(c > T::zero()) || !c.is_finite() {
                return Err(invalid("tree ensemble has missing or non-positive node covers"));
            }
        }
    }
    Ok(())
}

/// Path-dependent TreeSHAP attributions of one class margin.
pub fn treeshap<T: Scalar>(e: &TreeEnsemble<T>, x: &[T], class_index: usize) -> Result<Attribution<T>> {
    if x.len() != e.n_features {
        return Err(Error::Dimension { expected: e.n_features, got: x.len() });
    }
    if class_index >= e.n_classes {
        return Err(invalid(format!("class {class_index} out of range for {} classes", e.n_classes)));
    }
    check_covers(e)?;
    let mut phi = vec![T::zero(); x.len()];
    let none = vec![false; x.len()];
    let mut base = e.base_score;
    for tree in e.class_trees(class_index) {
        base = base + e.eta * cover_weighted_value(tree, x, &none);
        tree_shap_recurse(tree, x, &mut phi, e.eta, 0, Vec::new(), T::one(), T::one(), None);
    }
    Ok(Attribution { sample_id: String::new(), class_index, values: phi, base_value: base })
}

/// A model whose class scores can be differentiated with respect to the input.
pub trait Differentiable<T: Scalar>: Sync {
    fn output(&self, z: &[T], class: usize) -> Result<T>;
    fn gradient(&self, z: &[T], class: usize) -> Result<Vec<T>>;
}

impl<T: Scalar> Differentiable<T> for FcnModel<T> {
    fn output(&self, z: &[T], class: usize) -> Result<T> {
        let l = self.logits(z)?;
        l.get(class).copied().ok_or_else(|| invalid(format!("class {class} out of range")))
    }

    fn gradient(&self, z: &[T], class: usize) -> Result<Vec<T>> {
        self.class_input_gradient(z, class)
    }
}

/// Multiclass linear scores `w[class] . z + b[class]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel<T> {
    pub weights: Vec<Vec<T>>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Differentiable<T> for LinearModel<T> {
    fn output(&self, z: &[T], class: usize) -> Result<T> {
        let w = self.weights.get(class).ok_or_else(|| invalid("class out of range"))?;
        if w.len() != z.len() {
            return Err(Error::Dimension { expected: w.len(), got: z.len() });
        }
        Ok(self.bias[class] + w.iter().zip(z).map(|(&a, &b)| a * b).sum::<T>())
    }

    fn gradient(&self, z: &[T], class: usize) -> Result<Vec<T>> {
        let w = self.weights.get(class).ok_or_else(|| invalid("class out of range"))?;
        if w.len() != z.len() {
            return Err(Error::Dimension { expected: w.len(), got: z.len() });
        }
        Ok(w.clone())
    }
}

/// Expected-gradients attribution: the mean over `n_samples` draws of a
/// baseline `b` and `u ~ U(0, 1)` of `(x - b) * grad(b + u (x - b))`.
pub fn gradient_shap<T: Scalar, M: Differentiable<T>>(
    model: &M,
    x: &[T],
    background: &[Vec<T>],
    class_index: usize,
    n_samples: usize,
    seed: u64,
) -> Result<Attribution<T>> {
    if n_samples < 1 {
        return Err(invalid("gradient_shap needs at least one sample"));
    }
    if background.is_empty() {
        return Err(invalid("background set is empty"));
    }
    if let Some(b) = background.iter().find(|b| b.len() != x.len()) {
        return Err(Error::Dimension { expected: x.len(), got: b.len() });
    }
    let mut rng = seed::rng(seed);
    let draws: Vec<(usize, T)> =
        (0..n_samples).map(|_| (rng.random_range(0..background.len()), T::of(rng.random::<f64>()))).collect();
    let terms: Vec<Vec<T>> = draws
        .par_iter()
        .map(|&(bi, u)| {
            let b = &background[bi];
            let z: Vec<T> = x.iter().zip(b).map(|(&xi, &bi)| bi + u * (xi - bi)).collect();
            let g = model.gradient(&z, class_index)?;
            Ok(x.iter().zip(b).zip(g).map(|((&xi, &bi), gi)| (xi - bi) * gi).collect())
        })
        .collect::<Result<_>>()?;
    let mut phi = vec![T::zero(); x.len()];
    for t in terms {
        phi.iter_mut().zip(t).for_each(|(a, v)| *a = *a + v);
    }
    let n = T::of_usize(n_samples);
    phi.iter_mut().for_each(|v| *v = *v / n);
    let outputs: Vec<T> = background.par_iter().map(|b| model.output(b, class_index)).collect::<Result<_>>()?;
    let base = outputs.into_iter().sum::<T>() / T::of_usize(background.len());
    Ok(Attribution { sample_id: String::new(), class_index, values: phi, base_value: base })
}

/// `ReLU(sum_c alpha_c A[c, t])` with `alpha_c` the time-mean of the
/// gradient. Both maps are channel-major with `len` steps per channel.
pub fn grad_cam_map<T: Scalar>(activations: &[T], gradients: &[T], len: usize) -> Vec<T> {
    let channels = activations.len() / len;
    let inv = T::one() / T::of_usize(len);
    let mut map = vec![T::zero(); len];
    for c in 0..channels {
        let alpha = gradients[c * len..(c + 1) * len].iter().copied().sum::<T>() * inv;
        for (m, &a) in map.iter_mut().zip(&activations[c * len..(c + 1) * len]) {
            *m = *m + alpha * a;
        }
    }
    map.into_iter().map(|v| v.max(T::zero())).collect()
}

pub fn grad_cam<T: Scalar>(m: &FcnModel<T>, x: &[T], class_index: usize) -> Result<Attribution<T>> {
    if m.architecture.n_layers() == 0 {
        return Err(invalid("grad_cam needs at least one conv layer"));
    }
    let (fwd, g) = m.class_gradients(x, class_index)?;
    Ok(Attribution {
        sample_id: String::new(),
        class_index,
        values: grad_cam_map(fwd.last_activation(), &g.last_activation, fwd.len),
        base_value: T::zero(),
    })
}

fn check_same_len<T: Scalar>(attrs: &[&Attribution<T>]) -> Result<usize> {
    let p = attrs.first().ok_or_else(|| invalid("no attributions to aggregate"))?.values.len();
    if let Some(a) = attrs.iter().find(|a| a.values.len() != p) {
        return Err(Error::Dimension { expected: p, got: a.values.len() });
    }
    Ok(p)
}

fn mean_abs<T: Scalar>(attrs: &[&Attribution<T>], p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); p];
    for a in attrs {
        out.iter_mut().zip(&a.values).for_each(|(o, &v)| *o = *o + v.abs());
    }
    let n = T::of_usize(attrs.len());
    out.into_iter().map(|v| v / n).collect()
}

/// Mean absolute attribution per position.
pub fn aggregate_global<T: Scalar>(attrs: &[Attribution<T>]) -> Result<Vec<T>> {
    let refs: Vec<&Attribution<T>> = attrs.iter().collect();
    let p = check_same_len(&refs)?;
    Ok(mean_abs(&refs, p))
}

/// Absolute attributions of the members of cluster `c` and their mean.
pub fn aggregate_cluster<T: Scalar>(
    attrs: &[Attribution<T>],
    labels: &[usize],
    c: usize,
) -> Result<(Vec<Vec<T>>, Vec<T>)> {
    if attrs.len() != labels.len() {
        return Err(invalid(format!("{} attributions for {} labels", attrs.len(), labels.len())));
    }
    let members: Vec<&Attribution<T>> = attrs.iter().zip(labels).filter(|(_, &l)| l == c).map(|(a, _)| a).collect();
    if members.is_empty() {
        return Err(invalid(format!("cluster {c} has no members")));
    }
    let p = check_same_len(&members)?;
    let curves = members.iter().map(|a| a.values.iter().map(|v| v.abs()).collect()).collect();
    Ok((curves, mean_abs(&members, p)))
}

/// Means of consecutive disjoint windows; the last window may be shorter.
pub fn window_means<T: Scalar>(values: &[T], window: usize) -> Vec<T> {
    let w = window.max(1);
    values.chunks(w).map(|c| c.iter().copied().sum::<T>() / T::of_usize(c.len())).collect()
}

/// Replaces each value by the mean of its window.
pub fn window_average<T: Scalar>(values: &[T], window: usize) -> Vec<T> {
    let w = window.max(1);
    values
        .chunks(w)
        .flat_map(|c| {
            let m = c.iter().copied().sum::<T>() / T::of_usize(c.len());
            std::iter::repeat_n(m, c.len())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub spearman: f64,
    /// False when either vector is constant and the correlation is undefined
    /// (reported as 0).
    pub spearman_defined: bool,
    pub topk_jaccard: f64,
}

fn average_ranks<T: Scalar>(v: &[T]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).expect("finite importances"));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Indices of the `k` largest values; ties go to the lower index.
pub fn top_k<T: Scalar>(v: &[T], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).expect("finite importances").then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub fn rank_agreement<T: Scalar>(a: &[T], b: &[T], k: usize) -> Result<Agreement> {
    let p = a.len();
    if p != b.len() {
        return Err(Error::Dimension { expected: p, got: b.len() });
    }
    if p < 2 || k < 1 || k > p {
        return Err(invalid(format!("rank agreement needs p >= 2 and 1 <= k <= p (p = {p}, k = {k})")));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let m = (p as f64 + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - m) * (y - m);
        saa += (x - m) * (x - m);
        sbb += (y - m) * (y - m);
    }
    let defined = saa > 0.0 && sbb > 0.0;
    let spearman = if defined { sab / (saa * sbb).sqrt() } else { 0.0 };
    let ta = top_k(a, k);
    let tb = top_k(b, k);
    let inter = ta.iter().filter(|i| tb.contains(i)).count();
    let union = 2 * k - inter;
    Ok(Agreement { spearman, spearman_defined: defined, topk_jaccard: inter as f64 / union as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    TreeShap,
    GradientShap,
    GradCam,
    #[serde(rename = "tree_gain")]
    TreeGain,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::TreeShap => "treeshap",
            Method::GradientShap => "gradientshap",
            Method::GradCam => "gradcam",
            Method::TreeGain => "tree_gain",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Method::TreeShap, Method::GradientShap, Method::GradCam, Method::TreeGain]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown explanation method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Windowed<T: Scalar> {
    pub window: usize,
    pub global: Vec<T>,
    pub per_cluster: BTreeMap<usize, Vec<T>>,
}

/// Attributions of one method over a set of samples plus their aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ExplanationSet<T: Scalar> {
    pub method: Method,
    pub position_names: Vec<String>,
    pub time_len: usize,
    pub attributions: Vec<Attribution<T>>,
    pub global: Vec<T>,
    pub per_cluster: BTreeMap<usize, Vec<T>>,
    pub windowed: Option<Windowed<T>>,
}

impl<T: Scalar> ExplanationSet<T> {
    /// Aggregates per-sample attributions; `labels` are the cluster labels of
    /// the explained samples. Window means cover the time segment only.
    pub fn build(
        method: Method,
        position_names: Vec<String>,
        time_len: usize,
        attributions: Vec<Attribution<T>>,
        labels: &[usize],
        window: Option<usize>,
    ) -> Result<Self> {
        let global = aggregate_global(&attributions)?;
        if global.len() != position_names.len() || time_len > global.len() {
            return Err(Error::Dimension { expected: position_names.len(), got: global.len() });
        }
        let mut per_cluster = BTreeMap::new();
        let mut clusters: Vec<usize> = labels.to_vec();
        clusters.sort_unstable();
        clusters.dedup();
        for c in clusters {
            per_cluster.insert(c, aggregate_cluster(&attributions, labels, c)?.1);
        }
        let mut set = Self { method, position_names, time_len, attributions, global, per_cluster, windowed: None };
        if let Some(w) = window {
            set.windowed = Some(set.window(w));
        }
        Ok(set)
    }

    /// A set carrying only a global importance vector (e.g. tree gain).
    pub fn from_global(method: Method, position_names: Vec<String>, time_len: usize, global: Vec<T>) -> Result<Self> {
        if global.len() != position_names.len() {
            return Err(Error::Dimension { expected: position_names.len(), got: global.len() });
        }
        Ok(Self {
            method,
            position_names,
            time_len,
            attributions: Vec::new(),
            global,
            per_cluster: BTreeMap::new(),
            windowed: None,
        })
    }

    fn window(&self, w: usize) -> Windowed<T> {
        let t = self.time_len;
        Windowed {
            window: w,
            global: window_means(&self.global[..t], w),
            per_cluster: self.per_cluster.iter().map(|(&c, v)| (c, window_means(&v[..t], w))).collect(),
        }
    }

    /// `position,global,cluster_<c>...` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = vec!["position".to_string(), "global".to_string()];
        header.extend(self.per_cluster.keys().map(|c| format!("cluster_{c}")));
        writeln!(w, "{}", header.join(","))?;
        for (i, name) in self.position_names.iter().enumerate() {
            let mut row = vec![name.clone(), self.global[i].to_string()];
            row.extend(self.per_cluster.values().map(|v| v[i].to_string()));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// `window,start,end,global,cluster_<c>...` rows over the time segment.
    pub fn write_windowed_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let Some(win) = &self.windowed else {
            return Err(invalid("explanation set has no windowed aggregates"));
        };
        let mut header = vec!["window".to_string(), "start".to_string(), "end".to_string(), "global".to_string()];
        header.extend(win.per_cluster.keys().map(|c| format!("cluster_{c}")));
        writeln!(w, "{}", header.join(","))?;
        for (j, g) in win.global.iter().enumerate() {
            let start = j * win.window;
            let end = (start + win.window).min(self.time_len);
            let mut row = vec![j.to_string(), start.to_string(), end.to_string(), g.to_string()];
            row.extend(win.per_cluster.values().map(|v| v[j].to_string()));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// `id,class,base_value,<positions>` rows, one per explained sample.
    pub fn write_samples_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "id,class,base_value,{}", self.position_names.join(","))?;
        for a in &self.attributions {
            let vals: Vec<String> = a.values.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{},{},{}", a.sample_id, a.class_index, a.base_value, vals.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::FcnArchitecture;
    use proptest::prelude::*;

    #[test]
    fn brute_force_examples() {
        let bg = vec![vec![0.0, 0.0]];
        let a = brute_force_shapley(|z: &[f64]| z[0] + 2.0 * z[1], &[1.0, 1.0], &bg, 0).unwrap();
        assert_eq!(a.values, vec![1.0, 2.0]);
        let b = brute_force_shapley(|z: &[f64]| z[0] * z[1], &[1.0, 1.0], &bg, 0).unwrap();
        assert_eq!(b.values, vec![0.5, 0.5]);
        assert_eq!(b.total(), 1.0);
        assert!(brute_force_shapley(|z: &[f64]| z[0], &[0.0; 13], &[vec![0.0; 13]], 0).is_err());
        assert!(brute_force_shapley(|z: &[f64]| z[0], &[0.0], &[], 0).is_err());
    }

    fn leaf_ensemble(w: f64) -> TreeEnsemble<f64> {
        TreeEnsemble {
            n_classes: 2,
            n_features: 4,
            trees: vec![vec![Tree::leaf(w, 3.0), Tree::leaf(-w, 3.0)]],
            base_score: 0.0,
            eta: 0.3,
            lambda: 1.0,
            gamma: 0.0,
            max_depth: 0,
            train_loss: vec![],
        }
    }

    #[test]
    fn treeshap_single_leaf() {
        let e = leaf_ensemble(2.0);
        let a = treeshap(&e, &[1.0, 2.0, 3.0, 4.0], 0).unwrap();
        assert_eq!(a.values, vec![0.0; 4]);
        assert!((a.base_value - 0.6).abs() < 1e-15);
    }

    #[test]
    fn treeshap_single_split_by_hand() {
        let mut e = leaf_ensemble(0.0);
        e.trees[0][0] = Tree {
            nodes: vec![
                Node::Split { feature: 3, threshold: 0.5, left: 1, right: 2, cover: 4.0, gain: 1.0 },
                Node::Leaf { weight: 1.0, cover: 1.0 },
                Node::Leaf { weight: -1.0, cover: 3.0 },
            ],
        };
        // E = (1 - 3) / 4 = -0.5; x goes left (+1); phi_3 = eta * (1 - (-0.5)).
        let a = treeshap(&e, &[9.0, 9.0, 9.0, 0.0], 0).unwrap();
        assert!((a.values[3] - 0.3 * 1.5).abs() < 1e-15);
        assert_eq!(&a.values[..3], &[0.0; 3]);
        assert!((a.base_value + 0.15).abs() < 1e-15);
        e.trees[0][0].nodes[1] = Node::Leaf { weight: 1.0, cover: 0.0 };
        assert!(treeshap(&e, &[0.0; 4], 0).is_err());
    }

    #[test]
    fn gradient_shap_linear_is_exact() {
        let m = LinearModel { weights: vec![vec![1.0, -2.0, 0.5]], bias: vec![0.3] };
        let x = [1.0, 2.0, 3.0];
        let b = vec![vec![0.5, -1.0, 1.0]];
        for n in [1, 7] {
            let a = gradient_shap(&m, &x, &b, 0, n, 11).unwrap();
            assert_eq!(a.values, vec![0.5, -6.0, 1.0]);
        }
        let same = gradient_shap(&m, &x, &[x.to_vec()], 0, 5, 0).unwrap();
        assert_eq!(same.values, vec![0.0; 3]);
        assert!(gradient_shap(&m, &x, &b, 0, 0, 0).is_err());
    }

    #[test]
    fn grad_cam_examples() {
        assert_eq!(grad_cam_map(&[0.0, 1.0, 0.0], &[1.0, 1.0, 1.0], 3), vec![0.0, 1.0, 0.0]);
        assert_eq!(grad_cam_map(&[0.0, 1.0, 0.0], &[0.0; 3], 3), vec![0.0; 3]);
        assert_eq!(
            grad_cam_map(&[1.0, 2.0, 0.5, 0.0, 3.0, 1.0], &[-1.0, -1.0, -1.0, -0.5, -0.2, -0.1], 3),
            vec![0.0; 3]
        );
        let m = FcnModel::<f64>::init(FcnArchitecture::new(2, 4, 3).unwrap(), 2);
        let a = grad_cam(&m, &[0.1, 0.5, -0.3, 0.2, 0.9, 1.0, -1.0, 0.0, 0.4, 0.2], 1).unwrap();
        assert_eq!(a.values.len(), 10);
        assert!(a.values.iter().all(|&v| v >= 0.0));
    }

    fn attr(values: Vec<f64>) -> Attribution<f64> {
        Attribution { sample_id: String::new(), class_index: 0, values, base_value: 0.0 }
    }

    #[test]
    fn aggregation_examples() {
        assert_eq!(aggregate_global(&[attr(vec![-1.0, 2.0])]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(aggregate_global(&[attr(vec![1.0]), attr(vec![-1.0])]).unwrap(), vec![1.0]);
        assert_eq!(aggregate_global(&[attr(vec![0.0; 3]), attr(vec![0.0; 3])]).unwrap(), vec![0.0; 3]);
        assert!(aggregate_global(&[attr(vec![0.0; 3]), attr(vec![0.0; 2])]).is_err());
        let v = vec![0.5, -2.0];
        let (curves, mean) =
            aggregate_cluster(&[attr(v.clone()), attr(vec![-0.5, 2.0]), attr(vec![9.0, 9.0])], &[1, 1, 0], 1).unwrap();
        assert_eq!(mean, vec![0.5, 2.0]);
        assert_eq!(curves.len(), 2);
        assert!(aggregate_cluster(&[attr(v)], &[0], 3).is_err());
    }

    #[test]
    fn windows() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0, 10.0, 10.0, 10.0, 10.0, 10.0];
        assert_eq!(window_average(&v, 5), vec![3.0, 3.0, 3.0, 3.0, 3.0, 10.0, 10.0, 10.0, 10.0, 10.0]);
        assert_eq!(window_average(&v, 1), v.to_vec());
        assert_eq!(window_means(&[1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 4.0], 5), vec![1.0, 3.0]);
    }

    #[test]
    fn agreement_examples() {
        let a = [0.1, 0.5, 0.3, 0.9];
        let same = rank_agreement(&a, &a, 2).unwrap();
        assert_eq!((same.spearman, same.topk_jaccard), (1.0, 1.0));
        let rev = [0.9, 0.3, 0.5, 0.1];
        assert_eq!(rank_agreement(&a, &rev, 2).unwrap().spearman, -1.0);
        let x = [0.0, 3.0, 2.0, 1.0, 0.0];
        let y = [0.0, 0.0, 3.0, 2.0, 1.0];
        assert_eq!(rank_agreement(&x, &y, 3).unwrap().topk_jaccard, 0.5);
        let flat = rank_agreement(&a, &[1.0; 4], 1).unwrap();
        assert!(!flat.spearman_defined);
        assert_eq!(flat.spearman, 0.0);
    }

    #[test]
    fn explanation_set_csv() {
        let attrs = vec![attr(vec![1.0, -1.0, 2.0, 0.5]), attr(vec![3.0, 1.0, 0.0, -0.5])];
        let names = vec!["t0".into(), "t1".into(), "t2".into(), "mean".into()];
        let s = ExplanationSet::build(Method::GradientShap, names, 3, attrs, &[0, 1], Some(2)).unwrap();
        assert_eq!(s.global, vec![2.0, 1.0, 1.0, 0.5]);
        let win = s.windowed.as_ref().unwrap();
        assert_eq!(win.global, vec![1.5, 1.0]);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "position,global,cluster_0,cluster_1");
        assert_eq!(text.lines().nth(4).unwrap(), "mean,0.5,0.5,0.5");
        let mut buf = Vec::new();
        s.write_windowed_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().nth(2).unwrap(), "1,2,3,1,2,0");
    }

    proptest! {
        #[test]
        fn window_preserves_mean(v in prop::collection::vec(-5.0f64..5.0, 1..8).prop_map(|v| {
            let mut out = Vec::new();
            for x in v { out.extend([x, x * 0.5, -x, 1.0, x * x]); }
            out
        })) {
            let a: f64 = v.iter().sum::<f64>() / v.len() as f64;
            let w = window_average(&v, 5);
            let b: f64 = w.iter().sum::<f64>() / w.len() as f64;
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn spearman_scale_invariant(v in prop::collection::vec(-5.0f64..5.0, 2..20), c in 0.01f64..100.0) {
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            let r = rank_agreement(&v, &scaled, 1).unwrap();
            if r.spearman_defined {
                prop_assert!((r.spearman - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn cluster_mean_permutation_invariant(rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..8)) {
            let attrs: Vec<Attribution<f64>> = rows.iter().cloned().map(attr).collect();
            let mut rev = attrs.clone();
            rev.reverse();
            let labels = vec![0; attrs.len()];
            let a = aggregate_cluster(&attrs, &labels, 0).unwrap().1;
            let b = aggregate_cluster(&rev, &labels, 0).unwrap().1;
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
                prop_assert!(*x >= 0.0);
            }
        }
    }
}
