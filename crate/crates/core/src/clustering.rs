//! K-means and PAM k-medoids, internal validity indices and elbow-based k
//! selection.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::TimeSeriesCollection;
use crate::distance::{DistanceMatrix, Metric};
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", bound = "")]
pub enum Centers<T: Scalar> {
    /// Centroids, one row of length T per cluster.
    Means(Vec<Vec<T>>),
    /// Medoids as indices into the clustered collection, with their ids.
    Medoids { indices: Vec<usize>, ids: Vec<String> },
}

/// Outcome of a clustering fit.
///
/// `inertia` is the within-cluster sum of squared Euclidean distances for
/// k-means and the total dissimilarity to the medoids for PAM. `cost_trace`
/// records the objective after initialisation and after every iteration
/// (k-means) or accepted swap (PAM).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ClusteringResult<T: Scalar> {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub centers: Centers<T>,
    pub inertia: T,
    pub metric: Metric<T>,
    pub iterations: usize,
    pub cost_trace: Vec<T>,
}

impl<T: Scalar> ClusteringResult<T> {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    /// Writes `id,cluster` rows.
    pub fn write_assignments_csv<W: Write>(&self, ids: &[String], mut w: W) -> Result<()> {
        if ids.len() != self.assignments.len() {
            return Err(Error::Dimension { expected: self.assignments.len(), got: ids.len() });
        }
        writeln!(w, "id,cluster")?;
        for (id, a) in ids.iter().zip(&self.assignments) {
            writeln!(w, "{id},{a}")?;
        }
        Ok(())
    }
}

#[inline]
fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Nearest center and its squared distance; ties go to the lowest index.
fn nearest<T: Scalar>(x: &[T], centers: &[Vec<T>]) -> (usize, T) {
    let mut best = (0, sq_dist(x, &centers[0]));
    for (j, c) in centers.iter().enumerate().skip(1) {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn wcss<T: Scalar>(rows: &[Vec<T>], assign: &[usize], centers: &[Vec<T>]) -> T {
    rows.iter().zip(assign).map(|(x, &a)| sq_dist(x, &centers[a])).sum()
}

fn kmeanspp_init<T: Scalar>(rows: &[Vec<T>], k: usize, seed: u64) -> Vec<Vec<T>> {
    let n = rows.len();
    let mut rng = seed::rng(seed);
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = rows.iter().map(|x| sq_dist(x, &rows[chosen[0]]).f64()).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > r {
                    break;
                }
            }
            pick.expect("positive total weight")
        } else {
            // Every point coincides with a chosen center.
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        for (i, x) in rows.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, &rows[next]).f64());
        }
    }
    chosen.into_iter().map(|i| rows[i].clone()).collect()
}

/// Lloyd's k-means with k-means++ seeding over Euclidean distance.
///
/// Empty clusters are repaired by moving the point farthest from its center
/// into them. Iteration stops once assignments are stable or `max_iter` is
/// reached.
pub fn kmeans_fit<T: Scalar>(
    c: &TimeSeriesCollection<T>,
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<ClusteringResult<T>> {
    let n = c.len();
    if k < 1 || k > n {
        return Err(invalid(format!("k = {k} must lie in [1, {n}]")));
    }
    if !c.is_fully_observed() {
        return Err(invalid("k-means needs a fully observed collection"));
    }
    let rows = c.values();
    let t_len = c.series_len();
    let mut centers = kmeanspp_init(rows, k, seed);
    // On exact ties a point keeps its current cluster, so a repaired cluster
    // made of duplicates is not emptied again.
    let reassign = |centers: &[Vec<T>], prev: &[usize]| -> Vec<usize> {
        rows.par_iter()
            .zip(prev)
            .map(|(x, &p)| {
                let (j, d) = nearest(x, centers);
                if sq_dist(x, &centers[p]) <= d {
                    p
                } else {
                    j
                }
            })
            .collect()
    };
    let mut assign: Vec<usize> = rows.par_iter().map(|x| nearest(x, &centers).0).collect();
    let mut trace = vec![wcss(rows, &assign, &centers)];
    let mut iterations = 0;
    while iterations < max_iter.max(1) {
        iterations += 1;
        let mut sums = vec![vec![T::zero(); t_len]; k];
        let mut counts = vec![0usize; k];
        for (x, &a) in rows.iter().zip(&assign) {
            counts[a] += 1;
            for (s, &v) in sums[a].iter_mut().zip(x) {
                *s = *s + v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let inv = T::one() / T::of_usize(counts[j]);
                centers[j] = sums[j].iter().map(|&s| s * inv).collect();
            }
        }
        let mut repaired = false;
        for e in 0..k {
            if counts[e] > 0 {
                continue;
            }
            repaired = true;
            let far = (0..n)
                .filter(|&i| counts[assign[i]] > 1)
                .map(|i| (i, sq_dist(&rows[i], &centers[assign[i]])))
                .fold(None::<(usize, T)>, |best, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                })
                .expect("k <= n leaves a cluster with two members")
                .0;
            counts[assign[far]] -= 1;
            counts[e] = 1;
            assign[far] = e;
            centers[e] = rows[far].clone();
        }
        let next = reassign(&centers, &assign);
        trace.push(wcss(rows, &next, &centers));
        let stable = next == assign && !repaired;
        assign = next;
        if stable {
            break;
        }
    }
    let inertia = wcss(rows, &assign, &centers);
    Ok(ClusteringResult {
        k,
        assignments: assign,
        centers: Centers::Means(centers),
        inertia,
        metric: Metric::Euclidean,
        iterations,
        cost_trace: trace,
    })
}

struct Nearest<T> {
    slot: usize,
    near: T,
    second: T,
}

fn nearest_medoids<T: Scalar>(d: &DistanceMatrix<T>, medoids: &[usize]) -> Vec<Nearest<T>> {
    (0..d.len())
        .map(|i| {
            let mut r = Nearest { slot: 0, near: T::infinity(), second: T::infinity() };
            for (s, &m) in medoids.iter().enumerate() {
                let v = d.get(i, m);
                if v < r.near {
                    r.second = r.near;
                    r.near = v;
                    r.slot = s;
                } else if v < r.second {
                    r.second = v;
                }
            }
            r
        })
        .collect()
}

fn medoid_cost<T: Scalar>(d: &DistanceMatrix<T>, medoids: &[usize]) -> T {
    (0..d.len()).map(|i| medoids.iter().map(|&m| d.get(i, m)).fold(T::infinity(), T::min)).sum()
}

/// Partitioning around medoids: greedy BUILD then steepest-descent SWAP over
/// an arbitrary dissimilarity matrix.
pub fn pam_fit<T: Scalar>(d: &DistanceMatrix<T>, k: usize) -> Result<ClusteringResult<T>> {
    let n = d.len();
    if k < 1 || k > n {
        return Err(invalid(format!("k = {k} must lie in [1, {n}]")));
    }

    // BUILD
    let mut medoids: Vec<usize> = Vec::with_capacity(k);
    let mut near = vec![T::infinity(); n];
    for _ in 0..k {
        let mut best: Option<(usize, T)> = None;
        for cand in 0..n {
            if medoids.contains(&cand) {
                continue;
            }
            let cost: T = (0..n).map(|i| near[i].min(d.get(i, cand))).sum();
            if best.is_none_or(|(_, b)| cost < b) {
                best = Some((cand, cost));
            }
        }
        let (m, _) = best.expect("k <= n");
        medoids.push(m);
        for (i, v) in near.iter_mut().enumerate() {
            *v = v.min(d.get(i, m));
        }
    }

    // SWAP
    let mut cost = medoid_cost(d, &medoids);
    let mut trace = vec![cost];
    let mut iterations = 0;
    loop {
        let info = nearest_medoids(d, &medoids);
        let candidates: Vec<(usize, usize)> =
            (0..k).flat_map(|s| (0..n).map(move |o| (s, o))).filter(|&(_, o)| !medoids.contains(&o)).collect();
        let deltas: Vec<T> = candidates
            .par_iter()
            .map(|&(s, o)| {
                info.iter()
                    .enumerate()
                    .map(|(i, r)| {
                        let dio = d.get(i, o);
                        let now = if r.slot == s { r.second.min(dio) } else { r.near.min(dio) };
                        now - r.near
                    })
                    .sum()
            })
            .collect();
        let mut best: Option<(usize, T)> = None;
        for (idx, &delta) in deltas.iter().enumerate() {
            if delta < T::zero() && best.is_none_or(|(_, b)| delta < b) {
                best = Some((idx, delta));
            }
        }
        let Some((idx, _)) = best else { break };
        let (s, o) = candidates[idx];
        let mut trial = medoids.clone();
        trial[s] = o;
        let trial_cost = medoid_cost(d, &trial);
        if !(trial_cost < cost) {
            break;
        }
        medoids = trial;
        cost = trial_cost;
        trace.push(cost);
        iterations += 1;
    }

    let assignments = nearest_medoids(d, &medoids).iter().map(|r| r.slot).collect();
    Ok(ClusteringResult {
        k,
        assignments,
        centers: Centers::Medoids { ids: medoids.iter().map(|&m| d.ids()[m].clone()).collect(), indices: medoids },
        inertia: cost,
        metric: d.metric,
        iterations,
        cost_trace: trace,
    })
}

/// Internal validity indices of a partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ValidityScores<T: Scalar> {
    pub silhouette: T,
    pub calinski_harabasz: T,
    pub davies_bouldin: T,
    pub inertia: T,
}

fn check_partition(n: usize, k: usize, assignments: &[usize]) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(invalid(format!("validity indices need k >= 2, got {k}")));
    }
    if k >= n {
        return Err(invalid(format!("validity indices undefined for k = {k} >= n = {n}")));
    }
    if assignments.len() != n {
        return Err(Error::Dimension { expected: n, got: assignments.len() });
    }
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        if a >= k {
            return Err(invalid(format!("cluster index {a} out of range for k = {k}")));
        }
        sizes[a] += 1;
    }
    if let Some(e) = sizes.iter().position(|&s| s == 0) {
        return Err(invalid(format!("cluster {e} is empty")));
    }
    Ok(sizes)
}

/// Per-sample silhouettes; members of singleton clusters score 0.
fn silhouette_scores<T: Scalar>(
    n: usize,
    k: usize,
    sizes: &[usize],
    labels: &[usize],
    dist: impl Fn(usize, usize) -> T + Sync,
) -> Vec<T> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let own = labels[i];
            if sizes[own] == 1 {
                return T::zero();
            }
            let mut sums = vec![T::zero(); k];
            for j in 0..n {
                if j != i {
                    sums[labels[j]] = sums[labels[j]] + dist(i, j);
                }
            }
            let a = sums[own] / T::of_usize(sizes[own] - 1);
            let b = (0..k).filter(|&c| c != own).map(|c| sums[c] / T::of_usize(sizes[c])).fold(T::infinity(), T::min);
            let m = a.max(b);
            if m > T::zero() {
                (b - a) / m
            } else {
                T::zero()
            }
        })
        .collect()
}

fn mean_of<T: Scalar>(v: Vec<T>) -> T {
    let n = T::of_usize(v.len());
    v.into_iter().sum::<T>() / n
}

/// Euclidean silhouette of every series under `assignments`.
pub fn silhouette_samples<T: Scalar>(c: &TimeSeriesCollection<T>, assignments: &[usize], k: usize) -> Result<Vec<T>> {
    let sizes = check_partition(c.len(), k, assignments)?;
    let rows = c.values();
    Ok(silhouette_scores(c.len(), k, &sizes, assignments, |i, j| sq_dist(&rows[i], &rows[j]).sqrt()))
}

/// Silhouette of every series from a dissimilarity matrix.
pub fn silhouette_samples_precomputed<T: Scalar>(
    d: &DistanceMatrix<T>,
    assignments: &[usize],
    k: usize,
) -> Result<Vec<T>> {
    let sizes = check_partition(d.len(), k, assignments)?;
    Ok(silhouette_scores(d.len(), k, &sizes, assignments, |i, j| d.get(i, j)))
}

fn calinski_harabasz<T: Scalar>(n: usize, k: usize, between: T, within: T) -> T {
    if within > T::zero() {
        (between / T::of_usize(k - 1)) / (within / T::of_usize(n - k))
    } else if between > T::zero() {
        T::infinity()
    } else {
        T::zero()
    }
}

fn davies_bouldin<T: Scalar>(k: usize, scatter: &[T], sep: impl Fn(usize, usize) -> T) -> T {
    let total: T = (0..k)
        .map(|i| {
            (0..k)
                .filter(|&j| j != i)
                .map(|j| {
                    let num = scatter[i] + scatter[j];
                    let den = sep(i, j);
                    if den > T::zero() {
                        num / den
                    } else if num > T::zero() {
                        T::infinity()
                    } else {
                        T::zero()
                    }
                })
                .fold(T::neg_infinity(), T::max)
        })
        .sum();
    total / T::of_usize(k)
}

/// Validity indices with Euclidean geometry and centroids recomputed from the
/// assignments (the k-means setting).
pub fn validity<T: Scalar>(c: &TimeSeriesCollection<T>, r: &ClusteringResult<T>) -> Result<ValidityScores<T>> {
    let n = c.len();
    let k = r.k;
    let sizes = check_partition(n, k, &r.assignments)?;
    if !c.is_fully_observed() {
        return Err(invalid("validity needs a fully observed collection"));
    }
    let rows = c.values();
    let t_len = c.series_len();
    let labels = &r.assignments;

    let mut centroids = vec![vec![T::zero(); t_len]; k];
    for (x, &a) in rows.iter().zip(labels) {
        for (s, &v) in centroids[a].iter_mut().zip(x) {
            *s = *s + v;
        }
    }
    for (cen, &s) in centroids.iter_mut().zip(&sizes) {
        let inv = T::one() / T::of_usize(s);
        cen.iter_mut().for_each(|v| *v = *v * inv);
    }
    let overall: Vec<T> = (0..t_len).map(|t| rows.iter().map(|x| x[t]).sum::<T>() / T::of_usize(n)).collect();

    let within = wcss(rows, labels, &centroids);
    let between: T = centroids.iter().zip(&sizes).map(|(cen, &s)| T::of_usize(s) * sq_dist(cen, &overall)).sum();
    let mut scatter = vec![T::zero(); k];
    for (x, &a) in rows.iter().zip(labels) {
        scatter[a] = scatter[a] + sq_dist(x, &centroids[a]).sqrt();
    }
    for (s, &m) in scatter.iter_mut().zip(&sizes) {
        *s = *s / T::of_usize(m);
    }

    Ok(ValidityScores {
        silhouette: mean_of(silhouette_scores(n, k, &sizes, labels, |i, j| sq_dist(&rows[i], &rows[j]).sqrt())),
        calinski_harabasz: calinski_harabasz(n, k, between, within),
        davies_bouldin: davies_bouldin(k, &scatter, |i, j| sq_dist(&centroids[i], &centroids[j]).sqrt()),
        inertia: within,
    })
}

/// Validity indices over a dissimilarity matrix with medoids standing in for
/// centroids: dispersions use the supplied metric, the overall center is the
/// medoid of the whole collection, and inertia is the total dissimilarity to
/// the assigned medoids.
pub fn validity_precomputed<T: Scalar>(d: &DistanceMatrix<T>, r: &ClusteringResult<T>) -> Result<ValidityScores<T>> {
    let n = d.len();
    let k = r.k;
    let sizes = check_partition(n, k, &r.assignments)?;
    let Centers::Medoids { indices: medoids, .. } = &r.centers else {
        return Err(invalid("precomputed validity needs a medoid clustering"));
    };
    let labels = &r.assignments;
    let overall = (0..n)
        .map(|j| (j, (0..n).map(|i| d.get(i, j)).sum::<T>()))
        .fold((0, T::infinity()), |best, (j, s)| if s < best.1 { (j, s) } else { best })
        .0;
    let mut within = T::zero();
    let mut cost = T::zero();
    let mut scatter = vec![T::zero(); k];
    for (i, &a) in labels.iter().enumerate() {
        let v = d.get(i, medoids[a]);
        within = within + v * v;
        cost = cost + v;
        scatter[a] = scatter[a] + v;
    }
    for (s, &m) in scatter.iter_mut().zip(&sizes) {
        *s = *s / T::of_usize(m);
    }
    let between: T = medoids
        .iter()
        .zip(&sizes)
        .map(|(&m, &s)| {
            let v = d.get(m, overall);
            T::of_usize(s) * v * v
        })
        .sum();
    Ok(ValidityScores {
        silhouette: mean_of(silhouette_scores(n, k, &sizes, labels, |i, j| d.get(i, j))),
        calinski_harabasz: calinski_harabasz(n, k, between, within),
        davies_bouldin: davies_bouldin(k, &scatter, |i, j| d.get(medoids[i], medoids[j])),
        inertia: cost,
    })
}

/// Elbow of an inertia curve: after min-max normalising both axes, the
/// interior point farthest from the chord joining the endpoints. Ties (within
/// 1e-12) go to the smaller k.
pub fn suggest_k(ks: &[usize], inertias: &[f64]) -> Result<usize> {
    if ks.len() != inertias.len() {
        return Err(Error::Dimension { expected: ks.len(), got: inertias.len() });
    }
    if ks.len() < 3 {
        return Err(invalid("elbow selection needs at least 3 points"));
    }
    if ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("candidate ks must be strictly increasing"));
    }
    if inertias.iter().any(|v| !v.is_finite()) {
        return Err(invalid("inertia values must be finite"));
    }
    let norm = |v: &[f64]| -> Vec<f64> {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        v.iter().map(|&x| if span > 0.0 { (x - lo) / span } else { 0.0 }).collect()
    };
    let xs = norm(&ks.iter().map(|&k| k as f64).collect::<Vec<_>>());
    let ys = norm(inertias);
    let last = xs.len() - 1;
    let (dx, dy) = (xs[last] - xs[0], ys[last] - ys[0]);
    let len = (dx * dx + dy * dy).sqrt();
    let mut best = (1, f64::NEG_INFINITY);
    for i in 1..last {
        let dist = (dx * (ys[0] - ys[i]) - (xs[0] - xs[i]) * dy).abs() / len;
        if dist > best.1 + 1e-12 {
            best = (i, dist);
        }
    }
    Ok(ks[best.0])
}

/// Adjusted Rand index between two labelings of the same samples.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension { expected: a.len(), got: b.len() });
    }
    let (ka, kb) = (a.iter().max().map_or(0, |m| m + 1), b.iter().max().map_or(0, |m| m + 1));
    let mut table = vec![vec![0u64; kb]; ka];
    for (&i, &j) in a.iter().zip(b) {
        table[i][j] += 1;
    }
    let c2 = |n: u64| (n * n.saturating_sub(1) / 2) as f64;
    let index: f64 = table.iter().flatten().map(|&n| c2(n)).sum();
    let rows: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let expected = rows * cols / c2(a.len() as u64);
    let max = (rows + cols) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Low, medium and high cluster counts derived from the elbow choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KPlan {
    pub k_low: usize,
    pub k_medium: usize,
    pub k_high: usize,
}

impl KPlan {
    pub fn levels(&self) -> [usize; 3] {
        [self.k_low, self.k_medium, self.k_high]
    }
}

pub fn k_plan(k_medium: usize) -> Result<KPlan> {
    if k_medium < 3 {
        return Err(invalid(format!("medium k must be >= 3, got {k_medium}")));
    }
    Ok(KPlan { k_low: k_medium.div_ceil(2), k_medium, k_high: 2 * k_medium })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::pairwise_matrix;
    use proptest::prelude::*;

    #[test]
    fn ari_examples() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        // Pair counts: index 1, row pairs 2, column pairs 3, expected 2 * 3 / 6 = 1.
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap();
        assert_eq!(v, 0.0);
    }

    fn points(xs: &[f64]) -> TimeSeriesCollection<f64> {
        TimeSeriesCollection::from_values(xs.iter().map(|&x| vec![x, 0.0]).collect()).unwrap()
    }

    /// Minimal WCSS over every assignment of 1-D points to 2 non-empty groups.
    fn best_two_partition(xs: &[f64]) -> (f64, u32) {
        let n = xs.len();
        let mut best = (f64::INFINITY, 0);
        for mask in 1..(1u32 << n) - 1 {
            let mut cost = 0.0;
            for side in [true, false] {
                let g: Vec<f64> = (0..n).filter(|&i| (mask >> i & 1 == 1) == side).map(|i| xs[i]).collect();
                let m = g.iter().sum::<f64>() / g.len() as f64;
                cost += g.iter().map(|v| (v - m).powi(2)).sum::<f64>();
            }
            if cost < best.0 {
                best = (cost, mask);
            }
        }
        best
    }

    #[test]
    fn kmeans_two_groups() {
        let xs = [0.0, 1.0, 10.0, 11.0];
        let (oracle, _) = best_two_partition(&xs);
        assert_eq!(oracle, 1.0);
        for seed in 0..10 {
            let r = kmeans_fit(&points(&xs), 2, seed, 300).unwrap();
            assert_eq!(r.inertia, 1.0);
            assert_eq!(r.assignments[0], r.assignments[1]);
            assert_eq!(r.assignments[2], r.assignments[3]);
            assert_ne!(r.assignments[0], r.assignments[2]);
        }
    }

    #[test]
    fn kmeans_k_equals_n() {
        let c = points(&[3.0, -1.0, 7.5, 2.0]);
        let r = kmeans_fit(&c, 4, 1, 300).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut a = r.assignments.clone();
        a.sort();
        assert_eq!(a, vec![0, 1, 2, 3]);
        assert!(kmeans_fit(&c, 5, 1, 300).is_err());
        assert!(kmeans_fit(&c, 0, 1, 300).is_err());
    }

    #[test]
    fn kmeans_duplicated_points_same_centers() {
        let xs = [0.0, 1.0, 10.0, 11.0];
        let doubled: Vec<f64> = xs.iter().chain(xs.iter()).copied().collect();
        let centers = |r: &ClusteringResult<f64>| {
            let Centers::Means(m) = &r.centers else { unreachable!() };
            let mut v: Vec<f64> = m.iter().map(|c| c[0]).collect();
            v.sort_by(f64::total_cmp);
            v
        };
        let a = kmeans_fit(&points(&xs), 2, 3, 300).unwrap();
        let b = kmeans_fit(&points(&doubled), 2, 3, 300).unwrap();
        assert_eq!(centers(&a), vec![0.5, 10.5]);
        assert_eq!(centers(&a), centers(&b));
        assert_eq!(best_two_partition(&doubled).0, 2.0 * best_two_partition(&xs).0);
    }

    #[test]
    fn kmeans_with_duplicates_and_large_k() {
        let c = points(&[1.0, 1.0, 1.0, 1.0, 5.0]);
        let r = kmeans_fit(&c, 3, 0, 50).unwrap();
        assert_eq!(r.cluster_sizes().iter().filter(|&&s| s == 0).count(), 0);
    }

    #[test]
    fn pam_enumeration_example() {
        let xs = [0.0, 1.0, 2.0, 10.0, 11.0, 12.0];
        let d = pairwise_matrix(&points(&xs), &Metric::Euclidean).unwrap();
        let r = pam_fit(&d, 2).unwrap();
        let mut best = (f64::INFINITY, (0, 0));
        for a in 0..6 {
            for b in a + 1..6 {
                let cost = medoid_cost(&d, &[a, b]);
                if cost < best.0 {
                    best = (cost, (a, b));
                }
            }
        }
        assert_eq!(best, (4.0, (1, 4)));
        assert_eq!(r.inertia, 4.0);
        let Centers::Medoids { mut indices, .. } = r.centers else { unreachable!() };
        indices.sort();
        assert_eq!(indices, vec![1, 4]);
    }

    #[test]
    fn pam_k_equals_n_and_mpbd() {
        let c = TimeSeriesCollection::from_values(vec![
            vec![1.0, 2.0, 3.0, 2.0],
            vec![1.0, 2.0, 3.0, 4.0],
            vec![3.0, 2.0, 1.0, 0.0],
            vec![3.0, 2.0, 1.0, 2.0],
            vec![1.0, 1.0, 1.0, 1.0],
        ])
        .unwrap();
        let d = pairwise_matrix(&c, &Metric::mpbd()).unwrap();
        assert_eq!(pam_fit(&d, 5).unwrap().inertia, 0.0);
        let r = pam_fit(&d, 2).unwrap();
        assert!(matches!(r.metric, Metric::Mpbd(_)));
        assert_eq!(r.assignments[2], r.assignments[3]);
        assert!(pam_fit(&d, 6).is_err());
    }

    #[test]
    fn validity_hand_example() {
        let c = points(&[0.0, 1.0, 10.0, 11.0]);
        let r = kmeans_fit(&c, 2, 0, 300).unwrap();
        let v = validity(&c, &r).unwrap();
        let s = silhouette_samples(&c, &r.assignments, 2).unwrap();
        assert!((s[0] - 9.5 / 10.5).abs() < 1e-12);
        assert!((s[1] - 8.5 / 9.5).abs() < 1e-12);
        assert!((v.silhouette - (9.5 / 10.5 + 8.5 / 9.5) / 2.0).abs() < 1e-12);
        assert!((v.calinski_harabasz - 200.0).abs() < 1e-9);
        assert!((v.davies_bouldin - 0.1).abs() < 1e-12);
        assert_eq!(v.inertia, 1.0);
    }

    #[test]
    fn validity_coincident_clusters() {
        let c = points(&[0.0, 0.0, 50.0, 50.0]);
        let r = kmeans_fit(&c, 2, 0, 300).unwrap();
        let v = validity(&c, &r).unwrap();
        assert_eq!(v.silhouette, 1.0);
        assert_eq!(v.davies_bouldin, 0.0);
        assert!(v.calinski_harabasz.is_infinite());
    }

    #[test]
    fn validity_errors() {
        let c = points(&[0.0, 1.0, 10.0]);
        let r1 = kmeans_fit(&c, 1, 0, 300).unwrap();
        assert!(validity(&c, &r1).is_err());
        let r3 = kmeans_fit(&c, 3, 0, 300).unwrap();
        assert!(validity(&c, &r3).is_err());
    }

    #[test]
    fn validity_precomputed_matches_euclidean_silhouette() {
        let c = points(&[0.0, 1.0, 2.0, 10.0, 11.0, 12.0]);
        let d = pairwise_matrix(&c, &Metric::Euclidean).unwrap();
        let r = pam_fit(&d, 2).unwrap();
        let v = validity_precomputed(&d, &r).unwrap();
        let e = validity(&c, &r).unwrap();
        assert!((v.silhouette - e.silhouette).abs() < 1e-12);
        assert_eq!(v.inertia, 4.0);
        // medoids 1 and 11 coincide with the centroids here
        assert!((v.davies_bouldin - e.davies_bouldin).abs() < 1e-12);
    }

    #[test]
    fn suggest_k_examples() {
        assert_eq!(suggest_k(&[1, 2, 3, 4], &[100.0, 50.0, 48.0, 47.0]).unwrap(), 2);
        assert_eq!(suggest_k(&[10, 20, 30, 40], &[1107.0, 854.0, 726.0, 646.0]).unwrap(), 20);
        assert_eq!(suggest_k(&[2, 3, 4, 5, 6], &[50.0, 40.0, 30.0, 20.0, 10.0]).unwrap(), 3);
        assert!(suggest_k(&[1, 2], &[2.0, 1.0]).is_err());
        assert!(suggest_k(&[1, 1, 2], &[2.0, 1.0, 0.5]).is_err());
    }

    #[test]
    fn k_plan_examples() {
        let p = |k| k_plan(k).unwrap().levels();
        assert_eq!(p(20), [10, 20, 40]);
        assert_eq!(p(50), [25, 50, 100]);
        assert_eq!(p(5), [3, 5, 10]);
        assert_eq!(p(3), [2, 3, 6]);
        assert!(k_plan(2).is_err());
    }

    #[test]
    fn assignments_csv() {
        let c = points(&[0.0, 1.0, 10.0]);
        let r = kmeans_fit(&c, 2, 0, 300).unwrap();
        let mut buf = Vec::new();
        r.write_assignments_csv(c.ids(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("id,cluster\ns0,"));
        assert_eq!(text.lines().count(), 4);
    }

    proptest! {
        #[test]
        fn suggest_k_affine_invariant(
            inertias in prop::collection::vec(1.0f64..1000.0, 3..8),
            scale in 0.01f64..100.0,
            shift in -100.0f64..100.0,
        ) {
            let ks: Vec<usize> = (1..=inertias.len()).collect();
            let moved: Vec<f64> = inertias.iter().map(|v| v * scale + shift).collect();
            prop_assert_eq!(suggest_k(&ks, &inertias).unwrap(), suggest_k(&ks, &moved).unwrap());
        }

        #[test]
        fn validity_permutation_and_relabel_invariant(
            pts in prop::collection::vec(-20.0f64..20.0, 6..14),
            rot in 1usize..14,
        ) {
            let c = points(&pts);
            let r = kmeans_fit(&c, 3, 1, 100).unwrap();
            prop_assume!(r.cluster_sizes().iter().all(|&s| s > 0));
            let v = validity(&c, &r).unwrap();
            prop_assert!((-1.0..=1.0).contains(&v.silhouette));
            let n = pts.len();
            let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
            let mut r2 = r.clone();
            r2.assignments = perm.iter().map(|&i| (r.assignments[i] + 1) % 3).collect();
            let v2 = validity(&c.select(&perm), &r2).unwrap();
            for (a, b) in [(v.silhouette, v2.silhouette), (v.calinski_harabasz, v2.calinski_harabasz),
                           (v.davies_bouldin, v2.davies_bouldin), (v.inertia, v2.inertia)] {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{} vs {}", a, b);
            }
        }
    }
}
