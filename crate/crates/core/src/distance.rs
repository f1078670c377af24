//! Dissimilarity kernels and the pairwise distance matrix.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::TimeSeriesCollection;
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Parameters of the movement-pattern distance.
///
/// First differences are reduced to signs with a dead zone of `epsilon`; each
/// step where at least one series moves is charged `w_same`, `w_one` or
/// `w_opp` depending on whether both move the same way, only one moves, or
/// they move in opposite directions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MpbdParams<T: Scalar> {
    pub epsilon: T,
    pub w_same: T,
    pub w_one: T,
    pub w_opp: T,
}

impl<T: Scalar> Default for MpbdParams<T> {
    fn default() -> Self {
        Self { epsilon: T::of(1e-8), w_same: T::zero(), w_one: T::of(0.5), w_opp: T::one() }
    }
}

impl<T: Scalar> MpbdParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= T::zero()) {
            return Err(invalid("mpbd epsilon must be >= 0"));
        }
        if !(T::zero() <= self.w_same && self.w_same <= self.w_one && self.w_one <= self.w_opp) {
            return Err(invalid("mpbd weights must satisfy 0 <= w_same <= w_one <= w_opp"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", bound = "")]
pub enum Metric<T: Scalar> {
    Euclidean,
    Dtw {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        band: Option<usize>,
    },
    Mpbd(MpbdParams<T>),
}

impl<T: Scalar> Metric<T> {
    pub fn dtw() -> Self {
        Metric::Dtw { band: None }
    }

    pub fn mpbd() -> Self {
        Metric::Mpbd(MpbdParams::default())
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Metric::Mpbd(p) => p.validate(),
            _ => Ok(()),
        }
    }

    pub fn distance(&self, x: &[T], y: &[T]) -> Result<T> {
        match self {
            Metric::Euclidean => euclidean(x, y),
            Metric::Dtw { band } => dtw(x, y, *band),
            Metric::Mpbd(p) => mpbd(x, y, p),
        }
    }

    /// Stable textual descriptor, used in cache keys and reports.
    pub fn descriptor(&self) -> String {
        self.to_string()
    }
}

impl<T: Scalar> fmt::Display for Metric<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Euclidean => write!(f, "euclidean"),
            Metric::Dtw { band: None } => write!(f, "dtw"),
            Metric::Dtw { band: Some(w) } => write!(f, "dtw(band={w})"),
            Metric::Mpbd(p) => write!(f, "mpbd(eps={},same={},one={},opp={})", p.epsilon, p.w_same, p.w_one, p.w_opp),
        }
    }
}

fn same_len<T>(x: &[T], y: &[T]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Dimension { expected: x.len(), got: y.len() });
    }
    Ok(())
}

pub fn euclidean<T: Scalar>(x: &[T], y: &[T]) -> Result<T> {
    same_len(x, y)?;
    Ok(x.iter().zip(y).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>().sqrt())
}

/// Dynamic time warping with squared local cost; returns the square root of
/// the minimal accumulated cost. `band` restricts alignments to `|i - j| <= w`.
pub fn dtw<T: Scalar>(x: &[T], y: &[T], band: Option<usize>) -> Result<T> {
    let (n, m) = (x.len(), y.len());
    if n == 0 || m == 0 {
        return Err(invalid("dtw of an empty series"));
    }
    if let Some(w) = band {
        if n.abs_diff(m) > w {
            return Err(invalid(format!("dtw band {w} cannot align lengths {n} and {m}")));
        }
    }
    let inf = T::infinity();
    let in_band = |i: usize, j: usize| band.is_none_or(|w| i.abs_diff(j) <= w);
    let mut prev = vec![inf; m];
    let mut cur = vec![inf; m];
    for (i, &xi) in x.iter().enumerate() {
        for j in 0..m {
            cur[j] = if !in_band(i, j) {
                inf
            } else {
                let c = (xi - y[j]) * (xi - y[j]);
                let best = match (i, j) {
                    (0, 0) => T::zero(),
                    (0, _) => cur[j - 1],
                    (_, 0) => prev[j],
                    _ => prev[j].min(cur[j - 1]).min(prev[j - 1]),
                };
                c + best
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1].sqrt())
}

fn move_sign<T: Scalar>(d: T, eps: T) -> i8 {
    if d > eps {
        1
    } else if d < -eps {
        -1
    } else {
        0
    }
}

/// Movement-pattern distance: mean per-step charge over the steps where at
/// least one of the two series moves. Zero when neither ever moves.
pub fn mpbd<T: Scalar>(x: &[T], y: &[T], p: &MpbdParams<T>) -> Result<T> {
    same_len(x, y)?;
    if x.len() < 2 {
        return Err(invalid("mpbd needs series of length >= 2"));
    }
    let mut total = T::zero();
    let mut moving = 0usize;
    for t in 1..x.len() {
        let sx = move_sign(x[t] - x[t - 1], p.epsilon);
        let sy = move_sign(y[t] - y[t - 1], p.epsilon);
        let w = match (sx, sy) {
            (0, 0) => continue,
            (a, b) if a == b => p.w_same,
            (0, _) | (_, 0) => p.w_one,
            _ => p.w_opp,
        };
        total = total + w;
        moving += 1;
    }
    if moving == 0 {
        return Ok(T::zero());
    }
    Ok(total / T::of_usize(moving))
}

/// Symmetric matrix of pairwise dissimilarities, rows in collection order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DistanceMatrix<T: Scalar> {
    pub metric: Metric<T>,
    ids: Vec<String>,
    values: Vec<T>,
}

impl<T: Scalar> DistanceMatrix<T> {
    /// Builds a matrix from a full row-major table, checking the invariants.
    pub fn from_full(metric: Metric<T>, ids: Vec<String>, values: Vec<T>) -> Result<Self> {
        let n = ids.len();
        if values.len() != n * n {
            return Err(Error::Dimension { expected: n * n, got: values.len() });
        }
        for i in 0..n {
            if values[i * n + i] != T::zero() {
                return Err(Error::Validation(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                let v = values[i * n + j];
                if !(v >= T::zero()) || v != values[j * n + i] {
                    return Err(Error::Validation(format!("entry ({i},{j}) is negative, NaN or asymmetric")));
                }
            }
        }
        Ok(Self { metric, ids, values })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[i * self.ids.len() + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        let n = self.ids.len();
        &self.values[i * n..(i + 1) * n]
    }

    /// Sub-matrix over `indices` (in that order).
    pub fn select(&self, indices: &[usize]) -> Self {
        let values =
            indices.iter().flat_map(|&i| indices.iter().map(move |&j| (i, j))).map(|(i, j)| self.get(i, j)).collect();
        Self { metric: self.metric, ids: indices.iter().map(|&i| self.ids[i].clone()).collect(), values }
    }

    /// Writes a metric comment line, an id header and the lower triangle
    /// (row `i` holds `d(i, 0..=i)`).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# {}", serde_json::to_string(&self.metric)?)?;
        writeln!(w, "{}", self.ids.join(","))?;
        for i in 0..self.len() {
            let row: Vec<String> = (0..=i).map(|j| self.get(i, j).to_string()).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = |what: &str| -> Result<String> {
            lines.next().ok_or_else(|| Error::Format(format!("missing {what}")))?.map_err(Error::from)
        };
        let meta = next("metric line")?;
        let metric: Metric<T> = serde_json::from_str(
            meta.strip_prefix("# ").ok_or_else(|| Error::Format("metric line must start with `# `".into()))?,
        )?;
        let header = next("id header")?;
        let ids: Vec<String> =
            if header.is_empty() { Vec::new() } else { header.split(',').map(str::to_string).collect() };
        let n = ids.len();
        let mut values = vec![T::zero(); n * n];
        for i in 0..n {
            let line = next("matrix row")?;
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != i + 1 {
                return Err(Error::Format(format!("row {i} has {} cells", cells.len())));
            }
            for (j, cell) in cells.iter().enumerate() {
                let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                    row: i + 3,
                    column: j + 1,
                    message: format!("non-numeric cell {cell:?}"),
                })?;
                values[i * n + j] = T::of(v);
                values[j * n + i] = T::of(v);
            }
        }
        Self::from_full(metric, ids, values)
    }
}

/// Applies `metric` to every unordered pair; rows are computed in parallel.
pub fn pairwise_matrix<T: Scalar>(c: &TimeSeriesCollection<T>, metric: &Metric<T>) -> Result<DistanceMatrix<T>> {
    metric.validate()?;
    if !c.is_fully_observed() {
        return Err(invalid("pairwise distances need a fully observed collection"));
    }
    let n = c.len();
    let upper: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .map(|j| {
                    metric.distance(c.series(i), c.series(j)).map_err(|e| Error::Pair {
                        a: c.ids()[i].clone(),
                        b: c.ids()[j].clone(),
                        source: Box::new(e),
                    })
                })
                .collect::<Result<Vec<T>>>()
        })
        .collect::<Result<_>>()?;
    let mut values = vec![T::zero(); n * n];
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + 1 + off;
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    Ok(DistanceMatrix { metric: *metric, ids: c.ids().to_vec(), values })
}

/// SHA-256 over ids, series length and observed values (hex).
pub fn collection_hash<T: Scalar>(c: &TimeSeriesCollection<T>) -> String {
    let mut h = Sha256::new();
    h.update((c.len() as u64).to_le_bytes());
    h.update((c.series_len() as u64).to_le_bytes());
    for (i, id) in c.ids().iter().enumerate() {
        h.update((id.len() as u64).to_le_bytes());
        h.update(id.as_bytes());
        for (v, &m) in c.series(i).iter().zip(&c.mask()[i]) {
            let bits = if m { v.f64().to_bits() } else { u64::MAX };
            h.update(bits.to_le_bytes());
        }
    }
    to_hex(&h.finalize())
}

pub(crate) fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// On-disk cache of distance matrices keyed by (collection hash, metric).
#[derive(Debug, Clone)]
pub struct DistanceCache {
    dir: PathBuf,
}

impl DistanceCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn key<T: Scalar>(collection_hash: &str, metric: &Metric<T>) -> String {
        let mut h = Sha256::new();
        h.update(collection_hash.as_bytes());
        h.update(b"\0");
        h.update(metric.descriptor().as_bytes());
        to_hex(&h.finalize())
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("dist_{}.csv", &key[..16]))
    }

    /// Returns the cached matrix, computing and storing it on a miss.
    /// The boolean reports whether the cache was hit.
    pub fn get_or_compute<T: Scalar>(
        &self,
        c: &TimeSeriesCollection<T>,
        metric: &Metric<T>,
    ) -> Result<(DistanceMatrix<T>, bool)> {
        let key = Self::key(&collection_hash(c), metric);
        let path = self.path_for(&key);
        if path.exists() {
            if let Ok(d) = load_matrix(&path) {
                if d.ids() == c.ids() && d.metric == *metric {
                    return Ok((d, true));
                }
            }
        }
        let d = pairwise_matrix(c, metric)?;
        std::fs::create_dir_all(&self.dir)?;
        d.write_csv(std::io::BufWriter::new(std::fs::File::create(&path)?))?;
        Ok((d, false))
    }
}

fn load_matrix<T: Scalar>(path: &Path) -> Result<DistanceMatrix<T>> {
    DistanceMatrix::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Minimal accumulated squared cost over every monotone alignment path,
    /// enumerated recursively from (0,0).
    fn dtw_enumerate(x: &[f64], y: &[f64], band: Option<usize>) -> f64 {
        fn walk(x: &[f64], y: &[f64], i: usize, j: usize, band: Option<usize>, acc: f64, best: &mut f64) {
            if band.is_some_and(|w| i.abs_diff(j) > w) {
                return;
            }
            let acc = acc + (x[i] - y[j]).powi(2);
            if i + 1 == x.len() && j + 1 == y.len() {
                *best = best.min(acc);
                return;
            }
            if i + 1 < x.len() {
                walk(x, y, i + 1, j, band, acc, best);
            }
            if j + 1 < y.len() {
                walk(x, y, i, j + 1, band, acc, best);
            }
            if i + 1 < x.len() && j + 1 < y.len() {
                walk(x, y, i + 1, j + 1, band, acc, best);
            }
        }
        let mut best = f64::INFINITY;
        walk(x, y, 0, 0, band, 0.0, &mut best);
        best.sqrt()
    }

    #[test]
    fn euclidean_examples() {
        assert_eq!(euclidean(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(euclidean(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(euclidean(&[0.0; 3], &[0.0; 4]).is_err());
    }

    #[test]
    fn dtw_examples() {
        let x = [0.3, -1.0, 2.0, 0.5];
        assert_eq!(dtw(&x, &x, None).unwrap(), 0.0);
        assert_eq!(dtw(&[0.0, 0.0, 1.0], &[0.0, 1.0, 1.0], None).unwrap(), 0.0);
        assert_eq!(dtw_enumerate(&[0.0, 0.0, 1.0], &[0.0, 1.0, 1.0], None), 0.0);
        assert_eq!(dtw(&[0.0], &[3.0], None).unwrap(), 3.0);
        assert!(dtw::<f64>(&[], &[1.0], None).is_err());
        assert!(dtw(&[1.0, 2.0, 3.0, 4.0], &[1.0], Some(2)).is_err());
    }

    #[test]
    fn dtw_band_zero_is_euclidean() {
        let x = [0.0, 1.0, 3.0, 2.0];
        let y = [1.0, 1.0, 0.0, 2.0];
        assert_eq!(dtw(&x, &y, Some(0)).unwrap(), euclidean(&x, &y).unwrap());
    }

    #[test]
    fn mpbd_examples() {
        let p = MpbdParams::<f64>::default();
        assert_eq!(mpbd(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0], &p).unwrap(), 1.0);
        assert_eq!(mpbd(&[1.0, 5.0, 2.0], &[1.0, 5.0, 2.0], &p).unwrap(), 0.0);
        assert_eq!(mpbd(&[1.0, 2.0, 2.0], &[1.0, 2.0, 3.0], &p).unwrap(), 0.25);
        assert_eq!(mpbd(&[4.0, 4.0], &[1.0, 1.0], &p).unwrap(), 0.0);
        assert!(mpbd(&[1.0], &[1.0], &p).is_err());
        assert!(mpbd(&[1.0, 2.0], &[1.0, 2.0, 3.0], &p).is_err());
    }

    #[test]
    fn mpbd_params_validated() {
        let bad = MpbdParams { w_one: 2.0, ..MpbdParams::<f64>::default() };
        assert!(Metric::Mpbd(bad).validate().is_err());
    }

    #[test]
    fn pairwise_examples() {
        let one = TimeSeriesCollection::from_values(vec![vec![1.0, 2.0]]).unwrap();
        let d = pairwise_matrix(&one, &Metric::Euclidean).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.get(0, 0), 0.0);

        let pts = TimeSeriesCollection::from_values(vec![vec![0.0, 0.0], vec![3.0, 0.0], vec![4.0, 0.0]]).unwrap();
        let d = pairwise_matrix(&pts, &Metric::Euclidean).unwrap();
        assert_eq!((d.get(0, 1), d.get(0, 2), d.get(1, 2)), (3.0, 4.0, 1.0));
        assert_eq!(d.get(2, 1), 1.0);
    }

    #[test]
    fn pairwise_rejects_missing_values() {
        let c = TimeSeriesCollection::new(
            vec!["a".into(), "b".into()],
            vec![vec![1.0, 2.0], vec![1.0, 2.0]],
            vec![vec![true, true], vec![true, false]],
            None,
        )
        .unwrap();
        assert!(pairwise_matrix(&c, &Metric::Euclidean).is_err());
    }

    #[test]
    fn matrix_csv_roundtrip_and_cache() {
        let c = TimeSeriesCollection::from_values(vec![vec![0.0, 1.0, 2.0], vec![2.0, 1.0, 0.0], vec![0.5, 0.5, 3.0]])
            .unwrap();
        let d = pairwise_matrix(&c, &Metric::mpbd()).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = DistanceMatrix::<f64>::read_csv(&buf[..]).unwrap();
        assert_eq!(back, d);

        let dir = tempfile::tempdir().unwrap();
        let cache = DistanceCache::new(dir.path());
        let (a, hit) = cache.get_or_compute(&c, &Metric::mpbd()).unwrap();
        assert!(!hit);
        let (b, hit) = cache.get_or_compute(&c, &Metric::mpbd()).unwrap();
        assert!(hit);
        assert_eq!(a, b);
        let (_, hit) = cache.get_or_compute(&c, &Metric::dtw()).unwrap();
        assert!(!hit);
    }

    fn series(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-5.0f64..5.0, 1..=max_len)
    }

    proptest! {
        #[test]
        fn dtw_matches_enumeration(x in series(6), y in series(6)) {
            prop_assert_eq!(dtw(&x, &y, None).unwrap(), dtw_enumerate(&x, &y, None));
        }

        #[test]
        fn dtw_symmetric_and_below_euclidean(
            (x, y) in (1usize..10).prop_flat_map(|n| (prop::collection::vec(-5.0f64..5.0, n), prop::collection::vec(-5.0f64..5.0, n)))
        ) {
            let a = dtw(&x, &y, None).unwrap();
            prop_assert_eq!(a, dtw(&y, &x, None).unwrap());
            prop_assert!(a <= euclidean(&x, &y).unwrap() + 1e-12);
            prop_assert_eq!(dtw(&x, &x, None).unwrap(), 0.0);
        }

        #[test]
        fn mpbd_properties(
            (x, y) in (2usize..12).prop_flat_map(|n| (prop::collection::vec(-5.0f64..5.0, n), prop::collection::vec(-5.0f64..5.0, n))),
            scale in 0.1f64..10.0,
            shift in -10.0f64..10.0,
        ) {
            let p = MpbdParams { epsilon: 0.0, ..MpbdParams::default() };
            let d = mpbd(&x, &y, &p).unwrap();
            prop_assert_eq!(d, mpbd(&y, &x, &p).unwrap());
            prop_assert!(d >= 0.0 && d <= p.w_opp);
            let tx: Vec<f64> = x.iter().map(|v| v * scale + shift).collect();
            let ty: Vec<f64> = y.iter().map(|v| v * scale + shift).collect();
            let moves = |s: &[f64]| s.windows(2).map(|w| move_sign(w[1] - w[0], 0.0)).collect::<Vec<_>>();
            // Invariance holds whenever rounding keeps every step's sign.
            if moves(&tx) == moves(&x) && moves(&ty) == moves(&y) {
                prop_assert_eq!(d, mpbd(&tx, &ty, &p).unwrap());
            }
        }

        #[test]
        fn pairwise_symmetric(rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 5), 1..8)) {
            let c = TimeSeriesCollection::from_values(rows).unwrap();
            for m in [Metric::Euclidean, Metric::dtw(), Metric::mpbd()] {
                let d = pairwise_matrix(&c, &m).unwrap();
                let serial: Vec<f64> = (0..c.len()).flat_map(|i| (0..c.len()).map(move |j| (i, j)))
                    .map(|(i, j)| if i == j { 0.0 } else { m.distance(c.series(i.min(j)), c.series(i.max(j))).unwrap() })
                    .collect();
                for i in 0..c.len() {
                    for j in 0..c.len() {
                        prop_assert_eq!(d.get(i, j), d.get(j, i));
                        prop_assert_eq!(d.get(i, j), serial[i * c.len() + j]);
                    }
                }
            }
        }
    }
}
