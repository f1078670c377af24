//! Loading, validation and preprocessing of equal-length series collections.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distance::DistanceMatrix;
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Equal-length series with identifiers, an observation mask and optional labels.
///
/// Unobserved cells hold `NaN` in `values` and `false` in `mask`; statistics
/// must consult the mask rather than the stored value.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesCollection<T> {
    ids: Vec<String>,
    values: Vec<Vec<T>>,
    mask: Vec<Vec<bool>>,
    labels: Option<Vec<i64>>,
    pub granularity: String,
}

impl<T: Scalar> TimeSeriesCollection<T> {
    pub fn new(ids: Vec<String>, values: Vec<Vec<T>>, mask: Vec<Vec<bool>>, labels: Option<Vec<i64>>) -> Result<Self> {
        if ids.len() != values.len() || ids.len() != mask.len() {
            return Err(Error::Validation(format!(
                "{} ids for {} value rows and {} mask rows",
                ids.len(),
                values.len(),
                mask.len()
            )));
        }
        if let Some(first) = values.first() {
            let t = first.len();
            if t < 2 {
                return Err(Error::Validation(format!("series length {t} < 2")));
            }
            for (i, (row, m)) in values.iter().zip(&mask).enumerate() {
                if row.len() != t || m.len() != t {
                    return Err(Error::Validation(format!(
                        "series {} has length {} (expected {t})",
                        ids[i],
                        row.len()
                    )));
                }
            }
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Validation(format!("duplicate id {id}")));
            }
        }
        if let Some(l) = &labels {
            if l.len() != ids.len() {
                return Err(Error::Validation(format!("{} labels for {} series", l.len(), ids.len())));
            }
        }
        let values = values
            .into_iter()
            .zip(&mask)
            .map(|(row, m)| row.into_iter().zip(m).map(|(v, &obs)| if obs { v } else { T::nan() }).collect())
            .collect();
        Ok(Self { ids, values, mask, labels, granularity: String::new() })
    }

    /// Fully observed collection.
    pub fn from_rows(ids: Vec<String>, values: Vec<Vec<T>>, labels: Option<Vec<i64>>) -> Result<Self> {
        let mask = values.iter().map(|r| vec![true; r.len()]).collect();
        Self::new(ids, values, mask, labels)
    }

    /// Fully observed collection with generated ids `s0, s1, ...`.
    pub fn from_values(values: Vec<Vec<T>>) -> Result<Self> {
        let ids = (0..values.len()).map(|i| format!("s{i}")).collect();
        Self::from_rows(ids, values, None)
    }

    pub fn with_granularity(mut self, granularity: impl Into<String>) -> Self {
        self.granularity = granularity.into();
        self
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Series length (0 for an empty collection).
    pub fn series_len(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &[Vec<T>] {
        &self.values
    }

    pub fn series(&self, i: usize) -> &[T] {
        &self.values[i]
    }

    pub fn mask(&self) -> &[Vec<bool>] {
        &self.mask
    }

    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    pub fn set_labels(&mut self, labels: Option<Vec<i64>>) -> Result<()> {
        if let Some(l) = &labels {
            if l.len() != self.len() {
                return Err(Error::Validation(format!("{} labels for {} series", l.len(), self.len())));
            }
        }
        self.labels = labels;
        Ok(())
    }

    pub fn is_fully_observed(&self) -> bool {
        self.mask.iter().all(|m| m.iter().all(|&b| b))
    }

    pub fn missing_count(&self, i: usize) -> usize {
        self.mask[i].iter().filter(|&&b| !b).count()
    }

    /// Keeps the series at `indices` (in the given order).
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            values: indices.iter().map(|&i| self.values[i].clone()).collect(),
            mask: indices.iter().map(|&i| self.mask[i].clone()).collect(),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            granularity: self.granularity.clone(),
        }
    }

    fn partition(&self, keep: impl Fn(usize) -> bool) -> (Self, Vec<String>) {
        let (kept, dropped): (Vec<usize>, Vec<usize>) = (0..self.len()).partition(|&i| keep(i));
        (self.select(&kept), dropped.into_iter().map(|i| self.ids[i].clone()).collect())
    }

    /// Writes the collection as `id[,label],t0,...`; missing cells are empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string()];
        if self.labels.is_some() {
            header.push("label".into());
        }
        header.extend((0..self.series_len()).map(|t| format!("t{t}")));
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let mut rec = vec![self.ids[i].clone()];
            if let Some(l) = &self.labels {
                rec.push(l[i].to_string());
            }
            rec.extend(
                self.values[i].iter().zip(&self.mask[i]).map(|(v, &m)| if m { v.to_string() } else { String::new() }),
            );
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// Reads a collection from CSV (`id,t0,...` or `id,label,t0,...`).
pub fn read_csv<T: Scalar, R: Read>(reader: R) -> Result<TimeSeriesCollection<T>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r.map_err(csv_err)?,
        None => return Err(Error::Format("empty file".into())),
    };
    if header.get(0).map(str::trim) != Some("id") {
        return Err(Error::Format("first header column must be `id`".into()));
    }
    let has_label = header.get(1).map(str::trim) == Some("label");
    let first_value_col = if has_label { 2 } else { 1 };
    let width = header.len();
    if width <= first_value_col {
        return Err(Error::Format("no time columns in header".into()));
    }

    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut mask = Vec::new();
    let mut labels = Vec::new();
    for (r, rec) in records.enumerate() {
        let row = r + 2; // 1-based, header is row 1
        let rec = rec.map_err(csv_err)?;
        if rec.len() != width {
            return Err(Error::Format(format!("row {row} has {} fields, header has {width}", rec.len())));
        }
        ids.push(rec[0].trim().to_string());
        if has_label {
            let l = rec[1].trim();
            labels.push(l.parse::<i64>().map_err(|e| Error::Parse {
                row,
                column: 2,
                message: format!("label {l:?}: {e}"),
            })?);
        }
        let mut vals = Vec::with_capacity(width - first_value_col);
        let mut obs = Vec::with_capacity(width - first_value_col);
        for c in first_value_col..width {
            let cell = rec[c].trim();
            if cell.is_empty() {
                vals.push(T::nan());
                obs.push(false);
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    row,
                    column: c + 1,
                    message: format!("non-numeric cell {cell:?}"),
                })?;
                vals.push(T::of(v));
                obs.push(true);
            }
        }
        values.push(vals);
        mask.push(obs);
    }
    TimeSeriesCollection::new(ids, values, mask, has_label.then_some(labels))
}

pub fn load_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<TimeSeriesCollection<T>> {
    read_csv(std::fs::File::open(path)?)
}

/// Per-series value range captured before scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRange {
    pub id: String,
    pub min: f64,
    pub max: f64,
}

/// What preprocessing removed or changed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub dropped_sparse: Vec<String>,
    pub dropped_outliers: Vec<String>,
    pub filled_count: usize,
    pub scaling: Vec<SeriesRange>,
}

impl PreprocessReport {
    pub fn merge(&mut self, other: PreprocessReport) {
        self.dropped_sparse.extend(other.dropped_sparse);
        self.dropped_outliers.extend(other.dropped_outliers);
        self.filled_count += other.filled_count;
        self.scaling.extend(other.scaling);
    }
}

/// Replaces each missing cell with the observed value at the nearest index;
/// equidistant candidates resolve to the earlier index.
pub fn fill_missing_nearest<T: Scalar>(c: &TimeSeriesCollection<T>) -> Result<(TimeSeriesCollection<T>, usize)> {
    let t_len = c.series_len();
    let mut filled = 0;
    let mut values = Vec::with_capacity(c.len());
    for (i, (row, m)) in c.values.iter().zip(&c.mask).enumerate() {
        if !m.iter().any(|&b| b) {
            return Err(Error::Validation(format!("series {} has no observed value", c.ids[i])));
        }
        let mut prev = vec![None; t_len];
        let mut last = None;
        for t in 0..t_len {
            if m[t] {
                last = Some(t);
            }
            prev[t] = last;
        }
        let mut next = vec![None; t_len];
        let mut upcoming = None;
        for t in (0..t_len).rev() {
            if m[t] {
                upcoming = Some(t);
            }
            next[t] = upcoming;
        }
        let out: Vec<T> = (0..t_len)
            .map(|t| {
                if m[t] {
                    return row[t];
                }
                filled += 1;
                let src = match (prev[t], next[t]) {
                    (Some(p), Some(n)) => {
                        if t - p <= n - t {
                            p
                        } else {
                            n
                        }
                    }
                    (Some(p), None) => p,
                    (None, Some(n)) => n,
                    (None, None) => unreachable!("series has an observed value"),
                };
                row[src]
            })
            .collect();
        values.push(out);
    }
    let mut out = TimeSeriesCollection::from_rows(c.ids.clone(), values, c.labels.clone())?;
    out.granularity = c.granularity.clone();
    Ok((out, filled))
}

/// Removes series whose missing fraction is strictly greater than `threshold`.
pub fn drop_sparse<T: Scalar>(
    c: &TimeSeriesCollection<T>,
    threshold: f64,
) -> Result<(TimeSeriesCollection<T>, PreprocessReport)> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(invalid(format!("sparsity threshold {threshold} not in (0, 1]")));
    }
    let t_len = c.series_len() as f64;
    let (kept, dropped) = c.partition(|i| (c.missing_count(i) as f64 / t_len) <= threshold);
    Ok((kept, PreprocessReport { dropped_sparse: dropped, ..Default::default() }))
}

/// Observed (min, max) of every series.
pub fn series_ranges<T: Scalar>(c: &TimeSeriesCollection<T>) -> Vec<SeriesRange> {
    (0..c.len())
        .map(|i| {
            let (lo, hi) = observed_range(&c.values[i], &c.mask[i]);
            SeriesRange { id: c.ids[i].clone(), min: lo.f64(), max: hi.f64() }
        })
        .collect()
}

fn observed_range<T: Scalar>(row: &[T], mask: &[bool]) -> (T, T) {
    row.iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), (&v, _)| (lo.min(v), hi.max(v)))
}

/// Per-series affine map of the observed range onto `[lo, hi]`; a constant
/// series maps to the midpoint of the target interval.
pub fn minmax_scale<T: Scalar>(c: &TimeSeriesCollection<T>, lo: T, hi: T) -> Result<TimeSeriesCollection<T>> {
    if !(lo < hi) {
        return Err(invalid(format!("scaling range [{lo}, {hi}] is empty")));
    }
    let mid = (lo + hi) * T::half();
    let values = c
        .values
        .iter()
        .zip(&c.mask)
        .map(|(row, m)| {
            let (mn, mx) = observed_range(row, m);
            let span = mx - mn;
            row.iter()
                .zip(m)
                .map(|(&x, &obs)| {
                    if !obs {
                        T::nan()
                    } else if span > T::zero() {
                        (lo + (hi - lo) * (x - mn) / span).max(lo).min(hi)
                    } else {
                        mid
                    }
                })
                .collect()
        })
        .collect();
    let mut out = TimeSeriesCollection::new(c.ids.clone(), values, c.mask.clone(), c.labels.clone())?;
    out.granularity = c.granularity.clone();
    Ok(out)
}

/// Quantile with linear interpolation between order statistics.
pub(crate) fn quantile_linear(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Drops series whose nearest-neighbour distance lies above the Tukey fence
/// `Q3 + 1.5 IQR` of all nearest-neighbour distances.
pub fn remove_outliers<T: Scalar>(
    c: &TimeSeriesCollection<T>,
    d: &DistanceMatrix<T>,
) -> Result<(TimeSeriesCollection<T>, PreprocessReport)> {
    let n = c.len();
    if n < 4 {
        return Err(invalid(format!("outlier removal needs at least 4 series, got {n}")));
    }
    if d.len() != n {
        return Err(Error::Dimension { expected: n, got: d.len() });
    }
    let nn: Vec<f64> =
        (0..n).map(|i| (0..n).filter(|&j| j != i).map(|j| d.get(i, j).f64()).fold(f64::INFINITY, f64::min)).collect();
    let mut sorted = nn.clone();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_linear(&sorted, 0.25);
    let q3 = quantile_linear(&sorted, 0.75);
    let fence = q3 + 1.5 * (q3 - q1);
    let (kept, dropped) = c.partition(|i| nn[i] <= fence);
    Ok((kept, PreprocessReport { dropped_outliers: dropped, ..Default::default() }))
}

/// Restricts every series to `[start, start + len)` and drops series with a
/// missing value inside the window.
pub fn slice_window<T: Scalar>(
    c: &TimeSeriesCollection<T>,
    start: usize,
    len: usize,
) -> Result<TimeSeriesCollection<T>> {
    let t_len = c.series_len();
    if len < 2 || start + len > t_len {
        return Err(invalid(format!("window [{start}, {}) outside series of length {t_len}", start + len)));
    }
    let keep: Vec<usize> = (0..c.len()).filter(|&i| c.mask[i][start..start + len].iter().all(|&b| b)).collect();
    let mut out = TimeSeriesCollection::new(
        keep.iter().map(|&i| c.ids[i].clone()).collect(),
        keep.iter().map(|&i| c.values[i][start..start + len].to_vec()).collect(),
        keep.iter().map(|&i| c.mask[i][start..start + len].to_vec()).collect(),
        c.labels.as_ref().map(|l| keep.iter().map(|&i| l[i]).collect()),
    )?;
    out.granularity = c.granularity.clone();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::{pairwise_matrix, Metric};
    use proptest::prelude::*;

    fn parse(s: &str) -> Result<TimeSeriesCollection<f64>> {
        read_csv(s.as_bytes())
    }

    fn single(row: &[Option<f64>]) -> TimeSeriesCollection<f64> {
        TimeSeriesCollection::new(
            vec!["a".into()],
            vec![row.iter().map(|v| v.unwrap_or(f64::NAN)).collect()],
            vec![row.iter().map(Option::is_some).collect()],
            None,
        )
        .unwrap()
    }

    #[test]
    fn csv_missing_cell_sets_mask() {
        let c = parse("id,t0,t1\na,1,2\nb,3,\n").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.series_len(), 2);
        assert!(!c.mask()[1][1]);
        assert!(c.mask()[0][1]);
        assert_eq!(c.ids(), &["a", "b"]);
    }

    #[test]
    fn csv_duplicate_id() {
        let err = parse("id,t0,t1\na,1,2\na,3,4\n").unwrap_err();
        assert!(err.to_string().contains("duplicate id a"), "{err}");
    }

    #[test]
    fn csv_labels() {
        let c = parse("id,label,t0,t1\na,0,1,2\n").unwrap();
        assert_eq!(c.labels(), Some(&[0i64][..]));
        assert_eq!(c.series(0), &[1.0, 2.0]);
    }

    #[test]
    fn csv_ragged_and_non_numeric() {
        assert!(matches!(parse("id,t0,t1\na,1\n"), Err(Error::Format(_))));
        match parse("id,t0,t1\na,1,x\n") {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (2, 3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_roundtrip_preserves_mask() {
        let c = parse("id,label,t0,t1,t2\na,1,1.5,,2\nb,2,3,4,5\n").unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let back: TimeSeriesCollection<f64> = read_csv(&buf[..]).unwrap();
        assert_eq!(back.mask(), c.mask());
        assert_eq!(back.labels(), c.labels());
        assert_eq!(back.series(1), c.series(1));
    }

    #[test]
    fn fill_nearest_prefers_earlier_on_tie() {
        let c = single(&[None, Some(5.0), None, None, Some(8.0)]);
        let (f, n) = fill_missing_nearest(&c).unwrap();
        assert_eq!(f.series(0), &[5.0, 5.0, 5.0, 8.0, 8.0]);
        assert_eq!(n, 3);
        assert!(f.is_fully_observed());
    }

    #[test]
    fn fill_nearest_identity_and_error() {
        let c = single(&[Some(7.0), Some(7.0), Some(7.0)]);
        assert_eq!(fill_missing_nearest(&c).unwrap().0, c);
        let empty = single(&[None, None, None]);
        let err = fill_missing_nearest(&empty).unwrap_err();
        assert!(err.to_string().contains('a'));
    }

    #[test]
    fn drop_sparse_strict_threshold() {
        let mut rows = Vec::new();
        let mut masks = Vec::new();
        for missing in [9usize, 8, 0] {
            rows.push(vec![1.0; 10]);
            masks.push((0..10).map(|t| t >= missing).collect::<Vec<_>>());
        }
        let c = TimeSeriesCollection::new(vec!["m9".into(), "m8".into(), "full".into()], rows, masks, None).unwrap();
        let (kept, report) = drop_sparse(&c, 0.8).unwrap();
        assert_eq!(kept.ids(), &["m8", "full"]);
        assert_eq!(report.dropped_sparse, vec!["m9"]);
        assert!(drop_sparse(&c, 0.0).is_err());
        assert_eq!(drop_sparse(&c, 1.0).unwrap().0.len(), 3);
    }

    #[test]
    fn minmax_examples() {
        let c = TimeSeriesCollection::<f64>::from_values(vec![
            vec![2.0, 4.0, 6.0],
            vec![5.0, 5.0, 5.0],
            vec![0.1, 0.5, 1.0],
        ])
        .unwrap();
        let s = minmax_scale(&c, 0.1, 1.0).unwrap();
        let r0 = s.series(0);
        assert!((r0[0] - 0.1).abs() < 1e-15 && (r0[1] - 0.55).abs() < 1e-15 && (r0[2] - 1.0).abs() < 1e-15);
        assert!(s.series(1).iter().all(|&v| (v - 0.55).abs() < 1e-15));
        assert_eq!(s.series(2)[0], 0.1);
        assert_eq!(s.series(2)[2], 1.0);
        assert!(minmax_scale(&c, 1.0, 1.0).is_err());
    }

    #[test]
    fn outliers_tukey_fence() {
        let c =
            TimeSeriesCollection::from_values(vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0], vec![100.0, 100.0]])
                .unwrap();
        let d = pairwise_matrix(&c, &Metric::Euclidean).unwrap();
        let (kept, report) = remove_outliers(&c, &d).unwrap();
        assert_eq!(report.dropped_outliers, vec!["s3"]);
        assert_eq!(kept.len(), 3);

        let same = TimeSeriesCollection::from_values(vec![vec![1.0, 2.0]; 5]).unwrap();
        let d = pairwise_matrix(&same, &Metric::Euclidean).unwrap();
        assert_eq!(remove_outliers(&same, &d).unwrap().0.len(), 5);

        let three = c.select(&[0, 1, 2]);
        let d = pairwise_matrix(&three, &Metric::Euclidean).unwrap();
        assert!(remove_outliers(&three, &d).is_err());
    }

    #[test]
    fn tukey_fence_value_over_nn_distances() {
        // NN distances {1,1,1,98}: Q1 = 1, Q3 = 1 + 0.25*97 = 25.25.
        let s = [1.0, 1.0, 1.0, 98.0];
        assert_eq!(quantile_linear(&s, 0.25), 1.0);
        assert_eq!(quantile_linear(&s, 0.75), 25.25);
    }

    #[test]
    fn slice_window_rules() {
        let c = TimeSeriesCollection::new(
            vec!["a".into(), "b".into()],
            vec![(0..8).map(f64::from).collect(), vec![1.0; 8]],
            vec![vec![true; 8], (0..8).map(|t| t != 5).collect()],
            None,
        )
        .unwrap();
        let w = slice_window(&c, 2, 3).unwrap();
        assert_eq!(w.series_len(), 3);
        assert_eq!(w.len(), 2);
        let w = slice_window(&c, 4, 3).unwrap();
        assert_eq!(w.ids(), &["a"]);
        assert_eq!(w.series(0), &[4.0, 5.0, 6.0]);
        assert!(slice_window(&c, 6, 3).is_err());
        let full = slice_window(&c.select(&[0]), 0, 8).unwrap();
        assert_eq!(full, c.select(&[0]));
    }

    #[test]
    fn slice_hourly_year_to_week() {
        let c = TimeSeriesCollection::from_values(vec![vec![0.5; 8760]]).unwrap();
        assert_eq!(slice_window(&c, 24 * 120, 168).unwrap().series_len(), 168);
    }

    fn masked_collection() -> impl Strategy<Value = TimeSeriesCollection<f64>> {
        (1usize..6, 2usize..12).prop_flat_map(|(n, t)| {
            (
                prop::collection::vec(prop::collection::vec(-100.0f64..100.0, t), n),
                prop::collection::vec(prop::collection::vec(any::<bool>(), t), n),
            )
                .prop_map(|(vals, mut mask)| {
                    for m in &mut mask {
                        m[0] |= !m.iter().any(|&b| b);
                    }
                    let ids = (0..vals.len()).map(|i| format!("s{i}")).collect();
                    TimeSeriesCollection::new(ids, vals, mask, None).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn fill_is_idempotent(c in masked_collection()) {
            let (once, _) = fill_missing_nearest(&c).unwrap();
            prop_assert!(once.is_fully_observed());
            let (twice, n) = fill_missing_nearest(&once).unwrap();
            prop_assert_eq!(n, 0);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn minmax_bounds_and_idempotence(c in masked_collection()) {
            let s = minmax_scale(&c, 0.1, 1.0).unwrap();
            for (row, m) in s.values().iter().zip(s.mask()) {
                for (v, &obs) in row.iter().zip(m) {
                    if obs { prop_assert!((0.1..=1.0).contains(v)); }
                }
            }
            let again = minmax_scale(&s, 0.1, 1.0).unwrap();
            for (a, b) in s.values().iter().flatten().zip(again.values().iter().flatten()) {
                if !a.is_nan() { prop_assert!((a - b).abs() < 1e-12); }
            }
        }

        #[test]
        fn outlier_removal_permutation_invariant(
            pts in prop::collection::vec(-50.0f64..50.0, 4..12),
            rot in 0usize..12,
        ) {
            let c = TimeSeriesCollection::from_values(pts.iter().map(|&p| vec![p, 0.0]).collect()).unwrap();
            let d = pairwise_matrix(&c, &Metric::Euclidean).unwrap();
            let (kept, rep) = remove_outliers(&c, &d).unwrap();
            prop_assert!(!kept.is_empty());
            let n = c.len();
            let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
            let pc = c.select(&perm);
            let pd = pairwise_matrix(&pc, &Metric::Euclidean).unwrap();
            let (_, prep) = remove_outliers(&pc, &pd).unwrap();
            let mut a = rep.dropped_outliers.clone();
            let mut b = prep.dropped_outliers.clone();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }
    }
}
