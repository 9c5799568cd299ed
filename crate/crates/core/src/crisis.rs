//! Crisis indicator: how far the selected window has shrunk, per pair and across pairs.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::panel::TimeLabel;

/// CI = 1 − (k̂ − 1)/(K_max − 1): 1 at the shortest window, 0 at the longest selectable one.
pub fn crisis_indicator(k_hat: usize, k_max: usize) -> Result<f64> {
    if k_max < 2 || k_hat < 1 || k_hat > k_max {
        return Err(Error::IndexOutOfRange { k: k_hat, k_max });
    }
    Ok(1.0 - (k_hat - 1) as f64 / (k_max - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Mean,
    Median,
}

/// Aggregate of the available pair values at one τ; `None` when no pair is present.
pub fn aggregate(values: &[Option<f64>], method: Aggregation) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.is_empty() {
        return None;
    }
    Some(match method {
        Aggregation::Mean => v.iter().sum::<f64>() / v.len() as f64,
        Aggregation::Median => {
            v.sort_by(f64::total_cmp);
            let n = v.len();
            if n % 2 == 1 {
                v[n / 2]
            } else {
                0.5 * (v[n / 2 - 1] + v[n / 2])
            }
        }
    })
}

/// Global mean CI written directly in the selected indices:
/// K/(K−1) − Σ k̂ / (n_pairs·(K−1)).
pub fn global_mean_closed_form(k_hats: &[usize], k_max: usize) -> Result<f64> {
    if k_hats.is_empty() {
        return Err(Error::EmptyPairSet);
    }
    if let Some(&k) = k_hats.iter().find(|&&k| k < 1 || k > k_max) {
        return Err(Error::IndexOutOfRange { k, k_max });
    }
    let kf = k_max as f64;
    let sum: usize = k_hats.iter().sum();
    Ok(kf / (kf - 1.0) - sum as f64 / (k_hats.len() as f64 * (kf - 1.0)))
}

#[derive(Debug, Clone, Serialize)]
pub struct CrisisSeries {
    pub labels: Vec<TimeLabel>,
    pub pair_names: Vec<String>,
    /// `per_pair[g][t]`, `None` where the pair has no selection at that τ.
    pub per_pair: Vec<Vec<Option<f64>>>,
    pub global_mean: Vec<Option<f64>>,
    pub global_median: Vec<Option<f64>>,
    /// Fraction of pairs present at each τ.
    pub coverage: Vec<f64>,
    pub k_max: usize,
}

impl CrisisSeries {
    /// `k_hats[g][t]` is pair g's selected index at τ = labels[t].
    pub fn from_indices(
        labels: Vec<TimeLabel>,
        pair_names: Vec<String>,
        k_hats: &[Vec<Option<usize>>],
        k_max: usize,
    ) -> Result<Self> {
        if k_hats.is_empty() {
            return Err(Error::EmptyPairSet);
        }
        if pair_names.len() != k_hats.len() {
            return Err(Error::BadDimension(format!(
                "{} pair names for {} pairs",
                pair_names.len(),
                k_hats.len()
            )));
        }
        if let Some(g) = k_hats.iter().position(|s| s.len() != labels.len()) {
            return Err(Error::BadDimension(format!(
                "pair {} has {} values for {} time points",
                pair_names[g],
                k_hats[g].len(),
                labels.len()
            )));
        }
        let per_pair = k_hats
            .iter()
            .map(|s| {
                s.iter()
                    .map(|k| k.map(|k| crisis_indicator(k, k_max)).transpose())
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let n_pairs = per_pair.len();
        let column = |t: usize| per_pair.iter().map(|s| s[t]).collect::<Vec<_>>();
        let global_mean = (0..labels.len()).map(|t| aggregate(&column(t), Aggregation::Mean)).collect();
        let global_median = (0..labels.len()).map(|t| aggregate(&column(t), Aggregation::Median)).collect();
        let coverage = (0..labels.len())
            .map(|t| column(t).iter().flatten().count() as f64 / n_pairs as f64)
            .collect();
        Ok(CrisisSeries {
            labels,
            pair_names,
            per_pair,
            global_mean,
            global_median,
            coverage,
            k_max,
        })
    }

    pub fn global(&self, method: Aggregation) -> &[Option<f64>] {
        match method {
            Aggregation::Mean => &self.global_mean,
            Aggregation::Median => &self.global_median,
        }
    }

    /// Columns: date, CI_<pair>…, global_mean, global_median, coverage.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["date".to_string()];
        header.extend(self.pair_names.iter().map(|n| format!("CI_{n}")));
        header.extend(["global_mean".into(), "global_median".into(), "coverage".into()]);
        w.write_record(&header)?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        for (t, label) in self.labels.iter().enumerate() {
            let mut rec = vec![label.to_string()];
            rec.extend(self.per_pair.iter().map(|s| fmt(s[t])));
            rec.push(fmt(self.global_mean[t]));
            rec.push(fmt(self.global_median[t]));
            rec.push(format!("{}", self.coverage[t]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_and_interior_values() {
        assert_eq!(crisis_indicator(1, 6).unwrap(), 1.0);
        assert_eq!(crisis_indicator(6, 6).unwrap(), 0.0);
        assert!((crisis_indicator(3, 6).unwrap() - 0.6).abs() < 1e-15);
        assert!(matches!(crisis_indicator(0, 6), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(crisis_indicator(7, 6), Err(Error::IndexOutOfRange { .. })));
        assert!(crisis_indicator(1, 1).is_err());
    }

    #[test]
    fn nine_calm_pairs_and_one_crisis() {
        let mut ks = vec![Some(6); 9];
        ks.push(Some(1));
        let vals: Vec<_> = ks.iter().map(|k| Some(crisis_indicator(k.unwrap(), 6).unwrap())).collect();
        assert!((aggregate(&vals, Aggregation::Mean).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(aggregate(&vals, Aggregation::Median).unwrap(), 0.0);
    }

    #[test]
    fn series_with_missing_pair_reports_coverage() {
        let labels: Vec<_> = (0..3).map(TimeLabel::Index).collect();
        let ks = vec![vec![Some(1), Some(6), None], vec![Some(1), Some(6), Some(3)]];
        let s = CrisisSeries::from_indices(labels, vec!["a-b".into(), "a-c".into()], &ks, 6).unwrap();
        assert_eq!(s.global_mean, vec![Some(1.0), Some(0.0), Some(0.6)]);
        assert_eq!(s.coverage, vec![1.0, 1.0, 0.5]);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("date,CI_a-b,CI_a-c,global_mean,global_median,coverage\n"));
        assert!(text.contains("\n2,,0.6,0.6,0.6,0.5\n"));
        assert!(matches!(
            CrisisSeries::from_indices(vec![], vec![], &[], 6),
            Err(Error::EmptyPairSet)
        ));
    }

    #[test]
    fn closed_form_matches_mean() {
        let ks = [1, 2, 6, 4, 4, 3];
        let mean = aggregate(
            &ks.iter().map(|&k| Some(crisis_indicator(k, 6).unwrap())).collect::<Vec<_>>(),
            Aggregation::Mean,
        )
        .unwrap();
        assert!((mean - global_mean_closed_form(&ks, 6).unwrap()).abs() < 1e-12);
    }
}
