//! Error metrics, Table-style aggregation and the CSV report.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean squared error `(1/n)·Σ(real − prediction)²`.
pub fn mse(real: &[f64], prediction: &[f64]) -> Result<f64> {
    if real.len() != prediction.len() {
        return Err(Error::Length {
            left: real.len(),
            right: prediction.len(),
        });
    }
    if real.is_empty() {
        return Err(Error::EmptySeries);
    }
    let sum: f64 = real.iter().zip(prediction).map(|(r, p)| (r - p) * (r - p)).sum();
    Ok(sum / real.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub max: f64,
    pub min: f64,
    pub ave: f64,
}

pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(Error::EmptySeries);
    }
    Ok(Aggregate {
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        ave: values.iter().sum::<f64>() / values.len() as f64,
    })
}

/// Population variance; 0 for fewer than two values.
pub fn series_variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Per-turbine MSE of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    /// Source-registry turbine id, in canonical order.
    pub turbine_ids: Vec<i64>,
    pub mse: Vec<f64>,
    /// Wall-clock training seconds; only ever written to the timing file.
    pub train_seconds: f64,
}

impl MethodResult {
    /// `predictions[i]` and `targets[i]` are turbine `i`'s series.
    pub fn from_series(
        method: impl Into<String>,
        turbine_ids: &[i64],
        predictions: &[Vec<f64>],
        targets: &[Vec<f64>],
        train_seconds: f64,
    ) -> Result<Self> {
        if predictions.len() != turbine_ids.len() || targets.len() != turbine_ids.len() {
            return Err(Error::Length {
                left: predictions.len().max(targets.len()),
                right: turbine_ids.len(),
            });
        }
        let mse = targets
            .iter()
            .zip(predictions)
            .map(|(t, p)| mse(t, p))
            .collect::<Result<_>>()?;
        Ok(Self {
            method: method.into(),
            turbine_ids: turbine_ids.to_vec(),
            mse,
            train_seconds,
        })
    }

    pub fn aggregate(&self) -> Result<Aggregate> {
        aggregate(&self.mse)
    }
}

/// Relative MSE reduction of a candidate against a reference method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub reference: String,
    pub candidate: String,
    pub turbine_ids: Vec<i64>,
    /// `(ref − cand) / ref` per turbine; `None` where the reference MSE is 0.
    pub ratios: Vec<Option<f64>>,
    pub mean_ratio: f64,
    pub max_ratio: f64,
    /// `(AVE_ref − AVE_cand) / AVE_ref` over all turbines.
    pub ratio_of_means: f64,
    pub fraction_negative: f64,
    pub excluded: usize,
}

pub fn improvement(reference: &MethodResult, candidate: &MethodResult) -> Result<Improvement> {
    if reference.turbine_ids != candidate.turbine_ids {
        return Err(Error::config(format!(
            "{} and {} cover different turbines",
            reference.method, candidate.method
        )));
    }
    let ratios: Vec<Option<f64>> = reference
        .mse
        .iter()
        .zip(&candidate.mse)
        .map(|(&r, &c)| (r > 0.0).then(|| (r - c) / r))
        .collect();
    let defined: Vec<f64> = ratios.iter().flatten().copied().collect();
    let excluded = ratios.len() - defined.len();
    if excluded > 0 {
        log::info!("{excluded} turbines with zero {} MSE excluded from ratios", reference.method);
    }
    let (mean_ratio, max_ratio, fraction_negative) = if defined.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        let agg = aggregate(&defined)?;
        let neg = defined.iter().filter(|&&p| p < 0.0).count() as f64 / defined.len() as f64;
        (agg.ave, agg.max, neg)
    };
    let ra = reference.aggregate()?.ave;
    let ca = candidate.aggregate()?.ave;
    Ok(Improvement {
        reference: reference.method.clone(),
        candidate: candidate.method.clone(),
        turbine_ids: reference.turbine_ids.clone(),
        ratios,
        mean_ratio,
        max_ratio,
        ratio_of_means: if ra > 0.0 { (ra - ca) / ra } else { f64::NAN },
        fraction_negative,
        excluded,
    })
}

/// Histogram of `values` as `(bin centre, probability density)` with bins
/// `[k·w, (k+1)·w)`; empty input gives no bins.
pub fn density(values: &[f64], bin_width: f64) -> Result<Vec<(f64, f64)>> {
    if !(bin_width > 0.0) {
        return Err(Error::config("bin width must be positive"));
    }
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Ok(Vec::new());
    }
    let bin = |v: f64| (v / bin_width).floor() as i64;
    let lo = finite.iter().map(|&v| bin(v)).min().expect("non-empty");
    let hi = finite.iter().map(|&v| bin(v)).max().expect("non-empty");
    let mut counts = vec![0usize; (hi - lo + 1) as usize];
    for &v in &finite {
        counts[(bin(v) - lo) as usize] += 1;
    }
    let n = finite.len() as f64;
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| ((lo + i as i64) as f64 * bin_width + bin_width / 2.0, c as f64 / (n * bin_width)))
        .collect())
}

/// MAX/MIN/AVE rows by method columns, `decimals` places, as CSV.
pub fn render_table(results: &[MethodResult], decimals: usize) -> Result<String> {
    let aggs: Vec<Aggregate> = results.iter().map(MethodResult::aggregate).collect::<Result<_>>()?;
    let mut out = String::from("stat");
    for r in results {
        out.push(',');
        out.push_str(&r.method);
    }
    out.push('\n');
    for (label, get) in [
        ("MAX", (|a: &Aggregate| a.max) as fn(&Aggregate) -> f64),
        ("MIN", |a| a.min),
        ("AVE", |a| a.ave),
    ] {
        out.push_str(label);
        for a in &aggs {
            write!(out, ",{:.*}", decimals, get(a)).expect("string write");
        }
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportOptions {
    pub bin_width: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { bin_width: 0.05 }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
}

/// Writes `comparison.csv`, `table.csv`, `mse_distribution.csv`,
/// `improvement.csv`, `improvement_summary.csv`, `improvement_density.csv`
/// and `timing.csv`. Rows follow the order of `results`, then turbine order.
pub fn report(
    results: &[MethodResult],
    improvements: &[Improvement],
    out_dir: &Path,
    options: &ReportOptions,
) -> Result<()> {
    if results.is_empty() {
        return Err(Error::config("nothing to report"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut comparison = String::from("method,max,min,ave\n");
    let mut timing = String::from("method,train_seconds\n");
    let mut dist = String::from("method,turbine_id,mse\n");
    for r in results {
        let a = r.aggregate()?;
        writeln!(comparison, "{},{:.6},{:.6},{:.6}", r.method, a.max, a.min, a.ave).expect("string write");
        writeln!(timing, "{},{:.3}", r.method, r.train_seconds).expect("string write");
        for (id, m) in r.turbine_ids.iter().zip(&r.mse) {
            writeln!(dist, "{},{id},{m}", r.method).expect("string write");
        }
    }

    let mut imp = String::from("reference,candidate,turbine_id,ratio\n");
    let mut summary =
        String::from("reference,candidate,mean_ratio,max_ratio,ratio_of_means,fraction_negative,excluded\n");
    let mut dens = String::from("reference,candidate,bin_center,density\n");
    for i in improvements {
        for (id, p) in i.turbine_ids.iter().zip(&i.ratios) {
            writeln!(imp, "{},{},{id},{}", i.reference, i.candidate, fmt_opt(*p)).expect("string write");
        }
        writeln!(
            summary,
            "{},{},{:.6},{:.6},{:.6},{:.6},{}",
            i.reference, i.candidate, i.mean_ratio, i.max_ratio, i.ratio_of_means, i.fraction_negative, i.excluded
        )
        .expect("string write");
        let defined: Vec<f64> = i.ratios.iter().flatten().copied().collect();
        for (c, d) in density(&defined, options.bin_width)? {
            writeln!(dens, "{},{},{c},{d}", i.reference, i.candidate).expect("string write");
        }
    }

    write_file(out_dir, "comparison.csv", &comparison)?;
    write_file(out_dir, "table.csv", &render_table(results, 2)?)?;
    write_file(out_dir, "mse_distribution.csv", &dist)?;
    write_file(out_dir, "improvement.csv", &imp)?;
    write_file(out_dir, "improvement_summary.csv", &summary)?;
    write_file(out_dir, "improvement_density.csv", &dens)?;
    write_file(out_dir, "timing.csv", &timing)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(method: &str, mse: &[f64]) -> MethodResult {
        MethodResult {
            method: method.into(),
            turbine_ids: (0..mse.len() as i64).collect(),
            mse: mse.to_vec(),
            train_seconds: 0.0,
        }
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(matches!(mse(&[1.0], &[1.0, 2.0]), Err(Error::Length { left: 1, right: 2 })));
        assert!(matches!(mse(&[], &[]), Err(Error::EmptySeries)));
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(
            aggregate(&[1.0, 3.0]).unwrap(),
            Aggregate {
                max: 3.0,
                min: 1.0,
                ave: 2.0
            }
        );
        let one = aggregate(&[4.5]).unwrap();
        assert_eq!((one.max, one.min, one.ave), (4.5, 4.5, 4.5));
    }

    #[test]
    fn improvement_examples() {
        let i = improvement(&result("ref", &[10.0]), &result("cand", &[7.5])).unwrap();
        assert_eq!(i.ratios, vec![Some(0.25)]);
        let same = improvement(&result("a", &[1.0, 2.0]), &result("b", &[1.0, 2.0])).unwrap();
        assert_eq!(same.ratios, vec![Some(0.0), Some(0.0)]);
        let z = improvement(&result("a", &[0.0, 2.0]), &result("b", &[1.0, 3.0])).unwrap();
        assert_eq!(z.excluded, 1);
        assert_eq!(z.ratios[0], None);
        assert_eq!(z.fraction_negative, 1.0);
        assert!(improvement(&result("a", &[1.0]), &result("b", &[1.0, 2.0])).is_err());
    }

    #[test]
    fn density_integrates_to_one() {
        let d = density(&[0.01, 0.02, 0.12, -0.03], 0.05).unwrap();
        let total: f64 = d.iter().map(|(_, p)| p * 0.05).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(d.len(), 4);
        assert!((d[0].0 + 0.025).abs() < 1e-12);
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let rs = [result("A", &[1.0, 2.0, 3.0]), result("B", &[0.5, 1.0, 4.0])];
        let imp = [improvement(&rs[0], &rs[1]).unwrap()];
        report(&rs, &imp, dir.path(), &ReportOptions::default()).unwrap();
        let read = |n: &str| std::fs::read_to_string(dir.path().join(n)).unwrap();
        assert_eq!(read("comparison.csv").lines().count(), 3);
        assert_eq!(read("mse_distribution.csv").lines().count(), 7);
        assert_eq!(read("improvement.csv").lines().count(), 4);
        let first = read("comparison.csv");
        report(&rs, &imp, dir.path(), &ReportOptions::default()).unwrap();
        assert_eq!(read("comparison.csv"), first);
        assert!(report(&[], &[], dir.path(), &ReportOptions::default()).is_err());
    }
}
