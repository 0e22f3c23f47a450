//! Evaluation statistics: MSE, Spearman correlation, run aggregation and
//! one-tailed pooled two-sample Student t-tests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "higher" | "higher_better" | "higher-better" => Ok(Direction::HigherBetter),
            "lower" | "lower_better" | "lower-better" => Ok(Direction::LowerBetter),
            other => Err(Error::Config(format!("unknown direction `{other}` (expected higher or lower)"))),
        }
    }
}

/// One metric across seeded runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSeries {
    pub label: String,
    pub values: Vec<f64>,
    pub direction: Direction,
}

impl RunSeries {
    pub fn new(label: impl Into<String>, values: Vec<f64>, direction: Direction) -> Self {
        RunSeries {
            label: label.into(),
            values,
            direction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sum_sq_dev(values: &[f64], m: f64) -> f64 {
    values.iter().map(|v| (v - m).powi(2)).sum()
}

pub fn mse(pred: &[f64], gold: &[f64]) -> Result<f64> {
    if pred.len() != gold.len() || pred.is_empty() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gold.len(),
        });
    }
    Ok(pred.iter().zip(gold).map(|(p, g)| (p - g).powi(2)).sum::<f64>() / pred.len() as f64)
}

/// 1-based ranks with ties replaced by the mean of the ranks they span.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let (mx, my) = (mean(x), mean(y));
    let (sxx, syy) = (sum_sq_dev(x, mx), sum_sq_dev(y, my));
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation with zero rank variance".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation of tie-averaged ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Undefined("spearman needs at least two observations".into()));
    }
    pearson(&fractional_ranks(x), &fractional_ranks(y))
}

/// Mean and sample standard deviation (n − 1 denominator).
pub fn aggregate(series: &RunSeries) -> Result<(f64, f64)> {
    let n = series.values.len();
    if n < 2 {
        return Err(Error::Undefined(format!(
            "standard deviation of `{}` needs at least two runs, got {n}",
            series.label
        )));
    }
    let m = mean(&series.values);
    Ok((m, (sum_sq_dev(&series.values, m) / (n - 1) as f64).sqrt()))
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0 (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

const CF_MAX_ITER: usize = 500;
const CF_EPS: f64 = 1e-15;
const CF_TINY: f64 = 1e-300;

/// Continued fraction for I_x(a, b), modified Lentz.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let clamp = |v: f64| if v.abs() < CF_TINY { CF_TINY } else { v };
    let mut c = 1.0;
    let mut d = 1.0 / clamp(1.0 - qab * x / qap);
    let mut f = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let even = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / clamp(1.0 + even * d);
        c = clamp(1.0 + even / c);
        f *= d * c;
        let odd = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / clamp(1.0 + odd * d);
        c = clamp(1.0 + odd / c);
        let delta = d * c;
        f *= delta;
        if (delta - 1.0).abs() < CF_EPS {
            break;
        }
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    ln_front.exp() * f / a
}

/// Regularized incomplete beta function I_x(a, b).
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    if x > (a + 1.0) / (a + b + 2.0) {
        1.0 - beta_cf(b, a, 1.0 - x)
    } else {
        beta_cf(a, b, x)
    }
}

/// P(T ≤ t) for Student's t with `df` degrees of freedom.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t == f64::INFINITY {
        return 1.0;
    }
    if t == f64::NEG_INFINITY {
        return 0.0;
    }
    let x = df / (df + t * t);
    let tail = 0.5 * inc_beta(df / 2.0, 0.5, x);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Pooled-variance two-sample t-test, one-tailed in the direction in which
/// the treatment improves on the baseline.
///
/// `t = (mean(baseline) − mean(treatment)) / (s_p·√(1/n₁ + 1/n₂))`. For a
/// higher-is-better metric the p-value is `P(T ≤ t)`, for lower-is-better it
/// is `P(T ≥ t)`.
pub fn t_test_one_tailed(baseline: &RunSeries, treatment: &RunSeries) -> Result<TTestResult> {
    if baseline.direction != treatment.direction {
        return Err(Error::Config(format!(
            "`{}` and `{}` disagree on metric direction",
            baseline.label, treatment.label
        )));
    }
    let (n1, n2) = (baseline.values.len(), treatment.values.len());
    if n1 < 2 || n2 < 2 {
        return Err(Error::Undefined(format!("t-test needs at least two runs per series, got {n1} and {n2}")));
    }
    let (m1, m2) = (mean(&baseline.values), mean(&treatment.values));
    let df = n1 + n2 - 2;
    let pooled_var = (sum_sq_dev(&baseline.values, m1) + sum_sq_dev(&treatment.values, m2)) / df as f64;
    let diff = m1 - m2;
    let t = if pooled_var == 0.0 {
        if diff != 0.0 {
            return Err(Error::Undefined(format!(
                "zero pooled variance with unequal means ({m1} vs {m2})"
            )));
        }
        0.0
    } else {
        diff / (pooled_var.sqrt() * (1.0 / n1 as f64 + 1.0 / n2 as f64).sqrt())
    };
    let p = match baseline.direction {
        Direction::HigherBetter => t_cdf(t, df as f64),
        Direction::LowerBetter => t_cdf(-t, df as f64),
    };
    Ok(TTestResult {
        t_statistic: t,
        df,
        p_value: p.clamp(0.0, 1.0),
    })
}

#[derive(Debug, Deserialize)]
struct RunRow {
    #[allow(dead_code)]
    run: String,
    metric: String,
    value: f64,
}

/// Reads a `run,metric,value` CSV into per-metric value lists (file order).
pub fn load_runs(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<f64>>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for row in reader.deserialize::<RunRow>() {
        let row = row.map_err(|e| csv_error(path, e))?;
        out.entry(row.metric).or_default().push(row.value);
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Malformed {
            path: path.to_owned(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

/// Writes a `run,metric,value` CSV.
pub fn write_runs(path: impl AsRef<Path>, metric: &str, values: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["run", "metric", "value"]).map_err(|e| csv_error(path, e))?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([i.to_string(), metric.to_owned(), format!("{v:?}")])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ReportRow {
    TTest { label: String, result: TTestResult },
    Aggregate { label: String, mean: f64, sd: f64, n: usize },
}

/// Rounds half away from zero to four decimals and never prints `-0.0000`.
pub fn format4(x: f64) -> String {
    let r = (x * 1e4).round() / 1e4;
    let r = if r == 0.0 { 0.0 } else { r };
    format!("{r:.4}")
}

const REPORT_HEADER: [&str; 5] = ["model", "kind", "t / mean", "p / sd", "df / n"];

fn report_cells(row: &ReportRow) -> [String; 5] {
    match row {
        ReportRow::TTest { label, result } => [
            label.clone(),
            "t-test".into(),
            format4(result.t_statistic),
            format4(result.p_value),
            result.df.to_string(),
        ],
        ReportRow::Aggregate { label, mean, sd, n } => [
            label.clone(),
            "mean/sd".into(),
            format4(*mean),
            format4(*sd),
            n.to_string(),
        ],
    }
}

/// Fixed-width table: header line plus one line per row.
pub fn render_report(rows: &[ReportRow]) -> String {
    let cells: Vec<[String; 5]> = rows.iter().map(report_cells).collect();
    let label_width = cells
        .iter()
        .map(|c| c[0].chars().count())
        .chain([24])
        .max()
        .unwrap_or(24);
    let mut out = String::new();
    let mut line = |c: [&str; 5]| {
        let _ = writeln!(
            out,
            "{:<lw$}  {:<8}  {:>10}  {:>10}  {:>6}",
            c[0],
            c[1],
            c[2],
            c[3],
            c[4],
            lw = label_width
        );
    };
    line(REPORT_HEADER);
    for c in &cells {
        line([&c[0], &c[1], &c[2], &c[3], &c[4]]);
    }
    out
}

pub fn render_csv(rows: &[ReportRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let _ = w.write_record(["model", "kind", "statistic", "value", "df_or_n"]);
    for row in rows {
        let _ = w.write_record(report_cells(row));
    }
    String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    fn series(values: &[f64], direction: Direction) -> RunSeries {
        RunSeries::new("s", values.to_vec(), direction)
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!((mse(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(fractional_ranks(&[1.0, 2.0, 2.0, 4.0]), [1.0, 2.5, 2.5, 4.0]);
        assert_eq!(fractional_ranks(&[3.0, 3.0, 3.0]), [2.0, 2.0, 2.0]);
        assert_eq!(fractional_ranks(&[5.0, 1.0]), [2.0, 1.0]);
    }

    #[test]
    fn spearman_cases() {
        let x: Vec<f64> = (1..=8).map(f64::from).collect();
        let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
        assert!((spearman(&x, &sq).unwrap() - 1.0).abs() < 1e-12);
        let rev: Vec<f64> = x.iter().rev().copied().collect();
        assert!((spearman(&x, &rev).unwrap() + 1.0).abs() < 1e-12);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(spearman(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn spearman_tie_fixture() {
        // ranks x = [1, 2.5, 2.5, 4], y = [1, 3, 2, 4], both centred on 2.5:
        // sxy = 2.25 + 2.25 = 4.5, sxx = 4.5, syy = 5.0.
        let expected = 4.5 / (4.5f64 * 5.0).sqrt();
        let r = spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - expected).abs() < 1e-9);
    }

    #[test]
    fn aggregate_cases() {
        assert_eq!(aggregate(&series(&[2.0, 2.0, 2.0], Direction::HigherBetter)).unwrap(), (2.0, 0.0));
        let (m, s) = aggregate(&series(&[1.0, 3.0], Direction::HigherBetter)).unwrap();
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
        assert!(aggregate(&series(&[1.0], Direction::HigherBetter)).is_err());
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-13);
        assert!(ln_gamma(2.0).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn t_cdf_symmetry_point() {
        for df in [1.0, 2.0, 5.0, 18.0, 100.0] {
            assert_eq!(t_cdf(0.0, df), 0.5);
        }
    }

    #[test]
    fn t_cdf_closed_forms() {
        // df = 1 is Cauchy; df = 2 has F(t) = 1/2 + t / (2 sqrt(2 + t^2)).
        for t in [-3.0, -0.5, 0.25, 1.0, 7.5] {
            let cauchy = 0.5 + f64::atan(t) / std::f64::consts::PI;
            assert!((t_cdf(t, 1.0) - cauchy).abs() < 1e-12, "df=1 t={t}");
            let df2 = 0.5 + t / (2.0 * (2.0 + t * t).sqrt());
            assert!((t_cdf(t, 2.0) - df2).abs() < 1e-12, "df=2 t={t}");
        }
    }

    #[test]
    fn t_cdf_matches_statrs() {
        for df in [1.0, 3.0, 10.0, 18.0, 60.0, 500.0] {
            let dist = StudentsT::new(0.0, 1.0, df).unwrap();
            for t in [-12.0, -8.0708, -2.1, -0.3866, 0.0, 0.2545, 1.7, 4.0, 30.0] {
                let got = t_cdf(t, df);
                assert!((got - dist.cdf(t)).abs() < 1e-10, "df={df} t={t}: {got} vs {}", dist.cdf(t));
            }
        }
    }

    #[test]
    fn t_cdf_reported_cells() {
        assert!((t_cdf(-0.3866, 18.0) - 0.3518).abs() < 5e-4);
        assert!((t_cdf(0.2545, 18.0) - 0.5990).abs() < 5e-4);
        assert!((1.0 - t_cdf(-0.5016, 18.0) - 0.6890).abs() < 5e-4);
        assert!(t_cdf(-8.0708, 18.0) <= 5e-7);
    }

    #[test]
    fn identical_series() {
        let a = series(&[0.9, 0.91, 0.92, 0.9], Direction::HigherBetter);
        let r = t_test_one_tailed(&a, &a).unwrap();
        assert_eq!(r.t_statistic, 0.0);
        assert_eq!(r.p_value, 0.5);
        assert_eq!(r.df, 6);
    }

    #[test]
    fn degenerate_variance() {
        let a = series(&[1.0, 1.0], Direction::HigherBetter);
        let b = series(&[2.0, 2.0], Direction::HigherBetter);
        assert!(t_test_one_tailed(&a, &b).is_err());
        let r = t_test_one_tailed(&a, &a).unwrap();
        assert_eq!((r.t_statistic, r.p_value), (0.0, 0.5));
    }

    #[test]
    fn unequal_sizes_allowed() {
        let a = series(&[1.0, 2.0, 3.0], Direction::LowerBetter);
        let b = series(&[1.5, 2.5, 3.5, 4.0, 2.0], Direction::LowerBetter);
        assert_eq!(t_test_one_tailed(&a, &b).unwrap().df, 6);
    }

    #[test]
    fn mixed_directions_rejected() {
        let a = series(&[1.0, 2.0], Direction::LowerBetter);
        let b = series(&[1.0, 2.0], Direction::HigherBetter);
        assert!(t_test_one_tailed(&a, &b).is_err());
    }

    #[test]
    fn formatting_rounds_half_away() {
        assert_eq!(format4(0.00005), "0.0001");
        assert_eq!(format4(-0.00005), "-0.0001");
        assert_eq!(format4(-0.00001), "0.0000");
        assert_eq!(format4(3e-9), "0.0000");
        assert_eq!(format4(-0.3866), "-0.3866");
    }

    #[test]
    fn report_layout() {
        assert_eq!(render_report(&[]).lines().count(), 1);
        let rows: Vec<ReportRow> = ["K-BERT", "ALIAS", "CAT"]
            .iter()
            .map(|l| ReportRow::TTest {
                label: l.to_string(),
                result: TTestResult {
                    t_statistic: -0.38664,
                    df: 18,
                    p_value: 0.35181,
                },
            })
            .collect();
        let text = render_report(&rows);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("K-BERT"));
        assert!(lines[1].contains("-0.3866") && lines[1].contains("0.3518"));
        assert!(lines.iter().all(|l| l.len() == lines[0].len()));
        assert_eq!(render_csv(&rows).lines().count(), 4);
    }

    #[test]
    fn run_file_roundtrip() {
        let f = tempfile::NamedTempFile::new().unwrap();
        write_runs(f.path(), "accuracy", &[0.9, 0.95, 0.925]).unwrap();
        let runs = load_runs(f.path()).unwrap();
        assert_eq!(runs["accuracy"], [0.9, 0.95, 0.925]);
    }

    proptest! {
        #[test]
        fn cdf_reflection(t in -20.0f64..20.0, df in 1u32..200) {
            let df = f64::from(df);
            prop_assert!((t_cdf(t, df) + t_cdf(-t, df) - 1.0).abs() < 1e-9);
        }

        #[test]
        fn cdf_monotone(a in -15.0f64..15.0, b in -15.0f64..15.0, df in 1u32..100) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(t_cdf(lo, f64::from(df)) <= t_cdf(hi, f64::from(df)) + 1e-15);
        }

        #[test]
        fn t_test_antisymmetric_and_scale_free(
            a in prop::collection::vec(0.0f64..1.0, 3..12),
            b in prop::collection::vec(0.0f64..1.0, 3..12),
            k in 0.1f64..50.0,
        ) {
            let sa = series(&a, Direction::HigherBetter);
            let sb = series(&b, Direction::HigherBetter);
            let ab = t_test_one_tailed(&sa, &sb).unwrap();
            let ba = t_test_one_tailed(&sb, &sa).unwrap();
            prop_assert!((ab.t_statistic + ba.t_statistic).abs() < 1e-9);
            let scale = |v: &[f64]| series(&v.iter().map(|x| x * k).collect::<Vec<_>>(), Direction::HigherBetter);
            let scaled = t_test_one_tailed(&scale(&a), &scale(&b)).unwrap();
            prop_assert!((scaled.t_statistic - ab.t_statistic).abs() < 1e-9);
            prop_assert!((scaled.p_value - ab.p_value).abs() < 1e-9);
        }
    }
}
