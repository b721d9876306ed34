//! Summary tables, slope fits and plot data from a results file.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use gff_core::stats::{fit_proportions, predicted_slope, EstimateRecord, Observable};

use crate::CliError;

/// Allowed distance between fitted and predicted slope.
pub fn slope_tolerance(obs: Observable) -> Option<f64> {
    match obs {
        Observable::OneArm | Observable::CapacityTail => Some(0.15),
        Observable::Crossing => Some(0.25),
        Observable::TwoArm | Observable::TwoArmChiSmall => Some(0.35),
        Observable::TwoArmChiLarge => Some(0.4),
        _ => None,
    }
}

/// Records read from a results file and the number of skipped lines.
pub fn read_results(path: &Path) -> Result<(Vec<EstimateRecord>, usize), CliError> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    let mut skipped = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str(line) {
            Ok(r) => records.push(r),
            Err(e) => {
                log::warn!("skipping malformed line: {e}");
                skipped += 1;
            }
        }
    }
    Ok((records, skipped))
}

/// A series of records sharing everything but the abscissa.
#[derive(Clone, Debug, Serialize)]
pub struct Series {
    pub experiment: String,
    pub group: String,
    pub observable: Option<Observable>,
    pub points: Vec<(f64, EstimateRecord)>,
}

/// Groups records into fit series with their abscissa.
pub fn series(records: &[EstimateRecord]) -> Vec<Series> {
    let mut map: BTreeMap<(String, String), (Option<Observable>, Vec<(f64, EstimateRecord)>)> = BTreeMap::new();
    for r in records {
        let p = &r.params;
        let (group, obs, x) = match r.experiment.as_str() {
            "one-arm" => (
                format!("d={},sign={}", p.d, p.sign.map_or("any".into(), |s| format!("{s:?}").to_lowercase())),
                Some(Observable::OneArm),
                p.n as f64,
            ),
            "crossing" => (
                format!("d={},N={}", p.d, p.n),
                Some(Observable::Crossing),
                p.inner.unwrap_or(0) as f64 / p.n as f64,
            ),
            "two-arm" => match p.chi {
                Some(c) => (
                    format!("d={},N={},chi{}", p.d, p.n, if c <= 1.0 { "<=1" } else { ">=1" }),
                    Some(if c <= 1.0 {
                        Observable::TwoArmChiSmall
                    } else {
                        Observable::TwoArmChiLarge
                    }),
                    c,
                ),
                None => (format!("d={}", p.d), Some(Observable::TwoArm), p.n as f64),
            },
            "four-point" => (format!("d={}", p.d), Some(Observable::FourPoint), p.n as f64),
            "volume" => (
                format!("d={},N={}", p.d, p.n),
                Some(Observable::VolumeTail),
                p.m.unwrap_or(0) as f64,
            ),
            "captail" => (
                format!("d={},N={}", p.d, p.n),
                Some(Observable::CapacityTail),
                p.threshold.unwrap_or(0.0),
            ),
            _ => (format!("d={}", p.d), None, p.n as f64),
        };
        let e = map
            .entry((r.experiment.clone(), group))
            .or_insert_with(|| (obs, Vec::new()));
        e.1.push((x, r.clone()));
    }
    map.into_iter()
        .map(|((experiment, group), (observable, mut points))| {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series {
                experiment,
                group,
                observable,
                points,
            }
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct FitRow {
    pub experiment: String,
    pub group: String,
    pub slope: Option<f64>,
    pub interval_lo: Option<f64>,
    pub interval_hi: Option<f64>,
    pub predicted: Option<f64>,
    pub tolerance: Option<f64>,
    /// PASS, FAIL, or n/a when there is no fit or no tolerance.
    pub verdict: String,
    pub note: String,
}

fn file_stem(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

/// Writes `estimates.csv`, `fits.csv` and one `plot_*.dat` per series into
/// `out`; returns the fit rows and the skipped-line count.
pub fn report(results: &Path, out: &Path) -> Result<(Vec<FitRow>, usize), CliError> {
    let (records, skipped) = read_results(results)?;
    fs::create_dir_all(out)?;
    let mut est = csv::Writer::from_path(out.join("estimates.csv"))?;
    est.write_record([
        "experiment", "d", "n", "inner", "m", "chi", "threshold", "sign", "box_factor", "trials", "successes",
        "estimate", "std_error", "lo", "hi",
    ])?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in &records {
        let p = &r.params;
        est.write_record([
            r.experiment.clone(),
            p.d.to_string(),
            p.n.to_string(),
            opt(p.inner.map(|v| v.to_string())),
            opt(p.m.map(|v| v.to_string())),
            opt(p.chi.map(|v| v.to_string())),
            opt(p.threshold.map(|v| v.to_string())),
            opt(p.sign.map(|s| format!("{s:?}").to_lowercase())),
            p.box_factor.to_string(),
            r.trials.to_string(),
            r.successes.to_string(),
            opt(r.estimate.map(|v| v.to_string())),
            opt(r.std_error.map(|v| v.to_string())),
            opt(r.interval.map(|v| v.0.to_string())),
            opt(r.interval.map(|v| v.1.to_string())),
        ])?;
    }
    est.flush()?;

    let mut rows = Vec::new();
    for s in series(&records) {
        let mut plot = String::from("# x y y_err\n");
        for (x, r) in &s.points {
            if let (Some(y), Some(e)) = (r.estimate, r.std_error) {
                plot.push_str(&format!("{x} {y} {e}\n"));
            }
        }
        fs::write(out.join(format!("plot_{}_{}.dat", file_stem(&s.experiment), file_stem(&s.group))), plot)?;
        let d = s.points[0].1.params.d;
        let predicted = s.observable.map(|o| predicted_slope(o, d));
        let tolerance = s.observable.and_then(slope_tolerance);
        let counts: Vec<(f64, u64, u64)> = s.points.iter().map(|(x, r)| (*x, r.successes, r.trials)).collect();
        let fit = s.observable.map(|_| fit_proportions(&counts));
        let (slope, lo, hi, note) = match fit {
            Some(Ok(f)) => (Some(f.slope), Some(f.interval.0), Some(f.interval.1), String::new()),
            Some(Err(e)) => (None, None, None, e.to_string()),
            None => (None, None, None, "no scaling prediction".into()),
        };
        let verdict = match (slope, predicted, tolerance) {
            (Some(s), Some(p), Some(t)) => if (s - p).abs() <= t { "PASS" } else { "FAIL" }.to_string(),
            _ => "n/a".to_string(),
        };
        rows.push(FitRow {
            experiment: s.experiment,
            group: s.group,
            slope,
            interval_lo: lo,
            interval_hi: hi,
            predicted,
            tolerance,
            verdict,
            note,
        });
    }
    let mut fits = csv::Writer::from_path(out.join("fits.csv"))?;
    fits.write_record([
        "experiment", "group", "slope", "lo", "hi", "predicted", "tolerance", "verdict", "note",
    ])?;
    for r in &rows {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        fits.write_record([
            r.experiment.clone(),
            r.group.clone(),
            f(r.slope),
            f(r.interval_lo),
            f(r.interval_hi),
            f(r.predicted),
            f(r.tolerance),
            r.verdict.clone(),
            r.note.clone(),
        ])?;
    }
    fits.flush()?;
    Ok((rows, skipped))
}
