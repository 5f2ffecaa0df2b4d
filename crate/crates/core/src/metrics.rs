//! Evaluation metrics: Dice overlap, prompt accuracy, normalized landmark
//! distance, multiple correlation and per-task report aggregation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::correspondence::Match;
use crate::error::{Error, Result};
use crate::model::{Mask, Point, Polarity};

fn check_same_dims(a: &Mask, b: &Mask) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch(format!(
            "mask {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// `2|A ∩ B| / (|A| + |B|)`, and 1.0 when both masks are empty.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    check_same_dims(a, b)?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        na += usize::from(x);
        nb += usize::from(y);
        inter += usize::from(x && y);
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Fraction of positive prompts landing inside the ground-truth mask and of
/// negative prompts landing outside it.
///
/// A polarity with no prompts reports 1.0 with count 0; check `*_vacuous`
/// before averaging.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptAccuracy {
    pub positive: f64,
    pub negative: f64,
    pub n: usize,
    pub m: usize,
}

impl PromptAccuracy {
    pub fn positive_vacuous(&self) -> bool {
        self.n == 0
    }

    pub fn negative_vacuous(&self) -> bool {
        self.m == 0
    }

    pub fn positive_value(&self) -> Option<f64> {
        (!self.positive_vacuous()).then_some(self.positive)
    }

    pub fn negative_value(&self) -> Option<f64> {
        (!self.negative_vacuous()).then_some(self.negative)
    }
}

pub fn prompt_accuracy(matches: &[Match], gt: &Mask) -> Result<PromptAccuracy> {
    let (h, w) = gt.dims();
    let (mut n, mut m, mut pos_hits, mut neg_hits) = (0usize, 0usize, 0usize, 0usize);
    for mt in matches {
        mt.target.check_bounds(h, w)?;
        let inside = gt.contains(mt.target);
        match mt.polarity {
            Polarity::Positive => {
                n += 1;
                pos_hits += usize::from(inside);
            }
            Polarity::Negative => {
                m += 1;
                neg_hits += usize::from(!inside);
            }
        }
    }
    let frac = |hits: usize, total: usize| {
        if total == 0 {
            1.0
        } else {
            hits as f64 / total as f64
        }
    };
    Ok(PromptAccuracy {
        positive: frac(pos_hits, n),
        negative: frac(neg_hits, m),
        n,
        m,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationError {
    pub per_landmark: Vec<f64>,
    pub mean: f64,
    pub normalizer: f64,
}

/// Euclidean landmark distances divided by the image diagonal, then averaged.
pub fn localization_error(matches: &[Match], gt_points: &[Point], dims: (usize, usize)) -> Result<LocalizationError> {
    if matches.len() != gt_points.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predicted vs {} ground-truth landmarks",
            matches.len(),
            gt_points.len()
        )));
    }
    if matches.is_empty() {
        return Err(Error::InvalidArgument("no landmarks".into()));
    }
    let (h, w) = dims;
    let normalizer = ((h * h + w * w) as f64).sqrt();
    let mut per_landmark = Vec::with_capacity(matches.len());
    for (m, g) in matches.iter().zip(gt_points) {
        m.target.check_bounds(h, w)?;
        g.check_bounds(h, w)?;
        let dr = m.target.row as f64 - g.row as f64;
        let dc = m.target.col as f64 - g.col as f64;
        per_landmark.push(dr.hypot(dc) / normalizer);
    }
    let mean = per_landmark.iter().sum::<f64>() / per_landmark.len() as f64;
    Ok(LocalizationError {
        per_landmark,
        mean,
        normalizer,
    })
}

/// Multiple correlation `R` of the least-squares fit
/// `dice ≈ b0 + b1 * acc_pos + b2 * acc_neg`. Zero-variance `dice` gives 0.
pub fn multiple_correlation(acc_pos: &[f64], acc_neg: &[f64], dice: &[f64]) -> Result<f64> {
    let n = dice.len();
    if acc_pos.len() != n || acc_neg.len() != n {
        return Err(Error::LengthMismatch(format!(
            "acc_pos {}, acc_neg {}, dice {}",
            acc_pos.len(),
            acc_neg.len(),
            n
        )));
    }
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "multiple correlation needs at least 3 samples, got {n}"
        )));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (my, m1, m2) = (mean(dice), mean(acc_pos), mean(acc_neg));
    let y = DVector::from_iterator(n, dice.iter().map(|v| v - my));
    let ss_tot = y.norm_squared();
    if ss_tot == 0.0 {
        return Ok(0.0);
    }
    let x = DMatrix::from_fn(n, 2, |i, j| {
        if j == 0 {
            acc_pos[i] - m1
        } else {
            acc_neg[i] - m2
        }
    });
    // minimum-norm solution covers collinear or constant regressors
    let beta = x
        .clone()
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| Error::InvalidArgument(format!("least squares failed: {e}")))?;
    let residual = &y - &x * beta;
    let r2 = 1.0 - residual.norm_squared() / ss_tot;
    Ok(r2.clamp(0.0, 1.0).sqrt())
}

/// Upper bound for an "acceptable" normalized landmark distance.
pub const NED_ACCEPTABLE_BELOW: f64 = 0.05;
/// Lower bound for a "worse" normalized landmark distance.
pub const NED_WORSE_ABOVE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NedFlag {
    Acceptable,
    Intermediate,
    Worse,
}

impl NedFlag {
    pub fn classify(ned: f64) -> Self {
        if ned < NED_ACCEPTABLE_BELOW {
            NedFlag::Acceptable
        } else if ned > NED_WORSE_ABOVE {
            NedFlag::Worse
        } else {
            NedFlag::Intermediate
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NedFlag::Acceptable => "acceptable",
            NedFlag::Intermediate => "intermediate",
            NedFlag::Worse => "worse",
        }
    }
}

/// Metrics for one (task, model, target) cell. `failure` is set when the
/// cell could not be evaluated; metric fields are then empty.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TargetMetrics {
    pub task: String,
    pub model: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dice: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc_pos: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc_neg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ned: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl TargetMetrics {
    pub fn failed(task: &str, model: &str, target: &str, reason: impl Into<String>) -> Self {
        Self {
            task: task.into(),
            model: model.into(),
            target: target.into(),
            failure: Some(reason.into()),
            ..Default::default()
        }
    }

    pub fn status(&self) -> String {
        match &self.failure {
            None => "ok".into(),
            Some(reason) => format!("failed: {reason}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: String,
    pub model: String,
    pub n_targets: usize,
    pub n_failed: usize,
    pub dice_mean: Option<f64>,
    pub acc_pos_mean: Option<f64>,
    pub acc_neg_mean: Option<f64>,
    pub ned_mean: Option<f64>,
    pub ned_flag: Option<NedFlag>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

pub const REPORT_COLUMNS: [&str; 8] = [
    "task",
    "model",
    "n_targets",
    "dice_mean",
    "acc_pos_mean",
    "acc_neg_mean",
    "ned_mean",
    "ned_flag",
];

fn opt_mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, count) = values
        .flatten()
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Groups cells by (task, model) in first-seen order and averages every
/// metric over the successful cells that report it.
pub fn aggregate_report(cells: &[TargetMetrics]) -> Report {
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for c in cells {
        let key = (c.task.as_str(), c.model.as_str());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let rows = keys
        .into_iter()
        .map(|(task, model)| {
            let group: Vec<&TargetMetrics> = cells
                .iter()
                .filter(|c| c.task == task && c.model == model)
                .collect();
            let ok: Vec<&TargetMetrics> = group.iter().copied().filter(|c| c.failure.is_none()).collect();
            let ned_mean = opt_mean(ok.iter().map(|c| c.ned));
            ReportRow {
                task: task.to_owned(),
                model: model.to_owned(),
                n_targets: ok.len(),
                n_failed: group.len() - ok.len(),
                dice_mean: opt_mean(ok.iter().map(|c| c.dice)),
                acc_pos_mean: opt_mean(ok.iter().map(|c| c.acc_pos)),
                acc_neg_mean: opt_mean(ok.iter().map(|c| c.acc_neg)),
                ned_mean,
                ned_flag: ned_mean.map(NedFlag::classify),
            }
        })
        .collect();
    Report { rows }
}

impl Report {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io_err = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
        w.write_record(REPORT_COLUMNS).map_err(io_err)?;
        for r in &self.rows {
            w.write_record([
                r.task.clone(),
                r.model.clone(),
                r.n_targets.to_string(),
                fmt_opt(r.dice_mean),
                fmt_opt(r.acc_pos_mean),
                fmt_opt(r.acc_neg_mean),
                fmt_opt(r.ned_mean),
                r.ned_flag.map(|f| f.as_str().to_owned()).unwrap_or_default(),
            ])
            .map_err(io_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// One line per cell with its status, for auditing failures.
pub fn cells_csv(cells: &[TargetMetrics]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io_err = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
    w.write_record(["task", "model", "target", "status", "dice", "acc_pos", "acc_neg", "ned"])
        .map_err(io_err)?;
    for c in cells {
        w.write_record([
            c.task.clone(),
            c.model.clone(),
            c.target.clone(),
            c.status(),
            fmt_opt(c.dice),
            fmt_opt(c.acc_pos),
            fmt_opt(c.acc_neg),
            fmt_opt(c.ned),
        ])
        .map_err(io_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
