//! CSV and JSON schemas shared between the library and the command-line
//! front end.
//!
//! Formats:
//! - functional (long): `subject_id,covariate_id,time,value`
//! - scalars (wide): `subject_id,<name>,...`
//! - response: `subject_id,y`
//! - activity: `subject_id,day_index,minute,value` (minute 0..=1439)
//! - L-moment curves: `subject_id,time_hours,L1,L2,L3,L4`
//! - predictions: `subject_id,tau,predicted_quantile`
//!
//! All floating-point output is printed with 12 significant digits so
//! repeated runs are byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::funcdata::{FunctionalDataset, FunctionalSample};
use crate::lmoments::{ActivityRecord, LMomentCurves, MINUTES_PER_DAY};
use crate::model::{FLQRModel, ScalarData, SelectedReport};
use crate::simbench::{MetricsReport, SelectionFrequency};

/// 12-significant-digit scientific notation; deterministic and lossless
/// enough for the documented schemas.
pub fn fmt12(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x:.11e}")
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        file: path.display().to_string(),
        line,
        reason: reason.into(),
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

fn parse_f64(path: &Path, line: usize, field: &str, text: &str) -> Result<f64> {
    text.trim()
        .parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("cannot parse {field} '{text}' as a number")))
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| io_err(path, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(content.as_bytes()).map_err(|e| io_err(path, e))
}

// ---------------------------------------------------------------------------
// Long-format functional CSV
// ---------------------------------------------------------------------------

/// Grid settings for parsing functional CSV files. With `None` fields the
/// domain spans the observed times, and the grid is the shared observation
/// grid when all samples agree on one, otherwise `m` (default 101) uniform
/// points.
#[derive(Debug, Clone, Copy, Default)]
pub struct GridSpec {
    pub domain: Option<(f64, f64)>,
    pub m: Option<usize>,
}

pub fn write_functional_csv(path: &Path, datasets: &[FunctionalDataset]) -> Result<()> {
    let mut out = String::from("subject_id,covariate_id,time,value\n");
    for ds in datasets {
        for s in &ds.samples {
            for (t, v) in s.times.iter().zip(&s.values) {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    s.subject_id,
                    ds.covariate_id,
                    fmt12(*t),
                    fmt12(*v)
                ));
            }
        }
    }
    write_file(path, &out)
}

/// Parse a long-format functional CSV into one dataset per covariate id
/// (covariates ordered by id; subjects in first-appearance order).
pub fn read_functional_csv(path: &Path, spec: &GridSpec) -> Result<Vec<FunctionalDataset>> {
    let lines = read_lines(path)?;
    if lines.is_empty() {
        return Err(parse_err(path, 1, "empty file"));
    }
    let header: Vec<&str> = lines[0].split(',').map(|s| s.trim()).collect();
    if header != ["subject_id", "covariate_id", "time", "value"] {
        return Err(parse_err(
            path,
            1,
            "expected header 'subject_id,covariate_id,time,value'",
        ));
    }

    // covariate -> subject -> (time, value) pairs, insертion order kept.
    let mut covariates: BTreeMap<String, Vec<(String, Vec<(f64, f64)>)>> = BTreeMap::new();
    let mut t_min = f64::INFINITY;
    let mut t_max = f64::NEG_INFINITY;
    for (i, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let subject = fields[0].trim().to_string();
        let covariate = fields[1].trim().to_string();
        if subject.is_empty() || covariate.is_empty() {
            return Err(parse_err(path, lineno, "empty subject_id or covariate_id"));
        }
        let t = parse_f64(path, lineno, "time", fields[2])?;
        let v = parse_f64(path, lineno, "value", fields[3])?;
        t_min = t_min.min(t);
        t_max = t_max.max(t);
        let subjects = covariates.entry(covariate).or_default();
        match subjects.iter_mut().find(|(id, _)| *id == subject) {
            Some((_, pairs)) => pairs.push((t, v)),
            None => subjects.push((subject, vec![(t, v)])),
        }
    }
    if covariates.is_empty() {
        return Err(parse_err(path, 1, "no data rows"));
    }

    let domain = spec.domain.unwrap_or((t_min, t_max));

    // Shared observation grid across every sample?
    let mut shared: Option<Vec<f64>> = None;
    let mut all_same = true;
    'outer: for subjects in covariates.values() {
        for (_, pairs) in subjects {
            let mut times: Vec<f64> = pairs.iter().map(|(t, _)| *t).collect();
            times.sort_by(f64::total_cmp);
            match &shared {
                None => shared = Some(times),
                Some(g) => {
                    if g.len() != times.len()
                        || g.iter().zip(&times).any(|(a, b)| (a - b).abs() > 1e-12)
                    {
                        all_same = false;
                        break 'outer;
                    }
                }
            }
        }
    }
    let grid = if all_same && spec.m.is_none() {
        shared.unwrap()
    } else {
        FunctionalDataset::uniform_grid(domain.0, domain.1, spec.m.unwrap_or(101))
    };

    let mut out = Vec::with_capacity(covariates.len());
    for (covariate_id, subjects) in covariates {
        let mut samples = Vec::with_capacity(subjects.len());
        for (subject_id, mut pairs) in subjects {
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in pairs.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::InvalidSample {
                        subject: subject_id.clone(),
                        reason: format!(
                            "duplicate time {} for covariate '{covariate_id}'",
                            w[0].0
                        ),
                    });
                }
            }
            let times: Vec<f64> = pairs.iter().map(|(t, _)| *t).collect();
            let values: Vec<f64> = pairs.iter().map(|(_, v)| *v).collect();
            samples.push(FunctionalSample::new(subject_id, times, values)?);
        }
        out.push(FunctionalDataset::new(
            covariate_id,
            domain,
            samples,
            grid.clone(),
        )?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Scalar and response CSVs
// ---------------------------------------------------------------------------

pub fn write_scalar_csv(path: &Path, data: &ScalarData) -> Result<()> {
    let mut out = String::from("subject_id");
    for name in &data.names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, id) in data.subject_ids.iter().enumerate() {
        out.push_str(id);
        for c in 0..data.names.len() {
            out.push(',');
            out.push_str(&fmt12(data.values[(i, c)]));
        }
        out.push('\n');
    }
    write_file(path, &out)
}

pub fn read_scalar_csv(path: &Path) -> Result<ScalarData> {
    let lines = read_lines(path)?;
    if lines.is_empty() {
        return Err(parse_err(path, 1, "empty file"));
    }
    let header: Vec<String> = lines[0].split(',').map(|s| s.trim().to_string()).collect();
    if header.first().map(|s| s.as_str()) != Some("subject_id") {
        return Err(parse_err(path, 1, "first column must be 'subject_id'"));
    }
    let names: Vec<String> = header[1..].to_vec();
    let mut subject_ids = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != names.len() + 1 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected {} fields, found {}", names.len() + 1, fields.len()),
            ));
        }
        subject_ids.push(fields[0].trim().to_string());
        let mut row = Vec::with_capacity(names.len());
        for (c, f) in fields[1..].iter().enumerate() {
            row.push(parse_f64(path, lineno, &names[c], f)?);
        }
        rows.push(row);
    }
    let n = rows.len();
    let values = DMatrix::from_fn(n, names.len(), |r, c| rows[r][c]);
    ScalarData::new(subject_ids, names, values)
}

pub fn write_response_csv(path: &Path, subject_ids: &[String], y: &[f64]) -> Result<()> {
    let mut out = String::from("subject_id,y\n");
    for (id, v) in subject_ids.iter().zip(y) {
        out.push_str(&format!("{},{}\n", id, fmt12(*v)));
    }
    write_file(path, &out)
}

pub fn read_response_csv(path: &Path) -> Result<(Vec<String>, Vec<f64>)> {
    let lines = read_lines(path)?;
    if lines.is_empty() {
        return Err(parse_err(path, 1, "empty file"));
    }
    let header: Vec<&str> = lines[0].split(',').map(|s| s.trim()).collect();
    if header != ["subject_id", "y"] {
        return Err(parse_err(path, 1, "expected header 'subject_id,y'"));
    }
    let mut ids = Vec::new();
    let mut ys = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected 2 fields, found {}", fields.len()),
            ));
        }
        ids.push(fields[0].trim().to_string());
        ys.push(parse_f64(path, lineno, "y", fields[1])?);
    }
    Ok((ids, ys))
}

// ---------------------------------------------------------------------------
// Activity and L-moment CSVs
// ---------------------------------------------------------------------------

/// Parse minute-level activity data; one record per subject, days ordered by
/// their day_index, unobserved minutes NaN.
pub fn read_activity_csv(path: &Path) -> Result<Vec<ActivityRecord>> {
    let lines = read_lines(path)?;
    if lines.is_empty() {
        return Err(parse_err(path, 1, "empty file"));
    }
    let header: Vec<&str> = lines[0].split(',').map(|s| s.trim()).collect();
    if header != ["subject_id", "day_index", "minute", "value"] {
        return Err(parse_err(
            path,
            1,
            "expected header 'subject_id,day_index,minute,value'",
        ));
    }
    // subject -> day_index -> minutes
    let mut subjects: Vec<(String, BTreeMap<i64, Vec<f64>>)> = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let subject = fields[0].trim().to_string();
        let day: i64 = fields[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad day_index '{}'", fields[1])))?;
        let minute: usize = fields[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad minute '{}'", fields[2])))?;
        if minute >= MINUTES_PER_DAY {
            return Err(parse_err(
                path,
                lineno,
                format!("minute {minute} out of range 0..=1439"),
            ));
        }
        let value = parse_f64(path, lineno, "value", fields[3])?;
        if value < 0.0 {
            return Err(parse_err(path, lineno, "negative activity value"));
        }
        let entry = match subjects.iter_mut().find(|(id, _)| *id == subject) {
            Some((_, days)) => days,
            None => {
                subjects.push((subject, BTreeMap::new()));
                &mut subjects.last_mut().unwrap().1
            }
        };
        let day_row = entry
            .entry(day)
            .or_insert_with(|| vec![f64::NAN; MINUTES_PER_DAY]);
        if !day_row[minute].is_nan() {
            return Err(parse_err(
                path,
                lineno,
                format!("duplicate minute {minute} on day {day}"),
            ));
        }
        day_row[minute] = value;
    }
    let mut out = Vec::with_capacity(subjects.len());
    for (subject_id, days) in subjects {
        let rows: Vec<Vec<f64>> = days.into_values().collect();
        let valid = vec![true; rows.len()];
        out.push(ActivityRecord::new(subject_id, rows, valid)?);
    }
    Ok(out)
}

pub fn write_lmoment_curves_csv(path: &Path, curves: &[LMomentCurves]) -> Result<()> {
    let mut out = String::from("subject_id,time_hours,L1,L2,L3,L4\n");
    for c in curves {
        for m in 0..c.grid_hours.len() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.subject_id,
                fmt12(c.grid_hours[m]),
                fmt12(c.l1[m]),
                fmt12(c.l2[m]),
                fmt12(c.l3[m]),
                fmt12(c.l4[m])
            ));
        }
    }
    write_file(path, &out)
}

// ---------------------------------------------------------------------------
// Model outputs
// ---------------------------------------------------------------------------

pub fn write_predictions_csv(
    path: &Path,
    subject_ids: &[String],
    tau: f64,
    predictions: &[f64],
) -> Result<()> {
    let mut out = String::from("subject_id,tau,predicted_quantile\n");
    for (id, p) in subject_ids.iter().zip(predictions) {
        out.push_str(&format!("{},{},{}\n", id, fmt12(tau), fmt12(*p)));
    }
    write_file(path, &out)
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<(String, f64, f64)>> {
    let lines = read_lines(path)?;
    if lines.is_empty() {
        return Err(parse_err(path, 1, "empty file"));
    }
    let header: Vec<&str> = lines[0].split(',').map(|s| s.trim()).collect();
    if header != ["subject_id", "tau", "predicted_quantile"] {
        return Err(parse_err(
            path,
            1,
            "expected header 'subject_id,tau,predicted_quantile'",
        ));
    }
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(parse_err(path, lineno, "expected 3 fields"));
        }
        out.push((
            fields[0].trim().to_string(),
            parse_f64(path, lineno, "tau", fields[1])?,
            parse_f64(path, lineno, "predicted_quantile", fields[2])?,
        ));
    }
    Ok(out)
}

/// Selection report: one row per candidate variable. `estimate` is the
/// fitted coefficient for scalars and the euclidean norm of the score
/// coefficients for functional covariates.
pub fn write_selection_csv(path: &Path, model: &FLQRModel, report: &SelectedReport) -> Result<()> {
    let mut out = String::from("kind,name,selected,estimate\n");
    for (b, name) in model.scalar_names.iter().enumerate() {
        let selected = report.scalars.contains(name);
        out.push_str(&format!(
            "scalar,{},{},{}\n",
            name,
            selected,
            fmt12(model.beta[b])
        ));
    }
    for cov in &model.covariates {
        let norm = cov.alpha.iter().map(|a| a * a).sum::<f64>().sqrt();
        out.push_str(&format!(
            "functional,{},{},{}\n",
            cov.covariate_id, cov.active, fmt12(norm)
        ));
    }
    write_file(path, &out)
}

/// Coefficient curves: `covariate_id,s,gamma_hat`.
pub fn write_gamma_curves_csv(path: &Path, model: &FLQRModel) -> Result<()> {
    let mut out = String::from("covariate_id,s,gamma_hat\n");
    for cov in &model.covariates {
        for (s, g) in cov.eigen.grid.iter().zip(&cov.gamma_curve) {
            out.push_str(&format!("{},{},{}\n", cov.covariate_id, fmt12(*s), fmt12(*g)));
        }
    }
    write_file(path, &out)
}

// ---------------------------------------------------------------------------
// Monte Carlo reports and frequency tables
// ---------------------------------------------------------------------------

pub fn metrics_report_csv_header() -> String {
    let mut cols = vec![
        "method".to_string(),
        "design".into(),
        "n".into(),
        "tau".into(),
        "replicates".into(),
        "failed".into(),
        "tpr_scalar".into(),
        "fpr_scalar".into(),
        "tpr_functional".into(),
        "fpr_functional".into(),
        "tpr_all".into(),
        "fpr_all".into(),
        "avg_model_size".into(),
    ];
    for b in 1..=3 {
        cols.push(format!("bias_beta{b}"));
        cols.push(format!("mse_beta{b}"));
    }
    for j in 1..=5 {
        cols.push(format!("mise_gamma{j}"));
    }
    cols.push("mspe".into());
    cols.push("mape".into());
    cols.join(",")
}

pub fn write_metrics_reports_csv(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    let mut out = metrics_report_csv_header();
    out.push('\n');
    for r in reports {
        let mut fields = vec![
            r.method.name().to_string(),
            r.design.name().to_string(),
            r.n.to_string(),
            fmt12(r.tau),
            r.n_replicates.to_string(),
            r.n_failed.to_string(),
            fmt12(r.selection.tpr_scalar),
            fmt12(r.selection.fpr_scalar),
            fmt12(r.selection.tpr_functional),
            fmt12(r.selection.fpr_functional),
            fmt12(r.selection.tpr_all),
            fmt12(r.selection.fpr_all),
            fmt12(r.selection.avg_model_size),
        ];
        for b in 0..3 {
            fields.push(fmt12(r.estimation.bias[b]));
            fields.push(fmt12(r.estimation.mse[b]));
        }
        for j in 0..5 {
            fields.push(fmt12(r.estimation.mise[j]));
        }
        fields.push(fmt12(r.mspe));
        fields.push(fmt12(r.mape));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    write_file(path, &out)
}

pub fn write_metrics_reports_json(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    let text = serde_json::to_string_pretty(reports)
        .map_err(|e| Error::ModelFormat(e.to_string()))?;
    write_file(path, &text)
}

pub fn write_replicate_log_csv(
    path: &Path,
    rows: &[crate::simbench::ReplicateLogRow],
) -> Result<()> {
    let mut out = String::from(
        "replicate,method,status,nu,selected_scalars,selected_functional,mspe,mape,message\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.replicate,
            r.method,
            r.status,
            r.nu,
            r.selected_scalars,
            r.selected_functional,
            fmt12(r.mspe),
            fmt12(r.mape),
            r.message.replace(',', ";")
        ));
    }
    write_file(path, &out)
}

pub fn write_frequency_csv(path: &Path, freqs: &[SelectionFrequency]) -> Result<()> {
    let mut out = String::from("kind,name,selection_pct\n");
    for f in freqs {
        out.push_str(&format!("{},{},{}\n", f.kind, f.name, fmt12(f.pct)));
    }
    write_file(path, &out)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::ModelFormat(e.to_string()))?;
    write_file(path, &text)
}

pub fn write_model_json(path: &Path, model: &FLQRModel) -> Result<()> {
    write_file(path, &model.to_json())
}

pub fn read_model_json(path: &Path) -> Result<FLQRModel> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    FLQRModel::from_json(&text)
}
