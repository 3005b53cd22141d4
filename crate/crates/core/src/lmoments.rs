//! Sample L-moments via probability-weighted moments, and time-of-day
//! diurnal L-moment curves from minute-level activity matrices.

use crate::error::{Error, Result};

/// Minutes per day and grid length of the diurnal curves.
pub const MINUTES_PER_DAY: usize = 1440;

/// Default half-window: 5 minutes, in hours.
pub const DEFAULT_ZETA_HOURS: f64 = 5.0 / 60.0;

/// Minute-level activity for one subject. Missing minutes are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityRecord {
    pub subject_id: String,
    /// One row per day, 1440 minute values each (NaN marks missing).
    pub days: Vec<Vec<f64>>,
    pub valid_days: Vec<bool>,
}

impl ActivityRecord {
    pub fn new(subject_id: impl Into<String>, days: Vec<Vec<f64>>, valid_days: Vec<bool>) -> Result<Self> {
        let subject_id = subject_id.into();
        if days.is_empty() {
            return Err(Error::InvalidDataset {
                id: subject_id,
                reason: "at least one day of data is required".into(),
            });
        }
        if days.len() != valid_days.len() {
            return Err(Error::InvalidDataset {
                id: subject_id,
                reason: format!(
                    "{} days but {} valid-day flags",
                    days.len(),
                    valid_days.len()
                ),
            });
        }
        for (k, day) in days.iter().enumerate() {
            if day.len() != MINUTES_PER_DAY {
                return Err(Error::InvalidDataset {
                    id: subject_id,
                    reason: format!("day {k} has {} minutes, expected {MINUTES_PER_DAY}", day.len()),
                });
            }
            if day.iter().any(|v| !v.is_nan() && *v < 0.0) {
                return Err(Error::Domain {
                    op: "ActivityRecord",
                    reason: format!("negative activity value on day {k} of subject '{subject_id}'"),
                });
            }
        }
        Ok(ActivityRecord {
            subject_id,
            days,
            valid_days,
        })
    }

    pub fn n_valid_days(&self) -> usize {
        self.valid_days.iter().filter(|v| **v).count()
    }
}

/// First four diurnal L-moment curves on the 1440-point hour grid.
/// Grid points whose window pooled fewer than 4 values are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct LMomentCurves {
    pub subject_id: String,
    pub grid_hours: Vec<f64>,
    pub l1: Vec<f64>,
    pub l2: Vec<f64>,
    pub l3: Vec<f64>,
    pub l4: Vec<f64>,
}

impl LMomentCurves {
    pub fn curve(&self, order: usize) -> &[f64] {
        match order {
            1 => &self.l1,
            2 => &self.l2,
            3 => &self.l3,
            4 => &self.l4,
            _ => panic!("L-moment order must be 1..=4"),
        }
    }
}

/// The hour grid `{m/60 : m = 0..1439}`.
pub fn hour_grid() -> Vec<f64> {
    (0..MINUTES_PER_DAY).map(|m| m as f64 / 60.0).collect()
}

/// Unbiased sample L-moments `l_1..l_{r_max}` from probability-weighted
/// moments of the sorted values.
pub fn sample_lmoments(values: &[f64], r_max: usize) -> Result<Vec<f64>> {
    if r_max == 0 || r_max > 4 {
        return Err(Error::InvalidParam {
            name: "r_max",
            reason: format!("must lie in 1..=4, got {r_max}"),
        });
    }
    let n = values.len();
    if n < r_max {
        return Err(Error::InsufficientData {
            needed: r_max,
            found: n,
        });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);

    // b_k = (1/n) sum_i [ (i-1)(i-2)..(i-k) / ((n-1)(n-2)..(n-k)) ] x_{i:n}
    let nf = n as f64;
    let mut b = [0.0f64; 4];
    for (i0, x) in sorted.iter().enumerate() {
        let i = (i0 + 1) as f64; // 1-based rank
        let mut w = 1.0;
        b[0] += x;
        for k in 1..r_max {
            w *= (i - k as f64) / (nf - k as f64);
            b[k] += w * x;
        }
    }
    for bk in &mut b {
        *bk /= nf;
    }

    let mut l = Vec::with_capacity(r_max);
    l.push(b[0]);
    if r_max >= 2 {
        // Nonnegative by construction; clip float dust.
        l.push((2.0 * b[1] - b[0]).max(0.0));
    }
    if r_max >= 3 {
        l.push(6.0 * b[2] - 6.0 * b[1] + b[0]);
    }
    if r_max >= 4 {
        l.push(20.0 * b[3] - 30.0 * b[2] + 12.0 * b[1] - b[0]);
    }
    Ok(l)
}

/// Elementwise `ln(1 + x)`; rejects negative input.
pub fn log_transform(values: &[f64]) -> Result<Vec<f64>> {
    if values.iter().any(|v| *v < 0.0) {
        return Err(Error::Domain {
            op: "log_transform",
            reason: "negative activity value".into(),
        });
    }
    Ok(values.iter().map(|v| v.ln_1p()).collect())
}

/// Diurnal L-moment curves: at each grid time `s`, pool log-transformed
/// values from all valid days at minutes within `zeta_hours` of `s` (window
/// clamped to the day, no midnight wraparound) and take sample L-moments of
/// the pooled multiset.
///
/// A pool of k < 4 values yields the first k L-moments with NaN markers for
/// the rest; such a grid point counts as missing, and more than 5% missing
/// points is an error.
pub fn diurnal_lmoments(record: &ActivityRecord, zeta_hours: f64) -> Result<LMomentCurves> {
    if !(zeta_hours > 0.0) {
        return Err(Error::InvalidParam {
            name: "zeta",
            reason: format!("window half-width must be positive, got {zeta_hours}"),
        });
    }
    if record.n_valid_days() == 0 {
        return Err(Error::InvalidDataset {
            id: record.subject_id.clone(),
            reason: "no valid days".into(),
        });
    }

    // Log-transform the valid days once.
    let mut transformed: Vec<Vec<f64>> = Vec::new();
    for (day, &valid) in record.days.iter().zip(&record.valid_days) {
        if !valid {
            continue;
        }
        let mut t = Vec::with_capacity(MINUTES_PER_DAY);
        for v in day {
            if v.is_nan() {
                t.push(f64::NAN);
            } else if *v < 0.0 {
                return Err(Error::Domain {
                    op: "diurnal_lmoments",
                    reason: format!("negative activity value for subject '{}'", record.subject_id),
                });
            } else {
                t.push(v.ln_1p());
            }
        }
        transformed.push(t);
    }

    // Window of minutes with |m'/60 - s| <= zeta; the small slack keeps the
    // boundary minutes in despite floating-point division.
    let half_minutes = zeta_hours * 60.0 + 1e-9;
    let grid = hour_grid();
    let mut l1 = vec![f64::NAN; MINUTES_PER_DAY];
    let mut l2 = vec![f64::NAN; MINUTES_PER_DAY];
    let mut l3 = vec![f64::NAN; MINUTES_PER_DAY];
    let mut l4 = vec![f64::NAN; MINUTES_PER_DAY];
    let mut missing = 0usize;
    let mut pool = Vec::new();
    for m in 0..MINUTES_PER_DAY {
        let lo = ((m as f64 - half_minutes).ceil().max(0.0)) as usize;
        let hi = ((m as f64 + half_minutes).floor()).min((MINUTES_PER_DAY - 1) as f64) as usize;
        pool.clear();
        for day in &transformed {
            for v in &day[lo..=hi] {
                if !v.is_nan() {
                    pool.push(*v);
                }
            }
        }
        let r = pool.len().min(4);
        if pool.len() < 4 {
            missing += 1;
            if pool.is_empty() {
                continue;
            }
        }
        let l = sample_lmoments(&pool, r)?;
        l1[m] = l[0];
        if r >= 2 {
            l2[m] = l[1];
        }
        if r >= 3 {
            l3[m] = l[2];
        }
        if r >= 4 {
            l4[m] = l[3];
        }
    }

    let pct = 100.0 * missing as f64 / MINUTES_PER_DAY as f64;
    if pct > 5.0 {
        return Err(Error::TooManyMissing {
            subject: record.subject_id.clone(),
            missing,
            total: MINUTES_PER_DAY,
            pct,
        });
    }

    Ok(LMomentCurves {
        subject_id: record.subject_id.clone(),
        grid_hours: grid,
        l1,
        l2,
        l3,
        l4,
    })
}
