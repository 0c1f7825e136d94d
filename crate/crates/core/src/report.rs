//! Uniform per-record study output shared by every driver.

/// One row of a study table. Quantities a study does not produce stay `None`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportRow {
    pub n: usize,
    pub h: Option<f64>,
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
    pub err_sup: Option<f64>,
    pub err_l2: Option<f64>,
    pub err_energy: Option<f64>,
    pub violation: Option<f64>,
    pub iterations: Option<usize>,
    pub residual: Option<f64>,
    pub flag: Option<String>,
}

/// A named check on a study. Only asserted flags decide success; the others
/// are informative (for example a hypothesis failure in a negative control).
#[derive(Clone, Debug, PartialEq)]
pub struct Flag {
    pub name: String,
    pub passed: bool,
    pub asserted: bool,
}

impl Flag {
    pub fn asserted(name: impl Into<String>, passed: bool) -> Self {
        Self {
            name: name.into(),
            passed,
            asserted: true,
        }
    }

    pub fn informative(name: impl Into<String>, passed: bool) -> Self {
        Self {
            name: name.into(),
            passed,
            asserted: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StudyReport {
    pub study: String,
    pub rows: Vec<ReportRow>,
    pub flags: Vec<Flag>,
    /// Per-record failures, as `(n, message)`.
    pub failures: Vec<(usize, String)>,
}

impl StudyReport {
    pub fn new(study: impl Into<String>) -> Self {
        Self {
            study: study.into(),
            ..Self::default()
        }
    }

    /// True when every asserted flag passed.
    pub fn passed(&self) -> bool {
        self.flags.iter().filter(|f| f.asserted).all(|f| f.passed)
    }

    pub fn flag(&self, name: &str) -> Option<&Flag> {
        self.flags.iter().find(|f| f.name == name)
    }
}

/// Least-squares slope of `log y` against `log x` over the pairs with both
/// entries positive and finite. `None` with fewer than two such pairs.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0 && a.is_finite() && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}
