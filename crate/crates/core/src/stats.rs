//! Correlations, least-squares fits of the five model families and the
//! quantities derived from them.
//!
//! Fits read named columns of an already transformed observation table:
//! `team_size` and `ind` are expected on a log scale, `fmodr` as is.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("need at least {need} observations, have {have}")]
    InsufficientObservations { need: usize, have: usize },
    #[error("design matrix is rank deficient (column `{0}`)")]
    RankDeficient(String),
    #[error("column `{0}` is missing from the observation table")]
    MissingColumn(String),
    #[error("column `{0}` has a different length than the others")]
    RaggedColumn(String),
    #[error("expected a family {expected} fit, got family {got}")]
    WrongFamily { expected: Family, got: Family },
    #[error("p-value {0} outside [0, 1]")]
    PValueOutOfRange(f64),
    #[error("Bonferroni factor must be at least 1")]
    ZeroTests,
    #[error("unknown model family `{0}`")]
    UnknownFamily(String),
}

pub type Columns = BTreeMap<String, Vec<f64>>;

fn column<'a>(data: &'a Columns, name: &str) -> Result<&'a [f64], StatsError> {
    data.get(name).map(Vec::as_slice).ok_or_else(|| StatsError::MissingColumn(name.to_string()))
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample Pearson correlation, `None` when either side has no variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pairwise correlations between `features`. Zero-variance features give
/// missing cells, including on the diagonal.
pub fn pearson_matrix(data: &Columns, features: &[String]) -> Result<Vec<Vec<Option<f64>>>, StatsError> {
    let cols: Vec<&[f64]> = features.iter().map(|f| column(data, f)).collect::<Result<_, _>>()?;
    let n = cols.first().map_or(0, |c| c.len());
    if let Some(i) = cols.iter().position(|c| c.len() != n) {
        return Err(StatsError::RaggedColumn(features[i].clone()));
    }
    if n < 3 {
        return Err(StatsError::InsufficientObservations { need: 3, have: n });
    }
    let k = features.len();
    let mut m = vec![vec![None; k]; k];
    for i in 0..k {
        for j in i..k {
            let r = pearson(cols[i], cols[j]);
            let r = if i == j { r.map(|_| 1.0) } else { r };
            m[i][j] = r;
            m[j][i] = r;
        }
    }
    Ok(m)
}

pub fn write_correlation_csv<W: Write>(writer: W, features: &[String], m: &[Vec<Option<f64>>]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![String::new()];
    header.extend(features.iter().cloned());
    w.write_record(&header)?;
    for (name, row) in features.iter().zip(m) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|c| c.map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Feature names and matrix values for external plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPlotData {
    pub features: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

// ---------------------------------------------------------------------------
// Models

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Intercept,
    Ts,
    Ts2,
    Ind,
    TsInd,
    Fmodr,
}

impl Term {
    pub fn label(self) -> &'static str {
        match self {
            Term::Intercept => "(IC)",
            Term::Ts => "TS (log)",
            Term::Ts2 => "TS^2 (log)",
            Term::Ind => "InD (log)",
            Term::TsInd => "TS x InD",
            Term::Fmodr => "FModR",
        }
    }

    fn values(self, data: &Columns, n: usize) -> Result<Vec<f64>, StatsError> {
        Ok(match self {
            Term::Intercept => vec![1.0; n],
            Term::Ts => column(data, "team_size")?.to_vec(),
            Term::Ts2 => column(data, "team_size")?.iter().map(|x| x * x).collect(),
            Term::Ind => column(data, "ind")?.to_vec(),
            Term::TsInd => {
                let ts = column(data, "team_size")?;
                column(data, "ind")?.iter().zip(ts).map(|(a, b)| a * b).collect()
            }
            Term::Fmodr => column(data, "fmodr")?.to_vec(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    A,
    B,
    C,
    D,
    E,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for Family {
    type Err = StatsError;
    fn from_str(s: &str) -> Result<Self, StatsError> {
        Family::ALL.into_iter().find(|f| f.tag() == s).ok_or_else(|| StatsError::UnknownFamily(s.to_string()))
    }
}

impl Family {
    pub const ALL: [Family; 5] = [Family::A, Family::B, Family::C, Family::D, Family::E];

    pub fn tag(self) -> &'static str {
        match self {
            Family::A => "a",
            Family::B => "b",
            Family::C => "c",
            Family::D => "d",
            Family::E => "e",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Family::A => "Linear relationship",
            Family::B => "Quadratic relationship",
            Family::C => "Linear relationship controlling for network properties",
            Family::D => "Quadratic relationship controlling for network properties",
            Family::E => "Linear relationship with interaction term",
        }
    }

    pub fn terms(self) -> Vec<Term> {
        use Term::*;
        match self {
            Family::A => vec![Intercept, Ts],
            Family::B => vec![Intercept, Ts, Ts2],
            Family::C => vec![Intercept, Ts, Ind, Fmodr],
            Family::D => vec![Intercept, Ts, Ts2, Ind, Fmodr],
            Family::E => vec![Intercept, Ts, Ind, TsInd, Fmodr],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub target: String,
    pub family: Family,
    pub terms: Vec<Term>,
}

impl ModelSpec {
    pub fn new(target: &str, family: Family) -> Self {
        Self { target: target.to_string(), family, terms: family.terms() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermEstimate {
    pub term: Term,
    pub beta: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
    pub p_adj: f64,
    pub stars: String,
    /// Sample mean of the regressor.
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub target: String,
    pub family: Family,
    pub n: usize,
    pub terms: Vec<TermEstimate>,
    pub r2: f64,
    pub adj_r2: f64,
    pub bonferroni_m: usize,
}

impl RegressionResult {
    pub fn term(&self, t: Term) -> Option<&TermEstimate> {
        self.terms.iter().find(|e| e.term == t)
    }

    pub fn beta(&self, t: Term) -> Option<f64> {
        self.term(t).map(|e| e.beta)
    }

    /// Recomputes adjusted p-values and stars for `m` tests.
    pub fn set_bonferroni(&mut self, m: usize) -> Result<(), StatsError> {
        let raw: Vec<f64> = self.terms.iter().map(|e| e.p).collect();
        let adj = bonferroni(&raw, m)?;
        for (e, p) in self.terms.iter_mut().zip(adj) {
            e.p_adj = p;
            e.stars = stars(p).to_string();
        }
        self.bonferroni_m = m;
        Ok(())
    }
}

pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

pub fn bonferroni(p: &[f64], m: usize) -> Result<Vec<f64>, StatsError> {
    if m == 0 {
        return Err(StatsError::ZeroTests);
    }
    p.iter()
        .map(|&v| {
            if (0.0..=1.0).contains(&v) {
                Ok((v * m as f64).min(1.0))
            } else {
                Err(StatsError::PValueOutOfRange(v))
            }
        })
        .collect()
}

/// Two-sided p-value of a Student-t statistic.
pub fn t_test_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return 1.0;
    }
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Householder QR of a column-major `n x k` matrix, in place. Returns the
/// Householder vectors' scalars and leaves R in the upper triangle.
struct Qr {
    cols: Vec<Vec<f64>>,
    diag: Vec<f64>,
}

impl Qr {
    fn new(mut cols: Vec<Vec<f64>>) -> Self {
        let n = cols[0].len();
        let k = cols.len();
        let mut diag = vec![0.0; k];
        for j in 0..k {
            let norm = cols[j][j..].iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let alpha = if cols[j][j] > 0.0 { -norm } else { norm };
            // v = x - alpha e1, stored in place of column j below the diagonal
            cols[j][j] -= alpha;
            let vnorm2 = cols[j][j..].iter().map(|x| x * x).sum::<f64>();
            diag[j] = alpha;
            if vnorm2 == 0.0 {
                continue;
            }
            for l in j + 1..k {
                let s = (j..n).map(|i| cols[j][i] * cols[l][i]).sum::<f64>() * 2.0 / vnorm2;
                for i in j..n {
                    let v = cols[j][i];
                    cols[l][i] -= s * v;
                }
            }
        }
        Self { cols, diag }
    }

    fn apply_qt(&self, y: &mut [f64]) {
        let n = y.len();
        for j in 0..self.cols.len() {
            let v = &self.cols[j];
            let vnorm2 = v[j..].iter().map(|x| x * x).sum::<f64>();
            if vnorm2 == 0.0 {
                continue;
            }
            let s = (j..n).map(|i| v[i] * y[i]).sum::<f64>() * 2.0 / vnorm2;
            for i in j..n {
                y[i] -= s * v[i];
            }
        }
    }

    fn r(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[i]
        } else {
            self.cols[j][i]
        }
    }
}

const RANK_TOL: f64 = 1e-10;

/// Ordinary least squares via Householder QR. Adjusted p-values are left
/// equal to the raw ones until [`RegressionResult::set_bonferroni`].
pub fn ols_fit(spec: &ModelSpec, data: &Columns) -> Result<RegressionResult, StatsError> {
    let y = column(data, &spec.target)?;
    let n = y.len();
    let k = spec.terms.len();
    if n <= k {
        return Err(StatsError::InsufficientObservations { need: k + 1, have: n });
    }
    let x: Vec<Vec<f64>> = spec.terms.iter().map(|t| t.values(data, n)).collect::<Result<_, _>>()?;
    for (t, c) in spec.terms.iter().zip(&x) {
        if c.len() != n {
            return Err(StatsError::RaggedColumn(t.label().to_string()));
        }
    }
    let means: Vec<f64> = x.iter().map(|c| mean(c)).collect();
    let col_norm = x.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
    let qr = Qr::new(x.clone());
    for (j, t) in spec.terms.iter().enumerate() {
        if qr.diag[j].abs() <= RANK_TOL * col_norm.max(1.0) {
            return Err(StatsError::RankDeficient(t.label().to_string()));
        }
    }
    let mut qty = y.to_vec();
    qr.apply_qt(&mut qty);
    let mut beta = vec![0.0; k];
    for i in (0..k).rev() {
        let s: f64 = (i + 1..k).map(|j| qr.r(i, j) * beta[j]).sum();
        beta[i] = (qty[i] - s) / qr.r(i, i);
    }
    // R^-1 by back substitution, column by column
    let mut rinv = vec![vec![0.0; k]; k];
    for c in 0..k {
        for i in (0..=c).rev() {
            let e = if i == c { 1.0 } else { 0.0 };
            let s: f64 = (i + 1..=c).map(|j| qr.r(i, j) * rinv[j][c]).sum();
            rinv[i][c] = (e - s) / qr.r(i, i);
        }
    }
    let rss: f64 = (0..n)
        .map(|i| {
            let fit: f64 = (0..k).map(|j| x[j][i] * beta[j]).sum();
            (y[i] - fit).powi(2)
        })
        .sum();
    let my = mean(y);
    let tss: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let df = (n - k) as f64;
    let sigma2 = rss / df;
    let r2 = if tss > 0.0 { (1.0 - rss / tss).clamp(0.0, 1.0) } else { 0.0 };
    let adj_r2 = 1.0 - (1.0 - r2) * (n as f64 - 1.0) / df;

    let terms = (0..k)
        .map(|j| {
            let var = rinv[j].iter().map(|v| v * v).sum::<f64>() * sigma2;
            let se = var.sqrt();
            let t = if se > 0.0 {
                beta[j] / se
            } else if beta[j] == 0.0 {
                0.0
            } else {
                f64::INFINITY.copysign(beta[j])
            };
            let p = t_test_p(t, df);
            TermEstimate { term: spec.terms[j], beta: beta[j], se, t, p, p_adj: p, stars: stars(p).to_string(), mean: means[j] }
        })
        .collect();
    Ok(RegressionResult {
        target: spec.target.clone(),
        family: spec.family,
        n,
        terms,
        r2,
        adj_r2,
        bonferroni_m: 1,
    })
}

/// Fits every (target, family) pair and applies Bonferroni with `m`
/// tests, defaulting to the number of non-intercept coefficients in the
/// whole battery.
pub fn fit_battery(
    data: &Columns,
    targets: &[String],
    families: &[Family],
    m: Option<usize>,
) -> Result<Vec<RegressionResult>, StatsError> {
    let specs: Vec<ModelSpec> =
        families.iter().flat_map(|f| targets.iter().map(move |t| ModelSpec::new(t, *f))).collect();
    let mut out = specs.par_iter().map(|s| ols_fit(s, data)).collect::<Result<Vec<_>, _>>()?;
    let tests = m.unwrap_or_else(|| out.iter().map(|r| r.terms.len() - 1).sum::<usize>().max(1));
    for r in &mut out {
        r.set_bonferroni(tests)?;
    }
    Ok(out)
}

/// Relative productivity loss when team size doubles in a log-log model.
pub fn elasticity_per_doubling(beta: f64) -> f64 {
    1.0 - 2f64.powf(beta)
}

/// Team size at the maximum of a concave quadratic in log team size.
pub fn quadratic_vertex(beta_ts: f64, beta_ts2: f64) -> Option<f64> {
    (beta_ts2 < 0.0).then(|| (-beta_ts / (2.0 * beta_ts2)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalLine {
    pub level: f64,
    pub intercept: f64,
    pub slope: f64,
}

/// Lines of the interaction model in (log TS, target) space at fixed log
/// InD levels, with FModR held at its sample mean.
pub fn marginal_effects(fit: &RegressionResult, ind_levels: &[f64]) -> Result<Vec<MarginalLine>, StatsError> {
    if fit.family != Family::E {
        return Err(StatsError::WrongFamily { expected: Family::E, got: fit.family });
    }
    let b = |t| fit.beta(t).unwrap_or(0.0);
    let fmodr = fit.term(Term::Fmodr).map_or(0.0, |e| e.beta * e.mean);
    Ok(ind_levels
        .iter()
        .map(|&v| MarginalLine {
            level: v,
            intercept: b(Term::Intercept) + b(Term::Ind) * v + fmodr,
            slope: b(Term::Ts) + b(Term::TsInd) * v,
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Report

/// Column order of the printed tables.
pub const REPORT_TARGETS: [(&str, &str); 8] = [
    ("comms", "Comms"),
    ("events", "Events"),
    ("levd", "LevD"),
    ("cycc", "CycC"),
    ("nloc", "NLOC"),
    ("tokens", "Tokens"),
    ("funcs", "Funcs"),
    ("haleff", "HalEff"),
];

/// Plain-text tables, one per family, with coefficients, standard errors
/// in parentheses and stars from adjusted p-values.
pub fn render_table(results: &[RegressionResult]) -> String {
    let mut out = String::new();
    let width = 13;
    for family in Family::ALL {
        let mut cols: Vec<&RegressionResult> = Vec::new();
        let mut heads: Vec<String> = Vec::new();
        for (key, label) in REPORT_TARGETS {
            if let Some(r) = results.iter().find(|r| r.family == family && r.target == key) {
                cols.push(r);
                heads.push(label.to_string());
            }
        }
        for r in results.iter().filter(|r| r.family == family) {
            if !REPORT_TARGETS.iter().any(|(k, _)| *k == r.target) {
                cols.push(r);
                heads.push(r.target.clone());
            }
        }
        if cols.is_empty() {
            continue;
        }
        let _ = writeln!(out, "{}) {}", family.tag(), family.title());
        let _ = write!(out, "{:<12}", "");
        for h in &heads {
            let _ = write!(out, "{h:>width$}");
        }
        out.push('\n');
        for term in family.terms() {
            let _ = write!(out, "{:<12}", term.label());
            for r in &cols {
                let e = r.term(term).expect("family terms");
                let _ = write!(out, "{:>width$}", format!("{:.2}{:<3}", e.beta, e.stars));
            }
            out.push('\n');
            let _ = write!(out, "{:<12}", "");
            for r in &cols {
                let e = r.term(term).expect("family terms");
                let _ = write!(out, "{:>width$}", format!("({:.2})   ", e.se));
            }
            out.push('\n');
        }
        for (label, f) in [("R^2", 0usize), ("Adj. R^2", 1), ("n", 2)] {
            let _ = write!(out, "{label:<12}");
            for r in &cols {
                let cell = match f {
                    0 => format!("{:.2}   ", r.r2),
                    1 => format!("{:.2}   ", r.adj_r2),
                    _ => format!("{}   ", r.n),
                };
                let _ = write!(out, "{cell:>width$}");
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}
