//! Tab-separated output files and their readers.
//!
//! Every file starts with a `#` comment line carrying the artifact version,
//! the config hash and the seed, followed by optional `# key=value` lines,
//! a header row and data rows. Floats are written in Rust's shortest
//! round-trip form so files reproduce bit-exact values.

use std::fmt::Write as _;
use std::io::{self, Write};

use roughskew_core::analytics::SkewReport;
use roughskew_core::rbergomi::BatchSummary;
use roughskew_core::{PriceGrid, SmileSlice};

use crate::config::ExperimentConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Identifies the run that produced a file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn of(cfg: &ExperimentConfig) -> Self {
        Self { config_hash: cfg.hash(), seed: cfg.simulation.seed }
    }

    pub fn header(&self) -> String {
        format!("# roughskew {VERSION} config={} seed={}", self.config_hash, self.seed)
    }
}

/// Outcome of one `(H, rho, T)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRow {
    pub hurst: f64,
    pub rho: f64,
    pub maturity: f64,
    pub outcome: Result<SkewReport, String>,
}

/// Columns of a figure file: `x` and one `y` series per curve.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureData {
    pub x: Vec<f64>,
    pub series: Vec<Vec<f64>>,
}

fn clean(reason: &str) -> String {
    reason.replace(['\t', '\n', '\r'], " ")
}

fn line(w: &mut impl Write, fields: &[String]) -> io::Result<()> {
    writeln!(w, "{}", fields.join("\t"))
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn rounded(v: f64) -> String {
    let s = format!("{v:.4}");
    if s == "-0.0000" {
        "0.0000".into()
    } else {
        s
    }
}

pub fn write_smile(w: &mut impl Write, prov: &Provenance, slice: &SmileSlice) -> io::Result<()> {
    writeln!(w, "{}", prov.header())?;
    writeln!(
        w,
        "# t={} maturity={} log_spot={} n_paths={}",
        slice.t, slice.maturity, slice.log_spot, slice.n_paths
    )?;
    writeln!(w, "k\tiv\tstderr")?;
    for i in 0..slice.len() {
        let se = slice.stderr.as_ref().map_or(f64::NAN, |s| s[i]);
        line(w, &[num(slice.strikes[i]), num(slice.ivs[i]), num(se)])?;
    }
    Ok(())
}

pub fn write_price_grid(w: &mut impl Write, prov: &Provenance, grid: &PriceGrid) -> io::Result<()> {
    writeln!(w, "{}", prov.header())?;
    writeln!(w, "# maturity={} log_spot={}", grid.maturity, grid.log_spot)?;
    writeln!(w, "k\tprice\tstderr")?;
    for (k, p) in grid.log_strikes.iter().zip(&grid.prices) {
        line(w, &[num(*k), num(p.value), num(p.stderr)])?;
    }
    Ok(())
}

pub fn write_batch_summaries(w: &mut impl Write, prov: &Provenance, batches: &[BatchSummary]) -> io::Result<()> {
    writeln!(w, "{}", prov.header())?;
    writeln!(w, "batch\tn\tmean_ST\tmean_v")?;
    for b in batches {
        line(w, &[b.batch.to_string(), b.n.to_string(), num(b.mean_terminal_spot), num(b.mean_realized_vol)])?;
    }
    Ok(())
}

pub const TABLE_COLUMNS: [&str; 23] = [
    "H",
    "T",
    "iv_minus",
    "iv_minus_se",
    "iv_plus",
    "iv_plus_se",
    "cov",
    "cov_se",
    "skew_diff",
    "skew_diff_se",
    "ratio_skew",
    "ratio_skew_se",
    "ratio_cov",
    "ratio_cov_se",
    "skew_cov_ratio",
    "skew_cov_ratio_se",
    "atm_iv",
    "atm_skew",
    "slope_approx",
    "k_minus",
    "k_plus",
    "dropped",
    "reason",
];

fn table_fields(row: &CellRow) -> Vec<String> {
    let mut f = vec![num(row.hurst), num(row.maturity)];
    match &row.outcome {
        Ok(r) => {
            for e in [r.iv_minus, r.iv_plus, r.covariance, r.skew_diff, r.ratio_skew, r.ratio_cov] {
                f.push(num(e.value));
                f.push(num(e.stderr));
            }
            f.push(num(r.skew_cov_ratio()));
            f.push(num(r.skew_cov_ratio_stderr()));
            for v in [r.atm_iv, r.atm_skew, r.slope_approx, r.k_minus, r.k_plus] {
                f.push(num(v));
            }
            f.push(r.dropped.to_string());
            f.push("ok".into());
        }
        Err(reason) => {
            f.extend((2..TABLE_COLUMNS.len() - 1).map(|_| num(f64::NAN)));
            f.push(clean(reason));
        }
    }
    f
}

/// Full-precision table for one correlation.
pub fn write_table(w: &mut impl Write, prov: &Provenance, rho: f64, rows: &[CellRow]) -> io::Result<()> {
    writeln!(w, "{}", prov.header())?;
    writeln!(w, "# rho={rho}")?;
    writeln!(w, "{}", TABLE_COLUMNS.join("\t"))?;
    for row in rows {
        line(w, &table_fields(row))?;
    }
    Ok(())
}

pub const DISPLAY_COLUMNS: [&str; 7] = ["H", "T", "iv_minus", "iv_plus", "cov", "ratio_skew", "ratio_cov"];

/// The table rounded to four decimals for side-by-side reading with published four-decimal tables.
pub fn write_table_display(w: &mut impl Write, prov: &Provenance, rho: f64, rows: &[CellRow]) -> io::Result<()> {
    writeln!(w, "{}", prov.header())?;
    writeln!(w, "# rho={rho}")?;
    writeln!(w, "{}", DISPLAY_COLUMNS.join("\t"))?;
    for row in rows {
        let mut f = vec![num(row.hurst), num(row.maturity)];
        match &row.outcome {
            Ok(r) => {
                for v in [r.iv_minus.value, r.iv_plus.value, r.covariance.value, r.ratio_skew.value, r.ratio_cov.value] {
                    f.push(rounded(v));
                }
            }
            Err(_) => f.extend((0..5).map(|_| num(f64::NAN))),
        }
        line(w, &f)?;
    }
    Ok(())
}

pub fn write_figure(w: &mut impl Write, prov: &Provenance, fig: &FigureData) -> io::Result<()> {
    writeln!(w, "{}", prov.header())?;
    let mut header = String::from("x");
    for i in 0..fig.series.len() {
        let _ = write!(header, "\ty{}", i + 1);
    }
    writeln!(w, "{header}")?;
    for (i, x) in fig.x.iter().enumerate() {
        let mut f = vec![num(*x)];
        f.extend(fig.series.iter().map(|s| num(s[i])));
        line(w, &f)?;
    }
    Ok(())
}

/// A parsed TSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Tsv {
    /// Comment lines without the leading `#` and surrounding spaces.
    pub comments: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Tsv {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut comments = Vec::new();
        let mut columns: Option<Vec<String>> = None;
        let mut rows = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            if let Some(c) = raw.strip_prefix('#') {
                comments.push(c.trim().to_string());
                continue;
            }
            if raw.is_empty() {
                continue;
            }
            let fields: Vec<String> = raw.split('\t').map(str::to_string).collect();
            match &columns {
                None => columns = Some(fields),
                Some(cols) if cols.len() != fields.len() => {
                    return Err(format!("line {}: {} fields, header has {}", n + 1, fields.len(), cols.len()));
                }
                Some(_) => rows.push(fields),
            }
        }
        let columns = columns.ok_or("missing header row")?;
        Ok(Self { comments, columns, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize, String> {
        self.columns.iter().position(|c| c == name).ok_or_else(|| format!("missing column `{name}`"))
    }

    pub fn floats(&self, name: &str) -> Result<Vec<f64>, String> {
        let c = self.column(name)?;
        self.rows
            .iter()
            .map(|r| r[c].parse::<f64>().map_err(|e| format!("column `{name}`: `{}`: {e}", r[c])))
            .collect()
    }

    /// Value of `key=value` in any comment line.
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.comments
            .iter()
            .flat_map(|c| c.split_whitespace())
            .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
    }

    fn meta_f64(&self, key: &str) -> Result<f64, String> {
        let v = self.meta(key).ok_or_else(|| format!("missing `{key}` in comments"))?;
        v.parse().map_err(|e| format!("`{key}`: {e}"))
    }
}

pub fn read_smile(text: &str) -> Result<SmileSlice, String> {
    let tsv = Tsv::parse(text)?;
    let strikes = tsv.floats("k")?;
    let ivs = tsv.floats("iv")?;
    let se = tsv.floats("stderr")?;
    let stderr = if se.iter().all(|v| v.is_nan()) { None } else { Some(se) };
    let mut slice = SmileSlice::new(
        tsv.meta_f64("t")?,
        tsv.meta_f64("maturity")?,
        tsv.meta_f64("log_spot")?,
        strikes,
        ivs,
        stderr,
    )
    .map_err(|e| e.to_string())?;
    slice.n_paths = tsv.meta_f64("n_paths")? as u64;
    Ok(slice)
}

/// Strikes, prices and standard errors of a price-grid file.
pub fn read_price_grid(text: &str) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), String> {
    let tsv = Tsv::parse(text)?;
    Ok((tsv.floats("k")?, tsv.floats("price")?, tsv.floats("stderr")?))
}
