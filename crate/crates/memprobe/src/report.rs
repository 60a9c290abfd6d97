//! Report files written by the subcommands.
//!
//! Every delimited file starts with the provenance comment line; JSON files
//! carry the same information under a `provenance` key.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use memprobe_core::features::{Column, Feature};
use memprobe_core::sae::TrainReport;
use memprobe_core::stats::{ColumnCorrelation, CorrelationResult, GlmFit, GroupStats};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::manifest::Category;
use crate::provenance::{data_lines, Provenance};

/// Significance threshold for the `significant` flag.
pub const ALPHA: f64 = 0.05;

pub const CORRELATIONS_HEADER: &str = "feature,layer,n,coef,p_value,significant,note";
pub const EXTERNAL_HEADER: &str = "series,n,coef,p_value,significant";
pub const CATEGORIES_HEADER: &str = "category,variable,n,mean,std";
pub const GLM_HEADER: &str = "term,coef,std_err,z,p_value,stars";
pub const EPOCH_SERIES_HEADER: &str = "epoch,seeds,train_loss_mean,train_loss_std,val_loss_mean,val_loss_std,\
eval_coef_mean,eval_coef_std,all_coef_mean,all_coef_std";
pub const LOSSES_HEADER: &str = "seed,image_id,set,recon_loss,memorability,category";
pub const SCORES_HEADER: &str = "image_id,recon_loss,memorability,category";

/// Text buffer for a delimited report.
#[derive(Debug)]
pub struct Delimited {
    text: String,
}

impl Delimited {
    pub fn new(provenance: &Provenance, header: &str) -> Self {
        Self {
            text: format!("{}\n{header}\n", provenance.comment_line()),
        }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: std::fmt::Display,
    {
        for (i, f) in fields.into_iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            write!(self.text, "{f}").unwrap();
        }
        self.text.push('\n');
    }

    pub fn into_string(self) -> String {
        self.text
    }

    pub fn write(self, path: &Path) -> Result<()> {
        write_text(path, &self.text)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::BadHeader(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

/// A parsed delimited report: header fields and data rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Records {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Records {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// Parses a report written by [`Delimited`], checking that every row has as
/// many fields as the header.
pub fn parse_records(text: &str, path: &Path) -> Result<Records> {
    let mut lines = data_lines(text);
    let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "missing header"))?;
    let header: Vec<String> = header.split(',').map(str::to_string).collect();
    let mut rows = Vec::new();
    for (line, l) in lines {
        let row: Vec<String> = l.split(',').map(str::to_string).collect();
        if row.len() != header.len() {
            return Err(Error::parse(
                path,
                line,
                format!("expected {} fields, found {}", header.len(), row.len()),
            ));
        }
        rows.push(row);
    }
    Ok(Records { header, rows })
}

pub fn read_records(path: &Path) -> Result<Records> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text, path)
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// `correlations.csv`: one row per (feature, layer). Columns whose
/// correlation is undefined keep an empty coefficient and explain why in
/// `note`.
pub fn correlations_csv(rows: &[ColumnCorrelation], provenance: &Provenance) -> String {
    let mut out = Delimited::new(provenance, CORRELATIONS_HEADER);
    for r in rows {
        let (feature, layer) = (r.column.feature.name(), r.column.layer);
        match &r.result {
            Ok(c) => out.row([
                feature.to_string(),
                layer.to_string(),
                c.n.to_string(),
                c.coef.to_string(),
                c.p_value.to_string(),
                c.significant(ALPHA).to_string(),
                String::new(),
            ]),
            Err(e) => out.row([
                feature.to_string(),
                layer.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                e.to_string().replace(',', ";"),
            ]),
        }
    }
    out.into_string()
}

/// `layer_series.csv`: wide layout for layer-sweep plots, one row per layer
/// and a `coef`/`p` column pair per feature. Missing cells are empty.
pub fn layer_series_csv(rows: &[ColumnCorrelation], provenance: &Provenance) -> String {
    let mut features: Vec<Feature> = rows.iter().map(|r| r.column.feature).collect();
    features.dedup();
    let mut by_layer: BTreeMap<usize, BTreeMap<Feature, CorrelationResult>> = BTreeMap::new();
    for r in rows {
        let slot = by_layer.entry(r.column.layer).or_default();
        if let Ok(c) = r.result {
            slot.insert(r.column.feature, c);
        }
    }
    let mut header = String::from("layer");
    for f in &features {
        write!(header, ",{f}_coef,{f}_p").unwrap();
    }
    let mut out = Delimited::new(provenance, &header);
    for (layer, cells) in by_layer {
        let mut row = vec![layer.to_string()];
        for f in &features {
            let c = cells.get(f);
            row.push(opt(c.map(|c| c.coef)));
            row.push(opt(c.map(|c| c.p_value)));
        }
        out.row(row);
    }
    out.into_string()
}

#[derive(Debug, Serialize)]
struct AppendixRow {
    layer: usize,
    n: usize,
    coef: f64,
    p_value: f64,
    /// Set when `p >= 0.05`.
    not_significant: bool,
}

#[derive(Debug, Serialize)]
struct AppendixTable {
    feature: &'static str,
    rows: Vec<AppendixRow>,
    undefined: Vec<UndefinedRow>,
}

#[derive(Debug, Serialize)]
struct UndefinedRow {
    layer: usize,
    reason: String,
}

#[derive(Debug, Serialize)]
struct CorrelationDocument<'a> {
    provenance: &'a Provenance,
    target: &'a str,
    tables: Vec<AppendixTable>,
}

/// Structured report with one table per feature: layer, coefficient and
/// p-value, non-significant rows flagged.
pub fn correlations_json(rows: &[ColumnCorrelation], target: &str, provenance: &Provenance) -> serde_json::Value {
    let mut tables: Vec<AppendixTable> = Vec::new();
    for r in rows {
        let feature = r.column.feature.name();
        if tables.last().map_or(true, |t| t.feature != feature) {
            tables.push(AppendixTable {
                feature,
                rows: Vec::new(),
                undefined: Vec::new(),
            });
        }
        let table = tables.last_mut().unwrap();
        match &r.result {
            Ok(c) => table.rows.push(AppendixRow {
                layer: r.column.layer,
                n: c.n,
                coef: c.coef,
                p_value: c.p_value,
                not_significant: !c.significant(ALPHA),
            }),
            Err(e) => table.undefined.push(UndefinedRow {
                layer: r.column.layer,
                reason: e.to_string(),
            }),
        }
    }
    serde_json::to_value(CorrelationDocument {
        provenance,
        target,
        tables,
    })
    .expect("report serialises")
}

pub fn external_csv(name: &str, result: &CorrelationResult, provenance: &Provenance) -> String {
    let mut out = Delimited::new(provenance, EXTERNAL_HEADER);
    out.row([
        name.to_string(),
        result.n.to_string(),
        result.coef.to_string(),
        result.p_value.to_string(),
        result.significant(ALPHA).to_string(),
    ]);
    out.into_string()
}

/// One summarised variable, e.g. memorability or a feature column.
pub struct CategoryBlock<'a> {
    pub variable: String,
    pub groups: &'a [(Category, GroupStats)],
}

pub fn categories_csv(blocks: &[CategoryBlock<'_>], provenance: &Provenance) -> String {
    let mut out = Delimited::new(provenance, CATEGORIES_HEADER);
    for b in blocks {
        for (cat, s) in b.groups {
            out.row([
                cat.name().to_string(),
                b.variable.clone(),
                s.n.to_string(),
                s.mean.to_string(),
                opt(s.std),
            ]);
        }
    }
    out.into_string()
}

pub fn glm_csv(fit: &GlmFit, provenance: &Provenance) -> String {
    let mut out = Delimited::new(provenance, GLM_HEADER);
    for t in &fit.terms {
        out.row([
            t.name.clone(),
            t.coef.to_string(),
            t.std_err.to_string(),
            t.z.to_string(),
            t.p_value.to_string(),
            t.stars().to_string(),
        ]);
    }
    out.into_string()
}

/// Human-readable regression table.
pub fn glm_table(fit: &GlmFit, layer: usize, provenance: &Provenance) -> String {
    let width = fit.terms.iter().map(|t| t.name.len()).max().unwrap_or(0).max(9);
    let mut out = format!("{}\n", provenance.comment_line());
    writeln!(out, "Gaussian GLM (identity link), layer {layer}, n = {}", fit.n).unwrap();
    writeln!(out, "{:<width$} {:>12} {:>12} {:>10}", "", "Coef", "Std Err", "Z").unwrap();
    for t in &fit.terms {
        writeln!(
            out,
            "{:<width$} {:>12.4} {:>12.4} {:>10.3} {}",
            t.name,
            t.coef,
            t.std_err,
            t.z,
            t.stars()
        )
        .unwrap();
    }
    writeln!(out, "dispersion {:.6e}  rss {:.6e}", fit.dispersion, fit.rss).unwrap();
    out.push_str("*** p < 0.001, ** p < 0.01, * p < 0.05\n");
    out
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1)
        .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), std)
}

/// Per-epoch mean and sample standard deviation across seeds. The standard
/// deviation is empty for a single seed.
pub fn epoch_series_csv(reports: &[TrainReport], provenance: &Provenance) -> String {
    let mut out = Delimited::new(provenance, EPOCH_SERIES_HEADER);
    let epochs = reports.iter().map(|r| r.epochs.len()).min().unwrap_or(0);
    for e in 0..epochs {
        let at = |f: &dyn Fn(&memprobe_core::sae::EpochReport) -> Option<f64>| -> Vec<f64> {
            reports.iter().filter_map(|r| f(&r.epochs[e])).collect()
        };
        let mut row = vec![(e + 1).to_string(), reports.len().to_string()];
        for series in [
            at(&|r| Some(r.train_loss)),
            at(&|r| r.val_loss),
            at(&|r| r.eval_correlation.map(|c| c.coef)),
            at(&|r| r.all_correlation.map(|c| c.coef)),
        ] {
            let (m, s) = mean_std(&series);
            row.push(opt(m));
            row.push(opt(s));
        }
        out.row(row);
    }
    out.into_string()
}

#[derive(Debug, Serialize)]
pub struct CorrelationRecord {
    pub coef: f64,
    pub p_value: f64,
    pub n: usize,
}

impl From<CorrelationResult> for CorrelationRecord {
    fn from(c: CorrelationResult) -> Self {
        Self {
            coef: c.coef,
            p_value: c.p_value,
            n: c.n,
        }
    }
}

#[derive(Debug, Serialize)]
struct EpochRecord {
    epoch: usize,
    train_loss: f64,
    val_loss: Option<f64>,
    eval_correlation: Option<CorrelationRecord>,
    all_correlation: Option<CorrelationRecord>,
}

#[derive(Debug, Serialize)]
struct RunRecord {
    seed: u64,
    regime: &'static str,
    initial_loss: f64,
    final_loss: f64,
    train_size: usize,
    eval_size: usize,
    epochs: Vec<EpochRecord>,
    warnings: Vec<String>,
}

/// Structured training report: one entry per seed.
pub fn train_report_json<C: Serialize>(
    reports: &[TrainReport],
    config: &C,
    representation: &str,
    provenance: &Provenance,
) -> serde_json::Value {
    let runs: Vec<RunRecord> = reports
        .iter()
        .map(|r| RunRecord {
            seed: r.seed,
            regime: r.regime.name(),
            initial_loss: r.initial_loss,
            final_loss: r.final_loss,
            train_size: r.train_indices.len(),
            eval_size: r.eval_indices.len(),
            epochs: r
                .epochs
                .iter()
                .map(|e| EpochRecord {
                    epoch: e.epoch,
                    train_loss: e.train_loss,
                    val_loss: e.val_loss,
                    eval_correlation: e.eval_correlation.map(Into::into),
                    all_correlation: e.all_correlation.map(Into::into),
                })
                .collect(),
            warnings: r.warnings.clone(),
        })
        .collect();
    serde_json::json!({
        "provenance": provenance,
        "representation": representation,
        "recon_loss": crate::model_file::RECON_LOSS,
        "config": config,
        "runs": runs,
    })
}

/// Header for a latent export with `hidden_dim` bottleneck units.
pub fn latents_header(hidden_dim: usize) -> String {
    let mut h = String::from("image_id");
    for i in 0..hidden_dim {
        write!(h, ",z_{i}").unwrap();
    }
    h.push_str(",mean_abs_z,memorability,category");
    h
}

/// Columns named in a correlation sweep, for quick lookups in tests and
/// callers.
pub fn find_correlation(rows: &[ColumnCorrelation], column: Column) -> Option<&CorrelationResult> {
    rows.iter().find(|r| r.column == column).and_then(|r| r.result.as_ref().ok())
}

#[cfg(test)]
mod tests {
    use super::*;
    use memprobe_core::Error as CoreError;

    fn prov() -> Provenance {
        Provenance::new(&"test", 1)
    }

    fn sweep() -> Vec<ColumnCorrelation> {
        let ok = |coef, p_value| Ok(CorrelationResult { coef, p_value, n: 10 });
        vec![
            ColumnCorrelation {
                column: Column::new(Feature::ActMean, 1),
                result: ok(0.5, 0.01),
            },
            ColumnCorrelation {
                column: Column::new(Feature::ActMean, 2),
                result: ok(-0.1, 0.4),
            },
            ColumnCorrelation {
                column: Column::new(Feature::PatchUniformity, 0),
                result: Err(CoreError::ConstantInput),
            },
        ]
    }

    #[test]
    fn correlation_csv_schema() {
        let text = correlations_csv(&sweep(), &prov());
        let r = parse_records(&text, Path::new("c.csv")).unwrap();
        assert_eq!(r.header.join(","), CORRELATIONS_HEADER);
        assert_eq!(r.rows.len(), 3);
        assert_eq!(r.rows[0][5], "true");
        assert_eq!(r.rows[1][5], "false");
        assert_eq!(r.rows[2][3], "");
        assert!(!r.rows[2][6].is_empty());
    }

    #[test]
    fn layer_series_is_wide() {
        let text = layer_series_csv(&sweep(), &prov());
        let r = parse_records(&text, Path::new("s.csv")).unwrap();
        assert_eq!(
            r.header,
            ["layer", "act_mean_coef", "act_mean_p", "patch_uniformity_coef", "patch_uniformity_p"]
        );
        assert_eq!(r.rows[0], ["0", "", "", "", ""]);
        assert_eq!(r.rows[1][1], "0.5");
    }

    #[test]
    fn appendix_json_flags_non_significant() {
        let v = correlations_json(&sweep(), "memorability", &prov());
        let rows = &v["tables"][0]["rows"];
        assert_eq!(rows[0]["not_significant"], false);
        assert_eq!(rows[1]["not_significant"], true);
        assert_eq!(v["tables"][1]["undefined"][0]["layer"], 0);
    }

    #[test]
    fn ragged_report_rejected() {
        assert!(parse_records("# x\na,b\n1\n", Path::new("r.csv")).is_err());
    }
}
