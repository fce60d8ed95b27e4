//! Report tables, ROC exports and prediction files.
//!
//! The performance table has one row per disease with the columns
//! `Sensitivity (%)`, `Specificity (%)` and `AUC`. The CSV form keeps every
//! value as a fraction with three decimals; the text form prints
//! sensitivity and specificity as percentages. Undefined values print as
//! `n/a`.

use std::fmt::Write as _;
use std::path::Path;

use super::{ConfusionCounts, RocCurve};
use crate::error::{Error, Result};

/// The fourteen ChestX-ray14 abnormalities in their customary order.
pub const CHESTXRAY14_CLASSES: [&str; 14] = [
    "Atelectasis",
    "Cardiomegaly",
    "Effusion",
    "Infiltration",
    "Mass",
    "Nodule",
    "Pneumonia",
    "Pneumothorax",
    "Consolidation",
    "Edema",
    "Emphysema",
    "Fibrosis",
    "Pleural Thickening",
    "Hernia",
];

pub const PERFORMANCE_COLUMNS: [&str; 3] = ["Sensitivity (%)", "Specificity (%)", "AUC"];

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub name: String,
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub auc: Option<f64>,
}

/// One row of a method comparison table; missing values print as `_`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub method: String,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub auc: Option<f64>,
}

fn frac(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_owned(), |v| format!("{v:.3}"))
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_owned(), |v| format!("{:.2}", 100.0 * v))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

pub fn performance_csv(rows: &[ClassReport]) -> String {
    let mut out = format!("Diseases,{}\n", PERFORMANCE_COLUMNS.join(","));
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            csv_field(&r.name),
            frac(r.sensitivity),
            frac(r.specificity),
            frac(r.auc)
        );
    }
    out
}

fn aligned(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<String>| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(s, "{cell:<w$}");
            } else {
                let _ = write!(s, "  {cell:>w$}");
            }
        }
        s.trim_end().to_owned() + "\n"
    };
    let mut out = line(header.iter().map(|h| h.to_string()).collect());
    let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.clone()));
    }
    out
}

pub fn performance_text(rows: &[ClassReport]) -> String {
    let mut header = vec!["Diseases"];
    header.extend(PERFORMANCE_COLUMNS);
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.name.clone(), pct(r.sensitivity), pct(r.specificity), frac(r.auc)])
        .collect();
    aligned(&header, &cells)
}

/// Per-class AUC table, one row per class in `rows` order.
pub fn auc_table_csv(rows: &[ClassReport]) -> String {
    let mut out = "Abnormalities,AUC\n".to_owned();
    for r in rows {
        let _ = writeln!(out, "{},{}", csv_field(&r.name), frac(r.auc));
    }
    out
}

pub fn auc_table_text(rows: &[ClassReport]) -> String {
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.name.clone(), frac(r.auc)])
        .collect();
    aligned(&["Abnormalities", "AUC"], &cells)
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let opt = |v: Option<f64>, digits: usize, scale: f64| {
        v.map_or_else(|| "_".to_owned(), |v| format!("{:.*}", digits, v * scale))
    };
    let mut out = format!("Method,{}\n", PERFORMANCE_COLUMNS.join(","));
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            csv_field(&r.method),
            opt(r.sensitivity, 2, 100.0),
            opt(r.specificity, 2, 100.0),
            opt(r.auc, 3, 1.0)
        );
    }
    out
}

/// `threshold,fpr,tpr` for every point, highest threshold first.
pub fn roc_csv(roc: &RocCurve) -> String {
    let mut out = "threshold,fpr,tpr\n".to_owned();
    for p in &roc.points {
        let _ = writeln!(out, "{},{},{}", p.threshold, p.fpr, p.tpr);
    }
    out
}

/// Per-sample class scores: CSV `sample_id,<class1>,<class2>,...`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub classes: Vec<String>,
    pub ids: Vec<String>,
    /// `scores[i][c]`, sample-major.
    pub scores: Vec<Vec<f32>>,
}

impl Predictions {
    pub fn class_scores(&self, class: usize) -> Vec<f64> {
        self.scores.iter().map(|s| s[class] as f64).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = "sample_id".to_owned();
        for c in &self.classes {
            out.push(',');
            out.push_str(&csv_field(c));
        }
        out.push('\n');
        for (id, row) in self.ids.iter().zip(&self.scores) {
            out.push_str(&csv_field(id));
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn write_predictions(path: impl AsRef<Path>, p: &Predictions) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, p.to_csv()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Predictions> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let header = rdr
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .clone();
    if header.get(0) != Some("sample_id") {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            line: 1,
            message: "header must start with sample_id".into(),
        });
    }
    let classes: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let mut p = Predictions {
        classes,
        ids: Vec::new(),
        scores: Vec::new(),
    };
    for (i, rec) in rdr.records().enumerate() {
        let err = |message: String| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 2,
            message,
        };
        let rec = rec.map_err(|e| err(e.to_string()))?;
        p.ids.push(rec[0].to_owned());
        let row = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f32>().map_err(|e| err(format!("score {v:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        p.scores.push(row);
    }
    Ok(p)
}
