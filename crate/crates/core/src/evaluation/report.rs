use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{round_half_up, EvaluationReport, ManifestoReport, ModelPerformance};
use crate::corpus::Dimension;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Text,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" | "table-text" => Ok(Self::Text),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(format!("unknown report format {s:?} (text, csv, json)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Cell {
    Text(String),
    Int(i64),
    /// Rendered half-up to 2 decimals.
    Num(f64),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(n) => n.to_string(),
            Cell::Num(x) => format!("{:.2}", round_half_up(*x, 2)),
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Cell::Text(s) => json!(s),
            Cell::Int(n) => json!(n),
            Cell::Num(x) => json!(round_half_up(*x, 2)),
        }
    }
}

/// A titled table with a fixed column order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    name: &'static str,
    title: &'static str,
    columns: Vec<&'static str>,
    rows: Vec<Vec<Cell>>,
}

impl ReportTable {
    pub fn name(&self) -> &str {
        self.name
    }

    pub fn columns(&self) -> &[&'static str] {
        &self.columns
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Text => self.text(),
            ReportFormat::Csv => self.csv(),
            ReportFormat::Json => {
                let mut s = serde_json::to_string_pretty(&self.json()).expect("tables serialize");
                s.push('\n');
                s
            }
        }
    }

    fn text(&self) -> String {
        let rendered: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(Cell::render).collect()).collect();
        let widths: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .map(|(i, h)| rendered.iter().map(|r| r[i].chars().count()).chain([h.chars().count()]).max().unwrap_or(0))
            .collect();
        let numeric: Vec<bool> = (0..self.columns.len())
            .map(|i| !self.rows.is_empty() && self.rows.iter().all(|r| !matches!(r[i], Cell::Text(_))))
            .collect();
        let line = |cells: &[String]| {
            let mut out = String::new();
            for (i, c) in cells.iter().enumerate() {
                if i > 0 {
                    out.push_str("  ");
                }
                let pad = widths[i] - c.chars().count();
                if numeric[i] {
                    out.extend(std::iter::repeat_n(' ', pad));
                    out.push_str(c);
                } else {
                    out.push_str(c);
                    out.extend(std::iter::repeat_n(' ', pad));
                }
            }
            out.trim_end().to_owned()
        };
        let header: Vec<String> = self.columns.iter().map(|s| s.to_string()).collect();
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.title);
        let _ = writeln!(out, "{}", line(&header));
        let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        for r in &rendered {
            let _ = writeln!(out, "{}", line(r));
        }
        out
    }

    fn csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory csv");
        for r in &self.rows {
            w.write_record(r.iter().map(Cell::render)).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv output is UTF-8")
    }

    fn json(&self) -> Value {
        json!({
            "name": self.name,
            "columns": self.columns,
            "rows": self.rows.iter().map(|r| r.iter().map(Cell::to_json).collect::<Vec<_>>()).collect::<Vec<_>>(),
        })
    }
}

/// Per-model metrics, four columns per dimension, AE first.
pub fn model_table(rows: &[ModelPerformance]) -> ReportTable {
    let mut columns = vec!["Model"];
    columns.extend([
        "Accuracy (AE)",
        "F1 (AE)",
        "Precision (AE)",
        "Recall (AE)",
        "Accuracy (PC)",
        "F1 (PC)",
        "Precision (PC)",
        "Recall (PC)",
    ]);
    let rows = rows
        .iter()
        .map(|m| {
            let mut r = vec![Cell::Text(m.model.display_name())];
            for d in [Dimension::Ae, Dimension::Pc] {
                let x = m.get(d);
                r.extend([Cell::Num(x.accuracy), Cell::Num(x.f1), Cell::Num(x.precision), Cell::Num(x.recall)]);
            }
            r
        })
        .collect();
    ReportTable {
        name: "models",
        title: "Model performance",
        columns,
        rows,
    }
}

/// One model's metrics as rows, one column per dimension.
pub fn summary_table(model: Option<&ModelPerformance>) -> ReportTable {
    let rows = match model {
        None => Vec::new(),
        Some(m) => [
            ("Accuracy", m.ae.accuracy, m.pc.accuracy),
            ("F1", m.ae.f1, m.pc.f1),
            ("Precision", m.ae.precision, m.pc.precision),
            ("Recall", m.ae.recall, m.pc.recall),
        ]
        .into_iter()
        .map(|(name, ae, pc)| vec![Cell::Text(name.into()), Cell::Num(ae), Cell::Num(pc)])
        .collect(),
    };
    ReportTable {
        name: "summary",
        title: "Ensemble performance",
        columns: vec!["Metric", "AE", "PC"],
        rows,
    }
}

pub fn manifesto_table(rows: &[ManifestoReport]) -> ReportTable {
    ReportTable {
        name: "manifestos",
        title: "Proportion of populist paragraphs",
        columns: vec![
            "Year",
            "Party",
            "AE-True",
            "AE-Pred",
            "PC-True",
            "PC-Pred",
            "F1-AE",
            "F1-PC",
            "Paragraph Count",
        ],
        rows: rows
            .iter()
            .map(|m| {
                vec![
                    Cell::Int(i64::from(m.year)),
                    Cell::Text(m.party.clone()),
                    Cell::Num(m.ae_true_prop),
                    Cell::Num(m.ae_pred_prop),
                    Cell::Num(m.pc_true_prop),
                    Cell::Num(m.pc_pred_prop),
                    Cell::Num(m.f1_ae),
                    Cell::Num(m.f1_pc),
                    Cell::Int(m.paragraph_count as i64),
                ]
            })
            .collect(),
    }
}

pub fn emit_model_table(rows: &[ModelPerformance], format: ReportFormat) -> String {
    model_table(rows).render(format)
}

pub fn emit_summary_table(model: Option<&ModelPerformance>, format: ReportFormat) -> String {
    summary_table(model).render(format)
}

pub fn emit_manifesto_table(rows: &[ManifestoReport], format: ReportFormat) -> String {
    manifesto_table(rows).render(format)
}

/// All three tables. Text and CSV separate them with a blank line; JSON
/// wraps them in one document.
pub fn emit_report(report: &EvaluationReport, format: ReportFormat) -> String {
    let tables = [
        model_table(&report.models),
        summary_table(report.ensemble()),
        manifesto_table(&report.manifestos),
    ];
    match format {
        ReportFormat::Json => {
            let doc = json!({
                "role": report.role,
                "threshold": report.threshold,
                "tables": tables.iter().map(ReportTable::json).collect::<Vec<_>>(),
            });
            let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
            s.push('\n');
            s
        }
        _ => tables.iter().map(|t| t.render(format)).collect::<Vec<_>>().join("\n"),
    }
}
