//! Report bundles: typed tables that render either as canonical JSON (full
//! precision) or as Markdown (rounded for display).

use std::fmt::Write as _;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Machine,
    Md,
}

/// A single table cell. Numbers keep full precision; `decimals` only
/// affects the Markdown rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Cell {
    Text {
        value: String,
    },
    Int {
        value: i64,
    },
    Number {
        value: f64,
        decimals: u8,
    },
    /// Difference rendered with an explicit sign.
    Delta {
        value: f64,
        decimals: u8,
    },
    /// A fraction in `[0, 1]` rendered as a percentage, optionally annotated
    /// with a p-value.
    Percent {
        value: f64,
        decimals: u8,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p_value: Option<f64>,
    },
    PValue {
        value: f64,
    },
    Empty,
}

impl Cell {
    pub fn text(value: impl Into<String>) -> Self {
        Cell::Text { value: value.into() }
    }

    pub fn int(value: impl Into<i64>) -> Self {
        Cell::Int { value: value.into() }
    }

    pub fn number(value: f64, decimals: u8) -> Self {
        Cell::Number { value, decimals }
    }

    pub fn delta(value: f64, decimals: u8) -> Self {
        Cell::Delta { value, decimals }
    }

    pub fn percent(value: f64, decimals: u8) -> Self {
        Cell::Percent {
            value,
            decimals,
            p_value: None,
        }
    }

    pub fn percent_with_p(value: f64, decimals: u8, p_value: f64) -> Self {
        Cell::Percent {
            value,
            decimals,
            p_value: Some(p_value),
        }
    }

    pub fn p_value(value: f64) -> Self {
        Cell::PValue { value }
    }

    /// The full-precision numeric value, if any.
    pub fn value(&self) -> Option<f64> {
        match *self {
            Cell::Int { value } => Some(value as f64),
            Cell::Number { value, .. }
            | Cell::Delta { value, .. }
            | Cell::Percent { value, .. }
            | Cell::PValue { value } => Some(value),
            Cell::Text { .. } | Cell::Empty => None,
        }
    }

    pub fn render(&self) -> String {
        match self {
            Cell::Text { value } => value.clone(),
            Cell::Int { value } => value.to_string(),
            Cell::Number { value, decimals } => format!("{:.*}", *decimals as usize, value),
            Cell::Delta { value, decimals } => format!("{:+.*}", *decimals as usize, value),
            Cell::Percent {
                value,
                decimals,
                p_value,
            } => {
                let mut s = format!("{:.*}%", *decimals as usize, value * 100.0);
                if let Some(p) = p_value {
                    write!(s, " (p {})", render_p(*p)).unwrap();
                }
                s
            }
            Cell::PValue { value } => {
                if *value < 0.001 {
                    "< 0.001".to_string()
                } else {
                    format!("{value:.3}")
                }
            }
            Cell::Empty => String::new(),
        }
    }
}

/// Timestamp for `generated_at`. Honors `SOURCE_DATE_EPOCH` (seconds since
/// the epoch) so repeated runs can produce identical bytes.
pub fn report_timestamp() -> DateTime<Utc> {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse::<i64>().ok())
        .and_then(|secs| DateTime::from_timestamp(secs, 0))
        .unwrap_or_else(Utc::now)
}

/// `< 0.001` below the display floor, otherwise three decimals.
pub fn render_p(p: f64) -> String {
    if p < 0.001 {
        "< 0.001".to_string()
    } else {
        format!("= {p:.3}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub caption: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(caption: impl Into<String>, headers: impl IntoIterator<Item = S>) -> Self {
        Table {
            caption: caption.into(),
            headers: headers.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.headers.len(), "row width must match headers");
        self.rows.push(row);
    }

    /// Finds the first row whose leading cell is the given text.
    pub fn row(&self, label: &str) -> Option<&[Cell]> {
        self.rows
            .iter()
            .find(|r| matches!(r.first(), Some(Cell::Text { value }) if value == label))
            .map(Vec::as_slice)
    }

    pub fn column(&self, header: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == header)
    }

    pub fn cell(&self, row_label: &str, header: &str) -> Option<&Cell> {
        let col = self.column(header)?;
        self.row(row_label).and_then(|r| r.get(col))
    }

    fn render_markdown(&self, out: &mut String) {
        writeln!(out, "**{}**\n", self.caption).unwrap();
        writeln!(out, "| {} |", self.headers.join(" | ")).unwrap();
        writeln!(out, "|{}", "---|".repeat(self.headers.len())).unwrap();
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::render).collect();
            writeln!(out, "| {} |", cells.join(" | ")).unwrap();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub title: String,
    pub generated_at: DateTime<Utc>,
    pub tables: Vec<Table>,
    pub notes: Vec<String>,
}

impl ReportBundle {
    pub fn new(title: impl Into<String>, generated_at: DateTime<Utc>) -> Self {
        ReportBundle {
            title: title.into(),
            generated_at,
            tables: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn with_table(mut self, table: Table) -> Self {
        self.tables.push(table);
        self
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn table(&self, caption_prefix: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.caption.starts_with(caption_prefix))
    }

    /// Canonical structured rendering with full-precision numbers.
    pub fn machine_form(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_machine_form(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# {}\n", self.title).unwrap();
        writeln!(
            out,
            "_Generated {}_\n",
            self.generated_at.to_rfc3339_opts(SecondsFormat::Secs, true)
        )
        .unwrap();
        for table in &self.tables {
            table.render_markdown(&mut out);
            out.push('\n');
        }
        for note in &self.notes {
            writeln!(out, "> {note}").unwrap();
        }
        out
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Machine => self.machine_form(),
            ReportFormat::Md => self.to_markdown(),
        }
    }
}
