//! Paragraph segmentation and document cleaning.
//!
//! Paragraphs are delimited by a blank line (`"\n\n"`). Before splitting,
//! every CRLF pair and every lone CR is turned into LF so that the rule
//! applies identically to text produced on any platform.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Rewrites CRLF and lone CR line endings to LF.
pub fn normalize_newlines(text: &str) -> String {
    if !text.contains('\r') {
        return text.to_owned();
    }
    text.replace("\r\n", "\n").replace('\r', "\n")
}

/// Splits raw text into trimmed, non-empty paragraphs.
///
/// ```
/// use paracode_core::corpus::split_paragraphs;
/// assert_eq!(
///     split_paragraphs("A people.\n\nThe elite."),
///     vec!["A people.", "The elite."]
/// );
/// ```
pub fn split_paragraphs(raw_text: &str) -> Vec<String> {
    normalize_newlines(raw_text)
        .split("\n\n")
        .map(str::trim)
        .filter(|piece| !piece.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Heuristics used by [`clean_document`] to drop headings and tables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningConfig {
    /// Drop short lines whose letters are all upper case.
    pub drop_caps_headings: bool,
    /// Drop short lines starting with an outline number such as `2.1` or `IV.`
    /// that do not end like a sentence.
    pub drop_outline_headings: bool,
    /// Drop lines that look like table rows.
    pub drop_tables: bool,
    /// A heading has at most this many whitespace-separated words.
    pub max_heading_words: usize,
    /// A table row has at least this many column separators. A separator is a
    /// tab or a run of two or more spaces between non-blank cells.
    pub min_table_separators: usize,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            drop_caps_headings: true,
            drop_outline_headings: true,
            drop_tables: true,
            max_heading_words: 10,
            min_table_separators: 2,
        }
    }
}

impl CleaningConfig {
    /// A configuration that keeps every line.
    pub fn disabled() -> Self {
        Self {
            drop_caps_headings: false,
            drop_outline_headings: false,
            drop_tables: false,
            ..Self::default()
        }
    }

    fn is_caps_heading(&self, line: &str) -> bool {
        let mut has_letter = false;
        for c in line.chars() {
            if c.is_alphabetic() {
                if c.is_lowercase() {
                    return false;
                }
                has_letter = true;
            }
        }
        has_letter && line.split_whitespace().count() <= self.max_heading_words
    }

    fn is_outline_heading(&self, line: &str) -> bool {
        static OUTLINE: OnceLock<Regex> = OnceLock::new();
        let outline = OUTLINE.get_or_init(|| {
            Regex::new(r"^(?:\d+(?:\.\d+)*[.)]?|[IVXLCDM]+[.)]|[A-Za-z][.)])\s+\S").unwrap()
        });
        outline.is_match(line)
            && line.split_whitespace().count() <= self.max_heading_words
            && !line.ends_with(['.', '!', '?', ';', ':', ','])
    }

    fn is_table_row(&self, line: &str) -> bool {
        count_column_separators(line) >= self.min_table_separators
    }

    fn drops(&self, line: &str) -> bool {
        let line = line.trim();
        if line.is_empty() {
            return false;
        }
        (self.drop_caps_headings && self.is_caps_heading(line))
            || (self.drop_outline_headings && self.is_outline_heading(line))
            || (self.drop_tables && self.is_table_row(line))
    }
}

/// Counts whitespace runs inside `line` that contain a tab or at least two
/// spaces. Leading and trailing whitespace is ignored.
fn count_column_separators(line: &str) -> usize {
    let line = line.trim();
    let mut separators = 0;
    let mut run_spaces = 0;
    let mut run_tab = false;
    for c in line.chars() {
        match c {
            '\t' => run_tab = true,
            c if c.is_whitespace() => run_spaces += 1,
            _ => {
                if run_tab || run_spaces >= 2 {
                    separators += 1;
                }
                run_spaces = 0;
                run_tab = false;
            }
        }
    }
    separators
}

/// Removes heading and table lines and returns the remaining paragraphs
/// joined by blank lines.
///
/// The result is in canonical form: paragraphs are trimmed and separated by
/// exactly one `"\n\n"`, so [`split_paragraphs`] recovers them unchanged.
pub fn clean_document(raw_text: &str, rules: &CleaningConfig) -> String {
    let normalized = normalize_newlines(raw_text);
    let kept: Vec<&str> = normalized.split('\n').filter(|line| !rules.drops(line)).collect();
    split_paragraphs(&kept.join("\n")).join("\n\n")
}
