use std::collections::BTreeSet;

use super::types::{RhythmAnnotation, RhythmClass};
use super::SignalIoError;

/// One rhythm-change line, whether or not its token maps onto a class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RhythmChange {
    pub sample_index: usize,
    pub token: String,
    pub label: Option<RhythmClass>,
}

/// Result of a lenient scan: every change point plus the tokens that had
/// no class.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AnnotationScan {
    pub changes: Vec<RhythmChange>,
    pub unknown_tokens: BTreeSet<String>,
    pub repaired_order: bool,
}

impl AnnotationScan {
    pub fn annotations(&self) -> Vec<RhythmAnnotation> {
        self.changes
            .iter()
            .filter_map(|c| {
                c.label.map(|label| RhythmAnnotation {
                    sample_index: c.sample_index,
                    label,
                })
            })
            .collect()
    }

    /// Sample indices of changes into rhythms outside the five classes.
    pub fn unknown_boundaries(&self) -> Vec<usize> {
        self.changes
            .iter()
            .filter(|c| c.label.is_none())
            .map(|c| c.sample_index)
            .collect()
    }
}

/// Parses `elapsed_time sample_index ... rhythm_token` lines; `#` starts a
/// comment. Unknown tokens are collected rather than rejected.
pub fn scan_annotations(text: &str) -> Result<AnnotationScan, SignalIoError> {
    let mut scan = AnnotationScan::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 3 {
            return Err(SignalIoError::MalformedAnnotation {
                line: i + 1,
                message: "expected `elapsed_time sample_index rhythm_token`".into(),
            });
        }
        let sample_index: usize = fields[1].parse().map_err(|_| SignalIoError::MalformedAnnotation {
            line: i + 1,
            message: format!("sample index `{}` is not an integer", fields[1]),
        })?;
        let token = fields[fields.len() - 1].to_string();
        let label = RhythmClass::from_rhythm_token(&token);
        if label.is_none() {
            scan.unknown_tokens.insert(token.clone());
        }
        scan.changes.push(RhythmChange {
            sample_index,
            token,
            label,
        });
    }
    if scan.changes.windows(2).any(|w| w[0].sample_index > w[1].sample_index) {
        log::warn!("annotation lines out of order; sorting by sample index");
        scan.changes.sort_by_key(|c| c.sample_index);
        scan.repaired_order = true;
    }
    Ok(scan)
}

/// Strict parse: any token outside the class table is an error.
pub fn read_annotations(text: &str) -> Result<Vec<RhythmAnnotation>, SignalIoError> {
    let scan = scan_annotations(text)?;
    if let Some(change) = scan.changes.iter().find(|c| c.label.is_none()) {
        return Err(SignalIoError::UnknownRhythmToken(change.token.clone()));
    }
    Ok(scan.annotations())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_line() {
        let ann = read_annotations("0:01.000 250 (VT").unwrap();
        assert_eq!(
            ann,
            vec![RhythmAnnotation {
                sample_index: 250,
                label: RhythmClass::Vt
            }]
        );
    }

    #[test]
    fn rdann_style_columns_and_comments() {
        let text = "# exported\n    0:00.000        0     +    0    0    0\t(N\n 0:10.000 2500 + 0 0 0 (VFL # flutter\n";
        let ann = read_annotations(text).unwrap();
        assert_eq!(ann[1].label, RhythmClass::VfVfl);
        assert_eq!(ann[1].sample_index, 2500);
    }

    #[test]
    fn unknown_token_reported() {
        assert_eq!(
            read_annotations("0:00.000 0 (AFIB"),
            Err(SignalIoError::UnknownRhythmToken("(AFIB".into()))
        );
        let scan = scan_annotations("0:00.000 0 (AFIB\n0:01.000 250 (VT").unwrap();
        assert_eq!(scan.unknown_boundaries(), vec![0]);
        assert!(scan.unknown_tokens.contains("(AFIB"));
    }

    #[test]
    fn unsorted_input_repaired() {
        let scan = scan_annotations("0:02.000 500 (VT\n0:01.000 250 (N").unwrap();
        assert!(scan.repaired_order);
        assert_eq!(scan.changes[0].sample_index, 250);
    }

    #[test]
    fn bad_index() {
        assert!(matches!(
            read_annotations("0:00 abc (N"),
            Err(SignalIoError::MalformedAnnotation { line: 1, .. })
        ));
    }
}
