use serde::{Deserialize, Serialize};

use crate::signal_io::RhythmClass;

use super::TrainingError;

/// Confusion-matrix summary; rows are truth, columns predictions.
/// `None` marks a ratio with a zero denominator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confusion: Vec<Vec<u64>>,
    pub sensitivity: Vec<Option<f64>>,
    pub precision: Vec<Option<f64>>,
    pub accuracy: f64,
}

pub fn compute_metrics(confusion: &[Vec<u64>]) -> Result<MetricsReport, TrainingError> {
    let n = confusion.len();
    if n == 0 {
        return Err(TrainingError::EmptyMatrix);
    }
    if confusion.iter().any(|row| row.len() != n) {
        return Err(TrainingError::InvalidConfig(format!("confusion matrix is not {n} x {n}")));
    }
    let total: u64 = confusion.iter().flatten().sum();
    if total == 0 {
        return Err(TrainingError::EmptyMatrix);
    }
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    let sensitivity = (0..n)
        .map(|c| ratio(confusion[c][c], confusion[c].iter().sum()))
        .collect();
    let precision = (0..n)
        .map(|c| ratio(confusion[c][c], confusion.iter().map(|r| r[c]).sum()))
        .collect();
    let trace: u64 = (0..n).map(|c| confusion[c][c]).sum();
    Ok(MetricsReport {
        confusion: confusion.to_vec(),
        sensitivity,
        precision,
        accuracy: trace as f64 / total as f64,
    })
}

/// Confusion matrix from `(truth, prediction)` class ids.
pub fn confusion_matrix(pairs: impl IntoIterator<Item = (usize, usize)>, n_classes: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; n_classes]; n_classes];
    for (t, p) in pairs {
        m[t][p] += 1;
    }
    m
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

impl MetricsReport {
    pub fn n_classes(&self) -> usize {
        self.confusion.len()
    }

    pub fn row_total(&self, class: usize) -> u64 {
        self.confusion[class].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    /// Rows `Type, #PP/Tot, Sensitivity, Precision` plus an overall line.
    pub fn table_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"));
        let mut out = String::from("Type,#PP/Tot,Sensitivity,Precision\n");
        for c in 0..self.n_classes() {
            let name = RhythmClass::from_id(c).map_or_else(|| format!("class{c}"), |r| r.display_name().to_string());
            out.push_str(&format!(
                "{name},{}/{},{},{}\n",
                self.confusion[c][c],
                self.row_total(c),
                fmt(self.sensitivity[c]),
                fmt(self.precision[c])
            ));
        }
        let trace: u64 = (0..self.n_classes()).map(|c| self.confusion[c][c]).sum();
        out.push_str(&format!("Overall,{trace}/{},{:.2},\n", self.total(), self.accuracy));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(counts: &[(u64, u64)]) -> Vec<Vec<u64>> {
        // correct on the diagonal, misses pushed into the next class
        let n = counts.len();
        let mut m = vec![vec![0; n]; n];
        for (c, &(hit, tot)) in counts.iter().enumerate() {
            m[c][c] = hit;
            m[c][(c + 1) % n] += tot - hit;
        }
        m
    }

    #[test]
    fn table_counts() {
        let m = diag(&[(0, 0), (48, 52), (19, 20), (398, 444), (335, 372)]);
        let r = compute_metrics(&m).unwrap();
        let s: Vec<String> = r.sensitivity.iter().map(|v| v.map_or("-".into(), |v| format!("{v:.2}"))).collect();
        assert_eq!(s, ["-", "0.92", "0.95", "0.90", "0.90"]);
        assert_eq!(format!("{:.2}", r.accuracy), "0.90");
        assert!(r.table_csv().contains("Asys,48/52,0.92"));
    }

    #[test]
    fn table_iii_vt() {
        let r = compute_metrics(&diag(&[(10, 10), (345, 372)])).unwrap();
        assert_eq!(format!("{:.2}", r.sensitivity[1].unwrap()), "0.93");
    }

    #[test]
    fn identity_is_perfect() {
        let m: Vec<Vec<u64>> = (0..5).map(|i| (0..5).map(|j| u64::from(i == j) * 3).collect()).collect();
        let r = compute_metrics(&m).unwrap();
        assert!(r.sensitivity.iter().chain(&r.precision).all(|v| *v == Some(1.0)));
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn empty_is_error() {
        assert!(matches!(compute_metrics(&[]), Err(TrainingError::EmptyMatrix)));
        assert!(matches!(compute_metrics(&[vec![0, 0], vec![0, 0]]), Err(TrainingError::EmptyMatrix)));
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.2; 5]), 0);
    }
}
