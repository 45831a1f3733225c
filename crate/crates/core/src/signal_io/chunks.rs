use std::str::FromStr;

use super::types::{Chunk, EcgRecord, RhythmAnnotation, RhythmClass};
use super::SignalIoError;

const LIMB_LEADS: [&str; 6] = ["I", "II", "III", "MLI", "MLII", "MLIII"];

/// Which lead a chunk is cut from.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum LeadPolicy {
    /// First lead named I, II, III, MLI, MLII or MLIII; lead 0 otherwise.
    #[default]
    FirstLimb,
    Index(usize),
    Name(String),
}

impl LeadPolicy {
    pub fn select(&self, record: &EcgRecord) -> Option<usize> {
        match self {
            Self::FirstLimb => {
                if record.leads.is_empty() {
                    return None;
                }
                Some(
                    record
                        .leads
                        .iter()
                        .position(|l| LIMB_LEADS.iter().any(|n| l.name.trim().eq_ignore_ascii_case(n)))
                        .unwrap_or(0),
                )
            }
            Self::Index(i) => (*i < record.leads.len()).then_some(*i),
            Self::Name(name) => record.leads.iter().position(|l| l.name.trim() == name),
        }
    }
}

impl FromStr for LeadPolicy {
    type Err = SignalIoError;

    /// `limb`, `index:N`, or a lead name.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("limb") {
            Ok(Self::FirstLimb)
        } else if let Some(rest) = s.strip_prefix("index:") {
            rest.parse()
                .map(Self::Index)
                .map_err(|_| SignalIoError::InvalidRecord(format!("bad lead index `{rest}`")))
        } else {
            Ok(Self::Name(s.to_string()))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChunkPolicy {
    pub span_s: f64,
    pub lead: LeadPolicy,
}

impl Default for ChunkPolicy {
    fn default() -> Self {
        Self {
            span_s: 13.0,
            lead: LeadPolicy::FirstLimb,
        }
    }
}

impl ChunkPolicy {
    pub fn span_samples(&self, fs: f64) -> usize {
        (self.span_s * fs).round() as usize
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChunkExtraction {
    pub chunks: Vec<Chunk>,
    /// Annotations that yielded no chunk (rhythm too short or record end).
    pub discarded: usize,
}

/// One chunk per annotation whose rhythm persists for the whole span,
/// starting at the annotation. Windows that would reach the next change
/// point or run past the record end are discarded.
pub fn extract_chunks(
    record: &EcgRecord,
    annotations: &[RhythmAnnotation],
    policy: &ChunkPolicy,
) -> Result<ChunkExtraction, SignalIoError> {
    extract_chunks_with_boundaries(record, annotations, &[], policy)
}

/// As [`extract_chunks`], with extra change points (e.g. rhythms outside
/// the class table) that also terminate a window.
pub fn extract_chunks_with_boundaries(
    record: &EcgRecord,
    annotations: &[RhythmAnnotation],
    extra_boundaries: &[usize],
    policy: &ChunkPolicy,
) -> Result<ChunkExtraction, SignalIoError> {
    let span = policy.span_samples(record.sample_rate_hz);
    if span < 2 {
        return Err(SignalIoError::InvalidRecord(format!(
            "span of {} s at {} Hz is shorter than two samples",
            policy.span_s, record.sample_rate_hz
        )));
    }
    let lead = policy
        .lead
        .select(record)
        .ok_or_else(|| SignalIoError::InvalidRecord(format!("no lead matches {:?}", policy.lead)))?;
    let samples = &record.leads[lead].samples;
    let mut boundaries: Vec<usize> = annotations
        .iter()
        .map(|a| a.sample_index)
        .chain(extra_boundaries.iter().copied())
        .collect();
    boundaries.sort_unstable();

    let mut out = ChunkExtraction::default();
    for ann in annotations {
        let start = ann.sample_index;
        let end = start + span;
        let next_change = boundaries
            .iter()
            .copied()
            .find(|&b| b > start)
            .unwrap_or(usize::MAX);
        if end > samples.len() || end > next_change {
            out.discarded += 1;
            continue;
        }
        out.chunks.push(Chunk {
            record_id: record.record_id.clone(),
            start_index: start,
            samples: samples[start..end].to_vec(),
            sample_rate_hz: record.sample_rate_hz,
            label: ann.label,
        });
    }
    Ok(out)
}

/// Non-overlapping windows over a whole record, all with `label`; used for
/// records that carry a single rhythm and no change annotations.
pub fn tile_chunks(
    record: &EcgRecord,
    label: RhythmClass,
    policy: &ChunkPolicy,
) -> Result<Vec<Chunk>, SignalIoError> {
    let span = policy.span_samples(record.sample_rate_hz);
    if span < 2 {
        return Err(SignalIoError::InvalidRecord("span shorter than two samples".into()));
    }
    let lead = policy
        .lead
        .select(record)
        .ok_or_else(|| SignalIoError::InvalidRecord(format!("no lead matches {:?}", policy.lead)))?;
    let samples = &record.leads[lead].samples;
    Ok((0..samples.len() / span)
        .map(|i| Chunk {
            record_id: record.record_id.clone(),
            start_index: i * span,
            samples: samples[i * span..(i + 1) * span].to_vec(),
            sample_rate_hz: record.sample_rate_hz,
            label,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::super::types::Lead;
    use super::*;

    fn record(seconds: f64, fs: f64, names: &[&str]) -> EcgRecord {
        let n = (seconds * fs) as usize;
        let leads = names
            .iter()
            .enumerate()
            .map(|(k, name)| Lead {
                name: name.to_string(),
                samples: (0..n).map(|i| (i + k) as f64).collect(),
            })
            .collect();
        EcgRecord::new("r", fs, 200.0, leads).unwrap()
    }

    fn ann(sample_index: usize, label: RhythmClass) -> RhythmAnnotation {
        RhythmAnnotation { sample_index, label }
    }

    #[test]
    fn sixty_seconds_two_rhythms() {
        let rec = record(60.0, 250.0, &["ECG"]);
        let anns = [ann(0, RhythmClass::Sinus), ann(7500, RhythmClass::Vt)];
        let ex = extract_chunks(&rec, &anns, &ChunkPolicy::default()).unwrap();
        assert_eq!(ex.chunks.len(), 2);
        assert_eq!(ex.discarded, 0);
        assert_eq!(ex.chunks[1].label, RhythmClass::Vt);
        assert_eq!(ex.chunks[1].start_index, 7500);
        assert!(ex.chunks.iter().all(|c| c.samples.len() == 3250));
    }

    #[test]
    fn short_tail_yields_nothing() {
        let rec = record(60.0, 250.0, &["ECG"]);
        let ex = extract_chunks(&rec, &[ann(15000 - 500, RhythmClass::Vt)], &ChunkPolicy::default()).unwrap();
        assert!(ex.chunks.is_empty());
        assert_eq!(ex.discarded, 1);
    }

    #[test]
    fn crossing_next_change_discarded() {
        let rec = record(60.0, 250.0, &["ECG"]);
        let anns = [ann(0, RhythmClass::Sinus), ann(2000, RhythmClass::Vt)];
        let ex = extract_chunks(&rec, &anns, &ChunkPolicy::default()).unwrap();
        assert_eq!(ex.chunks.len(), 1);
        assert_eq!(ex.chunks[0].label, RhythmClass::Vt);
        let ex = extract_chunks_with_boundaries(&rec, &anns[1..], &[4000], &ChunkPolicy::default()).unwrap();
        assert!(ex.chunks.is_empty());
    }

    #[test]
    fn limb_lead_selection() {
        let rec = record(20.0, 250.0, &["V1", "MLII", "II"]);
        assert_eq!(LeadPolicy::FirstLimb.select(&rec), Some(1));
        let rec = record(20.0, 250.0, &["ECG1", "ECG2"]);
        assert_eq!(LeadPolicy::FirstLimb.select(&rec), Some(0));
        assert_eq!("index:1".parse::<LeadPolicy>().unwrap().select(&rec), Some(1));
        assert_eq!("ECG2".parse::<LeadPolicy>().unwrap().select(&rec), Some(1));
        let ex = extract_chunks(
            &record(20.0, 250.0, &["V1", "MLII"]),
            &[ann(0, RhythmClass::Asys)],
            &ChunkPolicy::default(),
        )
        .unwrap();
        assert_eq!(ex.chunks[0].samples[0], 1.0);
    }

    #[test]
    fn tiling() {
        let rec = record(40.0, 200.0, &["ECG"]);
        let tiles = tile_chunks(&rec, RhythmClass::Sinus, &ChunkPolicy::default()).unwrap();
        assert_eq!(tiles.len(), 3);
        assert_eq!(tiles[2].start_index, 5200);
    }
}
