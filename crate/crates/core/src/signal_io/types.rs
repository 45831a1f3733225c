use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::SignalIoError;

/// The five rhythm categories the class head predicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RhythmClass {
    Sinus,
    Asys,
    Tachy,
    #[serde(rename = "VFVFL")]
    VfVfl,
    #[serde(rename = "VT")]
    Vt,
}

impl RhythmClass {
    pub const ALL: [RhythmClass; 5] = [Self::Sinus, Self::Asys, Self::Tachy, Self::VfVfl, Self::Vt];
    pub const COUNT: usize = 5;

    /// Stable integer id used by the class head.
    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    /// Directory-safe name used by the chunk store.
    pub fn dir_name(self) -> &'static str {
        match self {
            Self::Sinus => "Sinus",
            Self::Asys => "Asys",
            Self::Tachy => "Tachy",
            Self::VfVfl => "VFVFL",
            Self::Vt => "VT",
        }
    }

    /// Name as printed in reports.
    pub fn display_name(self) -> &'static str {
        match self {
            Self::VfVfl => "VF/VFL",
            other => other.dir_name(),
        }
    }

    /// Maps a source rhythm token such as `(VT` onto a class.
    pub fn from_rhythm_token(token: &str) -> Option<Self> {
        let t = token.trim().trim_end_matches('\0');
        match t {
            "(N" | "(NSR" => Some(Self::Sinus),
            "(ASYS" => Some(Self::Asys),
            "(SVTA" => Some(Self::Tachy),
            "(VF" | "(VFL" | "(VFIB" => Some(Self::VfVfl),
            "(VT" => Some(Self::Vt),
            _ => None,
        }
    }
}

impl fmt::Display for RhythmClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for RhythmClass {
    type Err = SignalIoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.dir_name().eq_ignore_ascii_case(s) || c.display_name().eq_ignore_ascii_case(s))
            .ok_or_else(|| SignalIoError::UnknownRhythmToken(s.to_string()))
    }
}

/// One lead of a record, in millivolts.
#[derive(Clone, Debug, PartialEq)]
pub struct Lead {
    pub name: String,
    pub samples: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EcgRecord {
    pub record_id: String,
    pub sample_rate_hz: f64,
    pub gain_adu_per_mv: f64,
    pub leads: Vec<Lead>,
}

impl EcgRecord {
    pub fn new(
        record_id: impl Into<String>,
        sample_rate_hz: f64,
        gain_adu_per_mv: f64,
        leads: Vec<Lead>,
    ) -> Result<Self, SignalIoError> {
        let record = Self {
            record_id: record_id.into(),
            sample_rate_hz,
            gain_adu_per_mv,
            leads,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<(), SignalIoError> {
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(SignalIoError::InvalidRecord(format!(
                "sample rate {} is not positive",
                self.sample_rate_hz
            )));
        }
        if let Some(first) = self.leads.first() {
            if self.leads.iter().any(|l| l.samples.len() != first.samples.len()) {
                return Err(SignalIoError::InvalidRecord("leads differ in length".into()));
            }
        }
        if self.leads.iter().flat_map(|l| &l.samples).any(|v| !v.is_finite()) {
            return Err(SignalIoError::InvalidRecord("non-finite sample".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.leads.first().map_or(0, |l| l.samples.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RhythmAnnotation {
    pub sample_index: usize,
    pub label: RhythmClass,
}

/// A fixed-duration, single-label window cut from one lead.
#[derive(Clone, Debug, PartialEq)]
pub struct Chunk {
    pub record_id: String,
    pub start_index: usize,
    pub samples: Vec<f64>,
    pub sample_rate_hz: f64,
    pub label: RhythmClass,
}

impl Chunk {
    pub fn id(&self) -> String {
        format!("{}-{}", self.record_id, self.start_index)
    }

    pub fn labeled_id(&self) -> LabeledId {
        LabeledId::new(self.id(), self.label)
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub fold_index: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Anything that carries a chunk id and a class label.
pub trait Labeled {
    fn item_id(&self) -> &str;
    fn label(&self) -> RhythmClass;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledId {
    pub id: String,
    pub label: RhythmClass,
}

impl LabeledId {
    pub fn new(id: impl Into<String>, label: RhythmClass) -> Self {
        Self { id: id.into(), label }
    }
}

impl Labeled for LabeledId {
    fn item_id(&self) -> &str {
        &self.id
    }

    fn label(&self) -> RhythmClass {
        self.label
    }
}
