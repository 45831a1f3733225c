use super::SignalIoError;

/// Sample storage of one lead.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StorageFormat {
    /// Packed 12-bit two's complement, two samples per three bytes.
    Packed212,
    /// 16-bit little-endian two's complement.
    Le16,
    /// Anything else; flagged, not readable.
    Unsupported(u16),
}

impl StorageFormat {
    pub fn from_code(code: u16) -> Self {
        match code {
            212 => Self::Packed212,
            16 => Self::Le16,
            other => Self::Unsupported(other),
        }
    }

    pub fn code(self) -> u16 {
        match self {
            Self::Packed212 => 212,
            Self::Le16 => 16,
            Self::Unsupported(c) => c,
        }
    }

    pub fn is_supported(self) -> bool {
        !matches!(self, Self::Unsupported(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeadMeta {
    pub file_name: String,
    pub format: StorageFormat,
    /// ADC units per millivolt.
    pub gain: f64,
    pub baseline: i32,
    pub checksum: Option<i16>,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecordMeta {
    pub record_id: String,
    pub n_leads: usize,
    pub sample_rate_hz: f64,
    pub n_samples: usize,
    pub leads: Vec<LeadMeta>,
}

impl RecordMeta {
    /// Indices of leads whose storage format cannot be read.
    pub fn unsupported_leads(&self) -> Vec<usize> {
        self.leads
            .iter()
            .enumerate()
            .filter(|(_, l)| !l.format.is_supported())
            .map(|(i, _)| i)
            .collect()
    }
}

const DEFAULT_GAIN: f64 = 200.0;

fn malformed(line: usize, msg: impl Into<String>) -> SignalIoError {
    SignalIoError::MalformedHeader {
        line,
        message: msg.into(),
    }
}

/// Leading numeric part of tokens like `360/1` or `200(0)/mV`.
fn leading_number(token: &str) -> &str {
    let end = token
        .char_indices()
        .find(|&(i, c)| !(c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || ((c == '-' || c == '+') && i == 0)))
        .map_or(token.len(), |(i, _)| i);
    &token[..end]
}

/// Parses a record header: `record n_leads fs n_samples` followed by one
/// `file format gain [adc_res adc_zero init checksum block] [name]` line per lead.
pub fn parse_header(text: &str) -> Result<RecordMeta, SignalIoError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (lno, record_line) = lines.next().ok_or_else(|| malformed(1, "empty header"))?;
    let fields: Vec<&str> = record_line.split_whitespace().collect();
    if fields.len() < 4 {
        return Err(malformed(lno, "record line needs `record n_leads fs n_samples`"));
    }
    let record_id = fields[0].split('/').next().unwrap_or(fields[0]).to_string();
    let n_leads: usize = fields[1]
        .parse()
        .map_err(|_| malformed(lno, format!("lead count `{}` is not an integer", fields[1])))?;
    if n_leads == 0 {
        return Err(malformed(lno, "header declares zero leads"));
    }
    let sample_rate_hz: f64 = leading_number(fields[2])
        .parse()
        .map_err(|_| malformed(lno, format!("sampling frequency `{}` is not numeric", fields[2])))?;
    if !(sample_rate_hz > 0.0) {
        return Err(malformed(lno, "sampling frequency must be positive"));
    }
    let n_samples: usize = fields[3]
        .parse()
        .map_err(|_| malformed(lno, format!("sample count `{}` is not an integer", fields[3])))?;

    let mut leads = Vec::with_capacity(n_leads);
    for (lno, line) in lines.by_ref().take(n_leads) {
        leads.push(parse_lead_line(lno, line, leads.len())?);
    }
    if leads.len() != n_leads {
        return Err(malformed(
            lno,
            format!("expected {n_leads} lead lines, found {}", leads.len()),
        ));
    }
    Ok(RecordMeta {
        record_id,
        n_leads,
        sample_rate_hz,
        n_samples,
        leads,
    })
}

fn parse_lead_line(lno: usize, line: &str, index: usize) -> Result<LeadMeta, SignalIoError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() < 3 {
        return Err(malformed(lno, "lead line needs `file format gain`"));
    }
    let code: u16 = leading_number(fields[1])
        .parse()
        .map_err(|_| malformed(lno, format!("format `{}` is not an integer", fields[1])))?;
    let gain_token = fields[2];
    let mut gain: f64 = leading_number(gain_token)
        .parse()
        .map_err(|_| malformed(lno, format!("gain `{gain_token}` is not numeric")))?;
    if gain == 0.0 {
        gain = DEFAULT_GAIN;
    }
    if !(gain > 0.0) {
        return Err(malformed(lno, "gain must be positive"));
    }
    let int_field = |i: usize, what: &str| -> Result<Option<i64>, SignalIoError> {
        fields
            .get(i)
            .map(|t| {
                t.parse::<i64>()
                    .map_err(|_| malformed(lno, format!("{what} `{t}` is not an integer")))
            })
            .transpose()
    };
    let adc_zero = if fields.len() > 4 { int_field(4, "adc zero")? } else { None };
    let baseline = match (gain_token.find('('), gain_token.find(')')) {
        (Some(a), Some(b)) if b > a => gain_token[a + 1..b]
            .parse::<i32>()
            .map_err(|_| malformed(lno, format!("baseline in `{gain_token}` is not an integer")))?,
        _ => adc_zero.unwrap_or(0) as i32,
    };
    let checksum = if fields.len() > 6 {
        int_field(6, "checksum")?.map(|c| c as i16)
    } else {
        None
    };
    let name = if fields.len() > 8 {
        fields[8..].join(" ")
    } else if fields.len() == 4 && fields[3].parse::<i64>().is_err() {
        // short form: `file format gain name`
        fields[3].to_string()
    } else {
        format!("lead{index}")
    };
    Ok(LeadMeta {
        file_name: fields[0].to_string(),
        format: StorageFormat::from_code(code),
        gain,
        baseline,
        checksum,
        name,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_LEAD: &str = "x 2 250 525000\n\
        x.dat 212 200 12 0 -41 1234 0 ECG1\n\
        x.dat 212 200 12 0 27 -2 0 ECG2\n";

    #[test]
    fn well_formed_header() {
        let meta = parse_header(TWO_LEAD).unwrap();
        assert_eq!(meta.record_id, "x");
        assert_eq!(meta.n_leads, 2);
        assert_eq!(meta.sample_rate_hz, 250.0);
        assert_eq!(meta.n_samples, 525000);
        assert_eq!(meta.leads[0].name, "ECG1");
        assert_eq!(meta.leads[1].checksum, Some(-2));
        assert_eq!(meta.leads[0].format, StorageFormat::Packed212);
    }

    #[test]
    fn header_at_360_hz() {
        let text = "100 2 360 650000\n100.dat 212 200 11 1024 995 -22131 0 MLII\n100.dat 212 200 11 1024 1011 20052 0 V5\n";
        let meta = parse_header(text).unwrap();
        assert_eq!(meta.sample_rate_hz, 360.0);
        assert_eq!(meta.n_samples, 650000);
        assert_eq!(meta.leads[0].name, "MLII");
        assert_eq!(meta.leads[1].name, "V5");
        assert_eq!(meta.leads[0].baseline, 1024);
    }

    #[test]
    fn zero_leads_is_malformed() {
        assert!(matches!(
            parse_header("x 0 250 100\n"),
            Err(SignalIoError::MalformedHeader { .. })
        ));
    }

    #[test]
    fn non_numeric_and_missing_fields() {
        assert!(parse_header("x two 250 100\n").is_err());
        assert!(parse_header("x 1 250\n").is_err());
        assert!(parse_header("x 2 250 100\nx.dat 212 200 12 0 0 0 0 I\n").is_err());
    }

    #[test]
    fn unsupported_format_flagged() {
        let meta = parse_header("y 1 250 10\ny.dat 310 200 12 0 0 0 0 I\n").unwrap();
        assert_eq!(meta.unsupported_leads(), vec![0]);
        assert_eq!(meta.leads[0].format, StorageFormat::Unsupported(310));
    }

    #[test]
    fn gain_with_baseline_and_units() {
        let meta = parse_header("z 1 128/1 10\nz.dat 16 400(12)/mV 16 0 0 0 0 II\n").unwrap();
        assert_eq!(meta.sample_rate_hz, 128.0);
        assert_eq!(meta.leads[0].gain, 400.0);
        assert_eq!(meta.leads[0].baseline, 12);
    }
}
