use super::header::{RecordMeta, StorageFormat};
use super::types::{EcgRecord, Lead};
use super::SignalIoError;

fn sign_extend_12(v: u16) -> i16 {
    ((v << 4) as i16) >> 4
}

/// Decodes interleaved packed-12-bit samples (two samples per three bytes).
pub fn unpack_212(bytes: &[u8], n_values: usize) -> Result<Vec<i16>, SignalIoError> {
    let needed = (n_values * 3).div_ceil(2);
    if bytes.len() < needed {
        return Err(SignalIoError::TruncatedData {
            expected: needed,
            found: bytes.len(),
        });
    }
    let mut out = Vec::with_capacity(n_values);
    for frame in bytes.chunks(3) {
        if out.len() >= n_values {
            break;
        }
        let b0 = u16::from(frame[0]);
        let b1 = u16::from(*frame.get(1).unwrap_or(&0));
        out.push(sign_extend_12(b0 | ((b1 & 0x0F) << 8)));
        if out.len() < n_values {
            let b2 = u16::from(frame[2]);
            out.push(sign_extend_12(b2 | ((b1 & 0xF0) << 4)));
        }
    }
    Ok(out)
}

pub fn unpack_16(bytes: &[u8], n_values: usize) -> Result<Vec<i16>, SignalIoError> {
    let needed = n_values * 2;
    if bytes.len() < needed {
        return Err(SignalIoError::TruncatedData {
            expected: needed,
            found: bytes.len(),
        });
    }
    Ok(bytes[..needed]
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]))
        .collect())
}

fn single_file_format(meta: &RecordMeta) -> Result<StorageFormat, SignalIoError> {
    let first = &meta.leads[0];
    for lead in &meta.leads {
        if !lead.format.is_supported() {
            return Err(SignalIoError::UnsupportedFormat(lead.format.code()));
        }
        if lead.file_name != first.file_name || lead.format != first.format {
            return Err(SignalIoError::MultipleSignalFiles);
        }
    }
    Ok(first.format)
}

/// Reads a record whose leads share one format-212 file.
pub fn read_signal_212(bytes: &[u8], meta: &RecordMeta) -> Result<EcgRecord, SignalIoError> {
    match single_file_format(meta)? {
        StorageFormat::Packed212 => {}
        other => return Err(SignalIoError::UnsupportedFormat(other.code())),
    }
    let raw = unpack_212(bytes, meta.n_samples * meta.n_leads)?;
    to_record(&raw, meta)
}

/// Reads a record stored in format 212 or 16.
pub fn read_signal(bytes: &[u8], meta: &RecordMeta) -> Result<EcgRecord, SignalIoError> {
    let raw = match single_file_format(meta)? {
        StorageFormat::Packed212 => unpack_212(bytes, meta.n_samples * meta.n_leads)?,
        StorageFormat::Le16 => unpack_16(bytes, meta.n_samples * meta.n_leads)?,
        StorageFormat::Unsupported(c) => return Err(SignalIoError::UnsupportedFormat(c)),
    };
    to_record(&raw, meta)
}

fn to_record(raw: &[i16], meta: &RecordMeta) -> Result<EcgRecord, SignalIoError> {
    let n_leads = meta.n_leads;
    let mut leads = Vec::with_capacity(n_leads);
    for (li, lm) in meta.leads.iter().enumerate() {
        let adu: Vec<i16> = raw.iter().skip(li).step_by(n_leads).copied().collect();
        if let Some(expected) = lm.checksum {
            let found = adu.iter().fold(0i16, |acc, &v| acc.wrapping_add(v));
            if found != expected {
                return Err(SignalIoError::ChecksumMismatch {
                    lead: li,
                    expected,
                    found,
                });
            }
        }
        let samples = adu
            .iter()
            .map(|&v| (f64::from(v) - f64::from(lm.baseline)) / lm.gain)
            .collect();
        leads.push(Lead {
            name: lm.name.clone(),
            samples,
        });
    }
    EcgRecord::new(meta.record_id.clone(), meta.sample_rate_hz, meta.leads[0].gain, leads)
}

#[cfg(test)]
mod tests {
    use super::super::header::parse_header;
    use super::*;

    fn meta(n: usize) -> RecordMeta {
        parse_header(&format!("t 2 250 {n}\nt.dat 212 200 12 0 0\nt.dat 212 200 12 0 0\n")).unwrap()
    }

    #[test]
    fn first_pair_from_three_bytes() {
        let rec = read_signal_212(&[0x01, 0x00, 0x02], &meta(1)).unwrap();
        assert_eq!(rec.leads[0].samples, vec![1.0 / 200.0]);
        assert_eq!(rec.leads[1].samples, vec![2.0 / 200.0]);
    }

    #[test]
    fn most_negative_value() {
        // 0x800 in lead 0, 0x800 in lead 1
        let rec = read_signal_212(&[0x00, 0x88, 0x00], &meta(1)).unwrap();
        assert_eq!(rec.leads[0].samples, vec![-2048.0 / 200.0]);
        assert_eq!(rec.leads[1].samples, vec![-2048.0 / 200.0]);
    }

    #[test]
    fn empty_record() {
        let rec = read_signal_212(&[], &meta(0)).unwrap();
        assert_eq!(rec.leads.len(), 2);
        assert!(rec.leads.iter().all(|l| l.samples.is_empty()));
    }

    #[test]
    fn truncated() {
        assert!(matches!(
            read_signal_212(&[0x01, 0x00], &meta(1)),
            Err(SignalIoError::TruncatedData { .. })
        ));
    }

    #[test]
    fn checksum_checked_when_present() {
        let good = parse_header("c 2 250 1\nc.dat 212 200 12 0 0 1 0 I\nc.dat 212 200 12 0 0 2 0 II\n").unwrap();
        assert!(read_signal_212(&[0x01, 0x00, 0x02], &good).is_ok());
        let bad = parse_header("c 2 250 1\nc.dat 212 200 12 0 0 5 0 I\nc.dat 212 200 12 0 0 2 0 II\n").unwrap();
        assert!(matches!(
            read_signal_212(&[0x01, 0x00, 0x02], &bad),
            Err(SignalIoError::ChecksumMismatch { lead: 0, .. })
        ));
    }

    #[test]
    fn format_16_little_endian() {
        let m = parse_header("s 1 500 2\ns.dat 16 100 16 0 0\n").unwrap();
        let rec = read_signal(&[0xFF, 0xFF, 0x64, 0x00], &m).unwrap();
        assert_eq!(rec.leads[0].samples, vec![-0.01, 1.0]);
    }

    #[test]
    fn unsupported_rejected_on_read() {
        let m = parse_header("u 1 500 2\nu.dat 80 100\n").unwrap();
        assert!(matches!(read_signal(&[0; 4], &m), Err(SignalIoError::UnsupportedFormat(80))));
    }
}
