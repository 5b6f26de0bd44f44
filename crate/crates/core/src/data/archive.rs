//! The UAVF feature archive and its CSV manifest.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "UAVF"                 4 bytes magic
//! version                u32 (currently 1)
//! split                  u8  (0 = train, 1 = eval)
//! label kind             u8  (0 = single class, 1 = multi-label bitmask)
//! num_classes            u32
//! record count           u32
//! record*:
//!   id length            u32, followed by that many UTF-8 bytes
//!   modality             u8  (0 = audio, 1 = video)
//!   label                u32 class index, or ceil(C/8) bitmask bytes (LSB first)
//!   T                    u32
//!   D                    u32
//!   payload              T*D f32, row-major
//! ```
//!
//! Every sample id must appear exactly once per modality.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{Dataset, FeatureSequence, Label, Modality, PairedSample, Split};
use crate::binio::{u32_of, Reader};
use crate::error::{Result, UavmError};

pub const MAGIC: &[u8; 4] = b"UAVF";
pub const VERSION: u32 = 1;

/// Expected per-sequence shape, checked while loading.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExpectedShape {
    pub seq_len: Option<usize>,
    pub feature_dim: Option<usize>,
}

pub fn encode(dataset: &Dataset) -> Result<Vec<u8>> {
    let multi = dataset
        .samples
        .iter()
        .any(|s| matches!(s.label(), Label::Multi(_)));
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match dataset.split {
        Split::Train => 0,
        Split::Eval => 1,
    });
    out.push(u8::from(multi));
    out.extend_from_slice(&u32_of(dataset.num_classes, "num_classes")?.to_le_bytes());
    out.extend_from_slice(&u32_of(2 * dataset.len(), "record count")?.to_le_bytes());
    for sample in &dataset.samples {
        for seq in [&sample.audio, &sample.video] {
            let id = seq.sample_id.as_bytes();
            out.extend_from_slice(&u32_of(id.len(), "id length")?.to_le_bytes());
            out.extend_from_slice(id);
            out.push(match seq.modality {
                Modality::Audio => 0,
                Modality::Video => 1,
            });
            match (&seq.label, multi) {
                (Label::Single(c), false) => out.extend_from_slice(&u32_of(*c, "label")?.to_le_bytes()),
                (label, true) => {
                    let bits = label.one_hot(dataset.num_classes)?;
                    let mut mask = vec![0u8; dataset.num_classes.div_ceil(8)];
                    for (i, b) in bits.iter().enumerate() {
                        if *b > 0.0 {
                            mask[i / 8] |= 1 << (i % 8);
                        }
                    }
                    out.extend_from_slice(&mask);
                }
                (Label::Multi(_), false) => unreachable!("multi flag covers every multi label"),
            }
            out.extend_from_slice(&u32_of(seq.seq_len(), "T")?.to_le_bytes());
            out.extend_from_slice(&u32_of(seq.dim(), "D")?.to_le_bytes());
            for &v in seq.features() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], expected: Option<ExpectedShape>) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic")? != MAGIC {
        return r.fail(0, "bad magic, expected \"UAVF\"".into());
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return r.fail(4, format!("unsupported UAVF version {version}"));
    }
    let split = match r.u8("split")? {
        0 => Split::Train,
        1 => Split::Eval,
        other => return r.fail(8, format!("unknown split tag {other}")),
    };
    let multi = match r.u8("label kind")? {
        0 => false,
        1 => true,
        other => return r.fail(9, format!("unknown label kind {other}")),
    };
    let num_classes = r.u32("num_classes")? as usize;
    let count = r.u32("record count")? as usize;

    let mut pairs: BTreeMap<String, (Option<FeatureSequence>, Option<FeatureSequence>)> = BTreeMap::new();
    let mut order = Vec::new();
    for _ in 0..count {
        let start = r.pos;
        let id_len = r.u32("id length")? as usize;
        let id = std::str::from_utf8(r.take(id_len, "sample id")?)
            .map_err(|_| UavmError::Parse {
                offset: start + 4,
                message: "sample id is not UTF-8".into(),
            })?
            .to_string();
        let modality = match r.u8("modality")? {
            0 => Modality::Audio,
            1 => Modality::Video,
            other => return r.fail(r.pos - 1, format!("sample `{id}`: unknown modality byte {other}")),
        };
        let label = if multi {
            let mask = r.take(num_classes.div_ceil(8), "label bitmask")?;
            Label::Multi((0..num_classes).map(|i| mask[i / 8] >> (i % 8) & 1 == 1).collect())
        } else {
            let c = r.u32("label")? as usize;
            if c >= num_classes {
                return r.fail(r.pos - 4, format!("sample `{id}`: class {c} >= num_classes {num_classes}"));
            }
            Label::Single(c)
        };
        let t = r.u32("T")? as usize;
        let d = r.u32("D")? as usize;
        if let Some(exp) = expected {
            if let Some(want) = exp.feature_dim.filter(|&w| w != d) {
                return Err(UavmError::FeatureShape {
                    sample_id: id,
                    what: "feature dim D_f",
                    expected: want,
                    found: d,
                });
            }
            if let Some(want) = exp.seq_len.filter(|&w| w != t) {
                return Err(UavmError::FeatureShape {
                    sample_id: id,
                    what: "sequence length T",
                    expected: want,
                    found: t,
                });
            }
        }
        if t == 0 || d == 0 {
            return r.fail(r.pos - 8, format!("sample `{id}`: empty {t}x{d} payload"));
        }
        let payload = r.take(4 * t * d, "feature payload")?;
        let features: Vec<f64> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        if features.iter().any(|v| !v.is_finite()) {
            return Err(UavmError::NumericInput(format!(
                "non-finite payload in sample `{id}` ({modality})"
            )));
        }
        let seq = FeatureSequence::new(id.clone(), modality, label, t, d, features)?;
        let entry = pairs.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            (None, None)
        });
        let slot = match modality {
            Modality::Audio => &mut entry.0,
            Modality::Video => &mut entry.1,
        };
        if slot.is_some() {
            return r.fail(start, format!("sample `{id}` has two {modality} records"));
        }
        *slot = Some(seq);
    }
    if r.pos != bytes.len() {
        return r.fail(r.pos, format!("{} trailing bytes after last record", bytes.len() - r.pos));
    }
    let mut samples = Vec::with_capacity(order.len());
    for id in order {
        match pairs.remove(&id) {
            Some((Some(a), Some(v))) => samples.push(PairedSample::new(a, v)?),
            Some((a, _)) => {
                let missing = if a.is_none() { "audio" } else { "video" };
                return Err(UavmError::data(format!("sample `{id}` has no {missing} record")));
            }
            None => unreachable!("every id in order has an entry"),
        }
    }
    Dataset::new(split, num_classes, samples)
}

pub fn save_features(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode(dataset)?;
    fs::write(path.as_ref(), bytes).map_err(|e| UavmError::io(path, e))
}

pub fn load_features(path: impl AsRef<Path>, expected: Option<ExpectedShape>) -> Result<Dataset> {
    let bytes = fs::read(path.as_ref()).map_err(|e| UavmError::io(&path, e))?;
    decode(&bytes, expected)
}

/// Writes `sample_id,label,split` rows for every dataset given.
pub fn write_manifest(datasets: &[&Dataset], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(|e| csv_err(&path, e))?;
    w.write_record(["sample_id", "label", "split"])
        .map_err(|e| csv_err(&path, e))?;
    for ds in datasets {
        for s in &ds.samples {
            w.write_record([s.sample_id(), &s.label().to_string(), ds.split.as_str()])
                .map_err(|e| csv_err(&path, e))?;
        }
    }
    w.flush().map_err(|e| UavmError::io(&path, e))
}

pub(crate) fn csv_err(path: impl AsRef<Path>, e: csv::Error) -> UavmError {
    UavmError::io(path, std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(multi: bool) -> Dataset {
        let label = if multi {
            Label::Multi(vec![true, false, false, false, false, false, false, false, true])
        } else {
            Label::Single(2)
        };
        let classes = if multi { 9 } else { 3 };
        let mk = |m| FeatureSequence::new("clip,1", m, label.clone(), 2, 3, vec![0.5, -1.0, 2.0, 0.0, 1.5, 3.25]).unwrap();
        let pair = PairedSample::new(mk(Modality::Audio), mk(Modality::Video)).unwrap();
        Dataset::new(Split::Eval, classes, vec![pair]).unwrap()
    }

    #[test]
    fn round_trip_single_and_multi() {
        for multi in [false, true] {
            let ds = tiny(multi);
            let bytes = encode(&ds).unwrap();
            assert_eq!(decode(&bytes, None).unwrap(), ds);
        }
    }

    #[test]
    fn truncation_names_offset() {
        let bytes = encode(&tiny(false)).unwrap();
        let cut = bytes.len() - 3;
        match decode(&bytes[..cut], None) {
            Err(UavmError::Parse { offset, .. }) => assert!(offset <= cut && offset > 16),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_modality_is_reported() {
        let ds = tiny(false);
        let mut bytes = encode(&ds).unwrap();
        // Drop the video record and patch the count.
        let record = (bytes.len() - 18) / 2;
        bytes.truncate(18 + record);
        bytes[14..18].copy_from_slice(&1u32.to_le_bytes());
        let err = decode(&bytes, None).unwrap_err().to_string();
        assert!(err.contains("no video record"), "{err}");
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode(&tiny(false)).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes, None), Err(UavmError::Parse { offset: 0, .. })));
    }
}
