//! Binary time-tag files, one channel per file.
//!
//! Layout (little-endian):
//!
//! | offset | size | field                          |
//! |--------|------|--------------------------------|
//! | 0      | 4    | magic `TTAG`                   |
//! | 4      | 2    | format version, 1              |
//! | 6      | 4    | quantization step, ps          |
//! | 10     | 1    | channel id                     |
//! | 11     | 5    | reserved, zero                 |
//! | 16     | 8·N  | timestamps, ps                 |

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"TTAG";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;
pub const RECORD_LEN: usize = 8;

/// Time-ordered detector clicks of one channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagStream {
    pub channel: u8,
    pub quantization_ps: u32,
    /// Timestamps in ps, nondecreasing, multiples of `quantization_ps`.
    pub tags: Vec<u64>,
}

impl TagStream {
    pub fn new(channel: u8, quantization_ps: u32) -> Self {
        TagStream {
            channel,
            quantization_ps,
            tags: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Time between first and last tag, s.
    pub fn span(&self) -> f64 {
        match (self.tags.first(), self.tags.last()) {
            (Some(a), Some(b)) => (b - a) as f64 * 1e-12,
            _ => 0.0,
        }
    }

    /// Checks ordering and grid alignment.
    pub fn validate(&self) -> Result<(), TagFileError> {
        if self.quantization_ps == 0 {
            return Err(TagFileError::new(6, TagFileErrorKind::ZeroQuantization));
        }
        let q = self.quantization_ps as u64;
        let mut prev = 0u64;
        for (i, &t) in self.tags.iter().enumerate() {
            let offset = (HEADER_LEN + i * RECORD_LEN) as u64;
            if t < prev {
                return Err(TagFileError::new(
                    offset,
                    TagFileErrorKind::NonMonotone {
                        index: i,
                        previous: prev,
                        value: t,
                    },
                ));
            }
            if t % q != 0 {
                return Err(TagFileError::new(
                    offset,
                    TagFileErrorKind::OffGrid {
                        index: i,
                        value: t,
                        quantization_ps: self.quantization_ps,
                    },
                ));
            }
            prev = t;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TagFileErrorKind {
    TooShort {
        len: usize,
    },
    BadMagic([u8; 4]),
    UnsupportedVersion(u16),
    ZeroQuantization,
    ReservedNotZero,
    TruncatedRecord {
        trailing: usize,
    },
    NonMonotone {
        index: usize,
        previous: u64,
        value: u64,
    },
    OffGrid {
        index: usize,
        value: u64,
        quantization_ps: u32,
    },
}

impl std::fmt::Display for TagFileErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TagFileErrorKind::TooShort { len } => {
                write!(f, "file of {len} bytes is shorter than the header")
            }
            TagFileErrorKind::BadMagic(m) => write!(f, "bad magic {m:?}"),
            TagFileErrorKind::UnsupportedVersion(v) => write!(f, "unsupported format version {v}"),
            TagFileErrorKind::ZeroQuantization => f.write_str("quantization step is zero"),
            TagFileErrorKind::ReservedNotZero => f.write_str("reserved header bytes are not zero"),
            TagFileErrorKind::TruncatedRecord { trailing } => {
                write!(f, "truncated record ({trailing} trailing bytes)")
            }
            TagFileErrorKind::NonMonotone {
                index,
                previous,
                value,
            } => {
                write!(
                    f,
                    "record {index} ({value} ps) precedes the previous tag ({previous} ps)"
                )
            }
            TagFileErrorKind::OffGrid {
                index,
                value,
                quantization_ps,
            } => {
                write!(
                    f,
                    "record {index} ({value} ps) is not a multiple of {quantization_ps} ps"
                )
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum TagIoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Format(#[from] TagFileError),
}

/// Structured parse failure with the byte offset it refers to.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("tag file error at byte {offset}: {kind}")]
pub struct TagFileError {
    pub offset: u64,
    pub kind: TagFileErrorKind,
}

impl TagFileError {
    fn new(offset: u64, kind: TagFileErrorKind) -> Self {
        TagFileError { offset, kind }
    }
}

/// Header bytes for a channel.
pub fn encode_header(channel: u8, quantization_ps: u32) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[0..4].copy_from_slice(&MAGIC);
    h[4..6].copy_from_slice(&VERSION.to_le_bytes());
    h[6..10].copy_from_slice(&quantization_ps.to_le_bytes());
    h[10] = channel;
    h
}

pub fn write_to<W: Write>(stream: &TagStream, mut out: W) -> Result<(), TagIoError> {
    stream.validate()?;
    out.write_all(&encode_header(stream.channel, stream.quantization_ps))?;
    let mut buf = Vec::with_capacity(RECORD_LEN * 8192);
    for chunk in stream.tags.chunks(8192) {
        buf.clear();
        for t in chunk {
            buf.extend_from_slice(&t.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_tags(stream: &TagStream, path: &Path) -> Result<(), TagIoError> {
    write_to(stream, BufWriter::new(File::create(path)?))
}

/// Parses a complete file image.
pub fn decode(bytes: &[u8]) -> Result<TagStream, TagFileError> {
    if bytes.len() < HEADER_LEN {
        return Err(TagFileError::new(
            0,
            TagFileErrorKind::TooShort { len: bytes.len() },
        ));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(TagFileError::new(0, TagFileErrorKind::BadMagic(magic)));
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != VERSION {
        return Err(TagFileError::new(
            4,
            TagFileErrorKind::UnsupportedVersion(version),
        ));
    }
    let quantization_ps = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    if quantization_ps == 0 {
        return Err(TagFileError::new(6, TagFileErrorKind::ZeroQuantization));
    }
    let channel = bytes[10];
    if bytes[11..16].iter().any(|&b| b != 0) {
        return Err(TagFileError::new(11, TagFileErrorKind::ReservedNotZero));
    }
    let body = &bytes[HEADER_LEN..];
    let trailing = body.len() % RECORD_LEN;
    if trailing != 0 {
        return Err(TagFileError::new(
            (bytes.len() - trailing) as u64,
            TagFileErrorKind::TruncatedRecord { trailing },
        ));
    }
    let tags: Vec<u64> = body
        .chunks_exact(RECORD_LEN)
        .map(|r| u64::from_le_bytes(r.try_into().unwrap()))
        .collect();
    let stream = TagStream {
        channel,
        quantization_ps,
        tags,
    };
    stream.validate()?;
    Ok(stream)
}

pub fn read_from<R: Read>(mut input: R) -> Result<TagStream, TagIoError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    Ok(decode(&bytes)?)
}

pub fn read_tags(path: &Path) -> Result<TagStream, TagIoError> {
    read_from(File::open(path)?)
}

/// One timestamp per line under a `timestamp_ps` header.
pub fn write_csv<W: Write>(stream: &TagStream, mut out: W) -> io::Result<()> {
    writeln!(out, "timestamp_ps")?;
    for t in &stream.tags {
        writeln!(out, "{t}")?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn encode(stream: &TagStream) -> Vec<u8> {
        let mut buf = Vec::new();
        write_to(stream, &mut buf).unwrap();
        buf
    }

    #[test]
    fn empty_stream_round_trip() {
        let s = TagStream::new(3, 40);
        let bytes = encode(&s);
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(&bytes[0..4], b"TTAG");
        assert_eq!(decode(&bytes).unwrap(), s);
    }

    #[test]
    fn header_layout() {
        let h = encode_header(7, 40);
        assert_eq!(
            h,
            [b'T', b'T', b'A', b'G', 1, 0, 40, 0, 0, 0, 7, 0, 0, 0, 0, 0]
        );
    }

    #[test]
    fn non_monotone_file_reports_first_violation() {
        let s = TagStream {
            channel: 0,
            quantization_ps: 40,
            tags: vec![0, 40, 120, 80, 40],
        };
        let mut bytes = encode_header(0, 40).to_vec();
        for t in &s.tags {
            bytes.extend_from_slice(&t.to_le_bytes());
        }
        let err = decode(&bytes).unwrap_err();
        assert_eq!(err.offset, (HEADER_LEN + 3 * RECORD_LEN) as u64);
        assert!(matches!(
            err.kind,
            TagFileErrorKind::NonMonotone { index: 3, .. }
        ));
        // the writer refuses it as well
        assert!(write_to(&s, Vec::new()).is_err());
    }

    #[test]
    fn corrupt_headers_and_truncation() {
        let good = encode(&TagStream {
            channel: 1,
            quantization_ps: 40,
            tags: vec![40, 80],
        });

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode(&bad).unwrap_err().kind,
            TagFileErrorKind::BadMagic(_)
        ));

        let mut bad = good.clone();
        bad[4] = 2;
        let e = decode(&bad).unwrap_err();
        assert_eq!(e.offset, 4);
        assert_eq!(e.kind, TagFileErrorKind::UnsupportedVersion(2));

        let mut bad = good.clone();
        bad[13] = 1;
        assert_eq!(
            decode(&bad).unwrap_err().kind,
            TagFileErrorKind::ReservedNotZero
        );

        let bad = &good[..good.len() - 3];
        let e = decode(bad).unwrap_err();
        assert_eq!(e.offset, (HEADER_LEN + RECORD_LEN) as u64);
        assert_eq!(e.kind, TagFileErrorKind::TruncatedRecord { trailing: 5 });

        let e = decode(&good[..10]).unwrap_err();
        assert_eq!(e.kind, TagFileErrorKind::TooShort { len: 10 });

        let mut bad = good.clone();
        bad[HEADER_LEN] = 41;
        assert!(matches!(
            decode(&bad).unwrap_err().kind,
            TagFileErrorKind::OffGrid { index: 0, .. }
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plus.ttag");
        let s = TagStream {
            channel: 1,
            quantization_ps: 40,
            tags: (0..1000).map(|i| i * 120).collect(),
        };
        write_tags(&s, &path).unwrap();
        assert_eq!(read_tags(&path).unwrap(), s);
        assert_eq!(
            std::fs::metadata(&path).unwrap().len(),
            (HEADER_LEN + 1000 * RECORD_LEN) as u64
        );
    }

    #[test]
    fn csv_mirrors_records() {
        let s = TagStream {
            channel: 1,
            quantization_ps: 40,
            tags: vec![0, 40, 4000],
        };
        let mut buf = Vec::new();
        write_csv(&s, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "timestamp_ps\n0\n40\n4000\n"
        );
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_identical(
            mut steps in proptest::collection::vec(0u64..1_000_000, 0..2000),
            q in 1u32..100,
            channel in any::<u8>(),
        ) {
            let mut t = 0u64;
            for s in steps.iter_mut() {
                t += *s * q as u64;
                *s = t;
            }
            let stream = TagStream { channel, quantization_ps: q, tags: steps };
            let bytes = encode(&stream);
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(&back, &stream);
            prop_assert_eq!(encode(&back), bytes);
        }
    }
}
