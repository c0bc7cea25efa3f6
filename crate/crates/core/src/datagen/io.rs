//! Dataset files.
//!
//! Binary layout (all integers little endian):
//!
//! ```text
//! magic        8 bytes  "MNIST1D\0"
//! version      u32
//! header_len   u32
//! header       header_len bytes of UTF-8 JSON (format version, config, permutation)
//! x_train      train_count * seq_len f64
//! y_train      train_count u32
//! x_test       test_count * seq_len f64
//! y_test       test_count u32
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, GeneratorConfig, NUM_CLASSES};
use crate::array::Array;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MNIST1D\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    train_count: usize,
    test_count: usize,
    seq_len: usize,
    config: GeneratorConfig,
    permutation: Option<Vec<usize>>,
}

pub fn encode(d: &Dataset) -> Result<Vec<u8>> {
    let header = Header {
        format_version: FORMAT_VERSION,
        train_count: d.train_len(),
        test_count: d.test_len(),
        seq_len: d.seq_len(),
        config: d.config.clone(),
        permutation: d.permutation.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let values = (d.x_train.len() + d.x_test.len()) * 8 + (d.train_len() + d.test_len()) * 4;
    let mut out = Vec::with_capacity(16 + json.len() + values);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (x, y) in [(&d.x_train, &d.y_train), (&d.x_test, &d.y_test)] {
        for v in x.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &label in y.iter() {
            out.extend_from_slice(&(label as u32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos as u64,
                message: format!(
                    "truncated {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n * 8, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn labels(&mut self, n: usize, what: &str) -> Result<Vec<usize>> {
        let start = self.pos;
        let raw = self.take(n * 4, what)?;
        raw.chunks_exact(4)
            .enumerate()
            .map(|(i, c)| {
                let v = u32::from_le_bytes(c.try_into().unwrap()) as usize;
                if v >= NUM_CLASSES {
                    Err(Error::Parse {
                        offset: (start + 4 * i) as u64,
                        message: format!("label {v} out of range"),
                    })
                } else {
                    Ok(v)
                }
            })
            .collect()
    }
}

pub fn decode(bytes: &[u8]) -> Result<Dataset> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(8, "magic")?;
    if magic != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "bad magic".into(),
        });
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Parse {
            offset: 8,
            message: format!("unsupported format version {version}"),
        });
    }
    let header_len = cur.u32("header length")? as usize;
    let header_at = cur.pos as u64;
    let header: Header = serde_json::from_slice(cur.take(header_len, "header")?).map_err(|e| {
        Error::Parse {
            offset: header_at,
            message: format!("header: {e}"),
        }
    })?;
    header.config.validate().map_err(|e| Error::Parse {
        offset: header_at,
        message: e.to_string(),
    })?;
    if header.seq_len != header.config.final_seq_len {
        return Err(Error::Parse {
            offset: header_at,
            message: "seq_len disagrees with config".into(),
        });
    }
    if let Some(p) = &header.permutation {
        let mut seen = vec![false; header.seq_len];
        let ok = p.len() == header.seq_len
            && p.iter().all(|&i| i < seen.len() && !std::mem::replace(&mut seen[i], true));
        if !ok {
            return Err(Error::Parse {
                offset: header_at,
                message: "permutation is not a bijection".into(),
            });
        }
    }
    let w = header.seq_len;
    let x_train = cur.f64s(header.train_count * w, "x_train")?;
    let y_train = cur.labels(header.train_count, "y_train")?;
    let x_test = cur.f64s(header.test_count * w, "x_test")?;
    let y_test = cur.labels(header.test_count, "y_test")?;
    if cur.pos != bytes.len() {
        return Err(Error::Parse {
            offset: cur.pos as u64,
            message: format!("{} trailing bytes", bytes.len() - cur.pos),
        });
    }
    Ok(Dataset {
        x_train: Array::new(vec![header.train_count, w], x_train)?,
        y_train,
        x_test: Array::new(vec![header.test_count, w], x_test)?,
        y_test,
        config: header.config,
        permutation: header.permutation,
    })
}

pub fn save_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(d)?).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// One split as CSV: `x0..x{n-1},label`. Values use the shortest
/// representation that parses back to the identical f64.
pub fn write_csv(x: &Array, y: &[usize]) -> String {
    let w = x.row_len();
    let mut s = String::new();
    for i in 0..w {
        let _ = write!(s, "x{i},");
    }
    s.push_str("label\n");
    for (r, label) in y.iter().enumerate() {
        for v in x.row(r) {
            let _ = write!(s, "{v},");
        }
        let _ = writeln!(s, "{label}");
    }
    s
}

pub fn read_csv(text: &str) -> Result<(Array, Vec<usize>)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Data("empty csv".into()))?;
    let w = header.split(',').count() - 1;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != w + 1 {
            return Err(Error::Data(format!("csv row {n}: {} fields", fields.len())));
        }
        for f in &fields[..w] {
            data.push(
                f.parse::<f64>()
                    .map_err(|e| Error::Data(format!("csv row {n}: {e}")))?,
            );
        }
        labels.push(
            fields[w]
                .parse::<usize>()
                .map_err(|e| Error::Data(format!("csv row {n}: {e}")))?,
        );
    }
    Ok((Array::new(vec![labels.len(), w], data)?, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::generate_dataset;

    fn small() -> Dataset {
        generate_dataset(&GeneratorConfig {
            train_count: 30,
            test_count: 10,
            shuffle_seq: true,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let d = small();
        let back = decode(&encode(&d).unwrap()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = encode(&small()).unwrap();
        for cut in [0, 5, 12, 20, bytes.len() / 2, bytes.len() - 1] {
            match decode(&bytes[..cut]) {
                Err(Error::Parse { offset, .. }) => assert!(offset as usize <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn bad_label_reports_offset() {
        let d = small();
        let mut bytes = encode(&d).unwrap();
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let label_at = 16 + header_len + d.x_train.len() * 8;
        bytes[label_at] = 11;
        match decode(&bytes) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset as usize, label_at),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_is_lossless() {
        let d = small();
        let text = write_csv(&d.x_train, &d.y_train);
        assert!(text.lines().skip(1).all(|l| !l.contains('e')), "exponent in csv");
        let (x, y) = read_csv(&text).unwrap();
        assert_eq!(x, d.x_train);
        assert_eq!(y, d.y_train);
    }
}
