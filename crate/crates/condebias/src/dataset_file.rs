//! `CDDS1` dataset files and their CSV export.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "CDDS1"  setup:u8  seed:u64  n_train:u64  n_val:u64  n_test:u64
//! n_train + n_val + n_test records of
//!     192 x f64 (row-major 8x8 RGB)  label:u8  tags:u8  bias:f64
//! ```
//!
//! `tags` holds the shape (bit 0, set for square) and hue (bit 1, set for
//! violet) so the splits' contingency tables survive a round trip.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use condebias_core::nn::IMAGE_SIZE;
use condebias_core::synth::{HueTag, LabeledExample, Setup, ShapeTag, Split, SplitDataset, SynthImage, IMAGE_VALUES};

use crate::error::{Error, Result};
use crate::results::fmt_f64;

pub const MAGIC: &[u8; 5] = b"CDDS1";
const HEADER_LEN: usize = 5 + 1 + 8 * 4;
const RECORD_LEN: usize = IMAGE_VALUES * 8 + 1 + 1 + 8;

fn encode_record(e: &LabeledExample, out: &mut Vec<u8>) {
    for v in &e.image.pixels {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(e.label as u8);
    let tags = u8::from(e.image.shape_tag == ShapeTag::Square) | (u8::from(e.image.hue_tag == HueTag::Violet) << 1);
    out.push(tags);
    out.extend_from_slice(&e.bias_value.to_le_bytes());
}

/// Serialises a dataset to the in-memory `CDDS1` representation.
pub fn encode(data: &SplitDataset) -> Vec<u8> {
    let splits = [&data.train, &data.val, &data.test];
    let total: usize = splits.iter().map(|s| s.len()).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + total * RECORD_LEN);
    out.extend_from_slice(MAGIC);
    out.push(data.setup.tag());
    out.extend_from_slice(&data.seed.to_le_bytes());
    for s in splits {
        out.extend_from_slice(&(s.len() as u64).to_le_bytes());
    }
    for s in splits {
        for e in s.examples() {
            encode_record(e, &mut out);
        }
    }
    out
}

fn u64_at(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8-byte slice"))
}

fn f64_at(bytes: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8-byte slice"))
}

/// Parses a `CDDS1` buffer; `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<SplitDataset> {
    let bad = |m: String| Error::format(path, m);
    if bytes.len() < HEADER_LEN || &bytes[..5] != MAGIC {
        return Err(bad("not a CDDS1 dataset".into()));
    }
    let setup = Setup::from_tag(bytes[5]).ok_or_else(|| bad(format!("unknown setup tag {}", bytes[5])))?;
    let seed = u64_at(bytes, 6);
    let counts: Vec<usize> = (0..3).map(|i| u64_at(bytes, 14 + 8 * i) as usize).collect();
    let total = counts.iter().try_fold(0usize, |acc, &c| acc.checked_add(c));
    let expected = total
        .and_then(|t| t.checked_mul(RECORD_LEN))
        .and_then(|t| t.checked_add(HEADER_LEN));
    if expected != Some(bytes.len()) {
        return Err(bad(format!(
            "length {} does not match header counts {:?}",
            bytes.len(),
            counts
        )));
    }
    let mut at = HEADER_LEN;
    let mut splits = Vec::with_capacity(3);
    for &n in &counts {
        let mut examples = Vec::with_capacity(n);
        for _ in 0..n {
            let pixels: Vec<f64> = (0..IMAGE_VALUES).map(|k| f64_at(bytes, at + 8 * k)).collect();
            at += IMAGE_VALUES * 8;
            let label = bytes[at] as usize;
            let tags = bytes[at + 1];
            let bias_value = f64_at(bytes, at + 2);
            at += 10;
            if label > 1 || tags > 3 {
                return Err(bad(format!("corrupt record (label {label}, tags {tags})")));
            }
            if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) || !bias_value.is_finite() {
                return Err(bad("pixel outside [0, 1] or non-finite bias value".into()));
            }
            let shape = if tags & 1 == 1 { ShapeTag::Square } else { ShapeTag::Cross };
            let hue = if tags & 2 == 2 { HueTag::Violet } else { HueTag::Green };
            examples.push(LabeledExample {
                image: SynthImage::from_rgb(pixels, shape, hue)?,
                label,
                bias_value,
            });
        }
        splits.push(Split::new(examples));
    }
    let test = splits.pop().expect("three splits");
    let val = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    Ok(SplitDataset {
        setup,
        seed,
        train,
        val,
        test,
    })
}

pub fn write_dataset(data: &SplitDataset, path: &Path) -> Result<()> {
    fs::write(path, encode(data)).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<SplitDataset> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// One row per example: split, index, label, shape, hue, bias value, then
/// the 192 RGB values named `r_<row>_<col>` and so on.
pub fn export_csv(data: &SplitDataset, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header: Vec<String> = ["split", "index", "label", "shape", "hue", "bias"].iter().map(|s| s.to_string()).collect();
    for r in 0..IMAGE_SIZE {
        for c in 0..IMAGE_SIZE {
            for ch in ["r", "g", "b"] {
                header.push(format!("{ch}_{r}_{c}"));
            }
        }
    }
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for (name, split) in [("train", &data.train), ("val", &data.val), ("test", &data.test)] {
        for (i, e) in split.examples().iter().enumerate() {
            let shape = match e.image.shape_tag {
                ShapeTag::Cross => "cross",
                ShapeTag::Square => "square",
            };
            let hue = match e.image.hue_tag {
                HueTag::Green => "green",
                HueTag::Violet => "violet",
            };
            let mut row = vec![
                name.to_string(),
                i.to_string(),
                e.label.to_string(),
                shape.to_string(),
                hue.to_string(),
                fmt_f64(e.bias_value),
            ];
            row.extend(e.image.pixels.iter().map(|&v| fmt_f64(v)));
            w.write_record(&row).map_err(|e| Error::csv(path, e))?;
        }
    }
    w.into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .flush()
        .map_err(|e| Error::io(path, e))
}
