//! CIFAR-10 binary layout: each record is one label byte followed by
//! 3072 pixel bytes (1024 R, then 1024 G, then 1024 B, row-major 32×32).

use std::fs;
use std::path::Path;

use super::{Dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const SIDE: usize = 32;
const PIXELS: usize = 3 * SIDE * SIDE;
pub const CIFAR_RECORD_BYTES: usize = PIXELS + 1;
const RECORDS_PER_FILE: usize = 10_000;
const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
const TEST_FILE: &str = "test_batch.bin";

/// Decodes whole records; a trailing partial record is a short read.
pub fn parse_cifar_records(bytes: &[u8], id_prefix: &str, first_index: usize) -> Result<Vec<Sample>> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD_BYTES) {
        return Err(Error::Data(format!(
            "short read: {} bytes is not a whole number of {CIFAR_RECORD_BYTES}-byte records",
            bytes.len()
        )));
    }
    bytes
        .chunks_exact(CIFAR_RECORD_BYTES)
        .enumerate()
        .map(|(k, rec)| {
            let label = rec[0] as usize;
            if label >= 10 {
                return Err(Error::Data(format!("record {k}: label byte {label} out of range")));
            }
            let data = rec[1..].iter().map(|&b| b as f32 / 255.0).collect();
            Ok(Sample {
                id: format!("{id_prefix}-{:05}", first_index + k),
                image: Tensor::from_vec((1, 3, SIDE, SIDE), data)?,
                label,
            })
        })
        .collect()
}

fn read_file(path: &Path, prefix: &str, first: usize) -> Result<Vec<Sample>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != RECORDS_PER_FILE * CIFAR_RECORD_BYTES {
        return Err(Error::Data(format!(
            "short read: {} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            RECORDS_PER_FILE * CIFAR_RECORD_BYTES
        )));
    }
    parse_cifar_records(&bytes, prefix, first)
}

/// Loads the standard six-file binary distribution from `dir`.
pub fn load_cifar10(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    for f in TRAIN_FILES.iter().chain([&TEST_FILE]) {
        if !dir.join(f).is_file() {
            return Err(Error::Data(format!("missing CIFAR-10 file {}", dir.join(f).display())));
        }
    }
    let mut train = Vec::with_capacity(5 * RECORDS_PER_FILE);
    for (k, f) in TRAIN_FILES.iter().enumerate() {
        train.extend(read_file(&dir.join(f), "train", k * RECORDS_PER_FILE)?);
    }
    let val = read_file(&dir.join(TEST_FILE), "test", 0)?;
    Ok((
        Dataset::new(train, 10, Split::Train)?,
        Dataset::new(val, 10, Split::Val)?,
    ))
}
