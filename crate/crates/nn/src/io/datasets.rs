use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{file_err, IoError};
use crate::data::DatasetSplit;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

fn read(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(file_err(path))
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn check_header(path: &Path, bytes: &[u8], magic: u32, header: usize) -> Result<(), IoError> {
    let p = || path.display().to_string();
    if bytes.len() < 4 {
        return Err(IoError::Truncated { path: p(), expected: header as u64, found: bytes.len() as u64 });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(IoError::WrongMagic { path: p(), found, expected: magic });
    }
    if bytes.len() < header {
        return Err(IoError::Truncated { path: p(), expected: header as u64, found: bytes.len() as u64 });
    }
    Ok(())
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Parse a big-endian IDX image file (`u8`, 3-D) and its label file.
/// Pixels are exposed divided by 255.
pub fn load_idx(images: &Path, labels: &Path) -> Result<DatasetSplit, IoError> {
    let img = read(images)?;
    check_header(images, &img, IMAGE_MAGIC, 16)?;
    let (n, h, w) = (be_u32(&img, 4) as usize, be_u32(&img, 8) as usize, be_u32(&img, 12) as usize);
    let expected = 16 + n * h * w;
    if img.len() != expected {
        return Err(IoError::Truncated {
            path: images.display().to_string(),
            expected: expected as u64,
            found: img.len() as u64,
        });
    }
    let lab = read(labels)?;
    check_header(labels, &lab, LABEL_MAGIC, 8)?;
    let m = be_u32(&lab, 4) as usize;
    if lab.len() != 8 + m {
        return Err(IoError::Truncated {
            path: labels.display().to_string(),
            expected: 8 + m as u64,
            found: lab.len() as u64,
        });
    }
    if m != n {
        return Err(IoError::CountMismatch { images: n, labels: m });
    }
    if let Some(&label) = lab[8..].iter().find(|&&l| l > 9) {
        return Err(IoError::BadLabel { label });
    }
    let checksum = sha256_hex(&[&img, &lab]);
    let mut split = DatasetSplit::new(img[16..].to_vec(), [1, h, w], lab[8..].to_vec())
        .ok_or(IoError::CountMismatch { images: n, labels: m })?;
    split.checksum = Some(checksum);
    Ok(split)
}

/// Concatenate CIFAR-10 binary batches: 3073-byte records of one label
/// byte and 3072 channel-major pixels.
pub fn load_cifar10(paths: &[PathBuf]) -> Result<DatasetSplit, IoError> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    let mut files = Vec::new();
    for path in paths {
        let bytes = read(path)?;
        if bytes.len() % CIFAR_RECORD != 0 {
            return Err(IoError::RecordLength {
                path: path.display().to_string(),
                len: bytes.len(),
                record: CIFAR_RECORD,
            });
        }
        for rec in bytes.chunks(CIFAR_RECORD) {
            if rec[0] > 9 {
                return Err(IoError::BadLabel { label: rec[0] });
            }
            labels.push(rec[0]);
            pixels.extend_from_slice(&rec[1..]);
        }
        files.push(bytes);
    }
    let parts: Vec<&[u8]> = files.iter().map(Vec::as_slice).collect();
    let n = labels.len();
    let mut split = DatasetSplit::new(pixels, [3, 32, 32], labels)
        .ok_or(IoError::CountMismatch { images: n, labels: n })?;
    split.checksum = Some(sha256_hex(&parts));
    Ok(split)
}

/// sha256 over the concatenated contents of `paths`.
pub fn checksum_files(paths: &[PathBuf]) -> Result<String, IoError> {
    let files = paths.iter().map(|p| read(p)).collect::<Result<Vec<_>, _>>()?;
    let parts: Vec<&[u8]> = files.iter().map(Vec::as_slice).collect();
    Ok(sha256_hex(&parts))
}

/// Compare `checksum` with the one recorded under `key` in the manifest
/// (`key sha256` per line), recording it if absent.
pub fn verify_checksum(manifest: &Path, key: &str, checksum: &str) -> Result<(), IoError> {
    let text = match fs::read_to_string(manifest) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(file_err(manifest)(e)),
    };
    for line in text.lines() {
        if let Some((k, v)) = line.split_once(' ') {
            if k == key {
                return if v == checksum {
                    Ok(())
                } else {
                    Err(IoError::Checksum {
                        what: key.to_string(),
                        recorded: v.to_string(),
                        found: checksum.to_string(),
                    })
                };
            }
        }
    }
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(manifest)
        .map_err(file_err(manifest))?;
    writeln!(f, "{key} {checksum}").map_err(file_err(manifest))
}

/// The datasets and their on-disk layout under a data root.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Fashion,
    Cifar10,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 3] = [DatasetKind::Mnist, DatasetKind::Fashion, DatasetKind::Cifar10];

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Fashion => "fashion",
            DatasetKind::Cifar10 => "cifar10",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.name() == s)
    }

    /// Files backing one split, relative to `root`.
    pub fn files(self, root: &Path, train: bool) -> Vec<PathBuf> {
        let dir = root.join(self.name());
        match self {
            DatasetKind::Cifar10 if train => (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
            DatasetKind::Cifar10 => vec![dir.join("test_batch.bin")],
            _ => {
                let p = if train { "train" } else { "t10k" };
                vec![
                    dir.join(format!("{p}-images-idx3-ubyte")),
                    dir.join(format!("{p}-labels-idx1-ubyte")),
                ]
            }
        }
    }

    pub fn available(self, root: &Path) -> bool {
        [true, false].iter().all(|&t| self.files(root, t).iter().all(|p| p.is_file()))
    }

    /// Load a split and check it against `root/checksums.txt`.
    pub fn load(self, root: &Path, train: bool) -> Result<DatasetSplit, IoError> {
        let files = self.files(root, train);
        let split = match self {
            DatasetKind::Cifar10 => load_cifar10(&files)?,
            _ => load_idx(&files[0], &files[1])?,
        };
        let key = format!("{}/{}", self.name(), if train { "train" } else { "test" });
        if let Some(sum) = &split.checksum {
            verify_checksum(&root.join("checksums.txt"), &key, sum)?;
        }
        Ok(split)
    }
}
