//! Directory format: `manifest.json` plus raw little-endian arrays, each
//! guarded by a CRC32 recorded in the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassRecord, ControlClass, DescriptionCandidate, EmbeddingBundle, Sample};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    dim: usize,
    classes: Vec<ManifestClass>,
    tasks: Vec<Vec<usize>>,
    splits: SplitCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    control: Option<ControlSection>,
    checksums: BTreeMap<String, u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestClass {
    name: String,
    candidate_count: usize,
    candidates: Vec<ManifestCandidate>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestCandidate {
    text: String,
    cls_noun: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitCounts {
    train: usize,
    test: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ControlSection {
    samples: usize,
    classes: Vec<String>,
}

fn rows_to_bytes<'a>(rows: impl Iterator<Item = &'a [f32]>) -> Vec<u8> {
    rows.flat_map(|r| r.iter().flat_map(|x| x.to_le_bytes())).collect()
}

fn labels_to_bytes(samples: &[Sample]) -> Vec<u8> {
    samples.iter().flat_map(|s| (s.label as u32).to_le_bytes()).collect()
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], checksums: &mut BTreeMap<String, u32>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    checksums.insert(name.to_string(), crc32fast::hash(bytes));
    Ok(())
}

/// Writes `bundle` to the directory `path`, creating it if needed.
pub fn save_bundle(bundle: &EmbeddingBundle, path: impl AsRef<Path>) -> Result<()> {
    let dir = path.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut checksums = BTreeMap::new();

    let mut files: Vec<(&str, Vec<u8>)> = vec![
        ("train_x.bin", rows_to_bytes(bundle.train.iter().map(|s| s.embedding.as_slice()))),
        ("train_y.bin", labels_to_bytes(&bundle.train)),
        ("test_x.bin", rows_to_bytes(bundle.test.iter().map(|s| s.embedding.as_slice()))),
        ("test_y.bin", labels_to_bytes(&bundle.test)),
        (
            "class_text.bin",
            rows_to_bytes(bundle.classes.iter().map(|c| c.rudimentary_embedding.as_slice())),
        ),
        (
            "cand_text.bin",
            rows_to_bytes(
                bundle
                    .classes
                    .iter()
                    .flat_map(|c| c.candidates.iter().map(|d| d.embedding.as_slice())),
            ),
        ),
    ];
    let has_control = !bundle.control.is_empty() || !bundle.control_classes.is_empty();
    if has_control {
        files.push(("control_x.bin", rows_to_bytes(bundle.control.iter().map(|s| s.embedding.as_slice()))));
        files.push(("control_y.bin", labels_to_bytes(&bundle.control)));
        files.push((
            "control_class_text.bin",
            rows_to_bytes(bundle.control_classes.iter().map(|c| c.rudimentary_embedding.as_slice())),
        ));
    }
    for (name, bytes) in &files {
        write_file(dir, name, bytes, &mut checksums)?;
    }

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dim: bundle.dim,
        classes: bundle
            .classes
            .iter()
            .map(|c| ManifestClass {
                name: c.name.clone(),
                candidate_count: c.candidates.len(),
                candidates: c
                    .candidates
                    .iter()
                    .map(|d| ManifestCandidate { text: d.text.clone(), cls_noun: d.cls_noun })
                    .collect(),
            })
            .collect(),
        tasks: bundle.tasks.clone(),
        splits: SplitCounts { train: bundle.train.len(), test: bundle.test.len() },
        control: has_control.then(|| ControlSection {
            samples: bundle.control.len(),
            classes: bundle.control_classes.iter().map(|c| c.name.clone()).collect(),
        }),
        checksums,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

struct Reader<'a> {
    dir: &'a Path,
    checksums: &'a BTreeMap<String, u32>,
}

impl Reader<'_> {
    /// Reads `name`, checks it holds exactly `rows * width` 4-byte words and
    /// that its CRC32 matches the manifest.
    fn read(&self, name: &str, rows: usize, width: usize) -> Result<Vec<[u8; 4]>> {
        let path = self.dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let expected_words = rows * width;
        if bytes.len() != expected_words * 4 {
            // Report per-row widths when the file is a whole number of rows.
            let err = if rows > 0 && bytes.len() % (4 * rows) == 0 {
                Error::DimensionMismatch {
                    what: format!("{name} (values per row)"),
                    expected: width,
                    actual: bytes.len() / (4 * rows),
                }
            } else {
                Error::DimensionMismatch {
                    what: format!("{name} (total bytes)"),
                    expected: expected_words * 4,
                    actual: bytes.len(),
                }
            };
            return Err(err);
        }
        let expected = *self
            .checksums
            .get(name)
            .ok_or_else(|| Error::Config(format!("manifest has no checksum for {name}")))?;
        let actual = crc32fast::hash(&bytes);
        if actual != expected {
            return Err(Error::Checksum { file: name.to_string(), expected, actual });
        }
        Ok(bytes.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect())
    }

    fn rows(&self, name: &str, rows: usize, dim: usize) -> Result<Vec<Vec<f32>>> {
        let words = self.read(name, rows, dim)?;
        Ok(words
            .chunks(dim.max(1))
            .map(|r| r.iter().map(|w| f32::from_le_bytes(*w)).collect())
            .collect())
    }

    fn labels(&self, name: &str, rows: usize) -> Result<Vec<usize>> {
        Ok(self
            .read(name, rows, 1)?
            .into_iter()
            .map(|w| u32::from_le_bytes(w) as usize)
            .collect())
    }

    fn samples(&self, prefix: &str, count: usize, dim: usize) -> Result<Vec<Sample>> {
        let xs = self.rows(&format!("{prefix}_x.bin"), count, dim)?;
        let ys = self.labels(&format!("{prefix}_y.bin"), count)?;
        Ok(xs
            .into_iter()
            .zip(ys)
            .map(|(embedding, label)| Sample { embedding, label })
            .collect())
    }
}

/// Reads and validates a bundle directory.
pub fn load_bundle(path: impl AsRef<Path>) -> Result<EmbeddingBundle> {
    let dir = path.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|source| Error::Manifest { path: manifest_path.clone(), source })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::FormatVersion(manifest.format_version));
    }
    let dim = manifest.dim;
    if dim == 0 {
        return Err(Error::Config("manifest dim must be positive".into()));
    }
    for (k, c) in manifest.classes.iter().enumerate() {
        if c.candidate_count != c.candidates.len() {
            return Err(Error::DimensionMismatch {
                what: format!("candidate list of class {k}"),
                expected: c.candidate_count,
                actual: c.candidates.len(),
            });
        }
    }

    let reader = Reader { dir, checksums: &manifest.checksums };
    let class_rows = reader.rows("class_text.bin", manifest.classes.len(), dim)?;
    let total_cands: usize = manifest.classes.iter().map(|c| c.candidate_count).sum();
    let mut cand_rows = reader.rows("cand_text.bin", total_cands, dim)?.into_iter();

    let classes = manifest
        .classes
        .into_iter()
        .zip(class_rows)
        .map(|(c, rudimentary_embedding)| ClassRecord {
            name: c.name,
            rudimentary_embedding,
            candidates: c
                .candidates
                .into_iter()
                .map(|d| DescriptionCandidate {
                    text: d.text,
                    cls_noun: d.cls_noun,
                    embedding: cand_rows.next().expect("row count checked"),
                })
                .collect(),
        })
        .collect();

    let train = reader.samples("train", manifest.splits.train, dim)?;
    let test = reader.samples("test", manifest.splits.test, dim)?;
    let (control, control_classes) = match manifest.control {
        Some(section) => {
            let rows = reader.rows("control_class_text.bin", section.classes.len(), dim)?;
            let classes = section
                .classes
                .into_iter()
                .zip(rows)
                .map(|(name, rudimentary_embedding)| ControlClass { name, rudimentary_embedding })
                .collect();
            (reader.samples("control", section.samples, dim)?, classes)
        }
        None => (Vec::new(), Vec::new()),
    };

    let bundle = EmbeddingBundle { dim, classes, tasks: manifest.tasks, train, test, control, control_classes };
    bundle.validate()?;
    Ok(bundle)
}
