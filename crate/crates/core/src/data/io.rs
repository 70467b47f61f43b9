//! CSV and IDX ingestion, CSV export and the dataset manifest.

use std::fs::File;
use std::io::{BufWriter, Read};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Dataset, ScalingMetadata};
use crate::error::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Result of [`load_csv`]: the complete-case dataset and how many rows were
/// dropped for missing cells.
#[derive(Debug, Clone)]
pub struct CsvLoad {
    pub dataset: Dataset,
    pub dropped_rows: usize,
}

/// Reads a comma-separated file with a header row.
///
/// Rows with any empty cell are dropped. The target column is factor-encoded
/// in order of first appearance; every other column must be numeric.
pub fn load_csv(path: impl AsRef<Path>, target_column: &str) -> Result<CsvLoad> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let target = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::MissingColumn(target_column.to_string()))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != target)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut dropped = 0;
    let mut n = 0;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        if record.iter().any(str::is_empty) || record.len() < headers.len() {
            dropped += 1;
            continue;
        }
        for (j, cell) in record.iter().enumerate() {
            if j == target {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                row: row_idx + 1,
                column: headers[j].to_string(),
                value: cell.to_string(),
            })?;
            values.push(v);
        }
        let class = &record[target];
        let label = match class_names.iter().position(|c| c == class) {
            Some(l) => l,
            None => {
                class_names.push(class.to_string());
                class_names.len() - 1
            }
        };
        labels.push(label);
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyAfterFiltering);
    }
    let features = Array2::from_shape_vec((n, feature_names.len()), values)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(CsvLoad {
        dataset: Dataset::new(features, labels, feature_names, class_names)?,
        dropped_rows: dropped,
    })
}

/// Writes `ds` as CSV with the class name in a final `target_column`.
///
/// Values use the shortest representation that parses back exactly.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>, target_column: &str) -> Result<()> {
    let mut writer = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header: Vec<&str> = ds.feature_names().iter().map(String::as_str).collect();
    header.push(target_column);
    writer.write_record(&header)?;
    for (row, &y) in ds.features().rows().into_iter().zip(ds.labels()) {
        let mut record: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        record.push(ds.class_names()[y].clone());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

fn read_u32(buf: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes(buf[offset..offset + 4].try_into().unwrap())
}

fn read_idx(path: &Path, magic: u32, header_len: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    let bad = |reason: String| Error::Idx {
        path: path.to_path_buf(),
        reason,
    };
    if buf.len() < header_len {
        return Err(bad(format!("file is {} bytes, shorter than its header", buf.len())));
    }
    let found = read_u32(&buf, 0);
    if found != magic {
        return Err(bad(format!("magic {found:#010x}, expected {magic:#010x}")));
    }
    Ok(buf)
}

/// Reads MNIST-style IDX image and label files.
///
/// Each image is flattened row-major into `rows × cols` features with raw
/// intensities in `[0, 255]`. `limit` keeps only the first images.
pub fn load_idx_images(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    limit: Option<usize>,
) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let images = read_idx(images_path, IDX_IMAGES_MAGIC, 16)?;
    let labels = read_idx(labels_path, IDX_LABELS_MAGIC, 8)?;
    let n_images = read_u32(&images, 4) as usize;
    let rows = read_u32(&images, 8) as usize;
    let cols = read_u32(&images, 12) as usize;
    let n_labels = read_u32(&labels, 4) as usize;
    if n_images != n_labels {
        return Err(Error::Idx {
            path: labels_path.to_path_buf(),
            reason: format!("{n_labels} labels for {n_images} images"),
        });
    }
    let p = rows * cols;
    if images.len() != 16 + n_images * p {
        return Err(Error::Idx {
            path: images_path.to_path_buf(),
            reason: format!("expected {} pixel bytes, found {}", n_images * p, images.len() - 16),
        });
    }
    if labels.len() != 8 + n_labels {
        return Err(Error::Idx {
            path: labels_path.to_path_buf(),
            reason: format!("expected {n_labels} label bytes, found {}", labels.len() - 8),
        });
    }
    let n = limit.map_or(n_images, |l| l.min(n_images));
    let features = Array2::from_shape_fn((n, p), |(i, j)| f64::from(images[16 + i * p + j]));
    let y: Vec<usize> = labels[8..8 + n].iter().map(|&b| usize::from(b)).collect();
    let k = y.iter().copied().max().unwrap_or(0).max(1) + 1;
    Dataset::new(
        features,
        y,
        (0..p).map(|j| format!("px{j}")).collect(),
        (0..k).map(|c| c.to_string()).collect(),
    )
}

/// JSON sidecar describing a stored dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub source: String,
    pub n_samples: usize,
    pub n_features: usize,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub class_counts: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingMetadata>,
    #[serde(default)]
    pub dropped_rows: usize,
}

impl DatasetManifest {
    pub fn describe(ds: &Dataset, source: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            n_samples: ds.n_samples(),
            n_features: ds.n_features(),
            feature_names: ds.feature_names().to_vec(),
            class_names: ds.class_names().to_vec(),
            class_counts: ds.class_counts(),
            scaling: None,
            dropped_rows: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &[u8]) -> std::path::PathBuf {
        let path = dir.path().join(name);
        File::create(&path).unwrap().write_all(body).unwrap();
        path
    }

    #[test]
    fn csv_complete_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "a.csv", b"a,b,y\n1,2,cat\n3,4,dog\n5,6,cat\n");
        let load = load_csv(&path, "y").unwrap();
        assert_eq!(load.dropped_rows, 0);
        assert_eq!(load.dataset.n_samples(), 3);
        assert_eq!(load.dataset.labels(), &[0, 1, 0]);
        assert_eq!(load.dataset.class_names(), &["cat".to_string(), "dog".to_string()]);
    }

    #[test]
    fn csv_drops_incomplete_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "a.csv", b"a,b,y\n1,2,0\n3,,1\n5,6,1\n7,8,0\n");
        let load = load_csv(&path, "y").unwrap();
        assert_eq!(load.dropped_rows, 1);
        assert_eq!(load.dataset.n_samples(), 3);
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "a.csv", b"a,b,y\n1,2,0\n3,4,1\n");
        assert!(matches!(load_csv(&path, "z"), Err(Error::MissingColumn(_))));
        let path = write(&dir, "b.csv", b"a,y\n1,0\nx,1\n");
        assert!(matches!(load_csv(&path, "y"), Err(Error::NonNumeric { row: 2, .. })));
        let path = write(&dir, "c.csv", b"a,y\n,0\n1,\n");
        assert!(matches!(load_csv(&path, "y"), Err(Error::EmptyAfterFiltering)));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = crate::data::simulate(&crate::data::SimulationSpec {
            n_samples: 50,
            ..Default::default()
        })
        .unwrap();
        let path = dir.path().join("sim.csv");
        write_csv(&ds, &path, "label").unwrap();
        let back = load_csv(&path, "label").unwrap().dataset;
        for (a, b) in back.features().iter().zip(ds.features().iter()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
        }
        // Factor encoding follows first appearance, so compare class names.
        for i in 0..ds.n_samples() {
            assert_eq!(
                back.class_names()[back.labels()[i]],
                ds.class_names()[ds.labels()[i]]
            );
        }
    }

    fn idx_images(n: u32, pixels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [IDX_IMAGES_MAGIC, n, 28, 28] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(pixels);
        out
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        out.extend_from_slice(labels);
        out
    }

    #[test]
    fn idx_zero_image() {
        let dir = tempfile::tempdir().unwrap();
        let mut pixels = vec![0u8; 784];
        pixels.extend(std::iter::repeat_n(255u8, 784));
        let img = write(&dir, "i", &idx_images(2, &pixels));
        let lab = write(&dir, "l", &idx_labels(&[3, 1]));
        let ds = load_idx_images(&img, &lab, None).unwrap();
        assert_eq!(ds.n_features(), 784);
        assert!(ds.features().row(0).iter().all(|&v| v == 0.0));
        assert!(ds.features().row(1).iter().all(|&v| v == 255.0));
        assert_eq!(ds.labels(), &[3, 1]);
    }

    #[test]
    fn idx_errors() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(&dir, "i", &idx_images(2, &vec![0u8; 2 * 784]));
        let lab = write(&dir, "l", &idx_labels(&[1, 2, 3]));
        assert!(matches!(load_idx_images(&img, &lab, None), Err(Error::Idx { .. })));
        // Swapped files: magic mismatch.
        assert!(matches!(load_idx_images(&lab, &img, None), Err(Error::Idx { .. })));
    }
}
