//! Portable on-disk dataset format.
//!
//! A dataset directory holds `manifest.csv`
//! (`path,class_label,bias_label,bias_free`), `config.json` (the full
//! [`DatasetConfig`] plus split and sample count), `checksums.sha256`
//! (sha256sum-style lines) and one 8-bit PNG per sample. Booleans are
//! written as `0`/`1`. Writing is deterministic: two writes of the same
//! dataset produce byte-identical trees.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BiasedDataset, DatasetConfig, DatasetError, Sample, Split};
use crate::imgproc::{png_bytes, png_decode};
use crate::util::hash::sha256_hex;

#[derive(Serialize, Deserialize)]
struct ConfigSidecar {
    config: DatasetConfig,
    split: Split,
    num_samples: usize,
    num_bias_free: usize,
}

fn io_err(e: impl std::fmt::Display) -> DatasetError {
    DatasetError::Io(e.to_string())
}

/// Write a dataset directory; returns the manifest path.
pub fn write_dataset(dataset: &BiasedDataset, dir: &Path) -> Result<std::path::PathBuf, DatasetError> {
    fs::create_dir_all(dir.join("images")).map_err(io_err)?;
    let digits = dataset.len().max(1).ilog10() as usize + 1;

    let mut manifest = String::from("path,class_label,bias_label,bias_free\n");
    let mut checksums = String::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        let rel = format!("images/{i:0width$}.png", width = digits);
        let bytes = png_bytes(&s.image);
        fs::write(dir.join(&rel), &bytes).map_err(io_err)?;
        manifest.push_str(&format!(
            "{rel},{},{},{}\n",
            s.class_label,
            s.bias_label,
            if s.bias_free { 1 } else { 0 }
        ));
        checksums.push_str(&format!("{}  {rel}\n", sha256_hex(&bytes)));
    }

    let manifest_path = dir.join("manifest.csv");
    fs::write(&manifest_path, manifest).map_err(io_err)?;
    fs::write(dir.join("checksums.sha256"), checksums).map_err(io_err)?;

    let sidecar = ConfigSidecar {
        config: dataset.config.clone(),
        split: dataset.split,
        num_samples: dataset.len(),
        num_bias_free: dataset.bias_free_count(),
    };
    let json = serde_json::to_string_pretty(&sidecar).map_err(io_err)?;
    fs::write(dir.join("config.json"), json).map_err(io_err)?;
    Ok(manifest_path)
}

/// Read a dataset directory back, verifying per-image checksums.
pub fn read_dataset(dir: &Path) -> Result<BiasedDataset, DatasetError> {
    let sidecar: ConfigSidecar = serde_json::from_str(
        &fs::read_to_string(dir.join("config.json")).map_err(io_err)?,
    )
    .map_err(io_err)?;

    let mut expected = std::collections::HashMap::new();
    let checksum_text = fs::read_to_string(dir.join("checksums.sha256")).map_err(io_err)?;
    for line in checksum_text.lines() {
        if let Some((hash, rel)) = line.split_once("  ") {
            expected.insert(rel.to_string(), hash.to_string());
        }
    }

    let manifest = fs::read_to_string(dir.join("manifest.csv")).map_err(io_err)?;
    let mut reader = csv::Reader::from_reader(manifest.as_bytes());
    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(io_err)?;
        let rel = record.get(0).ok_or_else(|| io_err("manifest missing path column"))?;
        let class_label: usize = record.get(1).unwrap_or_default().parse().map_err(io_err)?;
        let bias_label: usize = record.get(2).unwrap_or_default().parse().map_err(io_err)?;
        let bias_free = record.get(3).unwrap_or_default() == "1";

        let path = dir.join(rel);
        let bytes = fs::read(&path)
            .map_err(|_| DatasetError::MissingImage(path.display().to_string()))?;
        if let Some(want) = expected.get(rel) {
            let got = sha256_hex(&bytes);
            if &got != want {
                return Err(DatasetError::ChecksumMismatch {
                    path: rel.to_string(),
                    expected: want.clone(),
                    actual: got,
                });
            }
        }
        let image = png_decode(&bytes).map_err(io_err)?;
        samples.push(Sample { image, class_label, bias_label, bias_free });
    }

    Ok(BiasedDataset { config: sidecar.config, split: sidecar.split, samples })
}

#[cfg(test)]
mod tests {
    use super::super::source::{synthetic_digits, SourceConfig};
    use super::super::{build_colored_mnist, DatasetConfig};
    use super::*;

    fn tiny_dataset() -> BiasedDataset {
        let src = synthetic_digits(SourceConfig::new(24, 4, 4, 5));
        build_colored_mnist(&src, &DatasetConfig::colored_mnist(0.25, 3))
            .unwrap()
            .train
    }

    #[test]
    fn write_read_round_trip_is_bit_identical() {
        let ds = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn two_writes_produce_identical_bytes() {
        let ds = tiny_dataset();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        write_dataset(&ds, d1.path()).unwrap();
        write_dataset(&ds, d2.path()).unwrap();
        for name in ["manifest.csv", "config.json", "checksums.sha256"] {
            assert_eq!(
                std::fs::read(d1.path().join(name)).unwrap(),
                std::fs::read(d2.path().join(name)).unwrap(),
                "{name} differs between writes"
            );
        }
        let img = "images/00.png";
        assert_eq!(
            std::fs::read(d1.path().join(img)).unwrap(),
            std::fs::read(d2.path().join(img)).unwrap()
        );
    }

    #[test]
    fn missing_image_is_reported_with_path() {
        let ds = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("images/03.png")).unwrap();
        match read_dataset(dir.path()) {
            Err(DatasetError::MissingImage(p)) => assert!(p.contains("03.png"), "path was {p}"),
            other => panic!("expected MissingImage, got {other:?}"),
        }
    }

    #[test]
    fn corrupted_image_fails_checksum() {
        let ds = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let victim = dir.path().join("images/01.png");
        let other = std::fs::read(dir.path().join("images/02.png")).unwrap();
        std::fs::write(&victim, other).unwrap();
        match read_dataset(dir.path()) {
            Err(DatasetError::ChecksumMismatch { path, .. }) => assert!(path.contains("01.png")),
            other => panic!("expected ChecksumMismatch, got {other:?}"),
        }
    }
}
