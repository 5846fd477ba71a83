//! Corpus synthesis: one record per (source, class), written as PPM files
//! plus a JSON Lines manifest.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{apply_distortion, DistortionClass, DistortionKind, DistortionParams};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::hash::{fnv1a, fnv1a_extend, mix64};
use crate::image::RgbImage;

/// Subdirectory of the output tree holding undistorted copies of the
/// sources.
pub const PRISTINE_DIR: &str = "pristine";

pub const MANIFEST_NAME: &str = "manifest.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub params: DistortionParams,
    /// Sources with either side below this are skipped.
    pub min_side: usize,
    /// Accept PNG sources in addition to PPM.
    pub allow_png: bool,
    /// Also write each source to `pristine/<id>.ppm`.
    pub copy_pristine: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { params: DistortionParams::default(), min_side: 32, allow_png: false, copy_pristine: true }
    }
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub source_id: String,
    pub class_index: usize,
    pub kind: DistortionKind,
    pub level: u8,
    /// Relative to the manifest's directory.
    pub relative_path: String,
    pub seed: u64,
}

impl SampleRecord {
    pub fn class(&self) -> Result<DistortionClass> {
        let class = DistortionClass::new(self.kind, self.level)?;
        if class.index() != self.class_index {
            return Err(Error::domain(format!(
                "record {} has class_index {} but ({}, {}) maps to {}",
                self.relative_path,
                self.class_index,
                self.kind,
                self.level,
                class.index()
            )));
        }
        Ok(class)
    }
}

#[derive(Clone, Debug)]
pub struct SynthSource {
    pub id: String,
    pub image: RgbImage,
}

#[derive(Debug, Default)]
pub struct SynthOutput {
    pub records: Vec<SampleRecord>,
    /// Sources that could not be used, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
    pub manifest_path: PathBuf,
}

/// Stable per-record seed from the run seed, source id and class index.
pub fn derive_record_seed(seed: u64, source_id: &str, class_index: usize) -> u64 {
    let mut h = fnv1a(&seed.to_le_bytes());
    h = fnv1a_extend(h, &(source_id.len() as u64).to_le_bytes());
    h = fnv1a_extend(h, source_id.as_bytes());
    h = fnv1a_extend(h, &(class_index as u64).to_le_bytes());
    mix64(h)
}

fn record_path(source_id: &str, class: DistortionClass) -> String {
    format!("{source_id}/{:02}_{}_{}.ppm", class.index(), class.kind().name(), class.level())
}

/// In-memory synthesis: 39 records per source, sources in the given order,
/// classes in index order.
pub fn synthesize_records(sources: &[SynthSource], config: &SynthConfig, seed: u64) -> Vec<(SampleRecord, RgbImage)> {
    sources
        .iter()
        .flat_map(|src| synthesize_source(src, config, seed))
        .collect()
}

fn synthesize_source(src: &SynthSource, config: &SynthConfig, seed: u64) -> Vec<(SampleRecord, RgbImage)> {
    let classes: Vec<DistortionClass> = DistortionClass::all().collect();
    classes
        .par_iter()
        .map(|&class| {
            let rseed = derive_record_seed(seed, &src.id, class.index());
            let img = apply_distortion(&src.image, class, rseed, &config.params);
            let rec = SampleRecord {
                source_id: src.id.clone(),
                class_index: class.index(),
                kind: class.kind(),
                level: class.level(),
                relative_path: record_path(&src.id, class),
                seed: rseed,
            };
            (rec, img)
        })
        .collect()
}

fn source_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Synthesizes the corpus for `source_paths` under `out_dir`.
///
/// Sources are processed in ascending id order. Undecodable or undersized
/// sources are skipped and reported; an empty source list yields an empty
/// manifest.
pub fn synthesize_dataset(source_paths: &[PathBuf], out_dir: &Path, config: &SynthConfig, seed: u64) -> Result<SynthOutput> {
    config.params.validate()?;
    let mut paths: Vec<&PathBuf> = source_paths.iter().collect();
    paths.sort_by_key(|p| (source_id(p), (*p).clone()));
    let mut seen = BTreeSet::new();
    let mut out = SynthOutput { manifest_path: out_dir.join(MANIFEST_NAME), ..Default::default() };
    for path in paths {
        let id = source_id(path);
        if !seen.insert(id.clone()) {
            return Err(Error::domain(format!("duplicate source id {id:?} ({})", path.display())));
        }
        let image = match RgbImage::load(path, config.allow_png) {
            Ok(img) if img.width() >= config.min_side && img.height() >= config.min_side => img,
            Ok(img) => {
                let why = format!("{}x{} below minimum side {}", img.width(), img.height(), config.min_side);
                log::warn!("skipping {}: {why}", path.display());
                out.skipped.push((path.clone(), why));
                continue;
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                out.skipped.push((path.clone(), e.to_string()));
                continue;
            }
        };
        let src = SynthSource { id, image };
        if config.copy_pristine {
            src.image.save_ppm(&out_dir.join(PRISTINE_DIR).join(format!("{}.ppm", src.id)))?;
        }
        for (rec, img) in synthesize_source(&src, config, seed) {
            img.save_ppm(&out_dir.join(&rec.relative_path))?;
            out.records.push(rec);
        }
    }
    write_manifest(&out.manifest_path, &out.records)?;
    Ok(out)
}

pub fn write_manifest(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for rec in records {
        serde_json::to_writer(&mut buf, rec)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub fn read_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(&line)?;
        rec.class()?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn src(id: &str) -> SynthSource {
        let image = RgbImage::from_fn(32, 32, |x, y| [(x * 8) as u8, (y * 8) as u8, ((x + y) * 4) as u8]).unwrap();
        SynthSource { id: id.into(), image }
    }

    #[test]
    fn one_source_gives_39_records() {
        let recs = synthesize_records(&[src("a")], &SynthConfig::default(), 1);
        assert_eq!(recs.len(), 39);
        for (i, (r, _)) in recs.iter().enumerate() {
            assert_eq!(r.class_index, i);
            r.class().unwrap();
        }
    }

    #[test]
    fn zero_sources_empty() {
        assert!(synthesize_records(&[], &SynthConfig::default(), 1).is_empty());
    }

    #[test]
    fn full_corpus_size_identity() {
        // 21,869 merged source images, 39 classes each.
        let sources: u64 = 21_869;
        assert_eq!(sources * super::super::NUM_CLASSES as u64, 852_891);
    }

    #[test]
    fn seeds_unique_and_stable() {
        let mut seen = BTreeSet::new();
        for id in ["a", "b", "ab", "ba", ""] {
            for c in 0..39 {
                assert!(seen.insert(derive_record_seed(7, id, c)));
            }
        }
        assert_eq!(derive_record_seed(7, "a", 3), derive_record_seed(7, "a", 3));
        assert_ne!(derive_record_seed(7, "a", 3), derive_record_seed(8, "a", 3));
    }

    #[test]
    fn manifest_line_fields() {
        let recs = synthesize_records(&[src("img")], &SynthConfig::default(), 5);
        let line = serde_json::to_string(&recs[38].0).unwrap();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        let keys: BTreeSet<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        let expected: BTreeSet<&str> =
            ["source_id", "class_index", "kind", "level", "relative_path", "seed"].into_iter().collect();
        assert_eq!(keys, expected);
        assert_eq!(v["kind"], "under_exposure");
        assert_eq!(v["class_index"], 38);
    }
}
