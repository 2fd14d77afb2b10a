//! Training pairs cut from lossless sources, and the manifest that lists them.
//!
//! Manifest layout (line oriented, paths relative to the manifest's directory):
//!
//! ```text
//! #hrcnn-manifest 1
//! #quality 10
//! #crop 64
//! #seed 7
//! #source train <sha256> <file name>
//! train gt/train_00000.pgm ksp/train_00000.ksp
//! val gt/val_00000.pgm ksp/val_00000.ksp
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kspace::{
    encode, read_image, read_kspace, write_image, write_kspace, GrayImage, KSpaceImage, QuantTable,
};
use crate::metrics::{evaluate_pair, EvalReport, Reconstructor};

const MANIFEST_TAG: &str = "#hrcnn-manifest 1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }

    fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub ground_truth: GrayImage,
    pub code: KSpaceImage,
}

impl SamplePair {
    pub fn from_image(ground_truth: GrayImage, quality: u32) -> Result<Self> {
        let code = encode(&ground_truth, quality)?;
        Ok(SamplePair { ground_truth, code })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceRecord {
    pub split: Split,
    pub sha256: String,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub split: Split,
    pub ground_truth: PathBuf,
    pub code: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub quality: u32,
    pub crop: usize,
    pub seed: u64,
    pub sources: Vec<SourceRecord>,
    pub entries: Vec<ManifestEntry>,
    /// Directory the entry paths are relative to.
    pub root: PathBuf,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{MANIFEST_TAG}\n#quality {}\n#crop {}\n#seed {}\n",
            self.quality, self.crop, self.seed
        );
        for src in &self.sources {
            let _ = writeln!(
                s,
                "#source {} {} {}",
                src.split.name(),
                src.sha256,
                src.name
            );
        }
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{} {} {}",
                e.split.name(),
                e.ground_truth.display(),
                e.code.display()
            );
        }
        s
    }

    pub fn parse(text: &str, root: &Path, origin: &Path) -> Result<Self> {
        let err = |n: usize, m: &str| Error::format(origin, format!("line {}: {m}", n + 1));
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == MANIFEST_TAG => {}
            _ => return Err(Error::format(origin, "missing manifest header")),
        }
        let (mut quality, mut crop, mut seed) = (None, None, None);
        let mut sources = Vec::new();
        let mut entries = Vec::new();
        for (n, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('#') {
                let mut f = h.split_whitespace();
                match (f.next(), f.next()) {
                    (Some("quality"), Some(v)) => quality = v.parse().ok(),
                    (Some("crop"), Some(v)) => crop = v.parse().ok(),
                    (Some("seed"), Some(v)) => seed = v.parse().ok(),
                    (Some("source"), Some(split)) => {
                        let split = Split::parse(split).ok_or_else(|| err(n, "bad split"))?;
                        let sha256 = f.next().ok_or_else(|| err(n, "missing hash"))?.to_owned();
                        let name = f.collect::<Vec<_>>().join(" ");
                        sources.push(SourceRecord {
                            split,
                            sha256,
                            name,
                        });
                    }
                    _ => return Err(err(n, "unknown header line")),
                }
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let [split, gt, code] = f[..] else {
                return Err(err(n, "expected `<split> <gt path> <ksp path>`"));
            };
            entries.push(ManifestEntry {
                split: Split::parse(split).ok_or_else(|| err(n, "bad split"))?,
                ground_truth: gt.into(),
                code: code.into(),
            });
        }
        let quality = quality.ok_or_else(|| Error::format(origin, "missing #quality"))?;
        QuantTable::check_quality(quality)?;
        Ok(Manifest {
            quality,
            crop: crop.ok_or_else(|| Error::format(origin, "missing #crop"))?,
            seed: seed.ok_or_else(|| Error::format(origin, "missing #seed"))?,
            sources,
            entries,
            root: root.to_owned(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new("")), path)
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn load_entry(&self, e: &ManifestEntry) -> Result<SamplePair> {
        let ground_truth = read_image(self.root.join(&e.ground_truth))?;
        let code = read_kspace(self.root.join(&e.code))?;
        if code.quality() != self.quality {
            return Err(Error::format(
                self.root.join(&e.code),
                format!(
                    "quality {} but the manifest says {}",
                    code.quality(),
                    self.quality
                ),
            ));
        }
        Ok(SamplePair { ground_truth, code })
    }

    /// Loads every pair of a split; the first unreadable file aborts.
    pub fn load_split(&self, split: Split) -> Result<Vec<SamplePair>> {
        self.entries(split).map(|e| self.load_entry(e)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct DatasetOptions {
    pub sources: PathBuf,
    pub out_dir: PathBuf,
    pub quality: u32,
    pub crop: usize,
    /// Number of training crops.
    pub count: usize,
    /// Number of validation crops, cut from held-out sources.
    pub val_count: usize,
    /// Fraction of sources held out for validation (at least one when `val_count > 0`).
    pub val_fraction: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct DatasetSummary {
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
    /// Sources smaller than the crop.
    pub skipped: Vec<String>,
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("png" | "pgm")
    )
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Cuts seeded random crops from every PNG/PGM in `sources` (green channel of
/// colour images), encodes them, and writes PGM + KSP1 pairs and a manifest.
pub fn make_dataset(opts: &DatasetOptions) -> Result<DatasetSummary> {
    QuantTable::check_quality(opts.quality)?;
    if opts.crop == 0 || opts.crop % 8 != 0 {
        return Err(Error::InvalidArgument(format!(
            "crop must be a positive multiple of 8, got {}",
            opts.crop
        )));
    }
    let dir = std::fs::read_dir(&opts.sources).map_err(|e| Error::io(&opts.sources, e))?;
    let mut files: Vec<PathBuf> = dir
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    files.sort();
    if files.is_empty() && opts.count + opts.val_count > 0 {
        return Err(Error::InvalidArgument(format!(
            "{}: no PNG or PGM sources",
            opts.sources.display()
        )));
    }

    let mut usable = Vec::new();
    let mut skipped = Vec::new();
    for path in &files {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let image = read_image(path)?;
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if image.width() < opts.crop || image.height() < opts.crop {
            skipped.push(name);
            continue;
        }
        usable.push((name, sha256_hex(&bytes), image));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..usable.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if opts.val_count == 0 {
        0
    } else {
        ((opts.val_fraction * usable.len() as f64).round() as usize).max(1)
    };
    if opts.count > 0 && n_val >= usable.len() {
        return Err(Error::InvalidArgument(format!(
            "{} usable sources cannot provide both splits",
            usable.len()
        )));
    }
    let mut val_sources: Vec<usize> = order[..n_val].to_vec();
    let mut train_sources: Vec<usize> = order[n_val..].to_vec();
    val_sources.sort();
    train_sources.sort();

    let mut sources: Vec<SourceRecord> = usable
        .iter()
        .enumerate()
        .map(|(i, (name, hash, _))| SourceRecord {
            split: if val_sources.contains(&i) {
                Split::Val
            } else {
                Split::Train
            },
            sha256: hash.clone(),
            name: name.clone(),
        })
        .collect();
    sources.sort_by(|a, b| a.name.cmp(&b.name));

    for sub in ["gt", "ksp"] {
        let d = opts.out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut entries = Vec::new();
    for (split, count, pool) in [
        (Split::Train, opts.count, &train_sources),
        (Split::Val, opts.val_count, &val_sources),
    ] {
        for k in 0..count {
            let image = &usable[pool[k % pool.len()]].2;
            let x = rng.gen_range(0..=image.width() - opts.crop);
            let y = rng.gen_range(0..=image.height() - opts.crop);
            let pair =
                SamplePair::from_image(image.crop(x, y, opts.crop, opts.crop)?, opts.quality)?;
            let stem = format!("{}_{k:05}", split.name());
            let entry = ManifestEntry {
                split,
                ground_truth: PathBuf::from("gt").join(format!("{stem}.pgm")),
                code: PathBuf::from("ksp").join(format!("{stem}.ksp")),
            };
            write_image(&pair.ground_truth, opts.out_dir.join(&entry.ground_truth))?;
            write_kspace(&pair.code, opts.out_dir.join(&entry.code))?;
            entries.push(entry);
        }
    }

    let manifest = Manifest {
        quality: opts.quality,
        crop: opts.crop,
        seed: opts.seed,
        sources,
        entries,
        root: opts.out_dir.clone(),
    };
    let manifest_path = opts.out_dir.join("manifest.txt");
    std::fs::write(&manifest_path, manifest.to_text()).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(DatasetSummary {
        manifest_path,
        manifest,
        skipped,
    })
}

#[derive(Clone, Debug, Default)]
pub struct AuditReport {
    pub checked: usize,
    /// `(ground-truth path, reason)` for every pair that failed.
    pub problems: Vec<(PathBuf, String)>,
}

impl AuditReport {
    pub fn ok(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Re-encodes every ground truth and checks it against the stored code.
pub fn audit_manifest(manifest: &Manifest) -> AuditReport {
    let mut report = AuditReport::default();
    for e in &manifest.entries {
        report.checked += 1;
        let outcome = manifest.load_entry(e).and_then(|pair| {
            let fresh = encode(&pair.ground_truth, manifest.quality)?;
            if fresh != pair.code {
                return Err(Error::InvalidArgument(
                    "stored code differs from re-encoding".into(),
                ));
            }
            if pair.ground_truth.width() != manifest.crop
                || pair.ground_truth.height() != manifest.crop
            {
                return Err(Error::InvalidArgument(
                    "crop size differs from the manifest".into(),
                ));
            }
            Ok(())
        });
        if let Err(err) = outcome {
            report
                .problems
                .push((e.ground_truth.clone(), err.to_string()));
        }
    }
    report
}

/// Scores every pair of `split` (or all pairs); unreadable pairs are listed as
/// failures and the run continues.
pub fn evaluate_manifest(
    manifest: &Manifest,
    split: Option<Split>,
    model: &Reconstructor<'_>,
    model_id: &str,
) -> EvalReport {
    let mut report = EvalReport {
        quality: manifest.quality,
        model_id: model_id.to_owned(),
        ..EvalReport::default()
    };
    for e in manifest
        .entries
        .iter()
        .filter(|e| split.map_or(true, |s| e.split == s))
    {
        let id = e.ground_truth.display().to_string();
        match manifest
            .load_entry(e)
            .and_then(|p| evaluate_pair(&id, &p.ground_truth, &p.code, model))
        {
            Ok(row) => report.rows.push(row),
            Err(err) => report.failures.push((id, err.to_string())),
        }
    }
    report
}
