use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DataError, Result};

pub const IMAGE_EXTENSIONS: [&str; 2] = ["png", "pgm"];
const HEADER: &str = "id\timage\tmask\tsplit";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
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
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            _ => Err(format!("unknown split {s:?} (expected train or val)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub id: String,
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
    pub split: Split,
}

/// Rows sorted by id, plus the seed and ratio that produced the split.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub train_ratio: f64,
    pub rows: Vec<ManifestRow>,
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| DataError::io(dir, e))? {
        let path = entry.map_err(|e| DataError::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Scans `<root>/images` and pairs each image with `<root>/masks/<stem>.*`.
/// Masks are required when `require_masks` is set or a `masks` directory
/// exists. A seeded shuffle assigns `round(ratio * n)` rows (at least one)
/// to the training split.
pub fn build_manifest(root: &Path, train_ratio: f64, seed: u64, require_masks: bool) -> Result<DatasetManifest> {
    if !(train_ratio > 0.0 && train_ratio <= 1.0) {
        return Err(DataError::Config(format!("train ratio {train_ratio} must be in (0, 1]")));
    }
    let images = image_files(&root.join("images"))?;
    if images.is_empty() {
        return Err(DataError::invalid(root.join("images"), "no .png or .pgm images"));
    }
    let mask_dir = root.join("masks");
    let masks = if mask_dir.is_dir() {
        Some(image_files(&mask_dir)?)
    } else if require_masks {
        return Err(DataError::invalid(mask_dir, "mask directory is missing"));
    } else {
        None
    };

    let mut rows = Vec::with_capacity(images.len());
    let mut seen = HashSet::new();
    for image in images {
        let id = stem(&image);
        if !seen.insert(id.clone()) {
            return Err(DataError::invalid(image, format!("duplicate image stem {id:?}")));
        }
        let mask = match &masks {
            Some(list) => Some(
                list.iter()
                    .find(|m| stem(m) == id)
                    .cloned()
                    .ok_or_else(|| DataError::invalid(&image, "no mask with the same stem"))?,
            ),
            None => None,
        };
        rows.push(ManifestRow { id, image, mask, split: Split::Val });
    }

    let n = rows.len();
    let n_train = ((train_ratio * n as f64).round() as usize).clamp(1, n);
    if n_train == n {
        log::warn!("validation split is empty ({n} rows, train ratio {train_ratio})");
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for &i in &order[..n_train] {
        rows[i].split = Split::Train;
    }
    Ok(DatasetManifest { seed, train_ratio, rows })
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn has_masks(&self) -> bool {
        self.rows.iter().all(|r| r.mask.is_some())
    }

    /// Tab-separated table; `#` lines before the header carry the seed and ratio.
    pub fn to_tsv(&self) -> String {
        let mut s = format!("# seed={}\n# train_ratio={}\n{HEADER}\n", self.seed, self.train_ratio);
        for r in &self.rows {
            let mask = r.mask.as_ref().map(|m| m.display().to_string()).unwrap_or_default();
            s.push_str(&format!("{}\t{}\t{}\t{}\n", r.id, r.image.display(), mask, r.split));
        }
        s
    }

    pub fn parse_tsv(text: &str, origin: &Path) -> Result<Self> {
        let bad = |line: usize, detail: String| DataError::invalid(origin, format!("line {line}: {detail}"));
        let mut seed = None;
        let mut ratio = None;
        let mut rows = Vec::new();
        let mut header = false;
        for (i, line) in text.lines().enumerate() {
            let ln = i + 1;
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.trim().split_once('=') {
                    match k.trim() {
                        "seed" => seed = Some(v.trim().parse().map_err(|e| bad(ln, format!("seed: {e}")))?),
                        "train_ratio" => ratio = Some(v.trim().parse().map_err(|e| bad(ln, format!("train_ratio: {e}")))?),
                        _ => {}
                    }
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if !header {
                if line != HEADER {
                    return Err(bad(ln, format!("expected header {HEADER:?}")));
                }
                header = true;
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(bad(ln, format!("expected 4 fields, found {}", f.len())));
            }
            rows.push(ManifestRow {
                id: f[0].to_string(),
                image: PathBuf::from(f[1]),
                mask: (!f[2].is_empty()).then(|| PathBuf::from(f[2])),
                split: f[3].parse().map_err(|e| bad(ln, e))?,
            });
        }
        if !header {
            return Err(bad(0, "missing header".into()));
        }
        Ok(DatasetManifest {
            seed: seed.unwrap_or(0),
            train_ratio: ratio.unwrap_or(0.8),
            rows,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| DataError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::parse_tsv(&text, path)
    }

    /// Fails on the first row whose image or mask file is missing.
    pub fn check_paths(&self) -> Result<()> {
        for r in &self.rows {
            for p in std::iter::once(&r.image).chain(r.mask.as_ref()) {
                if !p.is_file() {
                    return Err(DataError::invalid(p, format!("listed for {:?} but not found", r.id)));
                }
            }
        }
        Ok(())
    }
}
