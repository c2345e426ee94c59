//! Labeled datasets: the seeded synthetic benchmark and MVTec-AD style
//! directory trees (`train/good`, `test/<defect>`, `ground_truth/<defect>`).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::{Image, Mask};
use super::pnm::{load_image, save_image};
use super::synth::{generate_texture_shifted, inject_defect, random_defect, DefectKind, TextureKind};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    pub fn name(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomalous => "anomalous",
        }
    }

    pub fn is_anomalous(self) -> bool {
        self == Label::Anomalous
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub id: String,
    pub image: Image,
    pub label: Label,
    pub mask: Option<Mask>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledDataset {
    pub items: Vec<Item>,
}

impl LabeledDataset {
    pub fn push(&mut self, item: Item) -> Result<()> {
        if let Some(m) = &item.mask {
            if m.height != item.image.height() || m.width != item.image.width() {
                return Err(Error::param(format!(
                    "mask of `{}` is {}x{}, image is {}x{}",
                    item.id,
                    m.width,
                    m.height,
                    item.image.width(),
                    item.image.height()
                )));
            }
        }
        self.items.push(item);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn images(&self) -> Vec<Image> {
        self.items.iter().map(|it| it.image.clone()).collect()
    }
}

/// One inspection category: normal training images plus a labeled test split.
#[derive(Debug, Clone, PartialEq)]
pub struct Category {
    pub name: String,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub textures: Vec<TextureKind>,
    pub image_size: usize,
    pub period: usize,
    pub noise: f64,
    pub train_per_category: usize,
    pub test_normal_per_category: usize,
    pub test_defect_per_category: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            textures: vec![TextureKind::SineGrid, TextureKind::Checker],
            image_size: 64,
            period: 8,
            noise: 0.03,
            train_per_category: 20,
            test_normal_per_category: 20,
            test_defect_per_category: 20,
        }
    }
}

fn synthetic_normal(spec: &SyntheticSpec, kind: TextureKind, seed: u64) -> Result<Image> {
    let mut rng = seed::rng(seed);
    let shift = (rng.gen_range(0..spec.period), rng.gen_range(0..spec.period));
    generate_texture_shifted(kind, spec.image_size, spec.period, spec.noise, rng.gen(), shift)
}

/// Builds the seeded synthetic benchmark, one category per texture kind.
/// Defective test images cycle through hole, scratch and blob.
pub fn synthetic_benchmark(spec: &SyntheticSpec, seed: u64) -> Result<Vec<Category>> {
    if spec.textures.is_empty() {
        return Err(Error::param("synthetic benchmark needs at least one texture"));
    }
    let mut out = Vec::with_capacity(spec.textures.len());
    for &kind in &spec.textures {
        let cat_seed = seed::derive(seed, kind.name());
        let mut train = LabeledDataset::default();
        for i in 0..spec.train_per_category {
            let image = synthetic_normal(spec, kind, seed::derive_indexed(cat_seed, "train", i as u64))?;
            train.push(Item {
                id: format!("train/good/{i:03}"),
                image,
                label: Label::Normal,
                mask: None,
            })?;
        }
        let mut test = LabeledDataset::default();
        for i in 0..spec.test_normal_per_category {
            let image = synthetic_normal(spec, kind, seed::derive_indexed(cat_seed, "test-good", i as u64))?;
            test.push(Item {
                id: format!("test/good/{i:03}"),
                image,
                label: Label::Normal,
                mask: None,
            })?;
        }
        for i in 0..spec.test_defect_per_category {
            let s = seed::derive_indexed(cat_seed, "test-defect", i as u64);
            let base = synthetic_normal(spec, kind, s)?;
            let defect = DefectKind::ALL[i % DefectKind::ALL.len()];
            let mut rng = seed::rng(seed::derive(s, "defect"));
            let dspec = random_defect(defect, base.height(), base.width(), &mut rng);
            let (image, mask) = inject_defect(&base, &dspec, rng.gen())?;
            test.push(Item {
                id: format!("test/{}/{i:03}", defect.name()),
                image,
                label: Label::Anomalous,
                mask: Some(mask),
            })?;
        }
        out.push(Category {
            name: kind.name().to_string(),
            train,
            test,
        });
    }
    Ok(out)
}

fn is_pnm(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("pgm" | "ppm" | "pnm")
    )
}

fn sorted_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() {
            if is_pnm(&p) {
                files.push(p);
            } else {
                log::warn!("skipping unsupported image file {}", p.display());
            }
        }
    }
    files.sort();
    Ok(files)
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            dirs.push(p);
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn find_mask(root: &Path, defect: &str, stem: &str) -> Option<PathBuf> {
    ["pgm", "ppm", "pnm"]
        .iter()
        .map(|ext| root.join("ground_truth").join(defect).join(format!("{stem}_mask.{ext}")))
        .find(|p| p.is_file())
}

/// Reads an MVTec-style category directory. Labels come from directory
/// names: `good` is normal, anything else under `test/` is anomalous.
pub fn load_mvtec_category(root: impl AsRef<Path>) -> Result<Category> {
    let root = root.as_ref();
    let name = root
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("category")
        .to_string();
    let mut train = LabeledDataset::default();
    for p in sorted_images(&root.join("train").join("good"))? {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        train.push(Item {
            id: format!("train/good/{stem}"),
            image: load_image(&p)?,
            label: Label::Normal,
            mask: None,
        })?;
    }
    let mut test = LabeledDataset::default();
    for dir in sorted_subdirs(&root.join("test"))? {
        let defect = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let label = if defect == "good" {
            Label::Normal
        } else {
            Label::Anomalous
        };
        for p in sorted_images(&dir)? {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let image = load_image(&p)?;
            let mask = match label {
                Label::Anomalous => find_mask(root, &defect, &stem)
                    .map(|mp| load_image(mp).map(|m| Mask::from_image(&m)))
                    .transpose()?,
                Label::Normal => None,
            };
            test.push(Item {
                id: format!("test/{defect}/{stem}"),
                image,
                label,
                mask,
            })?;
        }
    }
    if train.is_empty() {
        return Err(Error::param(format!(
            "no PGM/PPM training images under {}",
            root.join("train/good").display()
        )));
    }
    Ok(Category { name, train, test })
}

/// Writes a category in MVTec layout under `root/<name>` and returns the
/// manifest CSV text (`path,label,mask-path`, paths relative to `root`).
pub fn write_mvtec_category(cat: &Category, root: impl AsRef<Path>) -> Result<String> {
    let root = root.as_ref();
    let mut manifest = String::from("path,label,mask-path\n");
    for item in cat.train.items.iter().chain(&cat.test.items) {
        let rel = PathBuf::from(&cat.name).join(format!("{}.{}", item.id, ext(&item.image)));
        let abs = root.join(&rel);
        create_parent(&abs)?;
        save_image(&item.image, &abs)?;
        let mut mask_rel = String::new();
        if let Some(mask) = &item.mask {
            let mut parts = item.id.splitn(3, '/');
            let (_, defect, stem) = (parts.next(), parts.next().unwrap_or(""), parts.next().unwrap_or(""));
            let mrel = PathBuf::from(&cat.name)
                .join("ground_truth")
                .join(defect)
                .join(format!("{stem}_mask.pgm"));
            let mabs = root.join(&mrel);
            create_parent(&mabs)?;
            save_image(&mask.to_image(), &mabs)?;
            mask_rel = mrel.display().to_string();
        }
        let _ = writeln!(manifest, "{},{},{}", rel.display(), item.label.name(), mask_rel);
    }
    Ok(manifest)
}

fn ext(img: &Image) -> &'static str {
    if img.channels() == 1 {
        "pgm"
    } else {
        "ppm"
    }
}

fn create_parent(p: &Path) -> Result<()> {
    if let Some(parent) = p.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}
