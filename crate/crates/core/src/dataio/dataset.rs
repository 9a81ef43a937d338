//! On-disk datasets: phantom sets, undersampled k-space with masks and
//! per-sample selection subsets, described by JSON manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::phantom::{phantom, Variant};
use super::rten::{self, DType};
use crate::error::{Error, Result};
use crate::kspace::{self, Mask, MaskInfo, SubsetPair};
use crate::tensor::Tensor;

pub const MANIFEST_NAME: &str = "manifest.json";
pub const PHANTOM_MANIFEST_NAME: &str = "phantoms.json";
pub const NORMALIZATION_NOTE: &str = "image intensities normalized to [0, 1] before undersampling";

/// Mixes a base seed with an index into an independent-looking stream seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fails if `path` exists and `force` is not set.
pub fn ensure_writable(path: &Path, force: bool) -> Result<()> {
    if !force && path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::AlreadyExists, "refusing to overwrite (use --force)"),
        ));
    }
    Ok(())
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T, force: bool) -> Result<()> {
    ensure_writable(path, force)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// `y = A x` for a real image embedded with zero imaginary part.
pub fn simulate_acquisition(img: &Tensor, m: &Mask) -> Result<Tensor> {
    kspace::apply_a(&img.to_complex()?, m)
}

/// JSON sidecar path for a mask stored at `path`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save_mask(path: &Path, m: &Mask, force: bool) -> Result<()> {
    ensure_writable(path, force)?;
    rten::write_tensor(path, m.pattern(), DType::F32)?;
    write_json(&sidecar_path(path), m.info(), force)
}

pub fn load_mask(path: &Path) -> Result<Mask> {
    let pattern = rten::read_tensor(path)?;
    let info: MaskInfo = read_json(&sidecar_path(path))?;
    Mask::from_pattern(pattern, info)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomEntry {
    pub id: String,
    pub path: String,
}

/// Written by `phantom-gen`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomManifest {
    pub n: usize,
    pub variant: String,
    pub seed: u64,
    pub images: Vec<PhantomEntry>,
}

/// `count` phantoms with ids `img0000…`, each seeded from `seed`.
pub fn generate_phantoms(n: usize, variant: Variant, count: usize, seed: u64) -> Result<Vec<(String, Tensor)>> {
    (0..count)
        .map(|i| {
            let s = derive_seed(seed, i as u64);
            Ok((format!("img{i:04}"), phantom(n, variant, s)?))
        })
        .collect()
}

pub fn save_phantoms(
    dir: &Path,
    n: usize,
    variant: Variant,
    seed: u64,
    images: &[(String, Tensor)],
    force: bool,
) -> Result<PathBuf> {
    create_dir(dir)?;
    let mut entries = Vec::with_capacity(images.len());
    for (id, img) in images {
        let rel = format!("{id}.rten");
        let path = dir.join(&rel);
        ensure_writable(&path, force)?;
        rten::write_tensor(&path, img, DType::F64)?;
        entries.push(PhantomEntry { id: id.clone(), path: rel });
    }
    let manifest = PhantomManifest {
        n,
        variant: variant.to_string(),
        seed,
        images: entries,
    };
    let path = dir.join(PHANTOM_MANIFEST_NAME);
    write_json(&path, &manifest, force)?;
    Ok(path)
}

/// Accepts a manifest file or a directory containing `name`.
pub fn resolve_manifest(path: &Path, name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(name)
    } else {
        path.to_path_buf()
    }
}

pub fn load_phantoms(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let path = resolve_manifest(path, PHANTOM_MANIFEST_NAME);
    let manifest: PhantomManifest = read_json(&path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    manifest
        .images
        .iter()
        .map(|e| Ok((e.id.clone(), rten::read_tensor(&base.join(&e.path))?)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    /// Ground-truth image; absent for purely undersampled data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    pub kspace: String,
    pub mask: String,
    pub subset1: String,
    pub subset2: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub height: usize,
    pub width: usize,
    pub accel: f64,
    pub acs_lines: usize,
    pub sel_acs: usize,
    pub normalization: String,
    pub samples: Vec<SampleEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Option<Tensor>,
    /// Undersampled k-space `2×H×W`, zero off the parent mask.
    pub kspace: Tensor,
    pub subsets: SubsetPair,
}

impl Sample {
    pub fn mask(&self) -> &Mask {
        &self.subsets.parent
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub accel: f64,
    pub acs_lines: usize,
    pub sel_acs: usize,
    pub samples: Vec<Sample>,
}

/// Parameters for turning images into a self-supervised dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionSpec {
    pub accel: f64,
    pub acs_lines: usize,
    pub sel_acs: usize,
    pub mask_seed: u64,
    pub subset_seed: u64,
}

impl Dataset {
    /// One shared undersampling mask; a fresh subset pair per sample.
    pub fn prepare(images: &[(String, Tensor)], spec: &AcquisitionSpec) -> Result<Self> {
        let Some((_, first)) = images.first() else {
            return Err(Error::Dataset("no images to prepare".into()));
        };
        let [h, w] = first.shape()[..] else {
            return Err(Error::shape("prepare", format!("expected HxW images, got {:?}", first.shape())));
        };
        let parent = kspace::make_undersampling_mask(h, w, spec.accel, spec.acs_lines, spec.mask_seed)?;
        Self::prepare_with_mask(images, &parent, spec.sel_acs, spec.subset_seed)
    }

    /// Like [`Dataset::prepare`] but with a given parent mask, so several
    /// splits can share one acquisition pattern.
    pub fn prepare_with_mask(images: &[(String, Tensor)], parent: &Mask, sel_acs: usize, subset_seed: u64) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Dataset("no images to prepare".into()));
        }
        let samples = images
            .iter()
            .enumerate()
            .map(|(i, (id, img))| {
                let subsets = kspace::make_selection_subsets(parent, sel_acs, derive_seed(subset_seed, i as u64))?;
                Ok(Sample {
                    id: id.clone(),
                    image: Some(img.clone()),
                    kspace: simulate_acquisition(img, parent)?,
                    subsets,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            accel: parent.info().accel,
            acs_lines: parent.acs_lines(),
            sel_acs,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.samples.first().map(|s| (s.mask().height(), s.mask().width()))
    }

    pub fn has_ground_truth(&self) -> bool {
        !self.samples.is_empty() && self.samples.iter().all(|s| s.image.is_some())
    }

    /// Writes tensors under `dir` and returns the manifest path.
    pub fn save(&self, dir: &Path, force: bool) -> Result<PathBuf> {
        let (h, w) = self.dims().ok_or_else(|| Error::Dataset("cannot save an empty dataset".into()))?;
        for sub in ["images", "kspace", "masks"] {
            create_dir(&dir.join(sub))?;
        }
        let mut entries = Vec::with_capacity(self.samples.len());
        let mut written_masks: Vec<(&Mask, String)> = Vec::new();
        for s in &self.samples {
            // samples sharing a parent mask reference one file
            let mask_rel = match written_masks.iter().find(|(m, _)| *m == s.mask()) {
                Some((_, rel)) => rel.clone(),
                None => {
                    let rel = format!("masks/parent{}.rten", written_masks.len());
                    save_mask(&dir.join(&rel), s.mask(), force)?;
                    written_masks.push((s.mask(), rel.clone()));
                    rel
                }
            };
            let image = match &s.image {
                Some(img) => {
                    let rel = format!("images/{}.rten", s.id);
                    let p = dir.join(&rel);
                    ensure_writable(&p, force)?;
                    rten::write_tensor(&p, img, DType::F64)?;
                    Some(rel)
                }
                None => None,
            };
            let kspace = format!("kspace/{}.rten", s.id);
            let p = dir.join(&kspace);
            ensure_writable(&p, force)?;
            rten::write_tensor(&p, &s.kspace, DType::F64)?;
            let subset1 = format!("masks/{}_sub1.rten", s.id);
            let subset2 = format!("masks/{}_sub2.rten", s.id);
            save_mask(&dir.join(&subset1), &s.subsets.sub1, force)?;
            save_mask(&dir.join(&subset2), &s.subsets.sub2, force)?;
            entries.push(SampleEntry {
                id: s.id.clone(),
                image,
                kspace,
                mask: mask_rel,
                subset1,
                subset2,
            });
        }
        let manifest = DatasetManifest {
            height: h,
            width: w,
            accel: self.accel,
            acs_lines: self.acs_lines,
            sel_acs: self.sel_acs,
            normalization: NORMALIZATION_NOTE.into(),
            samples: entries,
        };
        let path = dir.join(MANIFEST_NAME);
        write_json(&path, &manifest, force)?;
        Ok(path)
    }

    /// Loads and validates a dataset from a manifest file or its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let path = resolve_manifest(path, MANIFEST_NAME);
        let manifest: DatasetManifest = read_json(&path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut samples = Vec::with_capacity(manifest.samples.len());
        for e in &manifest.samples {
            let image = match &e.image {
                Some(rel) => Some(rten::read_tensor(&base.join(rel))?),
                None => None,
            };
            let kspace = rten::read_tensor(&base.join(&e.kspace))?;
            let parent = load_mask(&base.join(&e.mask))?;
            let sub1 = load_mask(&base.join(&e.subset1))?;
            let sub2 = load_mask(&base.join(&e.subset2))?;
            let dims = (manifest.height, manifest.width);
            let bad = |what: &str| Error::Dataset(format!("sample {}: {what} does not match {}x{}", e.id, dims.0, dims.1));
            if kspace.shape() != [2, dims.0, dims.1] {
                return Err(bad("k-space shape"));
            }
            if let Some(img) = &image {
                if img.shape() != [dims.0, dims.1] {
                    return Err(bad("image shape"));
                }
            }
            if (parent.height(), parent.width()) != dims {
                return Err(bad("mask shape"));
            }
            if !sub1.is_subset_of(&parent) || !sub2.is_subset_of(&parent) {
                return Err(Error::Dataset(format!("sample {}: subset mask outside the undersampling mask", e.id)));
            }
            samples.push(Sample {
                id: e.id.clone(),
                image,
                kspace,
                subsets: SubsetPair { sub1, sub2, parent },
            });
        }
        Ok(Self {
            accel: manifest.accel,
            acs_lines: manifest.acs_lines,
            sel_acs: manifest.sel_acs,
            samples,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kspace::{fft2_centered, ifft2_centered};
    use crate::dataio::metrics::psnr;

    #[test]
    fn full_mask_acquisition_is_fft() {
        let img = phantom(16, Variant::Shepp, 0).unwrap();
        let y = simulate_acquisition(&img, &Mask::full(16, 16)).unwrap();
        let expect = fft2_centered(&img.to_complex().unwrap()).unwrap();
        assert_eq!(y, expect);
        let zero = simulate_acquisition(&Tensor::zeros(&[16, 16]), &Mask::full(16, 16)).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
    }

    #[test]
    fn zero_filled_is_worse_than_full() {
        let img = phantom(32, Variant::Shepp, 0).unwrap();
        let m = kspace::make_undersampling_mask(32, 32, 4.0, 4, 2).unwrap();
        let under = ifft2_centered(&simulate_acquisition(&img, &m).unwrap()).unwrap().magnitude().unwrap();
        let full = ifft2_centered(&simulate_acquisition(&img, &Mask::full(32, 32)).unwrap())
            .unwrap()
            .magnitude()
            .unwrap();
        assert!(psnr(&img, &under, 1.0).unwrap() < psnr(&img, &full, 1.0).unwrap());
    }

    #[test]
    fn refuses_overwrite_without_force() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.rten");
        let m = Mask::full(4, 4);
        save_mask(&p, &m, false).unwrap();
        assert!(save_mask(&p, &m, false).is_err());
        save_mask(&p, &m, true).unwrap();
        assert_eq!(load_mask(&p).unwrap(), m);
    }

    #[test]
    fn dataset_round_trip() {
        let imgs = generate_phantoms(16, Variant::Blobs, 3, 1).unwrap();
        let spec = AcquisitionSpec {
            accel: 4.0,
            acs_lines: 2,
            sel_acs: 2,
            mask_seed: 1,
            subset_seed: 2,
        };
        let ds = Dataset::prepare(&imgs, &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = ds.save(dir.path(), false).unwrap();
        assert_eq!(Dataset::load(&path).unwrap(), ds);
        assert_eq!(Dataset::load(dir.path()).unwrap(), ds);
        assert!(ds.save(dir.path(), false).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        let s: std::collections::HashSet<u64> = (0..100).map(|i| derive_seed(7, i)).collect();
        assert_eq!(s.len(), 100);
    }
}
