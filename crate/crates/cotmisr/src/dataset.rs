//! PROBA-V style directory layout:
//! `<root>/<band>/imgsetNNNN/{LR000.png.., QM000.png.., HR.png, SM.png}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cotmisr_core::scene::{Band, BandSelection, LrStack};

use crate::error::{Error, Result};
use crate::png;

/// `"LR007.png"` -> `Some(("LR", 7))`.
fn indexed(name: &str) -> Option<(&str, usize)> {
    let stem = name.strip_suffix(".png")?;
    let (prefix, digits) = stem.split_at(2.min(stem.len()));
    if !matches!(prefix, "LR" | "QM") || digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((prefix, digits.parse().ok()?))
}

/// Loads one scene directory. The band is taken from the parent directory
/// name and the scene id is `<band>/<directory name>`.
pub fn load_scene(dir: &Path) -> Result<LrStack> {
    let name = dir.file_name().and_then(|n| n.to_str()).ok_or_else(|| Error::data(dir, "scene path has no name"))?;
    let band_name = dir
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::data(dir, "scene directory has no band parent"))?;
    let band: Band = band_name.parse().map_err(|_| Error::data(dir, format!("parent {band_name:?} is not a band")))?;

    let entries = fs::read_dir(dir).map_err(|e| Error::data(dir, format!("cannot list scene: {e}")))?;
    let mut pairs: BTreeMap<usize, (Option<PathBuf>, Option<PathBuf>)> = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::data(dir, e.to_string()))?;
        let file = entry.file_name();
        let Some((kind, idx)) = file.to_str().and_then(indexed) else { continue };
        let slot = pairs.entry(idx).or_default();
        let target = if kind == "LR" { &mut slot.0 } else { &mut slot.1 };
        *target = Some(entry.path());
    }
    if pairs.is_empty() {
        return Err(Error::data(dir, "no LR frames"));
    }
    let (mut frames, mut masks) = (Vec::new(), Vec::new());
    for (idx, (lr, qm)) in pairs {
        match (lr, qm) {
            (Some(lr), Some(qm)) => {
                frames.push(png::read_image(&lr)?);
                masks.push(png::read_mask(&qm)?);
            }
            (Some(_), None) => return Err(Error::data(dir, format!("LR{idx:03}.png has no QM{idx:03}.png"))),
            (None, _) => return Err(Error::data(dir, format!("QM{idx:03}.png has no LR{idx:03}.png"))),
        }
    }
    let (hr_path, sm_path) = (dir.join("HR.png"), dir.join("SM.png"));
    let hr = match (hr_path.exists(), sm_path.exists()) {
        (true, true) => Some((png::read_image(&hr_path)?, png::read_mask(&sm_path)?)),
        (false, false) => None,
        (true, false) => return Err(Error::data(dir, "HR.png without SM.png")),
        (false, true) => return Err(Error::data(dir, "SM.png without HR.png")),
    };
    LrStack::new(format!("{band}/{name}"), band, frames, masks, hr).map_err(|e| Error::data(dir, e.to_string()))
}

/// Directory of a scene id below `root`.
pub fn scene_dir(root: &Path, scene_id: &str) -> PathBuf {
    scene_id.split('/').fold(root.to_path_buf(), |p, part| p.join(part))
}

/// Writes a stack in the on-disk layout; intensities are quantised to 16 bit.
pub fn write_scene(root: &Path, stack: &LrStack) -> Result<PathBuf> {
    let dir = scene_dir(root, stack.scene_id());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (i, (f, m)) in stack.frames().iter().zip(stack.masks()).enumerate() {
        png::write_image(&dir.join(format!("LR{i:03}.png")), f)?;
        png::write_mask(&dir.join(format!("QM{i:03}.png")), m)?;
    }
    if let (Some(hr), Some(sm)) = (stack.hr(), stack.hr_mask()) {
        png::write_image(&dir.join("HR.png"), hr)?;
        png::write_mask(&dir.join("SM.png"), sm)?;
    }
    Ok(dir)
}

/// Scene directories of the selected bands, sorted by band then name.
pub fn list_scenes(root: &Path, bands: BandSelection) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(Error::data(root, "data root is not a directory"));
    }
    let mut out = Vec::new();
    for band in bands.bands() {
        let band_dir = root.join(band.name());
        if !band_dir.is_dir() {
            continue;
        }
        let mut dirs: Vec<PathBuf> = fs::read_dir(&band_dir)
            .map_err(|e| Error::data(&band_dir, e.to_string()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        out.extend(dirs);
    }
    if out.is_empty() {
        return Err(Error::data(root, format!("no scenes for band selection {bands}")));
    }
    Ok(out)
}

pub fn load_dataset(root: &Path, bands: BandSelection) -> Result<Vec<LrStack>> {
    list_scenes(root, bands)?.iter().map(|d| load_scene(d)).collect()
}
