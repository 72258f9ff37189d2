//! File formats and on-disk layout.
//!
//! A clip directory holds the four views (`l1`, `r1`, `l2`, `r2` as `.pfm`,
//! or 8-bit `.png` scaled to `[0, 1]`) and optionally `flow_bwd.flo`.
//! A state directory holds `d1.pfm`, `d2.pfm`, `dchange.pfm` and `flow.flo`.
//! Synthetic samples store both in one directory together with
//! `occlusion.png` and `valid.png`. Datasets are directories of such
//! directories, visited in name order.

mod config;
mod flo;
mod pfm;
mod png;

pub use self::config::{load_config, parse_config, RunConfig};
pub use self::flo::{read_flo, write_flo};
pub use self::pfm::{read_pfm, read_pfm_any, write_pfm};
pub use self::png::{
    read_image_png, read_kitti_disp_png, read_kitti_flow_png, read_mask_png, write_image_png, write_kitti_disp_png,
    write_kitti_flow_png, write_mask_png,
};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fields::{ImageField, Mask, SceneFlowState, StereoClip};
use crate::synth::SyntheticSample;

pub const VIEWS: [&str; 4] = ["l1", "r1", "l2", "r2"];
pub const BACKWARD_FLOW: &str = "flow_bwd.flo";
pub const VALID_MASK: &str = "valid.png";
pub const OCCLUSION_MASK: &str = "occlusion.png";

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn read_view(dir: &Path, name: &str) -> Result<ImageField> {
    let pfm = dir.join(format!("{name}.pfm"));
    if pfm.exists() {
        return read_pfm_any(&pfm);
    }
    let png = dir.join(format!("{name}.png"));
    if png.exists() {
        return read_image_png(&png);
    }
    Err(Error::format(dir, format!("no {name}.pfm or {name}.png")))
}

/// Loads the four views and, when present, the backward flow.
pub fn read_clip_dir(dir: impl AsRef<Path>) -> Result<StereoClip> {
    let dir = dir.as_ref();
    let [l1, r1, l2, r2] = VIEWS.map(|v| read_view(dir, v));
    let clip = StereoClip::new(l1?, r1?, l2?, r2?)?;
    let bwd = dir.join(BACKWARD_FLOW);
    if bwd.exists() {
        clip.with_backward_flow(read_flo(&bwd)?)
    } else {
        Ok(clip)
    }
}

/// Loads four explicit image paths (`.pfm` or `.png`).
pub fn read_clip_files(paths: &[PathBuf]) -> Result<StereoClip> {
    if paths.len() != 4 {
        return Err(Error::InvalidArgument(format!("a clip needs 4 images (l1 r1 l2 r2), got {}", paths.len())));
    }
    let load = |p: &PathBuf| match p.extension().and_then(|e| e.to_str()) {
        Some("pfm") => read_pfm_any(p),
        Some("png") => read_image_png(p),
        _ => Err(Error::format(p, "images must be .pfm or .png")),
    };
    StereoClip::new(load(&paths[0])?, load(&paths[1])?, load(&paths[2])?, load(&paths[3])?)
}

pub fn write_clip_dir(dir: impl AsRef<Path>, clip: &StereoClip) -> Result<()> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    for (name, img) in VIEWS.iter().zip([&clip.l1, &clip.r1, &clip.l2, &clip.r2]) {
        write_pfm(dir.join(format!("{name}.pfm")), img)?;
    }
    if let Some(bwd) = &clip.backward_flow {
        write_flo(dir.join(BACKWARD_FLOW), bwd)?;
    }
    Ok(())
}

pub fn read_state_dir(dir: impl AsRef<Path>) -> Result<SceneFlowState> {
    let dir = dir.as_ref();
    SceneFlowState::new(
        read_pfm(dir.join("d1.pfm"))?,
        read_pfm(dir.join("d2.pfm"))?,
        read_flo(dir.join("flow.flo"))?,
        read_pfm(dir.join("dchange.pfm"))?,
    )
}

pub fn write_state_dir(dir: impl AsRef<Path>, state: &SceneFlowState) -> Result<()> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    write_pfm(dir.join("d1.pfm"), &state.d1)?;
    write_pfm(dir.join("d2.pfm"), &state.d2)?;
    write_pfm(dir.join("dchange.pfm"), &state.dchange)?;
    write_flo(dir.join("flow.flo"), &state.flow)
}

/// Clip, ground truth and masks of a synthetic sample in one directory.
pub fn write_sample_dir(dir: impl AsRef<Path>, sample: &SyntheticSample) -> Result<()> {
    let dir = dir.as_ref();
    write_clip_dir(dir, &sample.clip)?;
    write_state_dir(dir, &sample.gt)?;
    write_mask_png(dir.join(OCCLUSION_MASK), &sample.occlusion)?;
    write_mask_png(dir.join(VALID_MASK), &sample.valid)
}

/// `valid.png` if present, otherwise every pixel.
pub fn read_valid_mask(dir: impl AsRef<Path>, extent: (usize, usize)) -> Result<Mask> {
    let path = dir.as_ref().join(VALID_MASK);
    if !path.exists() {
        return Ok(Mask::filled(extent.0, extent.1, true));
    }
    let m = read_mask_png(&path)?;
    if m.extent() != extent {
        return Err(Error::ExtentMismatch {
            expected: extent,
            got: m.extent(),
        });
    }
    Ok(m)
}

/// `root` itself if it contains `marker`, otherwise its subdirectories that
/// do, sorted by name.
pub fn clip_dirs(root: impl AsRef<Path>, marker: &str) -> Result<Vec<PathBuf>> {
    let root = root.as_ref();
    if root.join(marker).exists() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join(marker).exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::format(root, format!("no clip directories containing {marker}")));
    }
    Ok(dirs)
}
