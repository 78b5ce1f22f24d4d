//! On-disk sequence layout:
//!
//! ```text
//! DIR/images/000000.png ...   grayscale frames, 8 or 16 bit
//! DIR/calib.txt               fx fy cx cy [baseline_m]
//! DIR/poses.txt               optional, 12 floats per line, camera-to-world
//! DIR/depth/000000.png ...    optional, 16-bit millimeters, 0 = invalid
//! DIR/right/000000.png ...    optional rectified right frames
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{stereo_block_match, CameraIntrinsics, Pose};
use crate::image::Image;
use crate::io::{load_depth_png, load_image, save_depth_png, save_png16};
use crate::synth::SyntheticScene;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StereoParams {
    pub block: usize,
    pub max_disparity: usize,
}

impl Default for StereoParams {
    fn default() -> Self {
        Self { block: 7, max_disparity: 64 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DepthSource {
    File,
    Stereo,
    None,
}

#[derive(Clone, Debug)]
pub struct SequenceDataset {
    pub root: PathBuf,
    pub images: Vec<PathBuf>,
    pub intrinsics: CameraIntrinsics,
    pub baseline: Option<f64>,
    pub poses: Option<Vec<Pose>>,
    pub depths: Option<Vec<PathBuf>>,
    pub rights: Option<Vec<PathBuf>>,
}

fn frame_name(i: usize) -> String {
    format!("{i:06}.png")
}

fn list_pngs(dir: &Path) -> Result<Option<Vec<PathBuf>>> {
    if !dir.is_dir() {
        return Ok(None);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(Some(files))
}

fn parse_floats(text: &str, path: &Path, line: usize) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::format(path, format!("line {line}: '{t}' is not a number")))
        })
        .collect()
}

/// `fx fy cx cy [baseline]` on the first non-empty line.
pub fn parse_calib(text: &str, path: &Path) -> Result<(CameraIntrinsics, Option<f64>)> {
    let (n, line) = text
        .lines()
        .enumerate()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or_else(|| Error::format(path, "empty calibration"))?;
    let v = parse_floats(line, path, n + 1)?;
    if v.len() != 4 && v.len() != 5 {
        return Err(Error::format(path, format!("expected 4 or 5 values, found {}", v.len())));
    }
    let k = CameraIntrinsics::new(v[0], v[1], v[2], v[3]).map_err(|e| Error::format(path, e.to_string()))?;
    let baseline = v.get(4).copied();
    if baseline.is_some_and(|b| !(b > 0.0 && b.is_finite())) {
        return Err(Error::format(path, "baseline must be positive"));
    }
    Ok((k, baseline))
}

/// One camera-to-world pose per non-empty line, 12 row-major floats.
pub fn parse_poses(text: &str, path: &Path) -> Result<Vec<Pose>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let v = parse_floats(l, path, n + 1)?;
            if v.len() != 12 {
                return Err(Error::format(path, format!("line {}: expected 12 values, found {}", n + 1, v.len())));
            }
            Pose::from_row_major_3x4(&v).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))
        })
        .collect()
}

pub fn format_poses(poses: &[Pose]) -> String {
    poses
        .iter()
        .map(|p| p.to_row_major_3x4().iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ") + "\n")
        .collect()
}

impl SequenceDataset {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let root = dir.as_ref().to_path_buf();
        let images = list_pngs(&root.join("images"))?
            .ok_or_else(|| Error::Insufficient(format!("{} has no images/ directory", root.display())))?;
        if images.is_empty() {
            return Err(Error::Insufficient(format!("{}/images is empty", root.display())));
        }
        let calib_path = root.join("calib.txt");
        let calib = fs::read_to_string(&calib_path).map_err(|e| Error::io(&calib_path, e))?;
        let (intrinsics, baseline) = parse_calib(&calib, &calib_path)?;
        let poses_path = root.join("poses.txt");
        let poses = if poses_path.is_file() {
            let text = fs::read_to_string(&poses_path).map_err(|e| Error::io(&poses_path, e))?;
            Some(parse_poses(&text, &poses_path)?)
        } else {
            None
        };
        let depths = list_pngs(&root.join("depth"))?;
        let rights = list_pngs(&root.join("right"))?;
        let n = images.len();
        for (name, len) in [
            ("poses.txt", poses.as_ref().map(Vec::len)),
            ("depth/", depths.as_ref().map(Vec::len)),
            ("right/", rights.as_ref().map(Vec::len)),
        ] {
            if let Some(len) = len.filter(|&l| l != n) {
                return Err(Error::Insufficient(format!("{name} has {len} entries for {n} images")));
            }
        }
        if rights.is_some() && baseline.is_none() {
            return Err(Error::format(&calib_path, "right/ frames need a baseline in calib.txt"));
        }
        Ok(Self { root, images, intrinsics, baseline, poses, depths, rights })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, i: usize) -> Result<Image<f32>> {
        load_image(&self.images[i])
    }

    pub fn images(&self) -> Result<Vec<Image<f32>>> {
        (0..self.len()).map(|i| self.image(i)).collect()
    }

    pub fn depth_source(&self) -> DepthSource {
        if self.depths.is_some() {
            DepthSource::File
        } else if self.rights.is_some() {
            DepthSource::Stereo
        } else {
            DepthSource::None
        }
    }

    /// Depth of frame `i` from file, else from stereo, else `None`.
    pub fn depth(&self, i: usize, stereo: &StereoParams) -> Result<Option<Image<f64>>> {
        match self.depth_source() {
            DepthSource::File => {
                let d = load_depth_png(&self.depths.as_ref().expect("file source")[i])?;
                let dims = self.image(i)?.dims();
                if d.dims() != dims {
                    return Err(Error::Dimension { expected: dims, found: d.dims() });
                }
                Ok(Some(d))
            }
            DepthSource::Stereo => {
                let left: Image<f64> = load_image(&self.images[i])?;
                let right: Image<f64> = load_image(&self.rights.as_ref().expect("stereo source")[i])?;
                let b = self.baseline.expect("validated at load");
                Ok(Some(stereo_block_match(&left, &right, b, &self.intrinsics, stereo.block, stereo.max_disparity)?))
            }
            DepthSource::None => Ok(None),
        }
    }

    /// P3P labeling and evaluation need depth; evaluation also needs poses.
    pub fn supports_p3p(&self) -> bool {
        self.depth_source() != DepthSource::None
    }

    pub fn supports_evaluation(&self) -> bool {
        self.supports_p3p() && self.poses.is_some()
    }

    pub fn summary(&self) -> String {
        format!(
            "{} frames, poses: {}, depth: {:?}",
            self.len(),
            self.poses.as_ref().map_or("no".into(), |p| p.len().to_string()),
            self.depth_source()
        )
    }
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<SequenceDataset> {
    SequenceDataset::load(dir)
}

/// Writes a synthetic scene in the on-disk layout. Images are 16-bit, depth
/// is rounded to millimeters.
pub fn write_dataset(scene: &SyntheticScene, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    for sub in ["images", "depth"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for (i, (img, depth)) in scene.images.iter().zip(&scene.depths).enumerate() {
        save_png16(img, dir.join("images").join(frame_name(i)))?;
        save_depth_png(depth, dir.join("depth").join(frame_name(i)))?;
    }
    let k = scene.spec.intrinsics;
    let calib = dir.join("calib.txt");
    fs::write(&calib, format!("{} {} {} {}\n", k.fx, k.fy, k.cx, k.cy)).map_err(|e| Error::io(&calib, e))?;
    let poses = dir.join("poses.txt");
    fs::write(&poses, format_poses(&scene.poses)).map_err(|e| Error::io(&poses, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{render_synthetic, SceneSpec, TrajectorySpec};

    fn scene() -> SyntheticScene {
        render_synthetic(&SceneSpec {
            n_points: 200,
            width: 48,
            height: 40,
            intrinsics: CameraIntrinsics { fx: 50.0, fy: 50.0, cx: 23.5, cy: 19.5 },
            trajectory: TrajectorySpec { frames: 3, ..TrajectorySpec::default() },
            ..SceneSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let s = scene();
        write_dataset(&s, dir.path()).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.len(), 3);
        assert!(ds.supports_evaluation());
        assert_eq!(ds.depth_source(), DepthSource::File);
        let poses = ds.poses.as_ref().unwrap();
        for (a, b) in poses.iter().zip(&s.poses) {
            let (er, et) = crate::geometry::pose_errors(a, b);
            assert!(er < 1e-9 && et < 1e-12);
        }
        let img = ds.image(1).unwrap();
        let err = img.data().iter().zip(s.images[1].data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(err <= 1.0 / 65535.0);
        let d = ds.depth(0, &StereoParams::default()).unwrap().unwrap();
        let derr = d.data().iter().zip(s.depths[0].data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(derr <= 5e-4);
    }

    #[test]
    fn minimal_dataset_is_klt_only() {
        let dir = tempfile::tempdir().unwrap();
        let s = scene();
        write_dataset(&s, dir.path()).unwrap();
        fs::remove_dir_all(dir.path().join("depth")).unwrap();
        fs::remove_file(dir.path().join("poses.txt")).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.depth_source(), DepthSource::None);
        assert!(!ds.supports_p3p());
        assert!(ds.depth(0, &StereoParams::default()).unwrap().is_none());
    }

    #[test]
    fn malformed_inputs() {
        let p = Path::new("poses.txt");
        let short = "1 0 0 0 0 1 0 0 0 0 1\n";
        assert!(matches!(parse_poses(short, p), Err(Error::Format { .. })));
        let ok = "1 0 0 0 0 1 0 0 0 0 1 0\n\n1 0 0 1 0 1 0 2 0 0 1 3\n";
        assert_eq!(parse_poses(ok, p).unwrap().len(), 2);
        assert!(parse_calib("100 100 50", p).is_err());
        assert!(parse_calib("100 100 50 x", p).is_err());
        assert_eq!(parse_calib("100 100 50 40 0.5", p).unwrap().1, Some(0.5));

        let dir = tempfile::tempdir().unwrap();
        write_dataset(&scene(), dir.path()).unwrap();
        fs::write(dir.path().join("poses.txt"), ok).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Insufficient(_))));
    }
}
