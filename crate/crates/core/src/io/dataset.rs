//! Dataset directory layout:
//!
//! ```text
//! rgb/000000.npy        H×W×3 float32 in [0, 1]
//! depth/000000.npy      H×W float32
//! mask/000000.npy       H×W float32 static confidence in [0, 1]
//! feat/000000.npy       H×W×C float32 (optional)
//! pointcloud/000000.npy N×(3+k) (optional)
//! intrinsics.json       {fx, fy, cx, cy, width, height}
//! timestamps.txt        one real per line
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::npy::{read_map, read_npy_header, write_map, Dtype};
use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::map::PlanarMap;

const FRAME_DIRS: [&str; 3] = ["rgb", "depth", "mask"];

fn frame_file(root: &Path, dir: &str, i: usize) -> PathBuf {
    root.join(dir).join(format!("{i:06}.npy"))
}

/// A validated dataset on disk. Frames are loaded on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    intrinsics: CameraIntrinsics,
    stamps: Vec<f64>,
    feat_channels: Option<usize>,
    has_pointclouds: bool,
}

impl Dataset {
    /// Opens `root` and checks every frame's tensor header against the
    /// intrinsics before any pixel data is read.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let kpath = root.join("intrinsics.json");
        let text = fs::read_to_string(&kpath).map_err(|e| Error::io(&kpath, e))?;
        let intrinsics: CameraIntrinsics = serde_json::from_str(&text)
            .map_err(|e| Error::Dataset(format!("{}: {e}", kpath.display())))?;
        intrinsics.validate()?;
        let stamps = read_timestamps(&root.join("timestamps.txt"))?;
        let n = stamps.len();
        let (h, w) = (intrinsics.height, intrinsics.width);

        for dir in FRAME_DIRS {
            if !root.join(dir).is_dir() {
                return Err(Error::Dataset(format!("missing directory {}", root.join(dir).display())));
            }
        }
        let feat_dir = root.join("feat");
        let has_feat = feat_dir.is_dir();
        let mut feat_channels = None;
        for i in 0..n {
            let check = |dir: &str, channels: Option<usize>| -> Result<usize> {
                let path = frame_file(&root, dir, i);
                if !path.is_file() {
                    return Err(Error::Dataset(format!("missing frame file {}", path.display())));
                }
                let hdr = read_npy_header(&path)?;
                let s = &hdr.shape;
                let c = match s.len() {
                    2 => 1,
                    3 => s[2],
                    _ => 0,
                };
                if s.len() < 2 || s[0] != h || s[1] != w || c == 0 || channels.is_some_and(|want| want != c) {
                    return Err(Error::Dataset(format!(
                        "{} has shape {:?}, expected {h}x{w}{}",
                        path.display(),
                        s,
                        channels.map_or(String::new(), |c| format!("x{c}"))
                    )));
                }
                Ok(c)
            };
            check("rgb", Some(3))?;
            check("depth", Some(1))?;
            check("mask", Some(1))?;
            if has_feat {
                feat_channels = Some(check("feat", feat_channels)?);
            }
        }
        for dir in FRAME_DIRS {
            let extra = count_npy(&root.join(dir))?;
            if extra != n {
                return Err(Error::Dataset(format!(
                    "{dir}/ holds {extra} frames but timestamps.txt lists {n}"
                )));
            }
        }
        let has_pointclouds = root.join("pointcloud").is_dir();
        Ok(Self {
            root,
            intrinsics,
            stamps,
            feat_channels,
            has_pointclouds,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.stamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stamps.is_empty()
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.stamps
    }

    /// Raw feature channel count, if `feat/` is present.
    pub fn feature_channels(&self) -> Option<usize> {
        self.feat_channels
    }

    /// Errors naming the missing `feat/` directory when there are no features.
    pub fn require_features(&self) -> Result<usize> {
        self.feat_channels.ok_or_else(|| {
            Error::Dataset(format!(
                "feature loss requested but directory {} is missing",
                self.root.join("feat").display()
            ))
        })
    }

    fn frame(&self, dir: &str, i: usize) -> Result<PlanarMap> {
        if i >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "frame {i} out of range for {} frames",
                self.len()
            )));
        }
        read_map(frame_file(&self.root, dir, i))
    }

    pub fn rgb(&self, i: usize) -> Result<PlanarMap> {
        self.frame("rgb", i)
    }

    pub fn depth(&self, i: usize) -> Result<PlanarMap> {
        self.frame("depth", i)
    }

    pub fn mask(&self, i: usize) -> Result<PlanarMap> {
        self.frame("mask", i)
    }

    pub fn features(&self, i: usize) -> Result<PlanarMap> {
        self.require_features()?;
        self.frame("feat", i)
    }

    /// Path of the external point cloud for frame `i`.
    pub fn pointcloud_path(&self, i: usize) -> Result<PathBuf> {
        let path = frame_file(&self.root, "pointcloud", i);
        if !self.has_pointclouds || !path.is_file() {
            return Err(Error::Dataset(format!("missing point cloud {}", path.display())));
        }
        Ok(path)
    }
}

fn count_npy(dir: &Path) -> Result<usize> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut n = 0;
    for e in entries {
        let e = e.map_err(|e| Error::io(dir, e))?;
        if e.path().extension().is_some_and(|x| x == "npy") {
            n += 1;
        }
    }
    Ok(n)
}

fn read_timestamps(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<f64> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let t: f64 = line.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("not a number: {line:?}"),
        })?;
        if !t.is_finite() || out.last().is_some_and(|&p| t <= p) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "timestamps must be finite and strictly increasing".into(),
            });
        }
        out.push(t);
    }
    if out.is_empty() {
        return Err(Error::Dataset(format!("{} lists no frames", path.display())));
    }
    Ok(out)
}

/// Writes a dataset frame by frame.
#[derive(Debug)]
pub struct DatasetWriter {
    root: PathBuf,
    intrinsics: CameraIntrinsics,
}

impl DatasetWriter {
    /// Creates the directory tree, `intrinsics.json` and `timestamps.txt`.
    pub fn create(root: impl AsRef<Path>, intrinsics: &CameraIntrinsics, stamps: &[f64], features: bool) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        intrinsics.validate()?;
        let mut dirs = FRAME_DIRS.to_vec();
        if features {
            dirs.push("feat");
        }
        for d in dirs {
            let p = root.join(d);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let kpath = root.join("intrinsics.json");
        let json = serde_json::to_string_pretty(intrinsics)?;
        fs::write(&kpath, json + "\n").map_err(|e| Error::io(&kpath, e))?;
        let tpath = root.join("timestamps.txt");
        let text: String = stamps.iter().map(|t| format!("{t}\n")).collect();
        fs::write(&tpath, text).map_err(|e| Error::io(&tpath, e))?;
        Ok(Self {
            root,
            intrinsics: intrinsics.clone(),
        })
    }

    pub fn write_frame(
        &self,
        i: usize,
        rgb: &PlanarMap,
        depth: &PlanarMap,
        mask: &PlanarMap,
        feat: Option<&PlanarMap>,
    ) -> Result<()> {
        let k = &self.intrinsics;
        let maps = [("rgb", Some(rgb)), ("depth", Some(depth)), ("mask", Some(mask)), ("feat", feat)];
        for (dir, map) in maps {
            let Some(map) = map else { continue };
            if map.width() != k.width || map.height() != k.height {
                return Err(Error::ShapeMismatch(format!("{dir} frame {i} does not match the intrinsics")));
            }
            write_map(frame_file(&self.root, dir, i), map, Dtype::F32)?;
        }
        Ok(())
    }
}
