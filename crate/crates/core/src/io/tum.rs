//! TUM RGB-D trajectory text format: `timestamp tx ty tz qx qy qz qw`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Quaternion, Vector3};

use crate::error::{Error, Result};
use crate::geometry::Se3Pose;
use crate::trajectory::Trajectory;

const RENORM_WARN: f64 = 1e-6;
const RENORM_MAX: f64 = 1e-3;

pub fn parse_tum(text: &str, path: &Path) -> Result<Trajectory> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut stamps = Vec::new();
    let mut poses = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(err(line_no, format!("expected 8 fields, found {}", fields.len())));
        }
        let mut v = [0.0f64; 8];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f
                .parse()
                .map_err(|_| err(line_no, format!("cannot parse '{f}' as a number")))?;
            if !slot.is_finite() {
                return Err(err(line_no, format!("non-finite value '{f}'")));
            }
        }
        let q = Quaternion::new(v[7], v[4], v[5], v[6]);
        let dev = (q.norm() - 1.0).abs();
        if dev > RENORM_MAX {
            return Err(err(line_no, format!("quaternion norm {} is not unit", q.norm())));
        }
        if dev > RENORM_WARN {
            log::warn!("{}:{line_no}: renormalizing quaternion with norm {}", path.display(), q.norm());
        }
        let pose = Se3Pose::new(q, Vector3::new(v[1], v[2], v[3])).map_err(|e| err(line_no, e.to_string()))?;
        stamps.push(v[0]);
        poses.push(pose);
    }
    if stamps.is_empty() {
        return Err(err(0, "no poses".into()));
    }
    Trajectory::new(stamps, poses).map_err(|e| err(0, e.to_string()))
}

pub fn read_tum(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tum(&text, path)
}

/// Formats a trajectory; values use the shortest representation that parses
/// back to the same `f64`.
pub fn format_tum(traj: &Trajectory) -> String {
    let mut s = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for (t, p) in traj.iter() {
        let tr = p.translation();
        let [w, x, y, z] = p.quaternion_wxyz();
        let _ = writeln!(s, "{t} {} {} {} {x} {y} {z} {w}", tr.x, tr.y, tr.z);
    }
    s
}

pub fn write_tum(path: impl AsRef<Path>, traj: &Trajectory) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_tum(traj)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("traj.txt")
    }

    #[test]
    fn identity_line() {
        let t = parse_tum("0.0 0 0 0 0 0 0 1\n", p()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.stamps()[0], 0.0);
        assert_eq!(t.poses()[0], Se3Pose::identity());
    }

    #[test]
    fn comments_and_blank_lines() {
        let t = parse_tum("# header\n\n1.0 1 2 3 0 0 0 1\n  \n2.0 0 0 0 0 0 1 0\n", p()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(*t.poses()[0].translation(), Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn wrong_arity_names_line() {
        let e = parse_tum("# c\n0 0 0 0 0 0 1\n", p()).unwrap_err();
        match e {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn quaternion_norm_policy() {
        assert!(parse_tum("0 0 0 0 0 0 0 1.01\n", p()).is_err());
        let t = parse_tum("0 0 0 0 0 0 0 1.0005\n", p()).unwrap();
        assert!((t.poses()[0].quaternion_wxyz()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn xyzw_order_on_disk() {
        let q = nalgebra::UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 0.3);
        let traj = Trajectory::new(vec![5.5], vec![Se3Pose::from_rotation(q)]).unwrap();
        let text = format_tum(&traj);
        let fields: Vec<f64> = text.lines().nth(1).unwrap().split(' ').map(|f| f.parse().unwrap()).collect();
        assert!((fields[4] - (0.15f64).sin()).abs() < 1e-15);
        assert!((fields[7] - (0.15f64).cos()).abs() < 1e-15);
    }
}
