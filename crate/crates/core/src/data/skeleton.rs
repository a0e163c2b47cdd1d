use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint hierarchy with rest-pose bone geometry.
///
/// `bone_lengths[j]` and `rest_dirs[j]` describe the bone from `j`'s parent
/// to `j`, expressed in the parent's frame; the root's entries are unused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub names: Vec<String>,
    pub parents: Vec<Option<usize>>,
    pub root_idx: usize,
    /// Millimetres.
    pub bone_lengths: Vec<f64>,
    pub rest_dirs: Vec<[f64; 3]>,
    /// Joints observed in the 2d input, in input order.
    pub input_joint_map: Vec<usize>,
}

impl Skeleton {
    /// 17-joint body in the usual Human3.6M order. The 2d input drops the
    /// neck/nose joint, leaving 16 input joints.
    ///
    /// Rest pose: standing upright, `+z` up, facing `+y`, right side at `+x`.
    pub fn h36m17() -> Self {
        const DOWN: [f64; 3] = [0.0, 0.0, -1.0];
        const UP: [f64; 3] = [0.0, 0.0, 1.0];
        const RIGHT: [f64; 3] = [1.0, 0.0, 0.0];
        const LEFT: [f64; 3] = [-1.0, 0.0, 0.0];
        let table: [(&str, Option<usize>, f64, [f64; 3]); 17] = [
            ("Hip", None, 0.0, UP),
            ("RHip", Some(0), 132.0, RIGHT),
            ("RKnee", Some(1), 442.0, DOWN),
            ("RAnkle", Some(2), 454.0, DOWN),
            ("LHip", Some(0), 132.0, LEFT),
            ("LKnee", Some(4), 442.0, DOWN),
            ("LAnkle", Some(5), 454.0, DOWN),
            ("Spine", Some(0), 233.0, UP),
            ("Thorax", Some(7), 257.0, UP),
            ("Neck", Some(8), 121.0, UP),
            ("Head", Some(9), 115.0, UP),
            ("LShoulder", Some(8), 151.0, LEFT),
            ("LElbow", Some(11), 278.0, DOWN),
            ("LWrist", Some(12), 251.0, DOWN),
            ("RShoulder", Some(8), 151.0, RIGHT),
            ("RElbow", Some(14), 278.0, DOWN),
            ("RWrist", Some(15), 251.0, DOWN),
        ];
        Self {
            names: table.iter().map(|t| t.0.to_string()).collect(),
            parents: table.iter().map(|t| t.1).collect(),
            root_idx: 0,
            bone_lengths: table.iter().map(|t| t.2).collect(),
            rest_dirs: table.iter().map(|t| t.3).collect(),
            input_joint_map: (0..17).filter(|&j| j != 9).collect(),
        }
    }

    pub fn n_joints(&self) -> usize {
        self.names.len()
    }

    pub fn n_input_joints(&self) -> usize {
        self.input_joint_map.len()
    }

    /// Joints predicted by the network: everything but the root, in order.
    pub fn output_joints(&self) -> Vec<usize> {
        (0..self.n_joints()).filter(|&j| j != self.root_idx).collect()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// `(parent, child)` pairs.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.parents
            .iter()
            .enumerate()
            .filter_map(|(j, p)| p.map(|p| (p, j)))
            .collect()
    }

    /// Joint order in which every parent precedes its children.
    pub fn topological_order(&self) -> Vec<usize> {
        let n = self.n_joints();
        let mut order = vec![self.root_idx];
        let mut i = 0;
        while i < order.len() {
            let p = order[i];
            order.extend((0..n).filter(|&c| self.parents[c] == Some(p)));
            i += 1;
        }
        order
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_joints();
        let bad = |m: String| Err(Error::Argument(format!("degenerate skeleton: {m}")));
        if n < 2 {
            return bad(format!("{n} joints"));
        }
        if self.parents.len() != n || self.bone_lengths.len() != n || self.rest_dirs.len() != n {
            return bad("per-joint tables have different lengths".into());
        }
        if self.root_idx >= n || self.parents[self.root_idx].is_some() {
            return bad(format!("root {} is out of range or has a parent", self.root_idx));
        }
        for (j, p) in self.parents.iter().enumerate() {
            match p {
                None if j != self.root_idx => return bad(format!("joint {j} has no parent")),
                Some(p) if *p >= n || *p == j => return bad(format!("joint {j} has parent {p}")),
                _ => {}
            }
        }
        if self.topological_order().len() != n {
            return bad("parent graph is not a tree rooted at the root joint".into());
        }
        for j in self.output_joints() {
            if !(self.bone_lengths[j] > 0.0) || !self.bone_lengths[j].is_finite() {
                return bad(format!("bone to joint {j} has length {}", self.bone_lengths[j]));
            }
            let d = self.rest_dirs[j];
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return bad(format!("rest direction of joint {j} is not a unit vector"));
            }
        }
        if self.input_joint_map.is_empty() {
            return bad("no input joints".into());
        }
        let mut seen = vec![false; n];
        for &j in &self.input_joint_map {
            if j >= n || seen[j] {
                return bad(format!("input joint map entry {j} is invalid or repeated"));
            }
            seen[j] = true;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_skeleton_is_valid() {
        let s = Skeleton::h36m17();
        s.validate().unwrap();
        assert_eq!(s.n_joints(), 17);
        assert_eq!(s.n_input_joints(), 16);
        assert_eq!(s.output_joints().len(), 16);
        assert_eq!(s.edges().len(), 16);
        assert_eq!(s.topological_order().len(), 17);
    }

    #[test]
    fn cycle_is_rejected() {
        let mut s = Skeleton::h36m17();
        s.parents[1] = Some(2);
        assert!(s.validate().is_err());
    }

    #[test]
    fn zero_bone_rejected() {
        let mut s = Skeleton::h36m17();
        s.bone_lengths[3] = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn second_root_rejected() {
        let mut s = Skeleton::h36m17();
        s.parents[5] = None;
        assert!(s.validate().is_err());
    }
}
