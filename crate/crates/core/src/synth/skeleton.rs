use nalgebra::Vector3;

use super::SynthError;

/// Joint order of the default 15-joint body model.
pub const JOINT_NAMES: [&str; 15] = [
    "neck",
    "nose",
    "mid_hip",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "l_hip",
    "l_knee",
    "l_ankle",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "r_hip",
    "r_knee",
    "r_ankle",
];

/// Index of the joint used as the person centre.
pub const CENTER_JOINT: usize = 2;

pub const DEFAULT_BONES: [(usize, usize); 14] = [
    (0, 1),
    (0, 2),
    (0, 3),
    (3, 4),
    (4, 5),
    (2, 6),
    (6, 7),
    (7, 8),
    (0, 9),
    (9, 10),
    (10, 11),
    (2, 12),
    (12, 13),
    (13, 14),
];

/// Spatially separated joint groups: no two joints in a group are adjacent
/// in the skeleton, so the oracle can share channels within a group.
pub const JOINT_GROUPS: [usize; 15] = [0, 1, 2, 2, 1, 0, 3, 1, 0, 2, 1, 0, 3, 1, 0];
pub const NUM_JOINT_GROUPS: usize = 4;

/// Standing rest pose, facing +y, feet on the ground (mm).
pub(crate) const REST_POSE: [[f64; 3]; 15] = [
    [0.0, 0.0, 1450.0],
    [0.0, 80.0, 1600.0],
    [0.0, 0.0, 950.0],
    [170.0, 0.0, 1420.0],
    [190.0, 0.0, 1130.0],
    [200.0, 0.0, 880.0],
    [110.0, 0.0, 930.0],
    [110.0, 0.0, 520.0],
    [115.0, 0.0, 90.0],
    [-170.0, 0.0, 1420.0],
    [-190.0, 0.0, 1130.0],
    [-200.0, 0.0, 880.0],
    [-110.0, 0.0, 930.0],
    [-110.0, 0.0, 520.0],
    [-115.0, 0.0, 90.0],
];

pub const MIN_BONE_MM: f64 = 100.0;
pub const MAX_BONE_MM: f64 = 600.0;

/// A 3D body: joint positions (mm) and a bone tree over them.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub joints: Vec<Vector3<f64>>,
    pub bones: Vec<(usize, usize)>,
}

impl Skeleton {
    pub fn new(joints: Vec<Vector3<f64>>, bones: Vec<(usize, usize)>) -> Result<Self, SynthError> {
        let s = Self { joints, bones };
        s.validate_tree()?;
        Ok(s)
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    /// Mid-hip for the default body model; the first joint otherwise.
    pub fn center(&self) -> Vector3<f64> {
        self.joints[if self.joints.len() == 15 { CENTER_JOINT } else { 0 }]
    }

    pub fn bone_length(&self, bone: usize) -> f64 {
        let (a, b) = self.bones[bone];
        (self.joints[a] - self.joints[b]).norm()
    }

    /// Bones must form a spanning tree over the joints.
    pub fn validate_tree(&self) -> Result<(), SynthError> {
        let k = self.joints.len();
        if k == 0 {
            return Err(SynthError::InvalidSkeleton("no joints".into()));
        }
        if self.bones.len() + 1 != k {
            return Err(SynthError::InvalidSkeleton(format!(
                "{} bones cannot form a tree over {k} joints",
                self.bones.len()
            )));
        }
        let mut parent: Vec<usize> = (0..k).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for &(a, b) in &self.bones {
            if a >= k || b >= k {
                return Err(SynthError::InvalidSkeleton(format!("bone ({a}, {b}) out of range")));
            }
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra == rb {
                return Err(SynthError::InvalidSkeleton("bones contain a cycle".into()));
            }
            parent[ra] = rb;
        }
        Ok(())
    }

    pub fn validate_lengths(&self, min: f64, max: f64) -> Result<(), SynthError> {
        for i in 0..self.bones.len() {
            let l = self.bone_length(i);
            if !(min..=max).contains(&l) {
                return Err(SynthError::InvalidSkeleton(format!(
                    "bone {i} has length {l:.1} mm outside [{min}, {max}]"
                )));
            }
        }
        Ok(())
    }

    pub fn rest_pose() -> Self {
        Self {
            joints: REST_POSE
                .iter()
                .map(|p| Vector3::new(p[0], p[1], p[2]))
                .collect(),
            bones: DEFAULT_BONES.to_vec(),
        }
    }

    /// Children lists in the bone tree rooted at `root`, in bone order.
    pub fn children(&self, root: usize) -> Vec<Vec<usize>> {
        let k = self.joints.len();
        let mut adj = vec![Vec::new(); k];
        for &(a, b) in &self.bones {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut children = vec![Vec::new(); k];
        let mut seen = vec![false; k];
        let mut stack = vec![root];
        seen[root] = true;
        while let Some(v) = stack.pop() {
            for &n in &adj[v] {
                if !seen[n] {
                    seen[n] = true;
                    children[v].push(n);
                    stack.push(n);
                }
            }
        }
        children
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rest_pose_is_a_plausible_tree() {
        let s = Skeleton::rest_pose();
        s.validate_tree().unwrap();
        s.validate_lengths(MIN_BONE_MM, MAX_BONE_MM).unwrap();
        assert_eq!(s.center(), Vector3::new(0.0, 0.0, 950.0));
    }

    #[test]
    fn joint_groups_separate_adjacent_joints() {
        for &(a, b) in &DEFAULT_BONES {
            assert_ne!(JOINT_GROUPS[a], JOINT_GROUPS[b], "bone {a}-{b}");
        }
        assert!(JOINT_GROUPS.iter().all(|&g| g < NUM_JOINT_GROUPS));
    }

    #[test]
    fn cycles_and_forests_are_rejected() {
        let joints = vec![Vector3::zeros(); 3];
        assert!(Skeleton::new(joints.clone(), vec![(0, 1), (1, 0)]).is_err());
        assert!(Skeleton::new(joints.clone(), vec![(0, 1)]).is_err());
        assert!(Skeleton::new(joints, vec![(0, 1), (1, 2)]).is_ok());
    }
}
