use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Vec3;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Offset from the parent joint in the parent's frame, meters.
    pub offset: Vec3,
}

/// An articulated skeleton whose joints are stored in topological order:
/// every parent precedes its children.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    joints: Vec<Joint>,
    root: usize,
}

/// Joint indices of one leg, hip to toe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Leg {
    pub hip: usize,
    pub knee: usize,
    pub ankle: usize,
    pub toe: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Right,
    Left,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Right => Side::Left,
            Side::Left => Side::Right,
        }
    }

    pub fn prefix(self) -> &'static str {
        match self {
            Side::Right => "right",
            Side::Left => "left",
        }
    }
}

impl Skeleton {
    pub fn new(joints: Vec<Joint>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::Skeleton("no joints".into()));
        }
        let mut root = None;
        for (i, j) in joints.iter().enumerate() {
            match j.parent {
                None => {
                    if root.replace(i).is_some() {
                        return Err(Error::Skeleton(format!("joint '{}' is a second root", j.name)));
                    }
                }
                Some(p) if p >= i => {
                    return Err(Error::Skeleton(format!(
                        "joint '{}' (index {i}) has parent {p}; parents must precede children",
                        j.name
                    )));
                }
                Some(_) => {}
            }
            if !j.offset.iter().all(|v| v.is_finite()) {
                return Err(Error::Skeleton(format!(
                    "joint '{}' has a non-finite offset",
                    j.name
                )));
            }
            if joints[..i].iter().any(|o| o.name == j.name) {
                return Err(Error::Skeleton(format!("duplicate joint name '{}'", j.name)));
            }
        }
        let root = root.ok_or_else(|| Error::Skeleton("no root joint".into()))?;
        Ok(Self { joints, root })
    }

    /// The repository's canonical 18-joint biped, facing +z with its left
    /// side toward +x. The ankle joints double as heel markers: with a
    /// neutral pose they sit on the ground plane when the hips are at
    /// [`Skeleton::STANDING_ROOT_HEIGHT`].
    pub fn biped18() -> Self {
        let spec: [(&str, Option<usize>, [f64; 3]); 18] = [
            ("hips", None, [0.0, 0.0, 0.0]),
            ("spine", Some(0), [0.0, 0.12, 0.0]),
            ("neck", Some(1), [0.0, 0.38, 0.0]),
            ("head", Some(2), [0.0, 0.12, 0.0]),
            ("right_shoulder", Some(1), [-0.19, 0.33, 0.0]),
            ("right_elbow", Some(4), [0.0, -0.28, 0.0]),
            ("right_wrist", Some(5), [0.0, -0.25, 0.0]),
            ("left_shoulder", Some(1), [0.19, 0.33, 0.0]),
            ("left_elbow", Some(7), [0.0, -0.28, 0.0]),
            ("left_wrist", Some(8), [0.0, -0.25, 0.0]),
            ("right_hip", Some(0), [-0.1, -0.05, 0.0]),
            ("right_knee", Some(10), [0.0, -0.42, 0.0]),
            ("right_ankle", Some(11), [0.0, -0.42, 0.0]),
            ("right_toe", Some(12), [0.0, 0.0, 0.15]),
            ("left_hip", Some(0), [0.1, -0.05, 0.0]),
            ("left_knee", Some(14), [0.0, -0.42, 0.0]),
            ("left_ankle", Some(15), [0.0, -0.42, 0.0]),
            ("left_toe", Some(16), [0.0, 0.0, 0.15]),
        ];
        let joints = spec
            .iter()
            .map(|(name, parent, o)| Joint {
                name: (*name).to_string(),
                parent: *parent,
                offset: Vec3::new(o[0], o[1], o[2]),
            })
            .collect();
        Self::new(joints).expect("canonical skeleton is valid")
    }

    /// Root height at which the neutral biped's ankles touch the ground.
    pub const STANDING_ROOT_HEIGHT: f64 = 0.89;

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joint(&self, i: usize) -> &Joint {
        &self.joints[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::Skeleton(format!("no joint named '{name}'")))
    }

    /// Looks up `<side>_hip`, `<side>_knee`, `<side>_ankle` and `<side>_toe`.
    pub fn leg(&self, side: Side) -> Result<Leg> {
        let p = side.prefix();
        Ok(Leg {
            hip: self.require(&format!("{p}_hip"))?,
            knee: self.require(&format!("{p}_knee"))?,
            ankle: self.require(&format!("{p}_ankle"))?,
            toe: self.require(&format!("{p}_toe"))?,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: Vec<JointRecord> = serde_json::from_str(text).map_err(|e| Error::Skeleton(e.to_string()))?;
        Self::from_records(&raw)
    }

    fn from_records(raw: &[JointRecord]) -> Result<Self> {
        let mut joints: Vec<Joint> = Vec::with_capacity(raw.len());
        for r in raw {
            let parent = match &r.parent {
                None => None,
                Some(ParentRef::Index(i)) => Some(*i),
                Some(ParentRef::Name(n)) => {
                    Some(joints.iter().position(|j| &j.name == n).ok_or_else(|| {
                        Error::Skeleton(format!(
                            "joint '{}' names parent '{n}' which does not precede it",
                            r.name
                        ))
                    })?)
                }
            };
            joints.push(Joint {
                name: r.name.clone(),
                parent,
                offset: Vec3::new(r.offset[0], r.offset[1], r.offset[2]),
            });
        }
        Self::new(joints)
    }

    pub fn to_json_string(&self) -> String {
        let raw: Vec<JointRecord> = self
            .joints
            .iter()
            .map(|j| JointRecord {
                name: j.name.clone(),
                parent: j.parent.map(ParentRef::Index),
                offset: [j.offset.x, j.offset.y, j.offset.z],
            })
            .collect();
        serde_json::to_string_pretty(&raw).expect("skeleton serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: Vec<JointRecord> = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            msg: e.to_string(),
        })?;
        Self::from_records(&raw)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct JointRecord {
    name: String,
    parent: Option<ParentRef>,
    offset: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum ParentRef {
    Index(usize),
    Name(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_biped_has_eighteen_joints() {
        let s = Skeleton::biped18();
        assert_eq!(s.len(), 18);
        assert_eq!(s.root(), 0);
        assert!(s.leg(Side::Right).is_ok());
        assert!(s.leg(Side::Left).is_ok());
    }

    #[test]
    fn json_round_trip() {
        let s = Skeleton::biped18();
        let back = Skeleton::from_json_str(&s.to_json_string()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn parents_may_be_named() {
        let text = r#"[{"name":"a","parent":null,"offset":[0,0,0]},
                      {"name":"b","parent":"a","offset":[0,1,0]}]"#;
        let s = Skeleton::from_json_str(text).unwrap();
        assert_eq!(s.joint(1).parent, Some(0));
    }

    #[test]
    fn rejects_child_before_parent() {
        let text = r#"[{"name":"a","parent":1,"offset":[0,0,0]},
                      {"name":"b","parent":null,"offset":[0,1,0]}]"#;
        assert!(Skeleton::from_json_str(text).is_err());
    }

    #[test]
    fn rejects_two_roots() {
        let text = r#"[{"name":"a","parent":null,"offset":[0,0,0]},
                      {"name":"b","parent":null,"offset":[0,1,0]}]"#;
        assert!(Skeleton::from_json_str(text).is_err());
    }
}
