use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "reach")]
    Reach,
    #[serde(rename = "pickplace")]
    PickPlace,
    #[serde(rename = "sorting")]
    Sorting,
    #[serde(rename = "bimodal-avoid")]
    BimodalAvoid,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [TaskKind::Reach, TaskKind::PickPlace, TaskKind::Sorting, TaskKind::BimodalAvoid];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Reach => "reach",
            TaskKind::PickPlace => "pickplace",
            TaskKind::Sorting => "sorting",
            TaskKind::BimodalAvoid => "bimodal-avoid",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| SimError::InvalidTask(format!("unknown task {s:?}")))
    }
}

/// Axis-aligned sampling box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min: [f32; 2],
    pub max: [f32; 2],
}

impl Region {
    pub const fn new(min: [f32; 2], max: [f32; 2]) -> Self {
        Region { min, max }
    }

    /// A region holding a single point: no randomization.
    pub const fn point(p: [f32; 2]) -> Self {
        Region { min: p, max: p }
    }

    pub fn contains(&self, p: [f32; 2]) -> bool {
        (0..2).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    fn valid(&self) -> bool {
        (0..2).all(|i| 0.0 <= self.min[i] && self.min[i] <= self.max[i] && self.max[i] <= 1.0)
    }
}

/// Task definition: what is randomized at reset and how success is judged.
/// Loadable from TOML or JSON task files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: TaskKind,
    pub max_steps: usize,
    pub eef_start: Region,
    #[serde(default)]
    pub goal: Option<Region>,
    #[serde(default)]
    pub objects: Option<Region>,
    #[serde(default)]
    pub receptacles: Option<Region>,
    /// Fixed receptacle positions; receptacle `i` takes color `i`. When
    /// empty, positions and colors are drawn from `receptacles`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub receptacle_slots: Vec<[f32; 2]>,
    #[serde(default)]
    pub obstacle: Option<Region>,
    #[serde(default = "defaults::obstacle_radius")]
    pub obstacle_radius: f32,
    #[serde(default = "defaults::receptacle_radius")]
    pub receptacle_radius: f32,
    #[serde(default = "defaults::goal_tolerance")]
    pub goal_tolerance: f32,
    #[serde(default = "defaults::grasp_radius")]
    pub grasp_radius: f32,
    /// Minimum distance between sampled items of the same kind, and between
    /// the start and the goal.
    #[serde(default = "defaults::min_separation")]
    pub min_separation: f32,
}

mod defaults {
    pub fn obstacle_radius() -> f32 {
        0.12
    }
    pub fn receptacle_radius() -> f32 {
        0.08
    }
    pub fn goal_tolerance() -> f32 {
        0.04
    }
    pub fn grasp_radius() -> f32 {
        0.03
    }
    pub fn min_separation() -> f32 {
        0.2
    }
}

impl TaskSpec {
    /// Built-in definition of each task.
    pub fn builtin(kind: TaskKind) -> TaskSpec {
        let base = TaskSpec {
            name: kind,
            max_steps: 40,
            eef_start: Region::new([0.1, 0.1], [0.9, 0.9]),
            goal: None,
            objects: None,
            receptacles: None,
            receptacle_slots: Vec::new(),
            obstacle: None,
            obstacle_radius: defaults::obstacle_radius(),
            receptacle_radius: defaults::receptacle_radius(),
            goal_tolerance: defaults::goal_tolerance(),
            grasp_radius: defaults::grasp_radius(),
            min_separation: defaults::min_separation(),
        };
        match kind {
            TaskKind::Reach => TaskSpec { goal: Some(Region::new([0.1, 0.1], [0.9, 0.9])), ..base },
            TaskKind::PickPlace => TaskSpec {
                max_steps: 60,
                eef_start: Region::new([0.3, 0.4], [0.7, 0.6]),
                objects: Some(Region::new([0.15, 0.1], [0.85, 0.35])),
                receptacles: Some(Region::new([0.15, 0.65], [0.85, 0.9])),
                ..base
            },
            // bins stay put, as on a real sorting desk; only the items move
            TaskKind::Sorting => TaskSpec {
                max_steps: 100,
                eef_start: Region::new([0.3, 0.4], [0.7, 0.6]),
                objects: Some(Region::new([0.15, 0.1], [0.85, 0.35])),
                receptacle_slots: vec![[0.25, 0.8], [0.75, 0.8]],
                min_separation: 0.25,
                ..base
            },
            TaskKind::BimodalAvoid => TaskSpec {
                max_steps: 50,
                eef_start: Region::point([0.5, 0.15]),
                goal: Some(Region::point([0.5, 0.85])),
                obstacle: Some(Region::point([0.5, 0.5])),
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |what: &str| Err(SimError::InvalidTask(format!("{}: {what}", self.name)));
        let regions = [Some(self.eef_start), self.goal, self.objects, self.receptacles, self.obstacle];
        let slots = self.receptacle_slots.iter().map(|&p| Region::point(p));
        if regions.into_iter().flatten().chain(slots).any(|r| !r.valid()) {
            return bad("sampling region outside the unit workspace");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive");
        }
        let needs = match self.name {
            TaskKind::Reach => self.goal.is_some(),
            TaskKind::PickPlace | TaskKind::Sorting => {
                self.objects.is_some()
                    && (self.receptacles.is_some() || self.receptacle_slots.len() >= self.n_objects())
            }
            TaskKind::BimodalAvoid => self.goal.is_some() && self.obstacle.is_some(),
        };
        if !needs {
            return bad("missing a sampling region required by the task");
        }
        let radii = [self.obstacle_radius, self.receptacle_radius, self.goal_tolerance, self.grasp_radius];
        if radii.iter().any(|&r| !(r > 0.0 && r < 1.0)) || self.min_separation < 0.0 {
            return bad("radii must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn n_objects(&self) -> usize {
        match self.name {
            TaskKind::PickPlace => 1,
            TaskKind::Sorting => 2,
            _ => 0,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<TaskSpec, SimError> {
        let spec: TaskSpec = toml::from_str(text).map_err(|e| SimError::InvalidTask(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Load a task file (`.json` or TOML), or a built-in task by name.
    pub fn load(path_or_name: &str) -> Result<TaskSpec, SimError> {
        if let Ok(kind) = path_or_name.parse::<TaskKind>() {
            return Ok(TaskSpec::builtin(kind));
        }
        let path = Path::new(path_or_name);
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::InvalidTask(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let spec: TaskSpec = serde_json::from_str(&text).map_err(|e| SimError::InvalidTask(e.to_string()))?;
            spec.validate()?;
            Ok(spec)
        } else {
            Self::from_toml_str(&text)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_valid() {
        for k in TaskKind::ALL {
            TaskSpec::builtin(k).validate().unwrap();
            assert_eq!(k.as_str().parse::<TaskKind>().unwrap(), k);
        }
    }

    #[test]
    fn toml_task_file() {
        let text = r#"
            name = "pickplace"
            max_steps = 30
            eef_start = { min = [0.4, 0.4], max = [0.6, 0.6] }
            objects = { min = [0.2, 0.1], max = [0.8, 0.3] }
            receptacles = { min = [0.2, 0.7], max = [0.8, 0.9] }
            receptacle_radius = 0.1
        "#;
        let t = TaskSpec::from_toml_str(text).unwrap();
        assert_eq!(t.name, TaskKind::PickPlace);
        assert_eq!(t.receptacle_radius, 0.1);
        assert_eq!(t.grasp_radius, 0.03);
    }

    #[test]
    fn rejects_out_of_workspace_ranges() {
        let mut t = TaskSpec::builtin(TaskKind::Reach);
        t.goal = Some(Region::new([0.5, 0.5], [1.2, 0.6]));
        assert!(t.validate().is_err());
        let mut t = TaskSpec::builtin(TaskKind::Sorting);
        t.receptacle_slots.pop();
        assert!(t.validate().is_err());
        t.receptacle_slots.push([0.5, 1.5]);
        assert!(t.validate().is_err());
        let mut t = TaskSpec::builtin(TaskKind::PickPlace);
        t.receptacles = None;
        assert!(t.validate().is_err());
        assert!(TaskSpec::from_toml_str("name = \"fly\"").is_err());
    }
}
