use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The nine benchmark tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Scene,
    Recognition,
    Grounding,
    Relationship,
    Reid,
    Security,
    Location,
    AerialCounting,
    PedestrianCounting,
}

/// How a task is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    MapAt50,
    Mae,
}

impl TaskKind {
    pub const ALL: [TaskKind; 9] = [
        TaskKind::Scene,
        TaskKind::Recognition,
        TaskKind::Grounding,
        TaskKind::Relationship,
        TaskKind::Reid,
        TaskKind::Security,
        TaskKind::Location,
        TaskKind::AerialCounting,
        TaskKind::PedestrianCounting,
    ];

    pub fn metric(self) -> Metric {
        match self {
            TaskKind::Grounding => Metric::MapAt50,
            TaskKind::Location | TaskKind::AerialCounting | TaskKind::PedestrianCounting => {
                Metric::Mae
            }
            _ => Metric::Accuracy,
        }
    }

    /// Higher-is-better tasks contribute to psum, error metrics to nsum.
    pub fn is_positive(self) -> bool {
        self.metric() != Metric::Mae
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Scene => "scene",
            TaskKind::Recognition => "recognition",
            TaskKind::Grounding => "grounding",
            TaskKind::Relationship => "relationship",
            TaskKind::Reid => "reid",
            TaskKind::Security => "security",
            TaskKind::Location => "location",
            TaskKind::AerialCounting => "aerial_counting",
            TaskKind::PedestrianCounting => "pedestrian_counting",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown task kind {s:?}"))
    }
}
