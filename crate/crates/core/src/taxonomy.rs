//! Requirement labels shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The four PEGS dimensions: Project, Environment, Goals, System.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PegsCategory {
    Project,
    Environment,
    Goals,
    System,
}

impl PegsCategory {
    /// Canonical P, E, G, S order.
    pub const ALL: [PegsCategory; 4] = [
        PegsCategory::Project,
        PegsCategory::Environment,
        PegsCategory::Goals,
        PegsCategory::System,
    ];

    /// Requirements focus for the category-specific extraction prompt.
    pub fn focus_text(self) -> &'static str {
        match self {
            PegsCategory::Project => {
                "Stakeholders, constraints (budget, timeline), organizational context"
            }
            PegsCategory::Environment => {
                "External interfaces, regulatory constraints, operational conditions"
            }
            PegsCategory::Goals => "Business objectives, success criteria, user expectations",
            PegsCategory::System => {
                "Functional specs, non-functional requirements, quality attributes"
            }
        }
    }

    pub fn letter(self) -> char {
        match self {
            PegsCategory::Project => 'P',
            PegsCategory::Environment => 'E',
            PegsCategory::Goals => 'G',
            PegsCategory::System => 'S',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PegsCategory::Project => "Project",
            PegsCategory::Environment => "Environment",
            PegsCategory::Goals => "Goals",
            PegsCategory::System => "System",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PegsCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PegsCategory {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize_label(s).as_str() {
            "project" | "p" => Ok(PegsCategory::Project),
            "environment" | "env" | "e" => Ok(PegsCategory::Environment),
            "goals" | "goal" | "g" => Ok(PegsCategory::Goals),
            "system" | "s" => Ok(PegsCategory::System),
            _ => Err(LabelError::new("pegs", s)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ReqType {
    Functional,
    NonFunctional,
}

impl ReqType {
    pub fn as_str(self) -> &'static str {
        match self {
            ReqType::Functional => "functional",
            ReqType::NonFunctional => "non-functional",
        }
    }
}

impl fmt::Display for ReqType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReqType {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize_label(s).as_str() {
            "functional" | "fr" | "f" => Ok(ReqType::Functional),
            "nonfunctional" | "nfr" | "nf" => Ok(ReqType::NonFunctional),
            _ => Err(LabelError::new("type", s)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Priority {
    High,
    Medium,
    Low,
}

impl Priority {
    pub fn as_str(self) -> &'static str {
        match self {
            Priority::High => "High",
            Priority::Medium => "Medium",
            Priority::Low => "Low",
        }
    }
}

impl fmt::Display for Priority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Priority {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize_label(s).as_str() {
            "high" | "h" => Ok(Priority::High),
            "medium" | "med" | "m" => Ok(Priority::Medium),
            "low" | "l" => Ok(Priority::Low),
            _ => Err(LabelError::new("priority", s)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unrecognized {field} label {value:?}")]
pub struct LabelError {
    pub field: &'static str,
    pub value: String,
}

impl LabelError {
    fn new(field: &'static str, value: &str) -> Self {
        Self {
            field,
            value: value.to_string(),
        }
    }
}

// Lowercase and drop separators so "Non-Functional", "non_functional" and
// "NonFunctional" all compare equal.
fn normalize_label(s: &str) -> String {
    s.trim()
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}
