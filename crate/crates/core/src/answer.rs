//! Binary answer labels shared by every stage.

use std::fmt;

use serde::{Deserialize, Serialize};

/// A decided binary answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum YesNo {
    Yes,
    No,
}

impl YesNo {
    pub fn flip(self) -> Self {
        match self {
            YesNo::Yes => YesNo::No,
            YesNo::No => YesNo::Yes,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            YesNo::Yes => "Yes",
            YesNo::No => "No",
        }
    }

    /// Parses dataset labels such as `"yes"`, `"No"`, `"1"`, `"0"`.
    pub fn from_label(label: &str) -> Option<Self> {
        match label.trim().to_ascii_lowercase().as_str() {
            "yes" | "y" | "true" | "1" => Some(YesNo::Yes),
            "no" | "n" | "false" | "0" => Some(YesNo::No),
            _ => None,
        }
    }
}

impl fmt::Display for YesNo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A normalized free-text answer, which may fail to commit to either class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Answer {
    Yes,
    No,
    Unparseable,
}

impl Answer {
    pub fn decided(self) -> Option<YesNo> {
        match self {
            Answer::Yes => Some(YesNo::Yes),
            Answer::No => Some(YesNo::No),
            Answer::Unparseable => None,
        }
    }
}

impl From<YesNo> for Answer {
    fn from(value: YesNo) -> Self {
        match value {
            YesNo::Yes => Answer::Yes,
            YesNo::No => Answer::No,
        }
    }
}
