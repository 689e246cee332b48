//! Event classes used for ground truth and classification.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Classes of load events. The first two are the known (trained) classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventClass {
    /// Flexibility activation.
    #[serde(rename = "FA")]
    Fa,
    /// Normal operation.
    #[serde(rename = "NO")]
    No,
    /// Monday morning boiler peak.
    #[serde(rename = "MP")]
    Mp,
    /// Frozen value (stuck measurement).
    #[serde(rename = "FV")]
    Fv,
    /// Partial data unavailability.
    #[serde(rename = "DU")]
    Du,
}

impl EventClass {
    pub const ALL: [EventClass; 5] = [
        EventClass::Fa,
        EventClass::No,
        EventClass::Mp,
        EventClass::Fv,
        EventClass::Du,
    ];

    /// Stable numeric id, also the tie-break order of the classifier.
    pub fn id(self) -> u32 {
        self as u32
    }

    pub fn from_id(id: u32) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EventClass::Fa => "FA",
            EventClass::No => "NO",
            EventClass::Mp => "MP",
            EventClass::Fv => "FV",
            EventClass::Du => "DU",
        }
    }
}

impl fmt::Display for EventClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Parse {
                row: 0,
                message: format!("unknown event class `{s}`"),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_and_names_round_trip() {
        for c in EventClass::ALL {
            assert_eq!(EventClass::from_id(c.id()), Some(c));
            assert_eq!(c.as_str().parse::<EventClass>().unwrap(), c);
        }
        assert!("XX".parse::<EventClass>().is_err());
        assert_eq!(serde_json::to_string(&EventClass::Fv).unwrap(), "\"FV\"");
    }
}
