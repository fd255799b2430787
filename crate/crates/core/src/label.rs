use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::wfdb::AamiClass;

/// Binary CRT outcome. Responders are the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrtLabel {
    NonResponder,
    Responder,
}

impl CrtLabel {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(CrtLabel::NonResponder),
            1 => Some(CrtLabel::Responder),
            _ => None,
        }
    }

    pub fn is_positive(self) -> bool {
        self == CrtLabel::Responder
    }

    pub fn name(self) -> &'static str {
        match self {
            CrtLabel::NonResponder => "non_responder",
            CrtLabel::Responder => "responder",
        }
    }
}

/// Label attached to a beat segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentLabel {
    Aami(AamiClass),
    Crt(CrtLabel),
}

impl SegmentLabel {
    /// Class index within its own label space.
    pub fn class_index(self) -> usize {
        match self {
            SegmentLabel::Aami(c) => c.index(),
            SegmentLabel::Crt(c) => c.index(),
        }
    }
}

impl fmt::Display for SegmentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SegmentLabel::Aami(c) => f.write_str(c.name()),
            SegmentLabel::Crt(c) => f.write_str(c.name()),
        }
    }
}

impl FromStr for SegmentLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(c) = AamiClass::from_name(s) {
            return Ok(SegmentLabel::Aami(c));
        }
        match s {
            "responder" => Ok(SegmentLabel::Crt(CrtLabel::Responder)),
            "non_responder" => Ok(SegmentLabel::Crt(CrtLabel::NonResponder)),
            _ => Err(Error::Data(format!("unknown label '{s}'"))),
        }
    }
}
