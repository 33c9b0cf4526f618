//! The closed set of heartbeat classes and the annotation symbol table.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One of the seven beat classes used throughout the pipeline.
///
/// The declaration order is the canonical class index used by the
/// classifier output layer, confusion matrices and report rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HeartbeatClass {
    #[serde(rename = "APC")]
    Apc,
    Normal,
    #[serde(rename = "LBBB")]
    Lbbb,
    #[serde(rename = "PAB")]
    Pab,
    #[serde(rename = "PVC")]
    Pvc,
    #[serde(rename = "RBB")]
    Rbb,
    #[serde(rename = "VEB")]
    Veb,
}

pub const CLASS_COUNT: usize = 7;

impl HeartbeatClass {
    pub const ALL: [HeartbeatClass; CLASS_COUNT] = [
        HeartbeatClass::Apc,
        HeartbeatClass::Normal,
        HeartbeatClass::Lbbb,
        HeartbeatClass::Pab,
        HeartbeatClass::Pvc,
        HeartbeatClass::Rbb,
        HeartbeatClass::Veb,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            HeartbeatClass::Apc => "APC",
            HeartbeatClass::Normal => "Normal",
            HeartbeatClass::Lbbb => "LBBB",
            HeartbeatClass::Pab => "PAB",
            HeartbeatClass::Pvc => "PVC",
            HeartbeatClass::Rbb => "RBB",
            HeartbeatClass::Veb => "VEB",
        }
    }

    /// MIT-BIH annotation code written back on export.
    pub fn symbol(self) -> &'static str {
        match self {
            HeartbeatClass::Apc => "A",
            HeartbeatClass::Normal => "N",
            HeartbeatClass::Lbbb => "L",
            HeartbeatClass::Pab => "/",
            HeartbeatClass::Pvc => "V",
            HeartbeatClass::Rbb => "R",
            HeartbeatClass::Veb => "E",
        }
    }

    /// The two classes topped up by the balancing protocol.
    pub const MINORITY: [HeartbeatClass; 2] = [HeartbeatClass::Veb, HeartbeatClass::Apc];
}

impl fmt::Display for HeartbeatClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownClass(pub String);

impl fmt::Display for UnknownClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown heartbeat class {:?}", self.0)
    }
}

impl std::error::Error for UnknownClass {}

impl FromStr for HeartbeatClass {
    type Err = UnknownClass;

    /// Accepts the class name case-insensitively.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownClass(s.to_string()))
    }
}

const SYMBOL_TABLE_CSV: &str = include_str!("../data/symbol_table.csv");

/// Version of the shipped symbol table, bumped whenever the mapping changes.
pub const SYMBOL_TABLE_VERSION: u32 = 1;

/// Annotation symbol to class mapping.
///
/// Built from the versioned table shipped in `data/symbol_table.csv`. Class
/// names are accepted as symbols too, so hand-written annotation files can
/// say `Normal` instead of `N`.
#[derive(Debug, Clone)]
pub struct SymbolTable {
    map: BTreeMap<String, HeartbeatClass>,
}

impl SymbolTable {
    pub fn shipped() -> Self {
        let mut map = BTreeMap::new();
        for line in SYMBOL_TABLE_CSV.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line == "symbol,class" {
                continue;
            }
            let (symbol, class) = line
                .split_once(',')
                .expect("shipped symbol table rows are `symbol,class`");
            let class: HeartbeatClass = class.parse().expect("shipped symbol table class");
            map.insert(symbol.to_string(), class);
        }
        for class in HeartbeatClass::ALL {
            map.insert(class.name().to_string(), class);
        }
        SymbolTable { map }
    }

    pub fn lookup(&self, symbol: &str) -> Option<HeartbeatClass> {
        self.map.get(symbol).copied()
    }
}

impl Default for SymbolTable {
    fn default() -> Self {
        Self::shipped()
    }
}
