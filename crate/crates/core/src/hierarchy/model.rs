use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Name of the background slot in hierarchy files.
pub const BACKGROUND: &str = "background";

/// A parent slot of the base predictor: one base category or background.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    Base(usize),
    Background,
}

/// Base categories plus disjoint novel subsets hanging off each base
/// category or off background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassHierarchy {
    base: Vec<String>,
    novel: Vec<(String, Slot)>,
}

impl ClassHierarchy {
    /// Builds and validates a hierarchy from `(novel, parent name)` pairs, in
    /// order. A parent name is a base category or [`BACKGROUND`].
    pub fn new<S: AsRef<str>>(base: Vec<String>, novel: &[(S, S)]) -> Result<Self> {
        let mut seen_base = BTreeSet::new();
        for b in &base {
            if b == BACKGROUND {
                return Err(Error::Validation(format!("'{BACKGROUND}' is reserved and cannot be a base category")));
            }
            if !seen_base.insert(b.as_str()) {
                return Err(Error::Validation(format!("base category '{b}' listed twice")));
            }
        }
        let mut assigned: BTreeMap<&str, &str> = BTreeMap::new();
        let mut entries = Vec::with_capacity(novel.len());
        for (name, parent) in novel {
            let (name, parent) = (name.as_ref(), parent.as_ref());
            if seen_base.contains(name) || name == BACKGROUND {
                return Err(Error::Validation(format!("novel category '{name}' collides with a base slot")));
            }
            if let Some(prev) = assigned.insert(name, parent) {
                return Err(Error::Validation(format!(
                    "novel category '{name}' assigned to both '{prev}' and '{parent}'; subsets must be disjoint"
                )));
            }
            let slot = if parent == BACKGROUND {
                Slot::Background
            } else {
                match base.iter().position(|b| b == parent) {
                    Some(i) => Slot::Base(i),
                    None => {
                        return Err(Error::Validation(format!(
                            "novel category '{name}' has unknown parent '{parent}'"
                        )))
                    }
                }
            };
            entries.push((name.to_string(), slot));
        }
        Ok(Self { base, novel: entries })
    }

    /// Standard hierarchy: every novel category under background.
    pub fn standard(base: Vec<String>, novel: &[String]) -> Result<Self> {
        let pairs: Vec<(&str, &str)> = novel.iter().map(|n| (n.as_str(), BACKGROUND)).collect();
        Self::new(base, &pairs)
    }

    pub fn from_slots(base: Vec<String>, novel: Vec<(String, Slot)>) -> Result<Self> {
        let pairs: Vec<(String, String)> = novel
            .iter()
            .map(|(n, s)| {
                let p = match s {
                    Slot::Background => BACKGROUND.to_string(),
                    Slot::Base(i) => base.get(*i).cloned().unwrap_or_else(|| format!("#{i}")),
                };
                (n.clone(), p)
            })
            .collect();
        Self::new(base, &pairs)
    }

    pub fn base(&self) -> &[String] {
        &self.base
    }

    pub fn num_base(&self) -> usize {
        self.base.len()
    }

    /// Novel categories with their parents, in declaration order.
    pub fn novel(&self) -> &[(String, Slot)] {
        &self.novel
    }

    pub fn parent_of(&self, novel: &str) -> Option<Slot> {
        self.novel.iter().find(|(n, _)| n == novel).map(|(_, s)| *s)
    }

    /// The subset `C^slot_n`, in declaration order.
    pub fn subset(&self, slot: Slot) -> Vec<&str> {
        self.novel.iter().filter(|(_, s)| *s == slot).map(|(n, _)| n.as_str()).collect()
    }

    /// Slots with a nonempty novel subset: base slots ascending, then background.
    pub fn groups(&self) -> Vec<Slot> {
        let set: BTreeSet<Slot> = self.novel.iter().map(|(_, s)| *s).collect();
        set.into_iter().collect()
    }

    /// Base categories whose subset is empty emit detections in the first stage.
    pub fn emits_base(&self, i: usize) -> bool {
        !self.novel.iter().any(|(_, s)| *s == Slot::Base(i))
    }

    pub fn is_standard(&self) -> bool {
        self.novel.iter().all(|(_, s)| *s == Slot::Background)
    }

    pub fn slot_name(&self, slot: Slot) -> &str {
        match slot {
            Slot::Base(i) => &self.base[i],
            Slot::Background => BACKGROUND,
        }
    }

    pub fn slot_by_name(&self, name: &str) -> Option<Slot> {
        if name == BACKGROUND {
            Some(Slot::Background)
        } else {
            self.base.iter().position(|b| b == name).map(Slot::Base)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct HierarchyFile {
    base: Vec<String>,
    novel: OrderedPairs,
}

/// JSON object kept as an ordered list so duplicate keys stay visible.
struct OrderedPairs(Vec<(String, String)>);

impl Serialize for OrderedPairs {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            m.serialize_entry(k, v)?;
        }
        m.end()
    }
}

impl<'de> Deserialize<'de> for OrderedPairs {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = OrderedPairs;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping novel category names to parent names")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<OrderedPairs, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, String>()? {
                    out.push((k, v));
                }
                Ok(OrderedPairs(out))
            }
        }
        d.deserialize_map(V)
    }
}

impl ClassHierarchy {
    pub fn to_json(&self) -> Result<String> {
        let file = HierarchyFile {
            base: self.base.clone(),
            novel: OrderedPairs(
                self.novel
                    .iter()
                    .map(|(n, s)| (n.clone(), self.slot_name(*s).to_string()))
                    .collect(),
            ),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: HierarchyFile = serde_json::from_str(text)?;
        Self::new(file.base, &file.novel.0)
    }
}
