//! The bundled object-category vocabulary used for gold image objects and
//! for the completeness metric.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

const CATEGORY_LIST: &str = include_str!("../../resources/object_categories.txt");

fn categories() -> &'static [&'static str] {
    static LIST: OnceLock<Vec<&'static str>> = OnceLock::new();
    LIST.get_or_init(|| crate::text::resource_lines(CATEGORY_LIST).collect())
}

/// A canonical object category. Ordered by position in the bundled list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectCategory(u16);

impl ObjectCategory {
    /// All categories in list order.
    pub fn all() -> impl Iterator<Item = ObjectCategory> {
        (0..categories().len() as u16).map(ObjectCategory)
    }

    /// Case-insensitive lookup, returning the canonical category.
    pub fn canonicalize(name: &str) -> Option<Self> {
        let wanted = crate::text::collapse_whitespace(name).to_lowercase();
        categories().iter().position(|c| c.to_lowercase() == wanted).map(|i| ObjectCategory(i as u16))
    }

    pub fn name(self) -> &'static str {
        categories()[self.0 as usize]
    }
}

impl fmt::Display for ObjectCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for ObjectCategory {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ObjectCategory {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        ObjectCategory::canonicalize(&raw)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown object category `{raw}`")))
    }
}

/// A set of canonical object categories.
pub type ObjectSet = BTreeSet<ObjectCategory>;

/// Builds an [`ObjectSet`] from names, failing on the first unknown name.
pub fn object_set<'a>(names: impl IntoIterator<Item = &'a str>) -> Result<ObjectSet, String> {
    names.into_iter().map(|n| ObjectCategory::canonicalize(n).ok_or_else(|| n.to_owned())).collect()
}
