//! Ontological knowledge base.
//!
//! Holds the environment facts the planner trusts: the rooms of the house,
//! the furniture in each room, and the object classes together with their
//! default locations. The store is built once from an [`OntologyDocument`]
//! and is read-only afterwards.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KbError {
    #[error("ontology schema violation: {0}")]
    Schema(String),
    #[error("invalid entity name {0:?}")]
    InvalidName(String),
    #[error("duplicate {kind} {name:?}")]
    DuplicateEntity { kind: &'static str, name: String },
    #[error("furniture {furniture:?} references undeclared room {room:?}")]
    DanglingRoom { furniture: String, room: String },
    #[error("object {object:?} is a member of both {first:?} and {second:?}")]
    DuplicateMembership {
        object: String,
        first: String,
        second: String,
    },
    #[error("class {class:?} lists unknown furniture {furniture:?} as a default location")]
    UnknownDefaultLocation { class: String, furniture: String },
    #[error("class {0:?} declares an empty list")]
    EmptyList(String),
    #[error("alias {alias:?} is invalid: {reason}")]
    BadAlias { alias: String, reason: String },
    #[error("unknown {kind} {name:?}")]
    UnknownEntity { kind: &'static str, name: String },
}

/// Lowercase snake_case form of a raw name: trimmed, lowercased, with runs of
/// whitespace and hyphens collapsed to a single underscore.
pub fn normalize_name(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_sep = false;
    for ch in raw.trim().chars() {
        if ch.is_whitespace() || ch == '-' {
            pending_sep = true;
            continue;
        }
        if pending_sep && !out.is_empty() {
            out.push('_');
        }
        pending_sep = false;
        out.extend(ch.to_lowercase());
    }
    out
}

/// A normalized, non-empty entity name such as `dining_table`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EntityName(String);

impl EntityName {
    pub fn new(raw: &str) -> Result<Self, KbError> {
        let name = normalize_name(raw);
        if name.is_empty() {
            return Err(KbError::InvalidName(raw.to_string()));
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for EntityName {
    type Error = KbError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(&value)
    }
}

impl From<EntityName> for String {
    fn from(value: EntityName) -> Self {
        value.0
    }
}

impl fmt::Display for EntityName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::borrow::Borrow<str> for EntityName {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl AsRef<str> for EntityName {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl PartialEq<str> for EntityName {
    fn eq(&self, other: &str) -> bool {
        self.0 == other
    }
}

impl PartialEq<&str> for EntityName {
    fn eq(&self, other: &&str) -> bool {
        self.0 == *other
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Furniture {
    pub name: EntityName,
    pub room: EntityName,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectClass {
    pub name: EntityName,
    pub members: Vec<EntityName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_locations: Option<Vec<EntityName>>,
}

/// Serialized form of the ontology. JSON is the interchange format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OntologyDocument {
    pub rooms: Vec<EntityName>,
    pub furniture: Vec<Furniture>,
    pub classes: Vec<ObjectClass>,
    /// Synonyms accepted in commands, e.g. `fruit -> fruits`. Targets are
    /// object or class names.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub aliases: BTreeMap<EntityName, EntityName>,
}

/// How a command term maps onto the ontology.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TermResolution {
    ConcreteObject(EntityName),
    AmbiguousClass {
        class: EntityName,
        members: Vec<EntityName>,
    },
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OntologyStore {
    rooms: Vec<EntityName>,
    room_set: HashSet<EntityName>,
    furniture: Vec<Furniture>,
    furniture_index: HashMap<EntityName, usize>,
    classes: Vec<ObjectClass>,
    class_index: HashMap<EntityName, usize>,
    object_index: HashMap<EntityName, usize>,
    aliases: BTreeMap<EntityName, EntityName>,
}

/// Parses a JSON ontology document and validates it into a store.
pub fn load_ontology(source: &str) -> Result<OntologyStore, KbError> {
    let doc: OntologyDocument =
        serde_json::from_str(source).map_err(|e| KbError::Schema(e.to_string()))?;
    OntologyStore::from_document(doc)
}

impl OntologyStore {
    pub fn from_document(doc: OntologyDocument) -> Result<Self, KbError> {
        let mut room_set = HashSet::new();
        for room in &doc.rooms {
            if !room_set.insert(room.clone()) {
                return Err(KbError::DuplicateEntity {
                    kind: "room",
                    name: room.to_string(),
                });
            }
        }

        let mut furniture_index = HashMap::new();
        for (i, f) in doc.furniture.iter().enumerate() {
            if room_set.contains(&f.name) {
                return Err(KbError::DuplicateEntity {
                    kind: "room/furniture name",
                    name: f.name.to_string(),
                });
            }
            if !room_set.contains(&f.room) {
                return Err(KbError::DanglingRoom {
                    furniture: f.name.to_string(),
                    room: f.room.to_string(),
                });
            }
            if furniture_index.insert(f.name.clone(), i).is_some() {
                return Err(KbError::DuplicateEntity {
                    kind: "furniture",
                    name: f.name.to_string(),
                });
            }
        }

        let mut class_index = HashMap::new();
        let mut object_index: HashMap<EntityName, usize> = HashMap::new();
        for (i, class) in doc.classes.iter().enumerate() {
            if class_index.insert(class.name.clone(), i).is_some() {
                return Err(KbError::DuplicateEntity {
                    kind: "class",
                    name: class.name.to_string(),
                });
            }
            if class.members.is_empty() {
                return Err(KbError::EmptyList(class.name.to_string()));
            }
            for member in &class.members {
                if let Some(&prev) = object_index.get(member) {
                    return Err(KbError::DuplicateMembership {
                        object: member.to_string(),
                        first: doc.classes[prev].name.to_string(),
                        second: class.name.to_string(),
                    });
                }
                object_index.insert(member.clone(), i);
            }
            if let Some(defaults) = &class.default_locations {
                if defaults.is_empty() {
                    return Err(KbError::EmptyList(class.name.to_string()));
                }
                let mut seen = HashSet::new();
                for loc in defaults {
                    if !furniture_index.contains_key(loc) {
                        return Err(KbError::UnknownDefaultLocation {
                            class: class.name.to_string(),
                            furniture: loc.to_string(),
                        });
                    }
                    if !seen.insert(loc) {
                        return Err(KbError::DuplicateEntity {
                            kind: "default location",
                            name: loc.to_string(),
                        });
                    }
                }
            }
        }

        for (alias, target) in &doc.aliases {
            let reason = if object_index.contains_key(alias) || class_index.contains_key(alias) {
                Some("shadows an object or class name")
            } else if !object_index.contains_key(target) && !class_index.contains_key(target) {
                Some("target is neither an object nor a class")
            } else {
                None
            };
            if let Some(reason) = reason {
                return Err(KbError::BadAlias {
                    alias: alias.to_string(),
                    reason: reason.to_string(),
                });
            }
        }

        Ok(Self {
            rooms: doc.rooms,
            room_set,
            furniture: doc.furniture,
            furniture_index,
            classes: doc.classes,
            class_index,
            object_index,
            aliases: doc.aliases,
        })
    }

    pub fn to_document(&self) -> OntologyDocument {
        OntologyDocument {
            rooms: self.rooms.clone(),
            furniture: self.furniture.clone(),
            classes: self.classes.clone(),
            aliases: self.aliases.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("ontology serializes")
    }

    pub fn rooms(&self) -> &[EntityName] {
        &self.rooms
    }

    pub fn furniture(&self) -> &[Furniture] {
        &self.furniture
    }

    pub fn classes(&self) -> &[ObjectClass] {
        &self.classes
    }

    pub fn objects(&self) -> impl Iterator<Item = &EntityName> {
        self.classes.iter().flat_map(|c| c.members.iter())
    }

    pub fn is_room(&self, name: &str) -> bool {
        self.room_set.contains(name)
    }

    pub fn is_furniture(&self, name: &str) -> bool {
        self.furniture_index.contains_key(name)
    }

    pub fn is_object(&self, name: &str) -> bool {
        self.object_index.contains_key(name)
    }

    pub fn room_of(&self, furniture: &str) -> Option<&EntityName> {
        self.furniture_index
            .get(furniture)
            .map(|&i| &self.furniture[i].room)
    }

    pub fn class_of(&self, object: &str) -> Option<&ObjectClass> {
        self.object_index.get(object).map(|&i| &self.classes[i])
    }

    /// Furniture located in `room`, in declaration order.
    pub fn furniture_in_room(&self, room: &str) -> Result<Vec<EntityName>, KbError> {
        if !self.is_room(room) {
            return Err(KbError::UnknownEntity {
                kind: "room",
                name: room.to_string(),
            });
        }
        Ok(self
            .furniture
            .iter()
            .filter(|f| f.room == room)
            .map(|f| f.name.clone())
            .collect())
    }

    /// Default locations of the class `object` belongs to. `Ok(None)` means
    /// the object is known but its class has no defaults.
    pub fn default_locations(&self, object: &str) -> Result<Option<&[EntityName]>, KbError> {
        let class = self
            .class_of(object)
            .ok_or_else(|| KbError::UnknownEntity {
                kind: "object",
                name: object.to_string(),
            })?;
        Ok(class.default_locations.as_deref())
    }

    pub fn classify_term(&self, term: &str) -> TermResolution {
        let term = normalize_name(term);
        let term = match self.aliases.get(term.as_str()) {
            Some(target) => target.as_str().to_string(),
            None => term,
        };
        if let Some(&i) = self.object_index.get(term.as_str()) {
            let class = &self.classes[i];
            let object = class
                .members
                .iter()
                .find(|m| m.as_str() == term)
                .expect("object index points at its class");
            return TermResolution::ConcreteObject(object.clone());
        }
        match self.class_index.get(term.as_str()) {
            Some(&i) if self.classes[i].members.len() >= 2 => TermResolution::AmbiguousClass {
                class: self.classes[i].name.clone(),
                members: self.classes[i].members.clone(),
            },
            _ => TermResolution::Unknown,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn store() -> OntologyStore {
        fixtures::ontology()
    }

    fn names(list: &[&str]) -> Vec<EntityName> {
        list.iter().map(|n| EntityName::new(n).unwrap()).collect()
    }

    #[test]
    fn normalizes_names() {
        assert_eq!(normalize_name("  Dining Table "), "dining_table");
        assert_eq!(normalize_name("sugar-box"), "sugar_box");
        assert_eq!(normalize_name("Power_Drill"), "power_drill");
        assert!(EntityName::new("   ").is_err());
    }

    #[test]
    fn fixture_counts() {
        let s = store();
        assert_eq!(s.rooms().len(), 4);
        assert_eq!(s.furniture().len(), 10);
        // distinct names of the object set
        assert_eq!(s.objects().count(), 22);
    }

    #[test]
    fn dangling_room_is_rejected() {
        let doc =
            r#"{"rooms":["kitchen"],"furniture":[{"name":"desk","room":"garage"}],"classes":[]}"#;
        let err = load_ontology(doc).unwrap_err();
        assert_eq!(
            err,
            KbError::DanglingRoom {
                furniture: "desk".into(),
                room: "garage".into()
            }
        );
    }

    #[test]
    fn object_in_two_classes_is_rejected() {
        let doc = r#"{"rooms":["kitchen"],"furniture":[],"classes":[
            {"name":"fruits","members":["apple","pear"]},
            {"name":"snacks","members":["apple"]}]}"#;
        match load_ontology(doc).unwrap_err() {
            KbError::DuplicateMembership { object, .. } => assert_eq!(object, "apple"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn other_schema_errors() {
        assert!(matches!(
            load_ontology(r#"{"rooms":["a","a"],"furniture":[],"classes":[]}"#),
            Err(KbError::DuplicateEntity { kind: "room", .. })
        ));
        assert!(matches!(
            load_ontology(r#"{"rooms":["a"],"furniture":[{"name":"a","room":"a"}],"classes":[]}"#),
            Err(KbError::DuplicateEntity { .. })
        ));
        assert!(matches!(
            load_ontology(
                r#"{"rooms":["a"],"furniture":[],"classes":[{"name":"c","members":["x"],"default_locations":["desk"]}]}"#
            ),
            Err(KbError::UnknownDefaultLocation { .. })
        ));
        assert!(matches!(
            load_ontology(
                r#"{"rooms":["a"],"furniture":[],"classes":[{"name":"c","members":["x"],"default_locations":[]}]}"#
            ),
            Err(KbError::EmptyList(_))
        ));
        assert!(matches!(
            load_ontology(r#"{"rooms":[]}"#),
            Err(KbError::Schema(_))
        ));
        assert!(matches!(
            load_ontology(
                r#"{"rooms":[],"furniture":[],"classes":[{"name":"c","members":["x"]}],"aliases":{"y":"nothing"}}"#
            ),
            Err(KbError::BadAlias { .. })
        ));
    }

    #[test]
    fn names_are_normalized_on_load() {
        let doc = r#"{"rooms":["Living Room"],"furniture":[{"name":"Coffee Table","room":"living room"}],"classes":[]}"#;
        let s = load_ontology(doc).unwrap();
        assert!(s.is_room("living_room"));
        assert_eq!(s.room_of("coffee_table").unwrap(), "living_room");
    }

    #[test]
    fn furniture_in_room_keeps_declaration_order() {
        let s = store();
        assert_eq!(
            s.furniture_in_room("kitchen").unwrap(),
            names(&[
                "cabinet_kitchen",
                "counter_wagon",
                "dining_table",
                "high_table"
            ])
        );
        assert_eq!(
            s.furniture_in_room("lobby").unwrap(),
            names(&["shelf_lobby"])
        );
        assert!(matches!(
            s.furniture_in_room("spaceship"),
            Err(KbError::UnknownEntity { kind: "room", .. })
        ));

        let empty = load_ontology(r#"{"rooms":["attic"],"furniture":[],"classes":[]}"#).unwrap();
        assert!(empty.furniture_in_room("attic").unwrap().is_empty());
    }

    #[test]
    fn default_location_lookups() {
        let s = store();
        assert_eq!(
            s.default_locations("mug").unwrap().unwrap(),
            names(&["dining_table", "coffee_table", "counter_wagon"]).as_slice()
        );
        assert_eq!(s.default_locations("colored_wood_blocks").unwrap(), None);
        assert_eq!(
            s.default_locations("apple").unwrap().unwrap(),
            names(&["dining_table", "counter_wagon", "high_table"]).as_slice()
        );
        assert_eq!(
            s.default_locations("tennis_ball").unwrap().unwrap(),
            names(&["shelf_lobby"]).as_slice()
        );
        assert!(matches!(
            s.default_locations("unicorn"),
            Err(KbError::UnknownEntity { kind: "object", .. })
        ));
    }

    #[test]
    fn classify_terms() {
        let s = store();
        assert_eq!(
            s.classify_term("apple"),
            TermResolution::ConcreteObject(EntityName::new("apple").unwrap())
        );
        match s.classify_term("fruit") {
            TermResolution::AmbiguousClass { class, members } => {
                assert_eq!(class, "fruits");
                let mut got: Vec<_> = members.iter().map(|m| m.to_string()).collect();
                got.sort();
                assert_eq!(
                    got,
                    ["apple", "banana", "orange", "peach", "pear", "strawberry"]
                );
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.classify_term("unicorn"), TermResolution::Unknown);
        assert_eq!(
            s.classify_term("pitcher"),
            TermResolution::ConcreteObject(EntityName::new("pitcher_base").unwrap())
        );
        // single-member class that is not itself an object name
        assert_eq!(s.classify_term("ball"), TermResolution::Unknown);
    }

    #[test]
    fn document_round_trip() {
        let s = store();
        let again = load_ontology(&s.to_json()).unwrap();
        assert_eq!(s, again);
    }
}
