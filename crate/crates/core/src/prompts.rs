//! System prompt construction, inquiry templates, and the structured output
//! schema the model is asked to follow.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::kb::{normalize_name, EntityName, OntologyStore};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("template {label} requires binding {field}")]
    MissingBinding {
        label: InquiryLabel,
        field: &'static str,
    },
    #[error("unknown inquiry label {0:?}")]
    UnknownLabel(String),
    #[error("template file has no entry for {0}")]
    MissingTemplate(InquiryLabel),
    #[error("template {label} uses placeholder #{placeholder} it cannot bind")]
    BadPlaceholder {
        label: InquiryLabel,
        placeholder: String,
    },
    #[error("invalid template file: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InquiryLabel {
    GeneralPos,
    MultiplePos,
    Furniture,
    Again,
    Summarize,
}

impl InquiryLabel {
    pub const ALL: [InquiryLabel; 5] = [
        Self::GeneralPos,
        Self::MultiplePos,
        Self::Furniture,
        Self::Again,
        Self::Summarize,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::GeneralPos => "general_pos",
            Self::MultiplePos => "multiple_pos",
            Self::Furniture => "furniture",
            Self::Again => "again",
            Self::Summarize => "summarize",
        }
    }

    /// Placeholders this label must have bound before rendering.
    pub fn required(self) -> &'static [Placeholder] {
        use Placeholder::*;
        match self {
            Self::GeneralPos => &[ObjectName],
            Self::MultiplePos => &[ObjectName, Position],
            Self::Furniture => &[ObjectName, RoomName, FurnitureList],
            Self::Summarize => &[ObjectName, Situation],
            Self::Again => &[],
        }
    }
}

impl fmt::Display for InquiryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InquiryLabel {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| PromptError::UnknownLabel(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placeholder {
    ObjectName,
    Position,
    RoomName,
    FurnitureList,
    Situation,
}

impl Placeholder {
    const ALL: [Placeholder; 5] = [
        Self::ObjectName,
        Self::Position,
        Self::RoomName,
        Self::FurnitureList,
        Self::Situation,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Self::ObjectName => "object_name",
            Self::Position => "position",
            Self::RoomName => "room_name",
            Self::FurnitureList => "furniture_list",
            Self::Situation => "situation",
        }
    }

    fn parse(token: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.token() == token)
    }
}

/// Values substituted into a template. List values are joined with `", "`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Bindings {
    pub object_name: Option<String>,
    pub position_list: Option<Vec<EntityName>>,
    pub room_name: Option<EntityName>,
    pub furniture_list: Option<Vec<EntityName>>,
    pub situation: Option<String>,
}

/// Situation phrase bound for location queries.
pub const LOCATION_SITUATION: &str = "locations";

impl Bindings {
    pub fn object(name: impl Into<String>) -> Self {
        Self {
            object_name: Some(name.into()),
            ..Self::default()
        }
    }

    pub fn with_positions(mut self, positions: Vec<EntityName>) -> Self {
        self.position_list = Some(positions);
        self
    }

    pub fn with_room(mut self, room: EntityName) -> Self {
        self.room_name = Some(room);
        self
    }

    pub fn with_furniture(mut self, furniture: Vec<EntityName>) -> Self {
        self.furniture_list = Some(furniture);
        self
    }

    pub fn with_situation(mut self, situation: impl Into<String>) -> Self {
        self.situation = Some(situation.into());
        self
    }

    fn value(&self, p: Placeholder) -> Option<String> {
        fn join(list: &[EntityName]) -> Option<String> {
            (!list.is_empty()).then(|| {
                list.iter()
                    .map(EntityName::as_str)
                    .collect::<Vec<_>>()
                    .join(", ")
            })
        }
        let non_empty = |s: &String| (!s.trim().is_empty()).then(|| s.clone());
        match p {
            Placeholder::ObjectName => self.object_name.as_ref().and_then(non_empty),
            Placeholder::Position => self.position_list.as_deref().and_then(join),
            Placeholder::RoomName => self.room_name.as_ref().map(|r| r.to_string()),
            Placeholder::FurnitureList => self.furniture_list.as_deref().and_then(join),
            Placeholder::Situation => self.situation.as_ref().and_then(non_empty),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(Placeholder),
}

/// Pre-parsed inquiry templates, one per label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<InquiryLabel, Vec<Segment>>,
}

fn parse_template(label: InquiryLabel, text: &str) -> Result<Vec<Segment>, PromptError> {
    let mut segments = Vec::new();
    let mut literal = String::new();
    let mut chars = text.char_indices().peekable();
    while let Some((i, ch)) = chars.next() {
        if ch != '#' {
            literal.push(ch);
            continue;
        }
        let start = i + 1;
        let mut end = start;
        while let Some(&(j, c)) = chars.peek() {
            if c.is_ascii_lowercase() || c == '_' {
                end = j + c.len_utf8();
                chars.next();
            } else {
                break;
            }
        }
        let token = &text[start..end];
        let placeholder = Placeholder::parse(token)
            .filter(|p| label.required().contains(p))
            .ok_or_else(|| PromptError::BadPlaceholder {
                label,
                placeholder: token.to_string(),
            })?;
        if !literal.is_empty() {
            segments.push(Segment::Text(std::mem::take(&mut literal)));
        }
        segments.push(Segment::Slot(placeholder));
    }
    if !literal.is_empty() {
        segments.push(Segment::Text(literal));
    }
    Ok(segments)
}

impl TemplateSet {
    /// Loads a `{label: template}` JSON object. Every label must be present
    /// and may only use placeholders it binds.
    pub fn from_json(text: &str) -> Result<Self, PromptError> {
        let raw: BTreeMap<String, String> =
            serde_json::from_str(text).map_err(|e| PromptError::Schema(e.to_string()))?;
        let mut templates = BTreeMap::new();
        for (key, body) in &raw {
            let label: InquiryLabel = key.parse()?;
            templates.insert(label, parse_template(label, body)?);
        }
        for label in InquiryLabel::ALL {
            if !templates.contains_key(&label) {
                return Err(PromptError::MissingTemplate(label));
            }
        }
        Ok(Self { templates })
    }

    pub fn render(&self, label: InquiryLabel, bindings: &Bindings) -> Result<String, PromptError> {
        for &p in label.required() {
            if bindings.value(p).is_none() {
                return Err(PromptError::MissingBinding {
                    label,
                    field: p.token(),
                });
            }
        }
        let mut out = String::new();
        for seg in &self.templates[&label] {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Slot(p) => out.push_str(&bindings.value(*p).expect("checked above")),
            }
        }
        Ok(out)
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        crate::fixtures::templates()
    }
}

/// Renders with the built-in template set.
pub fn render_inquiry(label: InquiryLabel, bindings: &Bindings) -> Result<String, PromptError> {
    TemplateSet::default().render(label, bindings)
}

/// The structured answer format: one field holding room or furniture names,
/// most likely first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocationOutputSchema {
    pub field: String,
    pub description: String,
}

impl Default for LocationOutputSchema {
    fn default() -> Self {
        Self {
            field: "position_list".to_string(),
            description: "names of rooms or furniture where the object may be, most likely first"
                .to_string(),
        }
    }
}

impl LocationOutputSchema {
    pub fn json_schema(&self) -> Value {
        let mut properties = serde_json::Map::new();
        properties.insert(
            self.field.clone(),
            serde_json::json!({
                "description": self.description,
                "type": "array",
                "items": {"type": "string"}
            }),
        );
        serde_json::json!({
            "properties": properties,
            "required": [self.field],
        })
    }

    /// Pulls the name list out of a model reply. Tolerates code fences and
    /// prose around the first balanced JSON object. Names are normalized.
    pub fn extract(&self, raw: &str) -> Option<Vec<String>> {
        let candidate = strip_code_fences(raw.trim());
        let value = serde_json::from_str::<Value>(candidate)
            .ok()
            .filter(Value::is_object)
            .or_else(|| {
                first_balanced_object(candidate).and_then(|s| serde_json::from_str(s).ok())
            })?;
        let items = value.get(&self.field)?.as_array()?;
        items
            .iter()
            .map(|v| v.as_str().map(normalize_name))
            .collect::<Option<Vec<_>>>()
            .map(|names| names.into_iter().filter(|n| !n.is_empty()).collect())
    }
}

fn strip_code_fences(s: &str) -> &str {
    let s = s
        .strip_prefix("```json")
        .or_else(|| s.strip_prefix("```"))
        .unwrap_or(s);
    s.strip_suffix("```").unwrap_or(s).trim()
}

fn first_balanced_object(s: &str) -> Option<&str> {
    let mut depth = 0usize;
    let mut start = None;
    let mut in_str = false;
    let mut escaped = false;
    for (i, ch) in s.char_indices() {
        if in_str {
            match ch {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match ch {
            '"' if start.is_some() => in_str = true,
            '{' => {
                start.get_or_insert(i);
                depth += 1;
            }
            '}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    return start.map(|st| &s[st..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Format instruction embedded in the system prompt.
pub fn schema_instruction(schema: &LocationOutputSchema) -> String {
    format!(
        "The output should be formatted as a JSON instance that conforms to the JSON schema below.\n\
         {}\n\
         Respond with the JSON object only, without any other text, for example \
         {{\"{}\": [\"name_1\", \"name_2\"]}}.",
        schema.json_schema(),
        schema.field
    )
}

/// System prompt grounding the model in the environment: every room, every
/// furniture item, and the room each furniture item is in.
pub fn build_system_prompt(store: &OntologyStore, schema: &LocationOutputSchema) -> String {
    let join = |it: &mut dyn Iterator<Item = &EntityName>| {
        it.map(EntityName::as_str).collect::<Vec<_>>().join(", ")
    };
    let rooms = join(&mut store.rooms().iter());
    let furniture = join(&mut store.furniture().iter().map(|f| &f.name));
    let mut out = String::new();
    out.push_str(
        "You are an assistant for a service robot that fetches objects in a house. \
         Answer questions about where objects are likely to be found. \
         Only use the rooms and furniture listed below.\n\n",
    );
    out.push_str(&format!("Rooms: {rooms}\n"));
    out.push_str(&format!("Furniture: {furniture}\n\n"));
    out.push_str("Furniture locations (furniture: room):\n");
    for f in store.furniture() {
        out.push_str(&format!("{}: {}\n", f.name, f.room));
    }
    out.push('\n');
    out.push_str(&schema_instruction(schema));
    out.push('\n');
    out
}
