//! Consistency verification of model answers against the knowledge base.
//!
//! A reply goes through three stages. Preprocessing extracts the name list,
//! re-asking with the `summarize` template when the reply is not in the
//! expected format. Classification sorts names into rooms, furniture and
//! unknown names. The existence check keeps only real furniture and asks the
//! model which furniture of each named room is most likely. When nothing
//! survives, the model is reminded once more with the `again` template;
//! after that the answer is `NotFound`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{EntityName, OntologyStore};
use crate::llm::{InquiryTag, Session};
use crate::prompts::{
    Bindings, InquiryLabel, LocationOutputSchema, TemplateSet, LOCATION_SITUATION,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerifyError {
    #[error("no parseable location list after {attempts} attempt(s)")]
    Unparseable { attempts: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerificationConfig {
    pub max_summarize_retries: usize,
    pub max_again_retries: usize,
    /// Furniture kept per expanded room.
    pub top_k_furniture: usize,
    /// Candidate count requested by the general inquiry. Informational: the
    /// parsed list is not truncated.
    pub top_k_general: usize,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        Self {
            max_summarize_retries: 1,
            max_again_retries: 1,
            top_k_furniture: 3,
            top_k_general: 5,
        }
    }
}

impl VerificationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.top_k_furniture == 0 || self.top_k_general == 0 {
            return Err("top_k values must be positive".into());
        }
        Ok(())
    }

    /// Upper bound on backend calls one verification can make for a store
    /// with `rooms` rooms.
    pub fn max_calls(&self, rooms: usize) -> usize {
        let per_pass = 1 + self.max_summarize_retries + rooms * (1 + self.max_summarize_retries);
        per_pass + self.max_again_retries * per_pass
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct NamePartition {
    pub rooms: Vec<EntityName>,
    pub furniture: Vec<EntityName>,
    pub unknown: Vec<String>,
}

/// Routes each name to rooms, furniture or unknown by exact lookup, keeping
/// the first occurrence of duplicates.
pub fn classify_names<S: AsRef<str>>(store: &OntologyStore, names: &[S]) -> NamePartition {
    let mut seen = HashSet::new();
    let mut out = NamePartition::default();
    for name in names {
        let name = name.as_ref();
        if !seen.insert(name.to_string()) {
            continue;
        }
        let entity = EntityName::new(name).ok();
        match entity {
            Some(e) if store.is_room(e.as_str()) => out.rooms.push(e),
            Some(e) if store.is_furniture(e.as_str()) => out.furniture.push(e),
            _ => out.unknown.push(name.to_string()),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "furniture", rename_all = "snake_case")]
pub enum VerificationOutcome {
    Found(Vec<EntityName>),
    NotFound,
}

impl VerificationOutcome {
    pub fn found(&self) -> Option<&[EntityName]> {
        match self {
            Self::Found(list) => Some(list),
            Self::NotFound => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RoomExpansion {
    pub room: EntityName,
    pub furniture: Vec<EntityName>,
}

/// What one pass over one model reply saw and kept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PassTrace {
    pub raw: String,
    pub parsed: Option<Vec<String>>,
    pub partition: NamePartition,
    pub expansions: Vec<RoomExpansion>,
    pub candidates: Vec<EntityName>,
    pub outcome: VerificationOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verification {
    pub outcome: VerificationOutcome,
    pub passes: Vec<PassTrace>,
}

pub struct Verifier<'a> {
    pub store: &'a OntologyStore,
    pub templates: &'a TemplateSet,
    pub schema: &'a LocationOutputSchema,
    pub config: VerificationConfig,
}

impl<'a> Verifier<'a> {
    pub fn new(
        store: &'a OntologyStore,
        templates: &'a TemplateSet,
        schema: &'a LocationOutputSchema,
        config: VerificationConfig,
    ) -> Self {
        Self {
            store,
            templates,
            schema,
            config,
        }
    }

    /// Extracts the normalized name list from `raw`, asking the model to
    /// summarize in the required format when it is not parseable.
    pub fn preprocess(
        &self,
        session: &mut Session,
        object: &str,
        raw: &str,
    ) -> Result<Vec<String>, VerifyError> {
        self.preprocess_in(session, object, None, raw)
    }

    fn preprocess_in(
        &self,
        session: &mut Session,
        object: &str,
        room: Option<&EntityName>,
        raw: &str,
    ) -> Result<Vec<String>, VerifyError> {
        if let Some(names) = self.schema.extract(raw) {
            return Ok(names);
        }
        let inquiry = self
            .templates
            .render(
                InquiryLabel::Summarize,
                &Bindings::object(object).with_situation(LOCATION_SITUATION),
            )
            .expect("summarize bindings are complete");
        let mut tag = InquiryTag::new(InquiryLabel::Summarize.as_str()).object(object);
        if let Some(room) = room {
            tag = tag.room(room.as_str());
        }
        for _ in 0..self.config.max_summarize_retries {
            let Ok(reply) = session.ask(&inquiry, tag.clone()) else {
                continue;
            };
            if let Some(names) = self.schema.extract(&reply.text) {
                return Ok(names);
            }
        }
        Err(VerifyError::Unparseable {
            attempts: 1 + self.config.max_summarize_retries,
        })
    }

    /// Asks which furniture of `room` is most likely to hold `object` and
    /// keeps at most `top_k_furniture` answers that really are in that room.
    pub fn expand_room(
        &self,
        session: &mut Session,
        object: &str,
        room: &EntityName,
    ) -> Vec<EntityName> {
        let in_room = match self.store.furniture_in_room(room.as_str()) {
            Ok(list) if !list.is_empty() => list,
            _ => return Vec::new(),
        };
        let inquiry = self
            .templates
            .render(
                InquiryLabel::Furniture,
                &Bindings::object(object)
                    .with_room(room.clone())
                    .with_furniture(in_room.clone()),
            )
            .expect("furniture bindings are complete");
        let tag = InquiryTag::new(InquiryLabel::Furniture.as_str())
            .object(object)
            .room(room.as_str());
        let Ok(reply) = session.ask(&inquiry, tag) else {
            return Vec::new();
        };
        let Ok(names) = self.preprocess_in(session, object, Some(room), &reply.text) else {
            return Vec::new();
        };
        let mut out: Vec<EntityName> = Vec::new();
        for name in names {
            if out.len() == self.config.top_k_furniture {
                break;
            }
            if let Some(f) = in_room.iter().find(|f| f.as_str() == name) {
                if !out.contains(f) {
                    out.push(f.clone());
                }
            }
        }
        out
    }

    fn single_pass(
        &self,
        session: &mut Session,
        object: &str,
        raw: &str,
        defaults: Option<&[EntityName]>,
    ) -> PassTrace {
        let parsed = self.preprocess(session, object, raw).ok();
        let partition = classify_names(self.store, parsed.as_deref().unwrap_or_default());
        let expansions: Vec<RoomExpansion> = partition
            .rooms
            .iter()
            .map(|room| RoomExpansion {
                room: room.clone(),
                furniture: self.expand_room(session, object, room),
            })
            .collect();

        let mut candidates: Vec<EntityName> = Vec::new();
        let expanded = expansions.iter().flat_map(|e| e.furniture.iter());
        for f in partition.furniture.iter().chain(expanded) {
            if !candidates.contains(f) {
                candidates.push(f.clone());
            }
        }
        if let Some(defaults) = defaults {
            candidates.retain(|c| defaults.contains(c));
        }
        let outcome = if candidates.is_empty() {
            VerificationOutcome::NotFound
        } else {
            VerificationOutcome::Found(candidates.clone())
        };
        PassTrace {
            raw: raw.to_string(),
            parsed,
            partition,
            expansions,
            candidates,
            outcome,
        }
    }

    /// Turns a reply to a location inquiry into an existence-checked,
    /// likelihood-ordered furniture list. When `defaults` is given, only
    /// furniture on that list survives. Backend failures degrade to
    /// `NotFound`.
    pub fn verify_locations(
        &self,
        session: &mut Session,
        object: &str,
        raw: &str,
        defaults: Option<&[EntityName]>,
    ) -> Verification {
        let mut passes = Vec::new();
        let mut raw = raw.to_string();
        let again = self
            .templates
            .render(InquiryLabel::Again, &Bindings::default())
            .expect("again has no bindings");
        for attempt in 0..=self.config.max_again_retries {
            let pass = self.single_pass(session, object, &raw, defaults);
            let outcome = pass.outcome.clone();
            passes.push(pass);
            if let VerificationOutcome::Found(_) = outcome {
                return Verification { outcome, passes };
            }
            if attempt == self.config.max_again_retries {
                break;
            }
            match session.ask(
                &again,
                InquiryTag::new(InquiryLabel::Again.as_str()).object(object),
            ) {
                Ok(reply) => raw = reply.text,
                Err(_) => break,
            }
        }
        Verification {
            outcome: VerificationOutcome::NotFound,
            passes,
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fixtures;
    use crate::llm::{GenerationParams, MatchRule, Script, ScriptedBackend};
    use crate::prompts::build_system_prompt;

    struct Env {
        store: OntologyStore,
        templates: TemplateSet,
        schema: LocationOutputSchema,
    }

    impl Env {
        fn new() -> Self {
            Self {
                store: fixtures::ontology(),
                templates: fixtures::templates(),
                schema: LocationOutputSchema::default(),
            }
        }

        fn verifier(&self) -> Verifier<'_> {
            Verifier::new(
                &self.store,
                &self.templates,
                &self.schema,
                VerificationConfig::default(),
            )
        }

        fn session(&self, script: Script) -> Session {
            Session::new(
                Box::new(ScriptedBackend::new(Arc::new(script))),
                build_system_prompt(&self.store, &self.schema),
                GenerationParams::default(),
                false,
            )
            .unwrap()
        }
    }

    fn rule(label: &str) -> MatchRule {
        MatchRule {
            label: label.into(),
            ..MatchRule::default()
        }
    }

    fn names(list: &[&str]) -> Vec<EntityName> {
        list.iter().map(|n| EntityName::new(n).unwrap()).collect()
    }

    fn json(list: &[&str]) -> String {
        serde_json::json!({ "position_list": list }).to_string()
    }

    #[test]
    fn preprocess_direct_parse() {
        let env = Env::new();
        let mut s = env.session(Script::default());
        let got = env
            .verifier()
            .preprocess(
                &mut s,
                "apple",
                r#"{"position_list":["dining_table","kitchen"]}"#,
            )
            .unwrap();
        assert_eq!(got, ["dining_table", "kitchen"]);
        assert!(s.calls().is_empty());
    }

    #[test]
    fn preprocess_summarize_path() {
        let env = Env::new();
        let mut script = Script::default();
        script.push(rule("summarize"), json(&["dining_table"]));
        let mut s = env.session(script);
        let got = env
            .verifier()
            .preprocess(&mut s, "apple", "You might find it on the dining table.")
            .unwrap();
        assert_eq!(got, ["dining_table"]);
        assert_eq!(s.calls().len(), 1);
        assert_eq!(
            s.calls()[0].inquiry,
            "Please summarize about potential locations for apple. You must follow the given output format above."
        );
    }

    #[test]
    fn preprocess_exhausts_retries() {
        let env = Env::new();
        let mut script = Script::default();
        script.push(rule("summarize"), "Still just prose, sorry.");
        let mut s = env.session(script);
        let err = env
            .verifier()
            .preprocess(&mut s, "apple", "prose")
            .unwrap_err();
        assert_eq!(err, VerifyError::Unparseable { attempts: 2 });
        assert_eq!(s.calls().len(), 1);
    }

    #[test]
    fn classify_examples() {
        let store = fixtures::ontology();
        let p = classify_names(&store, &["dining_table", "kitchen", "refrigerator"]);
        assert_eq!(p.rooms, names(&["kitchen"]));
        assert_eq!(p.furniture, names(&["dining_table"]));
        assert_eq!(p.unknown, ["refrigerator"]);

        let p = classify_names::<&str>(&store, &[]);
        assert_eq!(p, NamePartition::default());

        let p = classify_names(&store, &["dining_table", "dining_table"]);
        assert_eq!(p.furniture, names(&["dining_table"]));
    }

    #[test]
    fn expand_room_filters_to_room() {
        let env = Env::new();
        let mut script = Script::default();
        script.push(
            rule("furniture"),
            json(&["counter_wagon", "cabinet_kitchen", "sofa"]),
        );
        let mut s = env.session(script);
        let got = env
            .verifier()
            .expand_room(&mut s, "apple", &EntityName::new("kitchen").unwrap());
        assert_eq!(got, names(&["counter_wagon", "cabinet_kitchen"]));
        let inquiry = &s.calls()[0].inquiry;
        assert!(inquiry.contains(
            "in kitchen? Please tell me the top 3 furniture from furniture list, cabinet_kitchen, counter_wagon, dining_table, high_table."
        ));
    }

    #[test]
    fn expand_room_caps_at_top_k() {
        let env = Env::new();
        let mut script = Script::default();
        script.push(
            rule("furniture"),
            json(&[
                "high_table",
                "dining_table",
                "counter_wagon",
                "cabinet_kitchen",
            ]),
        );
        let mut s = env.session(script);
        let got = env
            .verifier()
            .expand_room(&mut s, "apple", &EntityName::new("kitchen").unwrap());
        assert_eq!(got, names(&["high_table", "dining_table", "counter_wagon"]));
    }

    #[test]
    fn expand_empty_room_makes_no_calls() {
        let store = crate::kb::load_ontology(
            r#"{"rooms":["attic","den"],"furniture":[{"name":"couch","room":"den"}],"classes":[{"name":"apple","members":["apple"]}]}"#,
        )
        .unwrap();
        let templates = fixtures::templates();
        let schema = LocationOutputSchema::default();
        let v = Verifier::new(&store, &templates, &schema, VerificationConfig::default());
        let mut s = Session::new(
            Box::new(ScriptedBackend::new(Arc::new(Script::default()))),
            "sys",
            GenerationParams::default(),
            false,
        )
        .unwrap();
        assert!(v
            .expand_room(&mut s, "apple", &EntityName::new("attic").unwrap())
            .is_empty());
        assert!(s.calls().is_empty());
    }

    #[test]
    fn expand_room_all_unknown() {
        let env = Env::new();
        let mut script = Script::default();
        script.push(rule("furniture"), json(&["fridge", "oven"]));
        let mut s = env.session(script);
        assert!(env
            .verifier()
            .expand_room(&mut s, "apple", &EntityName::new("kitchen").unwrap())
            .is_empty());
    }

    #[test]
    fn unknown_names_are_dropped() {
        let env = Env::new();
        let mut s = env.session(Script::default());
        let v = env.verifier().verify_locations(
            &mut s,
            "apple",
            &json(&["dining_table", "space_station"]),
            None,
        );
        assert_eq!(
            v.outcome,
            VerificationOutcome::Found(names(&["dining_table"]))
        );
        assert_eq!(v.passes.len(), 1);
        assert_eq!(v.passes[0].partition.unknown, ["space_station"]);
    }

    #[test]
    fn defaults_intersection() {
        let env = Env::new();
        let mut s = env.session(Script::default());
        let defaults = names(&["dining_table", "counter_wagon"]);
        let v = env.verifier().verify_locations(
            &mut s,
            "apple",
            &json(&["coffee_table", "dining_table"]),
            Some(&defaults),
        );
        assert_eq!(
            v.outcome,
            VerificationOutcome::Found(names(&["dining_table"]))
        );
    }

    #[test]
    fn direct_furniture_precede_expansions() {
        let env = Env::new();
        let mut script = Script::default();
        script.push(rule("furniture"), json(&["counter_wagon", "dining_table"]));
        let mut s = env.session(script);
        let v = env.verifier().verify_locations(
            &mut s,
            "apple",
            &json(&["kitchen", "dining_table", "desk"]),
            None,
        );
        assert_eq!(
            v.outcome,
            VerificationOutcome::Found(names(&["dining_table", "desk", "counter_wagon"]))
        );
    }

    #[test]
    fn full_exhaustion_is_not_found() {
        let env = Env::new();
        let mut script = Script::default();
        script.push(rule("summarize"), "no idea");
        script.push(rule("again"), "I really cannot say.");
        let mut s = env.session(script);
        let v = env
            .verifier()
            .verify_locations(&mut s, "apple", "Try the pantry.", None);
        assert_eq!(v.outcome, VerificationOutcome::NotFound);
        assert_eq!(v.passes.len(), 2);
        // summarize, again, summarize
        assert_eq!(s.calls().len(), 3);
        assert!(
            s.calls().len() <= VerificationConfig::default().max_calls(env.store.rooms().len())
        );
    }

    #[test]
    fn again_recovers() {
        let env = Env::new();
        let mut script = Script::default();
        script.push(rule("again"), json(&["high_table"]));
        let mut s = env.session(script);
        let v = env
            .verifier()
            .verify_locations(&mut s, "peach", &json(&["fridge"]), None);
        assert_eq!(
            v.outcome,
            VerificationOutcome::Found(names(&["high_table"]))
        );
        assert_eq!(
            s.calls()[0].inquiry,
            "You must choose potential places from the list given above."
        );
    }

    #[test]
    fn backend_failures_degrade_to_not_found() {
        let env = Env::new();
        // nothing scripted: every call fails
        let mut s = env.session(Script::default());
        let v = env
            .verifier()
            .verify_locations(&mut s, "apple", "prose", None);
        assert_eq!(v.outcome, VerificationOutcome::NotFound);
    }

    #[test]
    fn clean_input_is_idempotent() {
        let env = Env::new();
        let mut s = env.session(Script::default());
        let list = ["desk", "sofa", "desk", "shelf_lobby"];
        let v = env
            .verifier()
            .verify_locations(&mut s, "mug", &json(&list), None);
        assert_eq!(
            v.outcome,
            VerificationOutcome::Found(names(&["desk", "sofa", "shelf_lobby"]))
        );
    }
}
