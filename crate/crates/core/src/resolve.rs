//! Command understanding and ambiguity resolution.
//!
//! Which object is meant is settled by the knowledge base or by asking the
//! user; the model is never consulted about preferences. Where the object is
//! comes from the knowledge base first, then from the model (verified), and
//! from the user last.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::kb::{normalize_name, EntityName, KbError, OntologyStore, TermResolution};
use crate::llm::{CallRecord, InquiryTag, Session};
use crate::prompts::{Bindings, InquiryLabel, LocationOutputSchema, TemplateSet};
use crate::simworld::{PerceptionModel, RobotState, WorldState};
use crate::verify::{Verification, VerificationConfig, VerificationOutcome, Verifier};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ResolveError {
    #[error("cannot parse command {0:?}")]
    Parse(String),
    #[error("could not determine which object is meant by {term:?} (user said {answer:?})")]
    UnresolvableObject { term: String, answer: String },
    #[error("user location {answer:?} for {object:?} is not known furniture")]
    UnresolvableLocation { object: String, answer: String },
    #[error("search fallback needs a non-empty exhausted plan")]
    EmptyExhaustedPlan,
    #[error("plan must be non-empty")]
    EmptyPlan,
    #[error("memory requires the model to be enabled")]
    InvalidApproach,
    #[error(transparent)]
    Kb(#[from] KbError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verb {
    Find,
    Take,
    Bring,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Command {
    pub verb: Verb,
    pub object_term: String,
}

const ARTICLES: [&str; 5] = ["a", "an", "the", "some", "me"];

/// Parses `<verb> [me] [article] <noun phrase>`, e.g. "Bring a sugar_box.".
pub fn parse_command(text: &str) -> Result<Command, ResolveError> {
    let parse_err = || ResolveError::Parse(text.to_string());
    let cleaned = text.trim().trim_end_matches(['.', '!', '?']);
    let mut words = cleaned.split_whitespace();
    let verb = match words.next().map(str::to_lowercase).as_deref() {
        Some("find") => Verb::Find,
        Some("take") => Verb::Take,
        Some("bring") => Verb::Bring,
        _ => return Err(parse_err()),
    };
    let rest: Vec<&str> = words
        .skip_while(|w| ARTICLES.contains(&w.to_lowercase().as_str()))
        .collect();
    let object_term = normalize_name(&rest.join(" "));
    if object_term.is_empty() {
        return Err(parse_err());
    }
    Ok(Command { verb, object_term })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    Okb,
    OkbLlm,
    OkbLlmMem,
}

impl Approach {
    pub const ALL: [Approach; 3] = [Self::Okb, Self::OkbLlm, Self::OkbLlmMem];

    /// Identifier used in files and CSV.
    pub fn as_key(self) -> &'static str {
        match self {
            Self::Okb => "okb",
            Self::OkbLlm => "okb_llm",
            Self::OkbLlmMem => "okb_llm_mem",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Okb => "OKB",
            Self::OkbLlm => "OKB+LLM",
            Self::OkbLlmMem => "OKB+LLM+MEM",
        }
    }

    pub fn config(self, situation: Situation) -> ApproachConfig {
        ApproachConfig {
            use_llm: self != Self::Okb,
            use_memory: self == Self::OkbLlmMem,
            use_defaults: situation == Situation::WithDefaults,
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Approach {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "okb" => Ok(Self::Okb),
            "okb_llm" | "okb+llm" => Ok(Self::OkbLlm),
            "okb_llm_mem" | "okb+llm+mem" => Ok(Self::OkbLlmMem),
            other => Err(format!("unknown approach {other:?}")),
        }
    }
}

/// Whether the knowledge base carries default locations in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Situation {
    WithDefaults,
    WithoutDefaults,
}

impl Situation {
    pub const ALL: [Situation; 2] = [Self::WithDefaults, Self::WithoutDefaults];

    pub fn label(self) -> &'static str {
        match self {
            Self::WithDefaults => "with_defaults",
            Self::WithoutDefaults => "without_defaults",
        }
    }
}

impl fmt::Display for Situation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Situation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "with_defaults" => Ok(Self::WithDefaults),
            "without_defaults" => Ok(Self::WithoutDefaults),
            other => Err(format!("unknown situation {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ApproachConfig {
    pub use_llm: bool,
    pub use_memory: bool,
    pub use_defaults: bool,
}

impl ApproachConfig {
    pub fn new(use_llm: bool, use_memory: bool, use_defaults: bool) -> Result<Self, ResolveError> {
        if use_memory && !use_llm {
            return Err(ResolveError::InvalidApproach);
        }
        Ok(Self {
            use_llm,
            use_memory,
            use_defaults,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ResolutionPlan {
    pub object: EntityName,
    pub visit_list: Vec<EntityName>,
    pub deliver_to: Option<EntityName>,
}

impl ResolutionPlan {
    /// Builds a plan, dropping repeated visits.
    pub fn new(
        object: EntityName,
        visits: Vec<EntityName>,
        deliver_to: Option<EntityName>,
    ) -> Result<Self, ResolveError> {
        let mut visit_list: Vec<EntityName> = Vec::with_capacity(visits.len());
        for v in visits {
            if !visit_list.contains(&v) {
                visit_list.push(v);
            }
        }
        if visit_list.is_empty() {
            return Err(ResolveError::EmptyPlan);
        }
        Ok(Self {
            object,
            visit_list,
            deliver_to,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InquiryKind {
    ObjectPreference,
    Location,
}

/// A question put to the user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UserInquiry {
    pub kind: InquiryKind,
    /// The term (preference) or object (location) being asked about.
    pub subject: String,
    pub options: Vec<EntityName>,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InquiryEvent {
    pub kind: InquiryKind,
    pub question: String,
    pub answer: String,
}

/// Anything that can answer the planner's questions: the simulated user, or
/// a person at the terminal.
pub trait UserAgent {
    fn answer(&mut self, inquiry: &UserInquiry) -> String;
}

fn ask(user: &mut dyn UserAgent, inquiry: UserInquiry) -> InquiryEvent {
    let answer = user.answer(&inquiry);
    InquiryEvent {
        kind: inquiry.kind,
        question: inquiry.question,
        answer,
    }
}

/// Timestamped structured record of an episode. Timestamps are simulated
/// seconds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRecord {
    pub event: &'static str,
    pub t: f64,
    pub payload: Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EpisodeLog {
    pub records: Vec<LogRecord>,
}

impl EpisodeLog {
    pub fn push(&mut self, event: &'static str, t: f64, payload: Value) {
        self.records.push(LogRecord { event, t, payload });
    }

    /// Newline-delimited JSON, one record per line.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("log record serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocationResolution {
    pub plan: ResolutionPlan,
    pub inquiries: Vec<InquiryEvent>,
    pub verification: Option<Verification>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeResult {
    pub command: String,
    pub success: bool,
    pub failure: Option<String>,
    /// Simulated robot time plus backend latency, seconds.
    pub completion_time: f64,
    pub inquiries: Vec<InquiryEvent>,
    pub visits: usize,
    pub llm_calls: usize,
    pub llm_time: f64,
    pub generated_tokens: usize,
    pub plans: Vec<ResolutionPlan>,
    pub robot: RobotState,
    pub llm_log: Vec<CallRecord>,
    pub log: EpisodeLog,
}

/// Everything needed to turn commands into plans.
pub struct Planner<'a> {
    pub store: &'a OntologyStore,
    pub templates: &'a TemplateSet,
    pub schema: &'a LocationOutputSchema,
    pub verification: VerificationConfig,
    /// User rounds allowed after the robot fails to find the object.
    pub max_fallback_rounds: usize,
}

impl<'a> Planner<'a> {
    pub fn new(
        store: &'a OntologyStore,
        templates: &'a TemplateSet,
        schema: &'a LocationOutputSchema,
    ) -> Self {
        Self {
            store,
            templates,
            schema,
            verification: VerificationConfig::default(),
            max_fallback_rounds: 2,
        }
    }

    fn verifier(&self) -> Verifier<'_> {
        Verifier::new(self.store, self.templates, self.schema, self.verification)
    }

    /// Settles which object a command term means, asking the user at most
    /// once.
    pub fn resolve_object(
        &self,
        user: &mut dyn UserAgent,
        term: &str,
    ) -> Result<(EntityName, Vec<InquiryEvent>), ResolveError> {
        let inquiry = match self.store.classify_term(term) {
            TermResolution::ConcreteObject(object) => return Ok((object, Vec::new())),
            TermResolution::AmbiguousClass { members, .. } => UserInquiry {
                kind: InquiryKind::ObjectPreference,
                subject: term.to_string(),
                question: format!(
                    "Which {} would you like: {}?",
                    term.replace('_', " "),
                    members
                        .iter()
                        .map(EntityName::as_str)
                        .collect::<Vec<_>>()
                        .join(", ")
                ),
                options: members,
            },
            TermResolution::Unknown => UserInquiry {
                kind: InquiryKind::ObjectPreference,
                subject: term.to_string(),
                question: format!(
                    "I do not know \"{}\". Which object do you mean?",
                    term.replace('_', " ")
                ),
                options: Vec::new(),
            },
        };
        let event = ask(user, inquiry);
        match self.store.classify_term(&event.answer) {
            TermResolution::ConcreteObject(object) => Ok((object, vec![event])),
            _ => Err(ResolveError::UnresolvableObject {
                term: term.to_string(),
                answer: event.answer,
            }),
        }
    }

    fn ask_location(
        &self,
        user: &mut dyn UserAgent,
        object: &EntityName,
        question: String,
    ) -> Result<(EntityName, InquiryEvent), ResolveError> {
        let event = ask(
            user,
            UserInquiry {
                kind: InquiryKind::Location,
                subject: object.to_string(),
                options: Vec::new(),
                question,
            },
        );
        match EntityName::new(&event.answer) {
            Ok(f) if self.store.is_furniture(f.as_str()) => Ok((f, event)),
            _ => Err(ResolveError::UnresolvableLocation {
                object: object.to_string(),
                answer: event.answer,
            }),
        }
    }

    fn ask_user_plan(
        &self,
        user: &mut dyn UserAgent,
        object: &EntityName,
        verification: Option<Verification>,
    ) -> Result<LocationResolution, ResolveError> {
        let question = format!(
            "Where can I find the {}?",
            object.as_str().replace('_', " ")
        );
        let (furniture, event) = self.ask_location(user, object, question)?;
        Ok(LocationResolution {
            plan: ResolutionPlan::new(object.clone(), vec![furniture], None)?,
            inquiries: vec![event],
            verification,
        })
    }

    /// Produces the visit plan for a known object.
    pub fn resolve_location(
        &self,
        session: Option<&mut Session>,
        user: &mut dyn UserAgent,
        object: &EntityName,
        approach: ApproachConfig,
    ) -> Result<LocationResolution, ResolveError> {
        let defaults: Option<Vec<EntityName>> = if approach.use_defaults {
            self.store
                .default_locations(object.as_str())?
                .map(<[_]>::to_vec)
        } else {
            None
        };

        if let Some([single]) = defaults.as_deref() {
            return Ok(LocationResolution {
                plan: ResolutionPlan::new(object.clone(), vec![single.clone()], None)?,
                inquiries: Vec::new(),
                verification: None,
            });
        }

        let session = match session {
            Some(s) if approach.use_llm => s,
            _ => return self.ask_user_plan(user, object, None),
        };

        let (label, bindings) = match &defaults {
            Some(list) => (
                InquiryLabel::MultiplePos,
                Bindings::object(object.as_str()).with_positions(list.clone()),
            ),
            None => (InquiryLabel::GeneralPos, Bindings::object(object.as_str())),
        };
        let inquiry = self
            .templates
            .render(label, &bindings)
            .expect("location bindings are complete");
        let tag = InquiryTag::new(label.as_str()).object(object.as_str());
        let raw = match session.ask(&inquiry, tag) {
            Ok(reply) => reply.text,
            Err(e) => {
                log::debug!("location inquiry failed for {object}: {e}");
                return self.ask_user_plan(user, object, None);
            }
        };
        let verification =
            self.verifier()
                .verify_locations(session, object.as_str(), &raw, defaults.as_deref());
        match &verification.outcome {
            VerificationOutcome::Found(list) => Ok(LocationResolution {
                plan: ResolutionPlan::new(object.clone(), list.clone(), None)?,
                inquiries: Vec::new(),
                verification: Some(verification),
            }),
            VerificationOutcome::NotFound => self.ask_user_plan(user, object, Some(verification)),
        }
    }

    /// After every planned visit failed, asks the user where to look and
    /// returns a single-visit plan there.
    pub fn handle_search_failure(
        &self,
        user: &mut dyn UserAgent,
        object: &EntityName,
        exhausted_plan: &[EntityName],
    ) -> Result<(ResolutionPlan, InquiryEvent), ResolveError> {
        if exhausted_plan.is_empty() {
            return Err(ResolveError::EmptyExhaustedPlan);
        }
        let question = format!(
            "I could not find the {} at {}. Where should I look?",
            object.as_str().replace('_', " "),
            exhausted_plan
                .iter()
                .map(EntityName::as_str)
                .collect::<Vec<_>>()
                .join(", ")
        );
        let (furniture, event) = self.ask_location(user, object, question)?;
        Ok((
            ResolutionPlan::new(object.clone(), vec![furniture], None)?,
            event,
        ))
    }

    /// Runs one command end to end. Failures are recorded, never returned.
    pub fn run_episode(
        &self,
        world: &WorldState,
        mut session: Option<Session>,
        user: &mut dyn UserAgent,
        perception: &mut PerceptionModel,
        approach: ApproachConfig,
        command_text: &str,
    ) -> EpisodeResult {
        let mut robot = world.initial_robot();
        let mut log = EpisodeLog::default();
        let mut inquiries: Vec<InquiryEvent> = Vec::new();
        let mut plans: Vec<ResolutionPlan> = Vec::new();
        let mut visits = 0usize;
        let mut success = false;

        let failure = (|| -> Result<(), ResolveError> {
            log.push("command", 0.0, json!({ "text": command_text }));
            let command = parse_command(command_text)?;
            log.push("parsed", 0.0, json!(command));

            let (object, events) = self.resolve_object(user, &command.object_term)?;
            for e in &events {
                log.push("user_inquiry", robot.odometer, json!(e));
            }
            inquiries.extend(events);
            log.push("object", 0.0, json!({ "object": object }));

            let resolution = self.resolve_location(session.as_mut(), user, &object, approach)?;
            if let Some(v) = &resolution.verification {
                log.push("verification", 0.0, json!(v));
            }
            for e in &resolution.inquiries {
                log.push("user_inquiry", robot.odometer, json!(e));
            }
            inquiries.extend(resolution.inquiries);

            let deliver_to = (command.verb == Verb::Bring).then(|| world.delivery_point().clone());
            let mut plan = resolution.plan;
            plan.deliver_to = deliver_to.clone();

            let mut rounds = 0;
            loop {
                log.push("plan", robot.odometer, json!(plan));
                let visit_log = world.execute_plan(&mut robot, &plan, command.verb, perception);
                for v in &visit_log.visits {
                    log.push("visit", v.time, json!(v));
                }
                visits += visit_log.visited();
                plans.push(plan.clone());
                if visit_log.found_at.is_some() {
                    if let Some(g) = visit_log.grasp_seconds {
                        log.push("grasp", robot.odometer, json!({ "seconds": g }));
                    }
                    if let Some(d) = &visit_log.delivery {
                        log.push("deliver", d.time, json!(d));
                    }
                    success = match command.verb {
                        Verb::Find => true,
                        Verb::Take => robot.carrying.as_ref() == Some(&object),
                        Verb::Bring => {
                            visit_log.delivery.is_some()
                                && robot.carrying.is_none()
                                && &robot.position == world.delivery_point()
                        }
                    };
                    return Ok(());
                }
                if rounds == self.max_fallback_rounds {
                    return Ok(());
                }
                rounds += 1;
                let (next, event) = self.handle_search_failure(user, &object, &plan.visit_list)?;
                log.push("user_inquiry", robot.odometer, json!(event));
                inquiries.push(event);
                plan = next;
                plan.deliver_to = deliver_to.clone();
            }
        })()
        .err()
        .map(|e| e.to_string());

        let failure = match (success, failure) {
            (true, _) => None,
            (false, Some(reason)) => Some(reason),
            (false, None) => Some("object not found".to_string()),
        };
        let (llm_log, llm_time, generated_tokens) = match &session {
            Some(s) => (s.calls().to_vec(), s.total_latency(), s.generated_tokens()),
            None => (Vec::new(), 0.0, 0),
        };
        let completion_time = robot.odometer + llm_time;
        log.push(
            "episode_end",
            completion_time,
            json!({ "success": success, "failure": failure }),
        );
        EpisodeResult {
            command: command_text.to_string(),
            success,
            failure,
            completion_time,
            inquiries,
            visits,
            llm_calls: llm_log.len(),
            llm_time,
            generated_tokens,
            plans,
            robot,
            llm_log,
            log,
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
        world: WorldState,
    }

    impl Env {
        fn new() -> Self {
            Self {
                store: fixtures::ontology(),
                templates: fixtures::templates(),
                schema: LocationOutputSchema::default(),
                world: fixtures::world(),
            }
        }

        fn planner(&self) -> Planner<'_> {
            Planner::new(&self.store, &self.templates, &self.schema)
        }

        fn session(&self, script: Arc<Script>, memory: bool) -> Session {
            Session::new(
                Box::new(ScriptedBackend::new(script)),
                build_system_prompt(&self.store, &self.schema),
                GenerationParams::default(),
                memory,
            )
            .unwrap()
        }
    }

    /// Canned answers, counting how often it was asked.
    struct Answers {
        answers: Vec<&'static str>,
        asked: Vec<UserInquiry>,
    }

    impl UserAgent for Answers {
        fn answer(&mut self, inquiry: &UserInquiry) -> String {
            self.asked.push(inquiry.clone());
            self.answers
                .get(self.asked.len() - 1)
                .copied()
                .unwrap_or("unknown")
                .to_string()
        }
    }

    fn answers(list: &[&'static str]) -> Answers {
        Answers {
            answers: list.to_vec(),
            asked: vec![],
        }
    }

    fn n(s: &str) -> EntityName {
        EntityName::new(s).unwrap()
    }

    fn okb(defaults: bool) -> ApproachConfig {
        ApproachConfig::new(false, false, defaults).unwrap()
    }

    #[test]
    fn parse_examples() {
        assert_eq!(
            parse_command("Find an apple.").unwrap(),
            Command {
                verb: Verb::Find,
                object_term: "apple".into()
            }
        );
        assert_eq!(
            parse_command("Bring a sugar_box.").unwrap(),
            Command {
                verb: Verb::Bring,
                object_term: "sugar_box".into()
            }
        );
        assert_eq!(
            parse_command("bring me the Power Drill")
                .unwrap()
                .object_term,
            "power_drill"
        );
        assert!(matches!(
            parse_command("Dance!"),
            Err(ResolveError::Parse(_))
        ));
        assert!(matches!(
            parse_command("Take a."),
            Err(ResolveError::Parse(_))
        ));
        assert!(parse_command("").is_err());
    }

    #[test]
    fn approach_invariant() {
        assert_eq!(
            ApproachConfig::new(false, true, true),
            Err(ResolveError::InvalidApproach)
        );
        for a in Approach::ALL {
            for s in Situation::ALL {
                let c = a.config(s);
                assert!(!c.use_memory || c.use_llm);
            }
        }
        assert_eq!(
            "okb+llm+mem".parse::<Approach>().unwrap(),
            Approach::OkbLlmMem
        );
    }

    #[test]
    fn concrete_object_needs_no_inquiry() {
        let env = Env::new();
        let mut user = answers(&[]);
        let (o, ev) = env.planner().resolve_object(&mut user, "apple").unwrap();
        assert_eq!(o, "apple");
        assert!(ev.is_empty());
    }

    #[test]
    fn ambiguous_class_asks_preference() {
        let env = Env::new();
        let mut user = env.world.user();
        let (o, ev) = env.planner().resolve_object(&mut user, "fruit").unwrap();
        assert_eq!(o, "apple");
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].kind, InquiryKind::ObjectPreference);
    }

    #[test]
    fn unknown_term_asks_to_restate() {
        let env = Env::new();
        let mut user = answers(&["apple"]);
        let (o, ev) = env.planner().resolve_object(&mut user, "unicorn").unwrap();
        assert_eq!(o, "apple");
        assert_eq!(ev.len(), 1);

        let mut user = answers(&["dragon"]);
        assert!(matches!(
            env.planner().resolve_object(&mut user, "unicorn"),
            Err(ResolveError::UnresolvableObject { .. })
        ));
        assert_eq!(user.asked.len(), 1);
    }

    #[test]
    fn single_default_fast_path() {
        let env = Env::new();
        let mut user = answers(&[]);
        let r = env
            .planner()
            .resolve_location(None, &mut user, &n("power_drill"), okb(true))
            .unwrap();
        assert_eq!(r.plan.visit_list, [n("shelf_lobby")]);
        assert!(r.inquiries.is_empty());
        assert!(user.asked.is_empty());
    }

    #[test]
    fn okb_without_defaults_asks_user() {
        let env = Env::new();
        let mut user = env.world.user();
        let r = env
            .planner()
            .resolve_location(None, &mut user, &n("colored_wood_blocks"), okb(true))
            .unwrap();
        assert_eq!(r.plan.visit_list, [n("bookshelf_bedroom")]);
        assert_eq!(r.inquiries.len(), 1);
        assert_eq!(r.inquiries[0].kind, InquiryKind::Location);
    }

    #[test]
    fn llm_multiple_defaults_keep_reply_order() {
        let env = Env::new();
        let mut session = env.session(fixtures::bench_script(), false);
        let mut user = answers(&[]);
        let r = env
            .planner()
            .resolve_location(
                Some(&mut session),
                &mut user,
                &n("mug"),
                Approach::OkbLlm.config(Situation::WithDefaults),
            )
            .unwrap();
        assert_eq!(
            r.plan.visit_list,
            [n("dining_table"), n("coffee_table"), n("counter_wagon")]
        );
        assert!(r.inquiries.is_empty());
        assert_eq!(session.calls().len(), 1);
        assert_eq!(
            session.calls()[0].tag.as_ref().unwrap().label,
            "multiple_pos"
        );
    }

    #[test]
    fn llm_not_found_falls_back_to_user() {
        let env = Env::new();
        let mut script = Script::default();
        script.push(
            MatchRule {
                label: "general_pos".into(),
                ..MatchRule::default()
            },
            r#"{"position_list": ["garage"]}"#,
        );
        let mut session = env.session(Arc::new(script), false);
        let mut user = env.world.user();
        let r = env
            .planner()
            .resolve_location(
                Some(&mut session),
                &mut user,
                &n("apple"),
                Approach::OkbLlm.config(Situation::WithoutDefaults),
            )
            .unwrap();
        assert_eq!(r.plan.visit_list, [n("dining_table")]);
        assert_eq!(r.inquiries.len(), 1);
        assert_eq!(
            r.verification.unwrap().outcome,
            VerificationOutcome::NotFound
        );
    }

    #[test]
    fn search_failure_fallback() {
        let env = Env::new();
        let mut user = env.world.user();
        let (plan, ev) = env
            .planner()
            .handle_search_failure(&mut user, &n("apple"), &[n("cabinet_kitchen")])
            .unwrap();
        assert_eq!(plan.visit_list, [n("dining_table")]);
        assert_eq!(ev.kind, InquiryKind::Location);

        assert_eq!(
            env.planner()
                .handle_search_failure(&mut user, &n("apple"), &[])
                .unwrap_err(),
            ResolveError::EmptyExhaustedPlan
        );
        let mut garage = answers(&["garage"]);
        assert!(matches!(
            env.planner()
                .handle_search_failure(&mut garage, &n("apple"), &[n("desk")]),
            Err(ResolveError::UnresolvableLocation { .. })
        ));
    }

    #[test]
    fn episode_okb_without_defaults() {
        let env = Env::new();
        let mut user = env.world.user();
        let mut p = PerceptionModel::new(1.0, 1);
        let r = env.planner().run_episode(
            &env.world,
            None,
            &mut user,
            &mut p,
            okb(false),
            "Find an apple.",
        );
        assert!(r.success, "{:?}", r.failure);
        assert_eq!(r.inquiries.len(), 1);
        assert_eq!(r.visits, 1);
        assert_eq!(r.llm_calls, 0);
    }

    #[test]
    fn episode_single_default() {
        let env = Env::new();
        let mut user = env.world.user();
        let mut p = PerceptionModel::new(1.0, 1);
        let session = env.session(fixtures::bench_script(), true);
        let r = env.planner().run_episode(
            &env.world,
            Some(session),
            &mut user,
            &mut p,
            Approach::OkbLlmMem.config(Situation::WithDefaults),
            "Find a power_drill.",
        );
        assert!(r.success);
        assert!(r.inquiries.is_empty());
        assert_eq!(r.visits, 1);
        assert_eq!(r.llm_calls, 0);
    }

    #[test]
    fn episode_bring_delivers() {
        let env = Env::new();
        for approach in Approach::ALL {
            for situation in Situation::ALL {
                let mut user = env.world.user();
                let mut p = PerceptionModel::new(1.0, 1);
                let session = (approach != Approach::Okb).then(|| {
                    env.session(fixtures::bench_script(), approach == Approach::OkbLlmMem)
                });
                let r = env.planner().run_episode(
                    &env.world,
                    session,
                    &mut user,
                    &mut p,
                    approach.config(situation),
                    "Bring a sugar_box.",
                );
                assert!(r.success, "{approach} {situation}: {:?}", r.failure);
                assert_eq!(&r.robot.position, env.world.delivery_point());
                assert!(r.robot.carrying.is_none());
            }
        }
    }

    #[test]
    fn episode_example_run() {
        let env = Env::new();
        let mut user = env.world.user();
        let mut p = PerceptionModel::new(1.0, 1);
        let session = env.session(fixtures::bench_script(), false);
        let r = env.planner().run_episode(
            &env.world,
            Some(session),
            &mut user,
            &mut p,
            Approach::OkbLlm.config(Situation::WithoutDefaults),
            "Find an apple.",
        );
        assert!(r.success);
        assert_eq!(r.visits, 2);
        assert_eq!(
            r.plans[0].visit_list[..2],
            [n("cabinet_kitchen"), n("dining_table")]
        );
        assert!(r.inquiries.is_empty());
    }

    #[test]
    fn episode_with_perception_misses_uses_fallback() {
        let env = Env::new();
        let mut user = env.world.user();
        let mut p = PerceptionModel::new(0.0, 1);
        let r = env.planner().run_episode(
            &env.world,
            None,
            &mut user,
            &mut p,
            okb(true),
            "Find a power_drill.",
        );
        assert!(!r.success);
        // one plan from the knowledge base, then two user rounds
        assert_eq!(r.plans.len(), 3);
        assert_eq!(r.inquiries.len(), 2);
        assert_eq!(r.failure.as_deref(), Some("object not found"));
    }

    #[test]
    fn episode_parse_failure_is_recorded() {
        let env = Env::new();
        let mut user = env.world.user();
        let mut p = PerceptionModel::new(1.0, 1);
        let r = env
            .planner()
            .run_episode(&env.world, None, &mut user, &mut p, okb(true), "Dance!");
        assert!(!r.success);
        assert!(r.failure.unwrap().contains("cannot parse"));
        assert_eq!(r.log.records.last().unwrap().event, "episode_end");
    }

    #[test]
    fn ambiguous_command_never_asks_model_about_preference() {
        let env = Env::new();
        let mut user = env.world.user();
        let mut p = PerceptionModel::new(1.0, 1);
        let session = env.session(fixtures::bench_script(), true);
        let r = env.planner().run_episode(
            &env.world,
            Some(session),
            &mut user,
            &mut p,
            Approach::OkbLlmMem.config(Situation::WithoutDefaults),
            "Find a fruit.",
        );
        assert!(r.success);
        assert_eq!(r.inquiries[0].kind, InquiryKind::ObjectPreference);
        for call in &r.llm_log {
            assert!(call
                .tag
                .as_ref()
                .unwrap()
                .label
                .parse::<InquiryLabel>()
                .is_ok());
            assert!(!call.inquiry.contains("would you like"));
        }
    }
}
