//! Built-in household fixture: the four-room home, its object set, the
//! survey-derived default locations, and the command set used by the
//! experiment harness.

use std::sync::Arc;

use crate::kb::{load_ontology, OntologyStore};
use crate::llm::Script;
use crate::prompts::TemplateSet;
use crate::simworld::{load_world, WorldState};

pub const ONTOLOGY_JSON: &str = include_str!("../fixtures/ontology.json");
pub const WORLD_JSON: &str = include_str!("../fixtures/world.json");
pub const TEMPLATES_JSON: &str = include_str!("../fixtures/templates.json");
pub const BENCH_SCRIPT_JSON: &str = include_str!("../fixtures/bench_script.json");
pub const EXPERIMENT_JSON: &str = include_str!("../fixtures/experiment.json");

/// Commands of the household experiment with the furniture each object sits on.
pub const COMMANDS: [(&str, &str); 9] = [
    ("Find an apple.", "dining_table"),
    ("Find a power_drill.", "shelf_lobby"),
    ("Find a colored_wood_blocks.", "bookshelf_bedroom"),
    ("Find a pitcher.", "counter_wagon"),
    ("Find a potted_meat_can.", "cabinet_kitchen"),
    ("Take a peach.", "high_table"),
    ("Take a mug.", "coffee_table"),
    ("Bring a mustard_bottle.", "cabinet_kitchen"),
    ("Bring a sugar_box.", "counter_wagon"),
];

pub fn ontology() -> OntologyStore {
    load_ontology(ONTOLOGY_JSON).expect("built-in ontology is valid")
}

pub fn world() -> WorldState {
    load_world(WORLD_JSON).expect("built-in world is valid")
}

pub fn templates() -> TemplateSet {
    TemplateSet::from_json(TEMPLATES_JSON).expect("built-in templates are valid")
}

pub fn bench_script() -> Arc<Script> {
    Arc::new(Script::from_json(BENCH_SCRIPT_JSON).expect("built-in script is valid"))
}
