//! Discrete household simulator.
//!
//! Locations form an undirected graph whose edge weights are travel times in
//! seconds. The robot moves along shortest paths, observes furniture with a
//! seeded Bernoulli detector (misses only, never false positives), and can
//! grasp and deliver objects. The simulated user always answers truthfully.

use std::collections::{BTreeMap, HashMap, HashSet};

use petgraph::algo::dijkstra;
use petgraph::graph::{NodeIndex, UnGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{EntityName, Furniture, OntologyStore};
use crate::resolve::{InquiryKind, ResolutionPlan, UserAgent, UserInquiry, Verb};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("world schema violation: {0}")]
    Schema(String),
    #[error("duplicate location {0:?}")]
    DuplicateLocation(String),
    #[error("unknown location {0:?}")]
    UnknownLocation(String),
    #[error("object {object:?} placed on unknown furniture {furniture:?}")]
    UnknownFurniture { object: String, furniture: String },
    #[error("{to:?} is unreachable from {from:?}")]
    Unreachable { from: String, to: String },
    #[error("robot is at {actual:?}, not at {expected:?}")]
    NotAtLocation { expected: String, actual: String },
    #[error("world does not match the ontology: {0}")]
    OntologyMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub a: EntityName,
    pub b: EntityName,
    pub seconds: f64,
}

/// Serialized world description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub rooms: Vec<EntityName>,
    pub furniture: Vec<Furniture>,
    /// Extra named points such as the robot start and the delivery spot.
    #[serde(default)]
    pub waypoints: Vec<EntityName>,
    pub edges: Vec<Edge>,
    pub placements: BTreeMap<EntityName, EntityName>,
    /// Term or class name -> the object the user prefers.
    #[serde(default)]
    pub preferences: BTreeMap<EntityName, EntityName>,
    pub initial_position: EntityName,
    pub delivery_point: EntityName,
    #[serde(default)]
    pub observe_seconds: f64,
    #[serde(default = "default_manipulation_seconds")]
    pub grasp_seconds: f64,
    #[serde(default = "default_manipulation_seconds")]
    pub release_seconds: f64,
}

fn default_manipulation_seconds() -> f64 {
    5.0
}

#[derive(Debug, Clone)]
pub struct WorldState {
    config: WorldConfig,
    node_index: HashMap<EntityName, usize>,
    furniture_room: HashMap<EntityName, EntityName>,
    /// Shortest travel time between every pair of locations.
    distances: Vec<Vec<Option<f64>>>,
}

pub fn load_world(source: &str) -> Result<WorldState, WorldError> {
    let config: WorldConfig =
        serde_json::from_str(source).map_err(|e| WorldError::Schema(e.to_string()))?;
    WorldState::new(config)
}

impl WorldState {
    pub fn new(config: WorldConfig) -> Result<Self, WorldError> {
        let mut locations: Vec<EntityName> = Vec::new();
        let mut node_index = HashMap::new();
        let all = config
            .rooms
            .iter()
            .chain(config.furniture.iter().map(|f| &f.name))
            .chain(config.waypoints.iter());
        for name in all {
            if node_index.insert(name.clone(), locations.len()).is_some() {
                return Err(WorldError::DuplicateLocation(name.to_string()));
            }
            locations.push(name.clone());
        }
        let room_set: HashSet<_> = config.rooms.iter().collect();
        let mut furniture_room = HashMap::new();
        for f in &config.furniture {
            if !room_set.contains(&f.room) {
                return Err(WorldError::UnknownLocation(f.room.to_string()));
            }
            furniture_room.insert(f.name.clone(), f.room.clone());
        }

        let mut graph: UnGraph<(), f64> = UnGraph::new_undirected();
        let nodes: Vec<NodeIndex> = locations.iter().map(|_| graph.add_node(())).collect();
        for e in &config.edges {
            let lookup = |n: &EntityName| {
                node_index
                    .get(n)
                    .copied()
                    .ok_or_else(|| WorldError::UnknownLocation(n.to_string()))
            };
            let (a, b) = (lookup(&e.a)?, lookup(&e.b)?);
            if !(e.seconds.is_finite() && e.seconds >= 0.0) {
                return Err(WorldError::Schema(format!(
                    "edge {}-{} has invalid weight {}",
                    e.a, e.b, e.seconds
                )));
            }
            graph.add_edge(nodes[a], nodes[b], e.seconds);
        }

        for (object, furniture) in &config.placements {
            if !furniture_room.contains_key(furniture) {
                return Err(WorldError::UnknownFurniture {
                    object: object.to_string(),
                    furniture: furniture.to_string(),
                });
            }
        }
        for point in [&config.initial_position, &config.delivery_point] {
            if !node_index.contains_key(point) {
                return Err(WorldError::UnknownLocation(point.to_string()));
            }
        }
        for (name, secs) in [
            ("observe_seconds", config.observe_seconds),
            ("grasp_seconds", config.grasp_seconds),
            ("release_seconds", config.release_seconds),
        ] {
            if !(secs.is_finite() && secs >= 0.0) {
                return Err(WorldError::Schema(format!("{name} must be >= 0")));
            }
        }

        let distances: Vec<Vec<Option<f64>>> = nodes
            .iter()
            .map(|&from| {
                let reached = dijkstra(&graph, from, None, |e| *e.weight());
                nodes.iter().map(|n| reached.get(n).copied()).collect()
            })
            .collect();

        let world = Self {
            config,
            node_index,
            furniture_room,
            distances,
        };
        let start = &world.config.initial_position;
        for target in world
            .config
            .furniture
            .iter()
            .map(|f| &f.name)
            .chain(std::iter::once(&world.config.delivery_point))
        {
            world.travel_time(start, target)?;
        }
        Ok(world)
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.config).expect("world serializes")
    }

    pub fn placement(&self, object: &str) -> Option<&EntityName> {
        self.config.placements.get(object)
    }

    pub fn delivery_point(&self) -> &EntityName {
        &self.config.delivery_point
    }

    pub fn initial_position(&self) -> &EntityName {
        &self.config.initial_position
    }

    pub fn has_location(&self, name: &str) -> bool {
        self.node_index.contains_key(name)
    }

    pub fn is_furniture(&self, name: &str) -> bool {
        self.furniture_room.contains_key(name)
    }

    pub fn initial_robot(&self) -> RobotState {
        RobotState {
            position: self.config.initial_position.clone(),
            carrying: None,
            odometer: 0.0,
        }
    }

    /// Checks that rooms, furniture and furniture-room relations agree with
    /// the ontology the planner uses.
    pub fn check_against(&self, store: &OntologyStore) -> Result<(), WorldError> {
        let world_rooms: HashSet<_> = self.config.rooms.iter().collect();
        let kb_rooms: HashSet<_> = store.rooms().iter().collect();
        if world_rooms != kb_rooms {
            return Err(WorldError::OntologyMismatch("room sets differ".into()));
        }
        if self.config.furniture.len() != store.furniture().len() {
            return Err(WorldError::OntologyMismatch("furniture sets differ".into()));
        }
        for f in &self.config.furniture {
            if store.room_of(f.name.as_str()) != Some(&f.room) {
                return Err(WorldError::OntologyMismatch(format!(
                    "furniture {} is in {} in the world",
                    f.name, f.room
                )));
            }
        }
        Ok(())
    }

    pub fn travel_time(&self, from: &EntityName, to: &EntityName) -> Result<f64, WorldError> {
        let i = self
            .node_index
            .get(from)
            .ok_or_else(|| WorldError::UnknownLocation(from.to_string()))?;
        let j = self
            .node_index
            .get(to)
            .ok_or_else(|| WorldError::UnknownLocation(to.to_string()))?;
        self.distances[*i][*j].ok_or_else(|| WorldError::Unreachable {
            from: from.to_string(),
            to: to.to_string(),
        })
    }

    /// Moves the robot along the shortest path; returns the leg time.
    pub fn travel(
        &self,
        robot: &mut RobotState,
        destination: &EntityName,
    ) -> Result<f64, WorldError> {
        let leg = self.travel_time(&robot.position, destination)?;
        robot.position = destination.clone();
        robot.odometer += leg;
        Ok(leg)
    }

    /// Looks for `target` at `furniture`. Consumes exactly one random draw.
    pub fn perceive(
        &self,
        robot: &mut RobotState,
        furniture: &EntityName,
        target: &EntityName,
        perception: &mut PerceptionModel,
    ) -> Result<Detection, WorldError> {
        if &robot.position != furniture {
            return Err(WorldError::NotAtLocation {
                expected: furniture.to_string(),
                actual: robot.position.to_string(),
            });
        }
        let hit = perception.draw();
        robot.odometer += self.config.observe_seconds;
        let present = self.placement(target.as_str()) == Some(furniture);
        Ok(if present && hit {
            Detection::Detected
        } else {
            Detection::NotDetected
        })
    }

    /// Visits the plan in order, stopping at the first detection. Take and
    /// Bring grasp the object; Bring then carries it to the delivery point.
    pub fn execute_plan(
        &self,
        robot: &mut RobotState,
        plan: &ResolutionPlan,
        verb: Verb,
        perception: &mut PerceptionModel,
    ) -> VisitLog {
        let mut log = VisitLog::default();
        for furniture in &plan.visit_list {
            let travel_seconds = match self.travel(robot, furniture) {
                Ok(s) => s,
                Err(_) => {
                    log.visits.push(Visit {
                        furniture: furniture.clone(),
                        travel_seconds: 0.0,
                        observe_seconds: 0.0,
                        time: robot.odometer,
                        outcome: VisitOutcome::Unreachable,
                    });
                    continue;
                }
            };
            let detection = self
                .perceive(robot, furniture, &plan.object, perception)
                .expect("robot just arrived");
            let outcome = match detection {
                Detection::Detected => VisitOutcome::Detected,
                Detection::NotDetected => VisitOutcome::NotDetected,
            };
            log.visits.push(Visit {
                furniture: furniture.clone(),
                travel_seconds,
                observe_seconds: self.config.observe_seconds,
                time: robot.odometer,
                outcome,
            });
            if outcome == VisitOutcome::Detected {
                log.found_at = Some(furniture.clone());
                break;
            }
        }
        if log.found_at.is_none() || verb == Verb::Find {
            return log;
        }

        robot.carrying = Some(plan.object.clone());
        robot.odometer += self.config.grasp_seconds;
        log.grasp_seconds = Some(self.config.grasp_seconds);

        if verb == Verb::Bring {
            let destination = plan
                .deliver_to
                .clone()
                .unwrap_or_else(|| self.config.delivery_point.clone());
            if let Ok(travel_seconds) = self.travel(robot, &destination) {
                robot.carrying = None;
                robot.odometer += self.config.release_seconds;
                log.delivery = Some(Delivery {
                    destination,
                    travel_seconds,
                    release_seconds: self.config.release_seconds,
                    time: robot.odometer,
                });
            }
        }
        log
    }

    pub fn user(&self) -> SimulatedUser {
        SimulatedUser {
            placements: self.config.placements.clone(),
            preferences: self.config.preferences.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobotState {
    pub position: EntityName,
    pub carrying: Option<EntityName>,
    /// Simulated seconds elapsed.
    pub odometer: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Detection {
    Detected,
    NotDetected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VisitOutcome {
    Detected,
    NotDetected,
    Unreachable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Visit {
    pub furniture: EntityName,
    pub travel_seconds: f64,
    pub observe_seconds: f64,
    /// Odometer reading when the observation finished.
    pub time: f64,
    pub outcome: VisitOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Delivery {
    pub destination: EntityName,
    pub travel_seconds: f64,
    pub release_seconds: f64,
    pub time: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VisitLog {
    pub visits: Vec<Visit>,
    pub found_at: Option<EntityName>,
    pub grasp_seconds: Option<f64>,
    pub delivery: Option<Delivery>,
}

impl VisitLog {
    /// Number of furniture pieces actually reached and inspected.
    pub fn visited(&self) -> usize {
        self.visits
            .iter()
            .filter(|v| v.outcome != VisitOutcome::Unreachable)
            .count()
    }

    /// Sum of every timed action recorded in this log.
    pub fn total_seconds(&self) -> f64 {
        let visits: f64 = self
            .visits
            .iter()
            .map(|v| v.travel_seconds + v.observe_seconds)
            .sum();
        let delivery = self
            .delivery
            .as_ref()
            .map_or(0.0, |d| d.travel_seconds + d.release_seconds);
        visits + self.grasp_seconds.unwrap_or(0.0) + delivery
    }
}

/// Object detector with a per-observation miss probability.
#[derive(Debug, Clone)]
pub struct PerceptionModel {
    detect_prob: f64,
    rng: ChaCha8Rng,
    draws: u64,
}

impl PerceptionModel {
    pub fn new(detect_prob: f64, seed: u64) -> Self {
        Self::for_episode(detect_prob, seed, 0)
    }

    /// Independent stream for episode `index` of an experiment seeded with
    /// `seed`.
    pub fn for_episode(detect_prob: f64, seed: u64, index: u64) -> Self {
        assert!(
            (0.0..=1.0).contains(&detect_prob),
            "detect_prob must lie in [0, 1]"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        Self {
            detect_prob,
            rng,
            draws: 0,
        }
    }

    pub fn detect_prob(&self) -> f64 {
        self.detect_prob
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    fn draw(&mut self) -> bool {
        self.draws += 1;
        self.rng.random::<f64>() < self.detect_prob
    }
}

/// Answer given when the user has no information.
pub const UNKNOWN_ANSWER: &str = "unknown";

/// A user who always answers consistently with the true placements.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedUser {
    pub placements: BTreeMap<EntityName, EntityName>,
    pub preferences: BTreeMap<EntityName, EntityName>,
}

impl SimulatedUser {
    pub fn answer_inquiry(&self, inquiry: &UserInquiry) -> String {
        let answer = match inquiry.kind {
            InquiryKind::Location => self.placements.get(inquiry.subject.as_str()),
            InquiryKind::ObjectPreference => self.preferences.get(inquiry.subject.as_str()),
        };
        answer.map_or_else(|| UNKNOWN_ANSWER.to_string(), |a| a.to_string())
    }
}

impl UserAgent for SimulatedUser {
    fn answer(&mut self, inquiry: &UserInquiry) -> String {
        self.answer_inquiry(inquiry)
    }
}
