//! Deterministic multi-agent game-testing simulator.
//!
//! Levels are grids of walls and floor holding doors (blockers) and toggling
//! buttons (enablers) whose wiring is hidden from agents. A team of test
//! agents with partial observability explores the level, shares findings on a
//! blackboard and tries to verify that every door can be opened. A
//! breadth-first oracle over the product state space provides ground truth.

pub mod agent;
pub mod blackboard;
pub mod experiment;
pub mod nav;
pub mod runner;
pub mod world;
