//! Model predictive contouring control with dynamic weight and objective
//! allocation.
//!
//! A single receding-horizon optimizer follows a reference path inside a
//! lateral corridor, reaches cusps and path ends precisely by blending the
//! contouring weight with a sigmoid, and hands individual stages over to a
//! Cartesian goal-pose objective once their progress passes the path end.

pub mod cli;
pub mod controller;
pub mod frenet;
pub mod metrics;
pub mod model;
pub mod ocp;
pub mod path;
pub mod qp;
pub mod sim;
pub mod weights;
