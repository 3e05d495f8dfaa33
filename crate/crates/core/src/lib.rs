//! Core of a contextual bandit decision service.
//!
//! A policy is split into a *summary* step, which folds each observed
//! (context, action, reward) triple into a bounded state θ, and a *decision*
//! step, which maps the current context and θ to an action. This crate holds
//! the streaming estimators θ is made of, the keyed θ store, the built-in
//! policy catalog, experiment bookkeeping, and an in-process simulator.

pub mod document;
pub mod experiment;
pub mod journal;
pub mod policy;
pub mod service;
pub mod simulator;
pub mod stats;
pub mod theta;
