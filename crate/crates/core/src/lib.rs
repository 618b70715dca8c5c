//! Gaze-target prediction for multi-party social scenes.
//!
//! The crate covers the whole offline and online pipeline: scenario
//! enumeration and timeline compilation ([`scene`]), feature encoding,
//! labelling and windowing ([`features`]), synthetic gazers with planted
//! attention parameters ([`oracle`]), LSTM and transformer classifiers
//! ([`models`]), training and cross-validation ([`train`]), effective
//! attention heuristics fitted by a genetic algorithm ([`baselines`]),
//! top-n evaluation ([`eval`]) and the head-pan controller ([`controller`]).

pub mod attention;
pub mod baselines;
pub mod controller;
pub mod eval;
pub mod features;
pub mod models;
pub mod oracle;
pub mod scene;
pub mod train;
