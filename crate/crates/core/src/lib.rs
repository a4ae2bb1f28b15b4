//! Real-time expressive accompaniment.
//!
//! A monophonic HMM score follower aligns the soloist to the score, a
//! switching Kalman filter tracks the beat period, and a pair of small neural
//! networks predicts expressive targets that shape the accompaniment schedule.

pub mod engine;
pub mod eval;
pub mod follower;
pub mod io;
pub mod mixer;
pub mod pipeline;
pub mod score;
pub mod sim;
pub mod tempo;
