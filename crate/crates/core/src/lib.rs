//! Reinforcement-learning-controlled differential evolution.
//!
//! A policy network built from a two-stage attention landscape feature
//! extractor chooses, for every individual of a DE population and at every
//! generation, one of 14 mutation operators, one of 3 crossover operators
//! and their continuous parameters. The policy is trained with n-step PPO
//! on a BBOB-style synthetic suite.
//!
//! Module map:
//!
//! - [`ndcore`]: dense arrays, reverse-mode differentiation, Adam, seeded RNG.
//! - [`problems`]: the 24 synthetic functions, train/test split, plug-in problems.
//! - [`de`]: population, archives, mutation/crossover operators, survivor selection.
//! - [`encoder`]: observation assembly (box normalization, mantissa-exponent tuples).
//! - [`policy`]: feature extractor, actor heads, critic, checkpoints.
//! - [`trainer`]: DE environment, reward, returns, PPO updates, training loop.
//! - [`harness`]: experiments, statistics, AEI, curves, configuration.

pub mod de;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod ndcore;
pub mod policy;
pub mod problems;
pub mod trainer;

pub use error::{Error, Result};
