//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

pub mod bleu;
pub mod stats;
