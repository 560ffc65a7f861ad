//! Independent reference implementations shared by the integration and
//! acceptance tests. None of them call into the code they check.
#![allow(dead_code)]

pub mod auc;
pub mod boxes;
pub mod fixture;
pub mod ista;
