#![allow(dead_code)]

pub mod bench;
pub mod corpus;
pub mod trainer;
