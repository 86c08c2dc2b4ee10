#![allow(dead_code)]

pub mod chain;
pub mod consensus;
pub mod middleware;
pub mod oracles;
