//! Shared plumbing: content hashing for provenance tracking.

pub mod hash;
