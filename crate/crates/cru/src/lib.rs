//! Edge-case-robust call-sign recognition and understanding over air-traffic
//! control transcripts and surveillance data.
//!
//! The pipeline matches a (possibly noisy, clipped, or missing) transcript
//! against the call-signs currently visible in the airspace: a contrastive
//! text matcher scores lexical similarity, a command classifier plus spatial
//! command-distribution maps score plane positions, and a small fusion
//! network combines both per candidate. An experiment harness measures the
//! pipeline under word-error-rate sweeps, front-clipping, shrinking or
//! growing candidate sets, and absent transcripts.

pub mod adsb;
pub mod cdm;
pub mod classifier;
// pub mod config placeholder
pub mod corpus;
pub mod corruption;
// pub mod eval placeholder
pub mod fusion;
pub mod grammar;
pub mod matcher;
pub mod nn;
pub mod seeds;
