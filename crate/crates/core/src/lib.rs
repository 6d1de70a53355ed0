//! Security-constrained AC optimal power flow (SCACOPF) at desk scale.
//!
//! The crate is organized around the solution pipeline:
//!
//! - [`grid`]: static network model, contingency definitions and file formats
//! - [`nlp`]: additive-block NLP container with sparse triplet derivatives
//! - [`linalg`]: dense and sparse symmetric indefinite factorizations
//! - [`ipm`]: primal-dual interior-point solver with warm starts
//! - [`opf`]: concrete OPF problem builders (base case, relaxed contingency,
//!   restricted canvas) with hand-coded derivatives
//! - [`recovery`]: feasibility recovery by crushing relaxed contingency
//!   solutions onto the exact coupling-feasible set
//! - [`decomp`]: surrogate-recourse two-stage decomposition driver
//! - [`exec`]: asynchronous master–solver–worker execution engine

pub mod decomp;
pub mod exec;
pub mod grid;
pub mod ipm;
pub mod linalg;
pub mod nlp;
pub mod opf;
pub mod recovery;
