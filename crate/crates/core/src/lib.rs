//! A deterministic laboratory for Bell/CHSH experiments on a state space
//! where squared amplitudes and angles are rationals with denominators set
//! by a prime modulus p.
//!
//! The crate splits into:
//!
//! - [`exactmath`]: big rationals, rational angles, prime moduli, the
//!   rational-cosine classification, p-adic valuation and metric;
//! - [`hiprec`]: 220-digit fixed-point numerics (pi, cos, sqrt) and
//!   continued-fraction rational approximation;
//! - [`sphgeom`]: exact spherical-cosine-rule evaluation and the two
//!   irrationality certifiers (impossible triangle, CHSH four-point);
//! - [`raqm`]: qubit states as deterministic +-1 bit strings, Born
//!   frequencies, phase-as-permutation, uncertainty statistics, and exact
//!   singlet-pair ensembles;
//! - [`bellharness`]: the Bell/CHSH experiment simulator with nominal
//!   epsilon-disk settings, exact grid configurations, counterfactual
//!   definedness tables, measurement-independence reports, causality audit,
//!   and convergence scans;
//! - [`chaos`]: hard-sphere collision amplification with gravitational
//!   perturbation sources, and the Lorenz system with epsilon-ball
//!   coarse-grained statistics;
//! - [`cli`]: the command-line front end and file emitters.

pub mod bellharness;
pub mod chaos;
pub mod cli;
pub mod exactmath;
pub mod hiprec;
pub mod raqm;
pub mod sphgeom;
