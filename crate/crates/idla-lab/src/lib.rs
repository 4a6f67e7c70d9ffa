//! Simulation and verification laboratory for internal DLA on `Z^d`.
//!
//! The crate grows internal DLA clusters in discrete or Poisson time,
//! evaluates the observables whose scaling limits are Gaussian (discrete
//! harmonic polynomial sums, complex moments, lateness statistics,
//! divisible-sandpile discrepancies), and checks them against the
//! closed-form variances of the augmented Gaussian free field.
//!
//! Modules map one-to-one onto the subsystems:
//!
//! * [`poly`] — exact discrete harmonic polynomials on `Z^d` and meshes,
//! * [`walk`] — seeded random-walk stepping and Poisson clocks,
//! * [`cluster`] — cluster growth and absorption histories,
//! * [`observables`] — the statistics the limit theorems are about,
//! * [`sandpile`] — the divisible-sandpile reference shape,
//! * [`gff`] — augmented/ordinary GFF closed forms and samplers,
//! * [`stats`] — ensembles, fits, and scans,
//! * [`verify`] — acceptance-level verdict drivers,
//! * [`io`] / [`render`] — snapshots, CSV, and raster figures.

pub mod cluster;
pub mod error;
pub mod gff;
pub mod io;
pub mod observables;
pub mod poly;
pub mod render;
pub mod sandpile;
pub mod stats;
pub mod util;
pub mod verify;
pub mod walk;

pub use error::{Error, Result};
