//! Numerical toolkit for finite metric measure spaces carrying a doubling
//! measure, and for the chain metrics those measures induce.
//!
//! The crate is organised around one pipeline:
//!
//! * [`space`] — finite metric measure spaces `(X, d, mu)` with ball queries,
//!   generators for grid samplings of planar regions, and JSON/CSV I/O;
//! * [`regularity`] — doubling constants, power-law mass bounds, linear local
//!   connectivity, boundary separation, and a Hausdorff 2-content estimator;
//! * [`chain`] — delta-chain proximity graphs, the induced chain metric `q`,
//!   measured structure constants, and the nested covering constructions that
//!   certify `q`'s geometry;
//! * [`modulus`] — discrete conformal modulus of path families on planar
//!   domain graphs, solved by constraint generation over shortest paths;
//! * [`circle`] — circle-domain geometry: free sphere radii, connector paths
//!   through arc arrangements, and modulus-based separation checks;
//! * [`qs`] — weak quasisymmetry constants and distortion envelopes for
//!   discrete maps between spaces.
//!
//! Every check that mirrors an analytic inequality is reported through
//! [`report::VerificationReport`], which records both sides, the margin, and a
//! witness for the extremal configuration.

pub mod chain;
pub mod circle;
pub mod geom;
pub mod modulus;
mod qp;
pub mod qs;
pub mod regularity;
pub mod report;
pub mod space;
