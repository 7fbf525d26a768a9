//! Large-scale collective matrix factorization.
//!
//! A collection of noisy matrices, each relating two views, is decomposed
//! into factors per view and singular values per matrix. Each matrix and each
//! view's concatenation of matrices is denoised by optimal singular value
//! shrinkage; factors of individual matrices are matched to those of the
//! concatenations using asymptotic angle bounds, and the matches are merged
//! into a hypergraph whose hyperedges are the final factors.
//!
//! ```no_run
//! use lscmf::{fit, FitOptions, ObservedMatrix, ViewLayout};
//! # fn load(_: &str) -> faer::Mat<f64> { unimplemented!() }
//! let mut layout = ViewLayout::new();
//! layout.add_view("genes", 1000)?;
//! layout.add_view("samples_a", 250)?;
//! layout.add_view("samples_b", 250)?;
//! let a = layout.add_edge("genes", "samples_a", 0)?;
//! let b = layout.add_edge("genes", "samples_b", 0)?;
//! let matrices = vec![
//!     ObservedMatrix::new(a, load("a.csv")),
//!     ObservedMatrix::new(b, load("b.csv")),
//! ];
//! let result = fit(&layout, matrices, &FitOptions::default())?;
//! println!("{} factors", result.n_factors());
//! # Ok::<(), lscmf::Error>(())
//! ```

pub mod datamodel;
pub mod denoise;
pub mod error;
pub mod fmgraph;
pub mod io;
pub mod jointview;
pub mod linalg;
pub mod matching;
pub mod pipeline;
pub mod reconstruct;
pub mod simulate;

pub use datamodel::{Centering, EdgeKey, ObservedMatrix, ViewId, ViewLayout};
pub use denoise::{AspectRatio, DenoiseResult, Side};
pub use error::{Error, LayoutError, Result};
pub use fmgraph::{FactorMatchGraph, SharingClass};
pub use pipeline::{fit, FitOptions};
pub use reconstruct::{reconstruct_signal, IntegrationResult};
