//! Euclidean embeddings of 2-D histograms whose squared distances
//! approximate the squared 2-Wasserstein distance, together with the exact
//! and entropic optimal-transport solvers used to train and validate them.
//!
//! The crate is organised around the pipeline:
//!
//! 1. [`hist`] — histograms on pixel grids and the squared Euclidean
//!    ground cost.
//! 2. [`exact`] — exact `W2^2` via a transportation network simplex, with
//!    dual optimality certificates and a 1-D closed-form oracle.
//! 3. [`entropic`] — Sinkhorn iterations and Bregman-projection
//!    barycenters, kept as a comparison baseline.
//! 4. [`autodiff`] — a small reverse-mode tape with exactly the layers the
//!    embedding network needs.
//! 5. [`model`] — the siamese encoder and the decoder, with checkpoint
//!    serialization.
//! 6. [`pipeline`] — labelled pair generation, training and evaluation.
//! 7. [`analytics`] — barycenters, interpolation and principal-direction
//!    walks in the embedded space.
//! 8. [`formats`] — IDX, NPY, pair-file, checkpoint and PGM codecs plus
//!    the key=value run configuration.
//!
//! A narrative guide with runnable snippets lives in `book/`; its code
//! blocks are compiled as doc-tests (see the hidden `book_tests` module).
//!
//! ```
//! use wembed::hist::Histogram;
//! use wembed::exact::w2_exact;
//!
//! let a = Histogram::normalize(&[1.0, 0.0, 0.0, 0.0], 2, 2)?;
//! let b = Histogram::normalize(&[0.0, 0.0, 0.0, 1.0], 2, 2)?;
//! let (w2_squared, _plan, _cert) = w2_exact(&a, &b)?;
//! assert_eq!(w2_squared, 2.0); // one diagonal step: 1^2 + 1^2
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod analytics;
pub mod autodiff;
pub mod entropic;
pub mod exact;
pub mod formats;
pub mod hist;
pub mod model;
pub mod pipeline;
pub mod synthetic;

#[cfg(doctest)]
mod book_tests {
    //! Compiles every code block in the mdbook sources.
    #![doc = include_str!("../../../book/src/overview.md")]
    #![doc = include_str!("../../../book/src/histograms.md")]
    #![doc = include_str!("../../../book/src/exact-transport.md")]
    #![doc = include_str!("../../../book/src/entropic-transport.md")]
    #![doc = include_str!("../../../book/src/embedding-model.md")]
    #![doc = include_str!("../../../book/src/training.md")]
    #![doc = include_str!("../../../book/src/analytics.md")]
}
