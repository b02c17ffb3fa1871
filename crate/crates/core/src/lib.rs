//! Source-free active domain adaptation on feature embeddings.
//!
//! A source-trained network is adapted to an unlabeled target set. A small
//! budget of target samples is chosen for oracle labels by combining a
//! tree-ensemble homogeneity score with the prediction entropy of each
//! sample's most-correlated neighbors; the rest receive centroid-based
//! pseudo-labels. Training then minimizes weighted cross-entropy,
//! information maximization and a central correlation loss.
//!
//! ```no_run
//! use proulearn::adapt::{adapt_target, AdaptConfig};
//! use proulearn::bench::{generate_shifted_domains, SynthSpec};
//! use proulearn::netmodel::{pretrain_source, PretrainConfig};
//!
//! let dom = generate_shifted_domains(&SynthSpec::standard(0))?;
//! let model = pretrain_source(&dom.source, &dom.source_labels, &PretrainConfig::default())?;
//! let (_adapted, report) = adapt_target(&model, &dom.target, &dom.target_labels, &AdaptConfig::default())?;
//! println!("{:.3}", report.final_target_acc());
//! # Ok::<(), proulearn::Error>(())
//! ```

pub mod adapt;
pub mod bench;
pub mod correlation;
pub mod data;
mod error;
pub mod hpe;
pub mod netmodel;
pub mod pseudolabel;
pub mod selection;

pub use error::{Error, ErrorKind, Result};
