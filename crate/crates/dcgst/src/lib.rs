//! Distribution-consistent graph self-training.
//!
//! A multi-stage teacher/student semi-supervised node classifier that picks
//! pseudo-labeled nodes to shrink the train/test embedding discrepancy and
//! augments graph structure with a shift-aware edge predictor.
//!
//! The narrative guide lives in `book/`; build it with `mdbook build book`.
//! Chapters are also compiled as doctests, so `cargo test` keeps the guide
//! and the library in sync.

pub mod cli;
pub mod diffcore;
pub mod edgepredictor;
pub mod error;
pub mod gcnmodel;
pub mod graphdata;
pub mod pseudoselect;
pub mod selftrain;
pub mod shiftmetrics;

pub use error::{DcgstError, Result};

/// Compile every book chapter's code blocks as doctests so the guide and
/// the library cannot drift apart.
#[cfg(doctest)]
mod book_doctests {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!(concat!("../../../book/src/", $path))]
            mod $name {}
        };
    }

    chapter!(introduction, "introduction.md");
    chapter!(graph_data, "graph-data.md");
    chapter!(autodiff, "autodiff.md");
    chapter!(discrepancy, "discrepancy.md");
    chapter!(gcn, "gcn.md");
    chapter!(edge_predictor, "edge-predictor.md");
    chapter!(selection, "selection.md");
    chapter!(self_training, "self-training.md");
    chapter!(cli, "cli.md");
}
