//! Joint Khmer word segmentation and part-of-speech tagging.
//!
//! A character-level bidirectional LSTM labels every code point of an
//! unsegmented sentence with either the POS tag of the word it opens or the
//! no-space class. Word boundaries and tags both fall out of the one label
//! sequence.
//!
//! The network, backpropagation through time and the Adam optimizer are
//! implemented directly on dense `f32` kernels in [`mathcore`].

pub mod corpus;
pub mod mathcore;
pub mod network;
pub mod metrics;
pub mod training;
pub mod modelfile;
pub mod config;
pub mod cli;
