//! EEG-to-image embedding alignment.
//!
//! The crate provides:
//!
//! * [`encoder`]: an EEG encoder built from a Haar wavelet block, gated
//!   local/global (convolution/transformer) branches, and temporal/spatial
//!   branches fused by channel attention, ending in a unit-norm embedding.
//! * [`losses`]: symmetric contrastive alignment, MSE and a batch-local
//!   clustering loss, combined with configurable weights.
//! * [`training`]: Adam, shuffled mini-batches, retrieval validation and
//!   early stopping, with JSON-lines metrics and [`checkpoint`] archives.
//! * [`retrieval`]: zero-shot classification by ranking a gallery of
//!   embeddings, and top-k accuracy.
//! * [`semantic`]: Wu-Palmer similarity over a hypernym taxonomy and
//!   semantic scores for generated images.
//! * [`datasets`]: the on-disk dataset contract and a seeded synthetic
//!   generator.
//!
//! Everything runs on the CPU in `f64` through a small reverse-mode
//! [`autograd`] engine, so results are reproducible bit for bit given a seed.
//!
//! ```
//! use wavegate::encoder::{Encoder, EncoderConfig};
//! use wavegate::tensor::Tensor;
//!
//! let (encoder, params) = Encoder::init(EncoderConfig::tiny(4, 8, 16), 0).unwrap();
//! let x = Tensor::from_fn(&[2, 4, 8], |i| (i as f64 * 0.37).sin());
//! let emb = encoder.embed(&params, &x).unwrap();
//! assert_eq!(emb.tensor().shape(), &[2, 16]);
//! assert!(emb.max_norm_deviation() < 1e-9);
//! ```

pub mod autograd;
pub mod checkpoint;
pub mod cli;
pub mod datasets;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod losses;
pub mod params;
pub mod retrieval;
pub mod selfcheck;
pub mod semantic;
pub mod tensor;
pub mod training;
pub mod wavelet;

pub use embedding::Embedding;
pub use encoder::{Encoder, EncoderConfig};
pub use error::{Error, Result};
pub use tensor::Tensor;
