//! Stand-in audio codec: an orthonormal framing transform plus residual
//! vector quantization with k-means-trained codebooks.

mod io;
mod kmeans;
mod rvq;
mod transform;

pub use io::{read_codebooks, read_grid, read_wav, write_codebooks, write_grid, write_wav, CODEBOOK_MAGIC, GRID_MAGIC};
pub use kmeans::{kmeans, train_codebooks, train_codebooks_with_history, KMeansResult};
pub use rvq::{rvq_decode, rvq_encode, rvq_encode_with_residuals, CodebookSet, TokenGrid};
pub use transform::{analyze, synthesize, AudioSignal, CodecConfig, FrameTransform, LatentFrames};
