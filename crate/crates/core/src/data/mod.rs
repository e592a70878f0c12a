//! Synthetic forgery corpus and 8-bit image files.

pub mod corpus;
pub mod netpbm;
pub mod synth;

pub use corpus::{
    generate_split, make_corpus, read_manifest, read_spec, write_corpus, Corpus, CorpusSpec, Dataset, ManifestEntry, Split,
    FRAMES_PER_VIDEO,
};
pub use netpbm::{read_pgm, read_ppm, write_pgm, write_ppm};
pub use synth::{gaussian_blur, gen_fake, gen_real, Ellipse, Sample, Scene};
