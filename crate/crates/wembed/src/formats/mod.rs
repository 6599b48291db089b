//! File formats: IDX and NPY dataset parsers, the binary pair-dataset
//! file, PGM image grids, and the key=value run configuration.

pub mod config;
pub mod crc32;
pub mod idx;
pub mod npy;
pub mod pairfile;
pub mod pgm;
