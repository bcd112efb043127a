//! Dense latent containers, seeded Gaussian streams and `.dcdn` files.

mod grid;
mod io;
mod matrix;
mod real;
mod rng;

pub use grid::{gaussian_grid, GridShape, LatentGrid, MAX_ELEMENTS};
pub use matrix::Matrix3;
pub use real::Real;
pub use io::{decode_grid, encode_grid, load_grid, save_grid, DCDN_MAGIC, DCDN_VERSION};
pub use rng::RngStream;
