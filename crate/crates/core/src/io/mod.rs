//! File formats: PFM disparity maps with PGM validity masks, CSV tables,
//! flat config files and run manifests. All writers are deterministic.

pub mod config_file;
pub mod manifest;
pub mod pfm;
pub mod pgm;
pub mod table;

pub use config_file::{load_config, parse_config, render_config, save_config};
pub use manifest::{RunManifest, MANIFEST_FILE};
pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm, PfmImage};
pub use pgm::{decode_pgm, encode_pgm, PgmImage};
pub use table::{csv_bytes, read_csv, table_bytes, write_csv, write_table};
