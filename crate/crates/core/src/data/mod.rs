//! Dataset ingestion, preprocessing, splits and synthetic generators.

pub mod series;
pub mod shift;
pub mod synth;
pub mod tabular;

pub use series::{load_series_csv, split_series, window_series, SeriesSplit, Windows};
pub use shift::{base_split, make_shift_split, tail_probability, ShiftReport, ShiftSpec};
pub use synth::{gen_ackley, gen_ar1, AckleyConfig};
pub use tabular::{load_and_scale, load_manifest, prepare, random_split, Manifest, MinMaxScaler, Prepared, Split, TabularDataset};
