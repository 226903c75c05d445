//! Series representation, ingestion, normalization, masking and the synthetic plant.

mod csv_io;
mod masks;
mod plant;
mod table;
mod zscore;

pub use csv_io::{
    agtrup_roles, load_csv, load_roles, read_csv, read_roles, save_csv, save_roles, write_csv, write_roles,
    RoleMap,
};
pub use masks::{
    generate_block_masks, realized_state_target, ChannelRate, Ledger, LedgerEntry, MaskOutcome, MaskPlan,
    SCENARIO_LEVELS,
};
pub use plant::{
    simulate_plant, spectral_radius, ControlPolicy, PlantConfig, PlantKind, SeasonalInput, SimulatedPlant,
};
pub use table::{Channel, Role, TimeSeriesTable};
pub use zscore::{zscore_apply, zscore_fit, zscore_invert, ZScoreStats};
