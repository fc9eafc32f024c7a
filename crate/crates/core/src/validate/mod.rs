//! Validation of a fitted generator against observations by parametric bootstrap.

mod report;
mod stats;

pub use report::{bootstrap_report, BandRow, BandTable, ReportOptions, ValidationReport};
pub use stats::{daily_stats, spell_distribution, DayStats, SpellHistogram, SpellKind};
