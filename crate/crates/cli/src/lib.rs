//! Library half of the `stockbound` command: configuration, subcommands and
//! figure data.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod figures;

pub use commands::{run, Cli, Command, Outcome};
pub use config::{RunConfig, Settings, UsageError};

/// Exit status for a failed run: 2 for bad input, 3 for numerical failure.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    use stockbound_core::Error as E;
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<E>() {
        Some(E::Divergence { .. } | E::UnreachableRate { .. } | E::Quadrature { .. }) => 3,
        Some(_) => 2,
        None => 3,
    }
}
