//! Command-line front end of the `cloudseg` library.
//!
//! Each subcommand is a plain function in [`commands`] taking a resolved
//! [`config::RunConfig`], so the binary and the tests share one code path.

pub mod checks;
pub mod commands;
pub mod config;
pub mod data;
pub mod experiment;

/// Process exit status for a failed command: 2 when the root cause is a
/// file-system error, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let io = err.chain().any(|c| {
        c.downcast_ref::<std::io::Error>().is_some() || matches!(c.downcast_ref::<cloudseg::Error>(), Some(cloudseg::Error::Io(_)))
    });
    if io {
        2
    } else {
        1
    }
}
