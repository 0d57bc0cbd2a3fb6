//! Toolkit for censusing platforms that hand out Snowflake-style 64-bit IDs.

pub mod idcodec;
pub mod estimators;
pub mod generator;
pub mod harness;
pub mod inference;
pub mod simulator;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/layout.md")]
    mod layout {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/enumeration.md")]
    mod enumeration {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
    #[doc = include_str!("../../../book/src/estimators.md")]
    mod estimators {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
